#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "loadshock/arma.hpp"
#include "loadshock/core.hpp"
#include "loadshock/ingest.hpp"
#include "loadshock/rng.hpp"

namespace loadshock::synth {

struct ArmaSpec {
    std::vector<double> phi{0.5};
    std::vector<double> theta{};
    double sigma = 0.01;
};

/// Everything needed to generate a dataset with known ground truth. The
/// estimation pipeline never sees these values; it has to recover them.
struct SynthSpec {
    std::uint64_t seed = 1;
    std::string country = "SY";
    int start_year = 2015;
    int shock_year = 2020;
    std::optional<Date> sample_end;  // default: Aug 26 of the shock year

    // short-run structure
    double delta0 = 4.0;
    double delta1 = -0.012;
    double delta2 = 0.020;
    double k = 16.0;
    std::map<Weekday, double> weekday_effects{
        {Weekday::tue, 0.010}, {Weekday::wed, 0.008}, {Weekday::thu, 0.005},
        {Weekday::fri, -0.010}, {Weekday::sat, -0.120}, {Weekday::sun, -0.180}};
    std::map<HolidayType, double> holiday_effects{
        {HolidayType::generic, -0.080},       {HolidayType::gap_to_sunday, -0.030},
        {HolidayType::gap_to_saturday, -0.030}, {HolidayType::christmas, -0.150},
        {HolidayType::new_year, -0.120},      {HolidayType::dec31, -0.060}};

    // long-run structure: calendar-year levels, shock year at zero
    std::map<int, double> year_levels{{2015, 0.040}, {2016, 0.030}, {2017, 0.020},
                                      {2018, 0.010}, {2019, 0.005}, {2020, 0.0}};

    // remaining weekly seasonality
    std::array<double, 52> weekly_profile{};

    ArmaSpec arma;

    // injected shock: (ISO week of the shock year, log impact)
    std::vector<std::pair<int, double>> shock;

    // temperature process
    double temp_mean = 11.0;
    double temp_amplitude = 9.0;
    double temp_noise_sd = 2.0;

    // GDP rescaling inputs
    double residential_share = 30.0;
    std::optional<Date> lockdown_start, lockdown_end;

    static SynthSpec defaults(std::uint64_t seed) {
        SynthSpec spec;
        spec.seed = seed;
        for (int w = 0; w < 52; ++w)
            spec.weekly_profile[size_t(w)] =
                0.03 * std::cos(2.0 * 3.14159265358979323846 * (w - 2) / 52.0);
        for (int w = 12; w <= 20; ++w) spec.shock.emplace_back(w, -0.12);
        spec.lockdown_start = Date::from_ymd(2020, 3, 18);
        spec.lockdown_end = Date::from_ymd(2020, 5, 11);
        return spec;
    }

    Date end_date() const {
        return sample_end ? *sample_end : Date::from_ymd(shock_year, 8, 26);
    }

    void validate() const {
        if (start_year >= shock_year)
            throw ValidationError("synth: start_year must precede shock_year");
        if (!arma::is_stationary(arma.phi) || !arma::is_invertible(arma.theta))
            throw ValidationError("synth: ARMA parameters outside the stationary/invertible region");
        if (!(arma.sigma >= 0)) throw ValidationError("synth: sigma must be nonnegative");
        for (auto [w, v] : shock) {
            if (w < 1 || w > 52)
                throw ValidationError("synth: shock week " + std::to_string(w) +
                                      " outside 1..52");
            (void)v;
        }
        if (!(residential_share >= 0 && residential_share < 100.0 / 1.4))
            throw ValidationError("synth: residential share out of range");
    }
};

struct GroundTruth {
    std::vector<std::pair<Date, double>> daily_load_impact_pct;  // shock-year weekdays
    std::vector<std::pair<Date, double>> daily_gdp_impact_pct;
    std::map<int, double> weekly_impact_pct;                     // per model week
};

struct SynthDataset {
    std::vector<ingest::HourlyLoadRecord> hourly;
    std::vector<ingest::TempPoint> temps;
    CountryConfig config;
    std::vector<DailyObservation> weekday_series;  // ready-made weekdays-mode series
    GroundTruth truth;
};

namespace detail {

/// Fixed-date holidays plus derived gap days: a Tuesday holiday makes the
/// Monday before a gap_to_sunday, a Thursday holiday makes the Friday after a
/// gap_to_saturday.
inline HolidayCalendar make_calendar(int first_year, int last_year) {
    HolidayCalendar cal;
    std::vector<Date> holidays;
    for (int y = first_year; y <= last_year; ++y) {
        holidays.push_back(Date::from_ymd(y, 1, 1));
        holidays.push_back(Date::from_ymd(y, 5, 1));
        holidays.push_back(Date::from_ymd(y, 8, 15));
        holidays.push_back(Date::from_ymd(y, 11, 1));
        holidays.push_back(Date::from_ymd(y, 12, 25));
        holidays.push_back(Date::from_ymd(y, 12, 31));
    }
    for (Date d : holidays) {
        if (d.month() == 1 && d.day() == 1) cal.add(d, HolidayType::new_year);
        else if (d.month() == 12 && d.day() == 25) cal.add(d, HolidayType::christmas);
        else if (d.month() == 12 && d.day() == 31) cal.add(d, HolidayType::dec31);
        else cal.add(d, HolidayType::generic);
    }
    for (Date d : holidays) {
        if (weekday_of(d) == Weekday::tue) {
            const Date monday = d - 1;
            if (cal.type_for(monday) == HolidayType::none)
                cal.add(monday, HolidayType::gap_to_sunday);
        } else if (weekday_of(d) == Weekday::thu) {
            const Date friday = d + 1;
            if (cal.type_for(friday) == HolidayType::none)
                cal.add(friday, HolidayType::gap_to_saturday);
        }
    }
    return cal;
}

}  // namespace detail

/// Deterministic for a fixed seed. The noise process runs over the weekday
/// sequence so the weekdays-mode estimator faces exactly the specified ARMA;
/// weekend days get independent draws at the matching unconditional scale.
inline SynthDataset generate(const SynthSpec& spec) {
    spec.validate();

    const Date first = Date::from_ymd(spec.start_year, 1, 1);
    const Date last = spec.end_date();
    if (last <= first) throw ValidationError("synth: empty sample span");

    SynthDataset data;
    data.config.country = spec.country;
    data.config.residential_share = spec.residential_share;
    data.config.lockdown_start = spec.lockdown_start;
    data.config.lockdown_end = spec.lockdown_end;
    data.config.arma_order = {int(spec.arma.phi.size()), int(spec.arma.theta.size())};
    data.config.holidays = detail::make_calendar(spec.start_year, last.year());
    data.config.validate();

    std::map<int, double> shock_by_week;
    for (auto [w, v] : spec.shock) shock_by_week[w] += v;

    rng::Engine temp_rng = rng::Engine::substream(spec.seed, 1);
    rng::Engine arma_rng = rng::Engine::substream(spec.seed, 2);
    rng::Engine weekend_rng = rng::Engine::substream(spec.seed, 3);

    // ARMA recursion state (weekday-indexed), warmed up before the sample
    const int p = int(spec.arma.phi.size()), q = int(spec.arma.theta.size());
    std::vector<double> u_hist(size_t(std::max(p, 1)), 0.0);
    std::vector<double> e_hist(size_t(std::max(q, 1)), 0.0);
    auto next_arma = [&]() {
        const double eps = spec.arma.sigma * arma_rng.next_normal();
        double u = eps;
        for (int i = 0; i < p; ++i) u += spec.arma.phi[size_t(i)] * u_hist[size_t(i)];
        for (int j = 0; j < q; ++j) u += spec.arma.theta[size_t(j)] * e_hist[size_t(j)];
        for (size_t i = u_hist.size(); i-- > 1;) u_hist[i] = u_hist[i - 1];
        if (p > 0) u_hist[0] = u;
        for (size_t j = e_hist.size(); j-- > 1;) e_hist[j] = e_hist[j - 1];
        if (q > 0) e_hist[0] = eps;
        return u;
    };
    for (int burn = 0; burn < 300; ++burn) next_arma();
    const double weekend_sd =
        spec.arma.sigma *
        std::sqrt(arma::unconditional_variance_ratio(spec.arma.phi, spec.arma.theta));

    // smooth positive intraday profile with exact unit mean over 24 hours
    std::array<double, 24> profile{};
    for (int h = 0; h < 24; ++h)
        profile[size_t(h)] =
            1.0 + 0.25 * std::cos(2.0 * 3.14159265358979323846 * (h - 14) / 24.0);

    std::vector<ingest::DailyLoad> daily_loads;
    for (Date d = first; d <= last; ++d) {
        const int doy = d - Date::from_ymd(d.year(), 1, 1) + 1;
        const double temp = spec.temp_mean -
                            spec.temp_amplitude *
                                std::cos(2.0 * 3.14159265358979323846 * (doy - 15) / 365.25) +
                            spec.temp_noise_sd * temp_rng.next_normal();
        data.temps.push_back({d, temp});

        double y = spec.delta0 + spec.delta1 * temp;
        if (temp > spec.k) y += spec.delta2 * (temp - spec.k);
        if (auto it = spec.weekday_effects.find(weekday_of(d)); it != spec.weekday_effects.end())
            y += it->second;
        const auto holiday = data.config.holidays.type_for(d);
        if (auto it = spec.holiday_effects.find(holiday); it != spec.holiday_effects.end())
            y += it->second;
        if (auto it = spec.year_levels.find(d.year()); it != spec.year_levels.end())
            y += it->second;
        y += spec.weekly_profile[size_t(model_week(d) - 1)];

        double shock_applied = 0;
        if (iso_week_year(d) == spec.shock_year) {
            if (auto it = shock_by_week.find(model_week(d)); it != shock_by_week.end())
                shock_applied = it->second;
        }
        y += shock_applied;
        y += d.is_weekend() ? weekend_sd * weekend_rng.next_normal() : next_arma();

        const double daily_mean = std::exp(y);
        daily_loads.push_back({d, daily_mean});
        for (int h = 0; h < 24; ++h)
            data.hourly.push_back(
                {spec.country, d, h * 60, daily_mean * profile[size_t(h)]});

        if (!d.is_weekend() && iso_week_year(d) == spec.shock_year) {
            // ground truth computed from the injected values alone; the
            // rescaling formula is duplicated here on purpose so the
            // estimator and the oracle share no impact code path
            const double l_true = 100.0 * std::expm1(shock_applied);
            const bool locked = spec.lockdown_start && spec.lockdown_end &&
                                d >= *spec.lockdown_start && d <= *spec.lockdown_end;
            const double denom = locked ? 100.0 - 1.4 * spec.residential_share
                                        : 100.0 - spec.residential_share;
            data.truth.daily_load_impact_pct.emplace_back(d, l_true);
            data.truth.daily_gdp_impact_pct.emplace_back(d, l_true * 100.0 / denom);
            data.truth.weekly_impact_pct[model_week(d)] = l_true;
        }
    }

    auto built = ingest::build_daily_series(daily_loads, data.temps, data.config.holidays,
                                            data.config, ingest::DayFilter::weekdays_only);
    data.weekday_series = std::move(built.observations);
    return data;
}

// --- fixtures in the ingest file formats -------------------------------------

inline void write_fixture(const SynthDataset& data, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string cc = data.config.country;
    {
        std::ofstream out(fs::path(dir) / (cc + "_load.csv"));
        out << "timestamp,load_mw\n";
        char ts[24];
        for (const auto& rec : data.hourly) {
            std::snprintf(ts, sizeof(ts), "%sT%02d:%02d", rec.date.to_string().c_str(),
                          rec.minute_of_day / 60, rec.minute_of_day % 60);
            out << ts << ',' << csv::format_exact(rec.load_mw.value()) << '\n';
        }
    }
    {
        std::ofstream out(fs::path(dir) / (cc + "_temp.csv"));
        out << "date,temp_c\n";
        for (const auto& t : data.temps)
            out << t.date.to_string() << ',' << csv::format_exact(t.temp_c) << '\n';
    }
    {
        std::ofstream out(fs::path(dir) / (cc + "_config.json"));
        out << ingest::config_to_json(data.config).dump(2) << '\n';
    }
    {
        std::ofstream out(fs::path(dir) / (cc + "_truth.csv"));
        out << "date,load_impact_pct,gdp_impact_pct\n";
        for (size_t i = 0; i < data.truth.daily_load_impact_pct.size(); ++i)
            out << data.truth.daily_load_impact_pct[i].first.to_string() << ','
                << csv::format_exact(data.truth.daily_load_impact_pct[i].second) << ','
                << csv::format_exact(data.truth.daily_gdp_impact_pct[i].second) << '\n';
    }
}

// --- spec (de)serialization ---------------------------------------------------

inline nlohmann::json spec_to_json(const SynthSpec& s) {
    nlohmann::json j;
    j["seed"] = s.seed;
    j["country"] = s.country;
    j["start_year"] = s.start_year;
    j["shock_year"] = s.shock_year;
    if (s.sample_end) j["sample_end"] = s.sample_end->to_string();
    j["delta0"] = s.delta0;
    j["delta1"] = s.delta1;
    j["delta2"] = s.delta2;
    j["k"] = s.k;
    for (const auto& [wd, v] : s.weekday_effects) j["weekday_effects"][to_string(wd)] = v;
    for (const auto& [h, v] : s.holiday_effects) j["holiday_effects"][to_string(h)] = v;
    for (const auto& [y, v] : s.year_levels) j["year_levels"][std::to_string(y)] = v;
    j["weekly_profile"] = s.weekly_profile;
    j["arma"] = {{"phi", s.arma.phi}, {"theta", s.arma.theta}, {"sigma", s.arma.sigma}};
    for (auto [w, v] : s.shock) j["shock"].push_back({{"week", w}, {"log_impact", v}});
    j["temp_mean"] = s.temp_mean;
    j["temp_amplitude"] = s.temp_amplitude;
    j["temp_noise_sd"] = s.temp_noise_sd;
    j["residential_share"] = s.residential_share;
    if (s.lockdown_start) j["lockdown_start"] = s.lockdown_start->to_string();
    if (s.lockdown_end) j["lockdown_end"] = s.lockdown_end->to_string();
    return j;
}

inline SynthSpec spec_from_json(const nlohmann::json& j) {
    SynthSpec s = SynthSpec::defaults(j.value("seed", std::uint64_t(1)));
    s.shock.clear();
    if (j.contains("country")) s.country = j.at("country").get<std::string>();
    if (j.contains("start_year")) s.start_year = j.at("start_year").get<int>();
    if (j.contains("shock_year")) s.shock_year = j.at("shock_year").get<int>();
    if (j.contains("sample_end")) s.sample_end = Date::parse(j.at("sample_end").get<std::string>());
    if (j.contains("delta0")) s.delta0 = j.at("delta0").get<double>();
    if (j.contains("delta1")) s.delta1 = j.at("delta1").get<double>();
    if (j.contains("delta2")) s.delta2 = j.at("delta2").get<double>();
    if (j.contains("k")) s.k = j.at("k").get<double>();
    if (j.contains("weekday_effects")) {
        s.weekday_effects.clear();
        for (const auto& [key, v] : j.at("weekday_effects").items()) {
            auto wd = weekday_from_string(key);
            if (!wd) throw ValidationError("synth spec: bad weekday '" + key + "'");
            s.weekday_effects[*wd] = v.get<double>();
        }
    }
    if (j.contains("holiday_effects")) {
        s.holiday_effects.clear();
        for (const auto& [key, v] : j.at("holiday_effects").items()) {
            auto h = holiday_from_string(key);
            if (!h) throw ValidationError("synth spec: bad holiday type '" + key + "'");
            s.holiday_effects[*h] = v.get<double>();
        }
    }
    if (j.contains("year_levels")) {
        s.year_levels.clear();
        for (const auto& [key, v] : j.at("year_levels").items())
            s.year_levels[std::stoi(key)] = v.get<double>();
    }
    if (j.contains("weekly_profile")) {
        auto prof = j.at("weekly_profile").get<std::vector<double>>();
        if (prof.size() != 52) throw ValidationError("synth spec: weekly_profile needs 52 values");
        std::copy(prof.begin(), prof.end(), s.weekly_profile.begin());
    }
    if (j.contains("arma")) {
        s.arma.phi = j.at("arma").value("phi", std::vector<double>{});
        s.arma.theta = j.at("arma").value("theta", std::vector<double>{});
        s.arma.sigma = j.at("arma").value("sigma", 0.01);
    }
    if (j.contains("shock"))
        for (const auto& e : j.at("shock"))
            s.shock.emplace_back(e.at("week").get<int>(), e.at("log_impact").get<double>());
    if (j.contains("temp_mean")) s.temp_mean = j.at("temp_mean").get<double>();
    if (j.contains("temp_amplitude")) s.temp_amplitude = j.at("temp_amplitude").get<double>();
    if (j.contains("temp_noise_sd")) s.temp_noise_sd = j.at("temp_noise_sd").get<double>();
    if (j.contains("residential_share"))
        s.residential_share = j.at("residential_share").get<double>();
    s.lockdown_start.reset();
    s.lockdown_end.reset();
    if (j.contains("lockdown_start"))
        s.lockdown_start = Date::parse(j.at("lockdown_start").get<std::string>());
    if (j.contains("lockdown_end"))
        s.lockdown_end = Date::parse(j.at("lockdown_end").get<std::string>());
    return s;
}

}  // namespace loadshock::synth
