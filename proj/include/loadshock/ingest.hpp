#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "loadshock/core.hpp"
#include "loadshock/csv.hpp"
#include "loadshock/linreg.hpp"

namespace loadshock::ingest {

struct HourlyLoadRecord {
    std::string country;
    Date date;
    int minute_of_day = 0;            // local civil time
    std::optional<double> load_mw;    // nullopt = telemetry slot with no value
};

/// Delimited text with a header row and columns `timestamp` (YYYY-MM-DDTHH:MM,
/// local time) and `load_mw`. Comma or tab, auto-detected. Half-hourly files
/// are kept at native resolution.
inline std::vector<HourlyLoadRecord> parse_load_file(std::istream& in,
                                                     std::string_view country) {
    csv::Reader reader(in, "load file");
    const int ts_col = reader.column("timestamp");
    const int load_col = reader.column("load_mw");

    std::vector<HourlyLoadRecord> records;
    while (auto row = reader.next_row()) {
        std::string_view ts = (*row)[size_t(ts_col)];
        if (ts.size() != 16 || ts[10] != 'T' || ts[13] != ':')
            reader.fail("bad timestamp '" + std::string(ts) + "' (expected YYYY-MM-DDTHH:MM)");
        Date date;
        try {
            date = Date::parse(ts.substr(0, 10));
        } catch (const std::exception& e) {
            reader.fail(e.what());
        }
        auto hour = csv::parse_double(ts.substr(11, 2));
        auto minute = csv::parse_double(ts.substr(14, 2));
        if (!hour || !minute || *hour < 0 || *hour > 23 || *minute < 0 || *minute > 59)
            reader.fail("bad time of day in '" + std::string(ts) + "'");

        std::string_view load_field = (*row)[size_t(load_col)];
        std::optional<double> load = csv::parse_double(load_field);
        if (!load && !csv::trim(load_field).empty() && load_field != "NA" &&
            load_field != "NaN" && load_field != "nan")
            reader.fail("bad load value '" + std::string(load_field) + "'");
        if (load && *load < 0)
            throw ValidationError("load file line " + std::to_string(reader.line_number()) +
                                  ": negative load " + std::string(load_field));

        records.push_back({std::string(country), date, int(*hour) * 60 + int(*minute), load});
    }
    if (records.empty()) throw ValidationError("load file: no data rows");

    std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
        return std::tie(a.date, a.minute_of_day) < std::tie(b.date, b.minute_of_day);
    });
    for (size_t i = 1; i < records.size(); ++i)
        if (records[i].date == records[i - 1].date &&
            records[i].minute_of_day == records[i - 1].minute_of_day)
            throw ValidationError("duplicate timestamp " + records[i].date.to_string() +
                                  " minute " + std::to_string(records[i].minute_of_day));
    return records;
}

inline std::vector<HourlyLoadRecord> parse_load_file(const std::string& path,
                                                     std::string_view country) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open load file: " + path);
    return parse_load_file(in, country);
}

enum class AggregationMode { all_hours, peak_hours };

struct DailyLoad {
    Date date;
    double mean_load = 0;
};

struct DailyAggregate {
    std::vector<DailyLoad> values;
    std::vector<Date> missing_days;  // > 20% of expected records absent
};

/// Daily arithmetic mean of the included records. peak_hours keeps the
/// [08:00, 18:00) window only. Expected per-day record counts come from the
/// file's own modal count, so half-hourly data and 23/25-hour DST days are
/// handled without configuration.
inline DailyAggregate aggregate_daily(std::span<const HourlyLoadRecord> records,
                                      AggregationMode mode) {
    if (records.empty()) throw ValidationError("aggregate_daily: no records");
    const bool peak = mode == AggregationMode::peak_hours;
    auto in_window = [&](int minute) { return !peak || (minute >= 8 * 60 && minute < 18 * 60); };

    struct DayAcc {
        int slots = 0;
        int present = 0;
        double sum = 0;
    };
    std::map<Date, DayAcc> days;
    for (const auto& rec : records) {
        if (!in_window(rec.minute_of_day)) continue;
        auto& acc = days[rec.date];
        ++acc.slots;
        if (rec.load_mw) {
            ++acc.present;
            acc.sum += *rec.load_mw;
        }
    }

    std::map<int, int> count_freq;
    for (const auto& [date, acc] : days) ++count_freq[acc.slots];
    int expected = 0, best_freq = 0;
    for (const auto& [count, freq] : count_freq)
        if (freq > best_freq || (freq == best_freq && count > expected)) {
            expected = count;
            best_freq = freq;
        }

    DailyAggregate out;
    for (const auto& [date, acc] : days) {
        if (acc.present == 0 || double(expected - acc.present) > 0.2 * double(expected)) {
            out.missing_days.push_back(date);
            continue;
        }
        out.values.push_back({date, acc.sum / double(acc.present)});
    }
    return out;
}

struct TempPoint {
    Date date;
    double temp_c = 0;
};

/// Columns `date` (YYYY-MM-DD) and `temp_c`; blank/NA values are gaps.
inline std::vector<TempPoint> parse_temperature_file(std::istream& in) {
    csv::Reader reader(in, "temperature file");
    const int date_col = reader.column("date");
    const int temp_col = reader.column("temp_c");
    std::vector<TempPoint> out;
    while (auto row = reader.next_row()) {
        Date date;
        try {
            date = Date::parse((*row)[size_t(date_col)]);
        } catch (const std::exception& e) {
            reader.fail(e.what());
        }
        auto temp = csv::parse_double((*row)[size_t(temp_col)]);
        if (temp) out.push_back({date, *temp});
    }
    std::sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.date < b.date; });
    return out;
}

inline std::vector<TempPoint> parse_temperature_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open temperature file: " + path);
    return parse_temperature_file(in);
}

struct TemperatureBridge {
    double slope = 0;
    double intercept = 0;
    double r_squared = 0;
    bool accepted = false;
    int n_overlap = 0;
};

constexpr int kMinBridgeOverlap = 30;
constexpr double kBridgeR2Threshold = 0.85;

/// Regress the primary source on the alternate over overlapping dates. The
/// alternate is usable only when R^2 > 0.85.
inline TemperatureBridge bridge_temperature(std::span<const TempPoint> primary,
                                            std::span<const TempPoint> alternate) {
    std::map<Date, double> alt;
    for (const auto& p : alternate) alt[p.date] = p.temp_c;
    std::vector<double> x, y;
    for (const auto& p : primary) {
        auto it = alt.find(p.date);
        if (it != alt.end()) {
            x.push_back(it->second);
            y.push_back(p.temp_c);
        }
    }
    if (int(x.size()) < kMinBridgeOverlap)
        throw InsufficientDataError("bridge_temperature: only " + std::to_string(x.size()) +
                                    " overlapping days, need " +
                                    std::to_string(kMinBridgeOverlap));
    TemperatureBridge bridge;
    bridge.n_overlap = int(x.size());
    try {
        auto fit = linreg::fit_simple(x, y);
        bridge.slope = fit.slope;
        bridge.intercept = fit.intercept;
        bridge.r_squared = fit.r_squared;
    } catch (const EstimationError&) {
        // constant alternate source carries no signal
        bridge.r_squared = 0;
    }
    bridge.accepted = bridge.r_squared > kBridgeR2Threshold;
    return bridge;
}

/// Fill temperature gaps through an accepted bridge. Gap dates the alternate
/// does not cover stay missing and remain in the gap report.
inline std::vector<TempPoint> impute_temperature(std::span<const Date> gaps,
                                                 std::span<const TempPoint> alternate,
                                                 const TemperatureBridge& bridge) {
    if (!bridge.accepted)
        throw ValidationError("impute_temperature: bridge rejected (R^2 = " +
                              csv::format_fixed(bridge.r_squared, 3) + " <= " +
                              csv::format_fixed(kBridgeR2Threshold, 2) + ")");
    std::map<Date, double> alt;
    for (const auto& p : alternate) alt[p.date] = p.temp_c;
    std::vector<TempPoint> imputed;
    for (Date d : gaps) {
        auto it = alt.find(d);
        if (it != alt.end())
            imputed.push_back({d, bridge.intercept + bridge.slope * it->second});
    }
    return imputed;
}

enum class DayFilter { weekdays_only, all_days };

struct GapEntry {
    Date date;
    std::string reason;
};

struct DailySeriesBuild {
    std::vector<DailyObservation> observations;
    std::vector<GapEntry> gaps;
};

/// Assemble the modeling series: weekend removal (unless all_days), log of
/// mean daily load, holiday typing from the calendar plus the fixed-date
/// holidays, lockdown flag from the config window (both endpoints included).
/// Days lacking load or temperature are dropped into the gap report.
inline DailySeriesBuild build_daily_series(std::span<const DailyLoad> daily_load,
                                           std::span<const TempPoint> temps,
                                           const HolidayCalendar& holidays,
                                           const CountryConfig& config,
                                           DayFilter filter = DayFilter::weekdays_only,
                                           std::span<const Date> load_missing_days = {}) {
    config.validate();
    if (daily_load.empty()) throw ValidationError("build_daily_series: no daily loads");

    HolidayCalendar calendar = holidays;
    int first_year = daily_load.front().date.year(), last_year = first_year;
    for (const auto& d : daily_load) {
        first_year = std::min(first_year, d.date.year());
        last_year = std::max(last_year, d.date.year());
    }
    calendar.add_fixed_dates(first_year, last_year);

    std::map<Date, double> temp_by_date;
    for (const auto& t : temps) temp_by_date[t.date] = t.temp_c;

    auto keep_day = [&](Date d) { return filter == DayFilter::all_days || !d.is_weekend(); };

    DailySeriesBuild out;
    for (Date d : load_missing_days)
        if (keep_day(d)) out.gaps.push_back({d, "load records missing"});

    for (const auto& dl : daily_load) {
        if (!keep_day(dl.date)) continue;
        if (!(dl.mean_load > 0)) {
            out.gaps.push_back({dl.date, "nonpositive mean load"});
            continue;
        }
        auto it = temp_by_date.find(dl.date);
        if (it == temp_by_date.end()) {
            out.gaps.push_back({dl.date, "temperature missing"});
            continue;
        }
        out.observations.push_back({dl.date, std::log(dl.mean_load), it->second,
                                    weekday_of(dl.date), calendar.type_for(dl.date),
                                    config.in_lockdown(dl.date)});
    }
    std::sort(out.observations.begin(), out.observations.end(),
              [](const auto& a, const auto& b) { return a.date < b.date; });
    std::sort(out.gaps.begin(), out.gaps.end(),
              [](const auto& a, const auto& b) { return a.date < b.date; });
    return out;
}

// --- serialization ---------------------------------------------------------

inline void write_daily_series(std::ostream& out, std::span<const DailyObservation> obs) {
    out << "date,log_load,temp_c,weekday,holiday,lockdown\n";
    for (const auto& o : obs)
        out << o.date.to_string() << ',' << csv::format_exact(o.log_load) << ','
            << csv::format_exact(o.temp_c) << ',' << to_string(o.weekday) << ','
            << to_string(o.holiday) << ',' << (o.lockdown ? 1 : 0) << '\n';
}

inline std::vector<DailyObservation> read_daily_series(std::istream& in) {
    csv::Reader reader(in, "daily series");
    const int c_date = reader.column("date");
    const int c_load = reader.column("log_load");
    const int c_temp = reader.column("temp_c");
    const int c_wd = reader.column("weekday");
    const int c_hol = reader.column("holiday");
    const int c_lock = reader.column("lockdown");
    std::vector<DailyObservation> obs;
    while (auto row = reader.next_row()) {
        DailyObservation o;
        try {
            o.date = Date::parse((*row)[size_t(c_date)]);
        } catch (const std::exception& e) {
            reader.fail(e.what());
        }
        auto load = csv::parse_double((*row)[size_t(c_load)]);
        auto temp = csv::parse_double((*row)[size_t(c_temp)]);
        auto wd = weekday_from_string((*row)[size_t(c_wd)]);
        auto hol = holiday_from_string((*row)[size_t(c_hol)]);
        auto lock = csv::parse_double((*row)[size_t(c_lock)]);
        if (!load || !std::isfinite(*load)) reader.fail("bad log_load");
        if (!temp) reader.fail("bad temp_c");
        if (!wd) reader.fail("bad weekday");
        if (!hol) reader.fail("bad holiday");
        if (!lock || (*lock != 0 && *lock != 1)) reader.fail("bad lockdown flag");
        o.log_load = *load;
        o.temp_c = *temp;
        o.weekday = *wd;
        o.holiday = *hol;
        o.lockdown = *lock == 1;
        obs.push_back(o);
    }
    return obs;
}

inline void write_gap_report(std::ostream& out, std::span<const GapEntry> gaps) {
    out << "date,reason\n";
    for (const auto& g : gaps) out << g.date.to_string() << ',' << g.reason << '\n';
}

// --- country configuration -------------------------------------------------

inline CountryConfig config_from_json(const nlohmann::json& j) {
    CountryConfig cfg;
    cfg.country = j.at("country").get<std::string>();
    cfg.residential_share = j.at("residential_share").get<double>();
    if (j.contains("lockdown_start"))
        cfg.lockdown_start = Date::parse(j.at("lockdown_start").get<std::string>());
    if (j.contains("lockdown_end"))
        cfg.lockdown_end = Date::parse(j.at("lockdown_end").get<std::string>());
    if (j.contains("arma_order")) {
        auto arr = j.at("arma_order");
        if (!arr.is_array() || arr.size() != 2)
            throw ValidationError("config: arma_order must be [p, q]");
        cfg.arma_order = {arr[0].get<int>(), arr[1].get<int>()};
    }
    if (j.contains("capital_station"))
        cfg.capital_station = j.at("capital_station").get<std::string>();
    if (j.contains("holidays")) {
        for (const auto& [key, dates] : j.at("holidays").items()) {
            auto type = holiday_from_string(key);
            if (!type || *type == HolidayType::none)
                throw ValidationError("config: unknown holiday type '" + key + "'");
            for (const auto& ds : dates) cfg.holidays.add(Date::parse(ds.get<std::string>()), *type);
        }
    }
    cfg.validate();
    return cfg;
}

inline CountryConfig load_country_config(std::istream& in) {
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    return config_from_json(j);
}

inline CountryConfig load_country_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    return load_country_config(in);
}

inline nlohmann::json config_to_json(const CountryConfig& cfg) {
    nlohmann::json j;
    j["country"] = cfg.country;
    j["residential_share"] = cfg.residential_share;
    if (cfg.lockdown_start) j["lockdown_start"] = cfg.lockdown_start->to_string();
    if (cfg.lockdown_end) j["lockdown_end"] = cfg.lockdown_end->to_string();
    if (cfg.arma_order) j["arma_order"] = {cfg.arma_order->first, cfg.arma_order->second};
    if (!cfg.capital_station.empty()) j["capital_station"] = cfg.capital_station;
    nlohmann::json holidays = nlohmann::json::object();
    for (const auto& [date, type] : cfg.holidays.entries())
        holidays[to_string(type)].push_back(date.to_string());
    j["holidays"] = holidays;
    return j;
}

}  // namespace loadshock::ingest
