#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "loadshock/prefilter.hpp"
#include "loadshock/rng.hpp"
#include "loadshock/stats.hpp"

using namespace loadshock;
using namespace loadshock::prefilter;

namespace {

// weekday series with a known short-run structure
struct Truth {
    double delta0 = 4.0, delta1 = -0.01, delta2 = 0.02, k = 16.0;
    std::map<Weekday, double> wd{{Weekday::tue, 0.01},
                                 {Weekday::wed, 0.012},
                                 {Weekday::thu, 0.006},
                                 {Weekday::fri, -0.015}};
    std::map<HolidayType, double> hol{{HolidayType::generic, -0.08},
                                      {HolidayType::christmas, -0.15},
                                      {HolidayType::new_year, -0.12},
                                      {HolidayType::dec31, -0.06}};

    double value(double temp, Weekday w, HolidayType h) const {
        double v = delta0 + delta1 * temp + (temp > k ? delta2 * (temp - k) : 0.0);
        if (auto it = wd.find(w); it != wd.end()) v += it->second;
        if (auto it = hol.find(h); it != hol.end()) v += it->second;
        return v;
    }
};

std::vector<DailyObservation> make_series(const Truth& truth, double noise_sd,
                                          std::uint64_t seed,
                                          const char* first = "2015-01-01",
                                          const char* last = "2019-12-31") {
    rng::Engine e(seed);
    HolidayCalendar cal;
    for (int y = 2014; y <= 2021; ++y) {
        cal.add(Date::from_ymd(y, 1, 1), HolidayType::new_year);
        cal.add(Date::from_ymd(y, 5, 1), HolidayType::generic);
        cal.add(Date::from_ymd(y, 12, 25), HolidayType::christmas);
        cal.add(Date::from_ymd(y, 12, 31), HolidayType::dec31);
    }
    std::vector<DailyObservation> obs;
    for (Date d = Date::parse(first); d <= Date::parse(last); ++d) {
        if (d.is_weekend()) continue;
        const int doy = d - Date::from_ymd(d.year(), 1, 1) + 1;
        const double temp = 11.0 - 9.0 * std::cos(2 * M_PI * (doy - 15) / 365.25) +
                            2.0 * e.next_normal();
        DailyObservation o;
        o.date = d;
        o.temp_c = temp;
        o.weekday = weekday_of(d);
        o.holiday = cal.type_for(d);
        o.log_load = truth.value(temp, o.weekday, o.holiday) + noise_sd * e.next_normal();
        obs.push_back(o);
    }
    return obs;
}

}  // namespace

TEST_CASE("fit_short_run: constant series gives flat model") {
    Truth flat;
    flat.delta1 = 0;
    flat.delta2 = 0;
    flat.wd.clear();
    flat.hol.clear();
    auto series = make_series(flat, 0.0, 1);
    auto model = fit_short_run(series, Date::parse("2020-03-03"));
    CHECK(model.delta0 == Catch::Approx(4.0).margin(1e-9));
    CHECK(model.delta1 == Catch::Approx(0.0).margin(1e-10));
    CHECK(model.delta2 == Catch::Approx(0.0).margin(1e-10));
    for (const auto& [wd, v] : model.weekday_effect) CHECK(v == Catch::Approx(0.0).margin(1e-10));
    for (const auto& [h, v] : model.holiday_effect) CHECK(v == Catch::Approx(0.0).margin(1e-10));
    CHECK(model.residual_sd == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("fit_short_run: generate-then-refit recovers the truth") {
    Truth truth;
    auto series = make_series(truth, 0.001, 7);
    auto model = fit_short_run(series, Date::parse("2020-03-03"));
    REQUIRE(model.has_breakpoint);
    CHECK(std::fabs(model.k - truth.k) <= 0.5);  // one grid step
    CHECK(std::fabs(model.delta0 - truth.delta0) < 3 * model.std_error.at("delta0"));
    CHECK(std::fabs(model.delta1 - truth.delta1) < 3 * model.std_error.at("delta1"));
    CHECK(std::fabs(model.delta2 - truth.delta2) < 3 * model.std_error.at("delta2"));
    for (auto [wd, v] : truth.wd)
        CHECK(std::fabs(model.weekday_effect.at(wd) - v) <
              3 * model.std_error.at(std::string("wd_") + to_string(wd)));
    for (auto [h, v] : truth.hol)
        CHECK(std::fabs(model.holiday_effect.at(h) - v) <
              3 * model.std_error.at(std::string("hol_") + to_string(h)));
}

TEST_CASE("fit_short_run: no temperature above candidates degrades to single slope") {
    Truth truth;
    truth.delta2 = 0;
    auto series = make_series(truth, 0.001, 11);
    for (auto& o : series) o.temp_c = std::min(o.temp_c, 4.0);  // below the [5, 25] grid
    for (auto& o : series)
        o.log_load = truth.value(o.temp_c, o.weekday, o.holiday);
    auto model = fit_short_run(series, Date::parse("2020-03-03"));
    CHECK_FALSE(model.has_breakpoint);
    CHECK(model.delta1 == Catch::Approx(truth.delta1).margin(1e-8));
}

TEST_CASE("fit_short_run: only pre-shock data used") {
    Truth truth;
    auto series = make_series(truth, 0.001, 3, "2015-01-01", "2020-08-26");
    // poison everything from the shock date on; the fit must not move
    auto poisoned = series;
    for (auto& o : poisoned)
        if (o.date >= Date::parse("2020-03-03")) o.log_load -= 5.0;
    auto a = fit_short_run(series, Date::parse("2020-03-03"));
    auto b = fit_short_run(poisoned, Date::parse("2020-03-03"));
    CHECK(a.delta0 == b.delta0);
    CHECK(a.delta1 == b.delta1);
    CHECK(a.k == b.k);
    CHECK(a.fit_end < Date::parse("2020-03-03"));
}

TEST_CASE("fit_short_run: rank-deficient holiday column dropped, fit continues") {
    Truth truth;
    auto series = make_series(truth, 0.001, 13);
    // a holiday type that never occurs contributes no column; nothing to drop.
    // force an exact duplicate structure instead: every christmas relabeled
    // generic leaves christmas unseen -> no column, and the fit succeeds.
    for (auto& o : series)
        if (o.holiday == HolidayType::christmas) o.holiday = HolidayType::generic;
    auto model = fit_short_run(series, Date::parse("2020-03-03"));
    CHECK(model.holiday_effect.count(HolidayType::christmas) == 0);
    CHECK(model.holiday_effect.count(HolidayType::generic) == 1);
}

TEST_CASE("fit_short_run: OLS residuals orthogonal to regressors") {
    Truth truth;
    auto series = make_series(truth, 0.01, 17);
    auto model = fit_short_run(series, Date::parse("2020-03-03"));
    std::vector<DailyObservation> fit_obs;
    for (const auto& o : series)
        if (o.date < Date::parse("2020-03-03")) fit_obs.push_back(o);

    std::vector<double> resid;
    for (const auto& o : fit_obs) resid.push_back(o.log_load - model.predict(o));

    auto dot_against = [&](auto&& column_value) {
        double num = 0, scale = 0;
        for (size_t i = 0; i < fit_obs.size(); ++i) {
            const double x = column_value(fit_obs[i]);
            num += x * resid[i];
            scale += x * x;
        }
        return std::fabs(num) / std::max(1e-30, std::sqrt(scale) *
                                                    std::sqrt(std::inner_product(
                                                        resid.begin(), resid.end(),
                                                        resid.begin(), 0.0)));
    };
    CHECK(dot_against([](const DailyObservation&) { return 1.0; }) < 1e-8);
    CHECK(dot_against([](const DailyObservation& o) { return o.temp_c; }) < 1e-8);
    CHECK(dot_against([&](const DailyObservation& o) {
              return o.temp_c > model.k ? o.temp_c - model.k : 0.0;
          }) < 1e-8);
    CHECK(dot_against([](const DailyObservation& o) {
              return o.weekday == Weekday::fri ? 1.0 : 0.0;
          }) < 1e-8);
}

TEST_CASE("fit_short_run: adding a constant shifts only delta0") {
    Truth truth;
    auto series = make_series(truth, 0.005, 23);
    auto shifted = series;
    for (auto& o : shifted) o.log_load += 2.5;
    auto a = fit_short_run(series, Date::parse("2020-03-03"));
    auto b = fit_short_run(shifted, Date::parse("2020-03-03"));
    CHECK(b.delta0 - a.delta0 == Catch::Approx(2.5).margin(1e-9));
    CHECK(b.delta1 == Catch::Approx(a.delta1).margin(1e-12));
    CHECK(b.k == a.k);
    for (const auto& [wd, v] : a.weekday_effect)
        CHECK(b.weekday_effect.at(wd) == Catch::Approx(v).margin(1e-10));
    // and the adjusted series is unchanged
    auto adj_a = short_term_adjust(series, a);
    auto adj_b = short_term_adjust(shifted, b);
    for (size_t i = 0; i < adj_a.size(); ++i)
        CHECK(adj_a[i].value == Catch::Approx(adj_b[i].value).margin(1e-9));
}

TEST_CASE("fit_short_run: row order does not matter") {
    Truth truth;
    auto series = make_series(truth, 0.01, 29);
    auto shuffled = series;
    rng::Engine e(4);
    for (size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[size_t(e.next_u64() % i)]);
    auto a = fit_short_run(series, Date::parse("2020-03-03"));
    auto b = fit_short_run(shuffled, Date::parse("2020-03-03"));
    CHECK(a.delta0 == Catch::Approx(b.delta0).margin(1e-12));
    CHECK(a.delta1 == Catch::Approx(b.delta1).margin(1e-12));
    CHECK(a.k == b.k);
}

TEST_CASE("temperature response continuous at the breakpoint") {
    Truth truth;
    auto series = make_series(truth, 0.01, 37);
    auto model = fit_short_run(series, Date::parse("2020-03-03"));
    REQUIRE(model.has_breakpoint);
    const double below = model.temperature_response(model.k - 1e-9);
    const double above = model.temperature_response(model.k + 1e-9);
    CHECK(below == Catch::Approx(above).margin(1e-7));
}

TEST_CASE("short_term_adjust: residual of a perfect fit is zero") {
    Truth truth;
    auto series = make_series(truth, 0.0, 41);
    auto model = fit_short_run(series, Date::parse("2020-03-03"));
    auto adjusted = short_term_adjust(series, model);
    for (const auto& p : adjusted) CHECK(p.value == Catch::Approx(0.0).margin(1e-8));
}

TEST_CASE("short_term_adjust: constant model subtracts the level") {
    ShortRunModel constant;
    constant.delta0 = 3.0;
    std::vector<DailyObservation> series{
        {Date::parse("2020-01-06"), 3.5, 10.0, Weekday::mon, HolidayType::none, false},
        {Date::parse("2020-01-07"), 2.5, 12.0, Weekday::tue, HolidayType::none, false}};
    auto adjusted = short_term_adjust(series, constant);
    CHECK(adjusted[0].value == Catch::Approx(0.5));
    CHECK(adjusted[1].value == Catch::Approx(-0.5));
}

TEST_CASE("short_term_adjust: injected post-shock dip shows up in the adjustment") {
    Truth truth;
    auto series = make_series(truth, 0.002, 43, "2015-01-01", "2020-08-26");
    for (auto& o : series)
        if (o.date >= Date::parse("2020-03-09")) o.log_load -= 0.10;
    auto model = fit_short_run(series, Date::parse("2020-03-03"));
    auto adjusted = short_term_adjust(series, model);
    std::vector<double> pre, post;
    for (const auto& p : adjusted)
        (p.date < Date::parse("2020-03-03") ? pre : post).push_back(p.value);
    CHECK(std::fabs(stats::mean(pre)) < 0.002);
    CHECK(stats::mean(std::span<const double>(post).subspan(10)) ==
          Catch::Approx(-0.10).margin(0.005));
}

TEST_CASE("fit_year_effects: null, single-year, and noisy recovery") {
    auto mk = [](std::map<int, double> levels, double noise, std::uint64_t seed) {
        rng::Engine e(seed);
        std::vector<AdjustedPoint> pts;
        for (Date d = Date::parse("2015-01-01"); d <= Date::parse("2020-03-03"); ++d) {
            if (d.is_weekend()) continue;
            double v = levels.count(d.year()) ? levels[d.year()] : 0.0;
            pts.push_back({d, v + noise * e.next_normal()});
        }
        return pts;
    };

    SECTION("identically zero") {
        auto effects = fit_year_effects(mk({}, 0.0, 1));
        CHECK(effects.base_year == 2020);
        for (const auto& [y, a] : effects.alpha) CHECK(a == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("single-year level") {
        auto effects = fit_year_effects(mk({{2018, 0.05}}, 0.0, 2));
        CHECK(effects.alpha.at(2018) == Catch::Approx(0.05).margin(1e-12));
        CHECK(effects.alpha.at(2017) == Catch::Approx(0.0).margin(1e-12));
        CHECK(effects.alpha.at(2020) == 0.0);
    }
    SECTION("noisy recovery within 3 standard errors") {
        std::map<int, double> levels{{2015, 0.02}, {2016, 0.01}, {2017, 0.0},
                                     {2018, -0.01}, {2019, -0.02}, {2020, 0.0}};
        auto effects = fit_year_effects(mk(levels, 0.001, 3));
        for (int y = 2015; y <= 2019; ++y)
            CHECK(std::fabs(effects.alpha.at(y) - levels[y]) < 3 * effects.alpha_se.at(y));
    }
}

TEST_CASE("fit_year_effects: window too small names the year") {
    std::vector<AdjustedPoint> pts;
    for (Date d = Date::parse("2015-01-01"); d <= Date::parse("2016-03-03"); ++d) {
        if (d.is_weekend()) continue;
        if (d.year() == 2016 && d < Date::parse("2016-02-20")) continue;  // starve 2016
        pts.push_back({d, 0.0});
    }
    CHECK_THROWS_WITH(fit_year_effects(pts), Catch::Matchers::ContainsSubstring("2016"));
}

TEST_CASE("fit_year_effects: only the windows are used") {
    rng::Engine e(8);
    std::vector<AdjustedPoint> pts;
    for (Date d = Date::parse("2015-01-01"); d <= Date::parse("2020-03-03"); ++d) {
        if (d.is_weekend()) continue;
        // huge garbage outside Jan-1..Mar-3 must not disturb the estimates
        const bool in_window = d <= Date::from_ymd(d.year(), 3, 3);
        pts.push_back({d, in_window ? 0.01 * e.next_normal() : 50.0});
    }
    auto effects = fit_year_effects(pts);
    for (const auto& [y, a] : effects.alpha) CHECK(std::fabs(a) < 0.05);
}

TEST_CASE("long_run_adjust subtracts the year effect, base year untouched") {
    YearEffects effects;
    effects.base_year = 2020;
    effects.alpha = {{2018, 0.05}, {2019, 0.01}, {2020, 0.0}};
    std::vector<AdjustedPoint> pts{{Date::parse("2018-06-01"), 0.07},
                                   {Date::parse("2019-06-03"), 0.02},
                                   {Date::parse("2020-06-01"), 0.03}};
    auto out = long_run_adjust(pts, effects);
    CHECK(out[0].value == Catch::Approx(0.02));
    CHECK(out[1].value == Catch::Approx(0.01));
    CHECK(out[2].value == Catch::Approx(0.03));  // base year unchanged

    std::vector<AdjustedPoint> outside{{Date::parse("2013-01-07"), 0.0}};
    CHECK_THROWS_AS(long_run_adjust(outside, effects), EstimationError);
}

TEST_CASE("two-step pipeline on null data leaves no pre/post difference") {
    // A single dataset cannot separate estimation noise from pipeline bias,
    // so run the null pipeline across independent seeds and test that the
    // pre/post mean difference centers on zero (one-sample t at 5%).
    std::vector<double> diffs;
    for (std::uint64_t seed = 60; seed < 72; ++seed) {
        Truth truth;
        auto series = make_series(truth, 0.005, seed, "2015-01-01", "2020-08-26");
        auto eq1 = fit_short_run(series, Date::parse("2020-03-03"));
        auto adj = short_term_adjust(series, eq1);
        auto years = fit_year_effects(adj);
        auto full = long_run_adjust(adj, years);
        std::vector<double> pre, post;
        for (const auto& p : full)
            (p.date < Date::parse("2020-03-03") ? pre : post).push_back(p.value);
        CHECK(std::fabs(stats::mean(pre)) < 0.002);
        CHECK(std::fabs(stats::mean(post)) < 0.002);
        diffs.push_back(stats::mean(post) - stats::mean(pre));
    }
    const double t = stats::mean(diffs) /
                     std::sqrt(stats::sample_variance(diffs) / double(diffs.size()));
    CHECK(std::fabs(t) < 2.201);  // t(11) two-sided 5% critical value

    // and within each year the adjusted pre-outbreak window sits at a common
    // level by construction, so year means cannot differ significantly
    Truth truth;
    auto series = make_series(truth, 0.001, 99, "2015-01-01", "2020-08-26");
    auto eq1 = fit_short_run(series, Date::parse("2020-03-03"));
    auto adj = short_term_adjust(series, eq1);
    auto years = fit_year_effects(adj);
    auto full = long_run_adjust(adj, years);
    std::map<int, std::pair<double, int>> by_year;
    for (const auto& p : full)
        if (p.date <= Date::from_ymd(p.date.year(), 3, 3)) {
            by_year[p.date.year()].first += p.value;
            by_year[p.date.year()].second += 1;
        }
    const double base_mean = by_year[2020].first / by_year[2020].second;
    for (const auto& [y, acc] : by_year)
        CHECK(acc.first / acc.second - base_mean == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("adjusted series serialization round-trips") {
    std::vector<AdjustedPoint> pts{{Date::parse("2020-01-06"), 0.123456789012345},
                                   {Date::parse("2020-01-07"), -1e-17}};
    std::ostringstream out;
    write_adjusted_series(out, pts);
    std::istringstream in(out.str());
    auto back = read_adjusted_series(in);
    REQUIRE(back.size() == 2);
    CHECK(back[0].value == pts[0].value);
    CHECK(back[1].value == pts[1].value);
}
