#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "loadshock/core.hpp"
#include "loadshock/csv.hpp"
#include "loadshock/linreg.hpp"

namespace loadshock::prefilter {

/// Piecewise-linear temperature / calendar regression fitted on pre-shock
/// weekdays. The temperature response is delta1 * temp below the breakpoint
/// and continues with slope delta1 + delta2 above it.
struct ShortRunModel {
    double delta0 = 0;
    double delta1 = 0;
    double delta2 = 0;
    double k = std::numeric_limits<double>::quiet_NaN();
    bool has_breakpoint = false;
    std::map<Weekday, double> weekday_effect;     // Monday is the baseline
    std::map<HolidayType, double> holiday_effect; // zero for types never seen
    double residual_sd = 0;
    Date fit_start, fit_end;
    long n_fit = 0;
    std::vector<std::string> dropped_columns;
    std::map<std::string, double> std_error;

    double temperature_response(double temp) const {
        double v = delta1 * temp;
        if (has_breakpoint && temp > k) v += delta2 * (temp - k);
        return v;
    }

    double predict(double temp, Weekday wd, HolidayType holiday) const {
        double v = delta0 + temperature_response(temp);
        if (auto it = weekday_effect.find(wd); it != weekday_effect.end()) v += it->second;
        if (auto it = holiday_effect.find(holiday); it != holiday_effect.end()) v += it->second;
        return v;
    }

    double predict(const DailyObservation& o) const {
        return predict(o.temp_c, o.weekday, o.holiday);
    }
};

struct BreakpointGrid {
    double low = 5.0;
    double high = 25.0;
    double step = 0.5;
};

namespace detail {

struct DesignLayout {
    std::vector<Weekday> weekdays;      // non-Monday weekdays present
    std::vector<HolidayType> holidays;  // non-none types present
    bool with_breakpoint = false;
    int n_cols() const {
        return 2 + (with_breakpoint ? 1 : 0) + int(weekdays.size()) + int(holidays.size());
    }
};

inline DesignLayout layout_for(std::span<const DailyObservation> obs, bool with_breakpoint) {
    std::set<Weekday> wds;
    std::set<HolidayType> hols;
    for (const auto& o : obs) {
        if (o.weekday != Weekday::mon) wds.insert(o.weekday);
        if (o.holiday != HolidayType::none) hols.insert(o.holiday);
    }
    DesignLayout layout;
    layout.weekdays.assign(wds.begin(), wds.end());
    layout.holidays.assign(hols.begin(), hols.end());
    layout.with_breakpoint = with_breakpoint;
    return layout;
}

inline std::vector<std::string> column_names(const DesignLayout& layout) {
    std::vector<std::string> names{"delta0", "delta1"};
    if (layout.with_breakpoint) names.emplace_back("delta2");
    for (auto wd : layout.weekdays) names.push_back(std::string("wd_") + to_string(wd));
    for (auto h : layout.holidays) names.push_back(std::string("hol_") + to_string(h));
    return names;
}

inline Eigen::MatrixXd build_design(std::span<const DailyObservation> obs,
                                    const DesignLayout& layout, double k) {
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(long(obs.size()), layout.n_cols());
    for (long i = 0; i < long(obs.size()); ++i) {
        const auto& o = obs[size_t(i)];
        int c = 0;
        X(i, c++) = 1.0;
        X(i, c++) = o.temp_c;
        if (layout.with_breakpoint) X(i, c++) = o.temp_c > k ? o.temp_c - k : 0.0;
        for (auto wd : layout.weekdays) X(i, c++) = o.weekday == wd ? 1.0 : 0.0;
        for (auto h : layout.holidays) X(i, c++) = o.holiday == h ? 1.0 : 0.0;
    }
    return X;
}

}  // namespace detail

/// Grid-search the breakpoint k over [5, 25] C in half-degree steps, keeping
/// the minimum-SSR fit; ties resolve toward lower k. Candidates outside the
/// observed temperature range are skipped, and when none is admissible the
/// model degrades to a single slope.
inline ShortRunModel fit_short_run(std::span<const DailyObservation> series, Date shock_date,
                                   BreakpointGrid grid = {}) {
    std::vector<DailyObservation> fit_obs;
    for (const auto& o : series)
        if (o.date < shock_date) fit_obs.push_back(o);
    if (fit_obs.size() < 100)
        throw InsufficientDataError("fit_short_run: " + std::to_string(fit_obs.size()) +
                                    " pre-shock observations is too few");
    std::sort(fit_obs.begin(), fit_obs.end(),
              [](const auto& a, const auto& b) { return a.date < b.date; });
    if (fit_obs.back().date - fit_obs.front().date < 2 * 365 - 30)
        throw InsufficientDataError("fit_short_run: need >= 2 years before the shock date");

    double temp_min = fit_obs.front().temp_c, temp_max = temp_min;
    for (const auto& o : fit_obs) {
        temp_min = std::min(temp_min, o.temp_c);
        temp_max = std::max(temp_max, o.temp_c);
    }

    Eigen::VectorXd y(long(fit_obs.size()));
    for (long i = 0; i < y.size(); ++i) y[i] = fit_obs[size_t(i)].log_load;

    struct Candidate {
        double k = std::numeric_limits<double>::quiet_NaN();
        bool with_breakpoint = false;
        linreg::OlsFit fit;
        detail::DesignLayout layout;
    };

    auto fit_at = [&](double k, bool with_bp) {
        Candidate c;
        c.k = k;
        c.with_breakpoint = with_bp;
        c.layout = detail::layout_for(fit_obs, with_bp);
        auto X = detail::build_design(fit_obs, c.layout, k);
        c.fit = linreg::fit_ols(X, y, detail::column_names(c.layout));
        return c;
    };

    Candidate single_slope = fit_at(0.0, false);
    std::optional<Candidate> best_bp;
    const double tol = 1e-12 * std::max(1.0, single_slope.fit.ssr);
    for (double k = grid.low; k <= grid.high + 1e-9; k += grid.step) {
        if (!(k > temp_min && k < temp_max)) continue;
        Candidate c = fit_at(k, true);
        if (!c.fit.is_kept(2)) continue;  // breakpoint column dropped: not identified here
        if (!best_bp || c.fit.ssr < best_bp->fit.ssr - tol) best_bp = std::move(c);
    }

    // the breakpoint model nests the single slope, so prefer it whenever a
    // candidate was admissible and did not lose numerically
    const bool use_bp = best_bp && best_bp->fit.ssr <= single_slope.fit.ssr + tol;
    const Candidate& cand = use_bp ? *best_bp : single_slope;
    const auto names = detail::column_names(cand.layout);

    ShortRunModel model;
    model.fit_start = fit_obs.front().date;
    model.fit_end = fit_obs.back().date;
    model.n_fit = long(fit_obs.size());
    model.dropped_columns = cand.fit.dropped;
    model.residual_sd = std::sqrt(std::max(0.0, cand.fit.sigma2));

    int c = 0;
    model.delta0 = cand.fit.coef[c++];
    model.delta1 = cand.fit.coef[c++];
    if (cand.with_breakpoint) {
        model.delta2 = cand.fit.coef[c++];
        model.k = cand.k;
        model.has_breakpoint = true;
    }
    for (auto wd : cand.layout.weekdays) model.weekday_effect[wd] = cand.fit.coef[c++];
    for (auto h : cand.layout.holidays) model.holiday_effect[h] = cand.fit.coef[c++];
    for (long j = 0; j < long(names.size()); ++j)
        if (std::isfinite(cand.fit.std_error[j]))
            model.std_error[names[size_t(j)]] = cand.fit.std_error[j];
    return model;
}

/// y_t minus the Eq.-1 prediction, over the full sample including post-shock
/// dates.
inline std::vector<AdjustedPoint> short_term_adjust(std::span<const DailyObservation> series,
                                                    const ShortRunModel& model) {
    std::vector<AdjustedPoint> out;
    out.reserve(series.size());
    for (const auto& o : series) out.push_back({o.date, o.log_load - model.predict(o)});
    std::sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.date < b.date; });
    return out;
}

struct MonthDay {
    unsigned month = 3;
    unsigned day = 3;
};

/// Pre-outbreak yearly levels: one effect per year, final year as baseline,
/// estimated on each year's window from Jan 1 to the outbreak month-day
/// (inclusive), using whichever days the series contains there.
struct YearEffects {
    int base_year = 0;
    double alpha0 = 0;                 // base-year window level
    std::map<int, double> alpha;       // year -> effect; base year present with 0
    std::map<int, double> alpha_se;
    std::map<int, int> window_count;
    MonthDay window_end;
};

inline YearEffects fit_year_effects(std::span<const AdjustedPoint> adjusted,
                                    int base_year = -1, MonthDay window_end = {3, 3},
                                    int min_window_days = 20) {
    if (adjusted.empty()) throw ValidationError("fit_year_effects: empty series");

    std::map<int, std::vector<const AdjustedPoint*>> windows;
    std::set<int> years_seen;
    for (const auto& p : adjusted) {
        const int y = p.date.year();
        years_seen.insert(y);
        if (p.date <= Date::from_ymd(y, window_end.month, window_end.day))
            windows[y].push_back(&p);
    }
    if (base_year < 0) base_year = *years_seen.rbegin();

    for (int y : years_seen) {
        const int count = windows.count(y) ? int(windows[y].size()) : 0;
        if (count < min_window_days)
            throw InsufficientDataError("fit_year_effects: year " + std::to_string(y) +
                                        " has " + std::to_string(count) +
                                        " usable days in its window, need " +
                                        std::to_string(min_window_days));
    }

    std::vector<int> other_years;
    for (int y : years_seen)
        if (y != base_year) other_years.push_back(y);

    long n = 0;
    for (auto& [y, pts] : windows) n += long(pts.size());
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, 1 + long(other_years.size()));
    Eigen::VectorXd yv(n);
    std::vector<std::string> names{"alpha0"};
    for (int y : other_years) names.push_back("alpha_" + std::to_string(y));
    long row = 0;
    for (auto& [y, pts] : windows) {
        for (const auto* p : pts) {
            X(row, 0) = 1.0;
            for (size_t j = 0; j < other_years.size(); ++j)
                if (other_years[j] == y) X(row, 1 + long(j)) = 1.0;
            yv[row] = p->value;
            ++row;
        }
    }
    auto fit = linreg::fit_ols(X, yv, names);

    YearEffects eff;
    eff.base_year = base_year;
    eff.alpha0 = fit.coef[0];
    eff.window_end = window_end;
    eff.alpha[base_year] = 0.0;
    for (size_t j = 0; j < other_years.size(); ++j) {
        eff.alpha[other_years[j]] = fit.coef[1 + long(j)];
        eff.alpha_se[other_years[j]] = fit.std_error[1 + long(j)];
    }
    for (auto& [y, pts] : windows) eff.window_count[y] = int(pts.size());
    return eff;
}

/// Subtract each calendar year's fixed effect (zero for the base year),
/// yielding the dependent variable of the impact model.
inline std::vector<AdjustedPoint> long_run_adjust(std::span<const AdjustedPoint> adjusted,
                                                  const YearEffects& effects) {
    std::vector<AdjustedPoint> out;
    out.reserve(adjusted.size());
    for (const auto& p : adjusted) {
        auto it = effects.alpha.find(p.date.year());
        if (it == effects.alpha.end())
            throw EstimationError("long_run_adjust: year " + std::to_string(p.date.year()) +
                                  " outside the fitted span");
        out.push_back({p.date, p.value - it->second});
    }
    return out;
}

// --- report ----------------------------------------------------------------

inline nlohmann::json short_run_to_json(const ShortRunModel& m) {
    nlohmann::json j;
    j["delta0"] = m.delta0;
    j["delta1"] = m.delta1;
    j["delta2"] = m.delta2;
    if (m.has_breakpoint) j["k"] = m.k;
    j["has_breakpoint"] = m.has_breakpoint;
    for (const auto& [wd, v] : m.weekday_effect) j["weekday_effect"][to_string(wd)] = v;
    for (const auto& [h, v] : m.holiday_effect) j["holiday_effect"][to_string(h)] = v;
    j["residual_sd"] = m.residual_sd;
    j["fit_start"] = m.fit_start.to_string();
    j["fit_end"] = m.fit_end.to_string();
    j["n_fit"] = m.n_fit;
    j["dropped_columns"] = m.dropped_columns;
    for (const auto& [name, se] : m.std_error) j["std_error"][name] = se;
    return j;
}

inline nlohmann::json year_effects_to_json(const YearEffects& e) {
    nlohmann::json j;
    j["base_year"] = e.base_year;
    j["alpha0"] = e.alpha0;
    j["window_end"] = {e.window_end.month, e.window_end.day};
    for (const auto& [y, v] : e.alpha) j["alpha"][std::to_string(y)] = v;
    for (const auto& [y, v] : e.alpha_se) j["alpha_se"][std::to_string(y)] = v;
    for (const auto& [y, c] : e.window_count) j["window_count"][std::to_string(y)] = c;
    return j;
}

inline void write_prefilter_report(std::ostream& out, const ShortRunModel& m,
                                   const YearEffects& e) {
    nlohmann::json j;
    j["short_run"] = short_run_to_json(m);
    j["year_effects"] = year_effects_to_json(e);
    out << j.dump(2) << '\n';
}

inline void write_adjusted_series(std::ostream& out, std::span<const AdjustedPoint> pts) {
    out << "date,value\n";
    for (const auto& p : pts)
        out << p.date.to_string() << ',' << csv::format_exact(p.value) << '\n';
}

inline std::vector<AdjustedPoint> read_adjusted_series(std::istream& in) {
    csv::Reader reader(in, "adjusted series");
    const int c_date = reader.column("date");
    const int c_val = reader.column("value");
    std::vector<AdjustedPoint> pts;
    while (auto row = reader.next_row()) {
        AdjustedPoint p;
        try {
            p.date = Date::parse((*row)[size_t(c_date)]);
        } catch (const std::exception& e) {
            reader.fail(e.what());
        }
        auto v = csv::parse_double((*row)[size_t(c_val)]);
        if (!v) reader.fail("bad value");
        p.value = *v;
        pts.push_back(p);
    }
    return pts;
}

}  // namespace loadshock::prefilter
