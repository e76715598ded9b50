#pragma once

#include <cmath>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "loadshock/core.hpp"
#include "loadshock/csv.hpp"
#include "loadshock/impact.hpp"
#include "loadshock/pipeline.hpp"
#include "loadshock/stats.hpp"

namespace loadshock::diag {

struct LjungBoxResult {
    double stat = 0;
    double p_value = 1;
    int df = 1;
};

/// Portmanteau test at the given lag; degrees of freedom are reduced by the
/// number of fitted ARMA parameters, floored at one.
inline LjungBoxResult ljung_box(std::span<const double> residuals, int lag = 10,
                                int fitted_params = 0) {
    const long n = long(residuals.size());
    if (lag < 1) throw ValidationError("ljung_box: lag must be positive");
    if (n <= lag + fitted_params)
        throw InsufficientDataError("ljung_box: series of length " + std::to_string(n) +
                                    " too short for lag " + std::to_string(lag));
    double mean = 0;
    for (double v : residuals) mean += v;
    mean /= double(n);
    double denom = 0;
    for (double v : residuals) denom += (v - mean) * (v - mean);
    if (!(denom > 0))
        throw ValidationError("ljung_box: zero-variance residuals, autocorrelation undefined");

    double q = 0;
    for (int h = 1; h <= lag; ++h) {
        double num = 0;
        for (long t = h; t < n; ++t)
            num += (residuals[size_t(t)] - mean) * (residuals[size_t(t - h)] - mean);
        const double rho = num / denom;
        q += rho * rho / double(n - h);
    }
    q *= double(n) * double(n + 2);

    LjungBoxResult out;
    out.stat = q;
    out.df = std::max(lag - fitted_params, 1);
    out.p_value = stats::chi_squared_sf(q, out.df);
    return out;
}

/// R^2 of the deterministic part of the impact model against the prefiltered
/// series it was fitted on.
inline double fit_r2(std::span<const AdjustedPoint> adjusted, const impact::ImpactModel& model) {
    if (adjusted.empty()) throw ValidationError("fit_r2: empty series");
    double mean = 0;
    for (const auto& p : adjusted) mean += p.value;
    mean /= double(adjusted.size());
    double sst = 0, ssr = 0;
    for (const auto& p : adjusted) {
        sst += (p.value - mean) * (p.value - mean);
        const double pred = model.deterministic(p.date, true);
        ssr += (p.value - pred) * (p.value - pred);
    }
    if (!(sst > 0)) throw ValidationError("fit_r2: zero-variance dependent variable");
    return 1.0 - ssr / sst;
}

struct SeriesPoint {
    Date date;
    double value = 0;
};

/// R^2 of the combined deterministic prediction (prefilter steps plus the
/// impact model) against raw log load, date-aligned.
inline double total_r2(std::span<const SeriesPoint> raw_log_load,
                       std::span<const SeriesPoint> prediction) {
    if (raw_log_load.size() != prediction.size() || raw_log_load.empty())
        throw ValidationError("total_r2: series must align");
    double mean = 0;
    for (const auto& p : raw_log_load) mean += p.value;
    mean /= double(raw_log_load.size());
    double sst = 0, ssr = 0;
    for (size_t i = 0; i < raw_log_load.size(); ++i) {
        if (raw_log_load[i].date != prediction[i].date)
            throw ValidationError("total_r2: date mismatch at " +
                                  raw_log_load[i].date.to_string());
        sst += (raw_log_load[i].value - mean) * (raw_log_load[i].value - mean);
        const double e = raw_log_load[i].value - prediction[i].value;
        ssr += e * e;
    }
    if (!(sst > 0)) throw ValidationError("total_r2: zero-variance dependent variable");
    return 1.0 - ssr / sst;
}

struct PlaceboWeek {
    int week = 0;
    double estimate = 0;
    double z = 0;
    bool reject_5 = false, reject_10 = false;
};

struct Placebo1Result {
    std::vector<PlaceboWeek> weeks;
    int failures_5 = 0, failures_10 = 0;
    double expected_5 = 0.4, expected_10 = 0.8;
};

/// Wald tests of the shock-year interactions for weeks 1-8, where no impact
/// should exist yet.
inline Placebo1Result placebo_pre_outbreak(const impact::ImpactModel& model) {
    Placebo1Result out;
    for (int w = 1; w <= 8; ++w) {
        auto it = model.gamma_star.find(w);
        if (it == model.gamma_star.end())
            throw EstimationError("placebo_pre_outbreak: no interaction effect for week " +
                                  std::to_string(w));
        const double se = model.gamma_star_se(w);
        if (!std::isfinite(se) || !(se > 0))
            throw EstimationError("placebo_pre_outbreak: no usable standard error for week " +
                                  std::to_string(w));
        PlaceboWeek pw;
        pw.week = w;
        pw.estimate = it->second;
        pw.z = it->second / se;
        pw.reject_5 = std::fabs(pw.z) > stats::kZ95;
        pw.reject_10 = std::fabs(pw.z) > stats::kZ90;
        out.failures_5 += pw.reject_5;
        out.failures_10 += pw.reject_10;
        out.weeks.push_back(pw);
    }
    return out;
}

struct Placebo2Result {
    int pseudo_shock_year = 0;
    int n_tests = 0;
    int failures_5 = 0, failures_10 = 0;
    double expected_5 = 0, expected_10 = 0;
    std::vector<PlaceboWeek> weeks;
    Date max_date_used;   // provenance: the rerun never sees the true shock year
    long n_obs_used = 0;
};

/// Drop every true-shock-year observation (ISO week-year convention, matching
/// the interaction keying) and rerun the entire pipeline as if the shock had
/// hit the pseudo year; count significant pseudo interactions.
inline Placebo2Result placebo_shift_year(std::span<const DailyObservation> series,
                                         const CountryConfig& config,
                                         const pipeline::Options& opts,
                                         int pseudo_shock_year = 0) {
    const int true_year = opts.shock_year();
    if (pseudo_shock_year == 0) pseudo_shock_year = true_year - 1;
    if (pseudo_shock_year >= true_year)
        throw ValidationError("placebo_shift_year: pseudo year must precede the shock year");

    const Date cutoff = Date::from_ymd(true_year, 1, 1);
    std::vector<DailyObservation> truncated;
    for (const auto& o : series)
        if (o.date < cutoff && iso_week_year(o.date) < true_year) truncated.push_back(o);
    if (truncated.empty())
        throw InsufficientDataError("placebo_shift_year: no pre-shock-year data");

    pipeline::Options pseudo = opts;
    pseudo.shock_date =
        Date::from_ymd(pseudo_shock_year, opts.shock_date.month(), opts.shock_date.day());
    auto fit = pipeline::fit_pipeline(truncated, config, pseudo);

    Placebo2Result out;
    out.pseudo_shock_year = pseudo_shock_year;
    out.n_obs_used = long(truncated.size());
    out.max_date_used = truncated.back().date;
    for (const auto& o : truncated) out.max_date_used = std::max(out.max_date_used, o.date);

    for (const auto& [w, est] : fit.model.gamma_star) {
        const double se = fit.model.gamma_star_se(w);
        if (!std::isfinite(se) || !(se > 0)) continue;  // dropped interaction column
        PlaceboWeek pw;
        pw.week = w;
        pw.estimate = est;
        pw.z = est / se;
        pw.reject_5 = std::fabs(pw.z) > stats::kZ95;
        pw.reject_10 = std::fabs(pw.z) > stats::kZ90;
        out.failures_5 += pw.reject_5;
        out.failures_10 += pw.reject_10;
        out.weeks.push_back(pw);
        ++out.n_tests;
    }
    out.expected_5 = 0.05 * out.n_tests;
    out.expected_10 = 0.10 * out.n_tests;
    return out;
}

struct DiagnosticsReport {
    int ar = 0, ma = 0;
    LjungBoxResult lb;
    double apf_r2 = 0;
    double t_r2 = 0;
    Placebo1Result placebo1;
    std::optional<Placebo2Result> placebo2;
};

/// Full per-country diagnostics block. placebo2 reruns the whole pipeline and
/// is optional for cheap paths.
inline DiagnosticsReport full_report(std::span<const DailyObservation> series,
                                     const CountryConfig& config,
                                     const pipeline::FitResult& fit,
                                     const pipeline::Options& opts, bool with_placebo2 = true) {
    DiagnosticsReport rep;
    rep.ar = int(fit.model.phi.size());
    rep.ma = int(fit.model.theta.size());

    std::vector<double> innov(fit.model.innovations.data(),
                              fit.model.innovations.data() + fit.model.innovations.size());
    rep.lb = ljung_box(innov, 10, rep.ar + rep.ma);

    rep.apf_r2 = fit_r2(fit.fully_adjusted, fit.model);

    std::map<int, double> alpha = fit.year_effects.alpha;
    std::vector<SeriesPoint> raw, pred;
    for (const auto& o : series) {
        auto it = alpha.find(o.date.year());
        if (it == alpha.end()) continue;
        raw.push_back({o.date, o.log_load});
        pred.push_back({o.date, fit.eq1.predict(o) + it->second +
                                    fit.model.deterministic(o.date, true)});
    }
    rep.t_r2 = total_r2(raw, pred);

    rep.placebo1 = placebo_pre_outbreak(fit.model);
    if (with_placebo2) rep.placebo2 = placebo_shift_year(series, config, opts);
    return rep;
}

/// One row in the Table-2 style cross-country layout.
inline void write_diagnostics_header(std::ostream& out) {
    out << "country,ar,ma,ljung_box,ljung_box_p,apf_r2,t_r2,"
           "placebo1_fail5,placebo1_fail10,placebo2_fail5,placebo2_fail10,"
           "placebo2_expected5,placebo2_expected10\n";
}

inline void write_diagnostics_row(std::ostream& out, const std::string& country,
                                  const DiagnosticsReport& rep) {
    out << country << ',' << rep.ar << ',' << rep.ma << ','
        << csv::format_fixed(rep.lb.stat, 2) << ',' << csv::format_fixed(rep.lb.p_value, 2)
        << ',' << csv::format_fixed(rep.apf_r2, 2) << ',' << csv::format_fixed(rep.t_r2, 2)
        << ',' << rep.placebo1.failures_5 << ',' << rep.placebo1.failures_10 << ',';
    if (rep.placebo2)
        out << rep.placebo2->failures_5 << ',' << rep.placebo2->failures_10 << ','
            << csv::format_fixed(rep.placebo2->expected_5, 1) << ','
            << csv::format_fixed(rep.placebo2->expected_10, 1);
    else
        out << ",,,";
    out << '\n';
}

}  // namespace loadshock::diag
