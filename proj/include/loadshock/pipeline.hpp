#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loadshock/core.hpp"
#include "loadshock/gdp.hpp"
#include "loadshock/impact.hpp"
#include "loadshock/ingest.hpp"
#include "loadshock/prefilter.hpp"

namespace loadshock::pipeline {

enum class RunMode { weekdays, all_days, peak_only };

inline const char* to_string(RunMode m) {
    switch (m) {
        case RunMode::weekdays: return "weekdays";
        case RunMode::all_days: return "all_days";
        case RunMode::peak_only: return "peak_only";
    }
    return "?";
}

inline std::optional<RunMode> run_mode_from_string(std::string_view s) {
    if (s == "weekdays") return RunMode::weekdays;
    if (s == "all_days") return RunMode::all_days;
    if (s == "peak_only") return RunMode::peak_only;
    return std::nullopt;
}

struct Options {
    Date shock_date = Date::from_ymd(2020, 3, 3);
    impact::Estimator estimator = impact::Estimator::ml_arma;
    RunMode mode = RunMode::weekdays;
    std::optional<std::pair<int, int>> arma_order;  // overrides the config when set
    int max_p = 5, max_q = 2;
    std::uint64_t seed = 1;
    int n_draws = 5000;
    impact::FitOptions fit;

    int shock_year() const { return shock_date.year(); }
};

struct FitResult {
    prefilter::ShortRunModel eq1;
    prefilter::YearEffects year_effects;
    std::vector<AdjustedPoint> short_adjusted;   // after the Eq.-1 step
    std::vector<AdjustedPoint> fully_adjusted;   // dependent variable of the impact model
    impact::ImpactModel model;
    std::pair<int, int> order{0, 0};
    bool order_selected = false;                 // false = taken from config/options
    std::vector<Date> shock_dates;               // sample dates in the shock year
};

/// Prefilter and impact estimation on a prepared daily series. Deterministic;
/// the user seed is not consumed here.
inline FitResult fit_pipeline(std::span<const DailyObservation> series,
                              const CountryConfig& config, const Options& opts) {
    FitResult out;
    const int shock_year = opts.shock_year();

    out.eq1 = prefilter::fit_short_run(series, opts.shock_date);
    out.short_adjusted = prefilter::short_term_adjust(series, out.eq1);
    out.year_effects = prefilter::fit_year_effects(
        out.short_adjusted, shock_year,
        {opts.shock_date.month(), opts.shock_date.day()});
    out.fully_adjusted = prefilter::long_run_adjust(out.short_adjusted, out.year_effects);

    if (opts.estimator == impact::Estimator::ols_hac) {
        out.order = {0, 0};
    } else if (opts.arma_order) {
        out.order = *opts.arma_order;
    } else if (config.arma_order) {
        out.order = *config.arma_order;
    } else {
        auto ols_model = impact::fit_impact_model(out.fully_adjusted, {0, 0},
                                                  impact::Estimator::ols_hac, shock_year);
        std::vector<double> resid(ols_model.ols_residuals.data(),
                                  ols_model.ols_residuals.data() +
                                      ols_model.ols_residuals.size());
        out.order = impact::select_arma_order(resid, opts.max_p, opts.max_q);
        out.order_selected = true;
    }

    out.model = impact::fit_impact_model(out.fully_adjusted, out.order, opts.estimator,
                                         shock_year, opts.fit);
    impact::absorb_year_effect_uncertainty(out.model, out.fully_adjusted, shock_year,
                                           opts.shock_date.month(), opts.shock_date.day());

    for (const auto& p : out.fully_adjusted)
        if (iso_week_year(p.date) == shock_year) out.shock_dates.push_back(p.date);
    return out;
}

struct CountryRun {
    FitResult fit;
    impact::MonteCarloResult mc;
    gdp::GdpImpactSeries gdp_series;
};

inline CountryRun run_estimation(std::span<const DailyObservation> series,
                                 const CountryConfig& config, const Options& opts) {
    CountryRun run;
    run.fit = fit_pipeline(series, config, opts);
    run.mc = impact::monte_carlo_ci(run.fit.model, run.fit.shock_dates, opts.n_draws,
                                    opts.seed);
    run.gdp_series = gdp::build_gdp_series(run.mc, config);
    return run;
}

// --- file-based ingestion ----------------------------------------------------

struct IngestOutcome {
    std::vector<DailyObservation> series;
    std::vector<ingest::GapEntry> gaps;
    std::optional<ingest::TemperatureBridge> bridge;
    std::vector<Date> imputed_dates;
};

/// Parse, aggregate and assemble one country's series. When an alternate
/// temperature source is given, gaps in the primary are bridged through it
/// if the cross-source regression is acceptable.
inline IngestOutcome ingest_country(const std::string& load_path, const std::string& temp_path,
                                    const std::optional<std::string>& alt_temp_path,
                                    const CountryConfig& config, RunMode mode) {
    auto records = ingest::parse_load_file(load_path, config.country);
    const auto agg_mode = mode == RunMode::peak_only ? ingest::AggregationMode::peak_hours
                                                     : ingest::AggregationMode::all_hours;
    auto daily = ingest::aggregate_daily(records, agg_mode);
    auto temps = ingest::parse_temperature_file(temp_path);

    IngestOutcome out;
    if (alt_temp_path) {
        auto alt = ingest::parse_temperature_file(*alt_temp_path);
        out.bridge = ingest::bridge_temperature(temps, alt);
        if (out.bridge->accepted) {
            std::set<Date> have;
            for (const auto& t : temps) have.insert(t.date);
            std::vector<Date> gap_dates;
            for (const auto& d : daily.values)
                if (!have.count(d.date)) gap_dates.push_back(d.date);
            auto imputed = ingest::impute_temperature(gap_dates, alt, *out.bridge);
            for (const auto& t : imputed) {
                temps.push_back(t);
                out.imputed_dates.push_back(t.date);
            }
            std::sort(temps.begin(), temps.end(),
                      [](auto& a, auto& b) { return a.date < b.date; });
        }
    }

    const auto filter = mode == RunMode::all_days ? ingest::DayFilter::all_days
                                                  : ingest::DayFilter::weekdays_only;
    auto built = ingest::build_daily_series(daily.values, temps, config.holidays, config,
                                            filter, daily.missing_days);
    out.series = std::move(built.observations);
    out.gaps = std::move(built.gaps);
    return out;
}

}  // namespace loadshock::pipeline
