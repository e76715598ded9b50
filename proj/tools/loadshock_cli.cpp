// Command-line driver for the electricity-load shock-impact pipeline.
// Subcommands mirror the pipeline stages so partial reruns stay cheap;
// `run` executes everything for a batch of countries.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "loadshock/core.hpp"
#include "loadshock/diagnostics.hpp"
#include "loadshock/gdp.hpp"
#include "loadshock/impact.hpp"
#include "loadshock/ingest.hpp"
#include "loadshock/pipeline.hpp"
#include "loadshock/prefilter.hpp"
#include "loadshock/synth.hpp"

namespace fs = std::filesystem;
using namespace loadshock;

namespace {

constexpr const char* kVersion = "0.1.0";

std::uint64_t fnv1a_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= std::uint64_t(static_cast<unsigned char>(buf[i]));
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    return out;
}

std::vector<DailyObservation> read_series_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open series file: " + path);
    return ingest::read_daily_series(in);
}

std::vector<AdjustedPoint> read_adjusted_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open adjusted series file: " + path);
    return prefilter::read_adjusted_series(in);
}

struct CommonFlags {
    std::string mode = "weekdays";
    std::string estimator = "ml_arma";
    std::string shock_date = "2020-03-03";
    std::uint64_t seed = 1;
    int draws = 5000;
    std::vector<int> order;

    pipeline::Options to_options() const {
        pipeline::Options opts;
        auto m = pipeline::run_mode_from_string(mode);
        if (!m) throw ValidationError("unknown mode: " + mode);
        opts.mode = *m;
        if (estimator == "ml_arma") opts.estimator = impact::Estimator::ml_arma;
        else if (estimator == "ols_hac") opts.estimator = impact::Estimator::ols_hac;
        else throw ValidationError("unknown estimator: " + estimator);
        opts.shock_date = Date::parse(shock_date);
        opts.seed = seed;
        opts.n_draws = draws;
        if (!order.empty()) {
            if (order.size() != 2) throw ValidationError("--order expects p q");
            opts.arma_order = {order[0], order[1]};
        }
        return opts;
    }
};

void add_common_flags(CLI::App* cmd, CommonFlags& f, bool with_mode = true) {
    if (with_mode)
        cmd->add_option("--mode", f.mode, "weekdays | all_days | peak_only");
    cmd->add_option("--estimator", f.estimator, "ml_arma | ols_hac");
    cmd->add_option("--shock-date", f.shock_date, "pre-shock cutoff, default 2020-03-03");
    cmd->add_option("--seed", f.seed, "Monte Carlo master seed");
    cmd->add_option("--draws", f.draws, "Monte Carlo draw count (default 5000)");
    cmd->add_option("--order", f.order, "fixed ARMA order p q (skips selection)")
        ->expected(2);
}

void write_country_artifacts(const fs::path& out_dir, const std::string& cc,
                             const pipeline::IngestOutcome& ing,
                             const pipeline::CountryRun& run,
                             const diag::DiagnosticsReport& rep,
                             const pipeline::Options& opts) {
    {
        auto out = open_out(out_dir / (cc + "_daily.csv"));
        ingest::write_daily_series(out, ing.series);
    }
    {
        auto out = open_out(out_dir / (cc + "_gaps.csv"));
        ingest::write_gap_report(out, ing.gaps);
    }
    {
        auto out = open_out(out_dir / (cc + "_prefilter.json"));
        prefilter::write_prefilter_report(out, run.fit.eq1, run.fit.year_effects);
    }
    {
        auto out = open_out(out_dir / (cc + "_adjusted.csv"));
        prefilter::write_adjusted_series(out, run.fit.fully_adjusted);
    }
    {
        auto out = open_out(out_dir / (cc + "_model.json"));
        out << impact::model_to_json(run.fit.model).dump(2) << '\n';
    }
    {
        auto daily = open_out(out_dir / (cc + "_impact_daily.csv"));
        auto weekly = open_out(out_dir / (cc + "_impact_weekly.csv"));
        impact::write_impact_series(daily, weekly, run.mc.series, cc,
                                    run.fit.model.estimator, run.fit.order, opts.seed,
                                    opts.n_draws);
    }
    {
        auto out = open_out(out_dir / (cc + "_predictions.csv"));
        out << "date,factual,counterfactual\n";
        for (const auto& p : run.mc.series.predictions)
            out << p.date.to_string() << ',' << csv::format_exact(p.factual) << ','
                << csv::format_exact(p.counterfactual) << '\n';
    }
    {
        auto out = open_out(out_dir / (cc + "_gdp_daily.csv"));
        out << "date,gdp_pct\n";
        for (const auto& d : run.gdp_series.daily)
            out << d.date.to_string() << ',' << csv::format_fixed(d.gdp_pct) << '\n';
    }
    {
        auto out = open_out(out_dir / (cc + "_gdp_weekly.csv"));
        gdp::write_period_series(out, run.gdp_series.weekly, "week");
    }
    {
        auto out = open_out(out_dir / (cc + "_gdp_monthly.csv"));
        gdp::write_gdp_report(out, run.gdp_series.monthly);
    }
    {
        auto out = open_out(out_dir / (cc + "_gdp_quarterly.csv"));
        out << "quarter,gdp_pct\n";
        for (const auto& q : run.gdp_series.quarterly)
            out << q.quarter << ',' << csv::format_fixed(q.gdp_pct, 4) << '\n';
    }
    {
        auto out = open_out(out_dir / (cc + "_diagnostics.csv"));
        diag::write_diagnostics_header(out);
        diag::write_diagnostics_row(out, cc, rep);
    }
}

int cmd_synth(const std::string& spec_path, std::uint64_t seed, const std::string& out_dir) {
    synth::SynthSpec spec = synth::SynthSpec::defaults(seed);
    if (!spec_path.empty()) {
        std::ifstream in(spec_path);
        if (!in) throw ValidationError("cannot open spec file: " + spec_path);
        nlohmann::json j;
        in >> j;
        spec = synth::spec_from_json(j);
    }
    auto data = synth::generate(spec);
    synth::write_fixture(data, out_dir);
    std::cout << "wrote synthetic fixture for " << data.config.country << " to " << out_dir
              << " (" << data.hourly.size() << " hourly records)\n";
    return 0;
}

int cmd_ingest(const std::string& country, const std::string& load_path,
               const std::string& temp_path, const std::string& alt_path,
               const std::string& config_path, const std::string& mode,
               const std::string& out_dir) {
    auto config = ingest::load_country_config(config_path);
    if (config.country != country)
        throw ValidationError("config country '" + config.country +
                              "' does not match --country " + country);
    auto m = pipeline::run_mode_from_string(mode);
    if (!m) throw ValidationError("unknown mode: " + mode);
    auto outcome = pipeline::ingest_country(
        load_path, temp_path,
        alt_path.empty() ? std::nullopt : std::optional<std::string>(alt_path), config, *m);
    fs::create_directories(out_dir);
    {
        auto out = open_out(fs::path(out_dir) / (country + "_daily.csv"));
        ingest::write_daily_series(out, outcome.series);
    }
    {
        auto out = open_out(fs::path(out_dir) / (country + "_gaps.csv"));
        ingest::write_gap_report(out, outcome.gaps);
    }
    {
        nlohmann::json j;
        j["observations"] = outcome.series.size();
        j["gaps"] = outcome.gaps.size();
        if (outcome.bridge) {
            j["bridge"] = {{"slope", outcome.bridge->slope},
                           {"intercept", outcome.bridge->intercept},
                           {"r_squared", outcome.bridge->r_squared},
                           {"accepted", outcome.bridge->accepted},
                           {"n_overlap", outcome.bridge->n_overlap}};
        }
        std::vector<std::string> imputed;
        for (Date d : outcome.imputed_dates) imputed.push_back(d.to_string());
        j["imputed_dates"] = imputed;
        auto out = open_out(fs::path(out_dir) / (country + "_ingest.json"));
        out << j.dump(2) << '\n';
    }
    std::cout << country << ": " << outcome.series.size() << " observations, "
              << outcome.gaps.size() << " gaps\n";
    return 0;
}

int cmd_fit(const std::string& country, const std::string& series_path,
            const std::string& shock_date, const std::string& out_dir) {
    auto series = read_series_file(series_path);
    const Date shock = Date::parse(shock_date);
    auto eq1 = prefilter::fit_short_run(series, shock);
    auto short_adj = prefilter::short_term_adjust(series, eq1);
    auto years = prefilter::fit_year_effects(short_adj, shock.year(),
                                             {shock.month(), shock.day()});
    auto full_adj = prefilter::long_run_adjust(short_adj, years);
    fs::create_directories(out_dir);
    {
        auto out = open_out(fs::path(out_dir) / (country + "_prefilter.json"));
        prefilter::write_prefilter_report(out, eq1, years);
    }
    {
        auto out = open_out(fs::path(out_dir) / (country + "_adjusted.csv"));
        prefilter::write_adjusted_series(out, full_adj);
    }
    std::cout << country << ": prefilter fitted on " << eq1.n_fit << " observations";
    if (eq1.has_breakpoint) std::cout << ", k = " << eq1.k;
    std::cout << '\n';
    return 0;
}

int cmd_impact(const std::string& country, const std::string& adjusted_path,
               const std::string& config_path, const CommonFlags& flags,
               const std::string& out_dir) {
    auto adjusted = read_adjusted_file(adjusted_path);
    auto opts = flags.to_options();
    const int shock_year = opts.shock_year();

    std::pair<int, int> order{0, 0};
    if (opts.estimator == impact::Estimator::ml_arma) {
        if (opts.arma_order) order = *opts.arma_order;
        else {
            std::optional<std::pair<int, int>> cfg_order;
            if (!config_path.empty())
                cfg_order = ingest::load_country_config(config_path).arma_order;
            if (cfg_order) order = *cfg_order;
            else {
                auto ols = impact::fit_impact_model(adjusted, {0, 0},
                                                    impact::Estimator::ols_hac, shock_year);
                std::vector<double> resid(ols.ols_residuals.data(),
                                          ols.ols_residuals.data() + ols.ols_residuals.size());
                order = impact::select_arma_order(resid, opts.max_p, opts.max_q);
            }
        }
    }
    auto model = impact::fit_impact_model(adjusted, order, opts.estimator, shock_year);
    std::vector<Date> shock_dates;
    for (const auto& p : adjusted)
        if (iso_week_year(p.date) == shock_year) shock_dates.push_back(p.date);
    auto mc = impact::monte_carlo_ci(model, shock_dates, opts.n_draws, opts.seed);

    fs::create_directories(out_dir);
    {
        auto out = open_out(fs::path(out_dir) / (country + "_model.json"));
        out << impact::model_to_json(model).dump(2) << '\n';
    }
    {
        auto daily = open_out(fs::path(out_dir) / (country + "_impact_daily.csv"));
        auto weekly = open_out(fs::path(out_dir) / (country + "_impact_weekly.csv"));
        impact::write_impact_series(daily, weekly, mc.series, country, model.estimator, order,
                                    opts.seed, opts.n_draws);
    }
    std::cout << country << ": impact model fitted, order (" << order.first << ','
              << order.second << "), " << model.gamma_star.size() << " shock-week effects\n";
    return 0;
}

int cmd_gdp(const std::string& country, const std::string& model_path,
            const std::string& config_path, const std::string& ours_path,
            const std::string& official_path, const std::string& counterfactual_path,
            const CommonFlags& flags, const std::string& out_dir) {
    fs::create_directories(out_dir);
    if (!official_path.empty()) {
        // comparison mode against official statistics
        std::ifstream ours_in(ours_path);
        if (!ours_in) throw ValidationError("cannot open --ours file: " + ours_path);
        csv::Reader reader(ours_in, "our quarterly estimates");
        const int c_country = reader.column("country");
        const int c_quarter = reader.column("quarter");
        const int c_val = reader.column("gdp_pct");
        std::vector<gdp::QuarterEstimate> ours;
        while (auto row = reader.next_row()) {
            auto v = csv::parse_double((*row)[size_t(c_val)]);
            if (!v) reader.fail("bad gdp_pct");
            ours.push_back({std::string((*row)[size_t(c_country)]),
                            std::string((*row)[size_t(c_quarter)]), *v});
        }
        std::ifstream off_in(official_path);
        if (!off_in) throw ValidationError("cannot open official file: " + official_path);
        std::ifstream cf_in(counterfactual_path);
        if (!cf_in) throw ValidationError("cannot open counterfactual file: " + counterfactual_path);
        auto official = gdp::parse_official_file(off_in);
        auto counterfactual = gdp::parse_official_file(cf_in);
        auto cmp = gdp::compare_official(ours, official, counterfactual);
        auto out = open_out(fs::path(out_dir) / "official_comparison.csv");
        gdp::write_comparison(out, cmp);
        std::cout << "correlation (excluding provisional): "
                  << csv::format_fixed(cmp.correlation, 4) << '\n';
        return 0;
    }

    std::ifstream min(model_path);
    if (!min) throw ValidationError("cannot open model file: " + model_path);
    nlohmann::json mj;
    min >> mj;
    auto model = impact::model_from_json(mj);
    auto config = ingest::load_country_config(config_path);
    std::vector<Date> shock_dates;
    for (Date d : model.sample_dates)
        if (iso_week_year(d) == model.shock_year) shock_dates.push_back(d);
    auto opts = flags.to_options();
    auto mc = impact::monte_carlo_ci(model, shock_dates, opts.n_draws, opts.seed);
    auto series = gdp::build_gdp_series(mc, config);
    {
        auto out = open_out(fs::path(out_dir) / (country + "_gdp_monthly.csv"));
        gdp::write_gdp_report(out, series.monthly);
    }
    {
        auto out = open_out(fs::path(out_dir) / (country + "_gdp_weekly.csv"));
        gdp::write_period_series(out, series.weekly, "week");
    }
    {
        auto out = open_out(fs::path(out_dir) / (country + "_gdp_quarterly.csv"));
        out << "quarter,gdp_pct\n";
        for (const auto& q : series.quarterly)
            out << q.quarter << ',' << csv::format_fixed(q.gdp_pct, 4) << '\n';
    }
    std::cout << country << ": GDP series written (" << series.monthly.periods.size()
              << " months)\n";
    return 0;
}

int cmd_placebo(const std::string& country, const std::string& series_path,
                const std::string& config_path, int pseudo_year, const CommonFlags& flags,
                const std::string& out_dir) {
    auto series = read_series_file(series_path);
    auto config = ingest::load_country_config(config_path);
    auto opts = flags.to_options();
    if (!opts.arma_order) opts.arma_order = config.arma_order;

    auto fit = pipeline::fit_pipeline(series, config, opts);
    auto p1 = diag::placebo_pre_outbreak(fit.model);
    auto p2 = diag::placebo_shift_year(series, config, opts, pseudo_year);

    fs::create_directories(out_dir);
    auto out = open_out(fs::path(out_dir) / (country + "_placebo.csv"));
    out << "test,week,estimate,z,reject_5,reject_10\n";
    for (const auto& w : p1.weeks)
        out << "pre_outbreak," << w.week << ',' << csv::format_fixed(w.estimate) << ','
            << csv::format_fixed(w.z, 3) << ',' << w.reject_5 << ',' << w.reject_10 << '\n';
    for (const auto& w : p2.weeks)
        out << "shift_year," << w.week << ',' << csv::format_fixed(w.estimate) << ','
            << csv::format_fixed(w.z, 3) << ',' << w.reject_5 << ',' << w.reject_10 << '\n';
    out << "# placebo1 failures " << p1.failures_5 << '/' << p1.failures_10
        << " expected " << csv::format_fixed(p1.expected_5, 1) << '/'
        << csv::format_fixed(p1.expected_10, 1) << '\n';
    out << "# placebo2 failures " << p2.failures_5 << '/' << p2.failures_10
        << " expected " << csv::format_fixed(p2.expected_5, 1) << '/'
        << csv::format_fixed(p2.expected_10, 1) << " over " << p2.n_tests << " tests\n";
    std::cout << country << ": placebo1 " << p1.failures_5 << '/' << p1.failures_10
              << ", placebo2 " << p2.failures_5 << '/' << p2.failures_10 << " of "
              << p2.n_tests << '\n';
    return 0;
}

int cmd_report(const std::vector<std::string>& countries, const std::string& out_dir) {
    auto out = open_out(fs::path(out_dir) / "summary_diagnostics.csv");
    diag::write_diagnostics_header(out);
    int found = 0;
    for (const auto& cc : countries) {
        std::ifstream in(fs::path(out_dir) / (cc + "_diagnostics.csv"));
        if (!in) {
            std::cerr << "warning: no diagnostics for " << cc << '\n';
            continue;
        }
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line))
            if (!line.empty()) {
                out << line << '\n';
                ++found;
            }
    }
    std::cout << "summary over " << found << " countries written\n";
    return found == int(countries.size()) ? 0 : 1;
}

int cmd_run(const std::vector<std::string>& countries, const std::string& data_dir,
            const CommonFlags& flags, int jobs, const std::string& out_dir) {
    if (countries.empty()) throw ValidationError("--countries must name at least one country");
    auto opts = flags.to_options();
    fs::create_directories(out_dir);

    std::mutex log_mutex;
    std::vector<std::string> failures(countries.size());
    nlohmann::json digests = nlohmann::json::object();

    auto process = [&](size_t idx) {
        const std::string& cc = countries[idx];
        try {
            const auto load_path = fs::path(data_dir) / (cc + "_load.csv");
            const auto temp_path = fs::path(data_dir) / (cc + "_temp.csv");
            const auto alt_path = fs::path(data_dir) / (cc + "_temp_alt.csv");
            const auto config_path = fs::path(data_dir) / (cc + "_config.json");
            if (!fs::exists(load_path) || !fs::exists(config_path))
                throw ValidationError("unknown country '" + cc + "': no input files under " +
                                      data_dir);
            auto config = ingest::load_country_config(config_path.string());
            pipeline::Options country_opts = opts;
            if (!country_opts.arma_order) country_opts.arma_order = config.arma_order;

            auto ing = pipeline::ingest_country(
                load_path.string(), temp_path.string(),
                fs::exists(alt_path) ? std::optional<std::string>(alt_path.string())
                                     : std::nullopt,
                config, opts.mode);
            auto run = pipeline::run_estimation(ing.series, config, country_opts);
            auto rep = diag::full_report(ing.series, config, run.fit, country_opts, true);
            write_country_artifacts(out_dir, cc, ing, run, rep, country_opts);

            std::lock_guard lock(log_mutex);
            digests[cc + "_load.csv"] = hex64(fnv1a_digest(load_path.string()));
            digests[cc + "_temp.csv"] = hex64(fnv1a_digest(temp_path.string()));
            digests[cc + "_config.json"] = hex64(fnv1a_digest(config_path.string()));
            std::cout << cc << ": ok ("
                      << run.fit.model.gamma_star.size() << " shock weeks, order "
                      << run.fit.order.first << ',' << run.fit.order.second << ")\n";
        } catch (const std::exception& e) {
            failures[idx] = e.what();
            auto out = open_out(fs::path(out_dir) / (cc + "_error.txt"));
            out << e.what() << '\n';
            std::lock_guard lock(log_mutex);
            std::cerr << cc << ": FAILED: " << e.what() << '\n';
        }
    };

    if (jobs <= 1) {
        for (size_t i = 0; i < countries.size(); ++i) process(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        for (int j = 0; j < jobs; ++j)
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < countries.size();
                     i = next.fetch_add(1))
                    process(i);
            });
        for (auto& t : pool) t.join();
    }

    // combined summary over the countries that succeeded
    {
        auto out = open_out(fs::path(out_dir) / "summary_diagnostics.csv");
        diag::write_diagnostics_header(out);
        for (const auto& cc : countries) {
            std::ifstream in(fs::path(out_dir) / (cc + "_diagnostics.csv"));
            if (!in) continue;
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line))
                if (!line.empty()) out << line << '\n';
        }
    }
    {
        nlohmann::json prov;
        prov["version"] = kVersion;
        prov["seed"] = opts.seed;
        prov["draws"] = opts.n_draws;
        prov["mode"] = pipeline::to_string(opts.mode);
        prov["estimator"] = impact::to_string(opts.estimator);
        prov["shock_date"] = opts.shock_date.to_string();
        prov["countries"] = countries;
        prov["input_digests"] = digests;
        auto out = open_out(fs::path(out_dir) / "provenance.json");
        out << prov.dump(2) << '\n';
    }

    bool any_failed = false;
    for (const auto& f : failures) any_failed |= !f.empty();
    return any_failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Electricity-load based shock impact estimation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    std::string out_dir = "out";

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic fixture dataset");
    std::string synth_spec;
    std::uint64_t synth_seed = 1;
    synth_cmd->add_option("--spec", synth_spec, "synth spec JSON file");
    synth_cmd->add_option("--seed", synth_seed, "seed for the default spec");
    synth_cmd->add_option("--out", out_dir, "output directory")->required();

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "parse and assemble one country's series");
    std::string ing_country, ing_load, ing_temp, ing_alt, ing_config, ing_mode = "weekdays";
    ingest_cmd->add_option("--country", ing_country)->required();
    ingest_cmd->add_option("--load", ing_load, "hourly load file")->required();
    ingest_cmd->add_option("--temp", ing_temp, "temperature file")->required();
    ingest_cmd->add_option("--temp-alt", ing_alt, "alternate temperature source");
    ingest_cmd->add_option("--config", ing_config, "country config JSON")->required();
    ingest_cmd->add_option("--mode", ing_mode, "weekdays | all_days | peak_only");
    ingest_cmd->add_option("--out", out_dir)->required();

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "prefilter: short-run and year-effect steps");
    std::string fit_country, fit_series, fit_shock = "2020-03-03";
    fit_cmd->add_option("--country", fit_country)->required();
    fit_cmd->add_option("--series", fit_series, "daily series CSV from ingest")->required();
    fit_cmd->add_option("--shock-date", fit_shock);
    fit_cmd->add_option("--out", out_dir)->required();

    // impact
    auto* impact_cmd = app.add_subcommand("impact", "fit the impact model and intervals");
    std::string imp_country, imp_adjusted, imp_config;
    CommonFlags imp_flags;
    impact_cmd->add_option("--country", imp_country)->required();
    impact_cmd->add_option("--adjusted", imp_adjusted, "adjusted series CSV from fit")
        ->required();
    impact_cmd->add_option("--config", imp_config, "country config JSON (for the ARMA order)");
    add_common_flags(impact_cmd, imp_flags, false);
    impact_cmd->add_option("--out", out_dir)->required();

    // gdp
    auto* gdp_cmd = app.add_subcommand("gdp", "rescale impacts to GDP / compare to official");
    std::string gdp_country, gdp_model, gdp_config, gdp_ours, gdp_official, gdp_cf;
    CommonFlags gdp_flags;
    gdp_cmd->add_option("--country", gdp_country);
    gdp_cmd->add_option("--model", gdp_model, "impact model JSON");
    gdp_cmd->add_option("--config", gdp_config, "country config JSON");
    gdp_cmd->add_option("--ours", gdp_ours, "our quarterly estimates (comparison mode)");
    gdp_cmd->add_option("--official", gdp_official, "official growth file (comparison mode)");
    gdp_cmd->add_option("--counterfactual", gdp_cf, "counterfactual growth file");
    add_common_flags(gdp_cmd, gdp_flags, false);
    gdp_cmd->add_option("--out", out_dir)->required();

    // placebo
    auto* placebo_cmd = app.add_subcommand("placebo", "both in-time placebo tests");
    std::string plc_country, plc_series, plc_config;
    int plc_pseudo_year = 0;
    CommonFlags plc_flags;
    placebo_cmd->add_option("--country", plc_country)->required();
    placebo_cmd->add_option("--series", plc_series, "daily series CSV")->required();
    placebo_cmd->add_option("--config", plc_config, "country config JSON")->required();
    placebo_cmd->add_option("--pseudo-year", plc_pseudo_year,
                            "pseudo shock year (default: shock year - 1)");
    add_common_flags(placebo_cmd, plc_flags, false);
    placebo_cmd->add_option("--out", out_dir)->required();

    // report
    auto* report_cmd = app.add_subcommand("report", "combined cross-country summary");
    std::vector<std::string> rep_countries;
    report_cmd->add_option("--countries", rep_countries)->required()->delimiter(',');
    report_cmd->add_option("--out", out_dir)->required();

    // run
    auto* run_cmd = app.add_subcommand("run", "full batch pipeline for a set of countries");
    std::vector<std::string> run_countries;
    std::string run_data;
    int run_jobs = 1;
    CommonFlags run_flags;
    run_cmd->add_option("--countries", run_countries)->required()->delimiter(',');
    run_cmd->add_option("--data", run_data, "input directory with per-country files")
        ->required();
    add_common_flags(run_cmd, run_flags);
    run_cmd->add_option("--jobs", run_jobs, "worker count for per-country parallelism");
    run_cmd->add_option("--out", out_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // invalid manifest
    }

    try {
        if (*synth_cmd) return cmd_synth(synth_spec, synth_seed, out_dir);
        if (*ingest_cmd)
            return cmd_ingest(ing_country, ing_load, ing_temp, ing_alt, ing_config, ing_mode,
                              out_dir);
        if (*fit_cmd) return cmd_fit(fit_country, fit_series, fit_shock, out_dir);
        if (*impact_cmd)
            return cmd_impact(imp_country, imp_adjusted, imp_config, imp_flags, out_dir);
        if (*gdp_cmd)
            return cmd_gdp(gdp_country, gdp_model, gdp_config, gdp_ours, gdp_official, gdp_cf,
                           gdp_flags, out_dir);
        if (*placebo_cmd)
            return cmd_placebo(plc_country, plc_series, plc_config, plc_pseudo_year, plc_flags,
                               out_dir);
        if (*report_cmd) return cmd_report(rep_countries, out_dir);
        if (*run_cmd) return cmd_run(run_countries, run_data, run_flags, run_jobs, out_dir);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
