#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "loadshock/core.hpp"
#include "loadshock/csv.hpp"
#include "loadshock/impact.hpp"
#include "loadshock/stats.hpp"

namespace loadshock::gdp {

/// Load-to-GDP rescaling: outside lockdown the whole load change is assigned
/// to the productive sectors; during lockdown residential consumption is
/// assumed 40% above normal, shrinking the productive denominator.
inline double rescale_to_gdp(double l_pct, double residential_share, bool lockdown) {
    if (!(residential_share >= 0 && residential_share < 100.0 / 1.4))
        throw ValidationError("rescale_to_gdp: residential share must lie in [0, 100/1.4)");
    const double denom =
        lockdown ? 100.0 - 1.4 * residential_share : 100.0 - residential_share;
    return l_pct * 100.0 / denom;
}

enum class Period { week, month, quarter };

inline std::string period_key(Date d, Period p) {
    char buf[24];
    switch (p) {
        case Period::week: {
            auto iw = iso_week(d);
            std::snprintf(buf, sizeof(buf), "%04d-W%02d", iw.year, iw.week);
            break;
        }
        case Period::month:
            std::snprintf(buf, sizeof(buf), "%04d-%02u", d.year(), d.month());
            break;
        case Period::quarter:
            std::snprintf(buf, sizeof(buf), "%04dQ%u", d.year(), (d.month() - 1) / 3 + 1);
            break;
    }
    return buf;
}

struct PeriodImpact {
    std::string period;
    double gdp_pct = 0;
    double lo95 = 0, hi95 = 0;
    int stars = 0;  // 1 = 10%, 2 = 5%, 3 = 1% (interval excludes zero)
};

inline std::string star_string(int stars) { return std::string(size_t(stars), '*'); }

struct AggregateResult {
    std::vector<PeriodImpact> periods;
    std::vector<std::string> warnings;
};

/// Per-draw period means over weekdays, 2.5/97.5 percentile intervals, stars
/// by interval exclusion of zero at 10/5/1%. The point estimate comes from
/// the plug-in path, never the draw mean.
inline AggregateResult aggregate_period(const Eigen::MatrixXd& gdp_draws,
                                        std::span<const double> plugin_path,
                                        std::span<const Date> dates, Period period) {
    if (gdp_draws.cols() != long(dates.size()) || plugin_path.size() != dates.size())
        throw ValidationError("aggregate_period: dates, draws and path must align");
    const int n_draws = int(gdp_draws.rows());
    if (n_draws < 2) throw ValidationError("aggregate_period: need at least 2 draws");

    std::map<std::string, std::vector<size_t>> groups;
    std::set<std::string> weekend_only;
    for (size_t i = 0; i < dates.size(); ++i) {
        const auto key = period_key(dates[i], period);
        if (dates[i].is_weekend()) {
            weekend_only.insert(key);
            continue;
        }
        groups[key].push_back(i);
    }

    AggregateResult out;
    for (const auto& key : weekend_only)
        if (!groups.count(key))
            out.warnings.push_back("period " + key + " has no weekday coverage, omitted");

    std::vector<double> draw_means(size_t(n_draws), 0.0);
    for (const auto& [key, idxs] : groups) {
        PeriodImpact pi;
        pi.period = key;
        double point = 0;
        for (size_t i : idxs) point += plugin_path[i];
        pi.gdp_pct = point / double(idxs.size());
        for (int d = 0; d < n_draws; ++d) {
            double s = 0;
            for (size_t i : idxs) s += gdp_draws(d, long(i));
            draw_means[size_t(d)] = s / double(idxs.size());
        }
        pi.lo95 = stats::quantile(draw_means, 0.025);
        pi.hi95 = stats::quantile(draw_means, 0.975);
        auto excludes_zero = [&](double lo_p, double hi_p) {
            const double lo = stats::quantile(draw_means, lo_p);
            const double hi = stats::quantile(draw_means, hi_p);
            return lo > 0 || hi < 0;
        };
        if (excludes_zero(0.005, 0.995)) pi.stars = 3;
        else if (excludes_zero(0.025, 0.975)) pi.stars = 2;
        else if (excludes_zero(0.05, 0.95)) pi.stars = 1;
        out.periods.push_back(std::move(pi));
    }
    return out;
}

struct QuarterPoint {
    std::string quarter;
    double gdp_pct = 0;
};

inline std::vector<QuarterPoint> quarterly_points(std::span<const double> plugin_path,
                                                  std::span<const Date> dates) {
    std::map<std::string, std::pair<double, int>> acc;
    for (size_t i = 0; i < dates.size(); ++i) {
        if (dates[i].is_weekend()) continue;
        auto& [sum, count] = acc[period_key(dates[i], Period::quarter)];
        sum += plugin_path[i];
        ++count;
    }
    std::vector<QuarterPoint> out;
    for (const auto& [key, sc] : acc) out.push_back({key, sc.first / double(sc.second)});
    return out;
}

struct DailyGdp {
    Date date;
    double gdp_pct = 0;
};

struct GdpImpactSeries {
    std::vector<DailyGdp> daily;
    AggregateResult weekly;
    AggregateResult monthly;
    std::vector<QuarterPoint> quarterly;
};

/// Rescale the Monte Carlo load-impact draws day by day (each date keeps its
/// own lockdown flag) and aggregate. Mixed-lockdown periods are handled by
/// construction: rescaling happens before any averaging.
inline GdpImpactSeries build_gdp_series(const impact::MonteCarloResult& mc,
                                        const CountryConfig& config) {
    config.validate();
    const auto& dates = mc.dates;
    Eigen::VectorXd factor(long(dates.size()));
    for (size_t i = 0; i < dates.size(); ++i)
        factor[long(i)] = rescale_to_gdp(1.0, config.residential_share,
                                         config.in_lockdown(dates[i]));

    Eigen::MatrixXd gdp_draws = mc.daily_draws * factor.asDiagonal();
    std::vector<double> plugin(dates.size());
    for (size_t i = 0; i < dates.size(); ++i)
        plugin[i] = mc.series.daily[i].impact_pct * factor[long(i)];

    GdpImpactSeries out;
    for (size_t i = 0; i < dates.size(); ++i) out.daily.push_back({dates[i], plugin[i]});
    out.weekly = aggregate_period(gdp_draws, plugin, dates, Period::week);
    out.monthly = aggregate_period(gdp_draws, plugin, dates, Period::month);
    out.quarterly = quarterly_points(plugin, dates);
    return out;
}

// --- comparison against official statistics ---------------------------------

struct QuarterEstimate {
    std::string country;
    std::string quarter;  // e.g. 2020Q1
    double gdp_pct = 0;
};

struct OfficialQuarter {
    std::string country;
    std::string quarter;
    double growth_pct = 0;
    bool provisional = false;
};

struct ComparisonRow {
    std::string country;
    std::string quarter;
    double ours = 0;
    double official_impact = 0;  // official growth minus counterfactual growth
    bool provisional = false;
};

struct OfficialComparison {
    std::vector<ComparisonRow> rows;
    double correlation = 0;                          // excluding provisional pairs
    std::optional<double> correlation_with_provisional;
};

/// Official statistics report growth, not pandemic impact; subtracting the
/// same quarter's growth one year earlier makes the two series comparable.
inline OfficialComparison compare_official(std::span<const QuarterEstimate> ours,
                                           std::span<const OfficialQuarter> official,
                                           std::span<const OfficialQuarter> counterfactual) {
    auto key_of = [](const auto& r) { return r.country + "/" + r.quarter; };
    std::map<std::string, const OfficialQuarter*> off, cf;
    for (const auto& o : official) off[key_of(o)] = &o;
    for (const auto& c : counterfactual) cf[key_of(c)] = &c;

    std::string missing;
    OfficialComparison out;
    for (const auto& est : ours) {
        const auto key = key_of(est);
        auto o = off.find(key);
        auto c = cf.find(key);
        if (o == off.end() || c == cf.end()) {
            missing += missing.empty() ? key : ", " + key;
            continue;
        }
        out.rows.push_back({est.country, est.quarter, est.gdp_pct,
                            o->second->growth_pct - c->second->growth_pct,
                            o->second->provisional});
    }
    if (!missing.empty())
        throw ValidationError("compare_official: missing official/counterfactual pairs: " +
                              missing);
    std::sort(out.rows.begin(), out.rows.end(), [](const auto& a, const auto& b) {
        return std::tie(a.country, a.quarter) < std::tie(b.country, b.quarter);
    });

    std::vector<double> x_all, y_all, x_firm, y_firm;
    for (const auto& r : out.rows) {
        x_all.push_back(r.ours);
        y_all.push_back(r.official_impact);
        if (!r.provisional) {
            x_firm.push_back(r.ours);
            y_firm.push_back(r.official_impact);
        }
    }
    if (x_firm.size() >= 2) out.correlation = stats::pearson_correlation(x_firm, y_firm);
    if (x_all.size() >= 2 && x_all.size() != x_firm.size())
        out.correlation_with_provisional = stats::pearson_correlation(x_all, y_all);
    return out;
}

// --- serialization -----------------------------------------------------------

inline void write_gdp_report(std::ostream& out, const AggregateResult& monthly) {
    out << "month,impact,lower,upper,stars\n";
    for (const auto& p : monthly.periods)
        out << p.period << ',' << csv::format_fixed(p.gdp_pct, 2) << ','
            << csv::format_fixed(p.lo95, 2) << ',' << csv::format_fixed(p.hi95, 2) << ','
            << star_string(p.stars) << '\n';
}

inline void write_period_series(std::ostream& out, const AggregateResult& agg,
                                const char* period_col) {
    out << period_col << ",impact,lower,upper,stars\n";
    for (const auto& p : agg.periods)
        out << p.period << ',' << csv::format_fixed(p.gdp_pct, 4) << ','
            << csv::format_fixed(p.lo95, 4) << ',' << csv::format_fixed(p.hi95, 4) << ','
            << star_string(p.stars) << '\n';
}

inline std::vector<OfficialQuarter> parse_official_file(std::istream& in) {
    csv::Reader reader(in, "official statistics");
    const int c_country = reader.column("country");
    const int c_quarter = reader.column("quarter");
    const int c_growth = reader.column("growth_pct");
    const int c_prov = reader.column("provisional");
    std::vector<OfficialQuarter> out;
    while (auto row = reader.next_row()) {
        OfficialQuarter q;
        q.country = std::string((*row)[size_t(c_country)]);
        q.quarter = std::string((*row)[size_t(c_quarter)]);
        auto growth = csv::parse_double((*row)[size_t(c_growth)]);
        auto prov = csv::parse_double((*row)[size_t(c_prov)]);
        if (!growth) reader.fail("bad growth_pct");
        if (!prov || (*prov != 0 && *prov != 1)) reader.fail("bad provisional flag");
        q.growth_pct = *growth;
        q.provisional = *prov == 1;
        out.push_back(std::move(q));
    }
    return out;
}

inline void write_comparison(std::ostream& out, const OfficialComparison& cmp) {
    out << "country,quarter,ours,official_impact,provisional\n";
    for (const auto& r : cmp.rows)
        out << r.country << ',' << r.quarter << ',' << csv::format_fixed(r.ours, 4) << ','
            << csv::format_fixed(r.official_impact, 4) << ',' << (r.provisional ? 1 : 0)
            << '\n';
    out << "# correlation=" << csv::format_fixed(cmp.correlation, 4);
    if (cmp.correlation_with_provisional)
        out << " correlation_with_provisional="
            << csv::format_fixed(*cmp.correlation_with_provisional, 4);
    out << '\n';
}

}  // namespace loadshock::gdp
