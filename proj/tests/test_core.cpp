#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "loadshock/core.hpp"
#include "loadshock/csv.hpp"
#include "loadshock/rng.hpp"
#include "loadshock/stats.hpp"

using namespace loadshock;

TEST_CASE("date arithmetic and parsing") {
    auto d = Date::from_ymd(2020, 3, 3);
    CHECK(d.year() == 2020);
    CHECK(d.month() == 3);
    CHECK(d.day() == 3);
    CHECK(d.to_string() == "2020-03-03");
    CHECK(Date::parse("2020-03-03") == d);
    CHECK(d + 1 == Date::parse("2020-03-04"));
    CHECK(Date::parse("2020-03-01") - Date::parse("2020-02-28") == 2);  // leap year
    CHECK(weekday_of(d) == Weekday::tue);
    CHECK(Date::parse("2020-03-07").is_weekend());
    CHECK_THROWS_AS(Date::parse("2020-13-01"), ValidationError);
    CHECK_THROWS_AS(Date::parse("garbage"), ParseError);
    CHECK_THROWS_AS(Date::parse("2020-02-30"), ValidationError);
}

TEST_CASE("iso week conventions") {
    CHECK(iso_week(Date::parse("2020-01-01")) == IsoWeek{2020, 1});
    CHECK(iso_week(Date::parse("2019-12-30")) == IsoWeek{2020, 1});
    CHECK(iso_week(Date::parse("2016-01-01")) == IsoWeek{2015, 53});
    CHECK(iso_week(Date::parse("2015-12-28")) == IsoWeek{2015, 53});
    CHECK(iso_week(Date::parse("2020-12-31")) == IsoWeek{2020, 53});
    // week 53 folds into the week-52 effect
    CHECK(model_week(Date::parse("2016-01-01")) == 52);
    CHECK(model_week(Date::parse("2020-06-15")) == iso_week(Date::parse("2020-06-15")).week);
}

TEST_CASE("holiday calendar rejects conflicting types") {
    HolidayCalendar cal;
    cal.add(Date::parse("2020-05-01"), HolidayType::generic);
    CHECK(cal.type_for(Date::parse("2020-05-01")) == HolidayType::generic);
    CHECK(cal.type_for(Date::parse("2020-05-02")) == HolidayType::none);
    CHECK_THROWS_AS(cal.add(Date::parse("2020-05-01"), HolidayType::christmas),
                    ValidationError);
    cal.add_fixed_dates(2020, 2020);
    CHECK(cal.type_for(Date::parse("2020-12-25")) == HolidayType::christmas);
    CHECK(cal.type_for(Date::parse("2020-01-01")) == HolidayType::new_year);
    CHECK(cal.type_for(Date::parse("2020-12-31")) == HolidayType::dec31);
}

TEST_CASE("country config validation") {
    CountryConfig cfg;
    cfg.country = "XX";
    cfg.residential_share = 30;
    CHECK_NOTHROW(cfg.validate());
    cfg.residential_share = 75;  // 100 - 1.4 * 75 < 0
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.residential_share = 30;
    cfg.lockdown_start = Date::parse("2020-03-18");
    CHECK_THROWS_AS(cfg.validate(), ValidationError);  // missing end
    cfg.lockdown_end = Date::parse("2020-05-11");
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.in_lockdown(Date::parse("2020-03-18")));  // endpoints inclusive
    CHECK(cfg.in_lockdown(Date::parse("2020-05-11")));
    CHECK_FALSE(cfg.in_lockdown(Date::parse("2020-05-12")));
    cfg.lockdown_end = Date::parse("2020-03-01");
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("chi-square tail probabilities against quadrature") {
    // oracle: numerically integrate the chi-square density with Simpson's rule
    auto chi2_sf_quadrature = [](double x, int df) {
        auto pdf = [df](double t) {
            if (t <= 0) return 0.0;
            const double k = 0.5 * df;
            return std::exp((k - 1.0) * std::log(t) - 0.5 * t - k * std::log(2.0) -
                            std::lgamma(k));
        };
        const double hi = std::max(x + 60.0 * std::sqrt(2.0 * df) + 100.0, x * 3.0);
        const int steps = 400000;
        const double h = (hi - x) / steps;
        double sum = pdf(x) + pdf(hi);
        for (int i = 1; i < steps; ++i) sum += pdf(x + i * h) * (i % 2 ? 4.0 : 2.0);
        return sum * h / 3.0;
    };
    for (int df : {1, 3, 10}) {
        for (double x : {0.5, 4.2, 9.0, 18.31}) {
            const double got = stats::chi_squared_sf(x, df);
            const double want = chi2_sf_quadrature(x, df);
            CHECK(got == Catch::Approx(want).epsilon(1e-7));
        }
    }
    CHECK(stats::chi_squared_sf(18.307, 10) == Catch::Approx(0.05).epsilon(1e-3));
}

TEST_CASE("normal tail constants") {
    CHECK(stats::normal_cdf(0.0) == Catch::Approx(0.5));
    CHECK(stats::normal_cdf(stats::kZ95) == Catch::Approx(0.975).epsilon(1e-10));
    CHECK(stats::normal_cdf(stats::kZ90) == Catch::Approx(0.95).epsilon(1e-10));
    CHECK(stats::normal_cdf(stats::kZ99) == Catch::Approx(0.995).epsilon(1e-10));
    CHECK(stats::normal_two_sided_p(1.9599639845400545) == Catch::Approx(0.05).epsilon(1e-9));
}

TEST_CASE("sample quantiles interpolate") {
    std::vector<double> v{4, 1, 3, 2};
    CHECK(stats::quantile(v, 0.0) == 1.0);
    CHECK(stats::quantile(v, 1.0) == 4.0);
    CHECK(stats::quantile(v, 0.5) == Catch::Approx(2.5));
}

TEST_CASE("rng determinism and substream independence") {
    rng::Engine a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    CHECK(a.next_u64() != c.next_u64());

    // substreams with different indices differ, same index matches
    auto s1 = rng::Engine::substream(7, 0);
    auto s2 = rng::Engine::substream(7, 0);
    auto s3 = rng::Engine::substream(7, 1);
    CHECK(s1.next_u64() == s2.next_u64());
    CHECK(s1.next_u64() != s3.next_u64());
}

TEST_CASE("normal deviates have sane moments") {
    rng::Engine e(123);
    double sum = 0, sum2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = e.next_normal();
        sum += z;
        sum2 += z * z;
    }
    CHECK(sum / n == Catch::Approx(0.0).margin(0.01));
    CHECK(sum2 / n == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("csv helpers") {
    CHECK(csv::detect_delimiter("a,b") == ',');
    CHECK(csv::detect_delimiter("a\tb") == '\t');
    CHECK(csv::parse_double("1.5").value() == 1.5);
    CHECK_FALSE(csv::parse_double("").has_value());
    CHECK_FALSE(csv::parse_double("NA").has_value());
    CHECK_FALSE(csv::parse_double("12x").has_value());
    const double v = 0.1 + 0.2;
    CHECK(csv::parse_double(csv::format_exact(v)).value() == v);

    std::istringstream in("x,y\n1,2\n\n3,4\n");
    csv::Reader reader(in, "test");
    CHECK(reader.column("y") == 1);
    CHECK_THROWS_AS(reader.column("z"), ParseError);
    auto row = reader.next_row();
    REQUIRE(row.has_value());
    CHECK((*row)[0] == "1");
    row = reader.next_row();
    REQUIRE(row.has_value());
    CHECK((*row)[1] == "4");
    CHECK_FALSE(reader.next_row().has_value());
}
