#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace loadshock {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EstimationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InsufficientDataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Civil calendar date, day resolution. Comparisons and day arithmetic only.
class Date {
public:
    Date() = default;

    static Date from_ymd(int year, unsigned month, unsigned day) {
        std::chrono::year_month_day ymd{std::chrono::year{year},
                                        std::chrono::month{month},
                                        std::chrono::day{day}};
        if (!ymd.ok()) throw ValidationError("invalid calendar date");
        return Date{std::chrono::sys_days{ymd}};
    }

    // Expects YYYY-MM-DD.
    static Date parse(std::string_view text) {
        if (text.size() != 10 || text[4] != '-' || text[7] != '-')
            throw ParseError("bad date format (expected YYYY-MM-DD): '" +
                             std::string(text) + "'");
        auto digits = [&](size_t pos, size_t len) {
            int v = 0;
            for (size_t i = pos; i < pos + len; ++i) {
                char c = text[i];
                if (c < '0' || c > '9')
                    throw ParseError("bad date format: '" + std::string(text) + "'");
                v = v * 10 + (c - '0');
            }
            return v;
        };
        return from_ymd(digits(0, 4), unsigned(digits(5, 2)), unsigned(digits(8, 2)));
    }

    int year() const { return int(ymd().year()); }
    unsigned month() const { return unsigned(ymd().month()); }
    unsigned day() const { return unsigned(ymd().day()); }

    /// ISO weekday encoding, 1 = Monday .. 7 = Sunday.
    unsigned iso_weekday() const {
        return std::chrono::weekday{days_}.iso_encoding();
    }

    bool is_weekend() const { return iso_weekday() >= 6; }

    std::string to_string() const {
        char buf[24];
        std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", year(), month(), day());
        return buf;
    }

    Date operator+(int days) const { return Date{days_ + std::chrono::days{days}}; }
    Date operator-(int days) const { return Date{days_ - std::chrono::days{days}}; }
    int operator-(Date other) const { return int((days_ - other.days_).count()); }
    Date& operator++() { days_ += std::chrono::days{1}; return *this; }

    auto operator<=>(const Date&) const = default;

private:
    explicit Date(std::chrono::sys_days d) : days_(d) {}
    std::chrono::year_month_day ymd() const { return std::chrono::year_month_day{days_}; }
    std::chrono::sys_days days_{};
};

struct IsoWeek {
    int year = 0;   // ISO week-based year, may differ from the civil year near Jan 1
    int week = 0;   // 1..53
    auto operator<=>(const IsoWeek&) const = default;
};

inline IsoWeek iso_week(Date d) {
    Date thursday = d + (4 - int(d.iso_weekday()));
    int y = thursday.year();
    int week = (thursday - Date::from_ymd(y, 1, 1)) / 7 + 1;
    return {y, week};
}

/// Week index used by the impact model: ISO week with week 53 folded into 52.
inline int model_week(Date d) {
    int w = iso_week(d).week;
    return w == 53 ? 52 : w;
}

inline int iso_week_year(Date d) { return iso_week(d).year; }

enum class Weekday : int { mon = 1, tue, wed, thu, fri, sat, sun };

inline Weekday weekday_of(Date d) { return Weekday(d.iso_weekday()); }

inline const char* to_string(Weekday w) {
    switch (w) {
        case Weekday::mon: return "mon";
        case Weekday::tue: return "tue";
        case Weekday::wed: return "wed";
        case Weekday::thu: return "thu";
        case Weekday::fri: return "fri";
        case Weekday::sat: return "sat";
        case Weekday::sun: return "sun";
    }
    return "?";
}

inline std::optional<Weekday> weekday_from_string(std::string_view s) {
    for (int i = 1; i <= 7; ++i)
        if (s == to_string(Weekday(i))) return Weekday(i);
    return std::nullopt;
}

enum class HolidayType : int {
    none = 0,
    generic,
    gap_to_sunday,    // working Monday between a Sunday and a Tuesday holiday
    gap_to_saturday,  // working Friday between a Thursday holiday and a Saturday
    christmas,
    new_year,
    dec31,
};

inline constexpr int kHolidayTypeCount = 6;  // excluding none

inline const char* to_string(HolidayType h) {
    switch (h) {
        case HolidayType::none: return "none";
        case HolidayType::generic: return "generic";
        case HolidayType::gap_to_sunday: return "gap_to_sunday";
        case HolidayType::gap_to_saturday: return "gap_to_saturday";
        case HolidayType::christmas: return "christmas";
        case HolidayType::new_year: return "new_year";
        case HolidayType::dec31: return "dec31";
    }
    return "?";
}

inline std::optional<HolidayType> holiday_from_string(std::string_view s) {
    for (int i = 0; i <= kHolidayTypeCount; ++i)
        if (s == to_string(HolidayType(i))) return HolidayType(i);
    return std::nullopt;
}

/// Per-country holiday calendar: explicit date lists, one type per date.
class HolidayCalendar {
public:
    void add(Date d, HolidayType t) {
        if (t == HolidayType::none) return;
        auto [it, inserted] = dates_.emplace(d, t);
        if (!inserted && it->second != t)
            throw ValidationError("holiday calendar assigns two types to " + d.to_string());
    }

    /// Fixed-date holidays (Jan 1, Dec 25, Dec 31) are calendar facts; fill
    /// them in for every year in [first, last] unless already listed.
    void add_fixed_dates(int first_year, int last_year) {
        for (int y = first_year; y <= last_year; ++y) {
            add(Date::from_ymd(y, 1, 1), HolidayType::new_year);
            add(Date::from_ymd(y, 12, 25), HolidayType::christmas);
            add(Date::from_ymd(y, 12, 31), HolidayType::dec31);
        }
    }

    HolidayType type_for(Date d) const {
        auto it = dates_.find(d);
        return it == dates_.end() ? HolidayType::none : it->second;
    }

    const std::map<Date, HolidayType>& entries() const { return dates_; }

private:
    std::map<Date, HolidayType> dates_;
};

/// One weekday's modeling inputs for one country.
struct DailyObservation {
    Date date;
    double log_load = 0;   // ln of mean daily load
    double temp_c = 0;     // mean daily air temperature
    Weekday weekday = Weekday::mon;
    HolidayType holiday = HolidayType::none;
    bool lockdown = false;

    bool operator==(const DailyObservation&) const = default;
};

struct CountryConfig {
    std::string country;
    double residential_share = 0;  // percent of load used by households
    std::optional<Date> lockdown_start, lockdown_end;
    std::optional<std::pair<int, int>> arma_order;
    std::string capital_station;
    HolidayCalendar holidays;

    bool in_lockdown(Date d) const {
        return lockdown_start && lockdown_end &&
               d >= *lockdown_start && d <= *lockdown_end;
    }

    void validate() const {
        // lockdown rescaling divides by 100 - 1.4 r; keep it positive
        if (residential_share < 0 || residential_share >= 100.0 / 1.4)
            throw ValidationError("residential_share must lie in [0, 100/1.4) for " + country);
        if (lockdown_start.has_value() != lockdown_end.has_value())
            throw ValidationError("lockdown window must have both endpoints or neither: " + country);
        if (lockdown_start && *lockdown_start >= *lockdown_end)
            throw ValidationError("lockdown_start must precede lockdown_end: " + country);
        if (arma_order && (arma_order->first < 0 || arma_order->second < 0))
            throw ValidationError("arma_order components must be nonnegative: " + country);
    }
};

struct AdjustedPoint {
    Date date;
    double value = 0;
};

}  // namespace loadshock
