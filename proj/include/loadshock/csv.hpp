#pragma once

#include <charconv>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "loadshock/core.hpp"

namespace loadshock::csv {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line, char delim) {
    std::vector<std::string_view> out;
    size_t start = 0;
    while (true) {
        size_t pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

inline char detect_delimiter(std::string_view header) {
    return header.find('\t') != std::string_view::npos ? '\t' : ',';
}

inline std::optional<double> parse_double(std::string_view field) {
    field = trim(field);
    if (field.empty() || field == "NA" || field == "NaN" || field == "nan")
        return std::nullopt;
    double value = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size())
        return std::nullopt;
    return value;
}

/// Minimal line-oriented reader for headered delimited files.
class Reader {
public:
    explicit Reader(std::istream& in, std::string_view what) : in_(in), what_(what) {
        if (!std::getline(in_, line_))
            throw ValidationError(std::string(what_) + ": empty file");
        ++line_no_;
        delim_ = detect_delimiter(line_);
        for (auto col : split(line_, delim_)) header_.emplace_back(col);
    }

    int column(std::string_view name) const {
        for (size_t i = 0; i < header_.size(); ++i)
            if (header_[i] == name) return int(i);
        throw ParseError(std::string(what_) + ": missing required column '" +
                         std::string(name) + "'");
    }

    /// Next non-blank row, or nullopt at end of input.
    std::optional<std::vector<std::string_view>> next_row() {
        while (std::getline(in_, line_)) {
            ++line_no_;
            if (trim(line_).empty()) continue;
            auto fields = split(line_, delim_);
            if (fields.size() != header_.size())
                throw ParseError(std::string(what_) + " line " + std::to_string(line_no_) +
                                 ": expected " + std::to_string(header_.size()) +
                                 " fields, got " + std::to_string(fields.size()));
            return fields;
        }
        return std::nullopt;
    }

    int line_number() const { return line_no_; }

    [[noreturn]] void fail(const std::string& message) const {
        throw ParseError(std::string(what_) + " line " + std::to_string(line_no_) +
                         ": " + message);
    }

private:
    std::istream& in_;
    std::string what_;
    std::string line_;
    std::vector<std::string> header_;
    char delim_ = ',';
    int line_no_ = 0;
};

/// Shortest representation that round-trips the exact double.
inline std::string format_exact(double v) {
    char buf[40];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

inline std::string format_fixed(double v, int decimals = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

}  // namespace loadshock::csv
