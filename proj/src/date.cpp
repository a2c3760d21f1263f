#include "hec/date.hpp"

#include "hec/error.hpp"

#include <charconv>
#include <cstdio>

namespace hec {

namespace {

std::optional<int> parse_digits(std::string_view text) {
    int value = 0;
    for (char c : text) {
        if (c < '0' || c > '9') {
            return std::nullopt;
        }
    }
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        return std::nullopt;
    }
    return value;
}

std::optional<Date> make_date(std::string_view y, std::string_view m, std::string_view d) {
    auto year = parse_digits(y);
    auto month = parse_digits(m);
    auto day = parse_digits(d);
    if (!year || !month || !day) {
        return std::nullopt;
    }
    std::chrono::year_month_day ymd{std::chrono::year{*year},
                                    std::chrono::month{static_cast<unsigned>(*month)},
                                    std::chrono::day{static_cast<unsigned>(*day)}};
    if (!ymd.ok()) {
        return std::nullopt;
    }
    return Date{std::chrono::sys_days{ymd}};
}

} // namespace

Date::Date(int year, unsigned month, unsigned day) {
    std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                    std::chrono::day{day}};
    if (!ymd.ok()) {
        throw Error(Errc::InvalidValue, "invalid calendar date");
    }
    days_ = std::chrono::sys_days{ymd};
}

std::optional<Date> Date::parse(std::string_view text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
        return std::nullopt;
    }
    return make_date(text.substr(0, 4), text.substr(5, 2), text.substr(8, 2));
}

Date Date::parse_or_throw(std::string_view text) {
    auto d = parse(text);
    if (!d) {
        throw Error(Errc::InvalidValue, "not an ISO-8601 date: '" + std::string(text) + "'");
    }
    return *d;
}

std::optional<Date> Date::parse_compact(std::string_view text) {
    if (text.size() != 8) {
        return std::nullopt;
    }
    return make_date(text.substr(0, 4), text.substr(4, 2), text.substr(6, 2));
}

std::string Date::to_string() const {
    const auto ymd = this->ymd();
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

int completed_years(const Date& birth, const Date& on) noexcept {
    const auto b = birth.ymd();
    const auto o = on.ymd();
    int years = static_cast<int>(o.year()) - static_cast<int>(b.year());
    const auto bm = static_cast<unsigned>(b.month());
    const auto om = static_cast<unsigned>(o.month());
    if (om < bm || (om == bm && static_cast<unsigned>(o.day()) < static_cast<unsigned>(b.day()))) {
        --years;
    }
    return years;
}

} // namespace hec
