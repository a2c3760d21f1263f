/**
 * @file date.hpp
 * @brief Day-resolution calendar dates.
 */

#ifndef HEC_DATE_HPP
#define HEC_DATE_HPP

#include <chrono>
#include <compare>
#include <optional>
#include <string>
#include <string_view>

namespace hec {

class Date {
public:
    constexpr Date() = default;
    explicit constexpr Date(std::chrono::sys_days days) : days_(days) {}
    Date(int year, unsigned month, unsigned day);

    /// ISO-8601 calendar date, `YYYY-MM-DD`.
    static std::optional<Date> parse(std::string_view text);
    static Date parse_or_throw(std::string_view text);
    /// DICOM DA form, `YYYYMMDD`.
    static std::optional<Date> parse_compact(std::string_view text);

    std::chrono::sys_days days() const noexcept { return days_; }
    std::chrono::year_month_day ymd() const noexcept { return std::chrono::year_month_day{days_}; }

    Date plus_days(long long n) const noexcept { return Date{days_ + std::chrono::days{n}}; }

    std::string to_string() const;

    friend constexpr auto operator<=>(const Date&, const Date&) = default;

private:
    std::chrono::sys_days days_{};
};

/// Completed years between `birth` and `on` (negative when `on` precedes `birth`).
int completed_years(const Date& birth, const Date& on) noexcept;

} // namespace hec

#endif // HEC_DATE_HPP
