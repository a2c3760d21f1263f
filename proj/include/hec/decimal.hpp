/**
 * @file decimal.hpp
 * @brief Exact base-10 numbers for measurement values.
 *
 * Values are held as a signed 64-bit coefficient and a decimal scale, and are
 * always normalized (no trailing fractional zeros), so equal numbers have
 * equal representations and a single textual form.
 */

#ifndef HEC_DECIMAL_HPP
#define HEC_DECIMAL_HPP

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace hec {

class Decimal {
public:
    static constexpr int max_scale = 18;

    constexpr Decimal() = default;
    Decimal(std::int64_t coefficient, int scale);

    static Decimal from_int(std::int64_t v) { return Decimal(v, 0); }

    /// Parses `[-+]digits[.digits]`; nullopt on anything else.
    static std::optional<Decimal> parse(std::string_view text);

    /// Like parse() but throws Error(InvalidValue).
    static Decimal parse_or_throw(std::string_view text);

    std::int64_t coefficient() const noexcept { return coefficient_; }
    int scale() const noexcept { return scale_; }

    std::string to_string() const;
    double to_double() const noexcept;

    friend bool operator==(const Decimal&, const Decimal&) = default;
    friend std::strong_ordering operator<=>(const Decimal& a, const Decimal& b) noexcept;

private:
    void normalize() noexcept;

    std::int64_t coefficient_ = 0;
    int scale_ = 0;
};

} // namespace hec

#endif // HEC_DECIMAL_HPP
