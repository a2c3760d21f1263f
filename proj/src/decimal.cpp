#include "hec/decimal.hpp"

#include "hec/error.hpp"

#include <cstdlib>

namespace hec {

namespace {

__int128 pow10_128(int n) {
    __int128 r = 1;
    for (int i = 0; i < n; ++i) {
        r *= 10;
    }
    return r;
}

} // namespace

Decimal::Decimal(std::int64_t coefficient, int scale)
    : coefficient_(coefficient), scale_(scale) {
    if (scale < 0 || scale > max_scale) {
        throw Error(Errc::InvalidValue, "decimal scale out of range");
    }
    normalize();
}

void Decimal::normalize() noexcept {
    if (coefficient_ == 0) {
        scale_ = 0;
        return;
    }
    while (scale_ > 0 && coefficient_ % 10 == 0) {
        coefficient_ /= 10;
        --scale_;
    }
}

std::optional<Decimal> Decimal::parse(std::string_view text) {
    if (text.empty()) {
        return std::nullopt;
    }
    bool negative = false;
    std::size_t i = 0;
    if (text[0] == '-' || text[0] == '+') {
        negative = text[0] == '-';
        ++i;
    }
    __int128 coefficient = 0;
    int scale = 0;
    bool seen_digit = false;
    bool seen_point = false;
    for (; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '.') {
            if (seen_point) {
                return std::nullopt;
            }
            seen_point = true;
            continue;
        }
        if (c < '0' || c > '9') {
            return std::nullopt;
        }
        seen_digit = true;
        if (seen_point) {
            if (++scale > max_scale) {
                return std::nullopt;
            }
        }
        coefficient = coefficient * 10 + (c - '0');
        if (coefficient > INT64_MAX) {
            return std::nullopt;
        }
    }
    if (!seen_digit || (seen_point && text.back() == '.')) {
        return std::nullopt;
    }
    auto c64 = static_cast<std::int64_t>(coefficient);
    return Decimal(negative ? -c64 : c64, scale);
}

Decimal Decimal::parse_or_throw(std::string_view text) {
    auto d = parse(text);
    if (!d) {
        throw Error(Errc::InvalidValue, "not a decimal number: '" + std::string(text) + "'");
    }
    return *d;
}

std::string Decimal::to_string() const {
    const bool negative = coefficient_ < 0;
    const auto magnitude = negative ? 0ULL - static_cast<unsigned long long>(coefficient_)
                                    : static_cast<unsigned long long>(coefficient_);
    std::string digits = std::to_string(magnitude);
    if (scale_ > 0) {
        const auto scale = static_cast<std::size_t>(scale_);
        if (digits.size() <= scale) {
            digits.insert(0, scale + 1 - digits.size(), '0');
        }
        digits.insert(digits.size() - scale, ".");
    }
    return negative ? "-" + digits : digits;
}

double Decimal::to_double() const noexcept {
    return std::strtod(to_string().c_str(), nullptr);
}

std::strong_ordering operator<=>(const Decimal& a, const Decimal& b) noexcept {
    const int scale = a.scale_ > b.scale_ ? a.scale_ : b.scale_;
    const __int128 lhs = static_cast<__int128>(a.coefficient_) * pow10_128(scale - a.scale_);
    const __int128 rhs = static_cast<__int128>(b.coefficient_) * pow10_128(scale - b.scale_);
    return lhs <=> rhs;
}

} // namespace hec
