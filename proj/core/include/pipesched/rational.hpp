#pragma once

#include <compare>
#include <cstdint>
#include <string>

namespace pipesched {

// Exact fraction over int64 with 128-bit intermediates. Always kept in lowest
// terms with a positive denominator. Overflow throws std::overflow_error.
class Rational {
public:
    constexpr Rational() = default;
    Rational(std::int64_t n);  // NOLINT(google-explicit-constructor)
    Rational(std::int64_t n, std::int64_t d);

    std::int64_t num() const { return num_; }
    std::int64_t den() const { return den_; }

    double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }
    std::string str() const;

    // Nearest fraction with denominator `den` (ties away from zero).
    static Rational from_double(double x, std::int64_t den = 1'000'000'000'000LL);
    // Parses "a", "a/b" or a decimal literal such as "0.125".
    static Rational parse(const std::string& text);

    Rational round_to(std::int64_t den) const;

    Rational& operator+=(const Rational& o);
    Rational& operator-=(const Rational& o);
    Rational& operator*=(const Rational& o);
    Rational& operator/=(const Rational& o);

    friend Rational operator+(Rational a, const Rational& b) { return a += b; }
    friend Rational operator-(Rational a, const Rational& b) { return a -= b; }
    friend Rational operator*(Rational a, const Rational& b) { return a *= b; }
    friend Rational operator/(Rational a, const Rational& b) { return a /= b; }
    Rational operator-() const;

    friend bool operator==(const Rational& a, const Rational& b) = default;
    friend std::strong_ordering operator<=>(const Rational& a, const Rational& b);

private:
    static Rational make(__int128 n, __int128 d);

    std::int64_t num_ = 0;
    std::int64_t den_ = 1;
};

Rational min(const Rational& a, const Rational& b);
Rational max(const Rational& a, const Rational& b);

}  // namespace pipesched
