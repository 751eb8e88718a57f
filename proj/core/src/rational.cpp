#include "pipesched/rational.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace pipesched {
namespace {

__int128 gcd128(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
        __int128 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

bool fits(__int128 v) {
    return v >= std::numeric_limits<std::int64_t>::min() &&
           v <= std::numeric_limits<std::int64_t>::max();
}

}  // namespace

Rational::Rational(std::int64_t n) : num_(n), den_(1) {}

Rational::Rational(std::int64_t n, std::int64_t d) {
    *this = make(n, d);
}

Rational Rational::make(__int128 n, __int128 d) {
    if (d == 0) throw std::domain_error("rational with zero denominator");
    if (d < 0) {
        n = -n;
        d = -d;
    }
    __int128 g = gcd128(n, d);
    if (g > 1) {
        n /= g;
        d /= g;
    }
    if (!fits(n) || !fits(d)) throw std::overflow_error("rational overflow");
    Rational r;
    r.num_ = static_cast<std::int64_t>(n);
    r.den_ = static_cast<std::int64_t>(d);
    return r;
}

std::string Rational::str() const {
    if (den_ == 1) return std::to_string(num_);
    return std::to_string(num_) + "/" + std::to_string(den_);
}

Rational Rational::from_double(double x, std::int64_t den) {
    if (!std::isfinite(x)) throw std::domain_error("non-finite value");
    long double scaled = static_cast<long double>(x) * static_cast<long double>(den);
    if (std::fabs(scaled) > 9.0e18L) throw std::overflow_error("value too large for rational");
    return make(static_cast<__int128>(std::llroundl(scaled)), den);
}

Rational Rational::parse(const std::string& text) {
    auto slash = text.find('/');
    if (slash != std::string::npos) {
        return Rational(std::stoll(text.substr(0, slash)), std::stoll(text.substr(slash + 1)));
    }
    auto dot = text.find('.');
    if (dot == std::string::npos || text.find_first_of("eE") != std::string::npos) {
        if (dot == std::string::npos && text.find_first_of("eE") == std::string::npos) {
            return Rational(std::stoll(text));
        }
        return from_double(std::stod(text));
    }
    std::string digits = text.substr(0, dot) + text.substr(dot + 1);
    std::int64_t den = 1;
    for (std::size_t i = dot + 1; i < text.size(); ++i) {
        if (den > std::numeric_limits<std::int64_t>::max() / 10) throw std::overflow_error("too many decimals");
        den *= 10;
    }
    return Rational(std::stoll(digits), den);
}

Rational Rational::round_to(std::int64_t den) const {
    if (den_ <= den && den % den_ == 0) return *this;
    __int128 scaled = static_cast<__int128>(num_) * den;
    __int128 q = scaled / den_;
    __int128 r = scaled % den_;
    if (2 * (r < 0 ? -r : r) >= den_) q += (scaled < 0 ? -1 : 1);
    return make(q, den);
}

Rational& Rational::operator+=(const Rational& o) {
    *this = make(static_cast<__int128>(num_) * o.den_ + static_cast<__int128>(o.num_) * den_,
                 static_cast<__int128>(den_) * o.den_);
    return *this;
}

Rational& Rational::operator-=(const Rational& o) {
    *this = make(static_cast<__int128>(num_) * o.den_ - static_cast<__int128>(o.num_) * den_,
                 static_cast<__int128>(den_) * o.den_);
    return *this;
}

Rational& Rational::operator*=(const Rational& o) {
    *this = make(static_cast<__int128>(num_) * o.num_, static_cast<__int128>(den_) * o.den_);
    return *this;
}

Rational& Rational::operator/=(const Rational& o) {
    *this = make(static_cast<__int128>(num_) * o.den_, static_cast<__int128>(den_) * o.num_);
    return *this;
}

Rational Rational::operator-() const {
    Rational r;
    r.num_ = -num_;
    r.den_ = den_;
    return r;
}

std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
    __int128 l = static_cast<__int128>(a.num_) * b.den_;
    __int128 r = static_cast<__int128>(b.num_) * a.den_;
    if (l < r) return std::strong_ordering::less;
    if (l > r) return std::strong_ordering::greater;
    return std::strong_ordering::equal;
}

Rational min(const Rational& a, const Rational& b) { return b < a ? b : a; }
Rational max(const Rational& a, const Rational& b) { return a < b ? b : a; }

}  // namespace pipesched
