#pragma once

// Exact rational scalar used by the certificate checker. Arbitrary precision,
// closed under +, -, *, / and totally ordered, so every comparison made by the
// checker is exact. Backed by boost::multiprecision (header-only backend).

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <string>

#include "sattn/errors.hpp"

namespace sattn {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

/// Parses "p", "-p" or "p/q" with q > 0. Used for command line values like "1/2".
inline Rational parse_rational(const std::string& text) {
    auto slash = text.find('/');
    try {
        if (slash == std::string::npos) return Rational(BigInt(text));
        BigInt num(text.substr(0, slash));
        BigInt den(text.substr(slash + 1));
        if (den <= 0) throw config_error("rational denominator must be positive: " + text);
        return Rational(num, den);
    } catch (const std::runtime_error&) {
        throw config_error("cannot parse rational value: " + text);
    }
}

inline std::string to_string(const Rational& q) { return q.str(); }

inline double to_double(const Rational& q) { return q.convert_to<double>(); }

/// x^k for integer k >= 0 by repeated squaring.
inline Rational rational_pow(const Rational& x, unsigned k) {
    Rational acc = 1, base = x;
    while (k != 0) {
        if (k & 1u) acc *= base;
        base *= base;
        k >>= 1;
    }
    return acc;
}

/// Bits needed to write |numerator| and |denominator|; the budget guard works on this.
inline std::size_t bit_length(const Rational& q) {
    using boost::multiprecision::msb;
    const BigInt num = boost::multiprecision::abs(numerator(q));
    const BigInt den = denominator(q);
    std::size_t bits = 1;
    if (num != 0) bits += static_cast<std::size_t>(msb(num));
    if (den > 1) bits += static_cast<std::size_t>(msb(den));
    return bits;
}

/// Largest multiple of delta that is <= x. Exact, no floating point involved.
inline Rational floor_to_multiple(const Rational& x, const Rational& delta) {
    if (delta <= 0) throw config_error("floor_to_multiple: step must be positive");
    const Rational ratio = x / delta;
    BigInt k = numerator(ratio) / denominator(ratio);  // trunc toward zero
    if (ratio < 0 && k * denominator(ratio) != numerator(ratio)) --k;
    return Rational(k) * delta;
}

}  // namespace sattn
