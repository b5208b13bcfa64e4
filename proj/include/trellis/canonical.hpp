#pragma once

#include <cctype>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>

// Canonical answer form, the equality used by self-consistency voting and
// rejection sampling:
//   - whitespace trimmed;
//   - a lone multiple-choice letter A-E upper-cased;
//   - numeric literals (integers, decimals, simple fractions) reduced to a
//     canonical rational "p/q" (or "p" when q = 1), so "0.5" == " 1/2 ";
//   - anything else ASCII-lowercased.

namespace trellis {

namespace detail {

struct Rational {
    long long num = 0;
    long long den = 1;
};

inline void reduce(Rational& r) {
    if (r.den < 0) {
        r.den = -r.den;
        r.num = -r.num;
    }
    long long g = std::gcd(r.num < 0 ? -r.num : r.num, r.den);
    if (g > 1) {
        r.num /= g;
        r.den /= g;
    }
}

// Parses [sign] digits [. digits] | [sign] digits / digits. Anything else
// (or overflow) is not numeric.
inline std::optional<Rational> parse_numeric(std::string_view s) {
    std::size_t i = 0;
    bool negative = false;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
        negative = s[i] == '-';
        ++i;
    }
    constexpr long long kCap = 1'000'000'000'000'000ll;
    long long intpart = 0;
    std::size_t intdigits = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
        if (intpart > kCap) return std::nullopt;
        intpart = intpart * 10 + (s[i] - '0');
        ++i;
        ++intdigits;
    }
    if (i < s.size() && s[i] == '/') {
        if (intdigits == 0) return std::nullopt;
        ++i;
        long long den = 0;
        std::size_t dendigits = 0;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
            if (den > kCap) return std::nullopt;
            den = den * 10 + (s[i] - '0');
            ++i;
            ++dendigits;
        }
        if (dendigits == 0 || den == 0 || i != s.size()) return std::nullopt;
        Rational r{negative ? -intpart : intpart, den};
        reduce(r);
        return r;
    }
    long long num = intpart;
    long long den = 1;
    std::size_t fracdigits = 0;
    if (i < s.size() && s[i] == '.') {
        ++i;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
            if (num > kCap) return std::nullopt;
            num = num * 10 + (s[i] - '0');
            den *= 10;
            ++i;
            ++fracdigits;
        }
    }
    if (i != s.size() || intdigits + fracdigits == 0) return std::nullopt;
    Rational r{negative ? -num : num, den};
    reduce(r);
    return r;
}

} // namespace detail

inline std::string canonical_answer(std::string_view raw) {
    std::size_t begin = 0;
    std::size_t end = raw.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(raw[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(raw[end - 1]))) --end;
    std::string_view s = raw.substr(begin, end - begin);

    if (s.size() == 1) {
        const char c = s[0];
        if ((c >= 'a' && c <= 'e') || (c >= 'A' && c <= 'E'))
            return std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    if (auto r = detail::parse_numeric(s)) {
        if (r->den == 1) return std::to_string(r->num);
        return std::to_string(r->num) + "/" + std::to_string(r->den);
    }
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline bool answers_equal(std::string_view a, std::string_view b) {
    return canonical_answer(a) == canonical_answer(b);
}

} // namespace trellis
