// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace flywheel {

inline bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

inline std::string trim(std::string_view s) {
    size_t b = 0;
    size_t e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

/// Collapse every run of whitespace to a single space.
inline std::string collapse_ws(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_run = false;
    for (char c : s) {
        if (is_space(c)) {
            in_run = true;
            continue;
        }
        if (in_run && !out.empty()) out += ' ';
        in_run = false;
        out += c;
    }
    return out;
}

inline bool contains(std::string_view haystack, std::string_view needle) {
    return haystack.find(needle) != std::string_view::npos;
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
    return s.substr(0, prefix.size()) == prefix;
}

/// Canonicalize a plain decimal numeral: strip a leading '+', leading
/// integer zeros, and trailing fractional zeros, so "7.0", "007" and
/// "+7" all become "7". Non-numerals are returned unchanged.
inline std::string canonicalize_numeric(const std::string& s) {
    size_t i = 0;
    bool negative = false;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
        negative = s[i] == '-';
        ++i;
    }
    size_t int_begin = i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    size_t int_end = i;
    size_t frac_begin = 0, frac_end = 0;
    if (i < s.size() && s[i] == '.') {
        ++i;
        frac_begin = i;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
        frac_end = i;
        if (frac_end == frac_begin) return s;  // "7." is not a plain numeral
    }
    if (i != s.size() || int_end == int_begin) return s;

    std::string digits = s.substr(int_begin, int_end - int_begin);
    size_t nz = digits.find_first_not_of('0');
    digits = nz == std::string::npos ? "0" : digits.substr(nz);

    std::string frac = s.substr(frac_begin, frac_end - frac_begin);
    while (!frac.empty() && frac.back() == '0') frac.pop_back();

    std::string out = digits;
    if (!frac.empty()) {
        out += '.';
        out += frac;
    }
    if (negative && !(digits == "0" && frac.empty())) out.insert(out.begin(), '-');
    return out;
}

/// Fixed 64-bit FNV-1a, used wherever a hash must be identical across
/// platforms and runs (derived seeds, stable ids).
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string to_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

inline std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> lines;
    size_t start = 0;
    while (start <= s.size()) {
        size_t nl = s.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.emplace_back(s.substr(start));
            break;
        }
        lines.emplace_back(s.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

/// Replace every "{key}" placeholder with its value. Unknown placeholders
/// are left in place.
inline std::string render_template(std::string_view tpl,
                                   const std::vector<std::pair<std::string, std::string>>& vars) {
    std::string out(tpl);
    for (const auto& [key, value] : vars) {
        const std::string needle = "{" + key + "}";
        size_t pos = 0;
        while ((pos = out.find(needle, pos)) != std::string::npos) {
            out.replace(pos, needle.size(), value);
            pos += value.size();
        }
    }
    return out;
}

}  // namespace flywheel
