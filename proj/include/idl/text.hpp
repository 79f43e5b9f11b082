#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace idl::text {

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = kFnvOffset;
    for (unsigned char c : s) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

// Word bytes: ASCII alphanumerics plus anything >= 0x80, so multi-byte UTF-8
// sequences stay inside a single token. Everything else is a boundary.
inline bool is_word_byte(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline char lower_ascii(char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = lower_ascii(c);
    return out;
}

inline std::string_view trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && (static_cast<unsigned char>(s[b]) <= ' ')) ++b;
    while (e > b && (static_cast<unsigned char>(s[e - 1]) <= ' ')) --e;
    return s.substr(b, e - b);
}

struct TokenSpan {
    std::string token;       // lowercased
    std::size_t begin = 0;   // byte offsets into the original string
    std::size_t end = 0;
};

inline std::vector<TokenSpan> tokenize_spans(std::string_view s) {
    std::vector<TokenSpan> out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (!is_word_byte(static_cast<unsigned char>(s[i]))) {
            ++i;
            continue;
        }
        std::size_t b = i;
        while (i < s.size() && is_word_byte(static_cast<unsigned char>(s[i]))) ++i;
        TokenSpan t;
        t.begin = b;
        t.end = i;
        t.token.reserve(i - b);
        for (std::size_t p = b; p < i; ++p) t.token.push_back(lower_ascii(s[p]));
        out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> out;
    for (auto& t : tokenize_spans(s)) out.push_back(std::move(t.token));
    return out;
}

// First occurrence of `needle` as a contiguous token run inside `hay`;
// returns [first, last] span indices.
inline std::optional<std::pair<std::size_t, std::size_t>> find_token_run(
    const std::vector<TokenSpan>& hay, const std::vector<std::string>& needle) {
    if (needle.empty() || hay.size() < needle.size()) return std::nullopt;
    for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
        bool ok = true;
        for (std::size_t j = 0; j < needle.size(); ++j) {
            if (hay[i + j].token != needle[j]) {
                ok = false;
                break;
            }
        }
        if (ok) return std::make_pair(i, i + needle.size() - 1);
    }
    return std::nullopt;
}

inline bool iequal(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (lower_ascii(a[i]) != lower_ascii(b[i])) return false;
    }
    return true;
}

}  // namespace idl::text
