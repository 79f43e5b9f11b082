#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "idl/embed.hpp"
#include "idl/errors.hpp"
#include "idl/text.hpp"

namespace idl::metrics {

namespace detail {

inline std::unordered_map<std::string, std::size_t> ngram_counts(const std::vector<std::string>& toks,
                                                                 std::size_t n) {
    std::unordered_map<std::string, std::size_t> counts;
    if (toks.size() < n) return counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        std::string key = toks[i];
        for (std::size_t j = 1; j < n; ++j) {
            key.push_back('\x1f');
            key += toks[i + j];
        }
        counts[key]++;
    }
    return counts;
}

}  // namespace detail

// Sentence-level cumulative BLEU-n: modified n-gram precisions with a hard
// zero (no smoothing) and brevity penalty min(1, exp(1 - |ref|/|pred|)).
inline double bleu_n(std::string_view pred, std::string_view ref, int n) {
    if (n < 1 || n > 4) throw ValidationError("bleu_n supports 1 <= n <= 4");
    auto p = text::tokenize(pred);
    auto r = text::tokenize(ref);
    if (p.empty()) return 0.0;
    double product = 1.0;
    for (int i = 1; i <= n; ++i) {
        auto pc = detail::ngram_counts(p, static_cast<std::size_t>(i));
        auto rc = detail::ngram_counts(r, static_cast<std::size_t>(i));
        std::size_t total = 0, clipped = 0;
        for (const auto& [gram, count] : pc) {
            total += count;
            auto it = rc.find(gram);
            if (it != rc.end()) clipped += std::min(count, it->second);
        }
        if (total == 0 || clipped == 0) return 0.0;
        product *= static_cast<double>(clipped) / static_cast<double>(total);
    }
    double geo = std::pow(product, 1.0 / static_cast<double>(n));
    double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(r.size()) / static_cast<double>(p.size())));
    return bp * geo;
}

// Token-level longest common subsequence F1.
inline double rouge_l(std::string_view pred, std::string_view ref) {
    auto p = text::tokenize(pred);
    auto r = text::tokenize(ref);
    if (p.empty() || r.empty()) return 0.0;
    std::vector<std::vector<std::size_t>> lcs(p.size() + 1, std::vector<std::size_t>(r.size() + 1, 0));
    for (std::size_t i = 1; i <= p.size(); ++i) {
        for (std::size_t j = 1; j <= r.size(); ++j) {
            lcs[i][j] = p[i - 1] == r[j - 1] ? lcs[i - 1][j - 1] + 1
                                             : std::max(lcs[i - 1][j], lcs[i][j - 1]);
        }
    }
    double l = static_cast<double>(lcs[p.size()][r.size()]);
    double prec = l / static_cast<double>(p.size());
    double rec = l / static_cast<double>(r.size());
    if (prec + rec == 0.0) return 0.0;
    return 2.0 * prec * rec / (prec + rec);
}

// Corpus-level distinct-n: unique n-grams over total n-grams across the
// whole response set.
inline double distinct_n(const std::vector<std::string>& responses, int n) {
    if (n < 1) throw ValidationError("distinct_n needs n >= 1");
    std::unordered_set<std::string> unique;
    std::size_t total = 0;
    for (const auto& resp : responses) {
        auto toks = text::tokenize(resp);
        if (toks.size() < static_cast<std::size_t>(n)) continue;
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
            std::string key = toks[i];
            for (std::size_t j = 1; j < static_cast<std::size_t>(n); ++j) {
                key.push_back('\x1f');
                key += toks[i + j];
            }
            unique.insert(std::move(key));
            ++total;
        }
    }
    if (total == 0) return 0.0;
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

inline std::unordered_set<std::string> load_stopwords(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open stopword file: " + path.string());
    std::unordered_set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        for (auto& tok : text::tokenize(line)) out.insert(std::move(tok));
    }
    return out;
}

// Set-overlap F1 between response tokens and persona evidence tokens, with
// stopwords removed from both sides.
inline double persona_f1(std::string_view pred, std::string_view persona_text,
                         const std::unordered_set<std::string>& stopwords) {
    std::unordered_set<std::string> p, s;
    for (auto& t : text::tokenize(pred)) {
        if (!stopwords.count(t)) p.insert(std::move(t));
    }
    for (auto& t : text::tokenize(persona_text)) {
        if (!stopwords.count(t)) s.insert(std::move(t));
    }
    if (p.empty() || s.empty()) return 0.0;
    std::size_t overlap = 0;
    for (const auto& t : p) overlap += s.count(t);
    double prec = static_cast<double>(overlap) / static_cast<double>(p.size());
    double rec = static_cast<double>(overlap) / static_cast<double>(s.size());
    if (prec + rec == 0.0) return 0.0;
    return 2.0 * prec * rec / (prec + rec);
}

inline double persona_cosine(const std::string& pred, const std::string& persona_text,
                             const Embedder& embedder) {
    return cosine(embedder.embed(pred), embedder.embed(persona_text));
}

}  // namespace idl::metrics
