#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "idl/errors.hpp"
#include "idl/hash.hpp"
#include "idl/text.hpp"

namespace idl {

// Unit-length embedding, or all-zeros as the empty-text sentinel.
struct Vector {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }

    bool is_zero() const {
        for (double v : values) {
            if (v != 0.0) return false;
        }
        return true;
    }

    bool operator==(const Vector&) const = default;
};

inline void l2_normalize(std::vector<double>& v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    if (ss == 0.0) return;
    double inv = 1.0 / std::sqrt(ss);
    for (double& x : v) x *= inv;
}

inline double cosine(const Vector& a, const Vector& b) {
    if (a.dim() != b.dim()) throw DimMismatch(a.dim(), b.dim());
    if (a.is_zero() || b.is_zero()) return 0.0;
    if (a.values == b.values) return 1.0;
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        num += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    return std::clamp(num / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

inline double euclidean2(const Vector& a, const Vector& b) {
    if (a.dim() != b.dim()) throw DimMismatch(a.dim(), b.dim());
    double ss = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        double d = a.values[i] - b.values[i];
        ss += d * d;
    }
    return ss;
}

enum class EmbedBackend { Test, Remote };

struct EmbedderConfig {
    EmbedBackend backend = EmbedBackend::Test;
    std::size_t dim = 256;
    std::string endpoint;                   // remote only, e.g. "http://127.0.0.1:8900"
    std::string model_id = "fnv1a-bow-256";
    std::string cache_dir;                  // empty disables the disk cache
    double timeout_s = 30.0;
};

// Sentence encoder with a deterministic hashing backend for offline use and a
// remote HTTP backend. Responses are cached on disk by content key; writes are
// atomic (temp + rename) so concurrent callers are safe.
class Embedder {
public:
    explicit Embedder(EmbedderConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.dim < 1) throw ValidationError("embedder dim must be >= 1");
    }

    const EmbedderConfig& config() const { return cfg_; }

    Vector embed(const std::string& text) const { return embed_batch({text}).front(); }

    std::vector<Vector> embed_batch(const std::vector<std::string>& texts) const {
        std::vector<Vector> out(texts.size());
        std::vector<std::size_t> misses;
        for (std::size_t i = 0; i < texts.size(); ++i) {
            if (auto cached = cache_read(texts[i])) {
                out[i] = std::move(*cached);
            } else {
                misses.push_back(i);
            }
        }
        if (misses.empty()) return out;

        if (cfg_.backend == EmbedBackend::Test) {
            for (std::size_t i : misses) {
                out[i] = hashed_bow(texts[i]);
                cache_write(texts[i], out[i]);
            }
        } else {
            std::vector<std::string> missing;
            for (std::size_t i : misses) missing.push_back(texts[i]);
            auto fetched = remote_fetch(missing);
            for (std::size_t k = 0; k < misses.size(); ++k) {
                out[misses[k]] = std::move(fetched[k]);
                cache_write(texts[misses[k]], out[misses[k]]);
            }
        }
        return out;
    }

private:
    // Deterministic bag-of-words: FNV-1a bucket per token, weight 1 + ln(count),
    // L2-normalized. No tokens -> the zero-vector sentinel.
    Vector hashed_bow(const std::string& textstr) const {
        std::vector<double> vals(cfg_.dim, 0.0);
        auto toks = text::tokenize(textstr);
        if (toks.empty()) return Vector{std::move(vals)};
        std::vector<std::uint32_t> counts(cfg_.dim, 0);
        for (const auto& t : toks) {
            counts[static_cast<std::size_t>(text::fnv1a64(t) % cfg_.dim)]++;
        }
        for (std::size_t i = 0; i < cfg_.dim; ++i) {
            if (counts[i] > 0) vals[i] = 1.0 + std::log(static_cast<double>(counts[i]));
        }
        l2_normalize(vals);
        return Vector{std::move(vals)};
    }

    std::vector<Vector> remote_fetch(const std::vector<std::string>& texts) const {
        nlohmann::json body;
        body["model"] = cfg_.model_id;
        body["texts"] = texts;
        httplib::Client cli(cfg_.endpoint);
        cli.set_connection_timeout(static_cast<int>(cfg_.timeout_s), 0);
        cli.set_read_timeout(static_cast<int>(cfg_.timeout_s), 0);
        cli.set_write_timeout(static_cast<int>(cfg_.timeout_s), 0);
        auto res = cli.Post("/embed", body.dump(), "application/json");
        if (!res) throw RemoteUnavailable("embed endpoint unreachable: " + cfg_.endpoint);
        if (res->status != 200) {
            throw BackendError("embed endpoint returned status " + std::to_string(res->status));
        }
        nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
        if (reply.is_discarded() || !reply.contains("vectors") || !reply["vectors"].is_array() ||
            reply["vectors"].size() != texts.size()) {
            throw BackendError("embed endpoint reply is missing \"vectors\"");
        }
        std::vector<Vector> out;
        out.reserve(texts.size());
        for (const auto& row : reply["vectors"]) {
            std::vector<double> vals = row.get<std::vector<double>>();
            if (vals.size() != cfg_.dim) throw DimMismatch(vals.size(), cfg_.dim);
            l2_normalize(vals);
            out.push_back(Vector{std::move(vals)});
        }
        return out;
    }

    std::filesystem::path cache_path(const std::string& textstr) const {
        std::string key = hash::sha256_hex(cfg_.model_id + '\n' + textstr);
        return std::filesystem::path(cfg_.cache_dir) / (key + ".json");
    }

    std::optional<Vector> cache_read(const std::string& textstr) const {
        if (cfg_.cache_dir.empty()) return std::nullopt;
        std::ifstream in(cache_path(textstr), std::ios::binary);
        if (!in) return std::nullopt;
        nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.contains("values") || !j["values"].is_array()) return std::nullopt;
        std::vector<double> vals = j["values"].get<std::vector<double>>();
        if (vals.size() != cfg_.dim) return std::nullopt;
        return Vector{std::move(vals)};
    }

    void cache_write(const std::string& textstr, const Vector& v) const {
        if (cfg_.cache_dir.empty()) return;
        namespace fs = std::filesystem;
        fs::path final_path = cache_path(textstr);
        std::error_code ec;
        if (fs::exists(final_path, ec)) return;  // write-once
        fs::create_directories(final_path.parent_path(), ec);
        nlohmann::json j;
        j["dim"] = v.dim();
        j["values"] = v.values;
        auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
        fs::path tmp = final_path;
        tmp += ".tmp." + std::to_string(tid);
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) return;  // cache is best-effort
            out << j.dump();
        }
        fs::rename(tmp, final_path, ec);
        if (ec) fs::remove(tmp, ec);
    }

    EmbedderConfig cfg_;
};

}  // namespace idl
