#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "idl/corpus.hpp"
#include "idl/embed.hpp"
#include "idl/errors.hpp"
#include "idl/parallel.hpp"
#include "idl/persona.hpp"
#include "idl/rng.hpp"

namespace idl {

// Embedding of a dialogue's persona evidence: the persona-intensive
// utterances joined in turn order, or the full session text when none exist.
struct PersonaRepr {
    std::string dialogue_id;
    Vector z;
    bool fallback_full_text = false;
};

inline PersonaRepr persona_repr(const Dialogue& d, const ExtractionResult& ext, const Embedder& embedder) {
    std::string joined;
    bool fallback = ext.persona_intensive_indices.empty();
    if (fallback) {
        for (std::size_t i = 0; i < d.turns.size(); ++i) {
            if (i) joined += ' ';
            joined += d.turns[i].text;
        }
    } else {
        for (std::size_t k = 0; k < ext.persona_intensive_indices.size(); ++k) {
            if (k) joined += ' ';
            joined += d.turns[ext.persona_intensive_indices[k]].text;
        }
    }
    return {d.dialogue_id, embedder.embed(joined), fallback};
}

struct KmeansResult {
    std::vector<int> labels;          // per input point, in [0, c_effective)
    std::vector<Vector> centroids;    // c_effective rows
    int c_effective = 0;
    std::vector<double> wcss_history; // one entry per assignment pass
};

namespace detail {

inline double point_dist2(const std::vector<double>& a, const std::vector<double>& b) {
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        ss += d * d;
    }
    return ss;
}

}  // namespace detail

// Lloyd iterations with k-means++ seeding. c is clamped to the number of
// distinct points; empty clusters are re-seeded to the point farthest from
// its assigned centroid. Stops after 100 iterations or when the largest
// centroid shift drops below 1e-6.
inline KmeansResult kmeans(const std::vector<Vector>& points, int c, std::uint64_t seed) {
    if (points.empty()) throw ValidationError("kmeans needs at least one point");
    if (c < 1) throw ValidationError("kmeans needs c >= 1");
    const std::size_t n = points.size();
    const std::size_t dim = points[0].dim();
    for (const auto& p : points) {
        if (p.dim() != dim) throw DimMismatch(p.dim(), dim);
    }

    std::set<std::vector<double>> distinct;
    for (const auto& p : points) distinct.insert(p.values);
    const int c_eff = std::min<int>(c, static_cast<int>(distinct.size()));

    std::mt19937_64 g(seed);
    std::vector<std::vector<double>> centroids;
    centroids.reserve(static_cast<std::size_t>(c_eff));

    // k-means++: first centroid uniform, then D^2-weighted draws.
    centroids.push_back(points[rng::next_index(g, n)].values);
    std::vector<double> d2(n);
    while (centroids.size() < static_cast<std::size_t>(c_eff)) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& cen : centroids) {
                best = std::min(best, detail::point_dist2(points[i].values, cen));
            }
            d2[i] = best;
            total += best;
        }
        double u = rng::next_unit(g) * total;
        std::size_t pick = n - 1;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += d2[i];
            if (u < acc) {
                pick = i;
                break;
            }
        }
        centroids.push_back(points[pick].values);
    }

    KmeansResult res;
    res.c_effective = c_eff;
    res.labels.assign(n, 0);

    auto assign = [&]() {
        double wcss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = detail::point_dist2(points[i].values, centroids[0]);
            for (int k = 1; k < c_eff; ++k) {
                double d = detail::point_dist2(points[i].values, centroids[static_cast<std::size_t>(k)]);
                if (d < bd) {
                    bd = d;
                    best = k;
                }
            }
            res.labels[i] = best;
            wcss += bd;
        }
        res.wcss_history.push_back(wcss);
    };

    assign();
    for (int iter = 0; iter < 100; ++iter) {
        // Means of the current assignment.
        std::vector<std::vector<double>> next(static_cast<std::size_t>(c_eff),
                                              std::vector<double>(dim, 0.0));
        std::vector<std::size_t> sizes(static_cast<std::size_t>(c_eff), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto k = static_cast<std::size_t>(res.labels[i]);
            sizes[k]++;
            for (std::size_t j = 0; j < dim; ++j) next[k][j] += points[i].values[j];
        }
        for (std::size_t k = 0; k < next.size(); ++k) {
            if (sizes[k] == 0) continue;
            for (std::size_t j = 0; j < dim; ++j) next[k][j] /= static_cast<double>(sizes[k]);
        }

        // Re-seed empty clusters to the point farthest from its centroid.
        std::vector<bool> taken(n, false);
        for (std::size_t k = 0; k < next.size(); ++k) {
            if (sizes[k] != 0) continue;
            std::size_t far = 0;
            double fd = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (taken[i]) continue;
                double d = detail::point_dist2(points[i].values,
                                               next[static_cast<std::size_t>(res.labels[i])]);
                if (d > fd) {
                    fd = d;
                    far = i;
                }
            }
            next[k] = points[far].values;
            taken[far] = true;
        }

        double shift = 0.0;
        for (std::size_t k = 0; k < next.size(); ++k) {
            shift = std::max(shift, std::sqrt(detail::point_dist2(next[k], centroids[k])));
        }
        centroids = std::move(next);
        assign();
        if (shift < 1e-6) break;
    }

    for (auto& cen : centroids) res.centroids.push_back(Vector{std::move(cen)});
    return res;
}

struct ClusterAssignment {
    std::map<std::string, int> labels;  // dialogue_id -> cluster index
    std::vector<Vector> centroids;
    int c_effective = 0;
};

inline ClusterAssignment cluster_reprs(const std::vector<PersonaRepr>& reprs, int c, std::uint64_t seed) {
    std::vector<Vector> points;
    points.reserve(reprs.size());
    for (const auto& r : reprs) points.push_back(r.z);
    KmeansResult km = kmeans(points, c, seed);
    ClusterAssignment out;
    out.centroids = std::move(km.centroids);
    out.c_effective = km.c_effective;
    for (std::size_t i = 0; i < reprs.size(); ++i) out.labels[reprs[i].dialogue_id] = km.labels[i];
    return out;
}

// A training unit: reference sessions (in their final reading order) plus the
// dialogue whose last turn will be supervised.
struct OrganizedSample {
    std::vector<std::string> reference_ids;
    std::string target_id;  // a dialogue_id, never among reference_ids
    int cluster = 0;
    double order_cost = 0.0;
};

// Nearest members of `members` to members[target_index], by Euclidean
// distance on z; ties broken by ascending dialogue_id.
inline std::vector<std::string> refs_for_target(const std::vector<PersonaRepr>& members,
                                                std::size_t target_index, int k) {
    std::vector<std::pair<double, const std::string*>> ranked;
    for (std::size_t i = 0; i < members.size(); ++i) {
        if (i == target_index) continue;
        ranked.emplace_back(euclidean2(members[target_index].z, members[i].z),
                            &members[i].dialogue_id);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return *a.second < *b.second;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(k); ++i) {
        out.push_back(*ranked[i].second);
    }
    return out;
}

inline OrganizedSample select_target_refs(const std::vector<PersonaRepr>& cluster_members, int k,
                                          std::uint64_t seed) {
    if (cluster_members.size() < 2) {
        throw ClusterTooSmall("cluster has " + std::to_string(cluster_members.size()) +
                              " member(s); need at least 2");
    }
    if (k < 1) throw ValidationError("need k >= 1 reference slots");
    std::mt19937_64 g(seed);
    std::size_t t = rng::next_index(g, cluster_members.size());
    OrganizedSample s;
    s.target_id = cluster_members[t].dialogue_id;
    s.reference_ids = refs_for_target(cluster_members, t, k);
    return s;
}

// --- Conversational edit distance ---------------------------------------
//
// Sentence-level edit distance between two sessions: unit insert/delete, and
// substitution costs lambda * (1 - cos) gated to same-speaker pairs only.
// Base case lev(i, j) = max(i, j) when min(i, j) = 0.

template <typename SameRole, typename SubWeight>
double conv_ed_dp(std::size_t m, std::size_t n, SameRole&& same_role, SubWeight&& wsub, double lambda) {
    std::vector<std::vector<double>> lev(m + 1, std::vector<double>(n + 1, 0.0));
    for (std::size_t i = 0; i <= m; ++i) lev[i][0] = static_cast<double>(i);
    for (std::size_t j = 0; j <= n; ++j) lev[0][j] = static_cast<double>(j);
    for (std::size_t i = 1; i <= m; ++i) {
        for (std::size_t j = 1; j <= n; ++j) {
            double best = std::min(lev[i][j - 1] + 1.0, lev[i - 1][j] + 1.0);
            if (same_role(i - 1, j - 1)) {
                best = std::min(best, lev[i - 1][j - 1] + lambda * wsub(i - 1, j - 1));
            }
            lev[i][j] = best;
        }
    }
    return lev[m][n];
}

inline std::vector<Vector> embed_turns(const std::vector<Utterance>& turns, const Embedder& embedder) {
    std::vector<std::string> texts;
    texts.reserve(turns.size());
    for (const auto& t : turns) texts.push_back(t.text);
    return embedder.embed_batch(texts);
}

inline double conv_ed(const std::vector<Utterance>& a, const std::vector<Utterance>& b,
                      double lambda_sub, const Embedder& embedder) {
    if (lambda_sub <= 0.0) throw ValidationError("lambda_sub must be > 0");
    auto va = embed_turns(a, embedder);
    auto vb = embed_turns(b, embedder);
    return conv_ed_dp(
        a.size(), b.size(), [&](std::size_t i, std::size_t j) { return a[i].role == b[j].role; },
        [&](std::size_t i, std::size_t j) { return 1.0 - cosine(va[i], vb[j]); }, lambda_sub);
}

inline double conv_ed(const Dialogue& a, const Dialogue& b, double lambda_sub, const Embedder& embedder) {
    return conv_ed(a.turns, b.turns, lambda_sub, embedder);
}

struct DistanceMatrix {
    std::vector<std::string> ids;
    std::vector<std::vector<double>> d;  // symmetric, zero diagonal
};

// Pairwise convED over the reference set. Cells are computed for i < j and
// mirrored, in fixed slots, so the result is independent of scheduling.
inline DistanceMatrix distance_matrix(const std::vector<const Dialogue*>& refs, double lambda_sub,
                                      const Embedder& embedder, int threads = 1) {
    if (refs.empty()) throw ValidationError("distance_matrix needs at least one dialogue");
    const std::size_t n = refs.size();
    DistanceMatrix m;
    m.ids.reserve(n);
    std::vector<std::vector<Vector>> vecs(n);
    for (std::size_t i = 0; i < n; ++i) {
        m.ids.push_back(refs[i]->dialogue_id);
        vecs[i] = embed_turns(refs[i]->turns, embedder);
    }
    m.d.assign(n, std::vector<double>(n, 0.0));

    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) cells.emplace_back(i, j);
    }
    parallel_for(cells.size(), threads, [&](std::size_t c) {
        auto [i, j] = cells[c];
        const auto& a = refs[i]->turns;
        const auto& b = refs[j]->turns;
        double v = conv_ed_dp(
            a.size(), b.size(), [&](std::size_t x, std::size_t y) { return a[x].role == b[y].role; },
            [&](std::size_t x, std::size_t y) { return 1.0 - cosine(vecs[i][x], vecs[j][y]); },
            lambda_sub);
        m.d[i][j] = v;
        m.d[j][i] = v;
    });
    return m;
}

struct OrderResult {
    std::vector<std::size_t> order;  // permutation of matrix indices
    double cost = 0.0;               // sum of adjacent distances along the path
};

// Exact minimum-total-adjacent-distance open path (Held-Karp over subsets).
// Cost ties — including a path versus its reverse — resolve to the
// lexicographically smallest index sequence.
inline OrderResult optimal_order(const std::vector<std::vector<double>>& d) {
    const std::size_t n = d.size();
    if (n == 0) throw ValidationError("optimal_order needs at least one node");
    if (n > 12) {
        throw TooManyReferences("cannot order " + std::to_string(n) + " references (max 12)");
    }
    if (n == 1) return {{0}, 0.0};

    const double inf = std::numeric_limits<double>::infinity();
    const std::size_t full = (std::size_t{1} << n) - 1;
    // g[mask][v]: min cost of a path that starts at v and visits exactly mask.
    std::vector<std::vector<double>> g(full + 1, std::vector<double>(n, inf));
    for (std::size_t v = 0; v < n; ++v) g[std::size_t{1} << v][v] = 0.0;
    for (std::size_t mask = 1; mask <= full; ++mask) {
        if ((mask & (mask - 1)) == 0) continue;  // singletons done
        for (std::size_t v = 0; v < n; ++v) {
            if (!(mask & (std::size_t{1} << v))) continue;
            std::size_t rest = mask ^ (std::size_t{1} << v);
            double best = inf;
            for (std::size_t u = 0; u < n; ++u) {
                if (!(rest & (std::size_t{1} << u))) continue;
                double c = d[v][u] + g[rest][u];
                if (c < best) best = c;
            }
            g[mask][v] = best;
        }
    }

    double best = inf;
    for (std::size_t v = 0; v < n; ++v) best = std::min(best, g[full][v]);

    // Front-greedy reconstruction: the smallest feasible node at each step
    // yields the lexicographically smallest optimal path.
    OrderResult res;
    res.cost = best;
    std::size_t mask = full;
    std::size_t cur = 0;
    for (std::size_t v = 0; v < n; ++v) {
        if (g[full][v] == best) {
            cur = v;
            break;
        }
    }
    res.order.push_back(cur);
    while (res.order.size() < n) {
        std::size_t rest = mask ^ (std::size_t{1} << cur);
        double target = g[mask][cur];
        for (std::size_t u = 0; u < n; ++u) {
            if (!(rest & (std::size_t{1} << u))) continue;
            if (d[cur][u] + g[rest][u] == target) {
                res.order.push_back(u);
                mask = rest;
                cur = u;
                break;
            }
        }
    }
    return res;
}

inline OrderResult optimal_order(const DistanceMatrix& m) { return optimal_order(m.d); }

}  // namespace idl
