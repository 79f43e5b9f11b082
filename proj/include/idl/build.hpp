#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "idl/corpus.hpp"
#include "idl/embed.hpp"
#include "idl/errors.hpp"
#include "idl/organize.hpp"
#include "idl/persona.hpp"
#include "idl/rng.hpp"

namespace idl {

struct MslMeta {
    std::string target_id;  // dialogue_id of the supervised session
    int cluster = 0;
    std::vector<std::string> reference_ids;
};

struct MslSample {
    std::string prompt;
    std::string response;
    MslMeta meta;
};

inline std::string render_session(const std::vector<Utterance>& turns) {
    std::string out;
    for (std::size_t i = 0; i < turns.size(); ++i) {
        if (i) out += '\n';
        out += turns[i].role == Role::Target ? "[Target]: " : "[Partner]: ";
        out += turns[i].text;
    }
    return out;
}

inline constexpr std::string_view kSessionSeparator = "<SEP_SESSION>";

// Prompt = reference sessions in order, separated by <SEP_SESSION> lines,
// then the target context, closed by the cue line "[Target]:". The response
// is the target's final turn.
inline MslSample build_msl(const OrganizedSample& sample, const Corpus& corpus) {
    MslSample out;
    for (const auto& id : sample.reference_ids) {
        out.prompt += render_session(corpus.at(id).turns);
        out.prompt += '\n';
        out.prompt += kSessionSeparator;
        out.prompt += '\n';
    }
    auto [context, response] = context_response_split(corpus.at(sample.target_id));
    out.prompt += render_session(context);
    out.prompt += "\n[Target]:";
    out.response = std::move(response);
    out.meta = {sample.target_id, sample.cluster, sample.reference_ids};
    return out;
}

enum class CriterionType { Inconsistency, Fabrication, Inversion };

inline std::string_view criterion_name(CriterionType t) {
    switch (t) {
        case CriterionType::Inconsistency: return "Inconsistency";
        case CriterionType::Fabrication: return "Fabrication";
        case CriterionType::Inversion: return "Inversion";
    }
    return "?";
}

inline std::optional<CriterionType> criterion_from_name(std::string_view s) {
    if (s == "Inconsistency") return CriterionType::Inconsistency;
    if (s == "Fabrication") return CriterionType::Fabrication;
    if (s == "Inversion") return CriterionType::Inversion;
    return std::nullopt;
}

struct PreferenceSample {
    std::string prompt;
    std::string chosen;
    std::string rejected;
    std::string criterion;
    CriterionType criterion_type = CriterionType::Inconsistency;
};

namespace detail {

struct LocatedTriple {
    PersonaTriple triple;
    std::size_t byte_begin = 0;
    std::size_t byte_end = 0;
};

// Triples of h_cho whose object occurs as a token run in h_cho (first
// occurrence), so the object can be spliced out.
inline std::vector<LocatedTriple> locate_triples(const std::string& h_cho,
                                                 const std::vector<PersonaTriple>& triples) {
    auto spans = text::tokenize_spans(h_cho);
    std::vector<LocatedTriple> out;
    for (const auto& t : triples) {
        auto needle = text::tokenize(t.object);
        if (needle.empty()) continue;
        if (auto run = text::find_token_run(spans, needle)) {
            out.push_back({t, spans[run->first].begin, spans[run->second].end});
        }
    }
    return out;
}

inline bool objects_conflict(const PersonaTriple& mine, const PersonaTriple& replacement) {
    // Token-level inequality, so the splice always changes a token span.
    auto a = text::tokenize(mine.object);
    auto b = text::tokenize(replacement.object);
    return !b.empty() && a != b;
}

}  // namespace detail

// Criterion type 1: substitute one persona object in the chosen response with
// a conflicting object established elsewhere in the person's sessions.
// Same-relation replacements are preferred; absent when nothing applies.
inline std::optional<std::string> make_inconsistency(const std::string& h_cho,
                                                     const std::vector<PersonaTriple>& du_triples,
                                                     const ExtractorBackend& extractor,
                                                     std::uint64_t seed) {
    auto extracted = extractor.extract_utterances({h_cho});
    if (extracted.empty() || extracted[0].empty()) return std::nullopt;
    auto located = detail::locate_triples(h_cho, extracted[0]);
    if (located.empty()) return std::nullopt;

    auto collect = [&](bool same_relation) {
        std::vector<std::pair<std::size_t, std::vector<std::size_t>>> out;
        for (std::size_t i = 0; i < located.size(); ++i) {
            std::vector<std::size_t> partners;
            for (std::size_t j = 0; j < du_triples.size(); ++j) {
                if (same_relation && !text::iequal(du_triples[j].relation, located[i].triple.relation)) {
                    continue;
                }
                if (!detail::objects_conflict(located[i].triple, du_triples[j])) continue;
                partners.push_back(j);
            }
            if (!partners.empty()) out.emplace_back(i, std::move(partners));
        }
        return out;
    };

    auto eligible = collect(true);
    if (eligible.empty()) eligible = collect(false);
    if (eligible.empty()) return std::nullopt;

    std::mt19937_64 g(seed);
    const auto& [ti, partners] = eligible[rng::next_index(g, eligible.size())];
    const auto& replacement = du_triples[partners[rng::next_index(g, partners.size())]];
    const auto& span = located[ti];
    return h_cho.substr(0, span.byte_begin) + replacement.object + h_cho.substr(span.byte_end);
}

// Criterion type 2: a dataset sentence semantically close to the chosen
// response whose persona facts are disjoint from the person's sessions.
// pool_vectors, when supplied, must be embeddings of `pool` in order.
inline std::optional<std::string> make_fabrication(const std::string& h_cho,
                                                   const std::vector<std::string>& pool,
                                                   const std::vector<PersonaTriple>& du_triples,
                                                   int m, const Embedder& embedder,
                                                   const ExtractorBackend& extractor, std::uint64_t seed,
                                                   const std::vector<Vector>* pool_vectors = nullptr) {
    if (m < 1) throw ValidationError("fabrication pool size m must be >= 1");
    if (pool_vectors && pool_vectors->size() != pool.size()) {
        throw ValidationError("pool_vectors must align with pool");
    }
    if (pool.empty()) return std::nullopt;
    Vector hv = embedder.embed(h_cho);

    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(pool.size());
    if (pool_vectors) {
        for (std::size_t i = 0; i < pool.size(); ++i) {
            ranked.emplace_back(cosine((*pool_vectors)[i], hv), i);
        }
    } else {
        auto vecs = embedder.embed_batch(pool);
        for (std::size_t i = 0; i < pool.size(); ++i) ranked.emplace_back(cosine(vecs[i], hv), i);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    std::vector<std::size_t> eligible;
    for (std::size_t r = 0; r < ranked.size() && r < static_cast<std::size_t>(m); ++r) {
        const std::string& cand = pool[ranked[r].second];
        if (cand == h_cho) continue;
        auto triples = extractor.extract_utterances({cand})[0];
        if (triples.empty()) continue;
        bool disjoint = true;
        for (const auto& a : triples) {
            for (const auto& b : du_triples) {
                if (triple_equal_ci(a, b)) {
                    disjoint = false;
                    break;
                }
            }
            if (!disjoint) break;
        }
        if (disjoint) eligible.push_back(ranked[r].second);
    }
    if (eligible.empty()) return std::nullopt;
    std::mt19937_64 g(seed);
    return pool[eligible[rng::next_index(g, eligible.size())]];
}

// Criterion type 3: the partner-side utterance most similar to the chosen
// response, taken verbatim. Ties resolve to the first occurrence.
inline std::optional<std::string> make_inversion(const std::vector<const Dialogue*>& du,
                                                 const std::vector<Utterance>& context,
                                                 const std::string& r_cho, const Embedder& embedder) {
    std::vector<std::string> q;
    for (const Dialogue* d : du) {
        for (const auto& t : d->turns) {
            if (t.role == Role::Partner) q.push_back(t.text);
        }
    }
    for (const auto& t : context) {
        if (t.role == Role::Partner) q.push_back(t.text);
    }
    if (q.empty()) return std::nullopt;
    Vector rv = embedder.embed(r_cho);
    auto qv = embedder.embed_batch(q);
    std::size_t best = 0;
    double best_cos = cosine(qv[0], rv);
    for (std::size_t i = 1; i < q.size(); ++i) {
        double c = cosine(qv[i], rv);
        if (c > best_cos) {
            best_cos = c;
            best = i;
        }
    }
    return q[best];
}

struct BuildContext {
    const Corpus& corpus;
    const Embedder& embedder;
    const ExtractorBackend& extractor;
    const std::vector<std::string>& fabrication_pool;
    // Reused stage outputs; when absent the extractor runs on demand.
    const std::unordered_map<std::string, ExtractionResult>* extractions = nullptr;
    const std::vector<Vector>* pool_vectors = nullptr;
    int fabrication_m = 10;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<PersonaTriple> reference_triples(const std::vector<const Dialogue*>& refs,
                                                    const BuildContext& ctx) {
    std::vector<PersonaTriple> out;
    for (const Dialogue* d : refs) {
        if (ctx.extractions) {
            auto it = ctx.extractions->find(d->dialogue_id);
            if (it == ctx.extractions->end()) throw UnresolvedId(d->dialogue_id);
            for (const auto& per_turn : it->second.triples_per_turn) {
                out.insert(out.end(), per_turn.begin(), per_turn.end());
            }
        } else {
            auto ext = extract(*d, ctx.extractor);
            for (const auto& per_turn : ext.triples_per_turn) {
                out.insert(out.end(), per_turn.begin(), per_turn.end());
            }
        }
    }
    return out;
}

}  // namespace detail

// Assembles one preference record: gold candidate as chosen, worst candidate
// as rejected, and a criterion built by a seeded type draw with the fixed
// fallback cycle Inconsistency -> Fabrication -> Inversion. Returns nullopt
// (with drop_reason set) when no constructor produces a usable criterion.
inline std::optional<PreferenceSample> build_preference(const MslSample& msl, const Dialogue& d,
                                                        const BuildContext& ctx,
                                                        std::string* drop_reason = nullptr) {
    auto drop = [&](std::string_view why) {
        if (drop_reason) *drop_reason = std::string(why);
        return std::nullopt;
    };
    if (!d.candidates || d.candidates->size() < 2) {
        throw MissingCandidates("dialogue " + d.dialogue_id + " has no usable candidates");
    }
    const std::string& chosen = d.candidates->front();
    const std::string& rejected = d.candidates->back();
    if (chosen != d.turns.back().text) return drop("invalid_candidates");
    if (chosen == rejected) return drop("invalid_candidates");

    std::vector<const Dialogue*> refs;
    refs.reserve(msl.meta.reference_ids.size());
    for (const auto& id : msl.meta.reference_ids) refs.push_back(&ctx.corpus.at(id));
    auto du_triples = detail::reference_triples(refs, ctx);
    auto [context, gold] = context_response_split(d);
    (void)gold;

    auto type_rng = rng::substream(ctx.seed, "criterion-type", d.dialogue_id);
    auto first = static_cast<int>(rng::next_index(type_rng, 3));
    for (int step = 0; step < 3; ++step) {
        auto type = static_cast<CriterionType>((first + step) % 3);
        std::optional<std::string> crt;
        switch (type) {
            case CriterionType::Inconsistency:
                crt = make_inconsistency(chosen, du_triples, ctx.extractor,
                                         rng::derive(ctx.seed, "inconsistency", d.dialogue_id));
                break;
            case CriterionType::Fabrication:
                crt = make_fabrication(chosen, ctx.fabrication_pool, du_triples, ctx.fabrication_m,
                                       ctx.embedder, ctx.extractor,
                                       rng::derive(ctx.seed, "fabrication-choice", d.dialogue_id),
                                       ctx.pool_vectors);
                break;
            case CriterionType::Inversion:
                crt = make_inversion(refs, context, chosen, ctx.embedder);
                break;
        }
        if (crt && !crt->empty() && *crt != chosen) {
            return PreferenceSample{msl.prompt, chosen, rejected, std::move(*crt), type};
        }
    }
    return drop("constructors_exhausted");
}

}  // namespace idl
