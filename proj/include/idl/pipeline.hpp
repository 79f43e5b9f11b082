#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "idl/build.hpp"
#include "idl/corpus.hpp"
#include "idl/dpoc.hpp"
#include "idl/embed.hpp"
#include "idl/errors.hpp"
#include "idl/hash.hpp"
#include "idl/metrics.hpp"
#include "idl/organize.hpp"
#include "idl/parallel.hpp"
#include "idl/persona.hpp"
#include "idl/rng.hpp"

namespace idl {

inline constexpr const char* kCorpusFile = "corpus.jsonl";
inline constexpr const char* kExtractionFile = "extraction.jsonl";
inline constexpr const char* kOrganizedFile = "organized.jsonl";
inline constexpr const char* kSftFile = "sft.jsonl";
inline constexpr const char* kPrefFile = "pref.jsonl";

struct RunConfig {
    std::uint64_t seed = 0;
    int clusters = 3;       // maximum cluster count per person
    int neighbors = 5;      // maximum reference dialogues per sample
    double lambda_sub = 5.0;
    double beta = 0.1;
    double lambda_pen = 2.0;
    int fabrication_m = 10;
    int threads = 1;
    int samples_per_cluster = 1;

    EmbedderConfig embed;

    std::string extractor_backend = "rules";  // "rules" | "remote"
    std::string patterns_path;
    std::string extract_endpoint;
    FieldOrder field_order = FieldOrder::SRO;
    double extract_timeout_s = 30.0;

    std::string stopwords_path;

    std::string in_path;
    std::string out_dir;
    std::string pred_path;
    std::string ref_path;
};

// Semantic configuration only: thread count and file locations do not change
// what a stage computes, so they stay out of the fingerprint.
inline nlohmann::ordered_json config_fingerprint(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["clusters"] = cfg.clusters;
    j["neighbors"] = cfg.neighbors;
    j["lambda_sub"] = cfg.lambda_sub;
    j["beta"] = cfg.beta;
    j["lambda_pen"] = cfg.lambda_pen;
    j["fabrication_m"] = cfg.fabrication_m;
    j["samples_per_cluster"] = cfg.samples_per_cluster;
    j["embed_backend"] = cfg.embed.backend == EmbedBackend::Test ? "test" : "remote";
    j["embed_dim"] = cfg.embed.dim;
    j["embed_model"] = cfg.embed.model_id;
    j["embed_endpoint"] = cfg.embed.endpoint;
    j["extractor"] = cfg.extractor_backend;
    j["extract_endpoint"] = cfg.extract_endpoint;
    j["field_order"] = cfg.field_order == FieldOrder::SRO ? "sro" : "ors";
    return j;
}

inline std::unique_ptr<ExtractorBackend> make_extractor(const RunConfig& cfg) {
    if (cfg.extractor_backend == "rules") {
        if (cfg.patterns_path.empty()) {
            throw ValidationError("rules extractor needs --patterns");
        }
        return std::make_unique<RulesBackend>(RulesBackend::from_file(cfg.patterns_path));
    }
    if (cfg.extractor_backend == "remote") {
        if (cfg.extract_endpoint.empty()) {
            throw ValidationError("remote extractor needs --extract-endpoint (or IDL_EXTRACT_ENDPOINT)");
        }
        return std::make_unique<RemoteBackend>(cfg.extract_endpoint, cfg.field_order,
                                               cfg.extract_timeout_s);
    }
    throw ValidationError("unknown extractor backend: " + cfg.extractor_backend);
}

// Accumulates the per-stage run record: config hash, input content hashes,
// counts and drop counters, wall time.
class StageRun {
public:
    StageRun(std::string stage, const RunConfig& cfg) : start_(std::chrono::steady_clock::now()) {
        auto fp = config_fingerprint(cfg);
        manifest_["stage"] = std::move(stage);
        manifest_["config_hash"] = hash::sha256_hex(fp.dump());
        manifest_["config"] = fp;
        manifest_["inputs"] = nlohmann::ordered_json::object();
        manifest_["counts"] = nlohmann::ordered_json::object();
        manifest_["drops"] = nlohmann::ordered_json::object();
    }

    // Keyed by basename so reruns in different directories stay comparable.
    void input(const std::filesystem::path& p) {
        manifest_["inputs"][p.filename().string()] = hash::sha256_file_hex(p);
    }

    void count(const std::string& name, std::uint64_t v) { manifest_["counts"][name] = v; }
    void drop(const std::string& name, std::uint64_t v) { manifest_["drops"][name] = v; }

    nlohmann::ordered_json& raw() { return manifest_; }

    nlohmann::ordered_json finish(const std::filesystem::path& out_dir) {
        auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - start_)
                      .count();
        manifest_["wall_ms"] = ms;
        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            std::string stage = manifest_["stage"].get<std::string>();
            std::ofstream out(out_dir / (stage + ".manifest.json"), std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot write manifest in " + out_dir.string());
            out << manifest_.dump(2) << '\n';
        }
        return manifest_;
    }

private:
    nlohmann::ordered_json manifest_;
    std::chrono::steady_clock::time_point start_;
};

namespace pipe_detail {

inline std::filesystem::path resolve_input(const std::string& in_path, const char* default_name) {
    std::filesystem::path p(in_path);
    if (std::filesystem::is_directory(p)) return p / default_name;
    return p;
}

inline Corpus load_corpus_strict(const std::filesystem::path& path) {
    auto report = parse_corpus(path);
    if (!report.issues.empty()) {
        throw ValidationError(path.string() + ": " + report.issues.front().to_string() +
                              (report.issues.size() > 1
                                   ? " (+" + std::to_string(report.issues.size() - 1) + " more)"
                                   : ""));
    }
    return std::move(report.corpus);
}

inline nlohmann::json parse_line_strict(const std::string& line, const std::filesystem::path& path,
                                        std::size_t line_no) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ValidationError(path.string() + " line " + std::to_string(line_no) + ": invalid JSON record");
    }
    return j;
}

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::trim(line).empty()) continue;
        try {
            fn(parse_line_strict(line, path, line_no), line_no);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

inline std::unordered_map<std::string, ExtractionResult> load_extractions(
    const std::filesystem::path& path) {
    std::unordered_map<std::string, ExtractionResult> out;
    for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line_no) {
        if (!j.contains("dialogue_id") || !j.contains("triples") || !j.contains("persona_intensive")) {
            throw ValidationError(path.string() + " line " + std::to_string(line_no) +
                                  ": expected {dialogue_id, triples, persona_intensive}");
        }
        ExtractionResult r;
        for (const auto& turn : j["triples"]) {
            std::vector<PersonaTriple> ts;
            for (const auto& t : turn) {
                ts.push_back({t.at(0).get<std::string>(), t.at(1).get<std::string>(),
                              t.at(2).get<std::string>()});
            }
            r.triples_per_turn.push_back(std::move(ts));
        }
        for (const auto& i : j["persona_intensive"]) r.persona_intensive_indices.push_back(i.get<std::size_t>());
        out[j["dialogue_id"].get<std::string>()] = std::move(r);
    });
    return out;
}

inline std::vector<OrganizedSample> load_organized(const std::filesystem::path& path) {
    std::vector<OrganizedSample> out;
    for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line_no) {
        if (!j.contains("cluster") || !j.contains("target_id") || !j.contains("reference_ids")) {
            throw ValidationError(path.string() + " line " + std::to_string(line_no) +
                                  ": expected {cluster, target_id, reference_ids, order_cost}");
        }
        OrganizedSample s;
        s.cluster = j["cluster"].get<int>();
        s.target_id = j["target_id"].get<std::string>();
        for (const auto& id : j["reference_ids"]) s.reference_ids.push_back(id.get<std::string>());
        s.order_cost = j.value("order_cost", 0.0);
        out.push_back(std::move(s));
    });
    return out;
}

inline std::vector<MslSample> load_msl(const std::filesystem::path& path) {
    std::vector<MslSample> out;
    for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line_no) {
        if (!j.contains("prompt") || !j.contains("response") || !j.contains("meta")) {
            throw ValidationError(path.string() + " line " + std::to_string(line_no) +
                                  ": expected {prompt, response, meta}");
        }
        MslSample s;
        s.prompt = j["prompt"].get<std::string>();
        s.response = j["response"].get<std::string>();
        const auto& meta = j["meta"];
        s.meta.target_id = meta.at("target_id").get<std::string>();
        s.meta.cluster = meta.at("cluster").get<int>();
        for (const auto& id : meta.at("reference_ids")) s.meta.reference_ids.push_back(id.get<std::string>());
        out.push_back(std::move(s));
    });
    return out;
}

inline std::ofstream open_output(const std::filesystem::path& dir, const char* name) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    return out;
}

}  // namespace pipe_detail

// --- ingest: validate raw JSONL, write the normalized corpus ---------------

inline nlohmann::ordered_json run_ingest(const RunConfig& cfg) {
    StageRun run("ingest", cfg);
    std::filesystem::path in = pipe_detail::resolve_input(cfg.in_path, kCorpusFile);
    run.input(in);
    ParseReport report = parse_corpus(in);

    auto out = pipe_detail::open_output(cfg.out_dir, kCorpusFile);
    serialize_corpus(report.corpus, out);

    auto issues = nlohmann::ordered_json::array();
    for (const auto& i : report.issues) issues.push_back(i.to_string());
    run.raw()["issues"] = std::move(issues);
    run.count("dialogues", report.corpus.dialogues.size());
    run.count("persons", report.corpus.index.size());
    run.drop("rejected_lines", report.issues.size());
    return run.finish(cfg.out_dir);
}

// --- extract: persona triples per dialogue ---------------------------------

inline nlohmann::ordered_json run_extract(const RunConfig& cfg) {
    StageRun run("extract", cfg);
    std::filesystem::path in = pipe_detail::resolve_input(cfg.in_path, kCorpusFile);
    run.input(in);
    if (cfg.extractor_backend == "rules" && !cfg.patterns_path.empty()) {
        run.input(cfg.patterns_path);
    }
    Corpus corpus = pipe_detail::load_corpus_strict(in);
    auto backend = make_extractor(cfg);

    std::vector<ExtractionResult> results(corpus.dialogues.size());
    parallel_for(corpus.dialogues.size(), cfg.threads,
                 [&](std::size_t i) { results[i] = extract(corpus.dialogues[i], *backend); });

    std::uint64_t triples = 0, intensive = 0;
    auto out = pipe_detail::open_output(cfg.out_dir, kExtractionFile);
    for (std::size_t i = 0; i < results.size(); ++i) {
        nlohmann::ordered_json j;
        j["dialogue_id"] = corpus.dialogues[i].dialogue_id;
        auto turns = nlohmann::ordered_json::array();
        for (const auto& per_turn : results[i].triples_per_turn) {
            auto ts = nlohmann::ordered_json::array();
            for (const auto& t : per_turn) {
                ts.push_back({t.subject, t.relation, t.object});
                ++triples;
            }
            turns.push_back(std::move(ts));
        }
        j["triples"] = std::move(turns);
        j["persona_intensive"] = results[i].persona_intensive_indices;
        intensive += results[i].persona_intensive_indices.size();
        out << j.dump() << '\n';
    }
    run.count("dialogues", corpus.dialogues.size());
    run.count("triples", triples);
    run.count("persona_intensive_utterances", intensive);
    return run.finish(cfg.out_dir);
}

// --- organize: cluster per person, pick target + references, order them ----

namespace pipe_detail {

struct PersonOutput {
    std::vector<OrganizedSample> samples;
    std::uint64_t skipped_small_clusters = 0;
    bool skipped_single_dialogue = false;
};

inline PersonOutput organize_person(const std::string& person, const std::vector<std::string>& ids,
                                    const Corpus& corpus,
                                    const std::unordered_map<std::string, ExtractionResult>& extractions,
                                    const Embedder& embedder, const RunConfig& cfg) {
    PersonOutput out;
    if (ids.size() < 2) {
        out.skipped_single_dialogue = true;
        return out;
    }
    std::vector<PersonaRepr> reprs;
    reprs.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = extractions.find(id);
        if (it == extractions.end()) {
            throw ValidationError("no extraction record for dialogue " + id + "; run extract first");
        }
        reprs.push_back(persona_repr(corpus.at(id), it->second, embedder));
    }

    std::vector<Vector> points;
    points.reserve(reprs.size());
    for (const auto& r : reprs) points.push_back(r.z);
    KmeansResult km = kmeans(points, cfg.clusters, rng::derive(cfg.seed, "clustering", person));

    for (int j = 0; j < km.c_effective; ++j) {
        std::vector<PersonaRepr> members;
        for (std::size_t i = 0; i < reprs.size(); ++i) {
            if (km.labels[i] == j) members.push_back(reprs[i]);
        }
        if (members.size() < 2) {
            out.skipped_small_clusters++;
            continue;
        }
        std::string stream_key = person + "#" + std::to_string(j);
        std::vector<OrganizedSample> picked;
        if (cfg.samples_per_cluster <= 1) {
            picked.push_back(select_target_refs(members, cfg.neighbors,
                                                rng::derive(cfg.seed, "target-selection", stream_key)));
        } else {
            auto g = rng::substream(cfg.seed, "target-selection", stream_key);
            std::vector<std::size_t> order(members.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            rng::shuffle(order, g);
            std::size_t want = std::min<std::size_t>(order.size(),
                                                     static_cast<std::size_t>(cfg.samples_per_cluster));
            for (std::size_t s = 0; s < want; ++s) {
                OrganizedSample os;
                os.target_id = members[order[s]].dialogue_id;
                os.reference_ids = refs_for_target(members, order[s], cfg.neighbors);
                picked.push_back(std::move(os));
            }
        }
        for (auto& sample : picked) {
            sample.cluster = j;
            std::vector<const Dialogue*> refs;
            refs.reserve(sample.reference_ids.size());
            for (const auto& id : sample.reference_ids) refs.push_back(&corpus.at(id));
            DistanceMatrix m = distance_matrix(refs, cfg.lambda_sub, embedder, 1);
            OrderResult ord = optimal_order(m);
            std::vector<std::string> ordered;
            ordered.reserve(sample.reference_ids.size());
            for (std::size_t idx : ord.order) ordered.push_back(m.ids[idx]);
            sample.reference_ids = std::move(ordered);
            sample.order_cost = ord.cost;
            out.samples.push_back(std::move(sample));
        }
    }
    return out;
}

}  // namespace pipe_detail

inline nlohmann::ordered_json run_organize(const RunConfig& cfg) {
    StageRun run("organize", cfg);
    std::filesystem::path dir(cfg.in_path);
    std::filesystem::path corpus_path = pipe_detail::resolve_input(cfg.in_path, kCorpusFile);
    std::filesystem::path extraction_path =
        std::filesystem::is_directory(dir) ? dir / kExtractionFile : corpus_path.parent_path() / kExtractionFile;
    run.input(corpus_path);
    run.input(extraction_path);

    Corpus corpus = pipe_detail::load_corpus_strict(corpus_path);
    auto extractions = pipe_detail::load_extractions(extraction_path);
    Embedder embedder(cfg.embed);

    std::vector<std::pair<std::string, const std::vector<std::string>*>> persons;
    persons.reserve(corpus.index.size());
    for (const auto& [person, ids] : corpus.index) persons.emplace_back(person, &ids);

    std::vector<pipe_detail::PersonOutput> outputs(persons.size());
    parallel_for(persons.size(), cfg.threads, [&](std::size_t i) {
        outputs[i] = pipe_detail::organize_person(persons[i].first, *persons[i].second, corpus,
                                                  extractions, embedder, cfg);
    });

    std::uint64_t samples = 0, small_clusters = 0, single_persons = 0;
    auto out = pipe_detail::open_output(cfg.out_dir, kOrganizedFile);
    for (const auto& po : outputs) {
        small_clusters += po.skipped_small_clusters;
        single_persons += po.skipped_single_dialogue ? 1 : 0;
        for (const auto& s : po.samples) {
            nlohmann::ordered_json j;
            j["cluster"] = s.cluster;
            j["target_id"] = s.target_id;
            j["reference_ids"] = s.reference_ids;
            j["order_cost"] = s.order_cost;
            out << j.dump() << '\n';
            ++samples;
        }
    }
    run.count("persons", persons.size());
    run.count("samples", samples);
    run.drop("singleton_clusters", small_clusters);
    run.drop("single_dialogue_persons", single_persons);
    return run.finish(cfg.out_dir);
}

// --- build-sft: render supervised samples -----------------------------------

inline nlohmann::ordered_json run_build_sft(const RunConfig& cfg) {
    StageRun run("build-sft", cfg);
    std::filesystem::path dir(cfg.in_path);
    std::filesystem::path corpus_path = pipe_detail::resolve_input(cfg.in_path, kCorpusFile);
    std::filesystem::path organized_path =
        std::filesystem::is_directory(dir) ? dir / kOrganizedFile : corpus_path.parent_path() / kOrganizedFile;
    run.input(corpus_path);
    run.input(organized_path);

    Corpus corpus = pipe_detail::load_corpus_strict(corpus_path);
    auto organized = pipe_detail::load_organized(organized_path);

    std::vector<MslSample> samples(organized.size());
    parallel_for(organized.size(), cfg.threads,
                 [&](std::size_t i) { samples[i] = build_msl(organized[i], corpus); });

    auto out = pipe_detail::open_output(cfg.out_dir, kSftFile);
    for (const auto& s : samples) {
        nlohmann::ordered_json j;
        j["prompt"] = s.prompt;
        j["response"] = s.response;
        j["meta"] = {{"target_id", s.meta.target_id},
                     {"cluster", s.meta.cluster},
                     {"reference_ids", s.meta.reference_ids}};
        out << j.dump() << '\n';
    }
    run.count("samples", samples.size());
    return run.finish(cfg.out_dir);
}

// --- build-dpoc: preference triplets with criterion samples -----------------

inline nlohmann::ordered_json run_build_dpoc(const RunConfig& cfg) {
    StageRun run("build-dpoc", cfg);
    std::filesystem::path dir(cfg.in_path);
    std::filesystem::path corpus_path = pipe_detail::resolve_input(cfg.in_path, kCorpusFile);
    auto sibling = [&](const char* name) {
        return std::filesystem::is_directory(dir) ? dir / name : corpus_path.parent_path() / name;
    };
    std::filesystem::path extraction_path = sibling(kExtractionFile);
    std::filesystem::path sft_path = sibling(kSftFile);
    run.input(corpus_path);
    run.input(extraction_path);
    run.input(sft_path);
    if (cfg.extractor_backend == "rules" && !cfg.patterns_path.empty()) {
        run.input(cfg.patterns_path);
    }

    Corpus corpus = pipe_detail::load_corpus_strict(corpus_path);
    auto extractions = pipe_detail::load_extractions(extraction_path);
    auto msl = pipe_detail::load_msl(sft_path);
    Embedder embedder(cfg.embed);
    auto extractor = make_extractor(cfg);

    // Fabrication candidate pool: distinct target-side utterances, corpus order.
    std::vector<std::string> pool;
    {
        std::unordered_set<std::string> seen;
        for (const auto& d : corpus.dialogues) {
            for (const auto& t : d.turns) {
                if (t.role == Role::Target && seen.insert(t.text).second) pool.push_back(t.text);
            }
        }
    }
    std::vector<Vector> pool_vectors = embedder.embed_batch(pool);

    BuildContext ctx{corpus,        embedder,         *extractor, pool, &extractions,
                     &pool_vectors, cfg.fabrication_m, cfg.seed};

    std::vector<std::optional<PreferenceSample>> built(msl.size());
    std::vector<std::string> reasons(msl.size());
    parallel_for(msl.size(), cfg.threads, [&](std::size_t i) {
        const Dialogue& d = corpus.at(msl[i].meta.target_id);
        if (!d.candidates || d.candidates->size() < 2) {
            reasons[i] = "missing_candidates";
            return;
        }
        built[i] = build_preference(msl[i], d, ctx, &reasons[i]);
    });

    std::uint64_t emitted = 0;
    std::map<std::string, std::uint64_t> drops = {{"missing_candidates", 0},
                                                  {"invalid_candidates", 0},
                                                  {"constructors_exhausted", 0}};
    std::map<std::string, std::uint64_t> per_type;
    auto out = pipe_detail::open_output(cfg.out_dir, kPrefFile);
    for (std::size_t i = 0; i < built.size(); ++i) {
        if (!built[i]) {
            drops[reasons[i]]++;
            continue;
        }
        const auto& s = *built[i];
        nlohmann::ordered_json j;
        j["prompt"] = s.prompt;
        j["chosen"] = s.chosen;
        j["rejected"] = s.rejected;
        j["criterion"] = s.criterion;
        j["criterion_type"] = std::string(criterion_name(s.criterion_type));
        out << j.dump() << '\n';
        ++emitted;
        per_type[std::string(criterion_name(s.criterion_type))]++;
    }
    run.count("inputs", msl.size());
    run.count("emitted", emitted);
    for (const auto& [name, n] : per_type) run.count("emitted_" + name, n);
    for (const auto& [name, n] : drops) run.drop(name, n);
    return run.finish(cfg.out_dir);
}

// --- loss-eval: DPOC statistics over a delta file ---------------------------

inline nlohmann::ordered_json run_loss_eval(const RunConfig& cfg, std::ostream& out) {
    StageRun run("loss-eval", cfg);
    std::filesystem::path in(cfg.in_path);
    run.input(in);
    std::vector<DeltaTriple> batch;
    pipe_detail::for_each_jsonl(in, [&](const nlohmann::json& j, std::size_t line_no) {
        if (!j.contains("d_cho") || !j.contains("d_crt") || !j.contains("d_rej") ||
            !j["d_cho"].is_number() || !j["d_crt"].is_number() || !j["d_rej"].is_number()) {
            throw ValidationError(in.string() + " line " + std::to_string(line_no) +
                                  ": expected numeric {d_cho, d_crt, d_rej}");
        }
        DeltaTriple dt{j["d_cho"].get<double>(), j["d_crt"].get<double>(), j["d_rej"].get<double>()};
        if (!std::isfinite(dt.d_cho) || !std::isfinite(dt.d_crt) || !std::isfinite(dt.d_rej)) {
            throw ValidationError(in.string() + " line " + std::to_string(line_no) + ": non-finite delta");
        }
        batch.push_back(dt);
    });
    DpocHyper h{cfg.beta, cfg.lambda_pen};
    h.validate();
    BatchStats stats = batch_stats(batch, h);
    nlohmann::ordered_json report;
    report["mean_loss"] = stats.mean_loss;
    report["reward_accuracy"] = stats.reward_accuracy;
    report["pivot_rate"] = stats.pivot_rate;
    out << report.dump() << '\n';
    run.count("records", batch.size());
    return run.finish(cfg.out_dir);
}

// --- score: automatic evaluation report -------------------------------------

inline nlohmann::ordered_json run_score(const RunConfig& cfg, std::ostream& out) {
    StageRun run("score", cfg);
    std::filesystem::path pred_path(cfg.pred_path);
    std::filesystem::path ref_path(cfg.ref_path);
    run.input(pred_path);
    run.input(ref_path);

    struct Ref {
        std::string reference;
        std::string persona_text;
    };
    std::unordered_map<std::string, Ref> refs;
    pipe_detail::for_each_jsonl(ref_path, [&](const nlohmann::json& j, std::size_t line_no) {
        if (!j.contains("id") || !j.contains("reference") || !j["reference"].is_string() ||
            j["reference"].get<std::string>().empty()) {
            throw ValidationError(ref_path.string() + " line " + std::to_string(line_no) +
                                  ": expected {id, reference, persona_text} with non-empty reference");
        }
        refs[j["id"].get<std::string>()] = {j["reference"].get<std::string>(), j.value("persona_text", "")};
    });

    std::vector<std::pair<std::string, Ref>> records;  // (prediction, ref)
    pipe_detail::for_each_jsonl(pred_path, [&](const nlohmann::json& j, std::size_t line_no) {
        if (!j.contains("id") || !j.contains("prediction") || !j["prediction"].is_string()) {
            throw ValidationError(pred_path.string() + " line " + std::to_string(line_no) +
                                  ": expected {id, prediction}");
        }
        auto it = refs.find(j["id"].get<std::string>());
        if (it == refs.end()) {
            throw ValidationError(pred_path.string() + " line " + std::to_string(line_no) +
                                  ": no reference for id " + j["id"].dump());
        }
        records.emplace_back(j["prediction"].get<std::string>(), it->second);
    });
    if (records.empty()) throw ValidationError("score: no joined records");

    std::unordered_set<std::string> stopwords;
    if (!cfg.stopwords_path.empty()) stopwords = metrics::load_stopwords(cfg.stopwords_path);
    Embedder embedder(cfg.embed);

    std::vector<double> b1, b2, b3, b4, rl, pf1, pco;
    std::vector<std::string> predictions;
    for (const auto& [pred, ref] : records) {
        b1.push_back(metrics::bleu_n(pred, ref.reference, 1));
        b2.push_back(metrics::bleu_n(pred, ref.reference, 2));
        b3.push_back(metrics::bleu_n(pred, ref.reference, 3));
        b4.push_back(metrics::bleu_n(pred, ref.reference, 4));
        rl.push_back(metrics::rouge_l(pred, ref.reference));
        pf1.push_back(metrics::persona_f1(pred, ref.persona_text, stopwords));
        pco.push_back(metrics::persona_cosine(pred, ref.persona_text, embedder));
        predictions.push_back(pred);
    }

    nlohmann::ordered_json report;
    report["bleu1"] = pairwise_mean(b1);
    report["bleu2"] = pairwise_mean(b2);
    report["bleu3"] = pairwise_mean(b3);
    report["bleu4"] = pairwise_mean(b4);
    report["rougeL"] = pairwise_mean(rl);
    report["dist1"] = metrics::distinct_n(predictions, 1);
    report["dist2"] = metrics::distinct_n(predictions, 2);
    report["pf1"] = pairwise_mean(pf1);
    report["pco"] = pairwise_mean(pco);
    out << report.dump() << '\n';
    run.count("records", records.size());
    return run.finish(cfg.out_dir);
}

}  // namespace idl
