// idl: turn raw dyadic dialogue corpora into reference-conditioned SFT samples
// and criterion-anchored preference data, evaluate DPOC deltas, and score
// predictions. Stages: ingest -> extract -> organize -> build-sft ->
// build-dpoc, plus loss-eval and score.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "idl/pipeline.hpp"

namespace {

// String-typed views of the enum fields so the config file and flags share
// one representation. Converted in finalize().
struct CliState {
    idl::RunConfig cfg;
    std::string embed_backend = "test";
    std::string field_order = "sro";
    std::string config_path;
};

void apply_env(CliState& st) {
    if (const char* v = std::getenv("IDL_CACHE_DIR")) st.cfg.embed.cache_dir = v;
    if (const char* v = std::getenv("IDL_EMBED_ENDPOINT")) st.cfg.embed.endpoint = v;
    if (const char* v = std::getenv("IDL_EXTRACT_ENDPOINT")) st.cfg.extract_endpoint = v;
}

// Flat JSON keys mirroring the long flags. Precedence: defaults, then
// environment, then config file, then flags.
void apply_config_file(CliState& st, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw idl::IoError("cannot open config file: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw idl::ValidationError("config file is not a JSON object: " + path);
    }
    for (const auto& [key, value] : j.items()) {
        if (key == "seed") st.cfg.seed = value.get<std::uint64_t>();
        else if (key == "clusters") st.cfg.clusters = value.get<int>();
        else if (key == "neighbors") st.cfg.neighbors = value.get<int>();
        else if (key == "lambda_sub") st.cfg.lambda_sub = value.get<double>();
        else if (key == "beta") st.cfg.beta = value.get<double>();
        else if (key == "lambda_pen") st.cfg.lambda_pen = value.get<double>();
        else if (key == "fabrication_m") st.cfg.fabrication_m = value.get<int>();
        else if (key == "threads") st.cfg.threads = value.get<int>();
        else if (key == "samples_per_cluster") st.cfg.samples_per_cluster = value.get<int>();
        else if (key == "embed_backend") st.embed_backend = value.get<std::string>();
        else if (key == "embed_dim") st.cfg.embed.dim = value.get<std::size_t>();
        else if (key == "embed_model") st.cfg.embed.model_id = value.get<std::string>();
        else if (key == "embed_endpoint") st.cfg.embed.endpoint = value.get<std::string>();
        else if (key == "cache_dir") st.cfg.embed.cache_dir = value.get<std::string>();
        else if (key == "extractor") st.cfg.extractor_backend = value.get<std::string>();
        else if (key == "patterns") st.cfg.patterns_path = value.get<std::string>();
        else if (key == "extract_endpoint") st.cfg.extract_endpoint = value.get<std::string>();
        else if (key == "field_order") st.field_order = value.get<std::string>();
        else if (key == "extract_timeout") st.cfg.extract_timeout_s = value.get<double>();
        else if (key == "stopwords") st.cfg.stopwords_path = value.get<std::string>();
        else throw idl::ValidationError("unknown config key: " + key);
    }
}

void finalize(CliState& st) {
    if (st.embed_backend == "test") st.cfg.embed.backend = idl::EmbedBackend::Test;
    else if (st.embed_backend == "remote") st.cfg.embed.backend = idl::EmbedBackend::Remote;
    else throw idl::ValidationError("embed backend must be \"test\" or \"remote\"");
    if (st.field_order == "sro") st.cfg.field_order = idl::FieldOrder::SRO;
    else if (st.field_order == "ors") st.cfg.field_order = idl::FieldOrder::ORS;
    else throw idl::ValidationError("field order must be \"sro\" or \"ors\"");
    if (st.cfg.threads < 1) throw idl::ValidationError("threads must be >= 1");
    if (st.cfg.embed.backend == idl::EmbedBackend::Remote && st.cfg.embed.endpoint.empty()) {
        throw idl::ValidationError("remote embedder needs --embed-endpoint (or IDL_EMBED_ENDPOINT)");
    }
}

void add_common_options(CLI::App* cmd, CliState& st) {
    cmd->add_option("--config", st.config_path, "JSON config file (flags override it)");
    cmd->add_option("--seed", st.cfg.seed, "global random seed");
    cmd->add_option("--clusters", st.cfg.clusters, "maximum clusters per person");
    cmd->add_option("--neighbors", st.cfg.neighbors, "maximum reference dialogues per sample");
    cmd->add_option("--lambda-sub", st.cfg.lambda_sub, "substitution cost scale for the session distance");
    cmd->add_option("--beta", st.cfg.beta, "preference loss temperature");
    cmd->add_option("--lambda-pen", st.cfg.lambda_pen, "criterion penalty coefficient");
    cmd->add_option("--fabrication-m", st.cfg.fabrication_m, "candidate pool size for fabrication criteria");
    cmd->add_option("--threads", st.cfg.threads, "worker threads (output is thread-count independent)");
    cmd->add_option("--samples-per-cluster", st.cfg.samples_per_cluster, "targets drawn per cluster");
    cmd->add_option("--embed-backend", st.embed_backend, "sentence embedder: test | remote");
    cmd->add_option("--embed-dim", st.cfg.embed.dim, "embedding dimension");
    cmd->add_option("--embed-model", st.cfg.embed.model_id, "embedding model id (cache key component)");
    cmd->add_option("--embed-endpoint", st.cfg.embed.endpoint, "remote embedder base URL");
    cmd->add_option("--cache-dir", st.cfg.embed.cache_dir, "embedding disk cache directory");
    cmd->add_option("--extractor", st.cfg.extractor_backend, "persona extractor: rules | remote");
    cmd->add_option("--patterns", st.cfg.patterns_path, "pattern file for the rules extractor");
    cmd->add_option("--extract-endpoint", st.cfg.extract_endpoint, "remote extractor base URL");
    cmd->add_option("--field-order", st.field_order, "triple field order in extractor output: sro | ors");
    cmd->add_option("--extract-timeout", st.cfg.extract_timeout_s, "extractor request timeout (seconds)");
    cmd->add_option("--stopwords", st.cfg.stopwords_path, "stopword list for persona F1");
}

}  // namespace

int main(int argc, char** argv) {
    CliState st;
    apply_env(st);

    // The config file must be applied before flag parsing so flags override it.
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        std::string path;
        if (a == "--config" && i + 1 < argc) path = argv[i + 1];
        else if (a.rfind("--config=", 0) == 0) path = a.substr(9);
        if (!path.empty()) {
            try {
                apply_config_file(st, path);
            } catch (const idl::ValidationError& e) {
                std::cerr << "error: " << e.what() << '\n';
                return 1;
            } catch (const idl::Error& e) {
                std::cerr << "error: " << e.what() << '\n';
                return 2;
            }
            break;
        }
    }

    CLI::App app{"In-dialogue learning data toolkit"};
    app.require_subcommand(1);

    auto* ingest = app.add_subcommand("ingest", "validate a raw corpus and write the normalized store");
    ingest->add_option("--in", st.cfg.in_path, "raw corpus JSONL")->required();
    ingest->add_option("--out", st.cfg.out_dir, "output directory")->required();
    add_common_options(ingest, st);

    auto* extract = app.add_subcommand("extract", "mine persona triples per dialogue");
    extract->add_option("--in", st.cfg.in_path, "store directory (or corpus file)")->required();
    extract->add_option("--out", st.cfg.out_dir, "output directory")->required();
    add_common_options(extract, st);

    auto* organize = app.add_subcommand("organize", "cluster sessions and order references");
    organize->add_option("--in", st.cfg.in_path, "store directory")->required();
    organize->add_option("--out", st.cfg.out_dir, "output directory")->required();
    add_common_options(organize, st);

    auto* build_sft = app.add_subcommand("build-sft", "render supervised prompt/response samples");
    build_sft->add_option("--in", st.cfg.in_path, "store directory")->required();
    build_sft->add_option("--out", st.cfg.out_dir, "output directory")->required();
    add_common_options(build_sft, st);

    auto* build_dpoc = app.add_subcommand("build-dpoc", "construct preference triplets with criteria");
    build_dpoc->add_option("--in", st.cfg.in_path, "store directory")->required();
    build_dpoc->add_option("--out", st.cfg.out_dir, "output directory")->required();
    add_common_options(build_dpoc, st);

    auto* loss_eval = app.add_subcommand("loss-eval", "DPOC statistics over a delta JSONL file");
    loss_eval->add_option("--in", st.cfg.in_path, "deltas JSONL: {d_cho, d_crt, d_rej} per line")->required();
    loss_eval->add_option("--out", st.cfg.out_dir, "directory for the run manifest (optional)");
    add_common_options(loss_eval, st);

    auto* score = app.add_subcommand("score", "evaluate predictions against references");
    score->add_option("--pred", st.cfg.pred_path, "predictions JSONL: {id, prediction}")->required();
    score->add_option("--ref", st.cfg.ref_path, "references JSONL: {id, reference, persona_text}")->required();
    score->add_option("--out", st.cfg.out_dir, "directory for the run manifest (optional)");
    add_common_options(score, st);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        finalize(st);
        if (ingest->parsed()) {
            auto manifest = idl::run_ingest(st.cfg);
            for (const auto& issue : manifest["issues"]) {
                std::cerr << "rejected: " << issue.get<std::string>() << '\n';
            }
            std::uint64_t rejected = manifest["drops"]["rejected_lines"].get<std::uint64_t>();
            std::cerr << "ingest: " << manifest["counts"]["dialogues"] << " dialogues, " << rejected
                      << " rejected\n";
            return rejected > 0 ? 1 : 0;
        }
        if (extract->parsed()) {
            auto manifest = idl::run_extract(st.cfg);
            std::cerr << "extract: " << manifest["counts"]["triples"] << " triples over "
                      << manifest["counts"]["dialogues"] << " dialogues\n";
            return 0;
        }
        if (organize->parsed()) {
            auto manifest = idl::run_organize(st.cfg);
            std::cerr << "organize: " << manifest["counts"]["samples"] << " samples from "
                      << manifest["counts"]["persons"] << " persons\n";
            return 0;
        }
        if (build_sft->parsed()) {
            auto manifest = idl::run_build_sft(st.cfg);
            std::cerr << "build-sft: " << manifest["counts"]["samples"] << " samples\n";
            return 0;
        }
        if (build_dpoc->parsed()) {
            auto manifest = idl::run_build_dpoc(st.cfg);
            std::cerr << "build-dpoc: " << manifest["counts"]["emitted"] << " of "
                      << manifest["counts"]["inputs"] << " samples emitted\n";
            return 0;
        }
        if (loss_eval->parsed()) {
            idl::run_loss_eval(st.cfg, std::cout);
            return 0;
        }
        if (score->parsed()) {
            idl::run_score(st.cfg, std::cout);
            return 0;
        }
    } catch (const idl::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const idl::IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const idl::BackendError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
