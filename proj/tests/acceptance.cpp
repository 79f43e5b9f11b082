// Acceptance suite: runs every shipping criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exit code is the failure count.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "idl/build.hpp"
#include "idl/dpoc.hpp"
#include "idl/metrics.hpp"
#include "idl/organize.hpp"
#include "idl/pipeline.hpp"

#include "oracles.hpp"
#include "synthetic.hpp"

using namespace idl;
namespace fs = std::filesystem;

namespace {

struct Check {
    int failures = 0;

    void run(int id, const std::string& name, const std::function<bool(std::string&)>& fn) {
        std::string detail;
        auto start = std::chrono::steady_clock::now();
        bool ok = false;
        try {
            ok = fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%s] criterion %d: %s (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", id, name.c_str(),
                    secs, detail.empty() ? "" : " — ", detail.c_str());
        if (!ok) ++failures;
    }
};

std::vector<Utterance> random_turns(std::mt19937_64& g, std::size_t max_len, std::size_t min_len = 1) {
    static const char* vocab[] = {"sun", "rain", "dog", "cat", "walk", "home", "farm",
                                  "city", "book", "game", "tea", "coffee", "song", "road"};
    std::size_t len = min_len + g() % (max_len - min_len + 1);
    std::vector<Utterance> turns;
    for (std::size_t i = 0; i < len; ++i) {
        std::string text;
        std::size_t words = 1 + g() % 4;
        for (std::size_t w = 0; w < words; ++w) {
            if (w) text += ' ';
            text += vocab[g() % 14];
        }
        turns.push_back({g() % 2 ? Role::Target : Role::Partner, std::move(text)});
    }
    return turns;
}

double conv_ed_oracle(const std::vector<Utterance>& a, const std::vector<Utterance>& b,
                      double lambda, const Embedder& e) {
    auto va = embed_turns(a, e);
    auto vb = embed_turns(b, e);
    oracle::ConvEdRecursive rec(
        a.size(), b.size(), [&](std::size_t i, std::size_t j) { return a[i].role == b[j].role; },
        [&](std::size_t i, std::size_t j) {
            return 1.0 - oracle::cosine_raw(va[i].values, vb[j].values);
        },
        lambda);
    return rec();
}

bool one_object_span_diff(const std::string& chosen, const std::string& criterion,
                          const std::vector<std::string>& objects) {
    auto a = text::tokenize(chosen);
    auto b = text::tokenize(criterion);
    if (a == b) return false;
    std::size_t i = 0;
    while (i < a.size() && i < b.size() && a[i] == b[i]) ++i;
    std::size_t j = 0;
    while (j < a.size() - i && j < b.size() - i && a[a.size() - 1 - j] == b[b.size() - 1 - j]) ++j;
    std::vector<std::string> mid(a.begin() + static_cast<std::ptrdiff_t>(i),
                                 a.end() - static_cast<std::ptrdiff_t>(j));
    if (mid.empty()) return true;
    for (const auto& obj : objects) {
        auto ot = text::tokenize(obj);
        if (ot.size() < mid.size()) continue;
        for (std::size_t s = 0; s + mid.size() <= ot.size(); ++s) {
            if (std::equal(mid.begin(), mid.end(), ot.begin() + static_cast<std::ptrdiff_t>(s))) {
                return true;
            }
        }
    }
    return false;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool within_budget(double seconds, double budget, std::string& detail) {
    if (seconds < budget) return true;
    detail = "runtime " + std::to_string(seconds) + "s over budget " + std::to_string(budget) + "s";
    return false;
}

}  // namespace

int main() {
    Check check;
    Embedder embedder{EmbedderConfig{}};
    const double lambda = 5.0;

    check.run(1, "convED oracle equivalence, 200 random pairs", [&](std::string& detail) {
        auto start = std::chrono::steady_clock::now();
        std::mt19937_64 g(10001);
        for (int i = 0; i < 200; ++i) {
            auto a = random_turns(g, 8);
            auto b = random_turns(g, 8);
            double got = conv_ed(a, b, lambda, embedder);
            double want = conv_ed_oracle(a, b, lambda, embedder);
            if (std::abs(got - want) > 1e-9) {
                detail = "pair " + std::to_string(i) + ": dp " + std::to_string(got) + " vs oracle " +
                         std::to_string(want);
                return false;
            }
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return within_budget(secs, 10.0, detail);
    });

    check.run(2, "convED analytic cases and symmetry", [&](std::string& detail) {
        std::mt19937_64 g(10002);
        for (int i = 0; i < 30; ++i) {
            auto a = random_turns(g, 8);
            if (conv_ed(a, a, lambda, embedder) != 0.0) {
                detail = "self-distance is not exactly zero";
                return false;
            }
        }
        const std::vector<Utterance> empty;
        for (std::size_t n = 1; n <= 8; ++n) {
            auto b = random_turns(g, n, n);
            if (conv_ed(empty, b, lambda, embedder) != static_cast<double>(n) ||
                conv_ed(b, empty, lambda, embedder) != static_cast<double>(n)) {
                detail = "empty-prefix base case broke at n=" + std::to_string(n);
                return false;
            }
        }
        std::vector<Utterance> pa = {{Role::Partner, "x"}};
        std::vector<Utterance> ta = {{Role::Target, "x"}};
        if (conv_ed(pa, ta, lambda, embedder) != 2.0) {
            detail = "cross-role pair should cost exactly 2";
            return false;
        }
        for (int i = 0; i < 100; ++i) {
            auto a = random_turns(g, 8);
            auto b = random_turns(g, 8);
            if (std::abs(conv_ed(a, b, lambda, embedder) - conv_ed(b, a, lambda, embedder)) > 1e-9) {
                detail = "asymmetry beyond 1e-9 at pair " + std::to_string(i);
                return false;
            }
        }
        return true;
    });

    check.run(3, "ordering exactness vs exhaustive permutations", [&](std::string& detail) {
        auto start = std::chrono::steady_clock::now();
        std::mt19937_64 g(10003);
        for (int trial = 0; trial < 50; ++trial) {
            std::size_t n = 2 + g() % 6;
            bool quantized = trial % 2 == 0;
            std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) {
                    double v = quantized ? static_cast<double>(g() % 6) * 0.5
                                         : static_cast<double>(g() % 100000) / 9973.0;
                    d[i][j] = v;
                    d[j][i] = v;
                }
            }
            auto got = optimal_order(d);
            auto want = oracle::best_path_bruteforce(d);
            if (got.cost != want.cost || got.order != want.order) {
                detail = "trial " + std::to_string(trial) + " diverged from brute force";
                return false;
            }
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return within_budget(secs, 5.0, detail);
    });

    check.run(4, "k-means WCSS monotone; separable blobs match exhaustive bipartition",
              [&](std::string& detail) {
        std::mt19937_64 g(10004);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<Vector> pts;
            std::size_t n = 3 + g() % 28;
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> p(3);
                for (double& x : p) x = static_cast<double>(g() % 1000) / 50.0;
                pts.push_back(Vector{std::move(p)});
            }
            auto res = kmeans(pts, 1 + static_cast<int>(g() % 5), g());
            for (std::size_t i = 1; i < res.wcss_history.size(); ++i) {
                if (res.wcss_history[i] > res.wcss_history[i - 1]) {
                    detail = "WCSS increased on fuzz case " + std::to_string(trial);
                    return false;
                }
            }
        }
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            std::vector<Vector> pts;
            std::vector<std::vector<double>> raw;
            auto add = [&](double cx, double cy) {
                std::vector<double> p = {cx + static_cast<double>(g() % 5) * 0.01,
                                         cy + static_cast<double>(g() % 5) * 0.01, 0.0};
                raw.push_back(p);
                pts.push_back(Vector{p});
            };
            for (int i = 0; i < 5; ++i) add(0.0, 0.0);   // intra spread <= ~0.06
            for (int i = 0; i < 4; ++i) add(8.0, 8.0);   // inter distance > 11
            auto res = kmeans(pts, 2, seed);
            if (res.c_effective != 2) {
                detail = "expected two effective clusters";
                return false;
            }
            auto best = oracle::best_bipartition(raw);
            std::vector<int> canon(res.labels.size());
            for (std::size_t i = 0; i < res.labels.size(); ++i) {
                canon[i] = res.labels[i] == res.labels[0] ? 0 : 1;
            }
            if (canon != best.labels) {
                detail = "assignment missed the minimum-WCSS bipartition at seed " + std::to_string(seed);
                return false;
            }
        }
        return true;
    });

    check.run(5, "DPOC kernel: DPO reduction, tabulated losses, finite-difference gradients",
              [&](std::string& detail) {
        std::mt19937_64 g(10005);
        auto u = [&] { return (static_cast<double>(g() >> 11) * 0x1.0p-53) * 8.0 - 4.0; };
        for (int i = 0; i < 2000; ++i) {
            double lo = u(), mid = u(), hi = u();
            if (lo > mid) std::swap(lo, mid);
            if (mid > hi) std::swap(mid, hi);
            if (lo > mid) std::swap(lo, mid);
            DpocHyper h{0.1 + static_cast<double>(g() % 30) / 10.0, static_cast<double>(g() % 5)};
            double full = dpoc_loss({hi, mid, lo}, h);
            double dpo = softplus(-h.beta * (hi - lo));
            if (std::abs(full - dpo) >= 1e-12) {
                detail = "reduction identity violated";
                return false;
            }
        }
        DpocHyper unit{1.0, 2.0};
        struct Tab {
            DeltaTriple dt;
            double want;
        } tabulated[] = {
            {{0, 0, 0}, std::log(2.0)},
            {{1, 0, -1}, std::log(1.0 + std::exp(-2.0))},
            {{0, 1, 0}, std::log(2.0) + 2.0},
        };
        for (const auto& t : tabulated) {
            if (std::abs(dpoc_loss(t.dt, unit) - t.want) > 1e-6) {
                detail = "tabulated loss value missed at 6 decimals";
                return false;
            }
        }
        // Moderate deltas keep the sigmoid away from saturation, where central
        // differences lose all significant digits to cancellation.
        const double step = 1e-6;
        auto u2 = [&] { return (static_cast<double>(g() >> 11) * 0x1.0p-53) * 4.0 - 2.0; };
        int checked = 0;
        while (checked < 100) {
            DeltaTriple dt{u2(), u2(), u2()};
            if (std::abs(dt.d_crt - dt.d_cho) < 1e-3 || std::abs(dt.d_rej - dt.d_crt) < 1e-3) continue;
            ++checked;
            DpocHyper h{0.3 + static_cast<double>(g() % 13) / 10.0, static_cast<double>(g() % 4)};
            auto grad = dpoc_grad(dt, h);
            struct Axis {
                double DeltaTriple::*field;
                double analytic;
            } axes[] = {{&DeltaTriple::d_cho, grad.g_cho},
                        {&DeltaTriple::d_crt, grad.g_crt},
                        {&DeltaTriple::d_rej, grad.g_rej}};
            for (const auto& ax : axes) {
                DeltaTriple hi = dt, lo = dt;
                hi.*ax.field += step;
                lo.*ax.field -= step;
                double fd = (dpoc_loss(hi, h) - dpoc_loss(lo, h)) / (2.0 * step);
                // Unit floor: in flat directions the analytic gradient is an
                // exact 0 and the finite difference carries only float noise.
                double denom = std::max({1.0, std::abs(ax.analytic), std::abs(fd)});
                if (std::abs(fd - ax.analytic) / denom >= 1e-5) {
                    detail = "gradient mismatch vs central differences";
                    return false;
                }
            }
        }
        return true;
    });

    check.run(6, "criterion constructor contracts on a 500-dialogue synthetic corpus",
              [&](std::string& detail) {
        testgen::GenOptions opt;
        opt.persons = 25;
        opt.dialogues_per_person = 20;
        opt.seed = 7;
        Corpus corpus = testgen::synthetic_corpus(opt);
        if (corpus.dialogues.size() != 500) {
            detail = "generator did not produce 500 dialogues";
            return false;
        }
        auto rules = RulesBackend::from_file(std::string(IDL_DATA_DIR) + "/patterns.tsv");

        std::unordered_map<std::string, ExtractionResult> extractions;
        for (const auto& d : corpus.dialogues) extractions[d.dialogue_id] = extract(d, rules);

        RunConfig cfg;
        cfg.seed = 7;
        cfg.samples_per_cluster = 8;
        std::vector<OrganizedSample> samples;
        for (const auto& [person, ids] : corpus.index) {
            auto po = pipe_detail::organize_person(person, ids, corpus, extractions, embedder, cfg);
            samples.insert(samples.end(), po.samples.begin(), po.samples.end());
        }
        if (samples.size() < 400) {
            detail = "too few constructor inputs: " + std::to_string(samples.size());
            return false;
        }

        std::vector<std::string> pool;
        {
            std::unordered_set<std::string> seen;
            for (const auto& d : corpus.dialogues) {
                for (const auto& t : d.turns) {
                    if (t.role == Role::Target && seen.insert(t.text).second) pool.push_back(t.text);
                }
            }
        }
        auto pool_vectors = embedder.embed_batch(pool);
        BuildContext ctx{corpus, embedder, rules, pool, &extractions, &pool_vectors, 10, 7};

        std::size_t emitted = 0, dropped = 0;
        std::map<CriterionType, std::size_t> per_type;
        for (const auto& sample : samples) {
            MslSample msl = build_msl(sample, corpus);
            const Dialogue& d = corpus.at(sample.target_id);
            std::string reason;
            auto pref = build_preference(msl, d, ctx, &reason);
            if (!pref) {
                ++dropped;
                if (reason.empty()) {
                    detail = "dropped sample without a recorded reason";
                    return false;
                }
                continue;
            }
            ++emitted;
            per_type[pref->criterion_type]++;
            if (pref->criterion == pref->chosen) {
                detail = "criterion equals chosen";
                return false;
            }

            // Independent re-derivation of the session triples and Q.
            std::vector<PersonaTriple> du;
            std::vector<std::string> q;
            for (const auto& id : sample.reference_ids) {
                auto ext = extract(corpus.at(id), rules);
                for (const auto& per_turn : ext.triples_per_turn) {
                    du.insert(du.end(), per_turn.begin(), per_turn.end());
                }
                for (const auto& t : corpus.at(id).turns) {
                    if (t.role == Role::Partner) q.push_back(t.text);
                }
            }
            for (std::size_t i = 0; i + 1 < d.turns.size(); ++i) {
                if (d.turns[i].role == Role::Partner) q.push_back(d.turns[i].text);
            }

            switch (pref->criterion_type) {
                case CriterionType::Inconsistency: {
                    std::vector<std::string> objects;
                    auto chosen_triples = rules.extract_utterances({pref->chosen});
                    for (const auto& t : chosen_triples[0]) objects.push_back(t.object);
                    if (!one_object_span_diff(pref->chosen, pref->criterion, objects)) {
                        detail = "inconsistency output is not a single-object-span edit";
                        return false;
                    }
                    break;
                }
                case CriterionType::Fabrication: {
                    auto crt_triples = rules.extract_utterances({pref->criterion})[0];
                    if (crt_triples.empty()) {
                        detail = "fabrication criterion has no extractable persona facts";
                        return false;
                    }
                    for (const auto& a : crt_triples) {
                        for (const auto& b : du) {
                            if (triple_equal_ci(a, b)) {
                                detail = "fabrication criterion shares a triple with the sessions";
                                return false;
                            }
                        }
                    }
                    break;
                }
                case CriterionType::Inversion: {
                    bool found = false;
                    for (const auto& text : q) found = found || text == pref->criterion;
                    if (!found) {
                        detail = "inversion criterion is not a verbatim member of Q";
                        return false;
                    }
                    break;
                }
            }
        }
        if (emitted + dropped != samples.size()) {
            detail = "drop accounting mismatch: " + std::to_string(emitted) + " + " +
                     std::to_string(dropped) + " != " + std::to_string(samples.size());
            return false;
        }
        for (auto type : {CriterionType::Inconsistency, CriterionType::Fabrication,
                          CriterionType::Inversion}) {
            if (per_type[type] == 0) {
                detail = std::string("no samples of type ") + std::string(criterion_name(type));
                return false;
            }
        }
        return true;
    });

    check.run(7, "metric golden values, exact", [&](std::string& detail) {
        if (metrics::distinct_n({"a a b"}, 1) != 2.0 / 3.0) {
            detail = "distinct-1 of [\"a a b\"]";
            return false;
        }
        if (metrics::rouge_l("a b c", "a c") != 0.8) {
            detail = "rouge-l of (\"a b c\", \"a c\")";
            return false;
        }
        if (metrics::bleu_n("a b", "a c", 1) != 0.5) {
            detail = "bleu-1 of (\"a b\", \"a c\")";
            return false;
        }
        if (metrics::bleu_n("a b c d", "a b c d", 1) != 1.0) {
            detail = "bleu-1 identity";
            return false;
        }
        if (metrics::persona_f1("i love dogs", "dogs farmer", {"i"}) != 0.5) {
            detail = "persona F1 worked example";
            return false;
        }
        return true;
    });

    check.run(8, "pipeline determinism across runs and thread counts", [&](std::string& detail) {
        auto start = std::chrono::steady_clock::now();
        fs::path fixture = fs::path(IDL_FIXTURE_DIR) / "fixture_corpus.jsonl";
        if (!fs::exists(fixture)) {
            detail = "bundled fixture corpus missing";
            return false;
        }
        {
            auto report = parse_corpus(fixture);
            if (report.corpus.dialogues.size() != 60 || !report.issues.empty()) {
                detail = "fixture must hold 60 valid dialogues";
                return false;
            }
        }
        fs::path base = fs::temp_directory_path() / ("idl-accept-" + std::to_string(::getpid()));
        fs::remove_all(base);

        auto run_pipeline = [&](const fs::path& store, int threads) {
            RunConfig cfg;
            cfg.seed = 17;
            cfg.threads = threads;
            cfg.patterns_path = std::string(IDL_DATA_DIR) + "/patterns.tsv";
            cfg.in_path = fixture.string();
            cfg.out_dir = store.string();
            run_ingest(cfg);
            cfg.in_path = store.string();
            run_extract(cfg);
            run_organize(cfg);
            run_build_sft(cfg);
            run_build_dpoc(cfg);
        };
        run_pipeline(base / "t1", 1);
        run_pipeline(base / "t8", 8);
        run_pipeline(base / "t1b", 1);

        for (const char* name : {kSftFile, kPrefFile}) {
            std::string a = slurp(base / "t1" / name);
            if (a.empty()) {
                detail = std::string(name) + " is empty";
                return false;
            }
            if (a != slurp(base / "t8" / name) || a != slurp(base / "t1b" / name)) {
                detail = std::string(name) + " differs across runs";
                return false;
            }
        }
        fs::remove_all(base);
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return within_budget(secs, 60.0, detail);
    });

    if (check.failures == 0) {
        std::printf("all 8 criteria passed\n");
    } else {
        std::printf("%d criterion(s) failed\n", check.failures);
    }
    return check.failures;
}
