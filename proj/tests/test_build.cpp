#include <map>

#include "catch_amalgamated.hpp"

#include "idl/build.hpp"

#include "synthetic.hpp"

using namespace idl;

namespace {

Embedder test_embedder() { return Embedder(EmbedderConfig{}); }

// Test double: utterance -> fixed triples.
class FixedBackend : public ExtractorBackend {
public:
    std::map<std::string, std::vector<PersonaTriple>> table;

    std::vector<std::vector<PersonaTriple>> extract_utterances(
        const std::vector<std::string>& utterances) const override {
        std::vector<std::vector<PersonaTriple>> out;
        for (const auto& u : utterances) {
            auto it = table.find(u);
            out.push_back(it == table.end() ? std::vector<PersonaTriple>{} : it->second);
        }
        return out;
    }
};

Corpus two_session_corpus() {
    Corpus corpus;
    Dialogue ref;
    ref.dialogue_id = "ref1";
    ref.target_id = "u";
    ref.partner_id = "v";
    ref.turns = {{Role::Partner, "hi"}, {Role::Target, "hey"}};
    corpus.add(ref);

    Dialogue tgt;
    tgt.dialogue_id = "tgt";
    tgt.target_id = "u";
    tgt.partner_id = "v";
    tgt.turns = {{Role::Partner, "job?"}, {Role::Target, "farmer"}};
    corpus.add(tgt);
    return corpus;
}

// True iff `criterion` equals `chosen` outside one contiguous token window
// that lies inside the token run of one extracted object.
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
    if (mid.empty()) return true;  // pure insertion inside the span
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

}  // namespace

TEST_CASE("build_msl renders sessions, separator, context, and the cue line") {
    Corpus corpus = two_session_corpus();
    OrganizedSample s;
    s.reference_ids = {"ref1"};
    s.target_id = "tgt";
    s.cluster = 0;

    auto msl = build_msl(s, corpus);
    REQUIRE(msl.prompt == "[Partner]: hi\n[Target]: hey\n<SEP_SESSION>\n[Partner]: job?\n[Target]:");
    REQUIRE(msl.response == "farmer");
    REQUIRE(msl.meta.target_id == "tgt");
    REQUIRE(msl.meta.reference_ids == std::vector<std::string>{"ref1"});
}

TEST_CASE("build_msl with no references renders the bare context") {
    Corpus corpus = two_session_corpus();
    OrganizedSample s;
    s.target_id = "tgt";
    auto msl = build_msl(s, corpus);
    REQUIRE(msl.prompt == "[Partner]: job?\n[Target]:");
    REQUIRE(msl.prompt.find(kSessionSeparator) == std::string::npos);
}

TEST_CASE("reference order permutes prompt blocks identically") {
    Corpus corpus = two_session_corpus();
    Dialogue second;
    second.dialogue_id = "ref2";
    second.target_id = "u";
    second.partner_id = "w";
    second.turns = {{Role::Partner, "yo"}, {Role::Target, "hello"}};
    corpus.add(second);

    OrganizedSample ab;
    ab.reference_ids = {"ref1", "ref2"};
    ab.target_id = "tgt";
    OrganizedSample ba;
    ba.reference_ids = {"ref2", "ref1"};
    ba.target_id = "tgt";

    std::string a_block = "[Partner]: hi\n[Target]: hey";
    std::string b_block = "[Partner]: yo\n[Target]: hello";
    std::string sep = "\n<SEP_SESSION>\n";
    std::string tail = "[Partner]: job?\n[Target]:";
    REQUIRE(build_msl(ab, corpus).prompt == a_block + sep + b_block + sep + tail);
    REQUIRE(build_msl(ba, corpus).prompt == b_block + sep + a_block + sep + tail);
}

TEST_CASE("build_msl rejects unresolved ids") {
    Corpus corpus = two_session_corpus();
    OrganizedSample s;
    s.reference_ids = {"missing"};
    s.target_id = "tgt";
    REQUIRE_THROWS_AS(build_msl(s, corpus), UnresolvedId);
}

TEST_CASE("inconsistency substitutes a conflicting object in place") {
    FixedBackend ext;
    std::string h_cho = "I am a farmer live in a small town";
    ext.table[h_cho] = {{"I", "job", "farmer"}};
    std::vector<PersonaTriple> du = {{"I", "job", "spaceman"}};

    auto crt = make_inconsistency(h_cho, du, ext, 5);
    REQUIRE(crt.has_value());
    REQUIRE(*crt == "I am a spaceman live in a small town");
}

TEST_CASE("inconsistency prefers a same-relation conflict over any-object fallback") {
    FixedBackend ext;
    std::string h_cho = "i am a farmer";
    ext.table[h_cho] = {{"I", "job", "farmer"}};
    std::vector<PersonaTriple> du = {
        {"I", "like", "dogs"}, {"I", "job", "spaceman"}, {"I", "home", "boston"}};
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
        auto crt = make_inconsistency(h_cho, du, ext, seed);
        REQUIRE(crt.has_value());
        REQUIRE(*crt == "i am a spaceman");
    }
}

TEST_CASE("inconsistency is absent when nothing can be substituted") {
    FixedBackend ext;
    // No extractable triple in the chosen response.
    REQUIRE_FALSE(make_inconsistency("plain sentence", {{"I", "job", "x"}}, ext, 1).has_value());

    // Every session triple shares the object, so no conflict exists.
    std::string h_cho = "i am a farmer";
    ext.table[h_cho] = {{"I", "job", "farmer"}};
    std::vector<PersonaTriple> same = {{"I", "job", "farmer"}, {"I", "was", "Farmer"}};
    REQUIRE_FALSE(make_inconsistency(h_cho, same, ext, 1).has_value());

    // Empty session triples.
    REQUIRE_FALSE(make_inconsistency(h_cho, {}, ext, 1).has_value());

    // Triple whose object does not occur in the text cannot be spliced.
    std::string odd = "i am a farmer";
    ext.table[odd] = {{"I", "job", "rancher"}};
    REQUIRE_FALSE(make_inconsistency(odd, {{"I", "job", "pilot"}}, ext, 1).has_value());
}

TEST_CASE("fabrication keeps semantically close candidates with novel persona facts") {
    FixedBackend ext;
    std::string h_cho = "my hobbies are watching movies and skating";
    std::string hobby = "My hobbies are watching movies and riding bicycles";
    ext.table[hobby] = {{"I", "hobby", "watching movies"}, {"I", "hobby", "riding bicycles"}};
    ext.table["i am a farmer"] = {{"I", "job", "farmer"}};

    std::vector<std::string> pool = {"i am a farmer", hobby};
    std::vector<PersonaTriple> du = {{"I", "job", "farmer"}};

    auto e = test_embedder();
    auto crt = make_fabrication(h_cho, pool, du, 10, e, ext, 3);
    REQUIRE(crt.has_value());
    REQUIRE(*crt == hobby);
}

TEST_CASE("fabrication is absent when the filter exhausts the pool") {
    FixedBackend ext;
    auto e = test_embedder();
    std::vector<PersonaTriple> du = {{"I", "job", "farmer"}};
    ext.table["i am a farmer"] = {{"I", "job", "farmer"}};

    // Candidate shares a triple with the sessions.
    REQUIRE_FALSE(make_fabrication("text", {"i am a farmer"}, du, 10, e, ext, 1).has_value());
    // Candidate has no extractable persona facts at all.
    REQUIRE_FALSE(make_fabrication("text", {"nothing here"}, du, 10, e, ext, 1).has_value());
    // Empty pool.
    REQUIRE_FALSE(make_fabrication("text", {}, du, 10, e, ext, 1).has_value());
    // The chosen response itself is not a fabrication candidate.
    ext.table["text"] = {{"I", "like", "text"}};
    REQUIRE_FALSE(make_fabrication("text", {"text"}, du, 10, e, ext, 1).has_value());
}

TEST_CASE("fabrication respects the top-m ranking window") {
    FixedBackend ext;
    auto e = test_embedder();
    std::string h_cho = "i like dogs and long walks";
    std::string close = "i like dogs and short walks";   // top-1 by similarity, shares a triple
    std::string far = "my favorite food is soup";        // eligible but outside m=1
    ext.table[close] = {{"I", "like", "dogs"}};
    ext.table[far] = {{"I", "food", "soup"}};
    std::vector<PersonaTriple> du = {{"I", "like", "dogs"}};

    REQUIRE_FALSE(make_fabrication(h_cho, {close, far}, du, 1, e, ext, 1).has_value());
    auto wide = make_fabrication(h_cho, {close, far}, du, 2, e, ext, 1);
    REQUIRE(wide.has_value());
    REQUIRE(*wide == far);
}

TEST_CASE("inversion returns the partner utterance most similar to the response") {
    auto e = test_embedder();
    Dialogue session;
    session.dialogue_id = "s1";
    session.target_id = "u";
    session.partner_id = "v";
    session.turns = {{Role::Partner, "I live in New York"}, {Role::Target, "nice place to visit"}};
    std::vector<const Dialogue*> du = {&session};
    std::vector<Utterance> context = {{Role::Partner, "what time is it"}};

    std::string r_cho = "I am a farmer living in a small town";
    double ny = cosine(e.embed("I live in New York"), e.embed(r_cho));
    double filler = cosine(e.embed("what time is it"), e.embed(r_cho));
    REQUIRE(ny > filler);  // precondition for the assertion below

    auto crt = make_inversion(du, context, r_cho, e);
    REQUIRE(crt.has_value());
    REQUIRE(*crt == "I live in New York");
}

TEST_CASE("inversion edge cases: empty and singleton Q") {
    auto e = test_embedder();
    REQUIRE_FALSE(make_inversion({}, {{Role::Target, "just me"}}, "text", e).has_value());

    std::vector<Utterance> context = {{Role::Partner, "totally unrelated filler"}};
    auto crt = make_inversion({}, context, "completely different words", e);
    REQUIRE(crt.has_value());
    REQUIRE(*crt == "totally unrelated filler");
}

TEST_CASE("build_preference composes chosen, rejected, and a criterion") {
    Corpus corpus;
    Dialogue ref;
    ref.dialogue_id = "r1";
    ref.target_id = "u";
    ref.partner_id = "v";
    ref.turns = {{Role::Partner, "where do you live?"}, {Role::Target, "i live in boston"}};
    corpus.add(ref);

    Dialogue d;
    d.dialogue_id = "t1";
    d.target_id = "u";
    d.partner_id = "v";
    d.turns = {{Role::Partner, "what do you do?"}, {Role::Target, "i am a farmer"}};
    d.candidates = std::vector<std::string>{"i am a farmer", "hmm", "purple monkey"};
    corpus.add(d);

    FixedBackend ext;
    ext.table["i am a farmer"] = {{"I", "job", "farmer"}};
    ext.table["i live in boston"] = {{"I", "home", "boston"}};
    auto e = test_embedder();
    std::vector<std::string> pool = {"i live in boston", "i am a farmer"};

    MslSample msl;
    msl.prompt = "prompt text";
    msl.meta.target_id = "t1";
    msl.meta.reference_ids = {"r1"};

    BuildContext ctx{corpus, e, ext, pool};
    ctx.seed = 11;
    std::string reason;
    auto sample = build_preference(msl, d, ctx, &reason);
    REQUIRE(sample.has_value());
    REQUIRE(sample->prompt == "prompt text");
    REQUIRE(sample->chosen == "i am a farmer");
    REQUIRE(sample->rejected == "purple monkey");
    REQUIRE_FALSE(sample->criterion.empty());
    REQUIRE(sample->criterion != sample->chosen);

    // Determinism: the same inputs give the same sample.
    auto again = build_preference(msl, d, ctx, &reason);
    REQUIRE(again->criterion == sample->criterion);
    REQUIRE(again->criterion_type == sample->criterion_type);

    // Candidate precondition.
    Dialogue no_cand = d;
    no_cand.candidates.reset();
    REQUIRE_THROWS_AS(build_preference(msl, no_cand, ctx, &reason), MissingCandidates);
}

TEST_CASE("a failed criterion type falls through the fixed cycle") {
    Corpus corpus;
    Dialogue d;
    d.dialogue_id = "t1";
    d.target_id = "u";
    d.partner_id = "v";
    d.turns = {{Role::Partner, "anything to declare?"}, {Role::Target, "not much really"}};
    d.candidates = std::vector<std::string>{"not much really", "worse answer"};
    corpus.add(d);

    // No triples anywhere and an empty pool: inconsistency and fabrication are
    // impossible, so every draw must land on inversion.
    FixedBackend ext;
    auto e = test_embedder();
    std::vector<std::string> pool;
    MslSample msl;
    msl.meta.target_id = "t1";

    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        BuildContext ctx{corpus, e, ext, pool};
        ctx.seed = seed;
        std::string reason;
        auto sample = build_preference(msl, d, ctx, &reason);
        REQUIRE(sample.has_value());
        REQUIRE(sample->criterion_type == CriterionType::Inversion);
        REQUIRE(sample->criterion == "anything to declare?");
    }
}

TEST_CASE("build_preference drops the sample when all constructors fail") {
    Corpus corpus;
    Dialogue d;
    d.dialogue_id = "t1";
    d.target_id = "u";
    d.partner_id = "v";
    // The only partner utterance equals the gold response, so inversion would
    // collide with chosen.
    d.turns = {{Role::Partner, "echo"}, {Role::Target, "echo"}};
    d.candidates = std::vector<std::string>{"echo", "something worse"};
    corpus.add(d);

    FixedBackend ext;  // no triples anywhere
    auto e = test_embedder();
    std::vector<std::string> pool;

    MslSample msl;
    msl.meta.target_id = "t1";

    BuildContext ctx{corpus, e, ext, pool};
    std::string reason;
    auto sample = build_preference(msl, d, ctx, &reason);
    REQUIRE_FALSE(sample.has_value());
    REQUIRE(reason == "constructors_exhausted");

    // Gold mismatch in candidates is dropped, not thrown.
    Dialogue bad = d;
    bad.dialogue_id = "t2";
    bad.candidates = std::vector<std::string>{"not the gold", "worse"};
    corpus.add(bad);
    MslSample msl2;
    msl2.meta.target_id = "t2";
    auto s2 = build_preference(msl2, bad, ctx, &reason);
    REQUIRE_FALSE(s2.has_value());
    REQUIRE(reason == "invalid_candidates");
}

TEST_CASE("criterion constructors hold their contracts on a synthetic corpus") {
    testgen::GenOptions opt;
    opt.persons = 4;
    opt.dialogues_per_person = 8;
    Corpus corpus = testgen::synthetic_corpus(opt);
    auto rules = RulesBackend::from_string(
        "i am a {object}\tjob\ni like {object}\tlike\ni live in {object}\thome\n"
        "my favorite food is {object}\tfood\ni enjoy {object}\thobby\n");
    auto e = test_embedder();

    int checked_inconsistency = 0;
    int checked_fabrication = 0;
    std::mt19937_64 g(1);
    for (const auto& d : corpus.dialogues) {
        std::string gold = d.turns.back().text;
        // Session triples from a few other dialogues of the same person.
        std::vector<PersonaTriple> du;
        for (const auto& id : corpus.index.at(d.target_id)) {
            if (id == d.dialogue_id) continue;
            auto ext = extract(corpus.at(id), rules);
            for (const auto& per_turn : ext.triples_per_turn) {
                du.insert(du.end(), per_turn.begin(), per_turn.end());
            }
        }
        auto crt = make_inconsistency(gold, du, rules, g());
        if (crt) {
            ++checked_inconsistency;
            std::vector<std::string> objects;
            auto gold_triples = rules.extract_utterances({gold});
            for (const auto& t : gold_triples[0]) objects.push_back(t.object);
            REQUIRE(one_object_span_diff(gold, *crt, objects));
        }

        std::vector<std::string> pool;
        for (const auto& other : corpus.dialogues) {
            if (other.target_id == d.target_id) continue;
            pool.push_back(other.turns.back().text);
        }
        auto fab = make_fabrication(gold, pool, du, 10, e, rules, g());
        if (fab) {
            ++checked_fabrication;
            auto fab_triples = rules.extract_utterances({*fab})[0];
            REQUIRE_FALSE(fab_triples.empty());
            for (const auto& a : fab_triples) {
                for (const auto& b : du) {
                    REQUIRE_FALSE(triple_equal_ci(a, b));
                }
            }
        }
    }
    REQUIRE(checked_inconsistency > 10);
    REQUIRE(checked_fabrication > 10);
}
