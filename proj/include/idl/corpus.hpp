#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "idl/errors.hpp"
#include "idl/text.hpp"

namespace idl {

enum class Role { Partner, Target };

inline std::string_view role_name(Role r) {
    return r == Role::Target ? "target" : "partner";
}

struct Utterance {
    Role role = Role::Partner;
    std::string text;

    bool operator==(const Utterance&) const = default;
};

// A dyadic session (q_1, r_1, ..., q_t, r_t): partner opens, target closes,
// roles alternate strictly.
struct Dialogue {
    std::string dialogue_id;
    std::string target_id;
    std::string partner_id;
    std::vector<Utterance> turns;
    std::optional<std::vector<std::string>> candidates;  // best to worst; [0] is the gold response

    bool operator==(const Dialogue&) const = default;
};

struct Corpus {
    std::vector<Dialogue> dialogues;
    std::map<std::string, std::vector<std::string>> index;  // target_id -> dialogue ids, file order
    std::unordered_map<std::string, std::size_t> by_id;

    void add(Dialogue d) {
        by_id.emplace(d.dialogue_id, dialogues.size());
        index[d.target_id].push_back(d.dialogue_id);
        dialogues.push_back(std::move(d));
    }

    const Dialogue* find(const std::string& id) const {
        auto it = by_id.find(id);
        return it == by_id.end() ? nullptr : &dialogues[it->second];
    }

    const Dialogue& at(const std::string& id) const {
        const Dialogue* d = find(id);
        if (!d) throw UnresolvedId(id);
        return *d;
    }
};

enum class ParseErrorKind { MalformedLine, DuplicateId, AlternationViolation };

inline std::string_view parse_error_name(ParseErrorKind k) {
    switch (k) {
        case ParseErrorKind::MalformedLine: return "MalformedLine";
        case ParseErrorKind::DuplicateId: return "DuplicateId";
        case ParseErrorKind::AlternationViolation: return "AlternationViolation";
    }
    return "?";
}

struct ParseIssue {
    ParseErrorKind kind = ParseErrorKind::MalformedLine;
    std::size_t line_no = 0;  // 1-based
    std::string dialogue_id;
    int turn_index = -1;
    std::string reason;

    std::string to_string() const {
        std::string s = "line " + std::to_string(line_no) + ": " + std::string(parse_error_name(kind));
        if (!dialogue_id.empty()) s += " [" + dialogue_id + "]";
        if (turn_index >= 0) s += " turn " + std::to_string(turn_index);
        if (!reason.empty()) s += ": " + reason;
        return s;
    }
};

struct ParseReport {
    Corpus corpus;
    std::vector<ParseIssue> issues;
};

namespace detail {

inline std::optional<std::string> require_string(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) return std::nullopt;
    std::string v = it->get<std::string>();
    if (v.empty()) return std::nullopt;
    return v;
}

}  // namespace detail

// Parses one JSONL record. Returns the dialogue or records the issue; never
// throws on bad input.
inline std::optional<Dialogue> parse_dialogue_line(std::string_view line, std::size_t line_no,
                                                   std::vector<ParseIssue>& issues) {
    auto malformed = [&](std::string reason) {
        issues.push_back({ParseErrorKind::MalformedLine, line_no, "", -1, std::move(reason)});
        return std::nullopt;
    };

    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) return malformed("invalid JSON");
    if (!j.is_object()) return malformed("record is not a JSON object");

    Dialogue d;
    auto id = detail::require_string(j, "dialogue_id");
    auto target = detail::require_string(j, "target");
    auto partner = detail::require_string(j, "partner");
    if (!id) return malformed("missing or empty \"dialogue_id\"");
    if (!target) return malformed("missing or empty \"target\"");
    if (!partner) return malformed("missing or empty \"partner\"");
    d.dialogue_id = *id;
    d.target_id = *target;
    d.partner_id = *partner;

    auto turns = j.find("turns");
    if (turns == j.end() || !turns->is_array()) return malformed("missing \"turns\" array");
    if (turns->size() < 2) return malformed("need at least one (partner, target) pair");
    if (turns->size() % 2 != 0) return malformed("turns must pair up (partner, target): odd count");

    for (std::size_t i = 0; i < turns->size(); ++i) {
        const auto& t = (*turns)[i];
        if (!t.is_object() || !t.contains("role") || !t.contains("text") || !t["role"].is_string() ||
            !t["text"].is_string()) {
            return malformed("turn " + std::to_string(i) + " must be {\"role\", \"text\"}");
        }
        std::string role = t["role"].get<std::string>();
        Role r;
        if (role == "partner") {
            r = Role::Partner;
        } else if (role == "target") {
            r = Role::Target;
        } else {
            return malformed("turn " + std::to_string(i) + " has unknown role \"" + role + "\"");
        }
        Role expected = (i % 2 == 0) ? Role::Partner : Role::Target;
        if (r != expected) {
            issues.push_back({ParseErrorKind::AlternationViolation, line_no, d.dialogue_id,
                              static_cast<int>(i), "expected role \"" + std::string(role_name(expected)) + "\""});
            return std::nullopt;
        }
        std::string txt = t["text"].get<std::string>();
        if (text::trim(txt).empty()) {
            return malformed("turn " + std::to_string(i) + " has empty text");
        }
        d.turns.push_back({r, std::move(txt)});
    }

    if (auto cand = j.find("candidates"); cand != j.end() && !cand->is_null()) {
        if (!cand->is_array() || cand->empty()) return malformed("\"candidates\" must be a non-empty array");
        std::vector<std::string> cs;
        for (const auto& c : *cand) {
            if (!c.is_string() || c.get<std::string>().empty()) return malformed("empty candidate");
            cs.push_back(c.get<std::string>());
        }
        if (cs.front() != d.turns.back().text) {
            return malformed("candidates[0] must equal the gold response (candidates are best-to-worst)");
        }
        d.candidates = std::move(cs);
    }
    return d;
}

inline ParseReport parse_corpus(std::istream& in) {
    ParseReport report;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::trim(line).empty()) continue;
        auto d = parse_dialogue_line(line, line_no, report.issues);
        if (!d) continue;
        if (report.corpus.by_id.count(d->dialogue_id)) {
            report.issues.push_back({ParseErrorKind::DuplicateId, line_no, d->dialogue_id, -1,
                                     "dialogue_id already seen"});
            continue;
        }
        report.corpus.add(std::move(*d));
    }
    return report;
}

inline ParseReport parse_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file: " + path.string());
    return parse_corpus(in);
}

// Field order is fixed so that parse(serialize(x)) round-trips byte-exactly.
inline std::string serialize_dialogue(const Dialogue& d) {
    nlohmann::ordered_json j;
    j["dialogue_id"] = d.dialogue_id;
    j["target"] = d.target_id;
    j["partner"] = d.partner_id;
    auto turns = nlohmann::ordered_json::array();
    for (const auto& t : d.turns) {
        turns.push_back({{"role", std::string(role_name(t.role))}, {"text", t.text}});
    }
    j["turns"] = std::move(turns);
    if (d.candidates) j["candidates"] = *d.candidates;
    return j.dump();
}

inline void serialize_corpus(const Corpus& c, std::ostream& out) {
    for (const auto& d : c.dialogues) out << serialize_dialogue(d) << '\n';
}

inline std::string serialize_corpus(const Corpus& c) {
    std::ostringstream os;
    serialize_corpus(c, os);
    return os.str();
}

inline std::pair<std::vector<Utterance>, std::string> context_response_split(const Dialogue& d) {
    std::vector<Utterance> context(d.turns.begin(), d.turns.end() - 1);
    return {std::move(context), d.turns.back().text};
}

}  // namespace idl
