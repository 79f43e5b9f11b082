#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "idl/corpus.hpp"
#include "idl/errors.hpp"
#include "idl/text.hpp"

namespace idl {

struct PersonaTriple {
    std::string subject;
    std::string relation;
    std::string object;

    bool operator==(const PersonaTriple&) const = default;
};

inline bool triple_equal_ci(const PersonaTriple& a, const PersonaTriple& b) {
    return text::iequal(a.subject, b.subject) && text::iequal(a.relation, b.relation) &&
           text::iequal(a.object, b.object);
}

// Wire order of the three fields inside "<a, b, c>". The parse layer itself is
// order-agnostic; each backend declares how its output maps.
enum class FieldOrder { SRO, ORS };

inline std::vector<PersonaTriple> parse_triples(const std::string& raw,
                                                FieldOrder order = FieldOrder::SRO) {
    static const std::regex pat("<(.*?),(.*?),(.*?)>");
    std::vector<PersonaTriple> out;
    for (auto it = std::sregex_iterator(raw.begin(), raw.end(), pat); it != std::sregex_iterator(); ++it) {
        std::string f1(text::trim((*it)[1].str()));
        std::string f2(text::trim((*it)[2].str()));
        std::string f3(text::trim((*it)[3].str()));
        if (f1.empty() || f2.empty() || f3.empty()) continue;
        if (order == FieldOrder::SRO) {
            out.push_back({std::move(f1), std::move(f2), std::move(f3)});
        } else {
            out.push_back({std::move(f3), std::move(f2), std::move(f1)});
        }
    }
    return out;
}

inline std::string serialize_triple(const PersonaTriple& t) {
    return "<" + t.subject + ", " + t.relation + ", " + t.object + ">";
}

// True iff some triple's object appears as a contiguous token run of the
// utterance (case-insensitive, token boundaries — "apple" is not inside
// "pineapple").
inline bool contains_object(std::string_view utterance, const std::vector<PersonaTriple>& triples) {
    if (triples.empty()) return false;
    auto hay = text::tokenize_spans(utterance);
    for (const auto& t : triples) {
        auto needle = text::tokenize(t.object);
        if (!needle.empty() && text::find_token_run(hay, needle)) return true;
    }
    return false;
}

struct ExtractionResult {
    std::vector<std::vector<PersonaTriple>> triples_per_turn;
    std::vector<std::size_t> persona_intensive_indices;  // strictly increasing
};

class ExtractorBackend {
public:
    virtual ~ExtractorBackend() = default;
    // One triple list per input utterance, attributed by position.
    virtual std::vector<std::vector<PersonaTriple>> extract_utterances(
        const std::vector<std::string>& utterances) const = 0;
};

// Offline extractor driven by a template table: "i am a {object}" bound to a
// relation captures the tail of the sentence as the object. A pure function of
// (pattern table, input), so pipelines built on it are reproducible.
class RulesBackend final : public ExtractorBackend {
public:
    struct Rule {
        std::vector<std::string> before;  // literal tokens preceding {object}
        std::vector<std::string> after;   // literal tokens following {object}, usually empty
        std::string relation;
    };

    static RulesBackend from_string(std::string_view content) {
        RulesBackend b;
        std::size_t line_no = 0;
        std::istringstream in{std::string(content)};
        std::string line;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            std::string_view sv = text::trim(line);
            if (sv.empty() || sv.front() == '#') continue;
            auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw ValidationError("pattern line " + std::to_string(line_no) + ": expected TEMPLATE<TAB>RELATION");
            }
            std::string tmpl(text::trim(line.substr(0, tab)));
            std::string rel(text::trim(line.substr(tab + 1)));
            auto ph = tmpl.find("{object}");
            if (ph == std::string::npos) {
                throw ValidationError("pattern line " + std::to_string(line_no) + ": missing {object} placeholder");
            }
            if (rel.empty()) {
                throw ValidationError("pattern line " + std::to_string(line_no) + ": empty relation");
            }
            Rule r;
            r.before = text::tokenize(tmpl.substr(0, ph));
            r.after = text::tokenize(tmpl.substr(ph + 8));
            r.relation = rel;
            b.rules_.push_back(std::move(r));
        }
        return b;
    }

    static RulesBackend from_file(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open pattern file: " + path.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return from_string(ss.str());
    }

    std::vector<std::vector<PersonaTriple>> extract_utterances(
        const std::vector<std::string>& utterances) const override {
        std::vector<std::vector<PersonaTriple>> out(utterances.size());
        for (std::size_t i = 0; i < utterances.size(); ++i) {
            for (const auto& rule : rules_) {
                if (auto t = match(rule, utterances[i])) out[i].push_back(std::move(*t));
            }
        }
        return out;
    }

    std::size_t rule_count() const { return rules_.size(); }

private:
    static std::optional<PersonaTriple> match(const Rule& rule, const std::string& raw) {
        auto spans = text::tokenize_spans(raw);
        std::size_t obj_first;  // index of the first object token
        if (rule.before.empty()) {
            obj_first = 0;
        } else {
            auto run = text::find_token_run(spans, rule.before);
            if (!run) return std::nullopt;
            obj_first = run->second + 1;
        }
        if (obj_first >= spans.size()) return std::nullopt;
        std::size_t begin = spans[obj_first].begin;

        std::size_t end;
        if (!rule.after.empty()) {
            std::vector<text::TokenSpan> rest(spans.begin() + static_cast<std::ptrdiff_t>(obj_first) + 1,
                                              spans.end());
            auto run = text::find_token_run(rest, rule.after);
            if (!run) return std::nullopt;
            end = rest[run->first].begin;
        } else {
            // Object runs to the clause boundary: first punctuation mark or EOS.
            end = raw.size();
            for (std::size_t p = begin; p < raw.size(); ++p) {
                char c = raw[p];
                if (c == ',' || c == '.' || c == ';' || c == '!' || c == '?') {
                    end = p;
                    break;
                }
            }
        }
        if (end <= begin) return std::nullopt;
        std::string object(text::trim(std::string_view(raw).substr(begin, end - begin)));
        if (object.empty()) return std::nullopt;
        return PersonaTriple{"I", rule.relation, std::move(object)};
    }

    std::vector<Rule> rules_;
};

// HTTP client for a hosted extractor model: POST /extract with the utterances,
// reply carries one line of "<a, b, c>" triples per utterance.
class RemoteBackend final : public ExtractorBackend {
public:
    explicit RemoteBackend(std::string endpoint, FieldOrder order = FieldOrder::SRO,
                           double timeout_s = 30.0)
        : endpoint_(std::move(endpoint)), order_(order), timeout_s_(timeout_s) {}

    std::vector<std::vector<PersonaTriple>> extract_utterances(
        const std::vector<std::string>& utterances) const override {
        nlohmann::json body;
        body["utterances"] = utterances;
        httplib::Client cli(endpoint_);
        cli.set_connection_timeout(static_cast<int>(timeout_s_), 0);
        cli.set_read_timeout(static_cast<int>(timeout_s_), 0);
        cli.set_write_timeout(static_cast<int>(timeout_s_), 0);
        auto res = cli.Post("/extract", body.dump(), "application/json");
        if (!res) throw RemoteUnavailable("extract endpoint unreachable: " + endpoint_);
        if (res->status != 200) {
            throw BackendError("extract endpoint returned status " + std::to_string(res->status));
        }
        nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
        if (reply.is_discarded() || !reply.contains("raw") || !reply["raw"].is_string()) {
            throw BackendError("extract endpoint reply is missing \"raw\"");
        }
        std::string raw = reply["raw"].get<std::string>();

        std::vector<std::vector<PersonaTriple>> out(utterances.size());
        std::size_t i = 0;
        std::size_t parsed_total = 0;
        std::istringstream lines(raw);
        std::string line;
        while (std::getline(lines, line) && i < out.size()) {
            out[i] = parse_triples(line, order_);
            parsed_total += out[i].size();
            ++i;
        }
        if (parsed_total == 0 && !text::trim(raw).empty()) {
            // Malformed output: the backend promised triples but none parse.
            std::cerr << "extract backend returned unparseable output; treating as empty\n";
        }
        return out;
    }

private:
    std::string endpoint_;
    FieldOrder order_;
    double timeout_s_;
};

inline ExtractionResult extract(const Dialogue& d, const ExtractorBackend& backend) {
    std::vector<std::string> texts;
    texts.reserve(d.turns.size());
    for (const auto& t : d.turns) texts.push_back(t.text);
    ExtractionResult r;
    r.triples_per_turn = backend.extract_utterances(texts);
    r.triples_per_turn.resize(d.turns.size());
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
        if (contains_object(d.turns[i].text, r.triples_per_turn[i])) {
            r.persona_intensive_indices.push_back(i);
        }
    }
    return r;
}

}  // namespace idl
