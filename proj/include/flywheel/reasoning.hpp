// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flywheel/backend.hpp"
#include "flywheel/errors.hpp"
#include "flywheel/json_util.hpp"
#include "flywheel/reward.hpp"
#include "flywheel/strings.hpp"

namespace flywheel {

enum class ProblemOrigin { seed, failure, self_instruct, persona };

inline std::string to_string(ProblemOrigin o) {
    switch (o) {
        case ProblemOrigin::seed: return "seed";
        case ProblemOrigin::failure: return "failure";
        case ProblemOrigin::self_instruct: return "self_instruct";
        case ProblemOrigin::persona: return "persona";
    }
    return "seed";
}

inline ProblemOrigin problem_origin_from_string(const std::string& s) {
    if (s == "seed") return ProblemOrigin::seed;
    if (s == "failure") return ProblemOrigin::failure;
    if (s == "self_instruct") return ProblemOrigin::self_instruct;
    if (s == "persona") return ProblemOrigin::persona;
    throw DataError("unknown problem origin: " + s);
}

/// One verifiable reasoning problem and where it came from.
struct Problem {
    std::string problem_id;
    std::string statement;
    std::string reference_answer;
    ProblemOrigin origin = ProblemOrigin::seed;
    std::string parent_id;  // empty for seeds
    int round_index = 0;
    std::string domain = "math";  // expansion applies to mathematical tasks only
};

inline json problem_to_json(const Problem& p) {
    return json{{"schema_version", kSchemaVersion},
                {"problem_id", p.problem_id},
                {"statement", p.statement},
                {"reference_answer", p.reference_answer},
                {"lineage", json{{"origin", to_string(p.origin)}, {"parent_id", p.parent_id}}},
                {"round_index", p.round_index},
                {"domain", p.domain}};
}

inline Problem problem_from_json(const json& j) {
    check_schema_version(j, "problem");
    Problem p;
    p.problem_id = j.at("problem_id").get<std::string>();
    p.statement = j.at("statement").get<std::string>();
    p.reference_answer = j.value("reference_answer", "");
    if (j.contains("lineage")) {
        p.origin = problem_origin_from_string(j.at("lineage").value("origin", "seed"));
        p.parent_id = j.at("lineage").value("parent_id", "");
    }
    p.round_index = j.value("round_index", 0);
    p.domain = j.value("domain", "math");
    return p;
}

/// Seed-corpus ingestion: minimal {statement, answer} records.
inline Problem problem_from_seed_record(const json& j, const std::string& fallback_id) {
    Problem p;
    p.problem_id = j.value("problem_id", fallback_id);
    p.statement = j.at("statement").get<std::string>();
    p.reference_answer = j.at("answer").get<std::string>();
    p.domain = j.value("domain", "math");
    return p;
}

/// Pull the final answer out of solver text: the last boxed{...} span if
/// any, else the text after the last "Answer:" marker, else the last
/// non-empty line.
inline std::string extract_final_answer(const std::string& text) {
    const std::string boxed_open = "boxed{";
    size_t pos = text.rfind(boxed_open);
    if (pos != std::string::npos) {
        const size_t begin = pos + boxed_open.size();
        int depth = 1;
        for (size_t i = begin; i < text.size(); ++i) {
            if (text[i] == '{') ++depth;
            if (text[i] == '}') {
                --depth;
                if (depth == 0) return text.substr(begin, i - begin);
            }
        }
    }
    const std::string marker = "answer:";
    const std::string lowered = to_lower(text);
    pos = lowered.rfind(marker);
    if (pos != std::string::npos) {
        const size_t begin = pos + marker.size();
        size_t end = text.find('\n', begin);
        if (end == std::string::npos) end = text.size();
        return trim(text.substr(begin, end - begin));
    }
    std::string last;
    for (const auto& line : split_lines(text)) {
        if (!trim(line).empty()) last = trim(line);
    }
    return last;
}

/// Exactly the problems the model got a zero reward on, tagged as
/// failures. Reports must align with problems by id.
inline std::vector<Problem> collect_failures(const std::vector<Problem>& problems,
                                             const std::vector<RewardReport>& reports) {
    std::map<std::string, const RewardReport*> by_id;
    for (const auto& r : reports) by_id[r.task_id] = &r;
    std::vector<Problem> failures;
    for (const auto& p : problems) {
        auto it = by_id.find(p.problem_id);
        if (it == by_id.end()) {
            throw DataError("no reward report for problem " + p.problem_id);
        }
        if (it->second->reward == 0.0) {
            Problem f = p;
            f.origin = ProblemOrigin::failure;
            f.parent_id = p.problem_id;
            failures.push_back(std::move(f));
        }
    }
    return failures;
}

inline constexpr const char* kSelfInstructPrompt =
    "Rewrite the problem below into {n} harder variants. Adjust key values, add\n"
    "constraints, or bring in an extra concept, so a single equation may become a\n"
    "functional or multi-step problem. Propose a reference answer for each variant.\n"
    "Reply with a JSON array of {\"statement\", \"answer\"} objects inside a\n"
    "<variants>...</variants> block.\n\nProblem: {statement}\n";

inline constexpr const char* kPersonaPrompt =
    "Rewrite the problem below so it is set in the working context of this persona,\n"
    "keeping the quantities and the correct answer intact: {persona}\n"
    "Reply with one JSON object {\"statement\", \"answer\"} inside a\n"
    "<variant>...</variant> block.\n\nProblem: {statement}\n";

/// Harder variants of one failed problem. Returns at most n candidates;
/// their model-proposed answers still need consistency filtering. Zero
/// parseable variants yields an empty list rather than an error.
inline std::vector<Problem> self_instruct_expand(const Problem& parent, Backend& generator,
                                                 int n) {
    if (n <= 0) return {};
    if (trim(parent.statement).empty()) throw DataError("problem has no statement");
    GenerationRequest req;
    req.role_tag = RoleTag::generator;
    req.sampling = default_sampling(RoleTag::generator);
    req.messages.push_back(
        {Speaker::user, render_template(kSelfInstructPrompt,
                                        {{"n", std::to_string(n)}, {"statement", parent.statement}})});
    const Completion c = generator.generate(req);
    std::vector<Problem> variants;
    const auto block = try_extract_tagged(c.text, "variants");
    if (!block) return variants;
    json arr = json::parse(*block, nullptr, false);
    if (arr.is_discarded() || !arr.is_array()) return variants;
    for (const auto& item : arr) {
        if (!item.is_object() || !item.contains("statement")) continue;
        Problem v;
        v.problem_id = parent.problem_id + "-si" + std::to_string(variants.size());
        v.statement = item.at("statement").get<std::string>();
        v.reference_answer = item.value("answer", "");
        v.origin = ProblemOrigin::self_instruct;
        v.parent_id = parent.problem_id;
        v.round_index = parent.round_index + 1;
        v.domain = parent.domain;
        variants.push_back(std::move(v));
        if (variants.size() == static_cast<size_t>(n)) break;
    }
    return variants;
}

/// Applied-domain rewrite for contextual diversity.
inline Problem persona_inject(const Problem& parent, const std::string& persona,
                              Backend& generator) {
    if (trim(persona).empty()) throw DataError("persona must not be empty");
    GenerationRequest req;
    req.role_tag = RoleTag::generator;
    req.sampling = default_sampling(RoleTag::generator);
    req.messages.push_back(
        {Speaker::user,
         render_template(kPersonaPrompt, {{"persona", persona}, {"statement", parent.statement}})});
    const Completion c = generator.generate(req);
    const std::string block = extract_tagged(c.text, "variant");
    json item = json::parse(block, nullptr, false);
    if (item.is_discarded() || !item.is_object() || !item.contains("statement")) {
        throw DataError("persona rewrite produced no parseable variant");
    }
    Problem v;
    v.problem_id = parent.problem_id + "-p0";
    v.statement = item.at("statement").get<std::string>();
    v.reference_answer = item.value("answer", "");
    v.origin = ProblemOrigin::persona;
    v.parent_id = parent.problem_id;
    v.round_index = parent.round_index + 1;
    v.domain = parent.domain;
    return v;
}

struct FilterResult {
    bool keep = false;
    std::string answer;              // recorded reference answer on Keep
    std::string reason;              // set on Discard
    std::vector<std::string> answers;  // the k normalized answers seen
};

/// Multi-model consistency filter: solve the candidate k times and keep
/// it only when every normalized final answer agrees. Any solver failure
/// discards the candidate.
inline FilterResult consistency_filter(const Problem& candidate, Backend& solver, int k = 3) {
    if (k < 2) throw ConfigError("consistency filter needs k >= 2");
    FilterResult result;
    for (int i = 0; i < k; ++i) {
        GenerationRequest req;
        req.role_tag = RoleTag::judge;
        req.sampling = default_sampling(RoleTag::judge);
        req.sampling.seed = static_cast<std::uint64_t>(i);
        req.messages.push_back(
            {Speaker::user, "Solve the problem and end with the final answer on its own line "
                            "after \"Answer:\".\n\n" +
                                candidate.statement + "\n(attempt " + std::to_string(i) + ")"});
        try {
            const Completion c = solver.generate(req);
            result.answers.push_back(normalize_answer(extract_final_answer(c.text)));
        } catch (const Error& err) {
            result.keep = false;
            result.reason = std::string("solver_error: ") + err.what();
            return result;
        }
    }
    for (const auto& a : result.answers) {
        if (a != result.answers.front()) {
            result.keep = false;
            result.reason = "disagreement: {";
            for (size_t i = 0; i < result.answers.size(); ++i) {
                if (i) result.reason += ", ";
                result.reason += result.answers[i];
            }
            result.reason += "}";
            return result;
        }
    }
    result.keep = true;
    result.answer = result.answers.front();
    return result;
}

inline bool should_expand(const Problem& p) { return p.domain == "math"; }

struct ReasoningRoundStats {
    size_t failures = 0;
    size_t expanded = 0;
    size_t kept = 0;
    size_t discarded = 0;
};

/// One turn of the reasoning flywheel: expand each math failure into
/// variants, run the consistency filter, and keep the unanimous ones.
/// Non-math failures are retained as-is for retraining.
inline std::pair<std::vector<Problem>, ReasoningRoundStats> grow_problem_set(
    const std::vector<Problem>& failures, Backend& generator, Backend& solver,
    int variants_per_failure = 4, int k = 3) {
    std::vector<Problem> admitted;
    ReasoningRoundStats stats;
    stats.failures = failures.size();
    for (const auto& failure : failures) {
        if (!should_expand(failure)) {
            admitted.push_back(failure);
            continue;
        }
        admitted.push_back(failure);
        for (auto& variant : self_instruct_expand(failure, generator, variants_per_failure)) {
            ++stats.expanded;
            FilterResult filter = consistency_filter(variant, solver, k);
            if (filter.keep) {
                variant.reference_answer = filter.answer;
                admitted.push_back(std::move(variant));
                ++stats.kept;
            } else {
                ++stats.discarded;
            }
        }
    }
    return {admitted, stats};
}

}  // namespace flywheel
