// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "flywheel/reasoning.hpp"

using namespace flywheel;

namespace {

Problem seed_problem() {
    Problem p;
    p.problem_id = "p-001";
    p.statement = "Solve 2x + 3 = 11 for x.";
    p.reference_answer = "4";
    p.domain = "math";
    return p;
}

RewardReport report_for(const std::string& id, double reward) {
    RewardReport r;
    r.task_id = id;
    r.reward = reward;
    return r;
}

/// Solver whose answer depends on the attempt index embedded in the
/// prompt; lets tests force agreement or disagreement.
class AttemptSolver : public Backend {
public:
    explicit AttemptSolver(std::vector<std::string> answers) : answers_(std::move(answers)) {}
    Completion generate(const GenerationRequest& req) override {
        const std::string& text = req.messages.back().text;
        for (size_t i = 0; i < answers_.size(); ++i) {
            if (text.find("(attempt " + std::to_string(i) + ")") != std::string::npos) {
                return {"Working it out...\nAnswer: " + answers_[i], std::nullopt, {}, "solver"};
            }
        }
        throw BackendError("no attempt marker", false);
    }
    std::string id() const override { return "solver"; }

private:
    std::vector<std::string> answers_;
};

}  // namespace

TEST_CASE("final answer extraction") {
    CHECK(extract_final_answer("thus \\boxed{42}") == "42");
    CHECK(extract_final_answer("\\boxed{a}, later \\boxed{b{c}}") == "b{c}");
    CHECK(extract_final_answer("Answer: 17\nmore text") == "17");
    CHECK(extract_final_answer("steps...\nanswer:  Paris ") == "Paris");
    CHECK(extract_final_answer("line one\n  final line  \n\n") == "final line");
}

TEST_CASE("collect_failures returns exactly the zero-reward problems") {
    std::vector<Problem> problems;
    for (int i = 0; i < 3; ++i) {
        Problem p = seed_problem();
        p.problem_id = "p" + std::to_string(i);
        problems.push_back(p);
    }
    const std::vector<RewardReport> reports = {report_for("p0", 1.0), report_for("p1", 0.0),
                                               report_for("p2", 1.0)};
    const auto failures = collect_failures(problems, reports);
    REQUIRE(failures.size() == 1);
    CHECK(failures[0].problem_id == "p1");
    CHECK(failures[0].origin == ProblemOrigin::failure);
    CHECK(failures[0].parent_id == "p1");

    const std::vector<RewardReport> all_good = {report_for("p0", 1.0), report_for("p1", 1.0),
                                                report_for("p2", 0.5)};
    CHECK(collect_failures(problems, all_good).empty());

    CHECK_THROWS_AS(collect_failures(problems, {report_for("p0", 1.0)}), DataError);
}

TEST_CASE("collect_failures equals a brute-force filter on random data") {
    std::mt19937_64 rng(606);
    std::vector<Problem> problems;
    std::vector<RewardReport> reports;
    std::vector<std::string> expected;
    for (int i = 0; i < 100; ++i) {
        Problem p = seed_problem();
        p.problem_id = "r" + std::to_string(i);
        problems.push_back(p);
        const double reward = (rng() % 3 == 0) ? 0.0 : 1.0;
        reports.push_back(report_for(p.problem_id, reward));
        if (reward == 0.0) expected.push_back(p.problem_id);
    }
    const auto failures = collect_failures(problems, reports);
    REQUIRE(failures.size() == expected.size());
    for (size_t i = 0; i < failures.size(); ++i) CHECK(failures[i].problem_id == expected[i]);
}

TEST_CASE("self-instruct expansion") {
    const Problem p = seed_problem();

    SUBCASE("scripted generator yields variants with lineage") {
        FixedBackend gen(
            "<variants>[{\"statement\":\"Solve f(f(x)) = 11 where f(x) = 2x + 3.\","
            "\"answer\":\"1/2\"},"
            "{\"statement\":\"Solve 2x + 3 = 11 where x must be prime.\",\"answer\":\"none\"},"
            "{\"statement\":\"Find x and y with 2x + 3y = 11, x + y = 4.\",\"answer\":\"x=-1,y=5\"}]"
            "</variants>");
        const auto variants = self_instruct_expand(p, gen, 4);
        REQUIRE(variants.size() == 3);
        for (const auto& v : variants) {
            CHECK(v.origin == ProblemOrigin::self_instruct);
            CHECK(v.parent_id == p.problem_id);
            CHECK(v.round_index == p.round_index + 1);
        }
        CHECK(variants[0].statement.find("f(f(x))") != std::string::npos);
    }

    SUBCASE("n caps the returned variants") {
        FixedBackend gen(
            "<variants>[{\"statement\":\"a\",\"answer\":\"1\"},{\"statement\":\"b\","
            "\"answer\":\"2\"}]</variants>");
        CHECK(self_instruct_expand(p, gen, 1).size() == 1);
    }

    SUBCASE("n = 0 yields an empty list without a backend call") {
        ScriptedBackend gen(std::vector<ScriptedRule>{});  // would throw if called
        CHECK(self_instruct_expand(p, gen, 0).empty());
    }

    SUBCASE("unparseable output yields an empty list") {
        FixedBackend gen("no tags at all");
        CHECK(self_instruct_expand(p, gen, 3).empty());
    }

    SUBCASE("expansion never mutates the parent") {
        const Problem before = p;
        FixedBackend gen("<variants>[{\"statement\":\"v\",\"answer\":\"0\"}]</variants>");
        self_instruct_expand(p, gen, 2);
        CHECK(p.statement == before.statement);
        CHECK(p.problem_id == before.problem_id);
    }
}

TEST_CASE("persona injection") {
    const Problem p = seed_problem();
    SUBCASE("rewrites into the persona's domain") {
        FixedBackend gen(
            "<variant>{\"statement\":\"A lab technician calibrates a sensor reading 2v + 3 = 11; "
            "find the voltage v.\",\"answer\":\"4\"}</variant>");
        const Problem v = persona_inject(p, "physics lab technician", gen);
        CHECK(v.origin == ProblemOrigin::persona);
        CHECK(v.parent_id == p.problem_id);
        CHECK(v.statement.find("lab technician") != std::string::npos);
    }
    SUBCASE("empty persona is an error") {
        FixedBackend gen("<variant>{}</variant>");
        CHECK_THROWS_AS(persona_inject(p, "  ", gen), DataError);
    }
    SUBCASE("unparseable output is an error") {
        FixedBackend gen("nothing useful");
        CHECK_THROWS_AS(persona_inject(p, "chemist", gen), Error);
    }
}

TEST_CASE("consistency filter") {
    const Problem p = seed_problem();

    SUBCASE("unanimous answers keep the candidate and record the answer") {
        AttemptSolver solver({"42", "42", "42"});
        const FilterResult r = consistency_filter(p, solver, 3);
        CHECK(r.keep);
        CHECK(r.answer == "42");
    }
    SUBCASE("any disagreement discards with the answer multiset") {
        AttemptSolver solver({"42", "42", "41"});
        const FilterResult r = consistency_filter(p, solver, 3);
        CHECK_FALSE(r.keep);
        CHECK(r.reason.find("42") != std::string::npos);
        CHECK(r.reason.find("41") != std::string::npos);
    }
    SUBCASE("normalization applies before comparing") {
        AttemptSolver solver({"7", "7.0", " 7 "});
        CHECK(consistency_filter(p, solver, 3).keep);
    }
    SUBCASE("solver failure discards, fail-closed") {
        ScriptedBackend solver(std::vector<ScriptedRule>{});
        const FilterResult r = consistency_filter(p, solver, 3);
        CHECK_FALSE(r.keep);
        CHECK(r.reason.find("solver_error") != std::string::npos);
    }
    SUBCASE("k below 2 is rejected") {
        AttemptSolver solver({"1"});
        CHECK_THROWS_AS(consistency_filter(p, solver, 1), ConfigError);
    }
    SUBCASE("exhaustive 27 ordered triples over a 3-symbol alphabet") {
        const char* symbols[] = {"a", "b", "c"};
        int kept = 0;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                for (int k = 0; k < 3; ++k) {
                    AttemptSolver solver({symbols[i], symbols[j], symbols[k]});
                    const FilterResult r = consistency_filter(seed_problem(), solver, 3);
                    const bool all_equal = i == j && j == k;
                    CHECK(r.keep == all_equal);
                    if (r.keep) ++kept;
                }
            }
        }
        CHECK(kept == 3);
    }
}

TEST_CASE("problem serialization round-trips and gates expansion by domain") {
    Problem p = seed_problem();
    p.origin = ProblemOrigin::self_instruct;
    p.parent_id = "p-000";
    p.round_index = 2;
    const Problem parsed = problem_from_json(problem_to_json(p));
    CHECK(problem_to_json(parsed).dump() == problem_to_json(p).dump());

    CHECK(should_expand(p));
    p.domain = "history";
    CHECK_FALSE(should_expand(p));
}

TEST_CASE("grow_problem_set expands math failures and keeps unanimous variants") {
    Problem math = seed_problem();
    Problem other = seed_problem();
    other.problem_id = "p-002";
    other.domain = "qa";

    FixedBackend gen(
        "<variants>[{\"statement\":\"v1\",\"answer\":\"9\"},{\"statement\":\"v2\","
        "\"answer\":\"9\"}]</variants>");
    AttemptSolver solver({"9", "9", "9"});
    const auto [admitted, stats] = grow_problem_set({math, other}, gen, solver, 2, 3);

    CHECK(stats.failures == 2);
    CHECK(stats.expanded == 2);
    CHECK(stats.kept == 2);
    // Both originals retained, plus the two kept variants of the math one.
    REQUIRE(admitted.size() == 4);
    CHECK(admitted[0].problem_id == math.problem_id);
    CHECK(admitted[1].reference_answer == "9");
}
