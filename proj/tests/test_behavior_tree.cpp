// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "flywheel/behavior_tree.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace flywheel;
using namespace testsupport;

namespace {

std::vector<ToolSpec> abc_tools() {
    std::vector<ToolSpec> tools;
    for (const char* name : {"tool_a", "tool_b", "tool_c"}) {
        ToolSpec t;
        t.name = name;
        t.category = ToolCategory::write;
        tools.push_back(t);
    }
    return tools;
}

BehaviorTree linear_abc() {
    BehaviorTree tree;
    tree.tree_id = "abc";
    tree.round_index = 1;
    BranchNode a;
    a.node_id = "A";
    a.condition = "start";
    a.action = "execute";
    a.tool_call = "tool_a";
    BranchNode b;
    b.node_id = "B";
    b.condition = "middle";
    b.action = "execute";
    b.tool_call = "tool_b";
    BranchNode c;
    c.node_id = "C";
    c.condition = "finish";
    c.action = "execute";
    c.tool_call = "tool_c";
    b.next.push_back(c);
    a.next.push_back(b);
    tree.branches.push_back(a);
    return tree;
}

}  // namespace

TEST_CASE("linear tree with registered tools validates cleanly") {
    const auto report = validate_tree(linear_abc(), abc_tools());
    CHECK(report.ok());
}

TEST_CASE("unknown tool reference is a single violation") {
    BehaviorTree tree = linear_abc();
    tree.branches[0].next[0].tool_call = "issue_refund";
    const auto report = validate_tree(tree, abc_tools());
    REQUIRE(report.violations.size() == 1);
    CHECK(report.violations[0].code == "unknown_tool");
}

TEST_CASE("nomination fixture tree validates cleanly") {
    const TreeBundle bundle = nomination_bundle();
    const auto report = validate_tree(bundle.tree, bundle.tools);
    INFO(report.summary());
    CHECK(report.ok());
}

TEST_CASE("refuse node with a state-modifying tool is rejected") {
    BehaviorTree tree = linear_abc();
    tree.branches[0].next[0].action = "refuse";
    const auto report = validate_tree(tree, abc_tools());
    REQUIRE_FALSE(report.ok());
    CHECK(report.violations[0].code == "state_change_on_refuse");
}

TEST_CASE("duplicate node ids and unknown actions are violations") {
    BehaviorTree tree = linear_abc();
    tree.branches[0].next[0].node_id = "A";
    tree.branches[0].action = "panic";
    const auto report = validate_tree(tree, abc_tools());
    bool saw_dup = false;
    bool saw_action = false;
    for (const auto& v : report.violations) {
        if (v.code == "duplicate_node_id") saw_dup = true;
        if (v.code == "unknown_action") saw_action = true;
    }
    CHECK(saw_dup);
    CHECK(saw_action);
}

TEST_CASE("two paths sharing a signature fail validation") {
    BehaviorTree tree;
    tree.tree_id = "ambiguous";
    tree.round_index = 1;
    for (int i = 0; i < 2; ++i) {
        BranchNode n;
        n.node_id = "q" + std::to_string(i);
        n.condition = "quiet branch " + std::to_string(i);
        n.action = "proceed";
        tree.branches.push_back(n);
    }
    const auto report = validate_tree(tree, {});
    REQUIRE_FALSE(report.ok());
    CHECK(report.violations[0].code == "ambiguous_paths");
}

TEST_CASE("path enumeration") {
    SUBCASE("linear tree has exactly one path") {
        const auto paths = enumerate_paths(linear_abc());
        REQUIRE(paths.size() == 1);
        CHECK(paths[0].node_ids == std::vector<std::string>{"A", "B", "C"});
        CHECK(paths[0].tool_sequence == std::vector<std::string>{"tool_a", "tool_b", "tool_c"});
    }
    SUBCASE("nomination tree has the refuse path and the submit path") {
        const TreeBundle bundle = nomination_bundle();
        const auto paths = enumerate_paths(bundle.tree);
        REQUIRE(paths.size() == 2);
        CHECK(paths[0].node_ids == std::vector<std::string>{"n1", "n2", "n3", "n4", "n5"});
        CHECK(paths[1].node_ids == std::vector<std::string>{"n1", "n2", "n3", "n6", "n7"});
    }
    SUBCASE("complete tree, branching 3 and depth 4, has 81 paths") {
        const BehaviorTree tree = complete_tree(3, 4);
        REQUIRE(oracle_leaf_count(tree) == 81);  // frozen from the DFS oracle
        CHECK(enumerate_paths(tree).size() == 81);
    }
    SUBCASE("document order is left to right") {
        const BehaviorTree tree = complete_tree(2, 2);
        const auto paths = enumerate_paths(tree);
        REQUIRE(paths.size() == 4);
        CHECK(paths[0].node_ids[0] == paths[1].node_ids[0]);
        CHECK(paths[2].node_ids[0] == paths[3].node_ids[0]);
        CHECK(paths[0].node_ids[0] != paths[2].node_ids[0]);
    }
}

TEST_CASE("enumeration matches the DFS oracle on random trees") {
    std::mt19937_64 rng(20260810);
    for (int i = 0; i < 200; ++i) {
        const BehaviorTree tree = random_tree(rng);
        CHECK(enumerate_paths(tree).size() == oracle_leaf_count(tree));
    }
}

TEST_CASE("graft_branch") {
    SUBCASE("grafting a branch adds its leaves to the path count") {
        BehaviorTree tree = linear_abc();
        BranchNode alt;
        alt.node_id = "H";
        alt.condition = "sold out";
        alt.action = "execute";
        alt.tool_call = "tool_c";
        const BehaviorTree grown = graft_branch(tree, "A", alt);
        CHECK(enumerate_paths(tree).size() == 1);  // original unchanged
        CHECK(enumerate_paths(grown).size() == 2);
    }
    SUBCASE("grafting a leaf under a leaf keeps the path count") {
        BehaviorTree tree = linear_abc();
        BranchNode tail;
        tail.node_id = "D";
        tail.condition = "one more step";
        const BehaviorTree grown = graft_branch(tree, "C", tail);
        CHECK(enumerate_paths(grown).size() == 1);
        CHECK(enumerate_paths(grown)[0].node_ids.size() == 4);
    }
    SUBCASE("3-leaf subtree under the root of a 5-path tree gives 8 paths") {
        BehaviorTree tree;
        tree.tree_id = "five";
        BranchNode root;
        root.node_id = "R";
        root.condition = "root";
        for (int i = 0; i < 5; ++i) {
            BranchNode leaf;
            leaf.node_id = "L" + std::to_string(i);
            leaf.condition = "leaf " + std::to_string(i);
            root.next.push_back(leaf);
        }
        tree.branches.push_back(root);
        REQUIRE(enumerate_paths(tree).size() == 5);
        BranchNode sub;
        sub.node_id = "S";
        sub.condition = "subtree";
        for (int i = 0; i < 3; ++i) {
            BranchNode leaf;
            leaf.node_id = "S" + std::to_string(i);
            leaf.condition = "sub leaf " + std::to_string(i);
            sub.next.push_back(leaf);
        }
        const BehaviorTree grown = graft_branch(tree, "R", sub);
        CHECK(enumerate_paths(grown).size() == 8);  // 5 + leaves(sub), root was no leaf
    }
    SUBCASE("unknown parent and id collision throw") {
        BehaviorTree tree = linear_abc();
        BranchNode sub;
        sub.node_id = "X";
        sub.condition = "x";
        CHECK_THROWS_AS(graft_branch(tree, "missing", sub), StructuralError);
        sub.node_id = "B";
        CHECK_THROWS_AS(graft_branch(tree, "A", sub), StructuralError);
    }
}

TEST_CASE("graft delta formula holds on random trees") {
    std::mt19937_64 rng(777);
    for (int i = 0; i < 200; ++i) {
        BehaviorTree tree = random_tree(rng);
        const auto ids = all_node_ids(tree);
        std::uniform_int_distribution<size_t> pick(0, ids.size() - 1);
        const std::string parent = ids[pick(rng)];
        const bool parent_was_leaf = find_node(tree, parent)->leaf();

        TreeGenOptions small;
        small.max_depth = 3;
        small.max_branching = 3;
        BehaviorTree donor = random_tree(rng, small);
        BranchNode sub = donor.branches[0];
        // Make donor ids disjoint from the tree's.
        std::function<void(BranchNode&)> retag = [&](BranchNode& n) {
            n.node_id = "x" + std::to_string(i) + "_" + n.node_id;
            for (auto& child : n.next) retag(child);
        };
        retag(sub);

        const size_t before = enumerate_paths(tree).size();
        const size_t leaves = oracle_leaf_count(sub);
        const BehaviorTree grown = graft_branch(tree, parent, sub);
        const size_t after = enumerate_paths(grown).size();
        CHECK(after == before + leaves - (parent_was_leaf ? 1 : 0));
    }
}

TEST_CASE("match_trajectory") {
    const TreeBundle bundle = nomination_bundle();
    const auto paths = enumerate_paths(bundle.tree);

    SUBCASE("compliant trace matches the refuse-then-update path") {
        Trajectory traj;
        traj.events.push_back(Event::call("get_player_stats", {{"player_id", "PLY1001"}}));
        traj.events.push_back(Event::result("get_player_stats", json::object()));
        traj.events.push_back(Event::call("check_nomination_status", {{"player_id", "PLY1001"}}));
        traj.events.push_back(Event::result("check_nomination_status", json::object()));
        traj.events.push_back(
            Event::call("get_student_academic_record", {{"student_id", "STU7721"}}));
        traj.events.push_back(Event::result("get_student_academic_record", json::object()));
        traj.events.push_back(Event::agent("cannot submit", Marker::refuse));
        traj.events.push_back(Event::call("update_player_profile", {{"field", "bio"}}));
        traj.events.push_back(Event::result("update_player_profile", json::object()));
        const auto matched = match_trajectory(bundle.tree, traj, bundle.tools);
        REQUIRE(matched.has_value());
        CHECK(matched->node_ids == paths[0].node_ids);
    }

    SUBCASE("submit trace matches the submit path, and nothing on a pruned tree") {
        Trajectory traj;
        traj.events.push_back(Event::call("submit_nomination", {{"player_id", "PLY1001"}}));
        traj.events.push_back(Event::result("submit_nomination", json::object()));
        traj.events.push_back(Event::call("update_player_profile", {{"field", "bio"}}));
        traj.events.push_back(Event::result("update_player_profile", json::object()));
        const auto matched = match_trajectory(bundle.tree, traj, bundle.tools);
        REQUIRE(matched.has_value());
        CHECK(matched->node_ids == paths[1].node_ids);

        BehaviorTree pruned = bundle.tree;
        pruned.branches[0].next[0].next[0].next.pop_back();  // drop the submit branch
        CHECK_FALSE(match_trajectory(pruned, traj, bundle.tools).has_value());
    }

    SUBCASE("empty trajectory finds no match when every path modifies state") {
        Trajectory traj;
        CHECK_FALSE(match_trajectory(bundle.tree, traj, bundle.tools).has_value());
    }

    SUBCASE("invoking a disallowed tool voids the match") {
        BehaviorTree tree = bundle.tree;
        tree.disallowed_actions.push_back("never call update_player_profile here");
        Trajectory traj;
        traj.events.push_back(Event::agent("no", Marker::refuse));
        traj.events.push_back(Event::call("update_player_profile", {{"field", "bio"}}));
        traj.events.push_back(Event::result("update_player_profile", json::object()));
        CHECK_FALSE(match_trajectory(tree, traj, bundle.tools).has_value());
    }

    SUBCASE("two identical signatures raise an ambiguity error") {
        BehaviorTree tree;
        tree.tree_id = "amb";
        for (int i = 0; i < 2; ++i) {
            BranchNode n;
            n.node_id = "p" + std::to_string(i);
            n.condition = "variant " + std::to_string(i);
            tree.branches.push_back(n);
        }
        Trajectory traj;  // empty signature matches both query-only paths
        CHECK_THROWS_AS(match_trajectory(tree, traj, {}), AmbiguityError);
    }
}

TEST_CASE("serialization round-trips structurally, keeping unknown fields") {
    const TreeBundle bundle = nomination_bundle();
    json j = tree_to_json(bundle.tree);
    j["x_custom_note"] = "kept";
    j["branches"][0]["x_weight"] = 0.25;
    const BehaviorTree parsed = tree_from_json(j);
    CHECK(parsed.extras.at("x_custom_note") == "kept");
    CHECK(parsed.branches[0].extras.at("x_weight") == 0.25);
    CHECK(tree_from_json(tree_to_json(parsed)) == parsed);

    std::mt19937_64 rng(42);
    for (int i = 0; i < 50; ++i) {
        const BehaviorTree tree = random_tree(rng);
        CHECK(tree_from_json(tree_to_json(tree)) == tree);
    }
}

TEST_CASE("nodes parsed without ids get stable positional ids") {
    const json j{{"tree_id", "t"},
                 {"branches", json::array({json{{"condition", "a"},
                                                {"next", json::array({json{{"condition", "b"}}})}}})}};
    const BehaviorTree tree = tree_from_json(j);
    CHECK(tree.branches[0].node_id == "n0");
    CHECK(tree.branches[0].next[0].node_id == "n0.0");
}
