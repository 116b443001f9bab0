// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "flywheel/errors.hpp"
#include "flywheel/json_util.hpp"
#include "flywheel/strings.hpp"
#include "flywheel/tool_spec.hpp"
#include "flywheel/trajectory.hpp"

namespace flywheel {

inline constexpr const char* kNodeActions[] = {"proceed", "clarify", "refuse",
                                               "transfer", "abort", "execute"};

inline bool is_known_action(const std::string& action) {
    for (const char* a : kNodeActions)
        if (action == a) return true;
    return false;
}

/// One node of the policy tree. `action` is kept as text so that unknown
/// values survive a round-trip and surface as validation violations
/// rather than parse failures.
struct BranchNode {
    std::string node_id;
    std::string condition;
    std::string validation_step;  // empty = none
    std::string action = "proceed";
    std::string tool_call;  // empty = none
    std::vector<BranchNode> next;
    json extras = json::object();

    bool leaf() const { return next.empty(); }

    bool operator==(const BranchNode& other) const {
        return node_id == other.node_id && condition == other.condition &&
               validation_step == other.validation_step && action == other.action &&
               tool_call == other.tool_call && next == other.next && extras == other.extras;
    }
};

/// Multi-branch policy structure. `branches` is a forest under the
/// implicit root described by `root_condition`; node graphs are trees by
/// construction (value semantics, no sharing).
struct BehaviorTree {
    std::string tree_id;
    int round_index = 0;
    std::string root_condition;
    std::vector<std::string> workflow_steps;
    std::vector<std::string> allowed_actions;
    std::vector<std::string> disallowed_actions;
    std::vector<std::string> refusal_conditions;
    std::vector<std::string> transfer_conditions;
    std::vector<BranchNode> branches;
    json extras = json::object();

    bool operator==(const BehaviorTree& other) const {
        return tree_id == other.tree_id && round_index == other.round_index &&
               root_condition == other.root_condition && workflow_steps == other.workflow_steps &&
               allowed_actions == other.allowed_actions &&
               disallowed_actions == other.disallowed_actions &&
               refusal_conditions == other.refusal_conditions &&
               transfer_conditions == other.transfer_conditions && branches == other.branches &&
               extras == other.extras;
    }
};

/// Root-to-leaf traversal. `tool_sequence` lists every tool named along
/// the path, in order, regardless of category.
struct ExecutionPath {
    std::vector<std::string> node_ids;
    std::vector<std::string> tool_sequence;

    bool operator==(const ExecutionPath& other) const { return node_ids == other.node_ids; }
    bool empty() const { return node_ids.empty(); }

    std::string key() const {
        std::string out;
        for (const auto& id : node_ids) {
            if (!out.empty()) out += '/';
            out += id;
        }
        return out;
    }
};

namespace detail {

template <typename Fn>
void walk_nodes(const std::vector<BranchNode>& nodes, Fn&& fn) {
    for (const auto& n : nodes) {
        fn(n);
        walk_nodes(n.next, fn);
    }
}

inline void enumerate_rec(const std::vector<BranchNode>& nodes, std::vector<const BranchNode*>& stack,
                          std::vector<ExecutionPath>& out, std::set<std::string>& seen_ids) {
    for (const auto& node : nodes) {
        if (node.node_id.empty()) {
            throw StructuralError("node with empty node_id under condition: " + node.condition);
        }
        if (!seen_ids.insert(node.node_id).second) {
            throw StructuralError("duplicate node_id encountered: " + node.node_id);
        }
        stack.push_back(&node);
        if (node.leaf()) {
            ExecutionPath path;
            for (const auto* n : stack) {
                path.node_ids.push_back(n->node_id);
                if (!n->tool_call.empty()) path.tool_sequence.push_back(n->tool_call);
            }
            out.push_back(std::move(path));
        } else {
            enumerate_rec(node.next, stack, out, seen_ids);
        }
        stack.pop_back();
    }
}

inline BranchNode* find_node(std::vector<BranchNode>& nodes, const std::string& node_id) {
    for (auto& n : nodes) {
        if (n.node_id == node_id) return &n;
        if (BranchNode* hit = find_node(n.next, node_id)) return hit;
    }
    return nullptr;
}

inline const BranchNode* find_node(const std::vector<BranchNode>& nodes, const std::string& node_id) {
    return find_node(const_cast<std::vector<BranchNode>&>(nodes), node_id);
}

inline size_t count_leaves(const BranchNode& node) {
    if (node.leaf()) return 1;
    size_t total = 0;
    for (const auto& child : node.next) total += count_leaves(child);
    return total;
}

}  // namespace detail

/// Every root-to-leaf path in document order (left to right as listed in
/// `next`). Throws StructuralError on malformed trees.
inline std::vector<ExecutionPath> enumerate_paths(const BehaviorTree& tree) {
    std::vector<ExecutionPath> paths;
    std::vector<const BranchNode*> stack;
    std::set<std::string> seen_ids;
    detail::enumerate_rec(tree.branches, stack, paths, seen_ids);
    return paths;
}

inline size_t count_leaves(const BranchNode& subtree) { return detail::count_leaves(subtree); }

inline const BranchNode* find_node(const BehaviorTree& tree, const std::string& node_id) {
    return detail::find_node(tree.branches, node_id);
}

/// Matching identity of a path: the ordered state-modifying tool calls
/// plus refuse/transfer markers. Read-only tools are invisible here.
inline std::vector<std::string> path_signature(const BehaviorTree& tree, const ExecutionPath& path,
                                               const std::vector<ToolSpec>& tools) {
    std::vector<std::string> sig;
    for (const auto& node_id : path.node_ids) {
        const BranchNode* node = find_node(tree, node_id);
        if (node == nullptr) {
            throw StructuralError("path references unknown node: " + node_id);
        }
        if (node->action == "refuse") sig.push_back("!refuse");
        if (node->action == "transfer") sig.push_back("!transfer");
        if (!node->tool_call.empty()) {
            const ToolSpec* tool = find_tool(tools, node->tool_call);
            // Unknown tools count as state-modifying.
            if (tool == nullptr || tool->state_modifying()) sig.push_back(node->tool_call);
        }
    }
    return sig;
}

/// The same identity computed from a finished episode.
inline std::vector<std::string> trajectory_signature(const Trajectory& traj,
                                                     const std::vector<ToolSpec>& tools) {
    std::vector<std::string> sig;
    for (const auto& e : traj.events) {
        if (e.type == EventType::agent_message) {
            if (e.marker == Marker::refuse) sig.push_back("!refuse");
            if (e.marker == Marker::transfer) sig.push_back("!transfer");
        } else if (e.type == EventType::tool_call) {
            const ToolSpec* tool = find_tool(tools, e.tool);
            if (tool == nullptr || tool->state_modifying()) sig.push_back(e.tool);
        }
    }
    return sig;
}

/// Ordered names of the state-modifying calls in an episode.
inline std::vector<std::string> state_modifying_calls(const Trajectory& traj,
                                                      const std::vector<ToolSpec>& tools) {
    std::vector<std::string> calls;
    for (const auto& e : traj.events) {
        if (e.type != EventType::tool_call) continue;
        const ToolSpec* tool = find_tool(tools, e.tool);
        if (tool == nullptr || tool->state_modifying()) calls.push_back(e.tool);
    }
    return calls;
}

/// Schema and referential checks. Violations are data; the caller decides
/// whether to reject.
inline ValidationReport validate_tree(const BehaviorTree& tree, const std::vector<ToolSpec>& tools) {
    ValidationReport report;
    std::set<std::string> ids;
    detail::walk_nodes(tree.branches, [&](const BranchNode& node) {
        if (node.node_id.empty()) {
            report.add("empty_node_id", node.condition, "node has no node_id");
            return;
        }
        if (!ids.insert(node.node_id).second) {
            report.add("duplicate_node_id", node.node_id, "node_id appears more than once");
        }
        if (!is_known_action(node.action)) {
            report.add("unknown_action", node.node_id, "action '" + node.action + "' not recognized");
        }
        if (!node.tool_call.empty()) {
            const ToolSpec* tool = find_tool(tools, node.tool_call);
            if (tool == nullptr) {
                report.add("unknown_tool", node.node_id,
                           "tool '" + node.tool_call + "' is not registered");
            } else if ((node.action == "refuse" || node.action == "transfer") &&
                       tool->state_modifying()) {
                report.add("state_change_on_" + node.action, node.node_id,
                           "a " + node.action + " node must not call state-modifying tool '" +
                               node.tool_call + "'");
            }
        }
    });
    if (tree.round_index >= 1 && tree.branches.empty()) {
        report.add("empty_branches", tree.tree_id,
                   "tree past round 0 has no branches");
    }
    if (report.ok()) {
        // Fail closed on ambiguous trees: matching requires pairwise-distinct
        // path signatures.
        std::vector<ExecutionPath> paths;
        try {
            paths = enumerate_paths(tree);
        } catch (const StructuralError& err) {
            report.add("malformed_tree", tree.tree_id, err.what());
            return report;
        }
        std::map<std::string, std::string> seen;
        for (const auto& path : paths) {
            std::string flat;
            for (const auto& token : path_signature(tree, path, tools)) {
                flat += token;
                flat += '\t';
            }
            auto [it, inserted] = seen.emplace(flat, path.key());
            if (!inserted) {
                report.add("ambiguous_paths", path.key(),
                           "shares a tool signature with path " + it->second);
            }
        }
    }
    return report;
}

/// Copy-on-write graft: returns a new tree with `subtree` appended to the
/// parent's children. Throws on unknown parent or node-id collision.
inline BehaviorTree graft_branch(BehaviorTree tree, const std::string& parent_id,
                                 const BranchNode& subtree) {
    std::set<std::string> existing;
    detail::walk_nodes(tree.branches, [&](const BranchNode& n) { existing.insert(n.node_id); });
    std::vector<std::string> incoming;
    detail::walk_nodes({subtree}, [&](const BranchNode& n) { incoming.push_back(n.node_id); });
    for (const auto& id : incoming) {
        if (existing.count(id)) {
            throw StructuralError("node id collision on graft: " + id);
        }
    }
    BranchNode* parent = detail::find_node(tree.branches, parent_id);
    if (parent == nullptr) {
        throw StructuralError("unknown parent node: " + parent_id);
    }
    parent->next.push_back(subtree);
    return tree;
}

/// Resolve an episode against the tree: the unique path whose signature
/// equals the trajectory's, with no disallowed tool invoked along the
/// way. Returns nullopt when no path fits; throws AmbiguityError when two
/// fit.
inline std::optional<ExecutionPath> match_trajectory(const BehaviorTree& tree,
                                                     const Trajectory& traj,
                                                     const std::vector<ToolSpec>& tools) {
    for (const auto& e : traj.events) {
        if (e.type != EventType::tool_call) continue;
        for (const auto& forbidden : tree.disallowed_actions) {
            if (!e.tool.empty() && contains(forbidden, e.tool)) return std::nullopt;
        }
    }
    const std::vector<std::string> want = trajectory_signature(traj, tools);
    std::optional<ExecutionPath> found;
    for (const auto& path : enumerate_paths(tree)) {
        if (path_signature(tree, path, tools) != want) continue;
        if (found) {
            throw AmbiguityError("two paths match one trajectory signature", found->key(),
                                 path.key());
        }
        found = path;
    }
    return found;
}

// ---------------------------------------------------------------------------
// Serialization (canonical JSON schema; unknown fields preserved verbatim)
// ---------------------------------------------------------------------------

inline json node_to_json(const BranchNode& node) {
    json j = node.extras;
    j["node_id"] = node.node_id;
    j["condition"] = node.condition;
    if (!node.validation_step.empty()) j["validation_step"] = node.validation_step;
    j["action"] = node.action;
    if (!node.tool_call.empty()) j["tool_call"] = node.tool_call;
    if (node.next.empty()) {
        j["next"] = nullptr;
    } else {
        json next = json::array();
        for (const auto& child : node.next) next.push_back(node_to_json(child));
        j["next"] = next;
    }
    return j;
}

inline BranchNode node_from_json(const json& j, const std::string& positional_id) {
    if (!j.is_object()) throw DataError("branch node is not an object");
    BranchNode node;
    node.node_id = j.value("node_id", positional_id);
    node.condition = j.value("condition", "");
    node.validation_step = j.value("validation_step", "");
    node.action = j.value("action", "proceed");
    if (j.contains("tool_call") && j.at("tool_call").is_string()) {
        node.tool_call = j.at("tool_call").get<std::string>();
    }
    if (j.contains("next") && j.at("next").is_array()) {
        size_t idx = 0;
        for (const auto& child : j.at("next")) {
            node.next.push_back(node_from_json(child, positional_id + "." + std::to_string(idx)));
            ++idx;
        }
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "node_id" || k == "condition" || k == "validation_step" || k == "action" ||
            k == "tool_call" || k == "next")
            continue;
        node.extras[k] = it.value();
    }
    return node;
}

inline json tree_to_json(const BehaviorTree& tree) {
    json j = tree.extras;
    j["tree_id"] = tree.tree_id;
    j["round_index"] = tree.round_index;
    j["root_condition"] = tree.root_condition;
    j["workflow_steps"] = tree.workflow_steps;
    j["allowed_actions"] = tree.allowed_actions;
    j["disallowed_actions"] = tree.disallowed_actions;
    j["refusal_conditions"] = tree.refusal_conditions;
    j["transfer_conditions"] = tree.transfer_conditions;
    json branches = json::array();
    for (const auto& b : tree.branches) branches.push_back(node_to_json(b));
    j["branches"] = branches;
    return j;
}

inline BehaviorTree tree_from_json(const json& j) {
    if (!j.is_object()) throw DataError("behavior tree is not an object");
    BehaviorTree tree;
    tree.tree_id = j.value("tree_id", "");
    tree.round_index = j.value("round_index", 0);
    tree.root_condition = j.value("root_condition", "");
    auto read_list = [&](const char* key) {
        std::vector<std::string> out;
        if (j.contains(key) && j.at(key).is_array()) {
            for (const auto& item : j.at(key)) out.push_back(item.get<std::string>());
        }
        return out;
    };
    tree.workflow_steps = read_list("workflow_steps");
    tree.allowed_actions = read_list("allowed_actions");
    tree.disallowed_actions = read_list("disallowed_actions");
    tree.refusal_conditions = read_list("refusal_conditions");
    tree.transfer_conditions = read_list("transfer_conditions");
    if (j.contains("branches") && j.at("branches").is_array()) {
        size_t idx = 0;
        for (const auto& b : j.at("branches")) {
            tree.branches.push_back(node_from_json(b, "n" + std::to_string(idx)));
            ++idx;
        }
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "tree_id" || k == "round_index" || k == "root_condition" ||
            k == "workflow_steps" || k == "allowed_actions" || k == "disallowed_actions" ||
            k == "refusal_conditions" || k == "transfer_conditions" || k == "branches")
            continue;
        tree.extras[k] = it.value();
    }
    return tree;
}

}  // namespace flywheel
