// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "flywheel/behavior_tree.hpp"
#include "flywheel/errors.hpp"
#include "flywheel/json_util.hpp"
#include "flywheel/strings.hpp"
#include "flywheel/tool_spec.hpp"

namespace flywheel {

inline constexpr size_t kMaxToolParams = 3;

enum class PredicateKind { tool_called, tool_not_called, env_field_equals, final_message_matches, judge };

inline std::string to_string(PredicateKind k) {
    switch (k) {
        case PredicateKind::tool_called: return "tool_called";
        case PredicateKind::tool_not_called: return "tool_not_called";
        case PredicateKind::env_field_equals: return "env_field_equals";
        case PredicateKind::final_message_matches: return "final_message_matches";
        case PredicateKind::judge: return "judge";
    }
    return "judge";
}

inline PredicateKind predicate_kind_from_string(const std::string& s) {
    if (s == "tool_called") return PredicateKind::tool_called;
    if (s == "tool_not_called") return PredicateKind::tool_not_called;
    if (s == "env_field_equals") return PredicateKind::env_field_equals;
    if (s == "final_message_matches") return PredicateKind::final_message_matches;
    if (s == "judge") return PredicateKind::judge;
    throw DataError("unknown predicate kind: " + s);
}

/// One verifiable unit of the rubric. The deterministic kinds are
/// evaluated by scanning the trajectory and final environment; `judge`
/// routes a free-text criterion to the judge backend.
struct Subgoal {
    std::string subgoal_id;
    std::string description;
    PredicateKind kind = PredicateKind::judge;
    std::string tool_name;             // tool_called / tool_not_called
    json arg_subset = json::object();  // tool_called: required argument subset
    std::string env_key;               // env_field_equals: dotted path into records
    json env_value = json();           // env_field_equals
    std::string pattern;               // final_message_matches: ECMAScript regex
    std::string criterion;             // judge
    double weight = 1.0;

    static Subgoal called(std::string id, std::string tool, json args = json::object()) {
        Subgoal s;
        s.subgoal_id = std::move(id);
        s.kind = PredicateKind::tool_called;
        s.tool_name = std::move(tool);
        s.arg_subset = std::move(args);
        s.description = "tool " + s.tool_name + " called";
        return s;
    }
    static Subgoal not_called(std::string id, std::string tool) {
        Subgoal s;
        s.subgoal_id = std::move(id);
        s.kind = PredicateKind::tool_not_called;
        s.tool_name = std::move(tool);
        s.description = "tool " + s.tool_name + " not called";
        return s;
    }
};

inline json subgoal_to_json(const Subgoal& s) {
    json predicate{{"kind", to_string(s.kind)}};
    switch (s.kind) {
        case PredicateKind::tool_called:
            predicate["tool"] = s.tool_name;
            predicate["args"] = s.arg_subset;
            break;
        case PredicateKind::tool_not_called:
            predicate["tool"] = s.tool_name;
            break;
        case PredicateKind::env_field_equals:
            predicate["key"] = s.env_key;
            predicate["value"] = s.env_value;
            break;
        case PredicateKind::final_message_matches:
            predicate["pattern"] = s.pattern;
            break;
        case PredicateKind::judge:
            predicate["criterion"] = s.criterion;
            break;
    }
    return json{{"subgoal_id", s.subgoal_id},
                {"description", s.description},
                {"predicate", predicate},
                {"weight", s.weight}};
}

inline Subgoal subgoal_from_json(const json& j) {
    Subgoal s;
    s.subgoal_id = j.at("subgoal_id").get<std::string>();
    s.description = j.value("description", "");
    s.weight = j.value("weight", 1.0);
    const json& p = j.at("predicate");
    s.kind = predicate_kind_from_string(p.at("kind").get<std::string>());
    switch (s.kind) {
        case PredicateKind::tool_called:
            s.tool_name = p.at("tool").get<std::string>();
            s.arg_subset = p.value("args", json::object());
            break;
        case PredicateKind::tool_not_called:
            s.tool_name = p.at("tool").get<std::string>();
            break;
        case PredicateKind::env_field_equals:
            s.env_key = p.at("key").get<std::string>();
            s.env_value = p.at("value");
            break;
        case PredicateKind::final_message_matches:
            s.pattern = p.at("pattern").get<std::string>();
            break;
        case PredicateKind::judge:
            s.criterion = p.at("criterion").get<std::string>();
            break;
    }
    return s;
}

/// One planned tool call in a normal or hack path, with the inputs the
/// caller should pass and the output the mock tool should return.
/// `expected_output` may be the literal string "no_return" for calls the
/// compliant flow never reaches.
struct PlannedCall {
    std::string tool;
    json input = json::object();
    json expected_output = json();

    bool operator==(const PlannedCall& other) const {
        return tool == other.tool && input == other.input &&
               expected_output == other.expected_output;
    }
};

inline json planned_call_to_json(const PlannedCall& c) {
    return json{{"tool_name", c.tool}, {"input", c.input}, {"expected_output", c.expected_output}};
}

inline PlannedCall planned_call_from_json(const json& j) {
    PlannedCall c;
    c.tool = j.at("tool_name").get<std::string>();
    c.input = j.value("input", json::object());
    c.expected_output = j.value("expected_output", json());
    return c;
}

/// One flywheel task: the environment-state / user-instruction /
/// agent-instruction triple plus its paths, rubric, and adversarial
/// fields. The user instruction is stored split (task sentence +
/// background) and concatenated for the mock user.
struct TaskSpec {
    std::string task_id;
    int round_index = 0;
    json environment_state = json::object();
    std::string task;             // single-sentence user request
    std::string user_background;  // context with the initial query parameters
    std::string hack_success_user_background;
    std::string agent_instruction;  // SOP; empty only at round 0
    std::vector<ToolSpec> tools;
    std::string tree_ref;
    ExecutionPath expected_path;
    std::vector<PlannedCall> normal_plan;
    std::vector<PlannedCall> hack_plan;
    std::vector<std::string> hack_path;  // state-modifying tool names of the trap
    std::string adversarial_strategy;
    std::vector<Subgoal> rubric;
    std::string test_policy;
    std::string evaluation;

    std::string user_instruction() const {
        if (user_background.empty()) return task;
        return task + "\n" + user_background;
    }
    bool adversarial() const { return !adversarial_strategy.empty(); }
};

/// Flags any tool with more than three parameters or a duplicated name.
inline ValidationReport enforce_tool_arity(const std::vector<ToolSpec>& tools) {
    ValidationReport report;
    std::set<std::string> names;
    for (const auto& tool : tools) {
        if (tool.parameters.size() > kMaxToolParams) {
            report.add("too_many_params", tool.name,
                       "tool declares " + std::to_string(tool.parameters.size()) +
                           " parameters (max " + std::to_string(kMaxToolParams) + ")");
        }
        if (!names.insert(tool.name).second) {
            report.add("duplicate_tool", tool.name, "tool name declared more than once");
        }
        std::set<std::string> params;
        for (const auto& p : tool.parameters) {
            if (!params.insert(p.name).second) {
                report.add("duplicate_param", tool.name, "parameter '" + p.name + "' repeats");
            }
        }
    }
    return report;
}

/// Static task checks against the task's own tree.
inline ValidationReport validate_task(const TaskSpec& task, const BehaviorTree& tree) {
    ValidationReport report;
    if (task.task_id.empty()) report.add("missing_task_id", "", "task has no id");
    if (!task.environment_state.is_object() || task.environment_state.empty()) {
        report.add("empty_environment", task.task_id, "environment state is empty");
    }
    if (trim(task.user_instruction()).empty()) {
        report.add("empty_user_instruction", task.task_id, "user instruction is empty");
    }
    if (trim(task.agent_instruction).empty() && task.round_index > 0) {
        report.add("empty_agent_instruction", task.task_id,
                   "agent instruction may be empty only at round 0");
    }
    if (task.rubric.empty()) {
        report.add("empty_rubric", task.task_id, "task needs at least one subgoal");
    } else {
        double total = 0;
        for (const auto& s : task.rubric) total += s.weight;
        if (!(total > 0)) report.add("zero_weight", task.task_id, "subgoal weights sum to zero");
    }
    const bool strategy_set = !task.adversarial_strategy.empty();
    const bool hack_set = !task.hack_path.empty();
    if (strategy_set != hack_set) {
        report.add("inconsistent_adversarial_fields", task.task_id,
                   strategy_set ? "adversarial_strategy set but hack_path empty"
                                : "hack_path set but adversarial_strategy empty");
    }
    if (task.tree_ref != tree.tree_id) {
        report.add("tree_mismatch", task.task_id,
                   "task references tree " + task.tree_ref + " but was validated against " +
                       tree.tree_id);
    }
    bool path_found = false;
    try {
        for (const auto& path : enumerate_paths(tree)) {
            if (path == task.expected_path) {
                path_found = true;
                break;
            }
        }
    } catch (const StructuralError& err) {
        report.add("malformed_tree", task.tree_ref, err.what());
    }
    if (!path_found) {
        report.add("unknown_path", task.expected_path.key(),
                   "expected_path is not a path of the referenced tree");
    }
    report.merge(enforce_tool_arity(task.tools));
    for (const auto& call : task.normal_plan) {
        if (find_tool(task.tools, call.tool) == nullptr) {
            report.add("unknown_tool", call.tool, "planned call names an unregistered tool");
        }
    }
    for (const auto& call : task.hack_plan) {
        if (find_tool(task.tools, call.tool) == nullptr) {
            report.add("unknown_tool", call.tool, "planned hack call names an unregistered tool");
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Parameter traceability
// ---------------------------------------------------------------------------

struct UntraceableValue {
    std::string path_name;  // "normal_path" | "hack_path"
    size_t call_index = 0;
    std::string param;
    std::string value;
};

struct TraceabilityReport {
    std::vector<UntraceableValue> untraceable;
    bool ok() const { return untraceable.empty(); }
};

namespace detail {

inline bool value_in_text(const json& value, const std::string& lowered_text) {
    if (value.is_object() || value.is_array()) {
        bool all = true;
        for_each_scalar(value, [&](const json& leaf) {
            if (!value_in_text(leaf, lowered_text)) all = false;
        });
        return all && !value.empty();
    }
    const std::string needle = to_lower(trim(scalar_to_text(value)));
    if (needle.empty()) return true;
    return contains(lowered_text, needle);
}

inline bool value_in_output(const json& value, const json& output) {
    if (output.is_null() || (output.is_string() && output.get<std::string>() == "no_return")) {
        return false;
    }
    if (value.is_object() || value.is_array()) return json_contains(output, value);
    const std::string needle = to_lower(trim(scalar_to_text(value)));
    bool found = false;
    for_each_scalar(output, [&](const json& leaf) {
        if (!found && to_lower(trim(scalar_to_text(leaf))) == needle) found = true;
    });
    return found;
}

inline void trace_plan(const std::vector<PlannedCall>& plan, const std::string& path_name,
                       const std::string& background_text, TraceabilityReport& report) {
    const std::string lowered = to_lower(background_text);
    for (size_t i = 0; i < plan.size(); ++i) {
        for (auto it = plan[i].input.begin(); it != plan[i].input.end(); ++it) {
            bool traced = value_in_text(it.value(), lowered);
            for (size_t j = 0; !traced && j < i; ++j) {
                traced = value_in_output(it.value(), plan[j].expected_output);
            }
            if (!traced) {
                report.untraceable.push_back(
                    {path_name, i, it.key(), scalar_to_text(it.value())});
            }
        }
    }
}

}  // namespace detail

/// Every literal input of every planned call must be sourced from the
/// user background, the hack-success background (hack path only), or the
/// expected output of an earlier call in the same path.
inline TraceabilityReport check_traceability(const TaskSpec& task) {
    TraceabilityReport report;
    detail::trace_plan(task.normal_plan, "normal_path", task.user_background, report);
    detail::trace_plan(task.hack_plan, "hack_path",
                       task.user_background + "\n" + task.hack_success_user_background, report);
    return report;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json plan_to_json(const std::vector<PlannedCall>& plan) {
    json arr = json::array();
    for (const auto& c : plan) arr.push_back(planned_call_to_json(c));
    return arr;
}

inline std::vector<PlannedCall> plan_from_json(const json& arr) {
    std::vector<PlannedCall> plan;
    if (arr.is_array()) {
        for (const auto& c : arr) plan.push_back(planned_call_from_json(c));
    }
    return plan;
}

inline json task_to_json(const TaskSpec& task) {
    json rubric = json::array();
    for (const auto& s : task.rubric) rubric.push_back(subgoal_to_json(s));
    json test_case{{"task", task.task},
                   {"user_background", task.user_background},
                   {"hack_success_user_background", task.hack_success_user_background},
                   {"tool_return_expected",
                    json{{"normal_path", plan_to_json(task.normal_plan)},
                         {"hack_path", plan_to_json(task.hack_plan)}}},
                   {"test_policy", task.test_policy},
                   {"user_escape_strategy", task.adversarial_strategy},
                   {"evaluation", task.evaluation}};
    return json{{"schema_version", kSchemaVersion},
                {"task_id", task.task_id},
                {"round_index", task.round_index},
                {"tree_ref", task.tree_ref},
                {"expected_path", task.expected_path.node_ids},
                {"environment_state", task.environment_state},
                {"agent_instruction", task.agent_instruction},
                {"tools", tools_to_json(task.tools)},
                {"rubric", rubric},
                {"hack_path", task.hack_path},
                {"test_case", test_case}};
}

inline TaskSpec task_from_json(const json& j) {
    check_schema_version(j, "task");
    TaskSpec task;
    task.task_id = j.at("task_id").get<std::string>();
    task.round_index = j.value("round_index", 0);
    task.tree_ref = j.value("tree_ref", "");
    if (j.contains("expected_path")) {
        for (const auto& id : j.at("expected_path")) {
            task.expected_path.node_ids.push_back(id.get<std::string>());
        }
    }
    task.environment_state = j.value("environment_state", json::object());
    task.agent_instruction = j.value("agent_instruction", "");
    if (j.contains("tools")) task.tools = tools_from_json(j.at("tools"));
    if (j.contains("rubric")) {
        for (const auto& s : j.at("rubric")) task.rubric.push_back(subgoal_from_json(s));
    }
    if (j.contains("hack_path")) {
        for (const auto& t : j.at("hack_path")) task.hack_path.push_back(t.get<std::string>());
    }
    const json& tc = j.at("test_case");
    task.task = tc.value("task", "");
    task.user_background = tc.value("user_background", "");
    task.hack_success_user_background = tc.value("hack_success_user_background", "");
    if (tc.contains("tool_return_expected")) {
        task.normal_plan = plan_from_json(tc.at("tool_return_expected").value("normal_path", json::array()));
        task.hack_plan = plan_from_json(tc.at("tool_return_expected").value("hack_path", json::array()));
    }
    task.test_policy = tc.value("test_policy", "");
    task.adversarial_strategy = tc.value("user_escape_strategy", "");
    task.evaluation = tc.value("evaluation", "");
    return task;
}

}  // namespace flywheel
