// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "flywheel/agentic.hpp"
#include "flywheel/backend.hpp"
#include "flywheel/errors.hpp"
#include "flywheel/http_backend.hpp"
#include "flywheel/json_util.hpp"
#include "flywheel/reasoning.hpp"
#include "flywheel/rollout.hpp"
#include "flywheel/strings.hpp"
#include "flywheel/task_model.hpp"

namespace flywheel {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// JSONL files
// ---------------------------------------------------------------------------

inline void write_jsonl(const fs::path& path, const std::vector<json>& records) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : records) out << r.dump() << '\n';
}

inline std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<json> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw DataError("bad JSON at " + path.string() + ":" + std::to_string(line_no));
        }
        records.push_back(std::move(j));
    }
    return records;
}

inline void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// One role's backend binding. Accepted forms:
///   scripted:<rule file>       deterministic rule table
///   http:<endpoint>#<model>    remote chat-completion endpoint
///   table                      (mock_tool) answer from the env document
///   plan_follower              (agent) replay the task's expected path
struct BackendBinding {
    std::string kind;
    std::string target;
    std::string model;
};

inline BackendBinding parse_binding(const std::string& value) {
    BackendBinding b;
    const size_t colon = value.find(':');
    if (colon == std::string::npos) {
        b.kind = value;
        return b;
    }
    b.kind = value.substr(0, colon);
    b.target = value.substr(colon + 1);
    if (b.kind == "http") {
        const size_t hash = b.target.rfind('#');
        if (hash != std::string::npos) {
            b.model = b.target.substr(hash + 1);
            b.target = b.target.substr(0, hash);
        }
    }
    return b;
}

/// Flat key = value configuration document. `#` starts a comment.
/// Relative paths resolve against the config file's directory. The
/// FLYWHEEL_API_TOKEN environment variable overrides the api_token key.
struct RunConfig {
    std::map<RoleTag, BackendBinding> backends;
    std::map<RoleTag, double> temperatures;  // sampling defaults per role
    std::map<RoleTag, int> max_tokens;
    std::uint64_t seed = 0;
    int group_size = 8;
    int parallel = 1;
    int turn_cap = 20;
    int max_tools_per_turn = 8;
    int depth_cap = 6;
    int branch_cap = 4;
    int tasks_per_round_cap = 10000;
    double adversarial_rate = 0.5;
    double resample_rate = 0.25;
    double validation_threshold = 1.0;
    bool strict_rewards = true;
    int retry_cap = 3;
    int inflight_cap = 8;
    std::string output_root = "rounds";
    std::string prompt_dir;
    std::string seed_tasks;
    std::string api_token;
    fs::path base_dir;  // directory of the config file

    fs::path resolve(const std::string& path) const {
        fs::path p(path);
        if (p.is_absolute() || base_dir.empty()) return p;
        return base_dir / p;
    }

    static RunConfig load(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path.string());
        RunConfig cfg;
        cfg.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            // A comment starts at the line head or after whitespace, so a
            // '#' inside a value (endpoint#model) survives.
            for (size_t i = 0; i < line.size(); ++i) {
                if (line[i] == '#' && (i == 0 || is_space(line[i - 1]))) {
                    line = line.substr(0, i);
                    break;
                }
            }
            const std::string stripped = trim(line);
            if (stripped.empty()) continue;
            const size_t eq = stripped.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("expected key = value at " + path.string() + ":" +
                                  std::to_string(line_no));
            }
            cfg.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
        }
        if (const char* token = std::getenv("FLYWHEEL_API_TOKEN")) cfg.api_token = token;
        return cfg;
    }

    void set(const std::string& key, const std::string& value) {
        try {
            if (starts_with(key, "backend.")) {
                backends[role_tag_from_string(key.substr(8))] = parse_binding(value);
            } else if (starts_with(key, "temperature.")) {
                temperatures[role_tag_from_string(key.substr(12))] = std::stod(value);
            } else if (starts_with(key, "max_tokens.")) {
                max_tokens[role_tag_from_string(key.substr(11))] = std::stoi(value);
            } else if (key == "seed") {
                seed = std::stoull(value);
            } else if (key == "group_size") {
                group_size = std::stoi(value);
            } else if (key == "parallel") {
                parallel = std::stoi(value);
            } else if (key == "turn_cap") {
                turn_cap = std::stoi(value);
            } else if (key == "max_tools_per_turn") {
                max_tools_per_turn = std::stoi(value);
            } else if (key == "depth_cap") {
                depth_cap = std::stoi(value);
            } else if (key == "branch_cap") {
                branch_cap = std::stoi(value);
            } else if (key == "tasks_per_round_cap") {
                tasks_per_round_cap = std::stoi(value);
            } else if (key == "adversarial_rate") {
                adversarial_rate = std::stod(value);
            } else if (key == "resample_rate") {
                resample_rate = std::stod(value);
            } else if (key == "validation_threshold") {
                validation_threshold = std::stod(value);
            } else if (key == "strict_rewards") {
                strict_rewards = value == "true" || value == "1";
            } else if (key == "retry_cap") {
                retry_cap = std::stoi(value);
            } else if (key == "inflight_cap") {
                inflight_cap = std::stoi(value);
            } else if (key == "output_root") {
                output_root = value;
            } else if (key == "prompt_dir") {
                prompt_dir = value;
            } else if (key == "seed_tasks") {
                seed_tasks = value;
            } else if (key == "api_token") {
                api_token = value;
            } else {
                throw ConfigError("unknown config key: " + key);
            }
        } catch (const std::invalid_argument&) {
            throw ConfigError("bad value for " + key + ": " + value);
        } catch (const std::out_of_range&) {
            throw ConfigError("bad value for " + key + ": " + value);
        }
    }

    void require_all_roles() const {
        for (RoleTag role : kAllRoles) {
            if (!backends.count(role)) {
                throw ConfigError("no backend bound for role " + to_string(role));
            }
        }
    }

    bool plan_follower_agent() const {
        auto it = backends.find(RoleTag::agent);
        return it != backends.end() && it->second.kind == "plan_follower";
    }

    ToolMode tool_mode() const {
        auto it = backends.find(RoleTag::mock_tool);
        return it != backends.end() && it->second.kind != "table" ? ToolMode::model
                                                                  : ToolMode::table;
    }

    Gateway build_gateway() const {
        require_all_roles();
        Gateway gateway;
        RetryPolicy retry;
        retry.max_attempts = retry_cap;
        gateway.set_retry(retry);
        for (const auto& [role, binding] : backends) {
            if (binding.kind == "table" || binding.kind == "plan_follower") continue;
            if (binding.kind == "scripted") {
                gateway.bind(role,
                             std::make_shared<ScriptedBackend>(
                                 ScriptedBackend::from_file(resolve(binding.target).string())),
                             inflight_cap);
            } else if (binding.kind == "http") {
                HttpBackendOptions opts;
                opts.endpoint = binding.target;
                opts.model = binding.model;
                opts.auth_token = api_token;
                gateway.bind(role, std::make_shared<HttpBackend>(opts), inflight_cap);
            } else {
                throw ConfigError("unknown backend kind '" + binding.kind + "' for role " +
                                  to_string(role));
            }
        }
        for (RoleTag role : kAllRoles) {
            const auto temp = temperatures.find(role);
            const auto tokens = max_tokens.find(role);
            if (temp == temperatures.end() && tokens == max_tokens.end()) continue;
            const Sampling base = default_sampling(role);
            gateway.set_sampling(role,
                                 temp != temperatures.end() ? temp->second : base.temperature,
                                 tokens != max_tokens.end() ? tokens->second : base.max_tokens);
        }
        return gateway;
    }

    FlywheelParams flywheel_params() const {
        FlywheelParams p;
        p.depth_cap = depth_cap;
        p.branch_cap = branch_cap;
        p.tasks_per_round_cap = tasks_per_round_cap;
        p.adversarial_rate = adversarial_rate;
        p.resample_rate = resample_rate;
        p.validation_threshold = validation_threshold;
        p.group_size = group_size;
        p.parallelism = parallel;
        p.seed = seed;
        p.strict_rewards = strict_rewards;
        p.use_plan_follower_agent = plan_follower_agent();
        p.rollout.turn_cap = turn_cap;
        p.rollout.max_tools_per_turn = max_tools_per_turn;
        p.rollout.tool_mode = tool_mode();
        if (!prompt_dir.empty()) p.prompts = PromptLibrary(resolve(prompt_dir).string());
        return p;
    }
};

// ---------------------------------------------------------------------------
// Round directories
// ---------------------------------------------------------------------------

inline fs::path round_dir(const fs::path& output_root, int round_index) {
    return output_root / ("round_" + std::to_string(round_index));
}

inline void save_round_state(const fs::path& dir, const RoundState& state) {
    std::vector<json> tasks;
    for (const auto& t : state.tasks) tasks.push_back(task_to_json(t));
    write_jsonl(dir / "tasks.jsonl", tasks);
    std::vector<json> trees;
    for (const auto& b : state.trees) trees.push_back(tree_bundle_to_json(b));
    write_jsonl(dir / "trees.jsonl", trees);
    json stats = state.stats;
    stats["config"] = state.config_snapshot;
    stats["schema_version"] = kSchemaVersion;
    write_text(dir / "stats.json", stats.dump(2) + "\n");
}

inline RoundState load_round_state(const fs::path& dir, int round_index) {
    RoundState state;
    state.round_index = round_index;
    for (const auto& j : read_jsonl(dir / "tasks.jsonl")) state.tasks.push_back(task_from_json(j));
    for (const auto& j : read_jsonl(dir / "trees.jsonl")) {
        state.trees.push_back(tree_bundle_from_json(j));
    }
    const fs::path stats_path = dir / "stats.json";
    if (fs::exists(stats_path)) {
        std::ifstream in(stats_path);
        json stats = json::parse(in, nullptr, false);
        if (!stats.is_discarded()) state.stats = stats;
    }
    return state;
}

/// Flatten groups into the aligned trajectories.jsonl / rewards.jsonl
/// pair for a round directory.
inline void save_rollout_artifacts(const fs::path& dir, const std::vector<RolloutGroup>& groups) {
    std::vector<json> trajectories;
    std::vector<json> rewards;
    for (const auto& g : groups) {
        for (size_t i = 0; i < g.trajectories.size(); ++i) {
            trajectories.push_back(trajectory_to_json(g.trajectories[i]));
            rewards.push_back(reward_report_to_json(g.reports[i]));
        }
    }
    write_jsonl(dir / "trajectories.jsonl", trajectories);
    write_jsonl(dir / "rewards.jsonl", rewards);
}

/// Regroup the aligned trajectory/reward files into groups.jsonl, the
/// hand-off unit for an external trainer. Byte-stable for fixed inputs.
inline fs::path export_groups(const fs::path& dir) {
    const fs::path traj_path = dir / "trajectories.jsonl";
    const fs::path reward_path = dir / "rewards.jsonl";
    if (!fs::exists(reward_path)) {
        throw DataError("missing rewards: run score before export (" + reward_path.string() + ")");
    }
    if (!fs::exists(traj_path)) {
        throw DataError("missing trajectories: run rollout before export (" + traj_path.string() +
                        ")");
    }
    const std::vector<json> trajectories = read_jsonl(traj_path);
    const std::vector<json> rewards = read_jsonl(reward_path);
    if (trajectories.size() != rewards.size()) {
        throw DataError("trajectories.jsonl and rewards.jsonl do not align: " +
                        std::to_string(trajectories.size()) + " vs " +
                        std::to_string(rewards.size()));
    }
    std::vector<json> lines;
    size_t i = 0;
    while (i < trajectories.size()) {
        check_schema_version(trajectories[i], "trajectories.jsonl");
        check_schema_version(rewards[i], "rewards.jsonl");
        const std::string task_id = trajectories[i].at("task_id").get<std::string>();
        json group{{"schema_version", kSchemaVersion},
                   {"task_id", task_id},
                   {"trajectories", json::array()},
                   {"rewards", json::array()}};
        for (; i < trajectories.size() &&
               trajectories[i].at("task_id").get<std::string>() == task_id;
             ++i) {
            if (rewards[i].at("task_id").get<std::string>() != task_id) {
                throw DataError("reward/trajectory task_id mismatch at line " +
                                std::to_string(i + 1));
            }
            group["trajectories"].push_back(trajectories[i]);
            group["rewards"].push_back(rewards[i].at("reward"));
        }
        lines.push_back(std::move(group));
    }
    const fs::path out = dir / "groups.jsonl";
    write_jsonl(out, lines);
    return out;
}

// ---------------------------------------------------------------------------
// Reasoning problem files
// ---------------------------------------------------------------------------

inline void save_problems(const fs::path& path, const std::vector<Problem>& problems) {
    std::vector<json> records;
    records.reserve(problems.size());
    for (const auto& p : problems) records.push_back(problem_to_json(p));
    write_jsonl(path, records);
}

inline std::vector<Problem> load_problems(const fs::path& path) {
    std::vector<Problem> problems;
    for (const auto& j : read_jsonl(path)) problems.push_back(problem_from_json(j));
    return problems;
}

/// Minimal {statement, answer} corpus ingestion; lines missing either
/// field are skipped.
inline std::vector<Problem> load_problem_seeds(const fs::path& path) {
    std::vector<Problem> problems;
    size_t line_no = 0;
    for (const auto& j : read_jsonl(path)) {
        ++line_no;
        if (!j.contains("statement") || !j.contains("answer")) continue;
        problems.push_back(problem_from_seed_record(j, "seed-" + std::to_string(line_no)));
    }
    return problems;
}

// ---------------------------------------------------------------------------
// Seed ingestion
// ---------------------------------------------------------------------------

struct SeedIngest {
    std::vector<TaskSpec> tasks;
    std::vector<TreeBundle> trees;
    std::vector<std::string> skipped;  // "task_id: reason"
};

namespace detail {

inline json seed_env_document(const json& env_state) {
    if (env_state.is_object() && (env_state.contains("records") || env_state.contains("tool_returns"))) {
        json doc = env_state;
        if (!doc.contains("records")) doc["records"] = json::object();
        if (!doc.contains("tool_returns")) doc["tool_returns"] = json::object();
        return doc;
    }
    return json{{"records", env_state}, {"tool_returns", json::object()}};
}

}  // namespace detail

/// Ingest linear seed tasks: each record carries workflow steps,
/// background info, tools, the user goal, and the environment state, and
/// becomes a task with a single-path tree. Records that fail the static
/// validators are skipped with a reason; the run continues.
inline SeedIngest ingest_seed_tasks(const fs::path& path) {
    SeedIngest out;
    size_t line_no = 0;
    for (const auto& record : read_jsonl(path)) {
        ++line_no;
        const std::string fallback_id = "seed-" + std::to_string(line_no);
        const std::string task_id = record.value("task_id", fallback_id);
        try {
            if (record.contains("schema_version")) check_schema_version(record, "seed record");
            for (const char* key : {"workflow_steps", "tools", "user_goal", "env_state"}) {
                if (!record.contains(key)) {
                    throw DataError(std::string("missing field ") + key);
                }
            }
            TaskSpec task;
            task.task_id = task_id;
            task.round_index = 0;
            task.task = record.at("user_goal").get<std::string>();
            task.user_background = record.value("user_background",
                                                record.value("background_info", ""));
            task.agent_instruction = record.value("agent_instruction", "");
            task.test_policy = record.value("test_policy", "");
            task.evaluation = record.value("evaluation", "");
            task.tools = tools_from_json(record.at("tools"));
            task.environment_state = detail::seed_env_document(record.at("env_state"));
            task.normal_plan = plan_from_json(record.value("normal_path", json::array()));

            // Single-path tree: one chain node per workflow step, planned
            // calls bound in order.
            TreeBundle bundle;
            bundle.tree.tree_id = task.task_id + "-tree";
            bundle.tree.round_index = 0;
            bundle.tree.root_condition = record.value("background_info", task.task);
            for (const auto& s : record.at("workflow_steps")) {
                bundle.tree.workflow_steps.push_back(s.get<std::string>());
            }
            bundle.tools = task.tools;
            bundle.sop = task.agent_instruction;

            BranchNode* parent = nullptr;
            const size_t count =
                std::max(bundle.tree.workflow_steps.size(), task.normal_plan.size());
            BranchNode root;
            for (size_t index = 0; index < count; ++index) {
                BranchNode node;
                node.node_id = "s" + std::to_string(index);
                node.condition = index < bundle.tree.workflow_steps.size()
                                     ? bundle.tree.workflow_steps[index]
                                     : "call: " + task.normal_plan[index].tool;
                if (index < task.normal_plan.size()) {
                    node.tool_call = task.normal_plan[index].tool;
                    const ToolSpec* spec = find_tool(task.tools, node.tool_call);
                    node.action =
                        spec != nullptr && spec->state_modifying() ? "execute" : "proceed";
                }
                if (parent == nullptr) {
                    root = node;
                    parent = &root;
                } else {
                    parent->next.push_back(node);
                    parent = &parent->next.back();
                }
            }
            if (parent == nullptr) throw DataError("workflow_steps is empty");
            bundle.tree.branches.push_back(root);

            const auto paths = enumerate_paths(bundle.tree);
            if (paths.size() != 1) throw DataError("seed tree must have exactly one path");
            task.tree_ref = bundle.tree.tree_id;
            task.expected_path = paths.front();

            if (record.contains("rubric")) {
                for (const auto& s : record.at("rubric")) {
                    task.rubric.push_back(subgoal_from_json(s));
                }
            } else {
                size_t sg = 0;
                for (const auto& call : task.normal_plan) {
                    const ToolSpec* spec = find_tool(task.tools, call.tool);
                    if (spec == nullptr || !spec->state_modifying()) continue;
                    task.rubric.push_back(
                        Subgoal::called("sg" + std::to_string(sg++), call.tool, call.input));
                }
                if (task.rubric.empty()) {
                    Subgoal fallback;
                    fallback.subgoal_id = "sg0";
                    fallback.kind = PredicateKind::final_message_matches;
                    fallback.pattern = ".+";
                    fallback.description = "agent produced a final reply";
                    task.rubric.push_back(std::move(fallback));
                }
            }

            const ValidationReport tree_check = validate_tree(bundle.tree, bundle.tools);
            if (!tree_check.ok()) throw DataError(tree_check.summary());
            const ValidationReport task_check = validate_task(task, bundle.tree);
            if (!task_check.ok()) throw DataError(task_check.summary());
            const TraceabilityReport trace = check_traceability(task);
            if (!trace.ok()) {
                throw DataError("untraceable parameters in seed plan");
            }

            out.tasks.push_back(std::move(task));
            out.trees.push_back(std::move(bundle));
        } catch (const Error& err) {
            out.skipped.push_back(task_id + ": " + err.what());
        }
    }
    return out;
}

}  // namespace flywheel
