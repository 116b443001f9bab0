// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "flywheel/backend.hpp"
#include "flywheel/behavior_tree.hpp"
#include "flywheel/errors.hpp"
#include "flywheel/mock_env.hpp"
#include "flywheel/reward.hpp"
#include "flywheel/task_model.hpp"
#include "flywheel/trajectory.hpp"

namespace flywheel {

struct RolloutParams {
    int turn_cap = 20;
    int max_tools_per_turn = 8;
    ToolMode tool_mode = ToolMode::table;

    // Hard event budget; hitting it terminates the episode as exhausted.
    size_t event_budget() const {
        return static_cast<size_t>(2) * static_cast<size_t>(turn_cap) *
               static_cast<size_t>(max_tools_per_turn);
    }
};

/// Split a leading "[refuse]" / "[transfer]" marker off an agent message.
inline std::pair<std::string, Marker> parse_agent_marker(const std::string& text) {
    const std::string trimmed = trim(text);
    const std::string lowered = to_lower(trimmed);
    if (starts_with(lowered, "[refuse]")) {
        return {trim(trimmed.substr(8)), Marker::refuse};
    }
    if (starts_with(lowered, "[transfer]")) {
        return {trim(trimmed.substr(10)), Marker::transfer};
    }
    return {trimmed, Marker::none};
}

/// Adapter exposing a gateway role binding as a plain backend.
class GatewayBackend : public Backend {
public:
    explicit GatewayBackend(const Gateway& gateway) : gateway_(&gateway) {}
    Completion generate(const GenerationRequest& req) override { return gateway_->generate(req); }
    std::string id() const override { return "gateway"; }

private:
    const Gateway* gateway_;
};

/// Deterministic teacher agent: replays the task's expected path one step
/// per turn (tool calls with the planned inputs, a refusal or transfer
/// message where the path demands one) and then reports completion. Used
/// as the scripted strong model when validating synthesized tasks.
class PlanFollowerBackend : public Backend {
public:
    static constexpr const char* kDoneSentence = "That completes everything on my end.";

    PlanFollowerBackend(const TaskSpec& task, const BehaviorTree& tree) {
        size_t plan_cursor = 0;
        for (const auto& node_id : task.expected_path.node_ids) {
            const BranchNode* node = find_node(tree, node_id);
            if (node == nullptr) {
                throw StructuralError("expected_path names unknown node: " + node_id);
            }
            if (node->action == "refuse") {
                steps_.push_back({Step::Kind::message,
                                  "[refuse] I cannot do that part of the request: " +
                                      node->condition});
            } else if (node->action == "transfer") {
                steps_.push_back({Step::Kind::message,
                                  "[transfer] Escalating to a human colleague: " + node->condition});
            }
            if (!node->tool_call.empty()) {
                json args = json::object();
                for (size_t i = plan_cursor; i < task.normal_plan.size(); ++i) {
                    if (task.normal_plan[i].tool == node->tool_call) {
                        args = task.normal_plan[i].input;
                        plan_cursor = i + 1;
                        break;
                    }
                }
                steps_.push_back({Step::Kind::call,
                                  "<tool_call>" +
                                      json{{"name", node->tool_call}, {"arguments", args}}.dump() +
                                      "</tool_call>"});
            }
        }
        steps_.push_back({Step::Kind::message, kDoneSentence});
    }

    Completion generate(const GenerationRequest& req) override {
        size_t turns_taken = 0;
        for (const auto& m : req.messages) {
            if (m.speaker == Speaker::assistant) ++turns_taken;
        }
        const Step& step =
            turns_taken < steps_.size() ? steps_[turns_taken] : steps_.back();
        Completion c;
        c.text = step.text;
        c.backend_id = "plan_follower";
        return c;
    }

    std::string id() const override { return "plan_follower"; }

private:
    struct Step {
        enum class Kind { call, message } kind;
        std::string text;
    };
    std::vector<Step> steps_;
};

namespace detail {

inline std::vector<ChatMessage> agent_view(const TaskSpec& task,
                                           const std::vector<ChatMessage>& dialogue) {
    std::vector<ChatMessage> messages;
    messages.push_back({Speaker::system, task.agent_instruction});
    messages.insert(messages.end(), dialogue.begin(), dialogue.end());
    return messages;
}

/// Fallback refusal detection for agents that do not mark their turns:
/// one judge call deciding whether the latest message is a refusal. Only
/// consulted while an adversarial escape is still pending.
inline bool judge_says_refusal(const Gateway& gateway, const std::string& message) {
    GenerationRequest req;
    req.role_tag = RoleTag::judge;
    req.sampling = default_sampling(RoleTag::judge);
    req.messages.push_back(
        {Speaker::user,
         "Does the assistant message below refuse or decline the user's request?\n"
         "Answer yes or no on the first line, nothing else before it.\n\n" +
             message});
    const Completion c = gateway.generate(req);
    return flywheel::detail::parse_judge_verdict(c.text).value_or(false);
}

}  // namespace detail

/// Run one episode of the agent against the mock environment. One agent
/// turn yields either a single tool call or a single user-facing message.
/// Backend failures terminate the episode as aborted; they never throw.
inline Trajectory run_episode(const TaskSpec& task, const Gateway& gateway, std::uint64_t seed,
                              const RolloutParams& params = {},
                              Backend* agent_override = nullptr) {
    Trajectory traj;
    traj.task_id = task.task_id;
    traj.seed = seed;

    EnvState env = EnvState::from_document(task.environment_state);
    UserSimState user = user_sim_for_task(task, params.turn_cap);
    GatewayBackend gateway_backend(gateway);
    Backend* user_backend = gateway.bound(RoleTag::mock_user) ? &gateway_backend : nullptr;
    Backend* tool_backend = gateway.bound(RoleTag::mock_tool) ? &gateway_backend : nullptr;

    std::vector<ChatMessage> dialogue;
    const size_t budget = params.event_budget();

    try {
        auto [u0, opening] = user_step(std::move(user), dialogue, user_backend);
        user = std::move(u0);
        traj.events.push_back(Event::user(opening.text));
        dialogue.push_back({Speaker::user, opening.text});

        traj.terminal = Terminal::exhausted;
        while (traj.events.size() < budget) {
            GenerationRequest req;
            req.role_tag = RoleTag::agent;
            req.messages = detail::agent_view(task, dialogue);
            req.tool_declarations = task.tools;
            req.sampling = default_sampling(RoleTag::agent);
            req.sampling.seed = seed;

            Completion completion;
            if (agent_override != nullptr) {
                completion = agent_override->generate(req);
                if (!completion.parsed_tool_call) {
                    completion.parsed_tool_call = parse_inline_tool_call(completion.text);
                }
            } else {
                completion = gateway.generate(req);
            }

            if (completion.parsed_tool_call) {
                const ToolCall call{completion.parsed_tool_call->name,
                                    completion.parsed_tool_call->args};
                traj.events.push_back(Event::call(call.tool, call.args));
                dialogue.push_back({Speaker::assistant, completion.text});
                json result;
                try {
                    auto [next_env, value] =
                        tool_step(std::move(env), call, task.tools, params.tool_mode, tool_backend);
                    env = std::move(next_env);
                    result = std::move(value);
                } catch (const ToolCallError& err) {
                    result = json{{"error", err.what()}};
                }
                traj.events.push_back(Event::result(call.tool, result));
                dialogue.push_back({Speaker::tool, call.tool + " -> " + result.dump()});
                continue;
            }

            auto [text, marker] = parse_agent_marker(completion.text);
            traj.events.push_back(Event::agent(text, marker));
            dialogue.push_back({Speaker::assistant, text});

            Marker escape_trigger = marker;
            if (marker == Marker::none && !user.adversarial_strategy.empty() &&
                !user.escape_fired && gateway.bound(RoleTag::judge) &&
                detail::judge_says_refusal(gateway, text)) {
                escape_trigger = Marker::refuse;
            }
            auto [u1, step] = user_step(std::move(user), dialogue, user_backend, escape_trigger);
            user = std::move(u1);
            if (step.is_done()) {
                switch (step.status) {
                    case DoneStatus::satisfied: traj.terminal = Terminal::goal_reported; break;
                    case DoneStatus::gave_up: traj.terminal = Terminal::refused; break;
                    case DoneStatus::exhausted: traj.terminal = Terminal::exhausted; break;
                }
                break;
            }
            traj.events.push_back(Event::user(step.text));
            dialogue.push_back({Speaker::user, step.text});
        }
    } catch (const Error& err) {
        traj.terminal = Terminal::aborted;
        traj.abort_cause = err.what();
    }

    traj.final_env = env.doc;
    return traj;
}

/// G rollouts of one task with their rewards, the unit consumed by a
/// group-relative trainer.
struct RolloutGroup {
    std::string task_id;
    std::vector<Trajectory> trajectories;
    std::vector<RewardReport> reports;
    std::string policy_tag;

    std::vector<double> rewards() const {
        std::vector<double> out;
        out.reserve(reports.size());
        for (const auto& r : reports) out.push_back(r.reward);
        return out;
    }
};

/// Bounded-parallel map: runs fn(0..count-1) on up to `parallelism`
/// workers and returns results in index order, so output never depends on
/// scheduling.
template <typename T>
std::vector<T> run_parallel(size_t count, int parallelism, const std::function<T(size_t)>& fn) {
    std::vector<T> results(count);
    if (count == 0) return results;
    if (parallelism <= 1) {
        for (size_t i = 0; i < count; ++i) results[i] = fn(i);
        return results;
    }
    std::atomic<size_t> cursor{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    const size_t workers = std::min(static_cast<size_t>(parallelism), count);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (true) {
                const size_t i = cursor.fetch_add(1);
                if (i >= count) return;
                try {
                    results[i] = fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mu);
                    if (!failure) failure = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return results;
}

struct GroupParams {
    int group_size = 8;
    int parallelism = 1;
    bool strict_rewards = true;
    std::string judge_template = kDefaultJudgePrompt;
    RolloutParams rollout;
};

/// Run-and-score a GRPO-style group: episodes use seeds base_seed ..
/// base_seed+G-1 and come back ordered by seed regardless of scheduling.
inline RolloutGroup run_group(const TaskSpec& task, const BehaviorTree& tree,
                              const Gateway& gateway, int group_size, std::uint64_t base_seed,
                              const GroupParams& params = {},
                              Backend* agent_override = nullptr) {
    if (group_size < 1) throw ConfigError("group size must be >= 1");
    RolloutGroup group;
    group.task_id = task.task_id;
    group.policy_tag = agent_override != nullptr ? agent_override->id()
                       : gateway.bound(RoleTag::agent) ? gateway.backend(RoleTag::agent).id()
                                                       : "unbound";
    group.trajectories = run_parallel<Trajectory>(
        static_cast<size_t>(group_size), params.parallelism, [&](size_t i) {
            return run_episode(task, gateway, base_seed + i, params.rollout, agent_override);
        });
    Backend* judge = nullptr;
    GatewayBackend gateway_backend(gateway);
    if (gateway.bound(RoleTag::judge)) judge = &gateway_backend;
    for (const auto& traj : group.trajectories) {
        group.reports.push_back(
            score_episode(task, traj, tree, judge, params.strict_rewards, params.judge_template));
    }
    return group;
}

inline json group_to_json(const RolloutGroup& g) {
    json trajectories = json::array();
    for (const auto& t : g.trajectories) trajectories.push_back(trajectory_to_json(t));
    json rewards = json::array();
    for (double r : g.rewards()) rewards.push_back(r);
    return json{{"schema_version", kSchemaVersion},
                {"task_id", g.task_id},
                {"trajectories", trajectories},
                {"rewards", rewards},
                {"policy_tag", g.policy_tag}};
}

}  // namespace flywheel
