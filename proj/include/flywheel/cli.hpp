// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flywheel/agentic.hpp"
#include "flywheel/store.hpp"

namespace flywheel {

namespace cli_detail {

struct Options {
    std::string config_path;
    int round = 0;
    std::optional<std::uint64_t> seed;
    std::optional<int> parallel;
    bool dry_run = false;
};

struct Env {
    RunConfig config;
    FlywheelParams params;
    fs::path output_root;
};

inline Env make_env(const Options& opts) {
    Env env;
    env.config = RunConfig::load(opts.config_path);
    if (opts.seed) env.config.seed = *opts.seed;
    if (opts.parallel) env.config.parallel = *opts.parallel;
    env.config.require_all_roles();
    env.params = env.config.flywheel_params();
    env.output_root = env.config.resolve(env.config.output_root);
    return env;
}

inline RoundState load_round(const Env& env, int round) {
    return load_round_state(round_dir(env.output_root, round), round);
}

/// Group the flat trajectories.jsonl back into per-task rollout lists.
inline std::map<std::string, std::vector<Trajectory>> trajectories_by_task(const fs::path& dir) {
    std::map<std::string, std::vector<Trajectory>> by_task;
    for (const auto& j : read_jsonl(dir / "trajectories.jsonl")) {
        Trajectory t = trajectory_from_json(j);
        by_task[t.task_id].push_back(std::move(t));
    }
    return by_task;
}

inline int cmd_init(const Env& env, const Options& opts, std::ostream& out) {
    if (env.config.seed_tasks.empty()) {
        throw ConfigError("config has no seed_tasks path; nothing to init from");
    }
    const SeedIngest ingest = ingest_seed_tasks(env.config.resolve(env.config.seed_tasks));
    for (const auto& skip : ingest.skipped) out << "skipped " << skip << "\n";
    RoundState state;
    state.round_index = 0;
    state.tasks = ingest.tasks;
    state.trees = ingest.trees;
    state.config_snapshot = env.params.snapshot();
    state.stats = json{{"round_index", 0},
                       {"tasks", state.tasks.size()},
                       {"skipped", ingest.skipped.size()}};
    if (opts.dry_run) {
        out << "dry-run: would write round_0 with " << state.tasks.size() << " tasks\n";
        return 0;
    }
    save_round_state(round_dir(env.output_root, 0), state);
    out << "round_0: " << state.tasks.size() << " tasks, " << state.trees.size() << " trees\n";
    return 0;
}

inline int cmd_rollout(const Env& env, const Options& opts, std::ostream& out) {
    const RoundState state = load_round(env, opts.round);
    if (opts.dry_run) {
        out << "dry-run: would roll out " << state.tasks.size() << " tasks x G="
            << env.params.group_size << "\n";
        return 0;
    }
    const Gateway gateway = env.config.build_gateway();
    const auto groups = rollout_round(state, gateway, env.params);
    save_rollout_artifacts(round_dir(env.output_root, opts.round), groups);
    size_t episodes = 0;
    for (const auto& g : groups) episodes += g.trajectories.size();
    out << "round_" << opts.round << ": " << episodes << " trajectories\n";
    return 0;
}

inline int cmd_score(const Env& env, const Options& opts, std::ostream& out) {
    const RoundState state = load_round(env, opts.round);
    const fs::path dir = round_dir(env.output_root, opts.round);
    const std::vector<json> trajectories = read_jsonl(dir / "trajectories.jsonl");
    if (opts.dry_run) {
        out << "dry-run: would score " << trajectories.size() << " trajectories\n";
        return 0;
    }
    const Gateway gateway = env.config.build_gateway();
    GatewayBackend gateway_backend(gateway);
    Backend* judge = gateway.bound(RoleTag::judge) ? &gateway_backend : nullptr;
    std::vector<json> rewards;
    for (const auto& j : trajectories) {
        const Trajectory traj = trajectory_from_json(j);
        const TaskSpec* task = nullptr;
        for (const auto& t : state.tasks) {
            if (t.task_id == traj.task_id) {
                task = &t;
                break;
            }
        }
        if (task == nullptr) throw DataError("trajectory for unknown task " + traj.task_id);
        const TreeBundle* bundle = state.bundle_for(task->tree_ref);
        if (bundle == nullptr) throw DataError("task references unknown tree " + task->tree_ref);
        rewards.push_back(reward_report_to_json(score_episode(
            *task, traj, bundle->tree, judge, env.params.strict_rewards, env.params.prompts.judge())));
    }
    write_jsonl(dir / "rewards.jsonl", rewards);
    out << "round_" << opts.round << ": " << rewards.size() << " reward reports\n";
    return 0;
}

inline int cmd_export(const Env& env, const Options& opts, std::ostream& out) {
    const fs::path dir = round_dir(env.output_root, opts.round);
    if (opts.dry_run) {
        if (!fs::exists(dir / "rewards.jsonl")) {
            throw DataError("missing rewards: run score before export");
        }
        out << "dry-run: would export " << (dir / "groups.jsonl").string() << "\n";
        return 0;
    }
    const fs::path written = export_groups(dir);
    out << "exported " << written.string() << "\n";
    return 0;
}

inline int cmd_expand(const Env& env, const Options& opts, std::ostream& out) {
    const RoundState state = load_round(env, opts.round);
    const fs::path dir = round_dir(env.output_root, opts.round);
    auto by_task = trajectories_by_task(dir);
    if (opts.dry_run) {
        out << "dry-run: would expand " << state.trees.size() << " trees\n";
        return 0;
    }
    const Gateway gateway = env.config.build_gateway();
    GatewayBackend generator(gateway);
    std::map<std::string, TreeBundle> bundles;
    for (const auto& b : state.trees) bundles[b.tree.tree_id] = b;
    for (const auto& task : state.tasks_sorted()) {
        auto it = bundles.find(task.tree_ref);
        if (it == bundles.end()) continue;
        auto rollouts = by_task.find(task.task_id);
        ExpandOutcome expanded = expand_tree(
            it->second, rollouts == by_task.end() ? std::vector<Trajectory>{} : rollouts->second,
            generator, env.params);
        for (const auto& note : expanded.notes) out << "note: " << note << "\n";
        it->second = std::move(expanded.bundle);
    }
    std::vector<json> records;
    for (auto& [tree_id, bundle] : bundles) {
        bundle.tree.round_index = opts.round + 1;
        records.push_back(tree_bundle_to_json(bundle));
    }
    write_jsonl(round_dir(env.output_root, opts.round + 1) / "trees.jsonl", records);
    out << "round_" << opts.round + 1 << ": " << records.size() << " trees\n";
    return 0;
}

inline int cmd_invert(const Env& env, const Options& opts, std::ostream& out) {
    const fs::path next_dir = round_dir(env.output_root, opts.round + 1);
    std::vector<TreeBundle> bundles;
    for (const auto& j : read_jsonl(next_dir / "trees.jsonl")) {
        bundles.push_back(tree_bundle_from_json(j));
    }
    if (opts.dry_run) {
        size_t branches = 0;
        for (const auto& b : bundles) branches += enumerate_paths(b.tree).size();
        out << "dry-run: would invert " << branches << " branches\n";
        return 0;
    }
    const Gateway gateway = env.config.build_gateway();
    GatewayBackend generator(gateway);
    std::vector<json> candidates;
    size_t rejected = 0;
    for (auto& bundle : bundles) {
        for (const auto& branch : enumerate_paths(bundle.tree)) {
            try {
                TaskSpec task =
                    invert_branch(bundle, branch, generator, env.params, opts.round + 1);
                bundle.sop = task.agent_instruction;
                candidates.push_back(task_to_json(task));
            } catch (const Error& err) {
                ++rejected;
                out << "rejected " << branch.key() << ": " << err.what() << "\n";
            }
        }
    }
    write_jsonl(next_dir / "candidates.jsonl", candidates);
    out << "round_" << opts.round + 1 << ": " << candidates.size() << " candidates, " << rejected
        << " rejected\n";
    return 0;
}

inline int cmd_adversarial(const Env& env, const Options& opts, std::ostream& out) {
    const fs::path next_dir = round_dir(env.output_root, opts.round + 1);
    std::vector<TaskSpec> candidates;
    for (const auto& j : read_jsonl(next_dir / "candidates.jsonl")) {
        candidates.push_back(task_from_json(j));
    }
    if (opts.dry_run) {
        out << "dry-run: would arm adversarial users at rate " << env.params.adversarial_rate
            << " over " << candidates.size() << " candidates\n";
        return 0;
    }
    size_t armed = 0;
    std::vector<json> records;
    for (auto& task : candidates) {
        const bool coin = detail::seeded_coin(env.params.seed, "adversarial|" + task.tree_ref +
                                                                   "|" + task.expected_path.key(),
                                              env.params.adversarial_rate);
        if (coin && !task.adversarial_strategy.empty()) {
            ++armed;
        } else if (!coin && !task.adversarial_strategy.empty()) {
            task.adversarial_strategy.clear();
            task.hack_success_user_background.clear();
            task.hack_path.clear();
        }
        records.push_back(task_to_json(task));
    }
    write_jsonl(next_dir / "candidates.jsonl", records);
    out << "round_" << opts.round + 1 << ": " << armed << " adversarial of " << records.size()
        << "\n";
    return 0;
}

inline int cmd_validate(const Env& env, const Options& opts, std::ostream& out) {
    const fs::path next_dir = round_dir(env.output_root, opts.round + 1);
    std::vector<TaskSpec> candidates;
    for (const auto& j : read_jsonl(next_dir / "candidates.jsonl")) {
        candidates.push_back(task_from_json(j));
    }
    std::vector<TreeBundle> bundles;
    for (const auto& j : read_jsonl(next_dir / "trees.jsonl")) {
        bundles.push_back(tree_bundle_from_json(j));
    }
    if (opts.dry_run) {
        out << "dry-run: would validate " << candidates.size() << " candidates\n";
        return 0;
    }
    const Gateway gateway = env.config.build_gateway();
    RoundState next;
    next.round_index = opts.round + 1;
    next.trees = bundles;
    next.config_snapshot = env.params.snapshot();
    json rejected = json::object();
    for (const auto& task : candidates) {
        const TreeBundle* bundle = next.bundle_for(task.tree_ref);
        if (bundle == nullptr) {
            rejected["missing_tree"] = rejected.value("missing_tree", 0) + 1;
            continue;
        }
        std::unique_ptr<PlanFollowerBackend> follower;
        Backend* strong = nullptr;
        if (env.params.use_plan_follower_agent) {
            follower = std::make_unique<PlanFollowerBackend>(task, bundle->tree);
            strong = follower.get();
        } else {
            strong = &gateway.backend(RoleTag::generator);
        }
        const ValidationOutcome v =
            validate_synthesized(task, *bundle, gateway, *strong, env.params);
        if (v.accepted) {
            next.tasks.push_back(task);
        } else {
            rejected[v.reason] = rejected.value(v.reason, 0) + 1;
        }
    }
    next.stats = json{{"round_index", next.round_index},
                      {"proposed", candidates.size()},
                      {"accepted_by_validation", next.tasks.size()},
                      {"rejected_reasons", rejected},
                      {"tasks", next.tasks.size()}};
    save_round_state(next_dir, next);
    out << "round_" << next.round_index << ": accepted " << next.tasks.size() << " of "
        << candidates.size() << "\n";
    return 0;
}

inline int cmd_iterate(const Env& env, const Options& opts, std::ostream& out) {
    const RoundState state = load_round(env, opts.round);
    if (opts.dry_run) {
        out << "dry-run: would iterate round " << opts.round << " over " << state.tasks.size()
            << " tasks\n";
        return 0;
    }
    const Gateway gateway = env.config.build_gateway();
    const IterateResult result = iterate(state, gateway, env.params);
    const fs::path dir = round_dir(env.output_root, opts.round);
    save_rollout_artifacts(dir, result.groups);
    export_groups(dir);
    save_round_state(round_dir(env.output_root, result.next.round_index), result.next);
    out << "round_" << result.next.round_index << ": " << result.next.tasks.size()
        << " tasks accepted; stats " << result.next.stats.dump() << "\n";
    return 0;
}

inline int cmd_stats(const Env& env, const Options& opts, std::ostream& out) {
    const fs::path dir = round_dir(env.output_root, opts.round);
    const RoundState state = load_round(env, opts.round);
    out << "round_" << opts.round << ": " << state.tasks.size() << " tasks, "
        << state.trees.size() << " trees\n";
    for (const auto& bundle : state.trees) {
        out << "tree " << bundle.tree.tree_id << ": " << enumerate_paths(bundle.tree).size()
            << " paths\n";
    }
    if (fs::exists(dir / "rewards.jsonl")) {
        const auto rewards = read_jsonl(dir / "rewards.jsonl");
        double total = 0;
        for (const auto& r : rewards) total += r.value("reward", 0.0);
        out << "rewards: " << rewards.size() << " reports, mean "
            << (rewards.empty() ? 0.0 : total / rewards.size()) << "\n";
    }
    if (!state.stats.empty()) out << "stats: " << state.stats.dump() << "\n";
    return 0;
}

}  // namespace cli_detail

/// Command-line front end. Returns the process exit code: 0 success,
/// 1 configuration error, 2 data error.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    CLI::App app{"behavior-tree task flywheel"};
    app.require_subcommand(1);

    cli_detail::Options opts;
    app.add_option("--config", opts.config_path, "run configuration file")->required();
    app.add_option("--round", opts.round, "round index the verb operates on");
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "override the configured seed");
    int parallel_value = 1;
    auto* parallel_opt =
        app.add_option("--parallel", parallel_value, "override the configured parallelism");
    app.add_flag("--dry-run", opts.dry_run, "report intended actions without writing");

    struct Verb {
        const char* name;
        const char* help;
        int (*fn)(const cli_detail::Env&, const cli_detail::Options&, std::ostream&);
    };
    const Verb verbs[] = {
        {"init", "ingest seed tasks into round_0", cli_detail::cmd_init},
        {"rollout", "run episode groups for a round", cli_detail::cmd_rollout},
        {"score", "score a round's trajectories", cli_detail::cmd_score},
        {"expand", "grow behavior trees from rollouts", cli_detail::cmd_expand},
        {"invert", "turn branches into candidate tasks", cli_detail::cmd_invert},
        {"adversarial", "arm or disarm adversarial user strategies", cli_detail::cmd_adversarial},
        {"validate", "keep candidates the strong agent solves on-branch", cli_detail::cmd_validate},
        {"iterate", "run one whole flywheel round", cli_detail::cmd_iterate},
        {"export", "write grouped rollouts for the trainer", cli_detail::cmd_export},
        {"stats", "summarize a round directory", cli_detail::cmd_stats},
    };
    for (const auto& verb : verbs) {
        // Global flags may appear after the verb.
        app.add_subcommand(verb.name, verb.help)->fallthrough();
    }

    std::vector<const char*> argv;
    argv.push_back("flywheel");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n" << app.help();
        return 1;
    }

    if (seed_opt->count() > 0) opts.seed = seed_value;
    if (parallel_opt->count() > 0) opts.parallel = parallel_value;

    try {
        const cli_detail::Env env = cli_detail::make_env(opts);
        for (const auto& verb : verbs) {
            if (app.got_subcommand(verb.name)) return verb.fn(env, opts, out);
        }
        err << "no verb given\n";
        return 1;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace flywheel
