// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "flywheel/agentic.hpp"
#include "flywheel/store.hpp"
#include "flywheel/task_model.hpp"

namespace testsupport {

using namespace flywheel;

inline std::string fixture_path(const std::string& rel) {
    return std::string(FIXTURE_DIR) + "/" + rel;
}

inline TaskSpec nomination_task() {
    const auto records = read_jsonl(fixture_path("nomination/tasks.jsonl"));
    return task_from_json(records.at(0));
}

inline TreeBundle nomination_bundle() {
    const auto records = read_jsonl(fixture_path("nomination/trees.jsonl"));
    return tree_bundle_from_json(records.at(0));
}

/// Environment gateway for the nomination fixture; the agent rules file
/// picks the compliant or the gullible persona.
inline Gateway nomination_gateway(const std::string& agent_rules_file) {
    Gateway gateway;
    gateway.bind(RoleTag::agent, std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(
                                     fixture_path("nomination/" + agent_rules_file))));
    gateway.bind(RoleTag::mock_user, std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(
                                         fixture_path("nomination/user_rules.json"))));
    return gateway;
}

inline SeedIngest flight_seed_ingest() {
    return ingest_seed_tasks(fixture_path("flight/seeds.jsonl"));
}

inline Gateway flight_gateway() {
    Gateway gateway;
    gateway.bind(RoleTag::generator, std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(
                                         fixture_path("flight/generator_rules.json"))));
    gateway.bind(RoleTag::mock_user, std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(
                                         fixture_path("flight/user_rules.json"))));
    gateway.bind(RoleTag::judge, std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(
                                     fixture_path("flight/judge_rules.json"))));
    return gateway;
}

}  // namespace testsupport
