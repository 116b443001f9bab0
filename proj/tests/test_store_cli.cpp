// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "flywheel/cli.hpp"
#include "flywheel/store.hpp"
#include "support/fixtures.hpp"

using namespace flywheel;
using namespace testsupport;

namespace {

fs::path make_temp_dir(const std::string& tag) {
    static int counter = 0;
    const fs::path dir = fs::temp_directory_path() /
                         ("flywheel_test_" + tag + "_" + std::to_string(++counter) + "_" +
                          std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string nomination_config(const std::string& agent_rules) {
    std::ostringstream cfg;
    cfg << "seed = 7\n"
        << "group_size = 1\n"
        << "parallel = 1\n"
        << "output_root = rounds\n"
        << "backend.agent = scripted:" << fixture_path("nomination/" + agent_rules) << "\n"
        << "backend.mock_user = scripted:" << fixture_path("nomination/user_rules.json") << "\n"
        << "backend.mock_tool = table\n"
        << "backend.judge = scripted:" << fixture_path("nomination/judge_rules.json") << "\n"
        << "backend.generator = scripted:" << fixture_path("nomination/generator_rules.json")
        << "\n";
    return cfg.str();
}

std::string flight_config() {
    std::ostringstream cfg;
    cfg << "seed = 7\n"
        << "group_size = 2\n"
        << "parallel = 1\n"
        << "output_root = rounds\n"
        << "seed_tasks = " << fixture_path("flight/seeds.jsonl") << "\n"
        << "backend.agent = plan_follower\n"
        << "backend.mock_tool = table\n"
        << "backend.generator = scripted:" << fixture_path("flight/generator_rules.json") << "\n"
        << "backend.mock_user = scripted:" << fixture_path("flight/user_rules.json") << "\n"
        << "backend.judge = scripted:" << fixture_path("flight/judge_rules.json") << "\n";
    return cfg.str();
}

fs::path write_config(const fs::path& dir, const std::string& content) {
    const fs::path path = dir / "run.cfg";
    std::ofstream out(path);
    out << content;
    return path;
}

void copy_nomination_round0(const fs::path& dir) {
    fs::create_directories(dir / "rounds" / "round_0");
    fs::copy_file(fixture_path("nomination/tasks.jsonl"),
                  dir / "rounds" / "round_0" / "tasks.jsonl");
    fs::copy_file(fixture_path("nomination/trees.jsonl"),
                  dir / "rounds" / "round_0" / "trees.jsonl");
}

int cli(const std::vector<std::string>& args, std::string* output = nullptr) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = run_cli(args, out, err);
    if (output != nullptr) *output = out.str() + err.str();
    return code;
}

/// Every file in a directory tree, as relative path -> content.
std::map<std::string, std::string> dir_snapshot(const fs::path& root) {
    std::map<std::string, std::string> snapshot;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::ostringstream content;
        content << in.rdbuf();
        snapshot[fs::relative(entry.path(), root).string()] = content.str();
    }
    return snapshot;
}

}  // namespace

TEST_CASE("config parsing") {
    const fs::path dir = make_temp_dir("cfg");
    SUBCASE("values, comments and bindings") {
        const fs::path path = write_config(dir,
                                           "# comment\n"
                                           "seed = 42   # trailing comment\n"
                                           "adversarial_rate = 0.25\n"
                                           "strict_rewards = false\n"
                                           "backend.agent = plan_follower\n"
                                           "backend.judge = http:http://host:1/v1/x#m1\n"
                                           "backend.mock_tool = table\n"
                                           "backend.mock_user = scripted:u.json\n"
                                           "backend.generator = scripted:g.json\n");
        const RunConfig cfg = RunConfig::load(path);
        CHECK(cfg.seed == 42);
        CHECK(cfg.adversarial_rate == 0.25);
        CHECK_FALSE(cfg.strict_rewards);
        CHECK(cfg.plan_follower_agent());
        CHECK(cfg.tool_mode() == ToolMode::table);
        CHECK(cfg.backends.at(RoleTag::judge).kind == "http");
        CHECK(cfg.backends.at(RoleTag::judge).target == "http://host:1/v1/x");
        CHECK(cfg.backends.at(RoleTag::judge).model == "m1");
        CHECK(cfg.resolve("u.json") == dir / "u.json");
        cfg.require_all_roles();
    }
    SUBCASE("unknown keys and bad values are config errors") {
        CHECK_THROWS_AS(RunConfig::load(write_config(dir, "mystery = 1\n")), ConfigError);
        CHECK_THROWS_AS(RunConfig::load(write_config(dir, "seed = banana\n")), ConfigError);
        CHECK_THROWS_AS(RunConfig::load(write_config(dir, "no equals sign\n")), ConfigError);
        CHECK_THROWS_AS(RunConfig::load(dir / "absent.cfg"), ConfigError);
    }
    SUBCASE("missing role bindings are reported") {
        const RunConfig cfg = RunConfig::load(write_config(dir, "seed = 1\n"));
        CHECK_THROWS_AS(cfg.require_all_roles(), ConfigError);
    }
    SUBCASE("the token environment variable overrides the config key") {
        ::setenv("FLYWHEEL_API_TOKEN", "env-token", 1);
        const RunConfig cfg = RunConfig::load(write_config(dir, "api_token = file-token\n"));
        CHECK(cfg.api_token == "env-token");
        ::unsetenv("FLYWHEEL_API_TOKEN");
    }
    SUBCASE("per-role sampling defaults parse") {
        const RunConfig cfg = RunConfig::load(write_config(dir,
                                                           "temperature.generator = 0.9\n"
                                                           "max_tokens.judge = 128\n"));
        CHECK(cfg.temperatures.at(RoleTag::generator) == 0.9);
        CHECK(cfg.max_tokens.at(RoleTag::judge) == 128);
    }
    SUBCASE("an http-bound gateway builds without contacting the endpoint") {
        std::ostringstream text;
        text << "api_token = tok\n";
        for (const char* role : {"generator", "mock_user", "mock_tool", "judge", "agent"}) {
            text << "backend." << role << " = http:http://127.0.0.1:1/v1/chat/completions#m\n";
        }
        const RunConfig cfg = RunConfig::load(write_config(dir, text.str()));
        const Gateway gateway = cfg.build_gateway();
        CHECK(gateway.bound(RoleTag::agent));
        CHECK(gateway.backend(RoleTag::agent).id().find("http:") == 0);
        CHECK(cfg.tool_mode() == ToolMode::model);
    }
}

TEST_CASE("reasoning problem files") {
    const fs::path dir = make_temp_dir("problems");
    Problem p;
    p.problem_id = "p0";
    p.statement = "2 + 2?";
    p.reference_answer = "4";
    save_problems(dir / "problems.jsonl", {p});
    const auto loaded = load_problems(dir / "problems.jsonl");
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].statement == "2 + 2?");

    write_jsonl(dir / "corpus.jsonl",
                {json{{"statement", "s1"}, {"answer", "a1"}},
                 json{{"statement", "s2"}},  // skipped, no answer
                 json{{"statement", "s3"}, {"answer", "a3"}, {"domain", "qa"}}});
    const auto seeds = load_problem_seeds(dir / "corpus.jsonl");
    REQUIRE(seeds.size() == 2);
    CHECK(seeds[0].reference_answer == "a1");
    CHECK(seeds[1].domain == "qa");
}

TEST_CASE("jsonl io") {
    const fs::path dir = make_temp_dir("jsonl");
    SUBCASE("round-trips records") {
        const std::vector<json> records = {json{{"a", 1}}, json{{"b", json::array({1, 2})}}};
        write_jsonl(dir / "x.jsonl", records);
        CHECK(read_jsonl(dir / "x.jsonl") == records);
    }
    SUBCASE("bad lines and missing files raise data errors") {
        std::ofstream(dir / "bad.jsonl") << "{not json}\n";
        CHECK_THROWS_AS(read_jsonl(dir / "bad.jsonl"), DataError);
        CHECK_THROWS_AS(read_jsonl(dir / "absent.jsonl"), DataError);
    }
}

TEST_CASE("schema version gate") {
    CHECK_NOTHROW(check_schema_version(json{{"schema_version", "1.7"}}, "x"));
    CHECK_THROWS_AS(check_schema_version(json{{"schema_version", "2.0"}}, "x"), DataError);
    CHECK_THROWS_AS(check_schema_version(json::object(), "x"), DataError);
}

TEST_CASE("seed ingestion") {
    SUBCASE("the flight seed becomes one task with a one-path tree") {
        const SeedIngest ingest = flight_seed_ingest();
        REQUIRE(ingest.tasks.size() == 1);
        CHECK(ingest.skipped.empty());
        CHECK(ingest.tasks[0].round_index == 0);
        CHECK(enumerate_paths(ingest.trees[0].tree).size() == 1);
    }
    SUBCASE("records missing the environment are skipped with a reason") {
        const fs::path dir = make_temp_dir("seeds");
        auto records = read_jsonl(fixture_path("flight/seeds.jsonl"));
        json broken = records[0];
        broken.erase("env_state");
        broken["task_id"] = "broken-0001";
        write_jsonl(dir / "seeds.jsonl", {records[0], broken});
        const SeedIngest ingest = ingest_seed_tasks(dir / "seeds.jsonl");
        CHECK(ingest.tasks.size() == 1);
        REQUIRE(ingest.skipped.size() == 1);
        CHECK(ingest.skipped[0].find("broken-0001") != std::string::npos);
        CHECK(ingest.skipped[0].find("env_state") != std::string::npos);
    }
    SUBCASE("fifty synthetic seeds ingest one task per line") {
        const fs::path dir = make_temp_dir("bulk");
        auto base = read_jsonl(fixture_path("flight/seeds.jsonl"))[0];
        std::vector<json> records;
        for (int i = 0; i < 50; ++i) {
            json record = base;
            record["task_id"] = "bulk-" + std::to_string(i);
            records.push_back(record);
        }
        write_jsonl(dir / "seeds.jsonl", records);
        const SeedIngest ingest = ingest_seed_tasks(dir / "seeds.jsonl");
        CHECK(ingest.tasks.size() == 50);  // equals the line count minus skips
        CHECK(ingest.skipped.empty());
    }
}

TEST_CASE("export_groups") {
    const fs::path dir = make_temp_dir("export");
    const TaskSpec task = nomination_task();
    const TreeBundle bundle = nomination_bundle();
    const Gateway gateway = nomination_gateway("agent_compliant_rules.json");

    SUBCASE("two tasks of four episodes give two grouped lines") {
        std::vector<RolloutGroup> groups;
        for (int t = 0; t < 2; ++t) {
            TaskSpec copy = task;
            copy.task_id = "task-" + std::to_string(t);
            groups.push_back(run_group(copy, bundle.tree, gateway, 4, 10));
        }
        save_rollout_artifacts(dir, groups);
        const fs::path out = export_groups(dir);
        const auto lines = read_jsonl(out);
        REQUIRE(lines.size() == 2);
        CHECK(lines[0].at("task_id") == "task-0");
        CHECK(lines[0].at("rewards").size() == 4);
        CHECK(lines[0].at("trajectories").size() == 4);

        // Re-export produces identical bytes.
        std::ifstream first(out, std::ios::binary);
        std::ostringstream before;
        before << first.rdbuf();
        export_groups(dir);
        std::ifstream second(out, std::ios::binary);
        std::ostringstream after;
        after << second.rdbuf();
        CHECK(before.str() == after.str());
    }

    SUBCASE("an empty round exports an empty file successfully") {
        save_rollout_artifacts(dir, {});
        const fs::path out = export_groups(dir);
        CHECK(read_jsonl(out).empty());
    }

    SUBCASE("misaligned files are a hard error") {
        save_rollout_artifacts(dir, {run_group(task, bundle.tree, gateway, 2, 0)});
        auto rewards = read_jsonl(dir / "rewards.jsonl");
        rewards.pop_back();
        write_jsonl(dir / "rewards.jsonl", rewards);
        CHECK_THROWS_AS(export_groups(dir), DataError);
    }
}

TEST_CASE("cli golden flow on the nomination fixture") {
    const fs::path dir = make_temp_dir("cli_nom");
    const fs::path cfg = write_config(dir, nomination_config("agent_compliant_rules.json"));
    copy_nomination_round0(dir);

    std::string output;
    CHECK(cli({"rollout", "--config", cfg.string(), "--round", "0"}, &output) == 0);
    CHECK(output.find("1 trajectories") != std::string::npos);
    CHECK(cli({"score", "--config", cfg.string(), "--round", "0"}, &output) == 0);
    CHECK(cli({"export", "--config", cfg.string(), "--round", "0"}, &output) == 0);
    CHECK(cli({"stats", "--config", cfg.string(), "--round", "0"}, &output) == 0);
    CHECK(output.find("1 tasks") != std::string::npos);
    CHECK(output.find("mean 1") != std::string::npos);

    // The gullible agent zeroes out under strict mode.
    const fs::path dir2 = make_temp_dir("cli_nom_gullible");
    const fs::path cfg2 = write_config(dir2, nomination_config("agent_gullible_rules.json"));
    copy_nomination_round0(dir2);
    CHECK(cli({"rollout", "--config", cfg2.string(), "--round", "0"}) == 0);
    CHECK(cli({"score", "--config", cfg2.string(), "--round", "0"}) == 0);
    CHECK(cli({"stats", "--config", cfg2.string(), "--round", "0"}, &output) == 0);
    CHECK(output.find("mean 0") != std::string::npos);
}

TEST_CASE("cli export before score exits 2 naming the missing rewards") {
    const fs::path dir = make_temp_dir("cli_order");
    const fs::path cfg = write_config(dir, nomination_config("agent_compliant_rules.json"));
    copy_nomination_round0(dir);
    CHECK(cli({"rollout", "--config", cfg.string(), "--round", "0"}) == 0);
    fs::remove(dir / "rounds" / "round_0" / "rewards.jsonl");
    std::string output;
    CHECK(cli({"export", "--config", cfg.string(), "--round", "0"}, &output) == 2);
    CHECK(output.find("missing rewards") != std::string::npos);
}

TEST_CASE("cli init ingests seeds into round_0") {
    const fs::path dir = make_temp_dir("cli_init");
    const fs::path cfg = write_config(dir, flight_config());
    std::string output;
    CHECK(cli({"init", "--config", cfg.string()}, &output) == 0);
    CHECK(fs::exists(dir / "rounds" / "round_0" / "tasks.jsonl"));
    CHECK(output.find("1 tasks") != std::string::npos);
}

TEST_CASE("cli iterate produces byte-identical rounds across parallelism") {
    std::map<std::string, std::string> reference;
    for (int parallel : {1, 4}) {
        const fs::path dir = make_temp_dir("cli_iter_p" + std::to_string(parallel));
        const fs::path cfg = write_config(dir, flight_config());
        REQUIRE(cli({"init", "--config", cfg.string()}) == 0);
        REQUIRE(cli({"iterate", "--config", cfg.string(), "--round", "0", "--seed", "7",
                     "--parallel", std::to_string(parallel)}) == 0);
        const auto snapshot = dir_snapshot(dir / "rounds");
        if (reference.empty()) {
            reference = snapshot;
            CHECK(reference.count("round_1/tasks.jsonl") == 1);
            CHECK(reference.count("round_0/groups.jsonl") == 1);
            // Re-running the verb in place over identical inputs is
            // byte-idempotent.
            REQUIRE(cli({"iterate", "--config", cfg.string(), "--round", "0", "--seed", "7",
                         "--parallel", "1"}) == 0);
            CHECK(dir_snapshot(dir / "rounds") == reference);
        } else {
            CHECK(snapshot == reference);
        }
    }
}

TEST_CASE("cli dry-run writes nothing") {
    const fs::path dir = make_temp_dir("cli_dry");
    const fs::path cfg = write_config(dir, nomination_config("agent_compliant_rules.json"));
    copy_nomination_round0(dir);
    const auto before = dir_snapshot(dir);
    std::string output;
    CHECK(cli({"rollout", "--config", cfg.string(), "--round", "0", "--dry-run"}, &output) == 0);
    CHECK(output.find("dry-run") != std::string::npos);
    CHECK(dir_snapshot(dir) == before);
    CHECK(cli({"rollout", "--config", cfg.string(), "--round", "0", "--dry-run"}) == 0);
    CHECK(dir_snapshot(dir) == before);
}

TEST_CASE("cli error surfaces") {
    std::string output;
    SUBCASE("unknown verbs exit 1 with usage") {
        CHECK(cli({"frobnicate", "--config", "x"}, &output) == 1);
        CHECK(output.find("Usage") != std::string::npos);
    }
    SUBCASE("unknown flags exit 1") {
        CHECK(cli({"stats", "--config", "x", "--wat"}, &output) == 1);
    }
    SUBCASE("a missing config file exits 1") {
        CHECK(cli({"stats", "--config", "/nonexistent/x.cfg"}, &output) == 1);
        CHECK(output.find("config error") != std::string::npos);
    }
    SUBCASE("a missing round directory exits 2") {
        const fs::path dir = make_temp_dir("cli_missing_round");
        const fs::path cfg = write_config(dir, nomination_config("agent_compliant_rules.json"));
        CHECK(cli({"stats", "--config", cfg.string(), "--round", "3"}, &output) == 2);
    }
    SUBCASE("help exits 0") {
        CHECK(cli({"--help"}, &output) == 0);
        CHECK(output.find("iterate") != std::string::npos);
    }
}

TEST_CASE("cli stepwise verbs compose into a round") {
    const fs::path dir = make_temp_dir("cli_steps");
    const fs::path cfg = write_config(dir, flight_config());
    REQUIRE(cli({"init", "--config", cfg.string()}) == 0);
    REQUIRE(cli({"rollout", "--config", cfg.string(), "--round", "0"}) == 0);
    REQUIRE(cli({"score", "--config", cfg.string(), "--round", "0"}) == 0);
    REQUIRE(cli({"export", "--config", cfg.string(), "--round", "0"}) == 0);
    REQUIRE(cli({"expand", "--config", cfg.string(), "--round", "0"}) == 0);
    REQUIRE(cli({"invert", "--config", cfg.string(), "--round", "0"}) == 0);
    REQUIRE(cli({"adversarial", "--config", cfg.string(), "--round", "0"}) == 0);
    std::string output;
    REQUIRE(cli({"validate", "--config", cfg.string(), "--round", "0"}, &output) == 0);
    CHECK(output.find("accepted 2 of 2") != std::string::npos);
    const RoundState round1 = load_round_state(dir / "rounds" / "round_1", 1);
    CHECK(round1.tasks.size() == 2);
    CHECK(enumerate_paths(round1.trees[0].tree).size() == 2);
}
