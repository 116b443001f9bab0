// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flywheel/errors.hpp"
#include "flywheel/json_util.hpp"

namespace flywheel {

enum class EventType { agent_message, tool_call, tool_result, user_message };

/// Marker carried by an agent message when the turn was an explicit
/// refusal or a transfer to a human.
enum class Marker { none, refuse, transfer };

enum class Terminal { goal_reported, refused, exhausted, aborted };

inline std::string to_string(EventType t) {
    switch (t) {
        case EventType::agent_message: return "agent_message";
        case EventType::tool_call: return "tool_call";
        case EventType::tool_result: return "tool_result";
        case EventType::user_message: return "user_message";
    }
    return "agent_message";
}

inline std::string to_string(Marker m) {
    switch (m) {
        case Marker::none: return "none";
        case Marker::refuse: return "refuse";
        case Marker::transfer: return "transfer";
    }
    return "none";
}

inline std::string to_string(Terminal t) {
    switch (t) {
        case Terminal::goal_reported: return "goal_reported";
        case Terminal::refused: return "refused";
        case Terminal::exhausted: return "exhausted";
        case Terminal::aborted: return "aborted";
    }
    return "aborted";
}

inline Terminal terminal_from_string(const std::string& s) {
    if (s == "goal_reported") return Terminal::goal_reported;
    if (s == "refused") return Terminal::refused;
    if (s == "exhausted") return Terminal::exhausted;
    if (s == "aborted") return Terminal::aborted;
    throw DataError("unknown terminal status: " + s);
}

/// One step of an episode. `text` holds message text, `tool`/`args` a
/// tool invocation, `value` a tool result payload.
struct Event {
    EventType type = EventType::agent_message;
    std::string text;
    Marker marker = Marker::none;
    std::string tool;
    json args = json();
    json value = json();

    static Event agent(std::string text, Marker m = Marker::none) {
        Event e;
        e.type = EventType::agent_message;
        e.text = std::move(text);
        e.marker = m;
        return e;
    }
    static Event user(std::string text) {
        Event e;
        e.type = EventType::user_message;
        e.text = std::move(text);
        return e;
    }
    static Event call(std::string tool, json args) {
        Event e;
        e.type = EventType::tool_call;
        e.tool = std::move(tool);
        e.args = std::move(args);
        return e;
    }
    static Event result(std::string tool, json value) {
        Event e;
        e.type = EventType::tool_result;
        e.tool = std::move(tool);
        e.value = std::move(value);
        return e;
    }
};

/// Ordered record of one episode.
struct Trajectory {
    std::string task_id;
    std::vector<Event> events;
    Terminal terminal = Terminal::aborted;
    json final_env = json::object();
    std::uint64_t seed = 0;
    std::string abort_cause;

    /// Every tool_call must be immediately followed by exactly one
    /// tool_result.
    ValidationReport validate() const {
        ValidationReport report;
        for (size_t i = 0; i < events.size(); ++i) {
            if (events[i].type == EventType::tool_call) {
                if (i + 1 >= events.size() || events[i + 1].type != EventType::tool_result) {
                    report.add("dangling_tool_call", events[i].tool,
                               "tool_call not followed by a tool_result at event " +
                                   std::to_string(i));
                }
            } else if (events[i].type == EventType::tool_result) {
                if (i == 0 || events[i - 1].type != EventType::tool_call) {
                    report.add("orphan_tool_result", events[i].tool,
                               "tool_result without a preceding tool_call at event " +
                                   std::to_string(i));
                }
            }
        }
        return report;
    }
};

inline json event_to_json(const Event& e) {
    json j{{"type", to_string(e.type)}};
    switch (e.type) {
        case EventType::agent_message:
            j["text"] = e.text;
            if (e.marker != Marker::none) j["marker"] = to_string(e.marker);
            break;
        case EventType::user_message:
            j["text"] = e.text;
            break;
        case EventType::tool_call:
            j["tool"] = e.tool;
            j["args"] = e.args;
            break;
        case EventType::tool_result:
            j["tool"] = e.tool;
            j["value"] = e.value;
            break;
    }
    return j;
}

inline Event event_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    Event e;
    if (type == "agent_message") {
        e.type = EventType::agent_message;
        e.text = j.value("text", "");
        const std::string m = j.value("marker", "none");
        e.marker = m == "refuse" ? Marker::refuse : m == "transfer" ? Marker::transfer : Marker::none;
    } else if (type == "user_message") {
        e.type = EventType::user_message;
        e.text = j.value("text", "");
    } else if (type == "tool_call") {
        e.type = EventType::tool_call;
        e.tool = j.at("tool").get<std::string>();
        e.args = j.value("args", json::object());
    } else if (type == "tool_result") {
        e.type = EventType::tool_result;
        e.tool = j.value("tool", "");
        e.value = j.value("value", json());
    } else {
        throw DataError("unknown event type: " + type);
    }
    return e;
}

inline json trajectory_to_json(const Trajectory& t) {
    json events = json::array();
    for (const auto& e : t.events) events.push_back(event_to_json(e));
    json j{{"schema_version", kSchemaVersion},
           {"task_id", t.task_id},
           {"events", events},
           {"terminal", to_string(t.terminal)},
           {"final_env", t.final_env},
           {"seed", t.seed}};
    if (!t.abort_cause.empty()) j["abort_cause"] = t.abort_cause;
    return j;
}

inline Trajectory trajectory_from_json(const json& j) {
    check_schema_version(j, "trajectory");
    Trajectory t;
    t.task_id = j.at("task_id").get<std::string>();
    for (const auto& e : j.at("events")) t.events.push_back(event_from_json(e));
    t.terminal = terminal_from_string(j.at("terminal").get<std::string>());
    t.final_env = j.value("final_env", json::object());
    t.seed = j.value("seed", 0ULL);
    t.abort_cause = j.value("abort_cause", "");
    return t;
}

}  // namespace flywheel
