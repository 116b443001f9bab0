// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "flywheel/errors.hpp"
#include "flywheel/json_util.hpp"

namespace flywheel {

/// Tool categories. Only write/update/delete calls change environment
/// state; query and validation calls are read-only.
enum class ToolCategory { query, write, update, del, validation };

inline std::string to_string(ToolCategory c) {
    switch (c) {
        case ToolCategory::query: return "query";
        case ToolCategory::write: return "write";
        case ToolCategory::update: return "update";
        case ToolCategory::del: return "delete";
        case ToolCategory::validation: return "validation";
    }
    return "query";
}

inline std::optional<ToolCategory> tool_category_from_string(const std::string& s) {
    if (s == "query") return ToolCategory::query;
    if (s == "write") return ToolCategory::write;
    if (s == "update") return ToolCategory::update;
    if (s == "delete") return ToolCategory::del;
    if (s == "validation") return ToolCategory::validation;
    return std::nullopt;
}

inline bool is_state_modifying(ToolCategory c) {
    return c == ToolCategory::write || c == ToolCategory::update || c == ToolCategory::del;
}

struct ToolParam {
    std::string name;
    std::string description;
    bool required = true;
};

struct ToolField {
    std::string name;
    std::string description;
};

/// Declaration of one callable tool. Generated tool JSON may omit the
/// category, in which case it defaults to read-only query.
struct ToolSpec {
    std::string name;
    std::string description;
    std::vector<ToolParam> parameters;  // at most 3
    std::vector<ToolField> outputs;
    ToolCategory category = ToolCategory::query;
    json extras = json::object();  // unknown fields, preserved on round-trip

    bool state_modifying() const { return is_state_modifying(category); }

    const ToolParam* find_param(const std::string& pname) const {
        for (const auto& p : parameters)
            if (p.name == pname) return &p;
        return nullptr;
    }
};

inline const ToolSpec* find_tool(const std::vector<ToolSpec>& tools, const std::string& name) {
    for (const auto& t : tools)
        if (t.name == name) return &t;
    return nullptr;
}

inline json tool_to_json(const ToolSpec& tool) {
    json params_props = json::object();
    json required = json::array();
    for (const auto& p : tool.parameters) {
        params_props[p.name] = json{{"description", p.description}};
        if (p.required) required.push_back(p.name);
    }
    json out_props = json::object();
    for (const auto& f : tool.outputs) {
        out_props[f.name] = json{{"description", f.description}};
    }
    json j = tool.extras;
    j["name"] = tool.name;
    j["description"] = tool.description;
    j["parameters"] = json{{"properties", params_props}, {"required", required}};
    j["outputs"] = json{{"properties", out_props}};
    j["category"] = to_string(tool.category);
    return j;
}

inline ToolSpec tool_from_json(const json& j) {
    if (!j.is_object() || !j.contains("name")) {
        throw DataError("tool record is not an object with a name");
    }
    ToolSpec tool;
    tool.name = j.at("name").get<std::string>();
    tool.description = j.value("description", "");
    if (j.contains("parameters") && j.at("parameters").is_object()) {
        const json& params = j.at("parameters");
        std::vector<std::string> required;
        if (params.contains("required") && params.at("required").is_array()) {
            for (const auto& r : params.at("required")) required.push_back(r.get<std::string>());
        }
        if (params.contains("properties") && params.at("properties").is_object()) {
            for (auto it = params.at("properties").begin(); it != params.at("properties").end(); ++it) {
                ToolParam p;
                p.name = it.key();
                if (it.value().is_object()) p.description = it.value().value("description", "");
                p.required = std::find(required.begin(), required.end(), p.name) != required.end();
                tool.parameters.push_back(std::move(p));
            }
        }
    }
    if (j.contains("outputs") && j.at("outputs").is_object() &&
        j.at("outputs").contains("properties")) {
        for (auto it = j.at("outputs").at("properties").begin();
             it != j.at("outputs").at("properties").end(); ++it) {
            ToolField f;
            f.name = it.key();
            if (it.value().is_object()) f.description = it.value().value("description", "");
            tool.outputs.push_back(std::move(f));
        }
    }
    if (j.contains("category")) {
        auto cat = tool_category_from_string(j.at("category").get<std::string>());
        tool.category = cat.value_or(ToolCategory::query);
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "name" || it.key() == "description" || it.key() == "parameters" ||
            it.key() == "outputs" || it.key() == "category")
            continue;
        tool.extras[it.key()] = it.value();
    }
    return tool;
}

inline std::vector<ToolSpec> tools_from_json(const json& arr) {
    if (!arr.is_array()) throw DataError("tool list is not an array");
    std::vector<ToolSpec> tools;
    tools.reserve(arr.size());
    for (const auto& j : arr) tools.push_back(tool_from_json(j));
    return tools;
}

inline json tools_to_json(const std::vector<ToolSpec>& tools) {
    json arr = json::array();
    for (const auto& t : tools) arr.push_back(tool_to_json(t));
    return arr;
}

}  // namespace flywheel
