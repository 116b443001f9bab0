// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <string>

#include "flywheel/errors.hpp"
#include "flywheel/strings.hpp"

namespace flywheel {

using json = nlohmann::json;

/// Schema version stamped on every serialized line record. Readers accept
/// any minor revision of the same major version.
inline constexpr const char* kSchemaVersion = "1.0";

inline int major_version(const std::string& v) {
    size_t dot = v.find('.');
    try {
        return std::stoi(dot == std::string::npos ? v : v.substr(0, dot));
    } catch (const std::exception&) {
        return -1;
    }
}

inline void check_schema_version(const json& record, const std::string& where) {
    if (!record.is_object() || !record.contains("schema_version")) {
        throw DataError("missing schema_version in " + where);
    }
    const std::string v = record.at("schema_version").get<std::string>();
    if (major_version(v) != major_version(kSchemaVersion)) {
        throw DataError("unsupported schema_version " + v + " in " + where);
    }
}

/// Scalar leaf rendered as text, shared by traceability matching and
/// answer normalization. Strings come back unquoted.
inline std::string scalar_to_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

/// Structural containment: every key/value in `needle` appears in
/// `haystack` (recursively for nested objects). Scalars compare after
/// trimming and case-folding.
inline bool json_contains(const json& haystack, const json& needle) {
    if (needle.is_object()) {
        if (!haystack.is_object()) return false;
        for (auto it = needle.begin(); it != needle.end(); ++it) {
            if (!haystack.contains(it.key())) return false;
            if (!json_contains(haystack.at(it.key()), it.value())) return false;
        }
        return true;
    }
    if (needle.is_array()) {
        if (!haystack.is_array()) return false;
        for (const auto& item : needle) {
            bool found = false;
            for (const auto& candidate : haystack) {
                if (json_contains(candidate, item)) {
                    found = true;
                    break;
                }
            }
            if (!found) return false;
        }
        return true;
    }
    if (haystack.is_object() || haystack.is_array()) return false;
    return to_lower(trim(scalar_to_text(haystack))) == to_lower(trim(scalar_to_text(needle)));
}

/// Visit every scalar leaf of a JSON value.
template <typename Fn>
void for_each_scalar(const json& v, Fn&& fn) {
    if (v.is_object() || v.is_array()) {
        for (const auto& item : v) for_each_scalar(item, fn);
        return;
    }
    fn(v);
}

/// Read a value at a dotted path like "PLY1001.bio". Returns nullptr when
/// any segment is missing.
inline const json* json_at_path(const json& doc, const std::string& dotted) {
    const json* cur = &doc;
    size_t start = 0;
    while (start <= dotted.size()) {
        size_t dot = dotted.find('.', start);
        std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!cur->is_object() || !cur->contains(key)) return nullptr;
        cur = &cur->at(key);
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    return cur;
}

/// Set a value at a dotted path, creating intermediate objects.
inline void json_set_path(json& doc, const std::string& dotted, const json& value) {
    json* cur = &doc;
    size_t start = 0;
    while (true) {
        size_t dot = dotted.find('.', start);
        std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            return;
        }
        if (!cur->contains(key) || !(*cur)[key].is_object()) (*cur)[key] = json::object();
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

}  // namespace flywheel
