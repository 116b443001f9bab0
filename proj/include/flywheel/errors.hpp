// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flywheel {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad run configuration (unbound role, malformed config file, ...).
/// Maps to CLI exit code 1.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad or missing input data (schema violation, misaligned files, ...).
/// Maps to CLI exit code 2.
class DataError : public Error {
public:
    using Error::Error;
};

/// Malformed structure in a tree or path (dangling parent, bad node).
class StructuralError : public Error {
public:
    using Error::Error;
};

/// Two execution paths share one matching signature; the tree cannot be
/// matched against unambiguously.
class AmbiguityError : public Error {
public:
    AmbiguityError(const std::string& msg, std::string path_a, std::string path_b)
        : Error(msg), first_path(std::move(path_a)), second_path(std::move(path_b)) {}

    std::string first_path;
    std::string second_path;
};

/// Backend transport or protocol failure. `retryable` distinguishes
/// transient conditions (timeout, rate limit) from hard ones (malformed
/// response, no rule matched).
class BackendError : public Error {
public:
    BackendError(const std::string& msg, bool retryable_, std::string payload = "")
        : Error(msg), retryable(retryable_), raw_payload(std::move(payload)) {}

    bool retryable;
    std::string raw_payload;
};

/// Failure to locate or balance a <tag>...</tag> region.
class TagError : public Error {
public:
    using Error::Error;
};

/// One rule violation found by a validator. Violations are data, not
/// exceptions: validators return reports instead of throwing.
struct Violation {
    std::string code;     // stable identifier, e.g. "unknown_tool"
    std::string where;    // node id, tool name, field path
    std::string message;  // human-readable detail
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }

    void add(std::string code, std::string where, std::string message) {
        violations.push_back({std::move(code), std::move(where), std::move(message)});
    }

    void merge(const ValidationReport& other) {
        violations.insert(violations.end(), other.violations.begin(), other.violations.end());
    }

    std::string summary() const {
        std::string out;
        for (const auto& v : violations) {
            out += v.code;
            out += " [";
            out += v.where;
            out += "]: ";
            out += v.message;
            out += '\n';
        }
        return out;
    }
};

}  // namespace flywheel
