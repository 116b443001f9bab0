// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "flywheel/errors.hpp"
#include "flywheel/json_util.hpp"
#include "flywheel/strings.hpp"
#include "flywheel/tool_spec.hpp"

namespace flywheel {

/// Which simulated role a request is issued for. One gateway serves all
/// of them; each role can be bound to a different backend.
enum class RoleTag { generator, mock_user, mock_tool, judge, agent };

inline std::string to_string(RoleTag r) {
    switch (r) {
        case RoleTag::generator: return "generator";
        case RoleTag::mock_user: return "mock_user";
        case RoleTag::mock_tool: return "mock_tool";
        case RoleTag::judge: return "judge";
        case RoleTag::agent: return "agent";
    }
    return "agent";
}

inline RoleTag role_tag_from_string(const std::string& s) {
    if (s == "generator") return RoleTag::generator;
    if (s == "mock_user") return RoleTag::mock_user;
    if (s == "mock_tool") return RoleTag::mock_tool;
    if (s == "judge") return RoleTag::judge;
    if (s == "agent") return RoleTag::agent;
    throw ConfigError("unknown role tag: " + s);
}

inline const RoleTag kAllRoles[] = {RoleTag::generator, RoleTag::mock_user, RoleTag::mock_tool,
                                    RoleTag::judge, RoleTag::agent};

enum class Speaker { system, user, assistant, tool };

inline std::string to_string(Speaker s) {
    switch (s) {
        case Speaker::system: return "system";
        case Speaker::user: return "user";
        case Speaker::assistant: return "assistant";
        case Speaker::tool: return "tool";
    }
    return "user";
}

struct ChatMessage {
    Speaker speaker = Speaker::user;
    std::string text;
};

struct Sampling {
    double temperature = 0.0;
    int max_tokens = 2048;
    std::optional<std::uint64_t> seed;
};

/// Diversity where sampling matters, determinism where verdicts must be
/// stable.
inline Sampling default_sampling(RoleTag role) {
    Sampling s;
    s.temperature = (role == RoleTag::generator || role == RoleTag::mock_user) ? 0.7 : 0.0;
    return s;
}

struct GenerationRequest {
    RoleTag role_tag = RoleTag::agent;
    std::vector<ChatMessage> messages;
    std::vector<ToolSpec> tool_declarations;
    Sampling sampling;
    std::string request_id;
};

struct ToolInvocation {
    std::string name;
    json args = json::object();
};

struct Usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct Completion {
    std::string text;
    std::optional<ToolInvocation> parsed_tool_call;
    Usage usage;
    std::string backend_id;
};

/// Canonical text form of a request, used for scripted-rule matching.
/// Everything except request_id participates, so scripted output is a
/// pure function of the request content.
inline std::string render_request(const GenerationRequest& req) {
    std::string out = "[role=" + to_string(req.role_tag) + "]\n";
    for (const auto& m : req.messages) {
        out += to_string(m.speaker);
        out += ": ";
        out += m.text;
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tagged-block extraction
// ---------------------------------------------------------------------------

/// Content of the first well-formed <tag>...</tag> region.
inline std::string extract_tagged(const std::string& block, const std::string& tag) {
    const std::string open = "<" + tag + ">";
    const std::string close = "</" + tag + ">";
    const size_t begin = block.find(open);
    if (begin == std::string::npos) throw TagError("missing tag: " + tag);
    const size_t content = begin + open.size();
    const size_t end = block.find(close, content);
    if (end == std::string::npos) throw TagError("unbalanced tag: " + tag);
    return block.substr(content, end - content);
}

inline std::optional<std::string> try_extract_tagged(const std::string& block,
                                                     const std::string& tag) {
    try {
        return extract_tagged(block, tag);
    } catch (const TagError&) {
        return std::nullopt;
    }
}

/// Inline tool-call conventions for scripted and loose backends: either a
/// <tool_call>{...}</tool_call> region or a ```tool_call fenced block.
/// The earlier occurrence wins.
inline std::optional<ToolInvocation> parse_inline_tool_call(const std::string& text) {
    const std::string tag_open = "<tool_call>";
    const std::string fence_open = "```tool_call";
    const size_t tag_pos = text.find(tag_open);
    const size_t fence_pos = text.find(fence_open);

    std::string payload;
    if (tag_pos != std::string::npos && (fence_pos == std::string::npos || tag_pos < fence_pos)) {
        const size_t end = text.find("</tool_call>", tag_pos);
        if (end == std::string::npos) return std::nullopt;
        payload = text.substr(tag_pos + tag_open.size(), end - tag_pos - tag_open.size());
    } else if (fence_pos != std::string::npos) {
        const size_t body = fence_pos + fence_open.size();
        const size_t end = text.find("```", body);
        if (end == std::string::npos) return std::nullopt;
        payload = text.substr(body, end - body);
    } else {
        return std::nullopt;
    }

    json j = json::parse(payload, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("name")) return std::nullopt;
    ToolInvocation call;
    call.name = j.at("name").get<std::string>();
    if (j.contains("arguments")) {
        call.args = j.at("arguments");
    } else if (j.contains("args")) {
        call.args = j.at("args");
    }
    if (!call.args.is_object()) call.args = json::object();
    return call;
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

class Backend {
public:
    virtual ~Backend() = default;
    virtual Completion generate(const GenerationRequest& req) = 0;
    virtual std::string id() const = 0;
};

using BackendPtr = std::shared_ptr<Backend>;

struct ScriptedRule {
    std::optional<RoleTag> role_tag;  // nullopt = any role
    std::string match;                // substring, or "re:<regex>"
    std::string respond;
};

/// Deterministic rule-table backend for offline runs. Rules are checked
/// in file order against the rendered request; the first match answers.
class ScriptedBackend : public Backend {
public:
    explicit ScriptedBackend(std::vector<ScriptedRule> rules, std::string id = "scripted")
        : rules_(std::move(rules)), id_(std::move(id)) {
        for (auto& rule : rules_) {
            if (starts_with(rule.match, "re:")) {
                compiled_.emplace_back(rule.match.substr(3), std::regex::ECMAScript);
            } else {
                compiled_.emplace_back();
            }
        }
    }

    static ScriptedBackend from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open scripted rule file: " + path);
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.is_array()) {
            throw ConfigError("scripted rule file is not a JSON array: " + path);
        }
        std::vector<ScriptedRule> rules;
        for (const auto& r : j) {
            ScriptedRule rule;
            if (r.contains("role_tag")) rule.role_tag = role_tag_from_string(r.at("role_tag"));
            rule.match = r.value("match", "");
            rule.respond = r.at("respond").get<std::string>();
            rules.push_back(std::move(rule));
        }
        return ScriptedBackend(std::move(rules), path);
    }

    Completion generate(const GenerationRequest& req) override {
        const std::string rendered = render_request(req);
        for (size_t i = 0; i < rules_.size(); ++i) {
            const auto& rule = rules_[i];
            if (rule.role_tag && *rule.role_tag != req.role_tag) continue;
            const bool hit = starts_with(rule.match, "re:")
                                 ? std::regex_search(rendered, compiled_[i])
                                 : contains(rendered, rule.match);
            if (!hit) continue;
            Completion c;
            c.text = rule.respond;
            c.backend_id = id_;
            c.usage.prompt_tokens = static_cast<int>(rendered.size() / 4);
            c.usage.completion_tokens = static_cast<int>(c.text.size() / 4);
            return c;
        }
        throw BackendError("NoRuleMatched: no scripted rule for role " + to_string(req.role_tag),
                           /*retryable=*/false, rendered);
    }

    std::string id() const override { return id_; }

private:
    std::vector<ScriptedRule> rules_;
    std::vector<std::regex> compiled_;
    std::string id_;
};

/// Canned single-response backend, handy in tests.
class FixedBackend : public Backend {
public:
    explicit FixedBackend(std::string text, std::string id = "fixed")
        : text_(std::move(text)), id_(std::move(id)) {}

    Completion generate(const GenerationRequest&) override {
        Completion c;
        c.text = text_;
        c.backend_id = id_;
        return c;
    }
    std::string id() const override { return id_; }

private:
    std::string text_;
    std::string id_;
};

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

namespace detail {

class BoundedGate {
public:
    explicit BoundedGate(int limit) : limit_(limit) {}

    void acquire() {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return inflight_ < limit_; });
        ++inflight_;
    }
    void release() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            --inflight_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    int limit_;
    int inflight_ = 0;
};

struct GateLease {
    explicit GateLease(BoundedGate& gate) : gate_(gate) { gate_.acquire(); }
    ~GateLease() { gate_.release(); }
    GateLease(const GateLease&) = delete;
    GateLease& operator=(const GateLease&) = delete;

private:
    BoundedGate& gate_;
};

}  // namespace detail

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_backoff{25};
};

/// The single abstraction every model-in-the-loop call flows through.
/// Agent-role requests are never re-issued (at most once per turn); the
/// idempotent roles retry transient failures with exponential backoff.
/// A bounded in-flight limit is enforced per role binding.
class Gateway {
public:
    Gateway() = default;

    void bind(RoleTag role, BackendPtr backend, int inflight_limit = 8) {
        bindings_[role] = std::move(backend);
        gates_[role] = std::make_unique<detail::BoundedGate>(inflight_limit);
    }

    /// Override the default temperature/max_tokens for one role. The
    /// caller's seed is kept.
    void set_sampling(RoleTag role, double temperature, int max_tokens) {
        sampling_[role] = {temperature, max_tokens};
    }

    bool bound(RoleTag role) const { return bindings_.count(role) > 0; }

    Backend& backend(RoleTag role) const {
        auto it = bindings_.find(role);
        if (it == bindings_.end()) {
            throw ConfigError("no backend bound for role " + to_string(role));
        }
        return *it->second;
    }

    void set_retry(RetryPolicy policy) { retry_ = policy; }

    Completion generate(GenerationRequest req) const {
        auto it = bindings_.find(req.role_tag);
        if (it == bindings_.end()) {
            throw ConfigError("no backend bound for role " + to_string(req.role_tag));
        }
        auto sampling = sampling_.find(req.role_tag);
        if (sampling != sampling_.end()) {
            req.sampling.temperature = sampling->second.first;
            req.sampling.max_tokens = sampling->second.second;
        }
        detail::GateLease lease(*gates_.at(req.role_tag));
        const int attempts = req.role_tag == RoleTag::agent ? 1 : retry_.max_attempts;
        for (int attempt = 0;; ++attempt) {
            try {
                Completion c = it->second->generate(req);
                finalize(c, req);
                return c;
            } catch (const BackendError& err) {
                if (!err.retryable || attempt + 1 >= attempts) throw;
                std::this_thread::sleep_for(retry_.base_backoff * (1 << attempt));
            }
        }
    }

private:
    /// Structured tool calls from the backend win; otherwise the inline
    /// conventions are scanned. A parsed call must name a declared tool.
    void finalize(Completion& c, const GenerationRequest& req) const {
        if (!c.parsed_tool_call) c.parsed_tool_call = parse_inline_tool_call(c.text);
        if (c.parsed_tool_call && !req.tool_declarations.empty()) {
            if (find_tool(req.tool_declarations, c.parsed_tool_call->name) == nullptr) {
                throw BackendError("tool call names undeclared tool: " + c.parsed_tool_call->name,
                                   /*retryable=*/false, c.text);
            }
        }
    }

    std::map<RoleTag, BackendPtr> bindings_;
    std::map<RoleTag, std::unique_ptr<detail::BoundedGate>> gates_;
    std::map<RoleTag, std::pair<double, int>> sampling_;
    RetryPolicy retry_;
};

}  // namespace flywheel
