// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <httplib.h>

#include <optional>
#include <string>
#include <utility>

#include "flywheel/backend.hpp"
#include "flywheel/errors.hpp"
#include "flywheel/json_util.hpp"

namespace flywheel {

struct HttpBackendOptions {
    std::string endpoint;  // e.g. "http://host:8000/v1/chat/completions"
    std::string model;
    std::string auth_token;  // sent as a bearer token when non-empty
    int connect_timeout_sec = 10;
    int read_timeout_sec = 120;
};

/// Remote chat-completion client. Speaks the common JSON wire format:
/// messages array, optional tool declarations, temperature, max_tokens.
/// Transient failures (timeout, 429, 5xx) surface as retryable errors;
/// malformed payloads are non-retryable and carry the raw body.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendOptions opts) : opts_(std::move(opts)) {
        const auto [host, path] = split_endpoint(opts_.endpoint);
        host_ = host;
        path_ = path;
    }

    Completion generate(const GenerationRequest& req) override {
        httplib::Client client(host_);
        client.set_connection_timeout(opts_.connect_timeout_sec, 0);
        client.set_read_timeout(opts_.read_timeout_sec, 0);
        httplib::Headers headers{{"Content-Type", "application/json"}};
        if (!opts_.auth_token.empty()) {
            headers.emplace("Authorization", "Bearer " + opts_.auth_token);
        }

        const std::string body = build_payload(req).dump();
        auto res = client.Post(path_, headers, body, "application/json");
        if (!res) {
            throw BackendError("transport failure contacting " + opts_.endpoint + ": " +
                                   httplib::to_string(res.error()),
                               /*retryable=*/true);
        }
        if (res->status == 429) {
            throw BackendError("rate limited by " + opts_.endpoint, /*retryable=*/true, res->body);
        }
        if (res->status >= 500) {
            throw BackendError("server error " + std::to_string(res->status) + " from " +
                                   opts_.endpoint,
                               /*retryable=*/true, res->body);
        }
        if (res->status != 200) {
            throw BackendError("unexpected status " + std::to_string(res->status) + " from " +
                                   opts_.endpoint,
                               /*retryable=*/false, res->body);
        }
        return parse_response(res->body);
    }

    std::string id() const override { return "http:" + opts_.endpoint + "#" + opts_.model; }

    json build_payload(const GenerationRequest& req) const {
        json messages = json::array();
        for (const auto& m : req.messages) {
            messages.push_back(json{{"role", to_string(m.speaker)}, {"content", m.text}});
        }
        json payload{{"model", opts_.model},
                     {"messages", messages},
                     {"temperature", req.sampling.temperature},
                     {"max_tokens", req.sampling.max_tokens}};
        if (req.sampling.seed) payload["seed"] = *req.sampling.seed;
        if (!req.tool_declarations.empty()) {
            json tools = json::array();
            for (const auto& t : req.tool_declarations) {
                json properties = json::object();
                json required = json::array();
                for (const auto& p : t.parameters) {
                    properties[p.name] = json{{"type", "string"}, {"description", p.description}};
                    if (p.required) required.push_back(p.name);
                }
                tools.push_back(json{{"type", "function"},
                                     {"function", json{{"name", t.name},
                                                       {"description", t.description},
                                                       {"parameters",
                                                        json{{"type", "object"},
                                                             {"properties", properties},
                                                             {"required", required}}}}}});
            }
            payload["tools"] = tools;
        }
        return payload;
    }

    Completion parse_response(const std::string& body) const {
        json j = json::parse(body, nullptr, false);
        if (j.is_discarded() || !j.contains("choices") || !j.at("choices").is_array() ||
            j.at("choices").empty()) {
            throw BackendError("malformed completion response", /*retryable=*/false, body);
        }
        const json& message = j.at("choices").at(0).value("message", json::object());
        Completion c;
        c.backend_id = id();
        if (message.contains("content") && message.at("content").is_string()) {
            c.text = message.at("content").get<std::string>();
        }
        if (message.contains("tool_calls") && message.at("tool_calls").is_array() &&
            !message.at("tool_calls").empty()) {
            const json& fn = message.at("tool_calls").at(0).value("function", json::object());
            if (fn.contains("name")) {
                ToolInvocation call;
                call.name = fn.at("name").get<std::string>();
                if (fn.contains("arguments")) {
                    const json& args = fn.at("arguments");
                    if (args.is_string()) {
                        json parsed = json::parse(args.get<std::string>(), nullptr, false);
                        if (parsed.is_object()) call.args = parsed;
                    } else if (args.is_object()) {
                        call.args = args;
                    }
                }
                c.parsed_tool_call = std::move(call);
            }
        }
        if (j.contains("usage") && j.at("usage").is_object()) {
            c.usage.prompt_tokens = j.at("usage").value("prompt_tokens", 0);
            c.usage.completion_tokens = j.at("usage").value("completion_tokens", 0);
        }
        return c;
    }

private:
    /// "http://host:port/some/path" -> ("http://host:port", "/some/path").
    static std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
        const size_t scheme = endpoint.find("://");
        if (scheme == std::string::npos) {
            throw ConfigError("endpoint must include a scheme: " + endpoint);
        }
        const size_t path = endpoint.find('/', scheme + 3);
        if (path == std::string::npos) return {endpoint, "/v1/chat/completions"};
        return {endpoint.substr(0, path), endpoint.substr(path)};
    }

    HttpBackendOptions opts_;
    std::string host_;
    std::string path_;
};

}  // namespace flywheel
