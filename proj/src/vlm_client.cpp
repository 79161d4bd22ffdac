#include "groundcount/vlm_client.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <thread>

#include <openssl/evp.h>

#include "httplib.h"

namespace groundcount::vlm {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::string excerpt(const std::string& body, std::size_t limit = 300) {
    return body.size() <= limit ? body : body.substr(0, limit) + "...";
}

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

void BackendConfig::validate() const {
    if (endpoint.empty()) throw ConfigError("backend endpoint is empty");
    if (!(timeout_seconds > 0)) throw ConfigError("timeout must be positive");
    if (max_tokens <= 0) throw ConfigError("max_tokens must be positive");
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (!(retry_backoff_seconds >= 0)) throw ConfigError("retry backoff must be >= 0");
    if (delimiters.open.empty() || delimiters.close.empty())
        throw ConfigError("thinking delimiters must be non-empty");
}

json BackendConfig::snapshot() const {
    return {{"endpoint", endpoint},
            {"model", model},
            {"timeout_seconds", timeout_seconds},
            {"max_retries", max_retries},
            {"max_tokens", max_tokens},
            {"temperature", 0},
            {"thinking_open", delimiters.open},
            {"thinking_close", delimiters.close}};
}

void apply_env_overrides(BackendConfig& cfg) {
    if (const char* e = std::getenv("GROUNDCOUNT_ENDPOINT"); e && *e) cfg.endpoint = e;
    if (const char* t = std::getenv("GROUNDCOUNT_API_KEY"); t && *t) cfg.auth_token = t;
}

std::string to_data_url(const ImagePayload& image) {
    std::string encoded(4 * ((image.bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(encoded.data()),
                                  image.bytes.data(), static_cast<int>(image.bytes.size()));
    encoded.resize(static_cast<std::size_t>(n));
    return "data:" + image.mime_type + ";base64," + encoded;
}

ThinkingSplit strip_thinking(std::string_view raw, const ThinkingDelimiters& delims) {
    ThinkingSplit out;
    const auto lead = raw.find_first_not_of(" \t\r\n");
    if (lead == std::string_view::npos || raw.substr(lead, delims.open.size()) != delims.open) {
        out.answer_text = std::string(raw);
        return out;
    }
    const auto body = lead + delims.open.size();
    const auto close = raw.find(delims.close, body);
    if (close == std::string_view::npos) {
        out.thinking = std::string(raw.substr(body));
        out.truncated = true;
        return out;
    }
    out.thinking = std::string(raw.substr(body, close - body));
    out.answer_text = std::string(trim(raw.substr(close + delims.close.size())));
    return out;
}

Verdict extract_verdict(std::string_view answer_text) {
    // Words are maximal runs of letters/digits, compared case-insensitively.
    std::size_t i = 0;
    while (i < answer_text.size()) {
        while (i < answer_text.size() && !std::isalnum(static_cast<unsigned char>(answer_text[i])))
            ++i;
        std::string word;
        while (i < answer_text.size() && std::isalnum(static_cast<unsigned char>(answer_text[i])))
            word += static_cast<char>(std::tolower(static_cast<unsigned char>(answer_text[i++])));
        if (word == "yes") return Verdict::yes;
        if (word == "no") return Verdict::no;
    }
    return Verdict::indeterminate;
}

VlmResponse make_response(std::string raw, const ThinkingDelimiters& delims) {
    VlmResponse r;
    auto split = strip_thinking(raw, delims);
    r.thinking = std::move(split.thinking);
    r.answer_text = std::move(split.answer_text);
    r.truncated = split.truncated;
    r.verdict = r.truncated ? Verdict::indeterminate : extract_verdict(r.answer_text);
    r.raw = std::move(raw);
    return r;
}

HttpStatusError::HttpStatusError(int status, std::string body_excerpt)
    : std::runtime_error("HTTP " + std::to_string(status) + ": " + body_excerpt),
      status_(status),
      body_(std::move(body_excerpt)) {}

json build_request(const BackendConfig& cfg, const std::string& prompt,
                   const std::optional<ImagePayload>& image) {
    json content;
    if (image) {
        content = json::array({{{"type", "image_url"}, {"image_url", {{"url", to_data_url(*image)}}}},
                               {{"type", "text"}, {"text", prompt}}});
    } else {
        content = prompt;
    }
    return {{"model", cfg.model},
            {"messages", json::array({{{"role", "user"}, {"content", std::move(content)}}})},
            {"temperature", 0},
            {"max_tokens", cfg.max_tokens}};
}

VlmResponse parse_reply(const json& reply, const ThinkingDelimiters& delims) {
    const json* message = nullptr;
    if (reply.is_object()) {
        auto choices = reply.find("choices");
        if (choices != reply.end() && choices->is_array() && !choices->empty() &&
            (*choices)[0].contains("message"))
            message = &(*choices)[0]["message"];
    }
    if (!message || !message->is_object()) throw ProtocolError("response has no choices[0].message");

    std::string content;
    auto c = message->find("content");
    if (c == message->end() || c->is_null()) throw ProtocolError("response message has no content");
    if (c->is_string()) {
        content = c->get<std::string>();
    } else if (c->is_array()) {
        for (const auto& part : *c)
            if (part.is_object() && part.value("type", "") == "text")
                content += part.value("text", "");
    } else {
        throw ProtocolError("response message content has unexpected type");
    }

    auto reasoning = message->find("reasoning_content");
    if (reasoning != message->end() && reasoning->is_string() &&
        content.find(delims.open) == std::string::npos)
        content = delims.open + reasoning->get<std::string>() + delims.close + content;

    VlmResponse r = make_response(std::move(content), delims);
    if (auto usage = reply.find("usage"); usage != reply.end() && usage->is_object()) {
        auto tokens = usage->find("completion_tokens");
        if (tokens != usage->end() && tokens->is_number_integer())
            r.completion_tokens = tokens->get<int>();
    }
    return r;
}

HttpBackend::HttpBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto scheme = cfg_.endpoint.find("://");
    if (scheme == std::string::npos)
        throw ConfigError("endpoint must start with http:// or https://: " + cfg_.endpoint);
    const auto slash = cfg_.endpoint.find('/', scheme + 3);
    base_url_ = cfg_.endpoint.substr(0, slash);
    path_ = slash == std::string::npos ? "/v1/chat/completions" : cfg_.endpoint.substr(slash);
}

VlmResponse HttpBackend::send(const std::string& prompt, const std::optional<ImagePayload>& image) {
    const std::string body = build_request(cfg_, prompt, image).dump();

    httplib::Client client(base_url_);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(cfg_.timeout_seconds));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Headers headers;
    if (cfg_.auth_token) headers.emplace("Authorization", "Bearer " + *cfg_.auth_token);

    const auto start = Clock::now();
    for (int attempt = 0;; ++attempt) {
        auto res = client.Post(path_, headers, body, "application/json");
        const bool can_retry = attempt < cfg_.max_retries;
        if (!res) {
            if (!can_retry)
                throw TransportError("transport failure after " + std::to_string(attempt + 1) +
                                     " attempt(s): " + httplib::to_string(res.error()));
        } else if (res->status >= 500) {
            if (!can_retry) throw HttpStatusError(res->status, excerpt(res->body));
        } else if (res->status < 200 || res->status >= 300) {
            throw HttpStatusError(res->status, excerpt(res->body));
        } else {
            json reply;
            try {
                reply = json::parse(res->body);
            } catch (const json::parse_error&) {
                throw ProtocolError("response body is not JSON: " + excerpt(res->body));
            }
            VlmResponse r = parse_reply(reply, cfg_.delimiters);
            r.latency_seconds = seconds_since(start);
            r.retries = attempt;
            return r;
        }
        std::this_thread::sleep_for(
            std::chrono::duration<double>(cfg_.retry_backoff_seconds * (1 << attempt)));
    }
}

MockBackend::MockBackend(std::vector<Rule> rules, std::optional<std::string> default_reply,
                         std::string label)
    : rules_(std::move(rules)), default_reply_(std::move(default_reply)), label_(std::move(label)) {}

std::unique_ptr<MockBackend> MockBackend::from_json(const json& script) {
    std::vector<Rule> rules;
    for (const auto& r : script.value("rules", json::array())) {
        Rule rule;
        rule.predicate = contains(r.at("contains").get<std::string>());
        rule.reply = r.at("reply").get<std::string>();
        rule.latency_seconds = r.value("latency", 0.0);
        rules.push_back(std::move(rule));
    }
    std::optional<std::string> def;
    if (script.contains("default")) def = script["default"].get<std::string>();
    return std::make_unique<MockBackend>(std::move(rules), std::move(def), script.value("label", "mock"));
}

VlmResponse MockBackend::send(const std::string& prompt, const std::optional<ImagePayload>& image) {
    {
        std::lock_guard lock(mu_);
        received_.push_back(prompt);
    }
    for (const auto& rule : rules_) {
        if (rule.predicate(prompt, image.has_value())) {
            VlmResponse r = make_response(rule.reply);
            r.latency_seconds = rule.latency_seconds;
            return r;
        }
    }
    if (default_reply_) return make_response(*default_reply_);
    throw UnscriptedPromptError("unscripted prompt: " + excerpt(prompt, 120));
}

std::size_t MockBackend::calls() const {
    std::lock_guard lock(mu_);
    return received_.size();
}

std::vector<std::string> MockBackend::received_prompts() const {
    std::lock_guard lock(mu_);
    return received_;
}

MockBackend::Predicate MockBackend::contains(std::string needle) {
    return [needle = std::move(needle)](std::string_view prompt, bool) {
        return prompt.find(needle) != std::string_view::npos;
    };
}

}  // namespace groundcount::vlm
