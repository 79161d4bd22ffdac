#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "groundcount/types.hpp"

namespace groundcount::vlm {

struct ThinkingDelimiters {
    std::string open = "<think>";
    std::string close = "</think>";
};

/// Connection and decoding settings for a chat-completion endpoint. Decoding
/// is always greedy: requests carry temperature 0.
struct BackendConfig {
    std::string endpoint = "http://127.0.0.1:8000/v1/chat/completions";
    std::string model;
    std::optional<std::string> auth_token;
    double timeout_seconds = 120.0;
    int max_retries = 2;
    double retry_backoff_seconds = 0.5;  // doubled after each failed attempt
    int max_tokens = 1024;
    ThinkingDelimiters delimiters;

    void validate() const;
    nlohmann::json snapshot() const;  // without the token
};

/// Overrides endpoint/token from GROUNDCOUNT_ENDPOINT / GROUNDCOUNT_API_KEY when set.
void apply_env_overrides(BackendConfig& cfg);

struct ImagePayload {
    std::vector<std::uint8_t> bytes;
    std::string mime_type = "image/png";
};

/// data:<mime>;base64,<...>
std::string to_data_url(const ImagePayload& image);

struct ThinkingSplit {
    std::optional<std::string> thinking;
    std::string answer_text;
    bool truncated = false;  // opener seen without a closer
};

ThinkingSplit strip_thinking(std::string_view raw, const ThinkingDelimiters& delims = {});

Verdict extract_verdict(std::string_view answer_text);

struct VlmResponse {
    std::string raw;
    std::optional<std::string> thinking;
    std::string answer_text;
    bool truncated = false;
    Verdict verdict = Verdict::indeterminate;
    double latency_seconds = 0.0;
    std::optional<int> completion_tokens;
    int retries = 0;
};

/// Builds a response from raw model text: splits thinking, extracts the verdict.
VlmResponse make_response(std::string raw, const ThinkingDelimiters& delims = {});

class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class HttpStatusError : public std::runtime_error {
public:
    HttpStatusError(int status, std::string body_excerpt);
    int status() const { return status_; }
    const std::string& body_excerpt() const { return body_; }

private:
    int status_;
    std::string body_;
};

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnscriptedPromptError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Anything that answers a prompt (+ optional image). Implementations must be
/// safe to call from several evaluation workers at once.
class VlmBackend {
public:
    virtual ~VlmBackend() = default;
    virtual VlmResponse send(const std::string& prompt, const std::optional<ImagePayload>& image) = 0;
    virtual std::string label() const = 0;
};

/// Request body for the chat-completion wire format.
nlohmann::json build_request(const BackendConfig& cfg, const std::string& prompt,
                             const std::optional<ImagePayload>& image);

/// Extracts the assistant text from a chat-completion reply. A separate
/// `reasoning_content` field is folded back in front of the content, wrapped
/// in the thinking delimiters.
VlmResponse parse_reply(const nlohmann::json& reply, const ThinkingDelimiters& delims);

class HttpBackend final : public VlmBackend {
public:
    explicit HttpBackend(BackendConfig cfg);

    VlmResponse send(const std::string& prompt, const std::optional<ImagePayload>& image) override;
    std::string label() const override { return cfg_.model; }
    const BackendConfig& config() const { return cfg_; }

private:
    BackendConfig cfg_;
    std::string base_url_;
    std::string path_;
};

/// Scripted backend for tests and offline runs: the first rule whose
/// predicate matches supplies the reply.
class MockBackend final : public VlmBackend {
public:
    using Predicate = std::function<bool(std::string_view prompt, bool has_image)>;

    struct Rule {
        Predicate predicate;
        std::string reply;
        double latency_seconds = 0.0;
    };

    explicit MockBackend(std::vector<Rule> rules, std::optional<std::string> default_reply = {},
                         std::string label = "mock");

    /// Rules file: {"rules":[{"contains":"...","reply":"...","latency":1.5}], "default":"No."}
    static std::unique_ptr<MockBackend> from_json(const nlohmann::json& script);

    VlmResponse send(const std::string& prompt, const std::optional<ImagePayload>& image) override;
    std::string label() const override { return label_; }

    std::size_t calls() const;
    std::vector<std::string> received_prompts() const;

    static Predicate contains(std::string needle);

private:
    std::vector<Rule> rules_;
    std::optional<std::string> default_reply_;
    std::string label_;
    mutable std::mutex mu_;
    std::vector<std::string> received_;
};

}  // namespace groundcount::vlm
