// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "magda/llm_backend.hpp"

#include <chrono>
#include <string>

namespace magda {

struct ChatClientOptions
{
    std::string base_url;        // e.g. http://localhost:8000 (path prefix allowed)
    std::string model;
    std::string token;           // bearer token; empty means no Authorization header
    double timeout_s = 120.0;
    int max_attempts = 3;
    std::chrono::milliseconds backoff_base {500};
    // Send the partial text as a trailing assistant message and let the server
    // continue it. Only some servers honour this; off means "Continue." fallback.
    bool assistant_prefill = false;
};

/// Client for POST {base_url}/v1/chat/completions.
///
/// Transport failures and 429/5xx answers are retried with exponential
/// backoff (base, 2*base, ...); any other malformed answer raises
/// ProtocolError immediately. The matched stop sequence is recovered from
/// the optional `stop_reason` field some servers add; lacking it, a plain
/// "stop" maps to end_of_message.
class ChatCompletionsClient final : public LlmBackend
{
public:
    explicit ChatCompletionsClient(ChatClientOptions options);

    Completion generate(const Conversation& conv, const SamplingParams& params) override;
    Completion continue_generation(const Conversation& conv, std::string_view partial_assistant,
                                   const SamplingParams& params) override;
    std::string describe() const override;
    void preflight() override;

    const ChatClientOptions& options() const noexcept { return options_; }

private:
    Completion post(const Conversation& conv, const std::string* prefill, const SamplingParams& params);

    ChatClientOptions options_;
};

} // namespace magda
