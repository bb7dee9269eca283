// SPDX-License-Identifier: Apache-2.0
#include "magda/chat_client.hpp"

#include "http_util.hpp"

#include <json.hpp>

#include <limits>

namespace magda {

using nlohmann::json;

ChatCompletionsClient::ChatCompletionsClient(ChatClientOptions options)
    : options_(std::move(options))
{
    if (options_.base_url.empty())
        throw ValidationError("chat client needs a base_url");
    if (options_.max_attempts < 1)
        options_.max_attempts = 1;
    detail::parse_endpoint(options_.base_url);
}

Completion ChatCompletionsClient::generate(const Conversation& conv, const SamplingParams& params)
{
    return post(conv, nullptr, params);
}

Completion ChatCompletionsClient::continue_generation(const Conversation& conv, std::string_view partial_assistant,
                                                      const SamplingParams& params)
{
    if (partial_assistant.empty())
        throw PreconditionError("continue_generation requires a non-empty partial assistant text");
    if (!options_.assistant_prefill)
        throw UnsupportedByBackend("chat-completions endpoint configured without assistant prefill");
    std::string partial(partial_assistant);
    return post(conv, &partial, params);
}

std::string ChatCompletionsClient::describe() const
{
    return "chat-completions:" + options_.model;
}

void ChatCompletionsClient::preflight()
{
    auto ep = detail::parse_endpoint(options_.base_url);
    auto client = detail::make_client(ep, std::min(options_.timeout_s, 10.0));
    auto res = client->Get(ep.prefix + "/v1/models");
    if (!res)
        detail::throw_transport(res.error(), "LLM endpoint " + options_.base_url + " unreachable");
}

namespace {

json to_messages(const Conversation& conv, const std::string* prefill)
{
    auto messages = json::array();
    if (conv.system())
        messages.push_back({{"role", "system"}, {"content", *conv.system()}});
    for (const auto& turn : conv.turns())
        messages.push_back({{"role", std::string(to_string(turn.role))}, {"content", turn.content}});
    if (prefill)
        messages.push_back({{"role", "assistant"}, {"content", *prefill}});
    return messages;
}

Completion parse_response(const std::string& body, const SamplingParams& params)
{
    json doc;
    try
    {
        doc = json::parse(body);
    }
    catch (const json::parse_error& e)
    {
        throw ProtocolError(std::string("chat response is not JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty())
        throw ProtocolError("chat response has no choices");
    const auto& choice = doc["choices"][0];
    if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object())
        throw ProtocolError("chat response choice has no message");

    const auto& content = choice["message"].value("content", json());
    if (!content.is_null() && !content.is_string())
        throw ProtocolError("chat response content is not a string");
    std::string text = content.is_string() ? content.get<std::string>() : std::string();

    std::string finish = choice.value("finish_reason", json()).is_string() ? choice["finish_reason"].get<std::string>()
                                                                            : std::string("stop");
    Completion out;
    if (finish == "length")
        out.finish = FinishReason::length();
    else
        out.finish = FinishReason::end();

    if (choice.contains("stop_reason") && choice["stop_reason"].is_string())
    {
        const auto reason = choice["stop_reason"].get<std::string>();
        for (std::size_t i = 0; i < params.stop_sequences.size(); ++i)
            if (params.stop_sequences[i] == reason)
            {
                out.finish = FinishReason::stop(i);
                break;
            }
    }

    // Servers that ignore `stop` still honour the contract this way.
    SamplingParams stops_only = params;
    stops_only.max_tokens = std::numeric_limits<int>::max();
    auto guarded = truncate_generation(text, stops_only);
    if (guarded.finish.kind == FinishKind::stop_sequence)
    {
        text = guarded.text;
        out.finish = guarded.finish;
    }

    out.text = std::move(text);
    if (doc.contains("usage") && doc["usage"].is_object() && doc["usage"].value("completion_tokens", json()).is_number())
        out.tokens = doc["usage"]["completion_tokens"].get<int>();
    else
        out.tokens = count_words(out.text);
    return out;
}

} // namespace

Completion ChatCompletionsClient::post(const Conversation& conv, const std::string* prefill,
                                       const SamplingParams& params)
{
    params.validate();
    json body = {
        {"model", options_.model},
        {"messages", to_messages(conv, prefill)},
        {"temperature", params.temperature},
        {"max_tokens", params.max_tokens},
    };
    if (!params.stop_sequences.empty())
        body["stop"] = params.stop_sequences;
    const auto payload = body.dump();
    const auto ep = detail::parse_endpoint(options_.base_url);

    return detail::with_retries(options_.max_attempts, options_.backoff_base, [&]() {
        auto client = detail::make_client(ep, options_.timeout_s);
        httplib::Headers headers;
        if (!options_.token.empty())
            headers.emplace("Authorization", "Bearer " + options_.token);
        auto res = client->Post(ep.prefix + "/v1/chat/completions", headers, payload, "application/json");
        if (!res)
            detail::throw_transport(res.error(), "chat-completions request failed");
        if (res->status == 429 || res->status >= 500)
            throw BackendError("chat-completions returned HTTP " + std::to_string(res->status));
        if (res->status != 200)
            throw ProtocolError("chat-completions returned HTTP " + std::to_string(res->status) + ": " + res->body);
        return parse_response(res->body, params);
    });
}

} // namespace magda
