// SPDX-License-Identifier: Apache-2.0
#include "magda/llm_backend.hpp"

#include "magda/error.hpp"

#include <cmath>

namespace magda {

std::string_view to_string(Role role)
{
    return role == Role::user ? "user" : "assistant";
}

Conversation::Conversation(std::string first_user_message)
{
    add_user(std::move(first_user_message));
}

void Conversation::set_system(std::string text)
{
    system_ = std::move(text);
}

void Conversation::add_user(std::string text)
{
    if (!turns_.empty() && turns_.back().role == Role::user)
        throw PreconditionError("conversation roles must alternate: user after user");
    turns_.push_back({Role::user, std::move(text)});
}

void Conversation::add_assistant(std::string text)
{
    if (turns_.empty() || turns_.back().role == Role::assistant)
        throw PreconditionError("conversation roles must alternate starting with user");
    turns_.push_back({Role::assistant, std::move(text)});
}

std::string Conversation::render() const
{
    std::string out;
    if (system_)
        out += "### system\n" + *system_ + "\n";
    for (const auto& turn : turns_)
    {
        out += "### ";
        out += to_string(turn.role);
        out += "\n";
        out += turn.content;
        out += "\n";
    }
    return out;
}

std::string Conversation::render_with_partial(std::string_view partial) const
{
    auto out = render();
    out += "### assistant\n";
    out += partial;
    return out;
}

void SamplingParams::validate() const
{
    if (!(temperature >= 0.0 && temperature <= 2.0))
        throw PreconditionError("temperature must lie in [0, 2]");
    if (max_tokens < 1)
        throw PreconditionError("max_tokens must be positive");
    if (stop_sequences.size() > 16)
        throw PreconditionError("at most 16 stop sequences are allowed");
    for (const auto& s : stop_sequences)
        if (s.empty())
            throw PreconditionError("stop sequences must be non-empty");
}

std::string FinishReason::to_string() const
{
    switch (kind)
    {
    case FinishKind::stop_sequence:
        return "stop_sequence(" + std::to_string(stop_index) + ")";
    case FinishKind::max_tokens:
        return "max_tokens";
    case FinishKind::end_of_message:
        break;
    }
    return "end_of_message";
}

namespace {

bool is_ws(char c)
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r';
}

// Byte offset just past the n-th word, or npos when the text has <= n words.
std::size_t end_of_word(std::string_view text, int n)
{
    int words = 0;
    std::size_t i = 0;
    while (i < text.size())
    {
        while (i < text.size() && is_ws(text[i]))
            ++i;
        if (i == text.size())
            break;
        if (words == n)
            return i;
        while (i < text.size() && !is_ws(text[i]))
            ++i;
        ++words;
    }
    return std::string_view::npos;
}

} // namespace

int count_words(std::string_view text)
{
    int words = 0;
    bool in_word = false;
    for (char c : text)
    {
        if (is_ws(c))
            in_word = false;
        else if (!in_word)
        {
            in_word = true;
            ++words;
        }
    }
    return words;
}

Completion truncate_generation(std::string_view raw, const SamplingParams& params)
{
    auto stop_pos = std::string_view::npos;
    std::size_t stop_idx = 0;
    for (std::size_t i = 0; i < params.stop_sequences.size(); ++i)
    {
        auto pos = raw.find(params.stop_sequences[i]);
        if (pos < stop_pos)
        {
            stop_pos = pos;
            stop_idx = i;
        }
    }

    // Start of the first word beyond the budget; everything before it fits.
    auto limit_pos = end_of_word(raw, params.max_tokens);

    Completion out;
    if (stop_pos != std::string_view::npos && (limit_pos == std::string_view::npos || stop_pos <= limit_pos))
    {
        out.text = std::string(raw.substr(0, stop_pos));
        out.finish = FinishReason::stop(stop_idx);
    }
    else if (limit_pos != std::string_view::npos)
    {
        out.text = std::string(raw.substr(0, limit_pos));
        out.finish = FinishReason::length();
    }
    else
    {
        out.text = std::string(raw);
        out.finish = FinishReason::end();
    }
    out.tokens = count_words(out.text);
    return out;
}

Completion resume_generation(LlmBackend& backend, const Conversation& conv, std::string_view partial_assistant,
                             const SamplingParams& params)
{
    try
    {
        return backend.continue_generation(conv, partial_assistant, params);
    }
    catch (const UnsupportedByBackend&)
    {
        auto fallback = conv;
        fallback.add_assistant(std::string(partial_assistant));
        fallback.add_user("Continue.");
        return backend.generate(fallback, params);
    }
}

} // namespace magda
