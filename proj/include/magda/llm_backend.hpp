// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace magda {

enum class Role
{
    user,
    assistant,
};

std::string_view to_string(Role role);

struct Turn
{
    Role role;
    std::string content;

    bool operator==(const Turn&) const = default;
};

/// Chat transcript handed to a backend. Roles alternate starting with the
/// user after the optional system entry; the mutators enforce this.
class Conversation
{
public:
    Conversation() = default;
    explicit Conversation(std::string first_user_message);

    const std::optional<std::string>& system() const noexcept { return system_; }
    const std::vector<Turn>& turns() const noexcept { return turns_; }

    void set_system(std::string text);
    void add_user(std::string text);
    void add_assistant(std::string text);

    /// Canonical text form, one "### <role>" header line per entry followed by
    /// the content and a newline. This is what scripted rules match against.
    std::string render() const;

    /// render() followed by an open assistant entry holding `partial`, with no
    /// trailing newline added, so `\z` anchors at the end of the partial text.
    std::string render_with_partial(std::string_view partial) const;

    bool operator==(const Conversation&) const = default;

private:
    std::optional<std::string> system_;
    std::vector<Turn> turns_;
};

struct SamplingParams
{
    double temperature = 0.8;
    int max_tokens = 512;
    std::vector<std::string> stop_sequences;

    /// Throws PreconditionError: temperature outside [0, 2], max_tokens < 1,
    /// more than 16 stops, or an empty stop string.
    void validate() const;
};

enum class FinishKind
{
    stop_sequence,
    max_tokens,
    end_of_message,
};

struct FinishReason
{
    FinishKind kind = FinishKind::end_of_message;
    std::size_t stop_index = 0; // meaningful only for stop_sequence

    static FinishReason stop(std::size_t index) { return {FinishKind::stop_sequence, index}; }
    static FinishReason length() { return {FinishKind::max_tokens, 0}; }
    static FinishReason end() { return {FinishKind::end_of_message, 0}; }

    std::string to_string() const;
    bool operator==(const FinishReason&) const = default;
};

struct Completion
{
    std::string text;
    FinishReason finish;
    int tokens = 0;

    bool operator==(const Completion&) const = default;
};

/// Whitespace-delimited word count; the mock's notion of a token.
int count_words(std::string_view text);

/// Cuts `raw` the way a sampler would: at the earliest stop sequence or after
/// max_tokens words, whichever comes first. The stop text itself is dropped.
Completion truncate_generation(std::string_view raw, const SamplingParams& params);

class LlmBackend
{
public:
    virtual ~LlmBackend() = default;

    virtual Completion generate(const Conversation& conv, const SamplingParams& params) = 0;

    /// Resumes as if `partial_assistant` were the assistant's message so far.
    /// Returns only newly generated text. May throw UnsupportedByBackend.
    virtual Completion continue_generation(const Conversation& conv, std::string_view partial_assistant,
                                           const SamplingParams& params) = 0;

    /// Stable identity for config fingerprints and traces.
    virtual std::string describe() const = 0;

    /// Cheap reachability probe; throws BackendError when the backend is down.
    virtual void preflight() {}
};

/// continue_generation with the plain chat-completions fallback: when the
/// backend cannot resume, the partial text is sent as an assistant turn
/// followed by a user turn "Continue.".
Completion resume_generation(LlmBackend& backend, const Conversation& conv, std::string_view partial_assistant,
                             const SamplingParams& params);

} // namespace magda
