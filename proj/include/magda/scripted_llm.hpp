// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "magda/llm_backend.hpp"

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace magda {

/// One scripted reply. `match` is a plain substring, or, when `regex` is set,
/// a Perl-syntax regular expression searched over the rendered conversation
/// (`^`/`$` match at line breaks; use `\A`/`\z` for the text boundaries).
struct ScriptRule
{
    std::string match;
    bool regex = false;
    std::string reply;
};

/// Deterministic mock backend: the first rule matching the rendered
/// conversation (plus any partial assistant text) supplies the reply, which
/// is then cut at stop sequences and the token budget. Temperature is
/// ignored, so the output is a pure function of script and input.
class ScriptedLlm final : public LlmBackend
{
public:
    explicit ScriptedLlm(std::vector<ScriptRule> rules, std::string default_reply = {});
    ~ScriptedLlm() override;

    /// Accepts a JSON list of rules, or {"rules": [...], "default_reply": "..."}.
    static std::shared_ptr<ScriptedLlm> from_json(const nlohmann::json& doc);
    static std::shared_ptr<ScriptedLlm> load(const std::filesystem::path& path);

    Completion generate(const Conversation& conv, const SamplingParams& params) override;
    Completion continue_generation(const Conversation& conv, std::string_view partial_assistant,
                                   const SamplingParams& params) override;
    std::string describe() const override;

    /// Reply chosen for an already rendered conversation, before truncation.
    const std::string& select_reply(const std::string& rendered) const;

    std::size_t call_count() const noexcept { return calls_.load(); }

private:
    struct Compiled;

    std::vector<std::unique_ptr<Compiled>> rules_;
    std::string default_reply_;
    std::string fingerprint_;
    std::atomic<std::size_t> calls_ {0};
};

} // namespace magda
