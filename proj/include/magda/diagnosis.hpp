// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "magda/embedding_backend.hpp"
#include "magda/llm_backend.hpp"
#include "magda/trace.hpp"

#include <span>
#include <string>
#include <string_view>

namespace magda {

struct DiagnosisResult
{
    std::string disease;
    bool prediction = false;
    std::string reasoning;  // text before the answer sentence
    int parse_attempts = 1;
    bool fallback = false;  // no parseable answer; prediction defaulted to false

    bool operator==(const DiagnosisResult&) const = default;
};

Conversation build_diagnosis_prompt(std::span<const FindingObservation> observations, std::string_view disease,
                                    std::string_view template_text = {});

/// One "<description>: Positive|Negative" line per observation.
std::string render_observations(std::span<const FindingObservation> observations);

struct ParsedAnswer
{
    bool prediction;
    std::string reasoning;
};

/// Finds the last "Therefore, my answer is: yes|no" (any case, optional
/// period). Throws AnswerNotFound when there is none.
ParsedAnswer parse_answer(std::string_view text);

/// Reply asking the agent to restate its answer with the exact sentence.
extern const std::string kAnswerReminder;

struct DiagnosisSettings
{
    double temperature = 0.8;
    int max_tokens = 512;
    int max_retries = 3;
    std::string template_text;
};

DiagnosisResult run_diagnosis(std::span<const FindingObservation> observations, std::string_view disease,
                              const DiagnosisSettings& settings, LlmBackend& llm, PatientTrace& trace);

} // namespace magda
