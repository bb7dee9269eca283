// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "magda/diagnosis.hpp"
#include "magda/llm_backend.hpp"
#include "magda/trace.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace magda {

enum class TaskMode
{
    multi_label,
    single_label,
};

std::string_view to_string(TaskMode mode);
TaskMode task_mode_from_string(std::string_view s);

struct RefinementConfig
{
    bool use_cot = true;
    bool include_disease_graph = false;
    std::optional<std::string> graph_text;
    TaskMode task_mode = TaskMode::multi_label;
    std::optional<std::string> no_finding_label;

    /// Throws ValidationError when the disease graph is on without text.
    void validate() const;
};

struct FinalPrediction
{
    // In condition-list order.
    std::vector<std::pair<std::string, bool>> labels;
    std::optional<std::string> single_label_choice;
    std::map<std::string, std::string> per_disease_reasoning;
    std::vector<std::string> flags;

    /// Value for `label`, or nullopt when it is not part of the prediction.
    std::optional<bool> get(std::string_view label) const;

    bool operator==(const FinalPrediction&) const = default;
};

struct RefinementSettings
{
    RefinementConfig config;
    double temperature = 0.8;
    int max_tokens = 512;
    int max_retries = 3;
    std::string template_text;
};

Conversation build_refinement_prompt(std::span<const DiagnosisResult> positives,
                                     std::span<const std::string> condition_list, const RefinementConfig& cfg,
                                     std::string_view template_text = {});

/// Per-condition question. Without chain of thought the agent is told to reply
/// with the answer sentence alone.
std::string refinement_question(std::string_view condition, bool use_cot);

/// Picks the one positive label for single-label tasks: the only approved
/// label, else the highest-scoring approved one, else the no-finding label,
/// else the highest-scoring condition. Ties go to the earlier condition.
std::string select_single_label(const std::vector<std::string>& approved, const std::map<std::string, double>& scores,
                                const std::optional<std::string>& no_finding_label,
                                std::span<const std::string> condition_list);

/// Sets the no-finding label (when present in `labels`) to the AND of the
/// negations of every other label.
void apply_no_finding_rule(std::vector<std::pair<std::string, bool>>& labels,
                           const std::optional<std::string>& no_finding_label);

/// Prediction built from the diagnosis stage alone, used when refinement is
/// unavailable and for pre-refinement metrics.
FinalPrediction prediction_from_diagnoses(std::span<const DiagnosisResult> diagnoses,
                                          std::span<const std::string> condition_list,
                                          const std::map<std::string, double>& scores, const RefinementConfig& cfg);

FinalPrediction run_refinement(std::span<const DiagnosisResult> diagnoses, std::span<const std::string> condition_list,
                               const std::map<std::string, double>& scores, const RefinementSettings& settings,
                               LlmBackend& llm, PatientTrace& trace);

} // namespace magda
