// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "magda/config.hpp"
#include "magda/pipeline.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace magda {

struct LabelCounts
{
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
    bool operator==(const LabelCounts&) const = default;
};

struct ConfusionCounts
{
    std::vector<std::pair<std::string, LabelCounts>> per_label; // evaluation label order

    const LabelCounts* find(std::string_view label) const;
    bool operator==(const ConfusionCounts&) const = default;
};

/// Predicted value of `label` at `stage`; labels absent from the prediction
/// count as negative.
bool predicted(const PatientResult& result, std::string_view label, EvalStage stage);

/// (patient, label) pairs without ground truth are skipped. A patient with no
/// ground truth for any of `labels` raises MissingGroundTruth.
ConfusionCounts confusion_counts(std::span<const PatientResult> results, const std::vector<std::string>& labels,
                                 EvalStage stage = EvalStage::final);

struct Prf
{
    double precision = 0;
    double recall = 0;
    double f1 = 0;

    bool operator==(const Prf&) const = default;
};

/// Precision, recall and F1 with every 0/0 taken as 0.
Prf prf(const LabelCounts& c);

struct MetricReport
{
    Prf micro;
    Prf macro;
    std::vector<std::pair<std::string, Prf>> per_label;
    ConfusionCounts counts;
    std::optional<double> tail_accuracy;
    std::size_t n_patients = 0;
    std::string fingerprint; // config hash of the run
    std::string stage = "final";

    bool operator==(const MetricReport&) const = default;
};

/// Micro over summed counts, macro as the unweighted mean of per-label values.
MetricReport micro_macro_metrics(const ConfusionCounts& counts);

/// Share of tail-class patients whose single_label_choice is their true label.
/// Throws NotSingleLabel when a result has no choice or a patient's truth does
/// not have exactly one positive label, EmptyTailSet when no patient belongs
/// to a tail class.
double tail_accuracy(std::span<const PatientResult> results, const std::vector<std::string>& tail_labels,
                     EvalStage stage = EvalStage::final);

/// Condition-list labels that have ground truth for at least one patient,
/// minus `exclude`.
std::vector<std::string> evaluation_labels(std::span<const PatientResult> results,
                                           const std::vector<std::string>& condition_list,
                                           const std::vector<std::string>& exclude);

enum class ReportFormat
{
    text_table,
    json,
};

ReportFormat report_format_from_string(std::string_view s);

nlohmann::json report_to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& doc);

std::string emit_report(const MetricReport& report, ReportFormat format);
MetricReport parse_report_json(std::string_view document);

/// Results recovered from a trace file: the header and the latest
/// patient_result per patient, in first-appearance order.
struct LoadedTrace
{
    nlohmann::json header;
    std::vector<PatientResult> results;
    bool truncated = false;
};

LoadedTrace load_trace_results(const std::filesystem::path& path);

struct EvaluationOptions
{
    std::vector<std::string> exclude_labels;
    std::vector<std::string> tail_labels;
    EvalStage stage = EvalStage::final;
};

/// Full report for one run. Tail accuracy is filled in when tail labels are
/// given and the results are single-label.
MetricReport evaluate(std::span<const PatientResult> results, const std::vector<std::string>& condition_list,
                      const EvaluationOptions& options, std::string fingerprint = {});

struct AblationRow
{
    NegationMode negation = NegationMode::llm;
    bool use_cot = true;
    bool include_disease_graph = false;
    Prf micro; // F1 is what the tables show
    Prf macro;
    std::string config_hash;
};

/// Side-by-side F1 table. Only negation varies: rows "Naive negation" and
/// "LLM negation" under a "CLIP prompting" column. Only CoT/DG vary: one row
/// per combination with x / check marks. Both vary: all three axes as columns.
/// Values are percentages with two decimals.
std::string emit_ablation_table(std::vector<AblationRow> rows);

} // namespace magda
