// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "magda/backends.hpp"
#include "magda/config.hpp"
#include "magda/diagnosis.hpp"
#include "magda/guidelines.hpp"
#include "magda/patient.hpp"
#include "magda/refinement.hpp"
#include "magda/screening.hpp"
#include "magda/trace.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace magda {

struct Manifest
{
    std::vector<std::string> labels; // column order, canonical guideline names
    std::vector<PatientRecord> patients;
};

/// CSV with a header row "patient_id,image_ref,<label>...". Cells are 0, 1 or
/// empty; -1 (uncertain) also counts as unlabeled, as do the 0.0/1.0/-1.0
/// spellings. Label columns must name a guideline disease or the no-finding
/// label (case-insensitive). Throws ManifestError.
Manifest parse_manifest(std::string_view csv, const GuidelineSet& guidelines);
Manifest load_manifest(const std::filesystem::path& path, const GuidelineSet& guidelines);

/// Manifest label order, then guideline diseases without a column, then the
/// no-finding label if it has no column.
std::vector<std::string> build_condition_list(const Manifest& manifest, const GuidelineSet& guidelines);

struct DiseaseOutcome
{
    ScreeningTranscript screening;
    DiagnosisResult diagnosis;

    bool operator==(const DiseaseOutcome&) const = default;
};

struct StageTiming
{
    double screening_ms = 0;
    double diagnosis_ms = 0;
    double refinement_ms = 0;
    double total_ms = 0;
};

struct PatientResult
{
    std::string patient_id;
    std::map<std::string, bool> truth;
    FinalPrediction final;
    FinalPrediction pre_refinement; // diagnosis-stage labels with the No-Finding rule
    std::vector<DiseaseOutcome> per_disease;
    std::map<std::string, double> scores; // mean p_positive per disease
    StageTiming timing;
    std::optional<std::string> error;
    std::vector<std::string> flags;
};

nlohmann::json to_json(const PatientResult& result);
PatientResult patient_result_from_json(const nlohmann::json& doc);

/// Everything diagnose_patient needs besides the patient.
struct PipelineContext
{
    GuidelineSet guidelines;
    std::vector<std::string> condition_list;
    ScreeningSettings screening;
    DiagnosisSettings diagnosis;
    RefinementSettings refinement;
    LlmBackend* llm = nullptr;
    EmbeddingBackend* embedder = nullptr;
};

/// Screening and diagnosis for every guideline disease, then one refinement.
/// Per-disease failures become flagged negative fallbacks; the result carries
/// an error only when every disease failed on a backend.
PatientResult diagnose_patient(const PatientRecord& patient, const PipelineContext& ctx, PatientTrace& trace);

struct RunOptions
{
    int parallelism = 1;
    std::optional<std::filesystem::path> trace_path;
    bool resume = false;
    nlohmann::json header = nlohmann::json::object(); // written to new traces
    std::string config_hash;                          // checked against the header on resume
};

struct ResultSet
{
    std::vector<PatientResult> results; // manifest order
    std::size_t resumed = 0;
    std::size_t failed = 0;

    bool partial() const noexcept { return failed > 0; }
};

/// Runs every manifest patient on a pool of `parallelism` workers. With
/// `resume`, patients that already have a patient_result record in the trace
/// are loaded from it instead of being run again.
ResultSet run_dataset(const Manifest& manifest, const PipelineContext& ctx, const RunOptions& options);

/// A config with its inputs loaded and backends built.
struct PreparedRun
{
    RunConfig config;
    GuidelineSet guidelines;
    Manifest manifest;
    Backends backends;
    PipelineContext context;
    nlohmann::json fingerprint;
    std::string config_hash;

    nlohmann::json header() const;
};

PreparedRun prepare_run(const RunConfig& cfg);

/// Runs a prepared config, writing the trace named in the config.
ResultSet execute_run(const PreparedRun& run, bool resume);

/// Copy of a JSON value with every "timestamp" and "timing" member removed,
/// for comparing runs.
nlohmann::json strip_volatile(const nlohmann::json& value);

} // namespace magda
