// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "magda/embedding_backend.hpp"
#include "magda/refinement.hpp"
#include "magda/screening.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace magda {

/// Reads the TOML subset used by run configs: [section] headers, `key = value`
/// lines, '#' comments, and values that are basic or literal strings,
/// integers, floats, booleans, or (possibly multi-line) arrays of those.
/// Keys come back dotted ("section.key"). Throws ParseError with the line.
std::map<std::string, nlohmann::json> parse_toml_subset(std::string_view document);

/// Parses a `--set` value: TOML syntax when it parses, the raw text otherwise.
nlohmann::json parse_override_value(std::string_view raw);

struct LlmSettings
{
    std::string backend = "mock"; // mock | http
    std::optional<std::filesystem::path> script;
    std::string base_url;
    std::string model;
    double timeout_s = 120.0;
    bool assistant_prefill = false;
    int retry_base_ms = 500;
    int max_attempts = 3;
};

struct EmbeddingSettings
{
    std::string backend = "synthetic"; // synthetic | http
    std::optional<std::filesystem::path> world;
    std::string base_url;
    int dim = 0;
    double timeout_s = 60.0;
};

enum class EvalStage
{
    final,     // after refinement
    diagnosis, // before refinement, No-Finding rule applied
};

std::string_view to_string(EvalStage stage);
EvalStage eval_stage_from_string(std::string_view s);

struct RunConfig
{
    std::filesystem::path base_dir; // relative paths in the file resolve here

    TaskMode task_mode = TaskMode::multi_label;
    int parallelism = 1;
    int max_retries = 3;
    double temperature = 0.8;
    std::optional<std::filesystem::path> trace_path;
    std::optional<std::filesystem::path> metrics_path;

    std::optional<std::filesystem::path> guidelines_path;
    std::optional<std::filesystem::path> manifest_path;

    VlmConfig vlm;
    int cache_size = 4096;

    NegationMode negation = NegationMode::llm;
    std::optional<std::filesystem::path> screening_template;
    int screening_max_tokens = 512;
    int max_tool_calls = 0;
    int token_budget = 8192;

    std::optional<std::filesystem::path> diagnosis_template;
    int diagnosis_max_tokens = 512;

    bool use_cot = true;
    bool include_disease_graph = false;
    std::optional<std::filesystem::path> graph_path;
    std::optional<std::filesystem::path> refinement_template;
    int refinement_max_tokens = 512;

    LlmSettings llm;
    EmbeddingSettings embedding;

    std::vector<std::string> tail_labels;
    std::vector<std::string> exclude_labels;
    EvalStage eval_stage = EvalStage::final;

    /// Every key with its effective value, paths resolved.
    nlohmann::json to_flat_json() const;
};

/// Every accepted dotted key.
const std::vector<std::string>& config_keys();

/// Builds a config from parsed key/value pairs. Unknown keys, wrong types and
/// out-of-range values raise ConfigError naming the key.
RunConfig make_config(const std::map<std::string, nlohmann::json>& values, const std::filesystem::path& base_dir);

/// Loads a config file and applies `key=value` overrides on top. Paths given
/// in overrides resolve against the working directory.
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Applies one `key=value` override in place.
void apply_override(std::map<std::string, nlohmann::json>& values, std::string_view assignment);

/// Checks that the files the run needs are named; existence is checked when
/// they are read. Throws ConfigError.
void require_run_inputs(const RunConfig& cfg);

/// Reads an optional template or graph file; empty string when unset.
std::string read_optional_text(const std::optional<std::filesystem::path>& path, std::string_view key);

/// Values that change what a run computes: every semantic setting, content
/// hashes of the referenced files, and the backend identities. Output paths,
/// parallelism, timeouts and evaluation settings are left out.
nlohmann::json config_fingerprint(const RunConfig& cfg, std::string_view llm_identity,
                                  std::string_view embedding_identity);

/// Stable hash of a fingerprint document.
std::string fingerprint_hash(const nlohmann::json& fingerprint);

/// Fingerprint keys that ablation runs are allowed to differ in.
const std::vector<std::string>& ablation_keys();

} // namespace magda
