// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "magda/llm_backend.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace magda {

/// A positively phrased image finding. Never contains the tool-call
/// tokens "CLIP:", "/" or "->".
class Finding
{
public:
    /// Throws ValidationError when the description breaks the invariants.
    explicit Finding(std::string description);

    const std::string& description() const noexcept { return description_; }

    /// Reason the text cannot be a finding, or nullopt when it can.
    static std::optional<std::string> check(std::string_view description);

    bool operator==(const Finding&) const = default;

private:
    std::string description_;
};

struct Disease
{
    std::string name;
    std::vector<Finding> findings;

    /// Non-empty name, at least one finding, no case-insensitive duplicates.
    void validate() const;

    bool operator==(const Disease&) const = default;
};

struct GuidelineSet
{
    std::vector<Disease> diseases;
    std::optional<std::string> no_finding_label;

    void validate() const;

    /// Case-insensitive lookup; nullptr when absent.
    const Disease* find(std::string_view name) const;

    nlohmann::json to_json() const;

    bool operator==(const GuidelineSet&) const = default;
};

/// Parses a guideline document:
/// {"no_finding_label": "...", "diseases": [{"name": "...", "findings": [...]}]}.
/// `line` numbers in ParseError refer to the document text.
GuidelineSet parse_guidelines(std::string_view document);
GuidelineSet load_guidelines(const std::filesystem::path& path);

/// One finding per line, file order, no trailing newline.
std::string render_finding_block(const Disease& disease);

struct ExtractionOptions
{
    int max_retries = 3;
    SamplingParams sampling {0.8, 512, {}};
};

/// Asks the LLM to list the image findings described by free-text `prose`.
/// Only "- " / "* " bullet lines are read. An attempt whose bullets break
/// a Finding invariant counts as failed; after max_retries failed attempts
/// ExtractionEmpty is thrown.
std::vector<Finding> extract_findings(std::string_view prose, std::string_view disease_name, LlmBackend& llm,
                                      const ExtractionOptions& options = {});

} // namespace magda
