// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "magda/embedding_backend.hpp"
#include "magda/error.hpp"
#include "magda/guidelines.hpp"
#include "magda/llm_backend.hpp"
#include "magda/patient.hpp"
#include "magda/trace.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace magda {

/// Who writes the negative half of each probe.
enum class NegationMode
{
    llm,   // the screening agent
    naive, // "No " + the positive description
};

std::string_view to_string(NegationMode mode);
NegationMode negation_mode_from_string(std::string_view s);

/// Parsed `CLIP: <positive> / <negative>` call. The span is a byte range
/// [begin, end) in the text handed to parse_tool_call; run_screening shifts
/// it into assistant-transcript coordinates.
struct ToolCall
{
    std::string positive;
    std::string negative;
    std::size_t span_begin = 0;
    std::size_t span_end = 0;

    bool operator==(const ToolCall&) const = default;
};

enum class MalformedKind
{
    NoClipKeyword,
    NoSlashSeparator,
    EmptyDescription,
};

std::string_view to_string(MalformedKind kind);

class MalformedToolCall : public Error
{
public:
    MalformedToolCall(MalformedKind kind, std::string segment);

    MalformedKind kind() const noexcept { return kind_; }
    const std::string& segment() const noexcept { return segment_; }

private:
    MalformedKind kind_;
    std::string segment_;
};

struct TranscriptSegment
{
    enum class Kind
    {
        generated,
        injected,
    };

    Kind kind;
    std::string text;

    bool operator==(const TranscriptSegment&) const = default;
};

struct ScreeningTranscript
{
    std::string disease;
    std::vector<TranscriptSegment> turns;
    std::vector<FindingObservation> observations;
    std::vector<ToolCall> calls; // parallel to observations
    std::vector<std::string> parse_failures;
    std::string stop_reason; // end_of_message | max_tool_calls | token_budget | failed

    /// Concatenation of all turns, i.e. the assistant message as built so far.
    std::string assistant_text() const;

    bool operator==(const ScreeningTranscript&) const = default;
};

/// Screening aborted; the partial transcript is attached. backend_failure()
/// tells a backend outage apart from a misbehaving agent.
class ScreeningFailed : public Error
{
public:
    ScreeningFailed(const std::string& what, ScreeningTranscript transcript, bool backend_failure);

    const ScreeningTranscript& transcript() const noexcept { return transcript_; }
    bool backend_failure() const noexcept { return backend_failure_; }

private:
    ScreeningTranscript transcript_;
    bool backend_failure_;
};

struct ScreeningSettings
{
    NegationMode negation = NegationMode::llm;
    VlmConfig vlm;
    double temperature = 0.8;
    int max_tokens = 512;       // per generation call
    int max_tool_calls = 0;     // 0 means 2 x number of findings
    int token_budget = 8192;    // over the whole screening run
    int max_retries = 3;        // consecutive malformed calls tolerated
    std::string template_text;  // empty means the built-in template
};

inline constexpr std::string_view kToolStop = "->";

Conversation build_screening_prompt(const Disease& disease, std::string_view template_text = {});

/// Parses the text generated up to a stop at "->". The call is taken from the
/// last "CLIP:" keyword to the end of the segment (line breaks inside the call
/// become spaces). Positive and negative are split at the first " / ", or at
/// the first "/" when no spaced slash exists.
ToolCall parse_tool_call(std::string_view segment);

/// "No " + description with its first letter lowercased. Not idempotent.
std::string naive_negation(std::string_view finding_description);

/// Runs the screening agent for one (patient, disease) pair: generate until
/// "->", parse, score against the image, inject "-> Positive|Negative", resume.
ScreeningTranscript run_screening(const PatientRecord& patient, const Disease& disease,
                                  const ScreeningSettings& settings, LlmBackend& llm, EmbeddingBackend& embedder,
                                  PatientTrace& trace);

} // namespace magda
