// SPDX-License-Identifier: Apache-2.0
#include "magda/screening.hpp"

#include "magda/prompt_resources.hpp"
#include "magda/text.hpp"

#include <algorithm>
#include <exception>

namespace magda {

using nlohmann::json;

std::string_view to_string(NegationMode mode)
{
    return mode == NegationMode::llm ? "llm" : "naive";
}

NegationMode negation_mode_from_string(std::string_view s)
{
    if (s == "llm")
        return NegationMode::llm;
    if (s == "naive")
        return NegationMode::naive;
    throw ValidationError("unknown negation mode '" + std::string(s) + "'");
}

std::string_view to_string(MalformedKind kind)
{
    switch (kind)
    {
    case MalformedKind::NoClipKeyword: return "NoClipKeyword";
    case MalformedKind::NoSlashSeparator: return "NoSlashSeparator";
    case MalformedKind::EmptyDescription: return "EmptyDescription";
    }
    return "Unknown";
}

MalformedToolCall::MalformedToolCall(MalformedKind kind, std::string segment)
    : Error("malformed tool call (" + std::string(to_string(kind)) + ")"), kind_(kind), segment_(std::move(segment))
{
}

std::string ScreeningTranscript::assistant_text() const
{
    std::string out;
    for (const auto& t : turns)
        out += t.text;
    return out;
}

ScreeningFailed::ScreeningFailed(const std::string& what, ScreeningTranscript transcript, bool backend_failure)
    : Error(what), transcript_(std::move(transcript)), backend_failure_(backend_failure)
{
}

Conversation build_screening_prompt(const Disease& disease, std::string_view template_text)
{
    if (template_text.empty())
        template_text = resources::kScreeningTemplate;
    auto prompt = text::replace_all(template_text, "<xplainer_findings>", render_finding_block(disease));
    prompt = text::replace_all(prompt, "<condition>", disease.name);
    return Conversation(std::move(prompt));
}

ToolCall parse_tool_call(std::string_view segment)
{
    constexpr std::string_view keyword = "CLIP:";
    const auto kw = segment.rfind(keyword);
    if (kw == std::string_view::npos)
        throw MalformedToolCall(MalformedKind::NoClipKeyword, std::string(segment));

    std::string body(segment.substr(kw + keyword.size()));
    std::replace(body.begin(), body.end(), '\n', ' ');
    std::replace(body.begin(), body.end(), '\r', ' ');

    auto slash = body.find(" / ");
    slash = slash == std::string::npos ? body.find('/') : slash + 1;
    if (slash == std::string::npos)
        throw MalformedToolCall(MalformedKind::NoSlashSeparator, std::string(segment));

    ToolCall call;
    call.positive = text::trim(std::string_view(body).substr(0, slash));
    call.negative = text::trim(std::string_view(body).substr(slash + 1));
    if (call.positive.empty() || call.negative.empty())
        throw MalformedToolCall(MalformedKind::EmptyDescription, std::string(segment));

    auto end = segment.size();
    while (end > kw && (segment[end - 1] == ' ' || segment[end - 1] == '\t' || segment[end - 1] == '\n'
                        || segment[end - 1] == '\r'))
        --end;
    call.span_begin = kw;
    call.span_end = end;
    return call;
}

std::string naive_negation(std::string_view finding_description)
{
    if (finding_description.empty())
        throw PreconditionError("naive_negation needs a non-empty description");
    std::string out = "No ";
    out += finding_description;
    if (out[3] >= 'A' && out[3] <= 'Z')
        out[3] = static_cast<char>(out[3] - 'A' + 'a');
    return out;
}

namespace {

// A call the model finished without the arrow: the reply ended with a last
// line that holds "CLIP:" and a slash. Servers that do not report which stop
// sequence fired produce exactly this shape.
bool is_dangling_call(std::string_view segment)
{
    const auto kw = segment.rfind("CLIP:");
    if (kw == std::string_view::npos)
        return false;
    auto tail = text::trim(segment.substr(kw));
    return tail.find('/') != std::string::npos && tail.find('\n') == std::string::npos;
}

std::string injection(const std::string& assistant_so_far, std::string_view result)
{
    std::string out;
    if (!assistant_so_far.empty() && assistant_so_far.back() != ' ' && assistant_so_far.back() != '\n')
        out += ' ';
    out += kToolStop;
    out += ' ';
    out += result;
    out += '\n';
    return out;
}

} // namespace

ScreeningTranscript run_screening(const PatientRecord& patient, const Disease& disease,
                                  const ScreeningSettings& settings, LlmBackend& llm, EmbeddingBackend& embedder,
                                  PatientTrace& trace)
{
    settings.vlm.validate();
    const auto conv = build_screening_prompt(disease, settings.template_text);
    const int max_calls = settings.max_tool_calls > 0 ? settings.max_tool_calls
                                                      : 2 * static_cast<int>(disease.findings.size());
    const int retry_budget = std::max(1, settings.max_retries);

    SamplingParams params;
    params.temperature = settings.temperature;
    params.max_tokens = settings.max_tokens;
    params.stop_sequences = {std::string(kToolStop)};

    ScreeningTranscript transcript;
    transcript.disease = disease.name;
    trace.record(TraceKind::prompt, disease.name, {{"stage", "screening"}, {"text", conv.turns().front().content}});

    std::string assistant;
    std::size_t segment_start = 0;
    int consecutive_malformed = 0;
    int tokens_used = 0;

    auto fail = [&](const std::string& why, bool backend) {
        transcript.stop_reason = "failed";
        trace.record(TraceKind::parse_event, disease.name,
                     {{"stage", "screening"}, {"event", "screening_failed"}, {"reason", why}});
        return ScreeningFailed("screening of '" + disease.name + "' failed: " + why, transcript, backend);
    };

    auto inject = [&](std::string text_in) {
        trace.record(TraceKind::tool_result, disease.name, {{"injected", text_in}});
        assistant += text_in;
        transcript.turns.push_back({TranscriptSegment::Kind::injected, std::move(text_in)});
        segment_start = assistant.size();
    };

    // Handles one finished call segment. Returns false when the loop must stop.
    auto handle_call = [&](std::string_view segment) {
        ToolCall call;
        std::string problem;
        try
        {
            call = parse_tool_call(segment);
            if (settings.vlm.mode == VlmMode::contrastive && settings.negation == NegationMode::llm
                && call.positive == call.negative)
                problem = "identical positive and negative description";
        }
        catch (const MalformedToolCall& e)
        {
            problem = std::string(to_string(e.kind()));
        }

        if (!problem.empty())
        {
            transcript.parse_failures.push_back(problem);
            trace.record(TraceKind::parse_event, disease.name,
                         {{"stage", "screening"},
                          {"event", "malformed_tool_call"},
                          {"reason", problem},
                          {"segment", std::string(segment)}});
            inject(injection(assistant, "Error: malformed call, continue."));
            if (++consecutive_malformed >= retry_budget)
                throw fail(std::to_string(consecutive_malformed) + " consecutive malformed tool calls", false);
            return true;
        }
        consecutive_malformed = 0;

        call.span_begin += segment_start;
        call.span_end += segment_start;
        FindingProbe probe {call.positive, call.negative};
        if (settings.negation == NegationMode::naive)
            probe.negative = naive_negation(call.positive);
        trace.record(TraceKind::tool_call, disease.name,
                     {{"positive", probe.positive},
                      {"negative", probe.negative},
                      {"agent_negative", call.negative},
                      {"span", {call.span_begin, call.span_end}}});

        FindingObservation obs;
        try
        {
            obs = score_probe(embedder, patient.image_ref, probe, settings.vlm);
        }
        catch (const BackendError& e)
        {
            throw fail(std::string("embedding backend: ") + e.what(), true);
        }
        catch (const Error& e)
        {
            throw fail(std::string("scoring: ") + e.what(), false);
        }

        transcript.observations.push_back(obs);
        transcript.calls.push_back(call);
        json result = {{"verdict", to_string(obs.verdict)}, {"p_positive", obs.p_positive}, {"s_pos", obs.s_pos}};
        if (obs.s_neg)
            result["s_neg"] = *obs.s_neg;
        trace.record(TraceKind::stage_result, disease.name,
                     {{"stage", "screening_observation"}, {"observation", result}});
        inject(injection(assistant, to_string(obs.verdict)));

        if (static_cast<int>(transcript.calls.size()) >= max_calls)
        {
            transcript.stop_reason = "max_tool_calls";
            return false;
        }
        return true;
    };

    while (true)
    {
        Completion completion;
        try
        {
            completion = assistant.empty() ? llm.generate(conv, params)
                                           : resume_generation(llm, conv, assistant, params);
        }
        catch (const BackendError& e)
        {
            throw fail(std::string("llm backend: ") + e.what(), true);
        }

        tokens_used += std::max(completion.tokens, 0);
        trace.record(TraceKind::completion, disease.name,
                     {{"stage", "screening"}, {"text", completion.text}, {"finish", completion.finish.to_string()}});
        if (!completion.text.empty())
        {
            assistant += completion.text;
            transcript.turns.push_back({TranscriptSegment::Kind::generated, completion.text});
        }

        const std::string_view segment = std::string_view(assistant).substr(segment_start);
        bool keep_going = true;
        if (completion.finish.kind == FinishKind::stop_sequence)
        {
            keep_going = handle_call(segment);
        }
        else if (completion.finish.kind == FinishKind::end_of_message)
        {
            if (is_dangling_call(segment))
                keep_going = handle_call(segment);
            else
            {
                transcript.stop_reason = "end_of_message";
                keep_going = false;
            }
        }
        // max_tokens: resume the same segment on the next turn.

        if (!keep_going)
            break;
        if (tokens_used >= settings.token_budget)
        {
            transcript.stop_reason = "token_budget";
            break;
        }
        if (assistant.empty() && completion.finish.kind == FinishKind::max_tokens)
        {
            // Nothing to resume from; a further call would repeat this one.
            transcript.stop_reason = "token_budget";
            break;
        }
    }

    trace.record(TraceKind::stage_result, disease.name,
                 {{"stage", "screening"},
                  {"observations", transcript.observations.size()},
                  {"parse_failures", transcript.parse_failures.size()},
                  {"stop_reason", transcript.stop_reason}});
    return transcript;
}

} // namespace magda
