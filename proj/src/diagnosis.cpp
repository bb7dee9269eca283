// SPDX-License-Identifier: Apache-2.0
#include "magda/diagnosis.hpp"

#include "magda/error.hpp"
#include "magda/prompt_resources.hpp"
#include "magda/text.hpp"

#include <boost/regex.hpp>

#include <algorithm>

namespace magda {

const std::string kAnswerReminder =
    "Please end your reply with one of these exact sentences: \"Therefore, my answer is: yes.\" or "
    "\"Therefore, my answer is: no.\"";

std::string render_observations(std::span<const FindingObservation> observations)
{
    std::vector<std::string> lines;
    lines.reserve(observations.size());
    for (const auto& obs : observations)
        lines.push_back(obs.probe.positive + ": " + std::string(to_string(obs.verdict)));
    return text::join(lines, "\n");
}

Conversation build_diagnosis_prompt(std::span<const FindingObservation> observations, std::string_view disease,
                                    std::string_view template_text)
{
    if (text::trim(disease).empty())
        throw PreconditionError("diagnosis prompt needs a disease");
    if (template_text.empty())
        template_text = resources::kDiagnosisTemplate;
    auto prompt = text::replace_all(template_text, "<findings>", render_observations(observations));
    prompt = text::replace_all(prompt, "<condition>", disease);
    return Conversation(std::move(prompt));
}

ParsedAnswer parse_answer(std::string_view input)
{
    static const boost::regex sentinel(R"(therefore,\s*my\s+answer\s+is:\s*(yes|no)\b\.?)",
                                       boost::regex::perl | boost::regex::icase);
    boost::match_results<std::string_view::const_iterator> m;
    auto begin = input.begin();
    std::optional<std::pair<std::size_t, bool>> last;
    while (boost::regex_search(begin, input.end(), m, sentinel))
    {
        const auto at = static_cast<std::size_t>(m[0].first - input.begin());
        last = {at, text::iequals(std::string_view(&*m[1].first, static_cast<std::size_t>(m[1].length())), "yes")};
        begin = m[0].second;
    }
    if (!last)
        throw AnswerNotFound("no answer sentence found");
    return {last->second, text::trim(input.substr(0, last->first))};
}

DiagnosisResult run_diagnosis(std::span<const FindingObservation> observations, std::string_view disease,
                              const DiagnosisSettings& settings, LlmBackend& llm, PatientTrace& trace)
{
    auto conv = build_diagnosis_prompt(observations, disease, settings.template_text);
    trace.record(TraceKind::prompt, disease, {{"stage", "diagnosis"}, {"text", conv.turns().front().content}});

    SamplingParams params;
    params.temperature = settings.temperature;
    params.max_tokens = settings.max_tokens;

    DiagnosisResult result;
    result.disease = std::string(disease);
    const int attempts = std::max(1, settings.max_retries);
    std::string last_text;
    for (int attempt = 1; attempt <= attempts; ++attempt)
    {
        auto completion = llm.generate(conv, params);
        last_text = completion.text;
        trace.record(TraceKind::completion, disease,
                     {{"stage", "diagnosis"}, {"text", completion.text}, {"finish", completion.finish.to_string()},
                      {"attempt", attempt}});
        result.parse_attempts = attempt;
        try
        {
            auto parsed = parse_answer(completion.text);
            result.prediction = parsed.prediction;
            result.reasoning = std::move(parsed.reasoning);
            trace.record(TraceKind::stage_result, disease,
                         {{"stage", "diagnosis"}, {"prediction", result.prediction}, {"reasoning", result.reasoning},
                          {"parse_attempts", result.parse_attempts}});
            return result;
        }
        catch (const AnswerNotFound&)
        {
            trace.record(TraceKind::parse_event, disease,
                         {{"stage", "diagnosis"}, {"event", "answer_not_found"}, {"attempt", attempt}});
            if (attempt < attempts)
            {
                conv.add_assistant(completion.text);
                conv.add_user(kAnswerReminder);
                trace.record(TraceKind::prompt, disease, {{"stage", "diagnosis"}, {"text", kAnswerReminder}});
            }
        }
    }

    result.prediction = false;
    result.reasoning = last_text;
    result.fallback = true;
    trace.record(TraceKind::parse_event, disease,
                 {{"stage", "diagnosis"}, {"event", "fallback_negative"}, {"attempts", attempts}});
    trace.record(TraceKind::stage_result, disease,
                 {{"stage", "diagnosis"}, {"prediction", false}, {"reasoning", result.reasoning},
                  {"parse_attempts", result.parse_attempts}, {"fallback", true}});
    return result;
}

} // namespace magda
