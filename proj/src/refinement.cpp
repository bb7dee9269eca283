// SPDX-License-Identifier: Apache-2.0
#include "magda/refinement.hpp"

#include "magda/error.hpp"
#include "magda/prompt_resources.hpp"
#include "magda/text.hpp"

#include <algorithm>

namespace magda {

std::string_view to_string(TaskMode mode)
{
    return mode == TaskMode::multi_label ? "multi_label" : "single_label";
}

TaskMode task_mode_from_string(std::string_view s)
{
    if (s == "multi_label")
        return TaskMode::multi_label;
    if (s == "single_label")
        return TaskMode::single_label;
    throw ValidationError("unknown task mode '" + std::string(s) + "'");
}

void RefinementConfig::validate() const
{
    if (include_disease_graph && (!graph_text || text::trim(*graph_text).empty()))
        throw ValidationError("include_disease_graph needs graph text");
}

std::optional<bool> FinalPrediction::get(std::string_view label) const
{
    for (const auto& [name, value] : labels)
        if (name == label)
            return value;
    return std::nullopt;
}

Conversation build_refinement_prompt(std::span<const DiagnosisResult> positives,
                                     std::span<const std::string> condition_list, const RefinementConfig& cfg,
                                     std::string_view template_text)
{
    if (condition_list.empty())
        throw PreconditionError("refinement needs a non-empty condition list");
    cfg.validate();
    if (template_text.empty())
        template_text = resources::kRefinementTemplate;

    std::string conditions = text::join(std::vector<std::string>(condition_list.begin(), condition_list.end()), "\n");
    if (cfg.include_disease_graph)
        conditions += "\n\nThe dependencies between these conditions are described by the following disease graph:\n"
                      + text::trim(*cfg.graph_text);

    std::vector<std::string> blocks;
    for (const auto& d : positives)
        blocks.push_back("Condition: " + d.disease + "\nReasoning: " + d.reasoning);

    auto prompt = text::replace_all(template_text, "<condition_list>", conditions);
    prompt = text::replace_all(prompt, "<diagnoses>", text::join(blocks, "\n"));
    return Conversation(std::move(prompt));
}

std::string refinement_question(std::string_view condition, bool use_cot)
{
    std::string q = "Does the patient have " + std::string(condition) + "?";
    if (!use_cot)
        q += " Do not give any reasoning. Reply only with \"Therefore, my answer is: yes.\" or "
             "\"Therefore, my answer is: no.\"";
    return q;
}

std::string select_single_label(const std::vector<std::string>& approved, const std::map<std::string, double>& scores,
                                const std::optional<std::string>& no_finding_label,
                                std::span<const std::string> condition_list)
{
    auto score_of = [&](const std::string& label) {
        auto it = scores.find(label);
        return it == scores.end() ? 0.0 : it->second;
    };
    auto best_of = [&](auto accept) {
        std::optional<std::string> best;
        double best_score = 0.0;
        for (const auto& c : condition_list)
        {
            if (!accept(c))
                continue;
            const double s = score_of(c);
            if (!best || s > best_score)
            {
                best = c;
                best_score = s;
            }
        }
        return best;
    };

    if (approved.size() == 1)
        return approved.front();
    if (!approved.empty())
    {
        auto pick = best_of([&](const std::string& c) {
            return std::find(approved.begin(), approved.end(), c) != approved.end();
        });
        if (pick)
            return *pick;
        // Approved labels outside the condition list: fall back to score order.
        return *std::max_element(approved.begin(), approved.end(),
                                 [&](const auto& a, const auto& b) { return score_of(a) < score_of(b); });
    }
    if (no_finding_label)
        return *no_finding_label;
    auto pick = best_of([](const std::string&) { return true; });
    if (!pick)
        throw PreconditionError("single-label selection needs a non-empty condition list");
    return *pick;
}

void apply_no_finding_rule(std::vector<std::pair<std::string, bool>>& labels,
                           const std::optional<std::string>& no_finding_label)
{
    if (!no_finding_label)
        return;
    bool any_positive = false;
    for (const auto& [name, value] : labels)
        if (name != *no_finding_label && value)
            any_positive = true;
    for (auto& [name, value] : labels)
        if (name == *no_finding_label)
            value = !any_positive;
}

namespace {

bool is_no_finding(const std::string& label, const RefinementConfig& cfg)
{
    return cfg.no_finding_label && *cfg.no_finding_label == label;
}

// Turns a multi-label decision into the final shape for the configured task.
void finish_prediction(FinalPrediction& out, const std::map<std::string, double>& scores,
                       std::span<const std::string> condition_list, const RefinementConfig& cfg)
{
    if (cfg.task_mode == TaskMode::multi_label)
    {
        apply_no_finding_rule(out.labels, cfg.no_finding_label);
        return;
    }
    std::vector<std::string> approved;
    for (const auto& [name, value] : out.labels)
        if (value && !is_no_finding(name, cfg))
            approved.push_back(name);
    const auto choice = select_single_label(approved, scores, cfg.no_finding_label, condition_list);
    for (auto& [name, value] : out.labels)
        value = name == choice;
    out.single_label_choice = choice;
}

const DiagnosisResult* find_diagnosis(std::span<const DiagnosisResult> diagnoses, const std::string& name)
{
    for (const auto& d : diagnoses)
        if (d.disease == name)
            return &d;
    return nullptr;
}

} // namespace

FinalPrediction prediction_from_diagnoses(std::span<const DiagnosisResult> diagnoses,
                                          std::span<const std::string> condition_list,
                                          const std::map<std::string, double>& scores, const RefinementConfig& cfg)
{
    FinalPrediction out;
    for (const auto& c : condition_list)
    {
        const auto* d = find_diagnosis(diagnoses, c);
        out.labels.emplace_back(c, d != nullptr && d->prediction);
        if (d)
            out.per_disease_reasoning[c] = d->reasoning;
    }
    finish_prediction(out, scores, condition_list, cfg);
    return out;
}

FinalPrediction run_refinement(std::span<const DiagnosisResult> diagnoses, std::span<const std::string> condition_list,
                               const std::map<std::string, double>& scores, const RefinementSettings& settings,
                               LlmBackend& llm, PatientTrace& trace)
{
    const auto& cfg = settings.config;
    cfg.validate();
    for (const auto& d : diagnoses)
        if (std::find(condition_list.begin(), condition_list.end(), d.disease) == condition_list.end())
            throw PreconditionError("diagnosed label '" + d.disease + "' is not in the condition list");

    std::vector<DiagnosisResult> positives;
    for (const auto& d : diagnoses)
        if (d.prediction)
            positives.push_back(d);

    auto conv = build_refinement_prompt(positives, condition_list, cfg, settings.template_text);
    trace.record(TraceKind::prompt, std::nullopt, {{"stage", "refinement"}, {"text", conv.turns().front().content}});

    SamplingParams params;
    params.temperature = settings.temperature;
    params.max_tokens = settings.max_tokens;

    auto ack = llm.generate(conv, params);
    trace.record(TraceKind::completion, std::nullopt,
                 {{"stage", "refinement"}, {"text", ack.text}, {"finish", ack.finish.to_string()}});
    if (!text::icontains(ack.text, "ok"))
        trace.record(TraceKind::parse_event, std::nullopt,
                     {{"stage", "refinement"}, {"event", "missing_acknowledgment"}, {"reply", ack.text}});
    conv.add_assistant(ack.text);

    FinalPrediction out;
    const int attempts = std::max(1, settings.max_retries);
    for (const auto& condition : condition_list)
    {
        if (is_no_finding(condition, cfg))
        {
            out.labels.emplace_back(condition, false); // set by rule below
            continue;
        }

        const auto question = refinement_question(condition, cfg.use_cot);
        conv.add_user(question);
        trace.record(TraceKind::prompt, condition, {{"stage", "refinement"}, {"text", question}});

        std::optional<ParsedAnswer> answer;
        for (int attempt = 1; attempt <= attempts && !answer; ++attempt)
        {
            auto reply = llm.generate(conv, params);
            trace.record(TraceKind::completion, condition,
                         {{"stage", "refinement"}, {"text", reply.text}, {"finish", reply.finish.to_string()},
                          {"attempt", attempt}});
            conv.add_assistant(reply.text);
            try
            {
                answer = parse_answer(reply.text);
            }
            catch (const AnswerNotFound&)
            {
                trace.record(TraceKind::parse_event, condition,
                             {{"stage", "refinement"}, {"event", "answer_not_found"}, {"attempt", attempt}});
                if (attempt < attempts)
                {
                    conv.add_user(kAnswerReminder);
                    trace.record(TraceKind::prompt, condition, {{"stage", "refinement"}, {"text", kAnswerReminder}});
                }
            }
        }

        bool value;
        if (answer)
        {
            value = answer->prediction;
            out.per_disease_reasoning[condition] = answer->reasoning;
        }
        else
        {
            const auto* d = find_diagnosis(diagnoses, condition);
            value = d != nullptr && d->prediction;
            if (d)
                out.per_disease_reasoning[condition] = d->reasoning;
            out.flags.push_back("refinement_fallback:" + condition);
            trace.record(TraceKind::parse_event, condition,
                         {{"stage", "refinement"}, {"event", "inherit_diagnosis"}, {"value", value}});
        }
        out.labels.emplace_back(condition, value);
    }

    finish_prediction(out, scores, condition_list, cfg);

    nlohmann::json labels = nlohmann::json::object();
    for (const auto& [name, value] : out.labels)
        labels[name] = value;
    nlohmann::json fields = {{"stage", "refinement"}, {"labels", labels}};
    if (out.single_label_choice)
        fields["single_label_choice"] = *out.single_label_choice;
    trace.record(TraceKind::stage_result, std::nullopt, std::move(fields));
    return out;
}

} // namespace magda
