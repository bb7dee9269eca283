// SPDX-License-Identifier: Apache-2.0
#include "sequence_llm.hpp"

#include "magda/diagnosis.hpp"
#include "magda/error.hpp"
#include "magda/refinement.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace magda;
using fixture::SequenceLlm;

namespace {

FindingObservation obs(std::string positive, Verdict v)
{
    FindingObservation o;
    o.probe = {std::move(positive), "neg"};
    o.verdict = v;
    o.p_positive = v == Verdict::Positive ? 0.7 : 0.4;
    return o;
}

const std::vector<std::string> kConditions = {"Cardiomegaly", "Pleural Effusion", "Pneumothorax", "Edema",
                                              "No Finding"};

RefinementSettings refinement_settings(TaskMode mode = TaskMode::multi_label)
{
    RefinementSettings s;
    s.config.task_mode = mode;
    s.config.no_finding_label = "No Finding";
    s.temperature = 0.0;
    return s;
}

DiagnosisResult diag(std::string disease, bool prediction)
{
    return {std::move(disease), prediction, "because", 1, false};
}

} // namespace

TEST(ParseAnswer, Examples)
{
    auto yes = parse_answer("The heart is enlarged. Therefore, my answer is: yes.");
    EXPECT_TRUE(yes.prediction);
    EXPECT_EQ(yes.reasoning, "The heart is enlarged.");
    EXPECT_FALSE(parse_answer("therefore, MY answer is:No").prediction);
    EXPECT_TRUE(parse_answer("Therefore,my answer   is: YES").prediction);
    EXPECT_THROW(parse_answer("My answer is yes."), AnswerNotFound);
    EXPECT_THROW(parse_answer("Therefore, my answer is: yesterday"), AnswerNotFound);
    EXPECT_THROW(parse_answer("Therefore, my answer is: maybe."), AnswerNotFound);
}

TEST(ParseAnswer, LastSentinelWins)
{
    auto a = parse_answer("First: Therefore, my answer is: yes. On reflection, Therefore, my answer is: no.");
    EXPECT_FALSE(a.prediction);
    EXPECT_EQ(a.reasoning, "First: Therefore, my answer is: yes. On reflection,");
}

TEST(DiagnosisPrompt, ListsObservationsAndCondition)
{
    std::vector<FindingObservation> o = {obs("There is A", Verdict::Positive), obs("There is B", Verdict::Negative)};
    EXPECT_EQ(render_observations(o), "There is A: Positive\nThere is B: Negative");
    auto conv = build_diagnosis_prompt(o, "Edema");
    const auto& text = conv.turns().front().content;
    EXPECT_NE(text.find("Here are the findings:\nThere is A: Positive\nThere is B: Negative"), std::string::npos);
    EXPECT_NE(text.find("Does the patient have Edema?"), std::string::npos);
    EXPECT_THROW(build_diagnosis_prompt(o, " "), PreconditionError);
}

TEST(RunDiagnosis, ParsesFirstReply)
{
    SequenceLlm llm({"Positive finding. Therefore, my answer is: yes."});
    PatientTrace trace("p");
    std::vector<FindingObservation> o = {obs("A", Verdict::Positive)};
    auto r = run_diagnosis(o, "Edema", {}, llm, trace);
    EXPECT_TRUE(r.prediction);
    EXPECT_EQ(r.parse_attempts, 1);
    EXPECT_FALSE(r.fallback);
    EXPECT_EQ(r.reasoning, "Positive finding.");
}

TEST(RunDiagnosis, ReminderRecovers)
{
    SequenceLlm llm({"I think so.", "Therefore, my answer is: no."});
    PatientTrace trace("p");
    auto r = run_diagnosis({}, "Edema", {}, llm, trace);
    EXPECT_FALSE(r.prediction);
    EXPECT_EQ(r.parse_attempts, 2);
    ASSERT_EQ(llm.conversations.size(), 2u);
    EXPECT_EQ(llm.conversations[1].turns().back().content, kAnswerReminder);
}

TEST(RunDiagnosis, FallbackAfterRetries)
{
    SequenceLlm llm({"hmm", "hmm", "still unsure"});
    PatientTrace trace("p");
    auto r = run_diagnosis({}, "Edema", {}, llm, trace);
    EXPECT_FALSE(r.prediction);
    EXPECT_TRUE(r.fallback);
    EXPECT_EQ(r.parse_attempts, 3);
    EXPECT_EQ(r.reasoning, "still unsure");
    bool saw_fallback = false;
    for (const auto& rec : trace.records())
        saw_fallback = saw_fallback || rec.value("event", "") == "fallback_negative";
    EXPECT_TRUE(saw_fallback);
}

TEST(RefinementPrompt, ConditionsDiagnosesAndGraph)
{
    RefinementConfig cfg;
    std::vector<DiagnosisResult> pos = {{"Edema", true, "Kerley B lines seen.", 1, false}};
    auto text = build_refinement_prompt(pos, kConditions, cfg).turns().front().content;
    EXPECT_NE(text.find("Cardiomegaly\nPleural Effusion\nPneumothorax\nEdema\nNo Finding"), std::string::npos);
    EXPECT_NE(text.find("Condition: Edema\nReasoning: Kerley B lines seen."), std::string::npos);
    EXPECT_EQ(text.find("disease graph"), std::string::npos);

    cfg.include_disease_graph = true;
    EXPECT_THROW(build_refinement_prompt(pos, kConditions, cfg), ValidationError);
    cfg.graph_text = "Edema -> Pleural Effusion\n";
    auto with_graph = build_refinement_prompt(pos, kConditions, cfg).turns().front().content;
    EXPECT_NE(with_graph.find("No Finding\n\nThe dependencies between these conditions are described by the following "
                              "disease graph:\nEdema -> Pleural Effusion"),
              std::string::npos);
    EXPECT_THROW(build_refinement_prompt(pos, {}, RefinementConfig {}), PreconditionError);
}

TEST(RefinementQuestion, CotToggle)
{
    EXPECT_EQ(refinement_question("Edema", true), "Does the patient have Edema?");
    auto direct = refinement_question("Edema", false);
    EXPECT_EQ(direct.rfind("Does the patient have Edema? Do not give any reasoning.", 0), 0u);
}

TEST(NoFindingRule, ExhaustiveSixLabels)
{
    const std::vector<std::string> names = {"A", "B", "C", "D", "E", "NF"};
    for (unsigned mask = 0; mask < 64; ++mask)
    {
        std::vector<std::pair<std::string, bool>> labels;
        for (unsigned i = 0; i < 6; ++i)
            labels.emplace_back(names[i], (mask >> i) & 1u);
        auto before = labels;
        apply_no_finding_rule(labels, std::string("NF"));
        bool any = false;
        for (unsigned i = 0; i < 5; ++i)
        {
            EXPECT_EQ(labels[i], before[i]);
            any = any || before[i].second;
        }
        EXPECT_EQ(labels[5].second, !any) << mask;

        auto untouched = before;
        apply_no_finding_rule(untouched, std::nullopt);
        EXPECT_EQ(untouched, before);
    }
}

TEST(SingleLabel, WorkedExample)
{
    const std::vector<std::string> conds = {"A", "B", "C"};
    EXPECT_EQ(select_single_label({"A", "B"}, {{"A", 0.71}, {"B", 0.64}}, std::nullopt, conds), "A");
    EXPECT_EQ(select_single_label({"B"}, {{"A", 0.9}, {"B", 0.1}}, std::nullopt, conds), "B");
    EXPECT_EQ(select_single_label({}, {{"C", 0.9}}, std::string("NF"), conds), "NF");
    EXPECT_EQ(select_single_label({}, {{"C", 0.9}}, std::nullopt, conds), "C");
    EXPECT_EQ(select_single_label({"A", "B"}, {}, std::nullopt, conds), "A");
}

TEST(SingleLabel, RandomSetsAgainstOracle)
{
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int iter = 0; iter < 500; ++iter)
    {
        const std::size_t n = 1 + rng() % 6;
        std::vector<std::string> conds;
        for (std::size_t i = 0; i < n; ++i)
            conds.push_back("L" + std::to_string(i));
        std::map<std::string, double> scores;
        std::vector<std::string> approved;
        for (const auto& c : conds)
        {
            // Coarse scores so ties happen.
            scores[c] = std::round(u(rng) * 4) / 4;
            if (rng() % 3 == 0)
                approved.push_back(c);
        }
        std::optional<std::string> nf;
        if (rng() % 2)
            nf = "NF";

        std::string expected;
        auto argmax = [&](const std::vector<std::string>& pool) {
            std::string best = pool.front();
            for (const auto& c : pool)
                if (scores[c] > scores[best])
                    best = c;
            return best;
        };
        if (approved.size() == 1)
            expected = approved[0];
        else if (!approved.empty())
            expected = argmax(approved);
        else
            expected = nf ? *nf : argmax(conds);

        ASSERT_EQ(select_single_label(approved, scores, nf, conds), expected) << iter;

        // Totality through the prediction path: exactly one positive label.
        RefinementConfig cfg;
        cfg.task_mode = TaskMode::single_label;
        cfg.no_finding_label = nf;
        auto all = conds;
        if (nf)
            all.push_back(*nf);
        std::vector<DiagnosisResult> diags;
        for (const auto& c : conds)
            diags.push_back(diag(c, std::find(approved.begin(), approved.end(), c) != approved.end()));
        auto pred = prediction_from_diagnoses(diags, all, scores, cfg);
        int positives = 0;
        for (const auto& [label, value] : pred.labels)
            positives += value;
        ASSERT_EQ(positives, 1);
        ASSERT_EQ(pred.single_label_choice, expected);
        ASSERT_EQ(pred.get(expected), true);
    }
}

TEST(PredictionFromDiagnoses, MultiLabelAppliesNoFinding)
{
    RefinementConfig cfg;
    cfg.no_finding_label = "No Finding";
    auto none = prediction_from_diagnoses(std::vector<DiagnosisResult> {diag("Edema", false)}, kConditions, {}, cfg);
    EXPECT_EQ(none.get("No Finding"), true);
    EXPECT_EQ(none.get("Cardiomegaly"), false);
    EXPECT_EQ(none.get("Unknown"), std::nullopt);
    auto some = prediction_from_diagnoses(std::vector<DiagnosisResult> {diag("Edema", true)}, kConditions, {}, cfg);
    EXPECT_EQ(some.get("No Finding"), false);
    EXPECT_EQ(some.get("Edema"), true);
}

TEST(RunRefinement, AsksEachConditionExceptNoFinding)
{
    SequenceLlm llm({"OK.", "Therefore, my answer is: no.", "Therefore, my answer is: yes.",
                     "Therefore, my answer is: no.", "Reasoning. Therefore, my answer is: yes."});
    PatientTrace trace("p");
    std::vector<DiagnosisResult> diags = {diag("Cardiomegaly", true), diag("Pleural Effusion", true),
                                          diag("Pneumothorax", false), diag("Edema", false)};
    auto pred = run_refinement(diags, kConditions, {}, refinement_settings(), llm, trace);
    EXPECT_EQ(llm.conversations.size(), 5u);
    EXPECT_EQ(pred.get("Cardiomegaly"), false);
    EXPECT_EQ(pred.get("Pleural Effusion"), true);
    EXPECT_EQ(pred.get("Edema"), true);
    EXPECT_EQ(pred.get("No Finding"), false);
    EXPECT_EQ(pred.per_disease_reasoning.at("Edema"), "Reasoning.");
    EXPECT_TRUE(pred.flags.empty());

    // The prompt lists only positive diagnoses and questions follow the list.
    const auto& last = llm.conversations.back();
    const auto& first = last.turns().front().content;
    EXPECT_NE(first.find("Condition: Cardiomegaly"), std::string::npos);
    EXPECT_EQ(first.find("Condition: Pneumothorax"), std::string::npos);
    EXPECT_EQ(last.turns()[1].content, "OK.");
    EXPECT_EQ(last.turns().back().content, "Does the patient have Edema?");
}

TEST(RunRefinement, FallbackInheritsDiagnosis)
{
    std::vector<std::string> replies = {"Sure."};
    for (int i = 0; i < 3; ++i)
        replies.push_back("unclear");
    replies.push_back("Therefore, my answer is: no.");
    replies.push_back("Therefore, my answer is: no.");
    replies.push_back("Therefore, my answer is: no.");
    SequenceLlm llm(replies);
    PatientTrace trace("p");
    std::vector<DiagnosisResult> diags = {diag("Cardiomegaly", true), diag("Pleural Effusion", false),
                                          diag("Pneumothorax", false), diag("Edema", false)};
    auto pred = run_refinement(diags, kConditions, {}, refinement_settings(), llm, trace);
    EXPECT_EQ(pred.get("Cardiomegaly"), true);
    EXPECT_EQ(pred.flags, std::vector<std::string> {"refinement_fallback:Cardiomegaly"});
    bool missing_ack = false;
    for (const auto& r : trace.records())
        missing_ack = missing_ack || r.value("event", "") == "missing_acknowledgment";
    EXPECT_TRUE(missing_ack);
}

TEST(RunRefinement, SingleLabelPicksHighestApproved)
{
    SequenceLlm llm({"OK.", "Therefore, my answer is: yes.", "Therefore, my answer is: yes.",
                     "Therefore, my answer is: no.", "Therefore, my answer is: no."});
    PatientTrace trace("p");
    std::vector<DiagnosisResult> diags = {diag("Cardiomegaly", true), diag("Pleural Effusion", true)};
    auto pred = run_refinement(diags, kConditions, {{"Cardiomegaly", 0.64}, {"Pleural Effusion", 0.71}},
                               refinement_settings(TaskMode::single_label), llm, trace);
    EXPECT_EQ(pred.single_label_choice, "Pleural Effusion");
    EXPECT_EQ(pred.get("Cardiomegaly"), false);
    EXPECT_EQ(pred.get("No Finding"), false);
}

TEST(RunRefinement, RejectsUnknownDiagnosis)
{
    SequenceLlm llm({});
    PatientTrace trace("p");
    std::vector<DiagnosisResult> diags = {diag("Atelectasis", true)};
    EXPECT_THROW(run_refinement(diags, kConditions, {}, refinement_settings(), llm, trace), PreconditionError);
}

TEST(TaskMode, Strings)
{
    EXPECT_EQ(task_mode_from_string("single_label"), TaskMode::single_label);
    EXPECT_EQ(to_string(TaskMode::multi_label), "multi_label");
    EXPECT_THROW(task_mode_from_string("multi"), ValidationError);
}
