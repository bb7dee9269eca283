// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"
#include "sequence_llm.hpp"

#include "magda/screening.hpp"
#include "magda/text.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace magda;
using fixture::SequenceLlm;

namespace {

const Disease& cardiomegaly()
{
    static const auto set = fixture::synthetic_guidelines();
    return set.diseases[0];
}

std::shared_ptr<SyntheticWorld> world()
{
    static auto w = SyntheticWorld::load(fixture::synthetic_dir() / "world.json");
    return w;
}

PatientRecord patient(std::string image = "img01")
{
    return {"p01", std::move(image), {}};
}

ScreeningSettings settings()
{
    ScreeningSettings s;
    s.vlm.psi = 0.5;
    s.temperature = 0.0;
    return s;
}

const std::string kCall1 =
    "CLIP: There is an enlarged cardiac silhouette indicating Cardiomegaly. / There is a normal heart size indicating no "
    "Cardiomegaly. ->";
const std::string kCall2 =
    "CLIP: There is an increased cardiothoracic ratio indicating Cardiomegaly. / There is a normal ratio indicating no "
    "Cardiomegaly. ->";

// Description text without any tool token, possibly with padding spaces.
std::string random_description(std::mt19937_64& rng)
{
    static const std::string alphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJ0123456789 .,;:'()-<>_CLIP";
    std::string out;
    do
    {
        out.clear();
        const auto len = 1 + rng() % 40;
        for (std::size_t i = 0; i < len; ++i)
            out += alphabet[rng() % alphabet.size()];
    } while (text::trim(out).empty() || out.find("CLIP:") != std::string::npos || out.find("->") != std::string::npos
             || out.back() == '-');
    if (rng() % 3 == 0)
        out = " " + out;
    return out;
}

} // namespace

TEST(ParseToolCall, Examples)
{
    auto c = parse_tool_call("I will check. CLIP: There is A indicating X. / There is no A indicating no X. ");
    EXPECT_EQ(c.positive, "There is A indicating X.");
    EXPECT_EQ(c.negative, "There is no A indicating no X.");
    EXPECT_EQ(c.span_begin, 14u);
    EXPECT_EQ(c.span_end, std::string("I will check. CLIP: There is A indicating X. / There is no A indicating no X.").size());

    auto unspaced = parse_tool_call("CLIP: a/b");
    EXPECT_EQ(unspaced.positive, "a");
    EXPECT_EQ(unspaced.negative, "b");

    auto multi = parse_tool_call("CLIP: first line\ncontinues / neg\npart");
    EXPECT_EQ(multi.positive, "first line continues");
    EXPECT_EQ(multi.negative, "neg part");

    auto last = parse_tool_call("CLIP: old / call -> Positive\nCLIP: new / one");
    EXPECT_EQ(last.positive, "new");
}

TEST(ParseToolCall, MalformedClasses)
{
    auto kind_of = [](std::string_view s) {
        try
        {
            parse_tool_call(s);
        }
        catch (const MalformedToolCall& e)
        {
            return e.kind();
        }
        ADD_FAILURE() << "parsed: " << s;
        return MalformedKind::NoClipKeyword;
    };
    EXPECT_EQ(kind_of("There is A / no A"), MalformedKind::NoClipKeyword);
    EXPECT_EQ(kind_of("clip: lower / case"), MalformedKind::NoClipKeyword);
    EXPECT_EQ(kind_of("CLIP: only positive "), MalformedKind::NoSlashSeparator);
    EXPECT_EQ(kind_of("CLIP:  / negative"), MalformedKind::EmptyDescription);
    EXPECT_EQ(kind_of("CLIP: positive /   "), MalformedKind::EmptyDescription);
}

TEST(ParseToolCall, FuzzedRoundTrip)
{
    std::mt19937_64 rng(20240611);
    for (int i = 0; i < 2000; ++i)
    {
        const auto pos = random_description(rng);
        const auto neg = random_description(rng);
        const std::string prefix = rng() % 2 ? "Checking the next finding.\n" : "";
        const std::string sep = rng() % 2 ? " / " : "/";
        const std::string segment = prefix + "CLIP: " + pos + sep + neg + (rng() % 2 ? " " : "");
        ToolCall call;
        ASSERT_NO_THROW(call = parse_tool_call(segment)) << segment;
        ASSERT_EQ(call.positive, text::trim(pos)) << segment;
        ASSERT_EQ(call.negative, text::trim(neg)) << segment;
        ASSERT_EQ(call.span_begin, prefix.size());
        ASSERT_EQ(text::trim(segment.substr(call.span_end)), "");
    }
}

TEST(NaiveNegation, PrefixesNoAndLowercases)
{
    EXPECT_EQ(naive_negation("Enlarged cardiac silhouette"), "No enlarged cardiac silhouette");
    EXPECT_EQ(naive_negation("kerley B lines"), "No kerley B lines");
    EXPECT_EQ(naive_negation(naive_negation("Blunting")), "No no blunting");
    EXPECT_THROW(naive_negation(""), PreconditionError);
}

TEST(ScreeningPrompt, FillsTemplate)
{
    auto conv = build_screening_prompt(cardiomegaly());
    const auto& text = conv.turns().front().content;
    EXPECT_NE(text.find("presence or absence of Cardiomegaly."), std::string::npos);
    EXPECT_NE(text.find("Enlarged cardiac silhouette\nIncreased cardiothoracic ratio"), std::string::npos);
    EXPECT_EQ(text.find("<condition>"), std::string::npos);
    EXPECT_EQ(text.find("<xplainer_findings>"), std::string::npos);
    EXPECT_EQ(build_screening_prompt(cardiomegaly(), "T <condition>: <xplainer_findings>").turns().front().content,
              "T Cardiomegaly: Enlarged cardiac silhouette\nIncreased cardiothoracic ratio");
}

TEST(RunScreening, OneMalformedThenTwoValid)
{
    SequenceLlm llm({"Let me check. CLIP: enlarged heart ->", kCall1, kCall2, "All findings are evaluated."});
    PatientTrace trace("p01");
    auto t = run_screening(patient(), cardiomegaly(), settings(), llm, *world(), trace);

    EXPECT_EQ(t.parse_failures, std::vector<std::string> {"NoSlashSeparator"});
    ASSERT_EQ(t.observations.size(), 2u);
    EXPECT_EQ(t.observations[0].verdict, Verdict::Positive);
    EXPECT_EQ(t.observations[1].verdict, Verdict::Positive);
    EXPECT_EQ(t.stop_reason, "end_of_message");

    const auto text = t.assistant_text();
    EXPECT_NE(text.find("-> Error: malformed call, continue.\n"), std::string::npos);
    EXPECT_NE(text.find("Cardiomegaly. -> Positive\n"), std::string::npos);
    for (const auto& call : t.calls)
    {
        auto span = text.substr(call.span_begin, call.span_end - call.span_begin);
        EXPECT_EQ(span.rfind("CLIP: ", 0), 0u) << span;
        EXPECT_EQ(span.find("->"), std::string::npos);
    }
    // Every resume carries the transcript built so far.
    ASSERT_EQ(llm.partials.size(), 3u);
    EXPECT_EQ(llm.partials[2], text.substr(0, llm.partials[2].size()));
    for (const auto& p : llm.params_seen)
        EXPECT_EQ(p.stop_sequences, std::vector<std::string> {"->"});
}

TEST(RunScreening, ObservationMatchesWorld)
{
    SequenceLlm llm({kCall1, kCall2, "Done."});
    PatientTrace trace("p02");
    auto t = run_screening(patient("img02"), cardiomegaly(), settings(), llm, *world(), trace);
    ASSERT_EQ(t.observations.size(), 2u);
    EXPECT_EQ(t.observations[0].verdict, Verdict::Negative);
    EXPECT_EQ(t.observations[1].verdict, Verdict::Positive);
    EXPECT_NEAR(t.observations[1].p_positive, 0.7310585786, 1e-9);
}

TEST(RunScreening, ZeroCalls)
{
    SequenceLlm llm({"I see nothing to test."});
    PatientTrace trace("p01");
    auto t = run_screening(patient(), cardiomegaly(), settings(), llm, *world(), trace);
    EXPECT_TRUE(t.observations.empty());
    EXPECT_EQ(t.stop_reason, "end_of_message");
}

TEST(RunScreening, NaiveNegationReplacesAgentNegative)
{
    auto s = settings();
    s.negation = NegationMode::naive;
    SequenceLlm llm({kCall1, "Done."});
    PatientTrace trace("p01");
    auto t = run_screening(patient(), cardiomegaly(), s, llm, *world(), trace);
    ASSERT_EQ(t.observations.size(), 1u);
    EXPECT_EQ(t.observations[0].probe.negative,
              "No there is an enlarged cardiac silhouette indicating Cardiomegaly.");
    EXPECT_EQ(t.calls[0].negative, "There is a normal heart size indicating no Cardiomegaly.");
}

TEST(RunScreening, DanglingCallWithoutArrowIsExecuted)
{
    SequenceLlm llm({"CLIP: There is an enlarged cardiac silhouette indicating Cardiomegaly. / There is a normal heart",
                     "Done."});
    PatientTrace trace("p01");
    auto t = run_screening(patient(), cardiomegaly(), settings(), llm, *world(), trace);
    ASSERT_EQ(t.observations.size(), 1u);
    EXPECT_NE(t.assistant_text().find("normal heart -> Positive\n"), std::string::npos);
}

TEST(RunScreening, MaxToolCallsStopsEarly)
{
    auto s = settings();
    s.max_tool_calls = 1;
    SequenceLlm llm({kCall1, kCall2});
    PatientTrace trace("p01");
    auto t = run_screening(patient(), cardiomegaly(), s, llm, *world(), trace);
    EXPECT_EQ(t.observations.size(), 1u);
    EXPECT_EQ(t.stop_reason, "max_tool_calls");
}

TEST(RunScreening, DefaultCallCapIsTwicePerFinding)
{
    SequenceLlm llm(std::vector<std::string>(10, kCall1));
    PatientTrace trace("p01");
    auto t = run_screening(patient(), cardiomegaly(), settings(), llm, *world(), trace);
    EXPECT_EQ(t.observations.size(), 4u);
}

TEST(RunScreening, ThreeConsecutiveMalformedFail)
{
    SequenceLlm llm({"CLIP: a ->", kCall1, "CLIP: b ->", "no keyword ->", "CLIP:  / x ->", kCall2});
    PatientTrace trace("p01");
    try
    {
        run_screening(patient(), cardiomegaly(), settings(), llm, *world(), trace);
        FAIL() << "expected ScreeningFailed";
    }
    catch (const ScreeningFailed& e)
    {
        EXPECT_FALSE(e.backend_failure());
        EXPECT_EQ(e.transcript().parse_failures.size(), 4u);
        EXPECT_EQ(e.transcript().observations.size(), 1u);
        EXPECT_EQ(e.transcript().stop_reason, "failed");
    }
}

TEST(RunScreening, IdenticalDescriptionsAreMalformed)
{
    SequenceLlm llm({"CLIP: same / same ->", kCall1, "Done."});
    PatientTrace trace("p01");
    auto t = run_screening(patient(), cardiomegaly(), settings(), llm, *world(), trace);
    EXPECT_EQ(t.parse_failures.size(), 1u);
    EXPECT_EQ(t.observations.size(), 1u);
}

TEST(RunScreening, BackendOutageIsFlagged)
{
    SequenceLlm llm({kCall1, SequenceLlm::kBackendDown});
    PatientTrace trace("p01");
    try
    {
        run_screening(patient(), cardiomegaly(), settings(), llm, *world(), trace);
        FAIL();
    }
    catch (const ScreeningFailed& e)
    {
        EXPECT_TRUE(e.backend_failure());
        EXPECT_EQ(e.transcript().observations.size(), 1u);
    }
}

TEST(RunScreening, TokenBudgetEndsRun)
{
    auto s = settings();
    s.token_budget = 5;
    SequenceLlm llm({kCall1, kCall2});
    PatientTrace trace("p01");
    auto t = run_screening(patient(), cardiomegaly(), s, llm, *world(), trace);
    EXPECT_EQ(t.stop_reason, "token_budget");
    EXPECT_EQ(t.observations.size(), 1u);
}

TEST(RunScreening, LengthCutResumesSameSegment)
{
    auto s = settings();
    s.max_tokens = 6;
    // First reply is cut mid-call; the resume completes it.
    SequenceLlm llm({"CLIP: There is an enlarged cardiac silhouette",
                     "indicating Cardiomegaly. / There is no enlargement. ->", "Done."});
    PatientTrace trace("p01");
    auto t = run_screening(patient(), cardiomegaly(), s, llm, *world(), trace);
    ASSERT_EQ(t.observations.size(), 1u);
    EXPECT_TRUE(t.parse_failures.empty());
}

TEST(RunScreening, TraceRecordsTheLoop)
{
    SequenceLlm llm({kCall1, "Done."});
    PatientTrace trace("p01");
    run_screening(patient(), cardiomegaly(), settings(), llm, *world(), trace);
    std::vector<std::string> kinds;
    for (const auto& r : trace.records())
        kinds.push_back(r["kind"]);
    EXPECT_EQ(kinds, (std::vector<std::string> {"prompt", "completion", "tool_call", "stage_result", "tool_result",
                                                "completion", "stage_result"}));
    EXPECT_EQ(trace.records()[2]["disease"], "Cardiomegaly");
}

TEST(RunScreening, UnknownImageFailsWithoutBackendFlag)
{
    SequenceLlm llm({kCall1});
    PatientTrace trace("p01");
    try
    {
        run_screening(patient("nope"), cardiomegaly(), settings(), llm, *world(), trace);
        FAIL();
    }
    catch (const ScreeningFailed& e)
    {
        EXPECT_FALSE(e.backend_failure());
    }
}
