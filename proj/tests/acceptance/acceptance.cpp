// SPDX-License-Identifier: Apache-2.0
// Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
// nonzero when any criterion fails.
#include "fixtures.hpp"

#include "magda/cli.hpp"
#include "magda/embedding_backend.hpp"
#include "magda/error.hpp"
#include "magda/evaluation.hpp"
#include "magda/pipeline.hpp"
#include "magda/refinement.hpp"
#include "magda/screening.hpp"
#include "magda/text.hpp"
#include "magda/trace.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

using namespace magda;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome
{
    enum class Status
    {
        pass,
        fail,
        skip,
    };
    Status status;
    std::string detail;
};

Outcome pass(std::string d)
{
    return {Outcome::Status::pass, std::move(d)};
}

Outcome fail(std::string d)
{
    return {Outcome::Status::fail, std::move(d)};
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3)
{
    std::ostringstream s;
    s.precision(prec);
    s << std::fixed << v;
    return s.str();
}

std::string fmt_sci(double v)
{
    std::ostringstream s;
    s.precision(2);
    s << std::scientific << v;
    return s.str();
}

// ---------------------------------------------------------------------------

std::string random_description(std::mt19937_64& rng)
{
    static const std::string alphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJ0123456789 .,;:'()-<>_CLIP";
    std::string out;
    do
    {
        out.clear();
        const auto len = 1 + rng() % 48;
        for (std::size_t i = 0; i < len; ++i)
            out += alphabet[rng() % alphabet.size()];
    } while (text::trim(out).empty() || out.find("CLIP:") != std::string::npos || out.find("->") != std::string::npos
             || out.find('/') != std::string::npos || out.back() == '-');
    return out;
}

Outcome parser_suite()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1729);
    const int cases = 5000;
    int failures = 0;
    for (int i = 0; i < cases; ++i)
    {
        const auto pos = text::trim(random_description(rng));
        const auto neg = text::trim(random_description(rng));
        try
        {
            const auto call = parse_tool_call("CLIP: " + pos + " / " + neg + " ");
            failures += call.positive != pos || call.negative != neg;
        }
        catch (const MalformedToolCall&)
        {
            ++failures;
        }
    }

    auto detected = [](std::string_view segment, MalformedKind expected) {
        try
        {
            parse_tool_call(segment);
        }
        catch (const MalformedToolCall& e)
        {
            return e.kind() == expected;
        }
        return false;
    };
    const bool classes = detected("There is A indicating X. / There is no A indicating no X.", MalformedKind::NoClipKeyword)
                         && detected("CLIP: There is A indicating X.", MalformedKind::NoSlashSeparator)
                         && detected("CLIP:   / There is no A", MalformedKind::EmptyDescription)
                         && detected("CLIP: There is A /  ", MalformedKind::EmptyDescription);
    const double elapsed = seconds_since(t0);
    const std::string detail = std::to_string(cases) + " round trips, " + std::to_string(failures)
                               + " failures, malformed classes " + (classes ? "detected" : "MISSED") + ", "
                               + fmt(elapsed) + " s";
    return failures == 0 && classes && elapsed < 5.0 ? pass(detail) : fail(detail);
}

Outcome scoring_suite()
{
    std::mt19937_64 rng(31337);
    std::uniform_real_distribution<double> sim(-1.0, 1.0);
    std::uniform_real_distribution<double> shift(-5.0, 5.0);
    double worst_sum = 0, worst_shift = 0;
    int monotonic_violations = 0;
    for (int i = 0; i < 10000; ++i)
    {
        const double a = sim(rng), b = sim(rng), c = shift(rng);
        const auto p = softmax_pair(a, b);
        worst_sum = std::max(worst_sum, std::abs(p.positive + p.negative - 1.0));
        worst_shift = std::max(worst_shift, std::abs(softmax_pair(a + c, b + c).positive - p.positive));
        // Raising the positive similarity never lowers its probability.
        const double bump = std::abs(sim(rng)) / 2;
        if (softmax_pair(a + bump, b).positive + 1e-12 < p.positive)
            ++monotonic_violations;
    }

    FindingProbe probe {"There is A indicating X.", "There is no A indicating no X."};
    VlmConfig vlm;
    vlm.psi = 0.5;
    const double e1 = score_similarities(probe, 0.0, 0.0, vlm).p_positive;
    const double e2 = score_similarities(probe, 1.0, 0.0, vlm).p_positive;
    const double e3 = score_similarities(probe, 0.3, 0.2, vlm).p_positive;
    const bool worked = std::abs(e1 - 0.5) <= 1e-12 && std::abs(e2 - 0.7310585786) <= 1e-10
                        && std::abs(e3 - 0.5249791875) <= 1e-10;

    const bool ok = worst_sum <= 1e-12 && worst_shift <= 1e-12 && monotonic_violations == 0 && worked;
    return (ok ? pass : fail)("10000 pairs, max |sum-1| " + fmt_sci(worst_sum) + ", max shift drift "
                              + fmt_sci(worst_shift) + ", monotonicity violations " + std::to_string(monotonic_violations)
                              + ", worked examples " + fmt(e1, 10) + "/" + fmt(e2, 10) + "/" + fmt(e3, 10));
}

// ---------------------------------------------------------------------------

double safe_div(double a, double b)
{
    return b == 0 ? 0.0 : a / b;
}

Outcome metric_oracle()
{
    std::mt19937_64 rng(8675309);
    double worst = 0;
    for (int iter = 0; iter < 200; ++iter)
    {
        const std::size_t n_labels = 1 + rng() % 6;
        const std::size_t n_patients = 1 + rng() % 30;
        std::vector<std::string> labels;
        for (std::size_t l = 0; l < n_labels; ++l)
            labels.push_back("L" + std::to_string(l));
        std::vector<PatientResult> rs;
        std::vector<double> tp(n_labels), fp(n_labels), fn(n_labels);
        for (std::size_t i = 0; i < n_patients; ++i)
        {
            PatientResult r;
            r.patient_id = std::to_string(i);
            for (std::size_t l = 0; l < n_labels; ++l)
            {
                const bool labeled = l == 0 || rng() % 8 != 0;
                const bool truth = rng() % 2;
                const bool pred = rng() % 2;
                r.final.labels.emplace_back(labels[l], pred);
                if (!labeled)
                    continue;
                r.truth[labels[l]] = truth;
                tp[l] += truth && pred;
                fp[l] += !truth && pred;
                fn[l] += truth && !pred;
            }
            rs.push_back(std::move(r));
        }
        double TP = 0, FP = 0, FN = 0, macro = 0;
        for (std::size_t l = 0; l < n_labels; ++l)
        {
            TP += tp[l];
            FP += fp[l];
            FN += fn[l];
            macro += safe_div(2 * tp[l], 2 * tp[l] + fp[l] + fn[l]);
        }
        macro /= static_cast<double>(n_labels);
        const double micro = safe_div(2 * TP, 2 * TP + FP + FN);
        const auto m = micro_macro_metrics(confusion_counts(rs, labels));
        worst = std::max({worst, std::abs(m.micro.f1 - micro), std::abs(m.macro.f1 - macro)});
    }

    auto row = [](std::string id, bool ta, bool tb, bool pa, bool pb) {
        PatientResult r;
        r.patient_id = std::move(id);
        r.truth = {{"A", ta}, {"B", tb}};
        r.final.labels = {{"A", pa}, {"B", pb}};
        return r;
    };
    const std::vector<PatientResult> two = {row("1", true, true, true, false), row("2", true, false, true, true)};
    const auto m = micro_macro_metrics(confusion_counts(two, {"A", "B"}));
    const bool example = m.micro.f1 == 2.0 / 3.0 && m.macro.f1 == 0.5;
    return (worst <= 1e-12 && example ? pass : fail)("200 instances, max deviation " + fmt_sci(worst)
                                                     + ", two-sample micro " + fmt(m.micro.f1, 6) + " macro "
                                                     + fmt(m.macro.f1, 6));
}

// ---------------------------------------------------------------------------

RunConfig synthetic_config(const std::string& scratch, const std::string& file, std::vector<std::string> overrides = {})
{
    const auto dir = fixture::scratch_dir("acceptance_" + scratch);
    overrides.push_back("run.trace=" + (dir / "trace.jsonl").string());
    overrides.push_back("run.metrics=" + (dir / "metrics.json").string());
    return load_config(fixture::synthetic_dir() / file, overrides);
}

Outcome end_to_end()
{
    const auto t0 = Clock::now();
    std::size_t patients = 0, disagreements = 0, failed = 0, images = 0, findings = 0;
    for (const auto* file : {"config.toml", "config_single_label.toml"})
    {
        const auto run = prepare_run(synthetic_config(std::string("e2e_") + file, file));
        if (images == 0)
        {
            images = run.manifest.patients.size();
            for (const auto& d : run.guidelines.diseases)
                findings += d.findings.size();
        }
        const auto rs = execute_run(run, false);
        failed += rs.failed;
        for (const auto& r : rs.results)
        {
            ++patients;
            for (const auto& [label, truth] : r.truth)
                disagreements += r.final.get(label) != truth;
            if (run.config.task_mode == TaskMode::single_label)
            {
                std::size_t positives = 0;
                for (const auto& [label, value] : r.final.labels)
                    positives += value;
                disagreements += positives != 1;
            }
        }
    }
    const double elapsed = seconds_since(t0);
    const std::string detail = std::to_string(images) + " images x " + std::to_string(findings) + " findings, "
                               + std::to_string(patients) + " patient runs over both modes, "
                               + std::to_string(disagreements) + " disagreements, " + std::to_string(failed)
                               + " failures, " + fmt(elapsed) + " s";
    return disagreements == 0 && failed == 0 && patients == 2 * images && elapsed < 10.0 ? pass(detail) : fail(detail);
}

Outcome no_finding_rule()
{
    const std::vector<std::string> names = {"D1", "D2", "D3", "D4", "D5", "D6", "No Finding"};
    int mismatches = 0;
    for (unsigned mask = 0; mask < 64; ++mask)
    {
        std::vector<std::pair<std::string, bool>> labels;
        bool any = false;
        for (unsigned i = 0; i < 6; ++i)
        {
            const bool v = (mask >> i) & 1u;
            labels.emplace_back(names[i], v);
            any = any || v;
        }
        labels.emplace_back(names[6], mask % 2 == 0);
        apply_no_finding_rule(labels, std::string("No Finding"));
        mismatches += labels[6].second != !any;
    }
    return (mismatches == 0 ? pass : fail)("64 combinations, " + std::to_string(mismatches) + " mismatches");
}

Outcome single_label_totality()
{
    std::mt19937_64 rng(2718);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int violations = 0, empty_sets = 0, full_sets = 0;
    for (int iter = 0; iter < 500; ++iter)
    {
        const std::size_t n = 1 + rng() % 8;
        std::vector<std::string> conds;
        for (std::size_t i = 0; i < n; ++i)
            conds.push_back("C" + std::to_string(i));
        // Force the empty and full approval sets regularly.
        const int shape = iter % 5;
        std::map<std::string, double> scores;
        std::vector<DiagnosisResult> diagnoses;
        std::size_t approved = 0;
        for (const auto& c : conds)
        {
            scores[c] = std::round(u(rng) * 5) / 5;
            const bool yes = shape == 0 ? false : shape == 1 ? true : rng() % 2 == 0;
            approved += yes;
            diagnoses.push_back({c, yes, "", 1, false});
        }
        empty_sets += approved == 0;
        full_sets += approved == n;
        RefinementConfig cfg;
        cfg.task_mode = TaskMode::single_label;
        auto all = conds;
        if (rng() % 2)
        {
            cfg.no_finding_label = "No Finding";
            all.push_back("No Finding");
        }
        const auto pred = prediction_from_diagnoses(diagnoses, all, scores, cfg);
        std::size_t positives = 0;
        for (const auto& [label, value] : pred.labels)
            positives += value;
        violations += positives != 1 || !pred.single_label_choice || pred.get(*pred.single_label_choice) != true;
    }
    return (violations == 0 ? pass : fail)("500 sets (" + std::to_string(empty_sets) + " empty, "
                                           + std::to_string(full_sets) + " full), " + std::to_string(violations)
                                           + " without exactly one label");
}

// ---------------------------------------------------------------------------

struct CliRun
{
    int code;
    std::string out;
    std::string err;
};

CliRun cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "magda");
    std::vector<char*> argv;
    for (auto& a : args)
        argv.push_back(a.data());
    std::ostringstream out, err;
    const int code = cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::vector<std::string> stripped_lines(const fs::path& path)
{
    std::ifstream in(path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        lines.push_back(strip_volatile(json::parse(line)).dump());
    return lines;
}

Outcome determinism()
{
    std::vector<std::vector<std::string>> traces;
    std::vector<std::string> metrics;
    for (int i = 0; i < 2; ++i)
    {
        const auto dir = fixture::scratch_dir("acceptance_determinism_" + std::to_string(i));
        const auto r = cli({"run", "--config", (fixture::synthetic_dir() / "config.toml").string(), "--set",
                            "run.trace=" + (dir / "trace.jsonl").string(), "--set",
                            "run.metrics=" + (dir / "metrics.json").string(), "--set", "run.temperature=0"});
        if (r.code != 0)
            return fail("run " + std::to_string(i) + " exited " + std::to_string(r.code) + ": " + r.err);
        traces.push_back(stripped_lines(dir / "trace.jsonl"));
        metrics.push_back(fixture::read_file(dir / "metrics.json"));
    }
    const bool same = traces[0] == traces[1] && metrics[0] == metrics[1];
    return (same ? pass : fail)(std::to_string(traces[0].size()) + " trace records, traces "
                                + (traces[0] == traces[1] ? "identical" : "DIFFER") + ", metrics "
                                + (metrics[0] == metrics[1] ? "identical" : "DIFFER"));
}

std::vector<std::string> table_lines(const std::string& out)
{
    std::vector<std::string> lines;
    for (auto& l : text::split_lines(out))
        if (!text::trim(l).empty() && l.rfind("Metrics:", 0) != 0)
            lines.push_back(l);
    return lines;
}

std::vector<std::string> words(const std::string& line)
{
    std::istringstream in(line);
    std::vector<std::string> out;
    for (std::string w; in >> w;)
        out.push_back(w);
    return out;
}

Outcome ablation_axes()
{
    const auto dir = fixture::synthetic_dir() / "ablation";
    const auto neg = cli({"ablate", "--config", (dir / "negation_naive.toml").string(), (dir / "negation_llm.toml").string()});
    const auto ref = cli({"ablate", "--config", (dir / "cot_true_dg_true.toml").string(), (dir / "cot_false_dg_false.toml").string(),
                          (dir / "cot_true_dg_false.toml").string(), (dir / "cot_false_dg_true.toml").string()});
    if (neg.code != 0 || ref.code != 0)
        return fail("ablate exited " + std::to_string(neg.code) + "/" + std::to_string(ref.code) + ": " + neg.err + ref.err);

    const auto n = table_lines(neg.out);
    const auto r = table_lines(ref.out);
    bool ok = n.size() == 4 && r.size() == 6;
    if (ok)
    {
        ok = words(n[0]) == std::vector<std::string> {"F1-score"}
             && words(n[1]) == std::vector<std::string> {"CLIP", "prompting", "micro", "macro"}
             && n[2].rfind("Naive negation", 0) == 0 && n[3].rfind("LLM negation", 0) == 0
             && words(n[2]).size() == 4 && words(n[3]).size() == 4;
        ok = ok && words(r[0]) == std::vector<std::string> {"F1-score"}
             && words(r[1]) == std::vector<std::string> {"CoT", "DG", "micro", "macro"};
        const std::vector<std::pair<std::string, std::string>> order = {{"×", "×"}, {"×", "✓"}, {"✓", "×"}, {"✓", "✓"}};
        for (std::size_t i = 0; ok && i < 4; ++i)
        {
            const auto w = words(r[2 + i]);
            ok = w.size() == 4 && w[0] == order[i].first && w[1] == order[i].second;
        }
    }
    const bool stages = neg.out.find("before refinement") != std::string::npos
                        && ref.out.find("after refinement") != std::string::npos;
    return (ok && stages ? pass : fail)("negation table " + std::to_string(n.size()) + " lines, refinement table "
                                        + std::to_string(r.size()) + " lines, axes "
                                        + (ok ? "match" : "DO NOT match") + ", stages "
                                        + (stages ? "labelled" : "unlabelled"));
}

// ---------------------------------------------------------------------------

Outcome live_smoke()
{
    const char* url = std::getenv("MAGDA_LIVE_LLM_URL");
    const char* model = std::getenv("MAGDA_LIVE_LLM_MODEL");
    if (!url || !*url || !model || !*model)
        return {Outcome::Status::skip, "set MAGDA_LIVE_LLM_URL and MAGDA_LIVE_LLM_MODEL to run"};

    const auto dir = fixture::scratch_dir("acceptance_live");
    const auto manifest = text::split_lines(fixture::read_file(fixture::synthetic_dir() / "manifest.csv"));
    fixture::write_file(dir / "manifest.csv", manifest.at(0) + "\n" + manifest.at(1) + "\n");

    const auto r = cli({"run", "--config", (fixture::synthetic_dir() / "config.toml").string(), "--set",
                        "run.trace=" + (dir / "trace.jsonl").string(), "--set",
                        "run.metrics=" + (dir / "metrics.json").string(), "--set",
                        "dataset.manifest=" + (dir / "manifest.csv").string(), "--set", "llm.backend=http", "--set",
                        std::string("llm.base_url=") + url, "--set", std::string("llm.model=") + model, "--set",
                        "run.parallelism=1"});
    if (r.code != 0)
        return fail("run exited " + std::to_string(r.code) + ": " + r.err);

    TraceContents trace;
    try
    {
        trace = read_trace(dir / "trace.jsonl");
    }
    catch (const Error& e)
    {
        return fail(std::string("trace unreadable: ") + e.what());
    }
    bool screening = false, diagnosis = false, refinement = false, result = false;
    for (const auto& rec : trace.records)
    {
        const auto kind = rec.value("kind", "");
        const auto stage = rec.value("stage", "");
        screening = screening || (kind == "stage_result" && stage == "screening");
        diagnosis = diagnosis || (kind == "stage_result" && stage == "diagnosis");
        refinement = refinement || (kind == "completion" && stage == "refinement");
        result = result || kind == "patient_result";
    }
    const bool ok = !trace.truncated && screening && diagnosis && refinement && result;
    return (ok ? pass : fail)(std::to_string(trace.records.size()) + " trace records; screening "
                              + (screening ? "yes" : "no") + ", diagnosis " + (diagnosis ? "yes" : "no")
                              + ", refinement " + (refinement ? "yes" : "no") + ", result " + (result ? "yes" : "no"));
}

} // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"parser_suite", parser_suite},
        {"scoring_suite", scoring_suite},
        {"metric_oracle", metric_oracle},
        {"end_to_end_oracle_world", end_to_end},
        {"no_finding_rule", no_finding_rule},
        {"single_label_totality", single_label_totality},
        {"determinism", determinism},
        {"ablation_axes", ablation_axes},
        {"live_backend_smoke", live_smoke},
    };

    int failures = 0;
    for (const auto& [name, check] : criteria)
    {
        Outcome o;
        try
        {
            o = check();
        }
        catch (const std::exception& e)
        {
            o = fail(std::string("threw: ") + e.what());
        }
        const char* tag = o.status == Outcome::Status::pass ? "PASS" : o.status == Outcome::Status::fail ? "FAIL" : "SKIP";
        failures += o.status == Outcome::Status::fail;
        std::cout << tag << " " << name << ": " << o.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
