// SPDX-License-Identifier: Apache-2.0
#include "magda/evaluation.hpp"

#include "magda/error.hpp"
#include "magda/text.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>
#include <tuple>

namespace magda {

using nlohmann::json;

const LabelCounts* ConfusionCounts::find(std::string_view label) const
{
    for (const auto& [name, c] : per_label)
        if (name == label)
            return &c;
    return nullptr;
}

bool predicted(const PatientResult& result, std::string_view label, EvalStage stage)
{
    const auto& p = stage == EvalStage::final ? result.final : result.pre_refinement;
    return p.get(label).value_or(false);
}

ConfusionCounts confusion_counts(std::span<const PatientResult> results, const std::vector<std::string>& labels,
                                 EvalStage stage)
{
    ConfusionCounts out;
    for (const auto& l : labels)
        out.per_label.emplace_back(l, LabelCounts {});

    for (const auto& r : results)
    {
        bool any = false;
        for (auto& [label, c] : out.per_label)
        {
            auto truth = r.truth.find(label);
            if (truth == r.truth.end())
                continue;
            any = true;
            const bool pred = predicted(r, label, stage);
            if (truth->second)
                ++(pred ? c.tp : c.fn);
            else
                ++(pred ? c.fp : c.tn);
        }
        if (!any && !labels.empty())
            throw MissingGroundTruth("patient '" + r.patient_id + "' has no ground truth for the evaluated labels");
    }
    return out;
}

namespace {

double ratio(double num, double den)
{
    return den == 0.0 ? 0.0 : num / den;
}

} // namespace

Prf prf(const LabelCounts& c)
{
    Prf m;
    m.precision = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    m.recall = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
    m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    return m;
}

MetricReport micro_macro_metrics(const ConfusionCounts& counts)
{
    MetricReport r;
    r.counts = counts;
    LabelCounts sum;
    for (const auto& [label, c] : counts.per_label)
    {
        sum.tp += c.tp;
        sum.fp += c.fp;
        sum.fn += c.fn;
        sum.tn += c.tn;
        const auto m = prf(c);
        r.per_label.emplace_back(label, m);
        r.macro.precision += m.precision;
        r.macro.recall += m.recall;
        r.macro.f1 += m.f1;
    }
    r.micro = prf(sum);
    if (!counts.per_label.empty())
    {
        const auto n = static_cast<double>(counts.per_label.size());
        r.macro.precision /= n;
        r.macro.recall /= n;
        r.macro.f1 /= n;
    }
    return r;
}

double tail_accuracy(std::span<const PatientResult> results, const std::vector<std::string>& tail_labels,
                     EvalStage stage)
{
    std::size_t tail_patients = 0;
    std::size_t correct = 0;
    for (const auto& r : results)
    {
        const auto& p = stage == EvalStage::final ? r.final : r.pre_refinement;
        if (!p.single_label_choice)
            throw NotSingleLabel("patient '" + r.patient_id + "' has no single-label choice");
        std::vector<std::string> positives;
        for (const auto& [label, value] : r.truth)
            if (value)
                positives.push_back(label);
        if (positives.size() != 1)
            throw NotSingleLabel("patient '" + r.patient_id + "' does not have exactly one true label");
        if (std::find(tail_labels.begin(), tail_labels.end(), positives.front()) == tail_labels.end())
            continue;
        ++tail_patients;
        if (*p.single_label_choice == positives.front())
            ++correct;
    }
    if (tail_patients == 0)
        throw EmptyTailSet("no patient belongs to a tail class");
    return static_cast<double>(correct) / static_cast<double>(tail_patients);
}

std::vector<std::string> evaluation_labels(std::span<const PatientResult> results,
                                           const std::vector<std::string>& condition_list,
                                           const std::vector<std::string>& exclude)
{
    std::vector<std::string> out;
    for (const auto& label : condition_list)
    {
        const bool excluded = std::any_of(exclude.begin(), exclude.end(),
                                          [&](const std::string& e) { return text::iequals(e, label); });
        if (excluded)
            continue;
        const bool labelled = std::any_of(results.begin(), results.end(),
                                          [&](const PatientResult& r) { return r.truth.count(label) > 0; });
        if (labelled)
            out.push_back(label);
    }
    return out;
}

ReportFormat report_format_from_string(std::string_view s)
{
    if (s == "text" || s == "text_table" || s == "table")
        return ReportFormat::text_table;
    if (s == "json")
        return ReportFormat::json;
    throw ValidationError("unknown report format '" + std::string(s) + "'");
}

namespace {

json prf_json(const Prf& m)
{
    return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

Prf prf_from_json(const json& j)
{
    return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>()};
}

std::string fixed4(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string percent2(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
    return buf;
}

// Left-aligns `s` in a field of `width` display columns. `display` is the
// number of columns `s` occupies when it holds multi-byte characters.
std::string pad(const std::string& s, std::size_t width, std::size_t display = std::string::npos)
{
    const auto cols = display == std::string::npos ? s.size() : display;
    return s + std::string(width > cols ? width - cols : 0, ' ');
}

std::string rstrip_lines(const std::string& s)
{
    std::string out;
    for (char c : s)
    {
        if (c == '\n')
            while (!out.empty() && out.back() == ' ')
                out.pop_back();
        out += c;
    }
    return out;
}

std::string rpad(const std::string& s, std::size_t width)
{
    return std::string(width > s.size() ? width - s.size() : 0, ' ') + s;
}

} // namespace

json report_to_json(const MetricReport& r)
{
    json per_label = json::array();
    for (std::size_t i = 0; i < r.per_label.size(); ++i)
    {
        const auto& [label, m] = r.per_label[i];
        json entry = prf_json(m);
        entry["label"] = label;
        if (const auto* c = r.counts.find(label))
        {
            entry["tp"] = c->tp;
            entry["fp"] = c->fp;
            entry["fn"] = c->fn;
            entry["tn"] = c->tn;
        }
        per_label.push_back(std::move(entry));
    }
    return {{"schema_version", 1},
            {"stage", r.stage},
            {"n_patients", r.n_patients},
            {"fingerprint", r.fingerprint},
            {"micro", prf_json(r.micro)},
            {"macro", prf_json(r.macro)},
            {"per_label", per_label},
            {"tail_accuracy", r.tail_accuracy ? json(*r.tail_accuracy) : json(nullptr)}};
}

MetricReport report_from_json(const json& j)
{
    try
    {
        if (j.at("schema_version").get<int>() != 1)
            throw ParseError(0, "unsupported report schema_version " + j.at("schema_version").dump());
        MetricReport r;
        r.stage = j.at("stage").get<std::string>();
        r.n_patients = j.at("n_patients").get<std::size_t>();
        r.fingerprint = j.at("fingerprint").get<std::string>();
        r.micro = prf_from_json(j.at("micro"));
        r.macro = prf_from_json(j.at("macro"));
        for (const auto& e : j.at("per_label"))
        {
            const auto label = e.at("label").get<std::string>();
            r.per_label.emplace_back(label, prf_from_json(e));
            if (e.contains("tp"))
                r.counts.per_label.emplace_back(label, LabelCounts {e.at("tp").get<std::uint64_t>(),
                                                                    e.at("fp").get<std::uint64_t>(),
                                                                    e.at("fn").get<std::uint64_t>(),
                                                                    e.at("tn").get<std::uint64_t>()});
        }
        if (!j.at("tail_accuracy").is_null())
            r.tail_accuracy = j.at("tail_accuracy").get<double>();
        return r;
    }
    catch (const json::exception& e)
    {
        throw ParseError(0, std::string("malformed report: ") + e.what());
    }
}

std::string emit_report(const MetricReport& r, ReportFormat format)
{
    if (format == ReportFormat::json)
        return report_to_json(r).dump(2) + "\n";

    std::ostringstream out;
    out << "Patients: " << r.n_patients << "  Stage: " << r.stage;
    if (!r.fingerprint.empty())
        out << "  Config: " << r.fingerprint;
    out << "\n\n";
    out << pad("", 8) << pad("F1-score", 18) << pad("Precision", 18) << "Recall\n";
    out << pad("", 8);
    for (int i = 0; i < 3; ++i)
        out << pad("micro", 9) << pad("macro", 9);
    out << "\n" << pad("", 8);
    for (const auto& [micro, macro] : {std::pair {r.micro.f1, r.macro.f1}, std::pair {r.micro.precision, r.macro.precision},
                                       std::pair {r.micro.recall, r.macro.recall}})
        out << pad(fixed4(micro), 9) << pad(fixed4(macro), 9);
    out << "\n";

    if (!r.per_label.empty())
    {
        std::size_t width = 5;
        for (const auto& [label, m] : r.per_label)
            width = std::max(width, label.size());
        out << "\n" << pad("Label", width + 2) << rpad("TP", 5) << rpad("FP", 5) << rpad("FN", 5) << rpad("TN", 5)
            << rpad("F1", 9) << rpad("Precision", 11) << rpad("Recall", 9) << "\n";
        for (const auto& [label, m] : r.per_label)
        {
            out << pad(label, width + 2);
            if (const auto* c = r.counts.find(label))
                out << rpad(std::to_string(c->tp), 5) << rpad(std::to_string(c->fp), 5)
                    << rpad(std::to_string(c->fn), 5) << rpad(std::to_string(c->tn), 5);
            else
                out << std::string(20, ' ');
            out << rpad(fixed4(m.f1), 9) << rpad(fixed4(m.precision), 11) << rpad(fixed4(m.recall), 9) << "\n";
        }
    }
    if (r.tail_accuracy)
        out << "\nTail accuracy: " << fixed4(*r.tail_accuracy) << "\n";
    return rstrip_lines(out.str());
}

MetricReport parse_report_json(std::string_view document)
{
    json j;
    try
    {
        j = json::parse(document);
    }
    catch (const json::parse_error& e)
    {
        throw ParseError(0, std::string("report is not valid JSON: ") + e.what());
    }
    return report_from_json(j);
}

LoadedTrace load_trace_results(const std::filesystem::path& path)
{
    const auto contents = read_trace(path);
    LoadedTrace out;
    out.truncated = contents.truncated;
    std::vector<std::string> order;
    std::map<std::string, PatientResult> latest;
    for (const auto& rec : contents.records)
    {
        const auto kind = rec.value("kind", "");
        if (kind == "run_header" && out.header.is_null())
            out.header = rec;
        else if (kind == "patient_result" && rec.contains("result"))
        {
            auto r = patient_result_from_json(rec.at("result"));
            if (!latest.count(r.patient_id))
                order.push_back(r.patient_id);
            latest.insert_or_assign(r.patient_id, std::move(r));
        }
    }
    for (const auto& id : order)
        out.results.push_back(std::move(latest.at(id)));
    return out;
}

MetricReport evaluate(std::span<const PatientResult> results, const std::vector<std::string>& condition_list,
                      const EvaluationOptions& options, std::string fingerprint)
{
    const auto labels = evaluation_labels(results, condition_list, options.exclude_labels);
    auto report = micro_macro_metrics(confusion_counts(results, labels, options.stage));
    report.n_patients = results.size();
    report.fingerprint = std::move(fingerprint);
    report.stage = std::string(to_string(options.stage));
    if (!options.tail_labels.empty())
        report.tail_accuracy = tail_accuracy(results, options.tail_labels, options.stage);
    return report;
}

std::string emit_ablation_table(std::vector<AblationRow> rows)
{
    if (rows.empty())
        return {};
    std::set<NegationMode> negations;
    std::set<std::pair<bool, bool>> refinements;
    for (const auto& r : rows)
    {
        negations.insert(r.negation);
        refinements.insert({r.use_cot, r.include_disease_graph});
    }
    const bool show_negation = negations.size() > 1 || refinements.size() == 1;
    const bool show_refinement = refinements.size() > 1;

    std::stable_sort(rows.begin(), rows.end(), [](const AblationRow& a, const AblationRow& b) {
        const auto key = [](const AblationRow& r) {
            return std::tuple(r.negation == NegationMode::llm, r.use_cot, r.include_disease_graph);
        };
        return key(a) < key(b);
    });

    auto mark = [](bool on) { return std::string(on ? "✓" : "×"); };
    constexpr std::size_t kNeg = 16;
    constexpr std::size_t kFlag = 5;
    constexpr std::size_t kNum = 8;

    std::ostringstream out;
    std::size_t lead = 0;
    if (show_negation)
        lead += kNeg;
    if (show_refinement)
        lead += 2 * kFlag;
    // "F1-score" heads both numeric columns.
    out << pad("", lead) << "F1-score\n";
    if (show_negation)
        out << pad("CLIP prompting", kNeg);
    if (show_refinement)
        out << pad("CoT", kFlag) << pad("DG", kFlag);
    out << pad("micro", kNum) << "macro\n";
    for (const auto& r : rows)
    {
        if (show_negation)
            out << pad(r.negation == NegationMode::naive ? "Naive negation" : "LLM negation", kNeg);
        if (show_refinement)
            out << pad(mark(r.use_cot), kFlag, 1) << pad(mark(r.include_disease_graph), kFlag, 1);
        out << pad(percent2(r.micro.f1), kNum) << percent2(r.macro.f1) << "\n";
    }
    return rstrip_lines(out.str());
}

} // namespace magda
