// SPDX-License-Identifier: Apache-2.0
#include "magda/pipeline.hpp"

#include "magda/error.hpp"
#include "magda/text.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace magda {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Manifest

namespace {

// RFC 4180 style: quoted fields may contain commas, doubled quotes and line
// breaks. Returns rows with the 1-based line each row starts on.
std::vector<std::pair<std::size_t, std::vector<std::string>>> read_csv(std::string_view csv)
{
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t line = 1;
    std::size_t row_line = 1;

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        const bool blank = row.size() == 1 && text::trim(row[0]).empty();
        if (!blank)
            rows.emplace_back(row_line, std::move(row));
        row.clear();
        row_line = line;
    };

    for (std::size_t i = 0; i < csv.size(); ++i)
    {
        const char c = csv[i];
        if (quoted)
        {
            if (c == '"')
            {
                if (i + 1 < csv.size() && csv[i + 1] == '"')
                {
                    field += '"';
                    ++i;
                }
                else
                    quoted = false;
            }
            else
            {
                if (c == '\n')
                    ++line;
                field += c;
            }
            continue;
        }
        if (c == '"' && !field_started)
        {
            quoted = true;
            field_started = true;
        }
        else if (c == ',')
            end_field();
        else if (c == '\r')
            continue;
        else if (c == '\n')
        {
            ++line;
            end_row();
        }
        else
        {
            field += c;
            field_started = true;
        }
    }
    if (quoted)
        throw ManifestError("unterminated quoted field starting near line " + std::to_string(row_line));
    if (!row.empty() || !field.empty())
        end_row();
    return rows;
}

std::optional<bool> parse_label_cell(const std::string& raw, std::size_t line, const std::string& column)
{
    const auto cell = text::trim(raw);
    if (cell.empty())
        return std::nullopt;
    double v = 0;
    try
    {
        std::size_t used = 0;
        v = std::stod(cell, &used);
        if (used != cell.size())
            throw std::invalid_argument(cell);
    }
    catch (const std::exception&)
    {
        throw ManifestError("line " + std::to_string(line) + ", column '" + column + "': invalid label value '" + cell
                            + "'");
    }
    if (v == 1.0)
        return true;
    if (v == 0.0)
        return false;
    if (v == -1.0)
        return std::nullopt;
    throw ManifestError("line " + std::to_string(line) + ", column '" + column + "': label value must be 0, 1 or empty");
}

} // namespace

Manifest parse_manifest(std::string_view csv, const GuidelineSet& guidelines)
{
    if (csv.substr(0, 3) == "\xEF\xBB\xBF")
        csv.remove_prefix(3);
    const auto rows = read_csv(csv);
    if (rows.empty())
        throw ManifestError("manifest is empty");

    const auto& header = rows.front().second;
    if (header.size() < 2 || text::trim(header[0]) != "patient_id" || text::trim(header[1]) != "image_ref")
        throw ManifestError("header must start with patient_id,image_ref");

    Manifest m;
    for (std::size_t i = 2; i < header.size(); ++i)
    {
        const auto name = text::trim(header[i]);
        std::string canonical;
        if (const auto* d = guidelines.find(name))
            canonical = d->name;
        else if (guidelines.no_finding_label && text::iequals(*guidelines.no_finding_label, name))
            canonical = *guidelines.no_finding_label;
        else
            throw ManifestError("label column '" + name + "' is neither a guideline disease nor the no-finding label");
        if (std::find(m.labels.begin(), m.labels.end(), canonical) != m.labels.end())
            throw ManifestError("duplicate label column '" + name + "'");
        m.labels.push_back(canonical);
    }

    std::set<std::string> seen;
    for (std::size_t r = 1; r < rows.size(); ++r)
    {
        const auto& [line, cells] = rows[r];
        if (cells.size() != header.size())
            throw ManifestError("line " + std::to_string(line) + ": expected " + std::to_string(header.size())
                                + " fields, found " + std::to_string(cells.size()));
        PatientRecord p;
        p.id = text::trim(cells[0]);
        p.image_ref = text::trim(cells[1]);
        if (p.id.empty())
            throw ManifestError("line " + std::to_string(line) + ": empty patient_id");
        if (p.image_ref.empty())
            throw ManifestError("line " + std::to_string(line) + ": empty image_ref");
        if (!seen.insert(p.id).second)
            throw ManifestError("duplicate patient id '" + p.id + "'");
        for (std::size_t i = 2; i < cells.size(); ++i)
            if (auto v = parse_label_cell(cells[i], line, m.labels[i - 2]))
                p.true_labels[m.labels[i - 2]] = *v;
        m.patients.push_back(std::move(p));
    }
    return m;
}

Manifest load_manifest(const fs::path& path, const GuidelineSet& guidelines)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FileNotFound(path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str(), guidelines);
}

std::vector<std::string> build_condition_list(const Manifest& manifest, const GuidelineSet& guidelines)
{
    std::vector<std::string> out = manifest.labels;
    auto has = [&](const std::string& l) { return std::find(out.begin(), out.end(), l) != out.end(); };
    for (const auto& d : guidelines.diseases)
        if (!has(d.name))
            out.push_back(d.name);
    if (guidelines.no_finding_label && !has(*guidelines.no_finding_label))
        out.push_back(*guidelines.no_finding_label);
    return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json prediction_json(const FinalPrediction& p)
{
    json labels = json::array();
    for (const auto& [name, value] : p.labels)
        labels.push_back({{"label", name}, {"value", value}});
    return {{"labels", labels},
            {"single_label_choice", p.single_label_choice ? json(*p.single_label_choice) : json(nullptr)},
            {"reasoning", p.per_disease_reasoning},
            {"flags", p.flags}};
}

FinalPrediction prediction_from_json(const json& j)
{
    FinalPrediction p;
    for (const auto& l : j.at("labels"))
        p.labels.emplace_back(l.at("label").get<std::string>(), l.at("value").get<bool>());
    if (!j.at("single_label_choice").is_null())
        p.single_label_choice = j.at("single_label_choice").get<std::string>();
    p.per_disease_reasoning = j.at("reasoning").get<std::map<std::string, std::string>>();
    p.flags = j.at("flags").get<std::vector<std::string>>();
    return p;
}

json observation_json(const FindingObservation& o)
{
    return {{"positive", o.probe.positive},
            {"negative", o.probe.negative},
            {"p_positive", o.p_positive},
            {"verdict", to_string(o.verdict)},
            {"s_pos", o.s_pos},
            {"s_neg", o.s_neg ? json(*o.s_neg) : json(nullptr)}};
}

FindingObservation observation_from_json(const json& j)
{
    FindingObservation o;
    o.probe = {j.at("positive").get<std::string>(), j.at("negative").get<std::string>()};
    o.p_positive = j.at("p_positive").get<double>();
    o.verdict = verdict_from_string(j.at("verdict").get<std::string>());
    o.s_pos = j.at("s_pos").get<double>();
    if (!j.at("s_neg").is_null())
        o.s_neg = j.at("s_neg").get<double>();
    return o;
}

json transcript_json(const ScreeningTranscript& t)
{
    json turns = json::array();
    for (const auto& s : t.turns)
        turns.push_back({{"kind", s.kind == TranscriptSegment::Kind::generated ? "generated" : "injected"},
                         {"text", s.text}});
    json observations = json::array();
    for (const auto& o : t.observations)
        observations.push_back(observation_json(o));
    json calls = json::array();
    for (const auto& c : t.calls)
        calls.push_back({{"positive", c.positive}, {"negative", c.negative}, {"span", {c.span_begin, c.span_end}}});
    return {{"disease", t.disease},
            {"turns", turns},
            {"observations", observations},
            {"calls", calls},
            {"parse_failures", t.parse_failures},
            {"stop_reason", t.stop_reason}};
}

ScreeningTranscript transcript_from_json(const json& j)
{
    ScreeningTranscript t;
    t.disease = j.at("disease").get<std::string>();
    for (const auto& s : j.at("turns"))
        t.turns.push_back({s.at("kind") == "generated" ? TranscriptSegment::Kind::generated
                                                       : TranscriptSegment::Kind::injected,
                           s.at("text").get<std::string>()});
    for (const auto& o : j.at("observations"))
        t.observations.push_back(observation_from_json(o));
    for (const auto& c : j.at("calls"))
        t.calls.push_back({c.at("positive").get<std::string>(), c.at("negative").get<std::string>(),
                           c.at("span").at(0).get<std::size_t>(), c.at("span").at(1).get<std::size_t>()});
    t.parse_failures = j.at("parse_failures").get<std::vector<std::string>>();
    t.stop_reason = j.at("stop_reason").get<std::string>();
    return t;
}

json diagnosis_json(const DiagnosisResult& d)
{
    return {{"disease", d.disease},
            {"prediction", d.prediction},
            {"reasoning", d.reasoning},
            {"parse_attempts", d.parse_attempts},
            {"fallback", d.fallback}};
}

DiagnosisResult diagnosis_from_json(const json& j)
{
    DiagnosisResult d;
    d.disease = j.at("disease").get<std::string>();
    d.prediction = j.at("prediction").get<bool>();
    d.reasoning = j.at("reasoning").get<std::string>();
    d.parse_attempts = j.at("parse_attempts").get<int>();
    d.fallback = j.at("fallback").get<bool>();
    return d;
}

} // namespace

json to_json(const PatientResult& r)
{
    json per_disease = json::array();
    for (const auto& d : r.per_disease)
        per_disease.push_back({{"screening", transcript_json(d.screening)}, {"diagnosis", diagnosis_json(d.diagnosis)}});
    return {{"patient_id", r.patient_id},
            {"truth", r.truth},
            {"final", prediction_json(r.final)},
            {"pre_refinement", prediction_json(r.pre_refinement)},
            {"per_disease", per_disease},
            {"scores", r.scores},
            {"timing",
             {{"screening_ms", r.timing.screening_ms},
              {"diagnosis_ms", r.timing.diagnosis_ms},
              {"refinement_ms", r.timing.refinement_ms},
              {"total_ms", r.timing.total_ms}}},
            {"error", r.error ? json(*r.error) : json(nullptr)},
            {"flags", r.flags}};
}

PatientResult patient_result_from_json(const json& j)
{
    try
    {
        PatientResult r;
        r.patient_id = j.at("patient_id").get<std::string>();
        r.truth = j.at("truth").get<std::map<std::string, bool>>();
        r.final = prediction_from_json(j.at("final"));
        r.pre_refinement = prediction_from_json(j.at("pre_refinement"));
        for (const auto& d : j.at("per_disease"))
            r.per_disease.push_back({transcript_from_json(d.at("screening")), diagnosis_from_json(d.at("diagnosis"))});
        r.scores = j.at("scores").get<std::map<std::string, double>>();
        if (j.contains("timing"))
        {
            const auto& t = j.at("timing");
            r.timing = {t.at("screening_ms").get<double>(), t.at("diagnosis_ms").get<double>(),
                        t.at("refinement_ms").get<double>(), t.at("total_ms").get<double>()};
        }
        if (!j.at("error").is_null())
            r.error = j.at("error").get<std::string>();
        r.flags = j.at("flags").get<std::vector<std::string>>();
        return r;
    }
    catch (const json::exception& e)
    {
        throw ParseError(0, std::string("malformed patient result: ") + e.what());
    }
}

json strip_volatile(const json& value)
{
    if (value.is_object())
    {
        json out = json::object();
        for (const auto& [k, v] : value.items())
            if (k != "timestamp" && k != "timing")
                out[k] = strip_volatile(v);
        return out;
    }
    if (value.is_array())
    {
        json out = json::array();
        for (const auto& v : value)
            out.push_back(strip_volatile(v));
        return out;
    }
    return value;
}

// ---------------------------------------------------------------------------
// Orchestration

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start)
{
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

double mean_p_positive(const ScreeningTranscript& t)
{
    if (t.observations.empty())
        return 0.0;
    double sum = 0;
    for (const auto& o : t.observations)
        sum += o.p_positive;
    return sum / static_cast<double>(t.observations.size());
}

DiagnosisResult fallback_diagnosis(const std::string& disease)
{
    DiagnosisResult d;
    d.disease = disease;
    d.fallback = true;
    return d;
}

} // namespace

PatientResult diagnose_patient(const PatientRecord& patient, const PipelineContext& ctx, PatientTrace& trace)
{
    if (!ctx.llm || !ctx.embedder)
        throw PreconditionError("pipeline context has no backends");
    if (ctx.guidelines.diseases.empty())
        throw PreconditionError("guideline set is empty");

    const auto start = Clock::now();
    PatientResult r;
    r.patient_id = patient.id;
    r.truth = patient.true_labels;

    // Diseases in condition-list order so traces follow the label order.
    std::vector<const Disease*> diseases;
    for (const auto& c : ctx.condition_list)
        if (const auto* d = ctx.guidelines.find(c))
            diseases.push_back(d);

    std::size_t backend_failures = 0;
    std::vector<DiagnosisResult> diagnoses;
    for (const auto* disease : diseases)
    {
        DiseaseOutcome outcome;
        bool screened = true;
        auto t0 = Clock::now();
        try
        {
            outcome.screening = run_screening(patient, *disease, ctx.screening, *ctx.llm, *ctx.embedder, trace);
        }
        catch (const ScreeningFailed& e)
        {
            outcome.screening = e.transcript();
            screened = false;
            if (e.backend_failure())
                ++backend_failures;
            r.flags.push_back("screening_failed:" + disease->name);
        }
        r.timing.screening_ms += ms_since(t0);

        t0 = Clock::now();
        if (screened)
        {
            try
            {
                outcome.diagnosis =
                    run_diagnosis(outcome.screening.observations, disease->name, ctx.diagnosis, *ctx.llm, trace);
                if (outcome.diagnosis.fallback)
                    r.flags.push_back("diagnosis_fallback:" + disease->name);
            }
            catch (const BackendError& e)
            {
                ++backend_failures;
                outcome.diagnosis = fallback_diagnosis(disease->name);
                r.flags.push_back("diagnosis_failed:" + disease->name);
                trace.record(TraceKind::parse_event, disease->name,
                             {{"stage", "diagnosis"}, {"event", "backend_failure"}, {"reason", e.what()}});
            }
        }
        else
        {
            outcome.diagnosis = fallback_diagnosis(disease->name);
            trace.record(TraceKind::parse_event, disease->name,
                         {{"stage", "diagnosis"}, {"event", "skipped_after_screening_failure"}});
        }
        r.timing.diagnosis_ms += ms_since(t0);

        r.scores[disease->name] = mean_p_positive(outcome.screening);
        diagnoses.push_back(outcome.diagnosis);
        r.per_disease.push_back(std::move(outcome));
    }

    r.pre_refinement = prediction_from_diagnoses(diagnoses, ctx.condition_list, r.scores, ctx.refinement.config);

    if (backend_failures == diseases.size())
    {
        r.error = "every disease failed on a backend";
        r.final = r.pre_refinement;
    }
    else
    {
        const auto t0 = Clock::now();
        try
        {
            r.final = run_refinement(diagnoses, ctx.condition_list, r.scores, ctx.refinement, *ctx.llm, trace);
        }
        catch (const BackendError& e)
        {
            r.final = r.pre_refinement;
            r.flags.push_back("refinement_failed");
            trace.record(TraceKind::parse_event, std::nullopt,
                         {{"stage", "refinement"}, {"event", "backend_failure"}, {"reason", e.what()}});
        }
        r.timing.refinement_ms = ms_since(t0);
    }
    r.timing.total_ms = ms_since(start);
    return r;
}

namespace {

std::map<std::string, PatientResult> completed_patients(const fs::path& trace_path, const std::string& config_hash)
{
    std::map<std::string, PatientResult> done;
    if (!fs::exists(trace_path))
        return done;
    const auto contents = read_trace(trace_path);
    bool header_seen = false;
    for (const auto& rec : contents.records)
    {
        const auto kind = rec.value("kind", "");
        if (kind == "run_header" && !header_seen)
        {
            header_seen = true;
            if (rec.value("config_hash", "") != config_hash)
                throw ConfigError("run.trace", "existing trace was written with a different configuration (hash "
                                                   + rec.value("config_hash", "?") + ", now " + config_hash + ")");
        }
        else if (kind == "patient_result" && rec.contains("result"))
        {
            // Failed patients are run again.
            auto r = patient_result_from_json(rec.at("result"));
            if (r.error)
                done.erase(r.patient_id);
            else
                done.insert_or_assign(r.patient_id, std::move(r));
        }
    }
    if (!header_seen && !contents.records.empty())
        throw ConfigError("run.trace", "existing trace has no run header");
    return done;
}

} // namespace

ResultSet run_dataset(const Manifest& manifest, const PipelineContext& ctx, const RunOptions& options)
{
    const auto n = manifest.patients.size();
    std::map<std::string, PatientResult> done;
    bool append = false;
    if (options.resume && options.trace_path && fs::exists(*options.trace_path))
    {
        done = completed_patients(*options.trace_path, options.config_hash);
        append = !read_trace(*options.trace_path).records.empty();
    }

    std::optional<TraceWriter> writer;
    if (options.trace_path)
    {
        writer.emplace(*options.trace_path, append);
        if (!append)
            writer->write_header(options.header);
    }

    std::vector<std::optional<PatientResult>> slots(n);
    std::atomic<std::size_t> next {0};
    std::mutex error_mutex;
    std::exception_ptr writer_error;

    auto worker = [&] {
        while (true)
        {
            const auto i = next.fetch_add(1);
            if (i >= n)
                return;
            const auto& patient = manifest.patients[i];
            try
            {
                if (auto it = done.find(patient.id); it != done.end())
                {
                    slots[i] = it->second;
                    if (writer)
                        writer->skip(i);
                    continue;
                }
                PatientTrace trace(patient.id);
                PatientResult result;
                try
                {
                    result = diagnose_patient(patient, ctx, trace);
                }
                catch (const std::exception& e)
                {
                    result = PatientResult {};
                    result.patient_id = patient.id;
                    result.truth = patient.true_labels;
                    result.error = e.what();
                    trace.record(TraceKind::parse_event, std::nullopt,
                                 {{"stage", "pipeline"}, {"event", "patient_failed"}, {"reason", e.what()}});
                }
                trace.record(TraceKind::patient_result, std::nullopt, {{"result", to_json(result)}});
                slots[i] = std::move(result);
                if (writer)
                    writer->commit(i, trace.take());
            }
            catch (...)
            {
                std::lock_guard lock(error_mutex);
                if (!writer_error)
                    writer_error = std::current_exception();
                return;
            }
        }
    };

    const auto workers = static_cast<std::size_t>(std::max(1, options.parallelism));
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, std::max<std::size_t>(n, 1)); ++w)
        pool.emplace_back(worker);
    for (auto& t : pool)
        t.join();
    if (writer_error)
        std::rethrow_exception(writer_error);

    ResultSet out;
    out.results.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
    {
        if (done.count(manifest.patients[i].id))
            ++out.resumed;
        if (slots[i]->error)
            ++out.failed;
        out.results.push_back(std::move(*slots[i]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prepared runs

json PreparedRun::header() const
{
    auto settings = config.to_flat_json();
    settings.erase("run.trace");
    settings.erase("run.metrics");
    return {{"config", settings},
            {"fingerprint", fingerprint},
            {"config_hash", config_hash},
            {"condition_list", context.condition_list}};
}

PreparedRun prepare_run(const RunConfig& cfg)
{
    require_run_inputs(cfg);
    PreparedRun run;
    run.config = cfg;
    run.guidelines = load_guidelines(*cfg.guidelines_path);
    run.manifest = load_manifest(*cfg.manifest_path, run.guidelines);
    run.backends = make_backends(cfg);

    auto& ctx = run.context;
    ctx.guidelines = run.guidelines;
    ctx.condition_list = build_condition_list(run.manifest, run.guidelines);
    ctx.llm = run.backends.llm.get();
    ctx.embedder = run.backends.embedding.get();

    ctx.screening.negation = cfg.negation;
    ctx.screening.vlm = cfg.vlm;
    ctx.screening.temperature = cfg.temperature;
    ctx.screening.max_tokens = cfg.screening_max_tokens;
    ctx.screening.max_tool_calls = cfg.max_tool_calls;
    ctx.screening.token_budget = cfg.token_budget;
    ctx.screening.max_retries = cfg.max_retries;
    ctx.screening.template_text = read_optional_text(cfg.screening_template, "screening.template");

    ctx.diagnosis.temperature = cfg.temperature;
    ctx.diagnosis.max_tokens = cfg.diagnosis_max_tokens;
    ctx.diagnosis.max_retries = cfg.max_retries;
    ctx.diagnosis.template_text = read_optional_text(cfg.diagnosis_template, "diagnosis.template");

    auto& rc = ctx.refinement.config;
    rc.use_cot = cfg.use_cot;
    rc.include_disease_graph = cfg.include_disease_graph;
    if (cfg.include_disease_graph)
        rc.graph_text = read_optional_text(cfg.graph_path, "refinement.graph_path");
    rc.task_mode = cfg.task_mode;
    rc.no_finding_label = run.guidelines.no_finding_label;
    try
    {
        rc.validate();
    }
    catch (const ValidationError& e)
    {
        throw ConfigError("refinement.graph_path", e.what());
    }
    ctx.refinement.temperature = cfg.temperature;
    ctx.refinement.max_tokens = cfg.refinement_max_tokens;
    ctx.refinement.max_retries = cfg.max_retries;
    ctx.refinement.template_text = read_optional_text(cfg.refinement_template, "refinement.template");

    run.fingerprint = config_fingerprint(cfg, run.backends.llm->describe(), run.backends.embedding->describe());
    run.config_hash = fingerprint_hash(run.fingerprint);
    return run;
}

ResultSet execute_run(const PreparedRun& run, bool resume)
{
    RunOptions opts;
    opts.parallelism = run.config.parallelism;
    opts.trace_path = run.config.trace_path;
    opts.resume = resume;
    opts.header = run.header();
    opts.config_hash = run.config_hash;
    return run_dataset(run.manifest, run.context, opts);
}

} // namespace magda
