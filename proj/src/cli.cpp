// SPDX-License-Identifier: Apache-2.0
#include "magda/cli.hpp"

#include "magda/config.hpp"
#include "magda/error.hpp"
#include "magda/evaluation.hpp"
#include "magda/pipeline.hpp"
#include "magda/text.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>

namespace magda::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Runs `body`, turning library errors into a message and the fatal exit code.
template <typename F>
int guarded(std::ostream& err, F&& body)
{
    try
    {
        return body();
    }
    catch (const Error& e)
    {
        err << "error: " << e.what() << "\n";
    }
    catch (const std::exception& e)
    {
        err << "error: unexpected failure: " << e.what() << "\n";
    }
    return kExitFatal;
}

void preflight(const PreparedRun& run)
{
    try
    {
        run.backends.llm->preflight();
        run.backends.embedding->preflight();
    }
    catch (const BackendError& e)
    {
        throw BackendError(std::string("preflight failed: ") + e.what(), e.attempts());
    }
}

bool has_ground_truth(const ResultSet& rs)
{
    for (const auto& r : rs.results)
        if (!r.truth.empty())
            return true;
    return false;
}

void write_file(const fs::path& path, const std::string& content)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw Error("cannot write '" + path.string() + "'");
    f << content;
}

// Report for a finished run. Tail accuracy problems are reported as warnings
// so the rest of the metrics still come out.
MetricReport report_for(std::span<const PatientResult> results, const std::vector<std::string>& condition_list,
                        EvaluationOptions options, const std::string& hash, std::ostream& err)
{
    auto tails = std::move(options.tail_labels);
    options.tail_labels.clear();
    auto report = evaluate(results, condition_list, options, hash);
    if (!tails.empty())
    {
        try
        {
            report.tail_accuracy = tail_accuracy(results, tails, options.stage);
        }
        catch (const Error& e)
        {
            err << "warning: tail accuracy not computed: " << e.what() << "\n";
        }
    }
    return report;
}

EvaluationOptions eval_options(const RunConfig& cfg)
{
    return {cfg.exclude_labels, cfg.tail_labels, cfg.eval_stage};
}

void print_summary(const ResultSet& rs, std::ostream& out)
{
    std::size_t flagged = 0;
    for (const auto& r : rs.results)
        if (!r.flags.empty())
            ++flagged;
    out << "patients: " << rs.results.size() << "  resumed: " << rs.resumed << "  failed: " << rs.failed
        << "  flagged: " << flagged << "\n";
}

} // namespace

int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        const auto cfg = load_config(args.config, args.overrides);
        const auto run = prepare_run(cfg);
        preflight(run);
        const auto rs = execute_run(run, args.resume);
        print_summary(rs, out);
        for (const auto& r : rs.results)
            if (r.error)
                err << "patient " << r.patient_id << " failed: " << *r.error << "\n";

        if (has_ground_truth(rs))
        {
            const auto report = report_for(rs.results, run.context.condition_list, eval_options(cfg), run.config_hash, err);
            out << emit_report(report, ReportFormat::text_table);
            if (cfg.metrics_path)
                write_file(*cfg.metrics_path, emit_report(report, ReportFormat::json));
        }
        return rs.partial() ? kExitPartial : kExitOk;
    });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        if (args.traces.empty())
            throw PreconditionError("eval needs at least one trace");
        const auto format = report_format_from_string(args.format);
        int code = kExitOk;
        std::vector<std::pair<std::string, MetricReport>> reports;
        for (const auto& path : args.traces)
        {
            auto loaded = load_trace_results(path);
            if (loaded.truncated)
            {
                err << "warning: " << path.string() << " is truncated; evaluating the complete records\n";
                code = kExitPartial;
            }
            if (loaded.header.is_null())
                throw ParseError(0, path.string() + " has no run header");

            const auto& settings = loaded.header.at("config");
            EvaluationOptions opts;
            opts.exclude_labels = args.exclude.empty()
                                      ? settings.value("evaluation.exclude_labels", std::vector<std::string> {})
                                      : args.exclude;
            opts.tail_labels = args.tail.empty() ? settings.value("evaluation.tail_labels", std::vector<std::string> {})
                                                 : args.tail;
            opts.stage = eval_stage_from_string(args.stage.value_or(settings.value("evaluation.stage", "final")));
            const auto conditions = loaded.header.at("condition_list").get<std::vector<std::string>>();
            const auto hash = loaded.header.value("config_hash", "");
            auto report = report_for(loaded.results, conditions, opts, hash, err);
            if (args.traces.size() > 1 && format == ReportFormat::text_table)
                out << "== " << path.string() << "\n";
            out << emit_report(report, format);
            reports.emplace_back(path.string(), std::move(report));
        }

        if (reports.size() > 1 && format == ReportFormat::text_table)
        {
            out << "\n" << "Config            micro F1   macro F1   Trace\n";
            for (const auto& [path, r] : reports)
            {
                char line[96];
                std::snprintf(line, sizeof line, "%-16s  %8.4f   %8.4f   ", r.fingerprint.c_str(), r.micro.f1,
                              r.macro.f1);
                out << line << path << "\n";
            }
        }
        return code;
    });
}

namespace {

std::string yes_no(bool v)
{
    return v ? "yes" : "no";
}

void render_record(const json& rec, std::ostream& out, std::string& current_section)
{
    const auto kind = rec.value("kind", "");
    const auto stage = rec.value("stage", "");
    const auto disease = rec.value("disease", "");

    auto section = [&](const std::string& title) {
        if (title != current_section)
        {
            out << "\n== " << title << " ==\n";
            current_section = title;
        }
    };

    if (kind == "tool_call")
    {
        section(disease + ": screening");
        out << "CLIP: " << rec.value("positive", "") << " / " << rec.value("negative", "");
    }
    else if (kind == "stage_result" && stage == "screening_observation")
    {
        const auto& obs = rec.at("observation");
        char prob[32];
        std::snprintf(prob, sizeof prob, "%.4f", obs.value("p_positive", 0.0));
        out << " -> " << obs.value("verdict", "?") << "  (p_positive=" << prob << ")\n";
    }
    else if (kind == "stage_result" && stage == "screening")
    {
        section(disease + ": screening");
        out << "[" << rec.value("observations", 0) << " observations, stop: " << rec.value("stop_reason", "") << "]\n";
    }
    else if (kind == "stage_result" && stage == "diagnosis")
    {
        section(disease + ": diagnosis");
        out << rec.value("reasoning", "") << "\n";
        out << "Prediction: " << yes_no(rec.value("prediction", false));
        if (rec.value("fallback", false))
            out << " (fallback)";
        out << "\n";
    }
    else if (kind == "prompt" && stage == "refinement" && !disease.empty())
    {
        section("refinement");
        out << "Q: " << rec.value("text", "") << "\n";
    }
    else if (kind == "completion" && stage == "refinement")
    {
        section("refinement");
        out << (disease.empty() ? "Acknowledgment: " : "A: ") << rec.value("text", "") << "\n";
    }
    else if (kind == "parse_event")
    {
        if (!disease.empty())
            section(disease + ": " + stage);
        out << "! " << rec.value("event", "event");
        if (rec.contains("reason"))
            out << ": " << rec.value("reason", "");
        out << "\n";
    }
    else if (kind == "patient_result")
    {
        section("final labels");
        const auto& result = rec.at("result");
        for (const auto& l : result.at("final").at("labels"))
            out << l.value("label", "") << ": " << yes_no(l.value("value", false)) << "\n";
        if (!result.at("final").at("single_label_choice").is_null())
            out << "Single-label choice: " << result.at("final").at("single_label_choice").get<std::string>() << "\n";
        if (!result.at("error").is_null())
            out << "Error: " << result.at("error").get<std::string>() << "\n";
    }
}

} // namespace

int cmd_inspect(const fs::path& trace, const std::string& patient_id, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        const auto contents = read_trace(trace);
        std::vector<const json*> records;
        for (const auto& rec : contents.records)
            if (rec.value("patient_id", "") == patient_id)
                records.push_back(&rec);
        if (records.empty())
        {
            if (contents.truncated)
                err << "warning: trace is truncated at line " << contents.bad_line << "\n";
            throw PatientNotFound("patient '" + patient_id + "' not found in " + trace.string());
        }

        out << "Patient " << patient_id << "\n";
        std::string section;
        for (const auto* rec : records)
            render_record(*rec, out, section);

        if (contents.truncated)
        {
            err << "warning: trace is truncated at line " << contents.bad_line << "; output may be incomplete\n";
            return kExitPartial;
        }
        return kExitOk;
    });
}

int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err)
{
    return guarded(err, [&] {
        if (args.configs.size() < 2)
            throw ConfigError("ablate", "needs at least two configs");

        std::vector<PreparedRun> runs;
        for (const auto& path : args.configs)
            runs.push_back(prepare_run(load_config(path, args.overrides)));

        const auto& allowed = ablation_keys();
        const auto& base = runs.front().fingerprint;
        for (std::size_t i = 1; i < runs.size(); ++i)
        {
            for (const auto& [key, value] : runs[i].fingerprint.items())
            {
                if (std::find(allowed.begin(), allowed.end(), key) != allowed.end())
                    continue;
                if (!base.contains(key) || base.at(key) != value)
                    throw ConfigError(key, "differs between " + args.configs.front().string() + " and "
                                               + args.configs[i].string() + "; only ablation settings may differ");
            }
            for (std::size_t j = 0; j < i; ++j)
                if (runs[i].config.trace_path && runs[j].config.trace_path
                    && fs::weakly_canonical(*runs[i].config.trace_path) == fs::weakly_canonical(*runs[j].config.trace_path))
                    throw ConfigError("run.trace", "ablation configs must write distinct trace files");
        }

        std::set<NegationMode> negations;
        std::set<std::pair<bool, bool>> refinements;
        for (const auto& r : runs)
        {
            negations.insert(r.config.negation);
            refinements.insert({r.config.use_cot, r.config.include_disease_graph});
        }
        // Negation is compared before refinement; refinement variants after it.
        const auto stage = refinements.size() == 1 ? EvalStage::diagnosis : EvalStage::final;

        for (const auto& r : runs)
            preflight(r);

        bool partial = false;
        std::vector<AblationRow> rows;
        for (std::size_t i = 0; i < runs.size(); ++i)
        {
            const auto& run = runs[i];
            const auto rs = execute_run(run, false);
            partial = partial || rs.partial();
            auto opts = eval_options(run.config);
            opts.stage = stage;
            opts.tail_labels.clear();
            const auto report = evaluate(rs.results, run.context.condition_list, opts, run.config_hash);
            if (run.config.metrics_path)
                write_file(*run.config.metrics_path, emit_report(report, ReportFormat::json));
            rows.push_back({run.config.negation, run.config.use_cot, run.config.include_disease_graph, report.micro,
                            report.macro, run.config_hash});
            err << "ran " << args.configs[i].string() << " (" << rs.results.size() << " patients, config "
                << run.config_hash << ")\n";
        }
        out << "Metrics: " << (stage == EvalStage::diagnosis ? "before refinement" : "after refinement") << "\n";
        out << emit_ablation_table(rows);
        return partial ? kExitPartial : kExitOk;
    });
}

int cmd_validate(const fs::path& config, const std::vector<std::string>& overrides, std::ostream& out,
                 std::ostream& err)
{
    return guarded(err, [&] {
        const auto cfg = load_config(config, overrides);
        const auto run = prepare_run(cfg);
        preflight(run);
        out << "ok: " << run.guidelines.diseases.size() << " diseases, " << run.manifest.patients.size()
            << " patients, " << run.context.condition_list.size() << " conditions\n";
        out << "conditions: " << text::join(run.context.condition_list, ", ") << "\n";
        out << "llm: " << run.backends.llm->describe() << "\n";
        out << "embedding: " << run.backends.embedding->describe() << "\n";
        out << "config hash: " << run.config_hash << "\n";
        return kExitOk;
    });
}

int main(int argc, char** argv, std::ostream& out, std::ostream& err)
{
    CLI::App app {"Multi-agent guideline-driven zero-shot diagnosis", "magda"};
    app.require_subcommand(1);

    RunArgs run_args;
    std::string run_config;
    auto* run = app.add_subcommand("run", "Run the pipeline over a dataset manifest");
    run->add_option("--config", run_config, "Run config file")->required();
    run->add_option("--set", run_args.overrides, "Override a config key (key=value)")->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    run->add_flag("--resume", run_args.resume, "Skip patients already completed in the trace");

    EvalArgs eval_args;
    std::vector<std::string> eval_traces;
    std::string eval_stage;
    auto* eval = app.add_subcommand("eval", "Compute metrics from one or more traces");
    eval->add_option("--traces", eval_traces, "Trace files")->required();
    eval->add_option("--exclude", eval_args.exclude, "Labels to leave out of the metrics");
    eval->add_option("--tail", eval_args.tail, "Tail-class labels for tail accuracy");
    eval->add_option("--format", eval_args.format, "text or json")->check(CLI::IsMember({"text", "json"}));
    eval->add_option("--stage", eval_stage, "final or diagnosis")->check(CLI::IsMember({"final", "diagnosis"}));

    std::string inspect_trace;
    std::string inspect_patient;
    auto* inspect = app.add_subcommand("inspect", "Print one patient's agent transcript");
    inspect->add_option("--traces", inspect_trace, "Trace file")->required();
    inspect->add_option("--patient", inspect_patient, "Patient id")->required();

    AblateArgs ablate_args;
    std::vector<std::string> ablate_configs;
    auto* ablate = app.add_subcommand("ablate", "Run several configs and compare them");
    ablate->add_option("--config", ablate_configs, "Config files (two or more)")->required();
    ablate->add_option("--set", ablate_args.overrides, "Override applied to every config")->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

    std::string validate_config;
    std::vector<std::string> validate_overrides;
    auto* validate = app.add_subcommand("validate", "Check a config, its inputs and backend reachability");
    validate->add_option("--config", validate_config, "Run config file")->required();
    validate->add_option("--set", validate_overrides, "Override a config key (key=value)")->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitFatal;
    }

    if (*run)
    {
        run_args.config = run_config;
        return cmd_run(run_args, out, err);
    }
    if (*eval)
    {
        eval_args.traces.assign(eval_traces.begin(), eval_traces.end());
        if (!eval_stage.empty())
            eval_args.stage = eval_stage;
        return cmd_eval(eval_args, out, err);
    }
    if (*inspect)
        return cmd_inspect(inspect_trace, inspect_patient, out, err);
    if (*ablate)
    {
        ablate_args.configs.assign(ablate_configs.begin(), ablate_configs.end());
        return cmd_ablate(ablate_args, out, err);
    }
    return cmd_validate(validate_config, validate_overrides, out, err);
}

} // namespace magda::cli
