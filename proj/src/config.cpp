// SPDX-License-Identifier: Apache-2.0
#include "magda/config.hpp"

#include "magda/error.hpp"
#include "magda/prompt_resources.hpp"
#include "magda/text.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace magda {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// TOML subset

namespace {

class Scanner
{
public:
    explicit Scanner(std::string_view s) : s_(s) {}

    bool eof() const { return pos_ >= s_.size(); }
    char peek() const { return eof() ? '\0' : s_[pos_]; }
    std::size_t line() const { return line_; }

    char get()
    {
        const char c = s_[pos_++];
        if (c == '\n')
            ++line_;
        return c;
    }

    [[noreturn]] void fail(const std::string& reason) const { throw ParseError(line_, reason); }

    void skip_inline_ws()
    {
        while (!eof() && (peek() == ' ' || peek() == '\t'))
            get();
    }

    void skip_comment()
    {
        if (peek() == '#')
            while (!eof() && peek() != '\n')
                get();
    }

    // Whitespace, newlines and comments, as allowed between array elements.
    void skip_all_ws()
    {
        while (!eof())
        {
            const char c = peek();
            if (c == ' ' || c == '\t' || c == '\r' || c == '\n')
                get();
            else if (c == '#')
                skip_comment();
            else
                break;
        }
    }

    void expect_eol()
    {
        skip_inline_ws();
        skip_comment();
        if (peek() == '\r')
            get();
        if (eof())
            return;
        if (peek() != '\n')
            fail(std::string("unexpected '") + peek() + "' after value");
        get();
    }

    std::string key()
    {
        std::string out;
        while (!eof())
        {
            const char c = peek();
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')
                out += get();
            else
                break;
        }
        if (out.empty() || out.front() == '.' || out.back() == '.' || out.find("..") != std::string::npos)
            fail("invalid key");
        return out;
    }

    json value()
    {
        const char c = peek();
        if (c == '"')
            return basic_string();
        if (c == '\'')
            return literal_string();
        if (c == '[')
            return array();
        if (c == 't' || c == 'f')
            return boolean();
        if (c == '+' || c == '-' || std::isdigit(static_cast<unsigned char>(c)))
            return number();
        fail("expected a value");
    }

private:
    json basic_string()
    {
        get();
        std::string out;
        while (true)
        {
            if (eof() || peek() == '\n')
                fail("unterminated string");
            char c = get();
            if (c == '"')
                return out;
            if (c != '\\')
            {
                out += c;
                continue;
            }
            if (eof())
                fail("unterminated string");
            c = get();
            switch (c)
            {
            case '"': out += '"'; break;
            case '\\': out += '\\'; break;
            case 'n': out += '\n'; break;
            case 't': out += '\t'; break;
            case 'r': out += '\r'; break;
            default: fail(std::string("unsupported escape \\") + c);
            }
        }
    }

    json literal_string()
    {
        get();
        std::string out;
        while (true)
        {
            if (eof() || peek() == '\n')
                fail("unterminated string");
            const char c = get();
            if (c == '\'')
                return out;
            out += c;
        }
    }

    json array()
    {
        get();
        json out = json::array();
        while (true)
        {
            skip_all_ws();
            if (eof())
                fail("unterminated array");
            if (peek() == ']')
            {
                get();
                return out;
            }
            out.push_back(value());
            skip_all_ws();
            if (peek() == ',')
                get();
            else if (peek() != ']')
                fail("expected ',' or ']' in array");
        }
    }

    json boolean()
    {
        for (std::string_view word : {"true", "false"})
            if (s_.substr(pos_, word.size()) == word && !is_word_char(pos_ + word.size()))
            {
                pos_ += word.size();
                return word == "true";
            }
        fail("expected a value");
    }

    json number()
    {
        const auto start = pos_;
        while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '.' || peek() == '+'
                          || peek() == '-'))
            get();
        std::string token(s_.substr(start, pos_ - start));
        if (!token.empty() && token.front() == '+')
            token.erase(0, 1);
        const bool is_float = token.find_first_of(".eE") != std::string::npos;
        const char* first = token.data();
        const char* last = token.data() + token.size();
        if (is_float)
        {
            double d = 0;
            auto [ptr, ec] = std::from_chars(first, last, d);
            if (ec != std::errc() || ptr != last)
                fail("invalid number '" + token + "'");
            return d;
        }
        long long i = 0;
        auto [ptr, ec] = std::from_chars(first, last, i);
        if (ec != std::errc() || ptr != last)
            fail("invalid number '" + token + "'");
        return i;
    }

    bool is_word_char(std::size_t at) const
    {
        return at < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[at])) || s_[at] == '_');
    }

    std::string_view s_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
};

} // namespace

std::map<std::string, json> parse_toml_subset(std::string_view document)
{
    std::map<std::string, json> out;
    Scanner sc(document);
    std::string section;
    while (true)
    {
        sc.skip_all_ws();
        if (sc.eof())
            break;
        if (sc.peek() == '[')
        {
            sc.get();
            sc.skip_inline_ws();
            section = sc.key();
            sc.skip_inline_ws();
            if (sc.peek() != ']')
                sc.fail("expected ']' after section name");
            sc.get();
            sc.expect_eol();
            continue;
        }
        const auto line = sc.line();
        std::string key = sc.key();
        sc.skip_inline_ws();
        if (sc.peek() != '=')
            sc.fail("expected '=' after key '" + key + "'");
        sc.get();
        sc.skip_inline_ws();
        json v = sc.value();
        sc.expect_eol();
        if (!section.empty())
            key = section + "." + key;
        if (out.count(key))
            throw ParseError(line, "duplicate key '" + key + "'");
        out.emplace(std::move(key), std::move(v));
    }
    return out;
}

json parse_override_value(std::string_view raw)
{
    const auto trimmed = text::trim(raw);
    try
    {
        Scanner sc(trimmed);
        json v = sc.value();
        sc.expect_eol();
        return v;
    }
    catch (const ParseError&)
    {
        return trimmed;
    }
}

// ---------------------------------------------------------------------------
// Schema

std::string_view to_string(EvalStage stage)
{
    return stage == EvalStage::final ? "final" : "diagnosis";
}

EvalStage eval_stage_from_string(std::string_view s)
{
    if (s == "final")
        return EvalStage::final;
    if (s == "diagnosis")
        return EvalStage::diagnosis;
    throw ValidationError("unknown evaluation stage '" + std::string(s) + "'");
}

namespace {

enum class Kind
{
    string,
    path,
    integer,
    real,
    boolean,
    string_list,
};

using OptPath = std::optional<fs::path>;

struct KeySpec
{
    std::string key;
    Kind kind;
    std::function<json(const RunConfig&)> get;
    std::function<void(RunConfig&, const json&)> set;
};

json path_json(const OptPath& p)
{
    return p ? json(p->string()) : json(nullptr);
}

template <typename T>
json opt_json(const std::optional<T>& v)
{
    return v ? json(*v) : json(nullptr);
}

#define MAGDA_FIELD(key, kind, expr)                                                                         \
    KeySpec                                                                                                  \
    {                                                                                                        \
        key, kind, [](const RunConfig& c) { return json(c.expr); }, [](RunConfig& c, const json& v) {        \
            c.expr = v.get<decltype(c.expr)>();                                                              \
        }                                                                                                    \
    }

#define MAGDA_PATH(key, expr)                                                                                \
    KeySpec                                                                                                  \
    {                                                                                                        \
        key, Kind::path, [](const RunConfig& c) { return path_json(c.expr); },                               \
            [](RunConfig& c, const json& v) { c.expr = fs::path(v.get<std::string>()); }                     \
    }

#define MAGDA_ENUM(key, expr, parse)                                                                         \
    KeySpec                                                                                                  \
    {                                                                                                        \
        key, Kind::string, [](const RunConfig& c) { return json(std::string(to_string(c.expr))); },          \
            [](RunConfig& c, const json& v) { c.expr = parse(v.get<std::string>()); }                        \
    }

const std::vector<KeySpec>& schema()
{
    static const std::vector<KeySpec> specs = {
        MAGDA_ENUM("run.task_mode", task_mode, task_mode_from_string),
        MAGDA_FIELD("run.parallelism", Kind::integer, parallelism),
        MAGDA_FIELD("run.max_retries", Kind::integer, max_retries),
        MAGDA_FIELD("run.temperature", Kind::real, temperature),
        MAGDA_PATH("run.trace", trace_path),
        MAGDA_PATH("run.metrics", metrics_path),
        MAGDA_PATH("guidelines.path", guidelines_path),
        MAGDA_PATH("dataset.manifest", manifest_path),
        MAGDA_FIELD("vlm.psi", Kind::real, vlm.psi),
        MAGDA_ENUM("vlm.mode", vlm.mode, vlm_mode_from_string),
        MAGDA_FIELD("vlm.cache_size", Kind::integer, cache_size),
        MAGDA_ENUM("screening.negation_mode", negation, negation_mode_from_string),
        MAGDA_PATH("screening.template", screening_template),
        MAGDA_FIELD("screening.max_tokens", Kind::integer, screening_max_tokens),
        MAGDA_FIELD("screening.max_tool_calls", Kind::integer, max_tool_calls),
        MAGDA_FIELD("screening.token_budget", Kind::integer, token_budget),
        MAGDA_PATH("diagnosis.template", diagnosis_template),
        MAGDA_FIELD("diagnosis.max_tokens", Kind::integer, diagnosis_max_tokens),
        MAGDA_FIELD("refinement.use_cot", Kind::boolean, use_cot),
        MAGDA_FIELD("refinement.include_disease_graph", Kind::boolean, include_disease_graph),
        MAGDA_PATH("refinement.graph_path", graph_path),
        MAGDA_PATH("refinement.template", refinement_template),
        MAGDA_FIELD("refinement.max_tokens", Kind::integer, refinement_max_tokens),
        MAGDA_FIELD("llm.backend", Kind::string, llm.backend),
        MAGDA_PATH("llm.script", llm.script),
        MAGDA_FIELD("llm.base_url", Kind::string, llm.base_url),
        MAGDA_FIELD("llm.model", Kind::string, llm.model),
        MAGDA_FIELD("llm.timeout_s", Kind::real, llm.timeout_s),
        MAGDA_FIELD("llm.assistant_prefill", Kind::boolean, llm.assistant_prefill),
        MAGDA_FIELD("llm.retry_base_ms", Kind::integer, llm.retry_base_ms),
        MAGDA_FIELD("llm.max_attempts", Kind::integer, llm.max_attempts),
        MAGDA_FIELD("embedding.backend", Kind::string, embedding.backend),
        MAGDA_PATH("embedding.world", embedding.world),
        MAGDA_FIELD("embedding.base_url", Kind::string, embedding.base_url),
        MAGDA_FIELD("embedding.dim", Kind::integer, embedding.dim),
        MAGDA_FIELD("embedding.timeout_s", Kind::real, embedding.timeout_s),
        MAGDA_FIELD("evaluation.tail_labels", Kind::string_list, tail_labels),
        MAGDA_FIELD("evaluation.exclude_labels", Kind::string_list, exclude_labels),
        MAGDA_ENUM("evaluation.stage", eval_stage, eval_stage_from_string),
    };
    return specs;
}

#undef MAGDA_FIELD
#undef MAGDA_PATH
#undef MAGDA_ENUM

const KeySpec* find_spec(std::string_view key)
{
    for (const auto& s : schema())
        if (s.key == key)
            return &s;
    return nullptr;
}

// Checks the JSON type of a raw value against the key's kind and normalises
// it (ints accepted for reals, comma lists accepted for string lists).
json coerce(const KeySpec& spec, const json& v, const fs::path& base_dir)
{
    auto bad = [&](const char* expected) {
        return ConfigError(spec.key, std::string("expected ") + expected + ", got " + v.dump());
    };
    switch (spec.kind)
    {
    case Kind::string:
        if (!v.is_string())
            throw bad("a string");
        return v;
    case Kind::path:
    {
        if (!v.is_string() || v.get<std::string>().empty())
            throw bad("a path string");
        fs::path p(v.get<std::string>());
        if (p.is_relative())
            p = base_dir / p;
        return p.lexically_normal().string();
    }
    case Kind::integer:
        if (!v.is_number_integer())
            throw bad("an integer");
        return v;
    case Kind::real:
        if (!v.is_number())
            throw bad("a number");
        return v.get<double>();
    case Kind::boolean:
        if (!v.is_boolean())
            throw bad("true or false");
        return v;
    case Kind::string_list:
    {
        json out = json::array();
        if (v.is_string())
        {
            std::stringstream ss(v.get<std::string>());
            std::string item;
            while (std::getline(ss, item, ','))
                if (auto t = text::trim(item); !t.empty())
                    out.push_back(t);
            return out;
        }
        if (!v.is_array())
            throw bad("a list of strings");
        for (const auto& item : v)
        {
            if (!item.is_string())
                throw bad("a list of strings");
            out.push_back(item);
        }
        return out;
    }
    }
    return v;
}

void check_range(bool ok, const char* key, const std::string& reason)
{
    if (!ok)
        throw ConfigError(key, reason);
}

void validate(const RunConfig& c)
{
    check_range(c.parallelism >= 1, "run.parallelism", "must be at least 1");
    check_range(c.max_retries >= 1, "run.max_retries", "must be at least 1");
    check_range(c.temperature >= 0.0 && c.temperature <= 2.0, "run.temperature", "must be in [0, 2]");
    check_range(c.vlm.psi > 0.0 && c.vlm.psi < 1.0, "vlm.psi", "must be in (0, 1)");
    check_range(c.cache_size >= 0, "vlm.cache_size", "must not be negative");
    check_range(c.screening_max_tokens >= 1, "screening.max_tokens", "must be at least 1");
    check_range(c.max_tool_calls >= 0, "screening.max_tool_calls", "must not be negative");
    check_range(c.token_budget >= 1, "screening.token_budget", "must be at least 1");
    check_range(c.diagnosis_max_tokens >= 1, "diagnosis.max_tokens", "must be at least 1");
    check_range(c.refinement_max_tokens >= 1, "refinement.max_tokens", "must be at least 1");
    check_range(c.llm.backend == "mock" || c.llm.backend == "http", "llm.backend", "must be 'mock' or 'http'");
    check_range(c.llm.timeout_s > 0.0, "llm.timeout_s", "must be positive");
    check_range(c.llm.retry_base_ms >= 0, "llm.retry_base_ms", "must not be negative");
    check_range(c.llm.max_attempts >= 1, "llm.max_attempts", "must be at least 1");
    check_range(c.embedding.backend == "synthetic" || c.embedding.backend == "http", "embedding.backend",
                "must be 'synthetic' or 'http'");
    check_range(c.embedding.dim >= 0, "embedding.dim", "must not be negative");
    check_range(c.embedding.timeout_s > 0.0, "embedding.timeout_s", "must be positive");
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FileNotFound(path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

const std::vector<std::string>& config_keys()
{
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const auto& s : schema())
            out.push_back(s.key);
        return out;
    }();
    return keys;
}

json RunConfig::to_flat_json() const
{
    json out = json::object();
    for (const auto& s : schema())
        out[s.key] = s.get(*this);
    return out;
}

RunConfig make_config(const std::map<std::string, json>& values, const fs::path& base_dir)
{
    RunConfig cfg;
    cfg.base_dir = base_dir;
    for (const auto& [key, raw] : values)
    {
        const auto* spec = find_spec(key);
        if (!spec)
            throw ConfigError(key, "unknown key");
        const json v = coerce(*spec, raw, base_dir);
        try
        {
            spec->set(cfg, v);
        }
        catch (const ValidationError& e)
        {
            throw ConfigError(key, e.what());
        }
    }
    validate(cfg);
    return cfg;
}

void apply_override(std::map<std::string, json>& values, std::string_view assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos)
        throw ConfigError(std::string(text::trim(assignment)), "override must have the form key=value");
    const auto key = text::trim(assignment.substr(0, eq));
    const auto* spec = find_spec(key);
    if (!spec)
        throw ConfigError(key, "unknown key");
    json v = parse_override_value(assignment.substr(eq + 1));
    if (spec->kind == Kind::path && v.is_string())
        v = coerce(*spec, v, fs::current_path());
    values[key] = std::move(v);
}

RunConfig load_config(const fs::path& path, const std::vector<std::string>& overrides)
{
    if (!fs::exists(path))
        throw FileNotFound(path.string());
    auto values = parse_toml_subset(read_file(path));
    for (const auto& o : overrides)
        apply_override(values, o);
    return make_config(values, fs::absolute(path).parent_path());
}

void require_run_inputs(const RunConfig& cfg)
{
    if (!cfg.guidelines_path)
        throw ConfigError("guidelines.path", "required");
    if (!cfg.manifest_path)
        throw ConfigError("dataset.manifest", "required");
    if (cfg.llm.backend == "mock" && !cfg.llm.script)
        throw ConfigError("llm.script", "required for the mock backend");
    if (cfg.llm.backend == "http")
    {
        if (cfg.llm.base_url.empty())
            throw ConfigError("llm.base_url", "required for the http backend");
        if (cfg.llm.model.empty())
            throw ConfigError("llm.model", "required for the http backend");
    }
    if (cfg.embedding.backend == "synthetic" && !cfg.embedding.world)
        throw ConfigError("embedding.world", "required for the synthetic backend");
    if (cfg.embedding.backend == "http")
    {
        if (cfg.embedding.base_url.empty())
            throw ConfigError("embedding.base_url", "required for the http backend");
        if (cfg.embedding.dim <= 0)
            throw ConfigError("embedding.dim", "required for the http backend");
    }
    if (cfg.include_disease_graph && !cfg.graph_path)
        throw ConfigError("refinement.graph_path", "required when include_disease_graph is true");
}

std::string read_optional_text(const std::optional<fs::path>& path, std::string_view key)
{
    if (!path)
        return {};
    try
    {
        return read_file(*path);
    }
    catch (const FileNotFound& e)
    {
        throw ConfigError(std::string(key), e.what());
    }
}

json config_fingerprint(const RunConfig& cfg, std::string_view llm_identity, std::string_view embedding_identity)
{
    static const std::vector<std::string> semantic = {
        "run.task_mode",          "run.max_retries",         "run.temperature",
        "vlm.psi",                "vlm.mode",                "screening.negation_mode",
        "screening.max_tokens",   "screening.max_tool_calls", "screening.token_budget",
        "diagnosis.max_tokens",   "refinement.use_cot",      "refinement.include_disease_graph",
        "refinement.max_tokens",  "llm.backend",             "llm.base_url",
        "llm.model",              "llm.assistant_prefill",   "embedding.backend",
        "embedding.base_url",     "embedding.dim",
    };
    const auto flat = cfg.to_flat_json();
    json fp = json::object();
    for (const auto& key : semantic)
        fp[key] = flat.at(key);

    auto content_hash = [](const std::optional<fs::path>& p, std::string_view builtin) -> json {
        if (p)
            return text::fnv1a_hex(read_file(*p));
        if (!builtin.empty())
            return text::fnv1a_hex(builtin);
        return nullptr;
    };
    fp["files.guidelines"] = content_hash(cfg.guidelines_path, {});
    fp["files.manifest"] = content_hash(cfg.manifest_path, {});
    fp["files.screening_template"] = content_hash(cfg.screening_template, resources::kScreeningTemplate);
    fp["files.diagnosis_template"] = content_hash(cfg.diagnosis_template, resources::kDiagnosisTemplate);
    fp["files.refinement_template"] = content_hash(cfg.refinement_template, resources::kRefinementTemplate);
    fp["files.disease_graph"] = cfg.include_disease_graph ? content_hash(cfg.graph_path, {}) : json(nullptr);
    fp["backend.llm"] = std::string(llm_identity);
    fp["backend.embedding"] = std::string(embedding_identity);
    return fp;
}

std::string fingerprint_hash(const json& fingerprint)
{
    return text::fnv1a_hex(fingerprint.dump());
}

const std::vector<std::string>& ablation_keys()
{
    static const std::vector<std::string> keys = {"screening.negation_mode", "refinement.use_cot",
                                                  "refinement.include_disease_graph", "files.disease_graph"};
    return keys;
}

} // namespace magda
