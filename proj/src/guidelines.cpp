// SPDX-License-Identifier: Apache-2.0
#include "magda/guidelines.hpp"

#include "magda/error.hpp"
#include "magda/text.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace magda {

using nlohmann::json;

Finding::Finding(std::string description)
    : description_(std::move(description))
{
    if (auto why = check(description_))
        throw ValidationError("invalid finding '" + description_ + "': " + *why);
}

std::optional<std::string> Finding::check(std::string_view description)
{
    if (text::trim(description).empty())
        return "description is empty";
    if (description.find("CLIP:") != std::string_view::npos)
        return "contains the tool keyword \"CLIP:\"";
    if (description.find('/') != std::string_view::npos)
        return "contains the separator \"/\"";
    if (description.find("->") != std::string_view::npos)
        return "contains the terminator \"->\"";
    if (description.find('\n') != std::string_view::npos)
        return "spans more than one line";
    return std::nullopt;
}

void Disease::validate() const
{
    if (text::trim(name).empty())
        throw ValidationError("disease name is empty");
    if (findings.empty())
        throw ValidationError("disease '" + name + "' has no findings");
    for (std::size_t i = 0; i < findings.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (text::iequals(findings[i].description(), findings[j].description()))
                throw ValidationError("disease '" + name + "' lists finding '" + findings[i].description() + "' twice");
}

void GuidelineSet::validate() const
{
    for (std::size_t i = 0; i < diseases.size(); ++i)
    {
        diseases[i].validate();
        for (std::size_t j = 0; j < i; ++j)
            if (text::iequals(diseases[i].name, diseases[j].name))
                throw ValidationError("duplicate disease name '" + diseases[i].name + "'");
    }
    if (no_finding_label)
    {
        if (text::trim(*no_finding_label).empty())
            throw ValidationError("no_finding_label is empty");
        if (find(*no_finding_label))
            throw ValidationError("no_finding_label '" + *no_finding_label + "' collides with a disease name");
    }
}

const Disease* GuidelineSet::find(std::string_view name) const
{
    for (const auto& d : diseases)
        if (text::iequals(d.name, name))
            return &d;
    return nullptr;
}

json GuidelineSet::to_json() const
{
    json doc = {{"diseases", json::array()}};
    if (no_finding_label)
        doc["no_finding_label"] = *no_finding_label;
    for (const auto& d : diseases)
    {
        json findings = json::array();
        for (const auto& f : d.findings)
            findings.push_back(f.description());
        doc["diseases"].push_back({{"name", d.name}, {"findings", std::move(findings)}});
    }
    return doc;
}

namespace {

std::size_t line_of(std::string_view doc, std::size_t byte)
{
    byte = std::min(byte, doc.size());
    return 1 + static_cast<std::size_t>(std::count(doc.begin(), doc.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

} // namespace

GuidelineSet parse_guidelines(std::string_view document)
{
    if (text::trim(document).empty())
        throw ParseError(1, "empty guideline document");
    if (document.size() >= 3 && document.substr(0, 3) == "\xEF\xBB\xBF")
        throw ParseError(1, "guideline document must not start with a byte order mark");

    json doc;
    try
    {
        doc = json::parse(document);
    }
    catch (const json::parse_error& e)
    {
        // e.byte is 1-based and points just past the offending character.
        throw ParseError(line_of(document, e.byte ? e.byte - 1 : 0), e.what());
    }

    if (!doc.is_object())
        throw ParseError(0, "guideline document must be a JSON object");
    if (!doc.contains("diseases") || !doc["diseases"].is_array())
        throw ParseError(0, "guideline document needs a \"diseases\" list");

    GuidelineSet set;
    if (doc.contains("no_finding_label") && !doc["no_finding_label"].is_null())
    {
        if (!doc["no_finding_label"].is_string())
            throw ParseError(0, "\"no_finding_label\" must be a string");
        set.no_finding_label = doc["no_finding_label"].get<std::string>();
    }

    for (const auto& entry : doc["diseases"])
    {
        if (!entry.is_object() || !entry.contains("name") || !entry["name"].is_string())
            throw ParseError(0, "every disease needs a string \"name\"");
        Disease d;
        d.name = entry["name"].get<std::string>();
        if (!entry.contains("findings") || !entry["findings"].is_array())
            throw ParseError(0, "disease '" + d.name + "' needs a \"findings\" list");
        for (const auto& f : entry["findings"])
        {
            if (!f.is_string())
                throw ParseError(0, "findings of '" + d.name + "' must be strings");
            d.findings.emplace_back(text::trim(f.get<std::string>()));
        }
        set.diseases.push_back(std::move(d));
    }
    set.validate();
    return set;
}

GuidelineSet load_guidelines(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FileNotFound(path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_guidelines(buf.str());
}

std::string render_finding_block(const Disease& disease)
{
    std::vector<std::string> lines;
    lines.reserve(disease.findings.size());
    for (const auto& f : disease.findings)
        lines.push_back(f.description());
    return text::join(lines, "\n");
}

namespace {

std::string extraction_prompt(std::string_view prose, std::string_view disease_name)
{
    std::string prompt;
    prompt += "You are given a description of the condition ";
    prompt += disease_name;
    prompt += ". Extract the fine-grained image findings on a chest x-ray that indicate ";
    prompt += disease_name;
    prompt += ". List every finding on its own line starting with \"- \". "
              "Phrase each finding positively, describing what is visible, without negations. "
              "Do not use the characters \"/\" or \"->\".\n\nDescription:\n";
    prompt += prose;
    return prompt;
}

bool is_negated(std::string_view finding)
{
    for (std::string_view prefix : {"no ", "not ", "without ", "absence of ", "absent "})
        if (text::starts_with_icase(finding, prefix))
            return true;
    return false;
}

// Bullets of one reply, or nullopt if any bullet is unusable.
std::optional<std::vector<Finding>> parse_bullets(std::string_view reply)
{
    std::vector<Finding> out;
    for (const auto& raw : text::split_lines(reply))
    {
        auto line = text::trim(raw);
        if (line.size() < 2 || (line[0] != '-' && line[0] != '*') || (line[1] != ' ' && line[1] != '\t'))
            continue;
        auto body = text::trim(std::string_view(line).substr(2));
        if (Finding::check(body) || is_negated(body))
            return std::nullopt;
        bool dup = std::any_of(out.begin(), out.end(),
                               [&](const Finding& f) { return text::iequals(f.description(), body); });
        if (!dup)
            out.emplace_back(body);
    }
    if (out.empty())
        return std::nullopt;
    return out;
}

} // namespace

std::vector<Finding> extract_findings(std::string_view prose, std::string_view disease_name, LlmBackend& llm,
                                      const ExtractionOptions& options)
{
    if (text::trim(prose).empty())
        throw PreconditionError("extract_findings needs non-empty prose");
    if (text::trim(disease_name).empty())
        throw PreconditionError("extract_findings needs a disease name");

    Conversation conv(extraction_prompt(prose, disease_name));
    const int attempts = std::max(1, options.max_retries);
    for (int attempt = 1; attempt <= attempts; ++attempt)
    {
        auto reply = llm.generate(conv, options.sampling);
        if (auto findings = parse_bullets(reply.text))
            return std::move(*findings);
        if (attempt < attempts)
        {
            conv.add_assistant(reply.text);
            conv.add_user("Please answer only with the findings, one per line, each line starting with \"- \".");
        }
    }
    throw ExtractionEmpty("no usable findings extracted for '" + std::string(disease_name) + "' after "
                          + std::to_string(attempts) + " attempts");
}

} // namespace magda
