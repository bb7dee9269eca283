// SPDX-License-Identifier: Apache-2.0
#include "magda/scripted_llm.hpp"

#include "magda/error.hpp"
#include "magda/text.hpp"

#include <boost/regex.hpp>

#include <fstream>
#include <sstream>

namespace magda {

struct ScriptedLlm::Compiled
{
    ScriptRule rule;
    std::optional<boost::regex> re;

    bool matches(const std::string& rendered) const
    {
        if (re)
            return boost::regex_search(rendered, *re);
        return rendered.find(rule.match) != std::string::npos;
    }
};

ScriptedLlm::ScriptedLlm(std::vector<ScriptRule> rules, std::string default_reply)
    : default_reply_(std::move(default_reply))
{
    nlohmann::json canon = nlohmann::json::array();
    for (auto& rule : rules)
    {
        auto compiled = std::make_unique<Compiled>();
        if (rule.regex)
        {
            try
            {
                compiled->re.emplace(rule.match, boost::regex::perl);
            }
            catch (const boost::regex_error& e)
            {
                throw ValidationError("invalid script regex '" + rule.match + "': " + e.what());
            }
        }
        canon.push_back({{"match", rule.match}, {"regex", rule.regex}, {"reply", rule.reply}});
        compiled->rule = std::move(rule);
        rules_.push_back(std::move(compiled));
    }
    canon.push_back({{"default_reply", default_reply_}});
    fingerprint_ = "mock:" + text::fnv1a_hex(canon.dump());
}

ScriptedLlm::~ScriptedLlm() = default;

std::shared_ptr<ScriptedLlm> ScriptedLlm::from_json(const nlohmann::json& doc)
{
    const nlohmann::json* list = &doc;
    std::string default_reply;
    if (doc.is_object())
    {
        if (!doc.contains("rules"))
            throw ValidationError("mock script object needs a \"rules\" list");
        list = &doc.at("rules");
        if (doc.contains("default_reply"))
            default_reply = doc.at("default_reply").get<std::string>();
    }
    if (!list->is_array())
        throw ValidationError("mock script must be a JSON list of rules");

    std::vector<ScriptRule> rules;
    for (const auto& item : *list)
    {
        if (!item.is_object() || !item.contains("match") || !item.contains("reply"))
            throw ValidationError("mock script rule needs \"match\" and \"reply\"");
        ScriptRule rule;
        rule.match = item.at("match").get<std::string>();
        rule.reply = item.at("reply").get<std::string>();
        rule.regex = item.value("regex", false);
        rules.push_back(std::move(rule));
    }
    return std::make_shared<ScriptedLlm>(std::move(rules), std::move(default_reply));
}

std::shared_ptr<ScriptedLlm> ScriptedLlm::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FileNotFound(path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    nlohmann::json doc;
    try
    {
        doc = nlohmann::json::parse(buf.str());
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw ParseError(1, std::string("mock script: ") + e.what());
    }
    return from_json(doc);
}

const std::string& ScriptedLlm::select_reply(const std::string& rendered) const
{
    for (const auto& rule : rules_)
        if (rule->matches(rendered))
            return rule->rule.reply;
    return default_reply_;
}

Completion ScriptedLlm::generate(const Conversation& conv, const SamplingParams& params)
{
    params.validate();
    ++calls_;
    return truncate_generation(select_reply(conv.render()), params);
}

Completion ScriptedLlm::continue_generation(const Conversation& conv, std::string_view partial_assistant,
                                            const SamplingParams& params)
{
    if (partial_assistant.empty())
        throw PreconditionError("continue_generation requires a non-empty partial assistant text");
    params.validate();
    ++calls_;
    return truncate_generation(select_reply(conv.render_with_partial(partial_assistant)), params);
}

std::string ScriptedLlm::describe() const
{
    return fingerprint_;
}

} // namespace magda
