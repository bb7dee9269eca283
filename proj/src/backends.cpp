// SPDX-License-Identifier: Apache-2.0
#include "magda/backends.hpp"

#include "magda/chat_client.hpp"
#include "magda/error.hpp"
#include "magda/scripted_llm.hpp"

#include <cstdlib>

namespace magda {

namespace {

std::string env_or_empty(const char* name)
{
    const char* v = std::getenv(name);
    return v ? v : "";
}

} // namespace

Backends make_backends(const RunConfig& cfg)
{
    Backends out;
    if (cfg.llm.backend == "mock")
    {
        if (!cfg.llm.script)
            throw ConfigError("llm.script", "required for the mock backend");
        out.llm = ScriptedLlm::load(*cfg.llm.script);
    }
    else
    {
        ChatClientOptions o;
        o.base_url = cfg.llm.base_url;
        o.model = cfg.llm.model;
        o.token = env_or_empty("MAGDA_LLM_TOKEN");
        o.timeout_s = cfg.llm.timeout_s;
        o.max_attempts = cfg.llm.max_attempts;
        o.backoff_base = std::chrono::milliseconds(cfg.llm.retry_base_ms);
        o.assistant_prefill = cfg.llm.assistant_prefill;
        out.llm = std::make_shared<ChatCompletionsClient>(std::move(o));
    }

    std::shared_ptr<EmbeddingBackend> embedder;
    if (cfg.embedding.backend == "synthetic")
    {
        if (!cfg.embedding.world)
            throw ConfigError("embedding.world", "required for the synthetic backend");
        embedder = SyntheticWorld::load(*cfg.embedding.world);
    }
    else
    {
        EmbeddingClientOptions o;
        o.base_url = cfg.embedding.base_url;
        o.dimension = static_cast<std::size_t>(cfg.embedding.dim);
        o.token = env_or_empty("MAGDA_EMBEDDING_TOKEN");
        o.timeout_s = cfg.embedding.timeout_s;
        o.max_attempts = cfg.llm.max_attempts;
        o.backoff_base = std::chrono::milliseconds(cfg.llm.retry_base_ms);
        embedder = std::make_shared<HttpEmbeddingClient>(std::move(o));
    }
    if (cfg.cache_size > 0)
        embedder = std::make_shared<CachedEmbeddingBackend>(embedder, static_cast<std::size_t>(cfg.cache_size));
    out.embedding = std::move(embedder);
    return out;
}

} // namespace magda
