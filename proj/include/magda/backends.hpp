// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "magda/config.hpp"
#include "magda/embedding_backend.hpp"
#include "magda/llm_backend.hpp"

#include <memory>

namespace magda {

struct Backends
{
    std::shared_ptr<LlmBackend> llm;
    std::shared_ptr<EmbeddingBackend> embedding; // wrapped in a cache when vlm.cache_size > 0
};

/// Builds the configured backends. Tokens come from MAGDA_LLM_TOKEN and
/// MAGDA_EMBEDDING_TOKEN.
Backends make_backends(const RunConfig& cfg);

} // namespace magda
