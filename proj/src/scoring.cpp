// SPDX-License-Identifier: Apache-2.0
#include "magda/embedding_backend.hpp"

#include "magda/error.hpp"

#include <algorithm>
#include <cmath>

namespace magda {

EmbeddingVector::EmbeddingVector(std::vector<double> values)
    : values_(std::move(values))
{
    for (double v : values_)
        if (!std::isfinite(v))
            throw ValidationError("embedding contains a non-finite entry");
}

double EmbeddingVector::norm() const
{
    double sum = 0.0;
    for (double v : values_)
        sum += v * v;
    return std::sqrt(sum);
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b)
{
    if (a.dimension() != b.dimension())
        throw DimensionMismatch("cosine similarity needs equal dimensions, got " + std::to_string(a.dimension())
                                + " and " + std::to_string(b.dimension()));
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0)
        throw ZeroVector("cosine similarity of a zero vector is undefined");
    double dot = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i)
        dot += av[i] * bv[i];
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

std::string_view to_string(VlmMode mode)
{
    return mode == VlmMode::contrastive ? "contrastive" : "positive_only";
}

VlmMode vlm_mode_from_string(std::string_view s)
{
    if (s == "contrastive")
        return VlmMode::contrastive;
    if (s == "positive_only")
        return VlmMode::positive_only;
    throw ValidationError("unknown vlm mode '" + std::string(s) + "'");
}

void VlmConfig::validate() const
{
    if (!(psi > 0.0 && psi < 1.0))
        throw ValidationError("psi must lie in (0, 1)");
}

std::string_view to_string(Verdict v)
{
    return v == Verdict::Positive ? "Positive" : "Negative";
}

Verdict verdict_from_string(std::string_view s)
{
    if (s == "Positive")
        return Verdict::Positive;
    if (s == "Negative")
        return Verdict::Negative;
    throw ValidationError("unknown verdict '" + std::string(s) + "'");
}

PairProbabilities softmax_pair(double s_pos, double s_neg)
{
    // Logistic form of exp(a) / (exp(a) + exp(b)); only the difference enters.
    return {1.0 / (1.0 + std::exp(s_neg - s_pos)), 1.0 / (1.0 + std::exp(s_pos - s_neg))};
}

FindingObservation score_similarities(const FindingProbe& probe, double s_pos, std::optional<double> s_neg,
                                      const VlmConfig& cfg)
{
    FindingObservation obs;
    obs.probe = probe;
    obs.s_pos = s_pos;
    if (cfg.mode == VlmMode::contrastive)
    {
        if (!s_neg)
            throw PreconditionError("contrastive scoring needs a negative similarity");
        obs.s_neg = s_neg;
        obs.p_positive = softmax_pair(s_pos, *s_neg).positive;
    }
    else
    {
        obs.p_positive = (s_pos + 1.0) / 2.0;
    }
    obs.verdict = obs.p_positive > cfg.psi ? Verdict::Positive : Verdict::Negative;
    return obs;
}

FindingObservation score_probe(EmbeddingBackend& backend, std::string_view image_ref, const FindingProbe& probe,
                               const VlmConfig& cfg)
{
    if (probe.positive.empty())
        throw PreconditionError("probe needs a positive description");
    auto image = backend.embed_image(image_ref);
    const double s_pos = cosine_similarity(image, backend.embed_text(probe.positive));
    if (cfg.mode == VlmMode::positive_only)
        return score_similarities(probe, s_pos, std::nullopt, cfg);
    if (probe.negative.empty() || probe.negative == probe.positive)
        throw PreconditionError("contrastive probe needs a distinct negative description");
    const double s_neg = cosine_similarity(image, backend.embed_text(probe.negative));
    return score_similarities(probe, s_pos, s_neg, cfg);
}

} // namespace magda
