// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace magda {

/// Dense embedding with finite entries.
class EmbeddingVector
{
public:
    EmbeddingVector() = default;
    explicit EmbeddingVector(std::vector<double> values);

    std::span<const double> values() const noexcept { return values_; }
    std::size_t dimension() const noexcept { return values_.size(); }
    double norm() const;

    bool operator==(const EmbeddingVector&) const = default;

private:
    std::vector<double> values_;
};

/// cos(a, b), clamped to [-1, 1]. Throws DimensionMismatch or ZeroVector.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

struct FindingProbe
{
    std::string positive;
    std::string negative;

    bool operator==(const FindingProbe&) const = default;
};

enum class VlmMode
{
    contrastive,
    positive_only,
};

std::string_view to_string(VlmMode mode);
VlmMode vlm_mode_from_string(std::string_view s);

struct VlmConfig
{
    double psi = 0.55;
    VlmMode mode = VlmMode::contrastive;

    void validate() const;
};

enum class Verdict
{
    Positive,
    Negative,
};

std::string_view to_string(Verdict v);
Verdict verdict_from_string(std::string_view s);

struct FindingObservation
{
    FindingProbe probe;
    double p_positive = 0.0;
    Verdict verdict = Verdict::Negative;
    double s_pos = 0.0;
    std::optional<double> s_neg; // absent in positive_only mode

    bool operator==(const FindingObservation&) const = default;
};

struct PairProbabilities
{
    double positive;
    double negative;
};

/// Two-way softmax over raw similarities, no temperature or logit scale.
PairProbabilities softmax_pair(double s_pos, double s_neg);

/// Turns similarities into an observation. Contrastive: softmax over the
/// pair. Positive-only: p = (s_pos + 1) / 2. Positive iff p > psi.
FindingObservation score_similarities(const FindingProbe& probe, double s_pos, std::optional<double> s_neg,
                                      const VlmConfig& cfg);

class EmbeddingBackend
{
public:
    virtual ~EmbeddingBackend() = default;

    virtual std::size_t dimension() const = 0;
    virtual EmbeddingVector embed_text(std::string_view text) = 0;
    virtual EmbeddingVector embed_image(std::string_view image_ref) = 0;
    virtual std::string describe() const = 0;
    virtual void preflight() {}
};

FindingObservation score_probe(EmbeddingBackend& backend, std::string_view image_ref, const FindingProbe& probe,
                               const VlmConfig& cfg);

/// Oracle embedding world. Every text embeds as the L2-normalised indicator
/// of the vocabulary tokens it contains (case-insensitive substring), every
/// image as the normalised indicator of its declared findings. One extra
/// axis past the vocabulary holds texts with no token and images with no
/// findings, so those still have a direction orthogonal to every token.
class SyntheticWorld final : public EmbeddingBackend
{
public:
    struct Image
    {
        std::string id;
        std::vector<std::string> findings;
    };

    SyntheticWorld(std::vector<std::string> vocabulary, std::vector<Image> images);

    static std::shared_ptr<SyntheticWorld> from_json(const nlohmann::json& doc);
    static std::shared_ptr<SyntheticWorld> load(const std::filesystem::path& path);

    std::size_t dimension() const override { return vocabulary_.size() + 1; }
    EmbeddingVector embed_text(std::string_view text) override;
    EmbeddingVector embed_image(std::string_view image_ref) override;
    std::string describe() const override;

    const std::vector<std::string>& vocabulary() const noexcept { return vocabulary_; }
    const std::vector<Image>& images() const noexcept { return images_; }

    /// Ground truth: does `image_ref` show the finding named by `token`?
    bool has_finding(std::string_view image_ref, std::string_view token) const;

private:
    const Image& image(std::string_view id) const;
    EmbeddingVector indicator(const std::vector<std::size_t>& axes) const;

    std::vector<std::string> vocabulary_;
    std::vector<std::string> vocabulary_lower_;
    std::vector<Image> images_;
    std::string fingerprint_;
};

/// Thread-safe LRU cache of embeddings keyed by exact text / image reference.
class EmbeddingCache
{
public:
    explicit EmbeddingCache(std::size_t capacity = 4096);

    std::optional<EmbeddingVector> get(const std::string& key);
    void put(const std::string& key, EmbeddingVector value);
    std::size_t size() const;
    std::size_t capacity() const noexcept { return capacity_; }

private:
    using Entry = std::pair<std::string, EmbeddingVector>;

    std::size_t capacity_;
    mutable std::mutex mutex_;
    std::list<Entry> order_; // most recent first
    std::unordered_map<std::string, std::list<Entry>::iterator> index_;
};

class CachedEmbeddingBackend final : public EmbeddingBackend
{
public:
    CachedEmbeddingBackend(std::shared_ptr<EmbeddingBackend> inner, std::size_t capacity = 4096);

    std::size_t dimension() const override { return inner_->dimension(); }
    EmbeddingVector embed_text(std::string_view text) override;
    EmbeddingVector embed_image(std::string_view image_ref) override;
    std::string describe() const override { return inner_->describe(); }
    void preflight() override { inner_->preflight(); }

    const EmbeddingCache& cache() const noexcept { return cache_; }

private:
    std::shared_ptr<EmbeddingBackend> inner_;
    EmbeddingCache cache_;
};

struct EmbeddingClientOptions
{
    std::string base_url;
    std::size_t dimension = 0;  // declared dimension; responses must match
    std::string token;
    double timeout_s = 60.0;
    int max_attempts = 3;
    std::chrono::milliseconds backoff_base {500};
};

/// Client for POST {base_url}/embed with {"kind", "payload"}.
class HttpEmbeddingClient final : public EmbeddingBackend
{
public:
    explicit HttpEmbeddingClient(EmbeddingClientOptions options);

    std::size_t dimension() const override { return options_.dimension; }
    EmbeddingVector embed_text(std::string_view text) override;
    EmbeddingVector embed_image(std::string_view image_ref) override;
    std::string describe() const override;
    void preflight() override;

private:
    EmbeddingVector request(std::string_view kind, std::string_view payload);

    EmbeddingClientOptions options_;
};

} // namespace magda
