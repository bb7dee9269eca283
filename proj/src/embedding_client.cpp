// SPDX-License-Identifier: Apache-2.0
#include "magda/embedding_backend.hpp"

#include "http_util.hpp"

namespace magda {

using nlohmann::json;

EmbeddingCache::EmbeddingCache(std::size_t capacity)
    : capacity_(capacity)
{
}

std::optional<EmbeddingVector> EmbeddingCache::get(const std::string& key)
{
    std::lock_guard lock(mutex_);
    auto it = index_.find(key);
    if (it == index_.end())
        return std::nullopt;
    order_.splice(order_.begin(), order_, it->second);
    return it->second->second;
}

void EmbeddingCache::put(const std::string& key, EmbeddingVector value)
{
    if (capacity_ == 0)
        return;
    std::lock_guard lock(mutex_);
    auto it = index_.find(key);
    if (it != index_.end())
    {
        it->second->second = std::move(value);
        order_.splice(order_.begin(), order_, it->second);
        return;
    }
    order_.emplace_front(key, std::move(value));
    index_[key] = order_.begin();
    if (order_.size() > capacity_)
    {
        index_.erase(order_.back().first);
        order_.pop_back();
    }
}

std::size_t EmbeddingCache::size() const
{
    std::lock_guard lock(mutex_);
    return order_.size();
}

CachedEmbeddingBackend::CachedEmbeddingBackend(std::shared_ptr<EmbeddingBackend> inner, std::size_t capacity)
    : inner_(std::move(inner)), cache_(capacity)
{
}

EmbeddingVector CachedEmbeddingBackend::embed_text(std::string_view text)
{
    std::string key = "t:";
    key += text;
    if (auto hit = cache_.get(key))
        return *hit;
    auto v = inner_->embed_text(text);
    cache_.put(key, v);
    return v;
}

EmbeddingVector CachedEmbeddingBackend::embed_image(std::string_view image_ref)
{
    std::string key = "i:";
    key += image_ref;
    if (auto hit = cache_.get(key))
        return *hit;
    auto v = inner_->embed_image(image_ref);
    cache_.put(key, v);
    return v;
}

HttpEmbeddingClient::HttpEmbeddingClient(EmbeddingClientOptions options)
    : options_(std::move(options))
{
    if (options_.base_url.empty())
        throw ValidationError("embedding client needs a base_url");
    if (options_.dimension < 2)
        throw ValidationError("embedding client needs a declared dimension >= 2");
    if (options_.max_attempts < 1)
        options_.max_attempts = 1;
    detail::parse_endpoint(options_.base_url);
}

EmbeddingVector HttpEmbeddingClient::embed_text(std::string_view text)
{
    if (text.empty())
        throw PreconditionError("embed_text needs a non-empty text");
    return request("text", text);
}

EmbeddingVector HttpEmbeddingClient::embed_image(std::string_view image_ref)
{
    return request("image", image_ref);
}

std::string HttpEmbeddingClient::describe() const
{
    return "embed-http:" + std::to_string(options_.dimension);
}

void HttpEmbeddingClient::preflight()
{
    auto ep = detail::parse_endpoint(options_.base_url);
    auto client = detail::make_client(ep, std::min(options_.timeout_s, 10.0));
    auto res = client->Get(ep.prefix + "/");
    if (!res)
        detail::throw_transport(res.error(), "embedding endpoint " + options_.base_url + " unreachable");
}

EmbeddingVector HttpEmbeddingClient::request(std::string_view kind, std::string_view payload)
{
    const auto body = json {{"kind", kind}, {"payload", payload}}.dump();
    const auto ep = detail::parse_endpoint(options_.base_url);

    return detail::with_retries(options_.max_attempts, options_.backoff_base, [&]() {
        auto client = detail::make_client(ep, options_.timeout_s);
        httplib::Headers headers;
        if (!options_.token.empty())
            headers.emplace("Authorization", "Bearer " + options_.token);
        auto res = client->Post(ep.prefix + "/embed", headers, body, "application/json");
        if (!res)
            detail::throw_transport(res.error(), "embedding request failed");
        if (res->status == 404)
            throw NotFound("embedding service does not know '" + std::string(payload) + "'");
        if (res->status == 429 || res->status >= 500)
            throw BackendError("embedding service returned HTTP " + std::to_string(res->status));
        if (res->status != 200)
            throw ProtocolError("embedding service returned HTTP " + std::to_string(res->status));

        json doc;
        try
        {
            doc = json::parse(res->body);
        }
        catch (const json::parse_error& e)
        {
            throw ProtocolError(std::string("embedding response is not JSON: ") + e.what());
        }
        if (!doc.is_object() || !doc.contains("embedding") || !doc["embedding"].is_array())
            throw ProtocolError("embedding response lacks an \"embedding\" list");
        std::vector<double> values;
        for (const auto& v : doc["embedding"])
        {
            if (!v.is_number())
                throw ProtocolError("embedding entries must be numbers");
            values.push_back(v.get<double>());
        }
        if (values.size() != options_.dimension
            || (doc.contains("dim") && doc["dim"].is_number_integer()
                && doc["dim"].get<std::size_t>() != values.size()))
            throw DimensionMismatch("embedding service returned dimension " + std::to_string(values.size())
                                    + ", declared " + std::to_string(options_.dimension));
        return EmbeddingVector(std::move(values));
    });
}

} // namespace magda
