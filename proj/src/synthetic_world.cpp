// SPDX-License-Identifier: Apache-2.0
#include "magda/embedding_backend.hpp"

#include "magda/error.hpp"
#include "magda/text.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace magda {

SyntheticWorld::SyntheticWorld(std::vector<std::string> vocabulary, std::vector<Image> images)
    : vocabulary_(std::move(vocabulary)), images_(std::move(images))
{
    if (vocabulary_.empty())
        throw ValidationError("synthetic world needs a non-empty vocabulary");
    for (const auto& token : vocabulary_)
    {
        if (text::trim(token).empty())
            throw ValidationError("synthetic world vocabulary contains an empty token");
        vocabulary_lower_.push_back(text::to_lower(token));
    }
    for (std::size_t i = 0; i < images_.size(); ++i)
    {
        for (std::size_t j = 0; j < i; ++j)
            if (images_[j].id == images_[i].id)
                throw ValidationError("synthetic world has duplicate image id '" + images_[i].id + "'");
        for (const auto& f : images_[i].findings)
        {
            bool known = false;
            for (const auto& token : vocabulary_lower_)
                known = known || token == text::to_lower(f);
            if (!known)
                throw ValidationError("image '" + images_[i].id + "' lists unknown finding '" + f + "'");
        }
    }

    nlohmann::json canon = {{"vocabulary", vocabulary_}, {"images", nlohmann::json::array()}};
    for (const auto& img : images_)
        canon["images"].push_back({{"id", img.id}, {"findings", img.findings}});
    fingerprint_ = "synthetic:" + text::fnv1a_hex(canon.dump());
}

std::shared_ptr<SyntheticWorld> SyntheticWorld::from_json(const nlohmann::json& doc)
{
    if (!doc.is_object() || !doc.contains("vocabulary") || !doc.contains("images"))
        throw ValidationError("synthetic world needs \"vocabulary\" and \"images\"");
    try
    {
        std::vector<Image> images;
        for (const auto& item : doc.at("images"))
            images.push_back({item.at("id").get<std::string>(), item.at("findings").get<std::vector<std::string>>()});
        return std::make_shared<SyntheticWorld>(doc.at("vocabulary").get<std::vector<std::string>>(),
                                                std::move(images));
    }
    catch (const nlohmann::json::exception& e)
    {
        throw ValidationError(std::string("malformed synthetic world: ") + e.what());
    }
}

std::shared_ptr<SyntheticWorld> SyntheticWorld::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FileNotFound(path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    try
    {
        return from_json(nlohmann::json::parse(buf.str()));
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw ParseError(1, std::string("synthetic world: ") + e.what());
    }
}

EmbeddingVector SyntheticWorld::indicator(const std::vector<std::size_t>& axes) const
{
    std::vector<double> v(dimension(), 0.0);
    if (axes.empty())
    {
        v.back() = 1.0;
        return EmbeddingVector(std::move(v));
    }
    const double w = 1.0 / std::sqrt(static_cast<double>(axes.size()));
    for (auto axis : axes)
        v[axis] = w;
    return EmbeddingVector(std::move(v));
}

EmbeddingVector SyntheticWorld::embed_text(std::string_view text_in)
{
    if (text_in.empty())
        throw PreconditionError("embed_text needs a non-empty text");
    std::vector<std::size_t> axes;
    for (std::size_t i = 0; i < vocabulary_lower_.size(); ++i)
        if (text::icontains(text_in, vocabulary_lower_[i]))
            axes.push_back(i);
    return indicator(axes);
}

const SyntheticWorld::Image& SyntheticWorld::image(std::string_view id) const
{
    for (const auto& img : images_)
        if (img.id == id)
            return img;
    throw NotFound("unknown image reference '" + std::string(id) + "'");
}

EmbeddingVector SyntheticWorld::embed_image(std::string_view image_ref)
{
    const auto& img = image(image_ref);
    std::vector<std::size_t> axes;
    for (std::size_t i = 0; i < vocabulary_lower_.size(); ++i)
        for (const auto& f : img.findings)
            if (text::to_lower(f) == vocabulary_lower_[i])
            {
                axes.push_back(i);
                break;
            }
    return indicator(axes);
}

bool SyntheticWorld::has_finding(std::string_view image_ref, std::string_view token) const
{
    for (const auto& f : image(image_ref).findings)
        if (text::iequals(f, token))
            return true;
    return false;
}

std::string SyntheticWorld::describe() const
{
    return fingerprint_;
}

} // namespace magda
