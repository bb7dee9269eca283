// SPDX-License-Identifier: Apache-2.0
#include "magda/text.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>

namespace magda::text {

namespace {

bool is_space(char c)
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

char lower(char c)
{
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

} // namespace

std::string trim(std::string_view s)
{
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(s[b]))
        ++b;
    while (e > b && is_space(s[e - 1]))
        --e;
    return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), lower);
    return out;
}

bool iequals(std::string_view a, std::string_view b)
{
    return a.size() == b.size()
        && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) { return lower(x) == lower(y); });
}

bool icontains(std::string_view haystack, std::string_view needle)
{
    if (needle.empty())
        return true;
    auto it = std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end(),
                          [](char x, char y) { return lower(x) == lower(y); });
    return it != haystack.end();
}

std::vector<std::string> split_lines(std::string_view s)
{
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (true)
    {
        auto pos = s.find('\n', start);
        if (pos == std::string_view::npos)
        {
            lines.emplace_back(s.substr(start));
            break;
        }
        auto end = pos > start && s[pos - 1] == '\r' ? pos - 1 : pos;
        lines.emplace_back(s.substr(start, end - start));
        start = pos + 1;
    }
    return lines;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep)
{
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i)
    {
        if (i)
            out += sep;
        out += parts[i];
    }
    return out;
}

std::string replace_all(std::string_view s, std::string_view from, std::string_view to)
{
    std::string out;
    std::size_t start = 0;
    while (true)
    {
        auto pos = s.find(from, start);
        if (pos == std::string_view::npos || from.empty())
        {
            out += s.substr(start);
            return out;
        }
        out += s.substr(start, pos - start);
        out += to;
        start = pos + from.size();
    }
}

bool starts_with_icase(std::string_view s, std::string_view prefix)
{
    return s.size() >= prefix.size() && iequals(s.substr(0, prefix.size()), prefix);
}

std::string fnv1a_hex(std::string_view data)
{
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : data)
    {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace magda::text
