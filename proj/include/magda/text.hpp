// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

// Small string helpers shared by the agents. ASCII-only case folding: labels
// and sentinels are ASCII, other bytes pass through untouched.
namespace magda::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool icontains(std::string_view haystack, std::string_view needle);

/// Splits at "\n", dropping a "\r" before it.
std::vector<std::string> split_lines(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Replaces every occurrence of `from` (non-empty) with `to`.
std::string replace_all(std::string_view s, std::string_view from, std::string_view to);

bool starts_with_icase(std::string_view s, std::string_view prefix);

/// 64-bit FNV-1a digest as 16 lowercase hex digits. Stable across platforms.
std::string fnv1a_hex(std::string_view data);

} // namespace magda::text
