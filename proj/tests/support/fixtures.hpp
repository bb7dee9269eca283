// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "magda/guidelines.hpp"

#include <filesystem>
#include <string>

namespace magda::fixture {

std::filesystem::path source_dir();
std::filesystem::path synthetic_dir();

/// Empty directory under the build tree, recreated on every call.
std::filesystem::path scratch_dir(const std::string& name);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

GuidelineSet synthetic_guidelines();

} // namespace magda::fixture
