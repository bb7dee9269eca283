// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace magda::fixture {

namespace fs = std::filesystem;

fs::path source_dir()
{
    return MAGDA_SOURCE_DIR;
}

fs::path synthetic_dir()
{
    return source_dir() / "data" / "synthetic";
}

fs::path scratch_dir(const std::string& name)
{
    const auto dir = fs::path(MAGDA_BINARY_DIR) / "test_scratch" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& content)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
}

GuidelineSet synthetic_guidelines()
{
    return load_guidelines(synthetic_dir() / "guidelines.json");
}

} // namespace magda::fixture
