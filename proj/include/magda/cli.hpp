// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace magda::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFatal = 1;
inline constexpr int kExitPartial = 2;

struct RunArgs
{
    std::filesystem::path config;
    std::vector<std::string> overrides;
    bool resume = false;
};

struct EvalArgs
{
    std::vector<std::filesystem::path> traces;
    std::vector<std::string> exclude;      // defaults to the run's evaluation.exclude_labels
    std::vector<std::string> tail;         // defaults to the run's evaluation.tail_labels
    std::optional<std::string> stage;      // final | diagnosis
    std::string format = "text";           // text | json
};

struct AblateArgs
{
    std::vector<std::filesystem::path> configs;
    std::vector<std::string> overrides; // applied to every config
};

int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_inspect(const std::filesystem::path& trace, const std::string& patient_id, std::ostream& out,
                std::ostream& err);
int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err);
int cmd_validate(const std::filesystem::path& config, const std::vector<std::string>& overrides, std::ostream& out,
                 std::ostream& err);

/// Parses argv and dispatches to a command.
int main(int argc, char** argv, std::ostream& out, std::ostream& err);

} // namespace magda::cli
