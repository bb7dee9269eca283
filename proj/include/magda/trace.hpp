// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace magda {

enum class TraceKind
{
    run_header,
    prompt,
    completion,
    tool_call,
    tool_result,
    parse_event,
    stage_result,
    patient_result,
};

std::string_view to_string(TraceKind kind);

/// UTC wall clock as 2026-01-31T12:34:56.789Z.
std::string iso8601_now();

/// Records of one patient, buffered until the patient is committed so that
/// each patient's records land contiguously in the trace file.
class PatientTrace
{
public:
    explicit PatientTrace(std::string patient_id);

    void record(TraceKind kind, std::optional<std::string_view> disease, nlohmann::json fields = nlohmann::json::object());

    const std::string& patient_id() const noexcept { return patient_id_; }
    const std::vector<nlohmann::json>& records() const noexcept { return records_; }
    std::vector<nlohmann::json> take();

private:
    std::string patient_id_;
    std::vector<nlohmann::json> records_;
};

/// Serialized JSON Lines sink.
///
/// Patient blocks are committed with their manifest position and written in
/// that order, whatever order the workers finish in; every position must be
/// either committed or skipped. Sequence numbers are assigned at write time.
class TraceWriter
{
public:
    /// `append` keeps existing records (a torn final line is cut off) and
    /// continues numbering after the highest seq found.
    TraceWriter(const std::filesystem::path& path, bool append);

    void write_header(nlohmann::json header);
    void commit(std::size_t position, std::vector<nlohmann::json> records);
    void skip(std::size_t position);

    std::uint64_t records_written() const;
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    void drain_locked();
    void write_locked(nlohmann::json& record);

    std::filesystem::path path_;
    std::ofstream out_;
    mutable std::mutex mutex_;
    std::uint64_t next_seq_ = 0;
    std::uint64_t written_ = 0;
    std::size_t next_position_ = 0;
    std::map<std::size_t, std::optional<std::vector<nlohmann::json>>> pending_;
};

struct TraceContents
{
    std::vector<nlohmann::json> records;
    bool truncated = false;   // a line failed to parse; reading stopped there
    std::size_t bad_line = 0; // 1-based line of the first unreadable record
};

TraceContents read_trace(const std::filesystem::path& path);

} // namespace magda
