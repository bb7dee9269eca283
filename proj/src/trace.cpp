// SPDX-License-Identifier: Apache-2.0
#include "magda/trace.hpp"

#include "magda/error.hpp"

#include <chrono>
#include <ctime>
#include <sstream>

namespace magda {

using nlohmann::json;

std::string_view to_string(TraceKind kind)
{
    switch (kind)
    {
    case TraceKind::run_header: return "run_header";
    case TraceKind::prompt: return "prompt";
    case TraceKind::completion: return "completion";
    case TraceKind::tool_call: return "tool_call";
    case TraceKind::tool_result: return "tool_result";
    case TraceKind::parse_event: return "parse_event";
    case TraceKind::stage_result: return "stage_result";
    case TraceKind::patient_result: return "patient_result";
    }
    return "unknown";
}

std::string iso8601_now()
{
    using namespace std::chrono;
    const auto now = system_clock::now();
    const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
    const std::time_t t = system_clock::to_time_t(now);
    std::tm tm {};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[40];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

PatientTrace::PatientTrace(std::string patient_id)
    : patient_id_(std::move(patient_id))
{
}

void PatientTrace::record(TraceKind kind, std::optional<std::string_view> disease, json fields)
{
    if (!fields.is_object())
        fields = json {{"value", std::move(fields)}};
    fields["kind"] = to_string(kind);
    fields["patient_id"] = patient_id_;
    if (disease)
        fields["disease"] = *disease;
    fields["timestamp"] = iso8601_now();
    records_.push_back(std::move(fields));
}

std::vector<json> PatientTrace::take()
{
    return std::exchange(records_, {});
}

TraceWriter::TraceWriter(const std::filesystem::path& path, bool append)
    : path_(path)
{
    if (path_.has_parent_path())
        std::filesystem::create_directories(path_.parent_path());

    if (append && std::filesystem::exists(path_))
    {
        auto existing = read_trace(path_);
        for (const auto& r : existing.records)
            if (r.contains("seq") && r["seq"].is_number_unsigned())
                next_seq_ = std::max(next_seq_, r["seq"].get<std::uint64_t>() + 1);

        // Drop a torn final line so appended records start on a fresh line.
        std::ifstream in(path_, std::ios::binary);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto keep = content.rfind('\n');
        keep = keep == std::string::npos ? 0 : keep + 1;
        if (keep != content.size())
            std::filesystem::resize_file(path_, keep);
        out_.open(path_, std::ios::binary | std::ios::app);
    }
    else
    {
        out_.open(path_, std::ios::binary | std::ios::trunc);
    }
    if (!out_)
        throw Error("cannot open trace file '" + path_.string() + "' for writing");
}

void TraceWriter::write_locked(json& record)
{
    record["seq"] = next_seq_++;
    out_ << record.dump() << '\n';
    ++written_;
}

void TraceWriter::write_header(json header)
{
    std::lock_guard lock(mutex_);
    header["kind"] = to_string(TraceKind::run_header);
    if (!header.contains("timestamp"))
        header["timestamp"] = iso8601_now();
    write_locked(header);
    out_.flush();
}

void TraceWriter::commit(std::size_t position, std::vector<json> records)
{
    std::lock_guard lock(mutex_);
    pending_[position] = std::move(records);
    drain_locked();
}

void TraceWriter::skip(std::size_t position)
{
    std::lock_guard lock(mutex_);
    pending_[position] = std::nullopt;
    drain_locked();
}

void TraceWriter::drain_locked()
{
    bool wrote = false;
    for (auto it = pending_.find(next_position_); it != pending_.end(); it = pending_.find(next_position_))
    {
        if (it->second)
            for (auto& r : *it->second)
            {
                write_locked(r);
                wrote = true;
            }
        pending_.erase(it);
        ++next_position_;
    }
    if (wrote)
        out_.flush();
    if (!out_)
        throw Error("failed while writing trace file '" + path_.string() + "'");
}

std::uint64_t TraceWriter::records_written() const
{
    std::lock_guard lock(mutex_);
    return written_;
}

TraceContents read_trace(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FileNotFound(path.string());
    TraceContents out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line))
    {
        ++lineno;
        if (line.empty())
            continue;
        try
        {
            auto rec = json::parse(line);
            if (!rec.is_object())
                throw std::invalid_argument("record is not an object");
            out.records.push_back(std::move(rec));
        }
        catch (const std::exception&)
        {
            out.truncated = true;
            out.bad_line = lineno;
            break;
        }
    }
    return out;
}

} // namespace magda
