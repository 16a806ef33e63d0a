#pragma once

#include <span>
#include <string>
#include <vector>

#include "survpfn/prior.hpp"

namespace survpfn {

/// One task as a single-line JSON object:
///
///     {"summary": {...}, "context": {"x": [[..]..], "time": [..], "event": [..],
///      "event_latent": [..], "censor_latent": [..]},
///      "query": {"x": [[..]..], "event_latent": [..], "censor_latent": [..]}}
///
/// Doubles are written in shortest round-trip form, so parsing restores them
/// bit for bit.
std::string task_to_json(const TaskSample& task);
TaskSample task_from_json(const std::string& line);

void write_tasks_jsonl(const std::string& path, std::span<const TaskSample> tasks);
std::vector<TaskSample> read_tasks_jsonl(const std::string& path);

/// Binary corpus: 16-byte header ("SPFNTASK", u32 version, u32 flags), u64 task
/// count, then per task the summary fields, dimensions and row-major f64
/// arrays. All integers and floats are little-endian.
inline constexpr std::uint32_t kTaskFileVersion = 1;

std::vector<unsigned char> serialize_tasks(std::span<const TaskSample> tasks);
std::vector<TaskSample> deserialize_tasks(std::span<const unsigned char> bytes);

void write_tasks_binary(const std::string& path, std::span<const TaskSample> tasks);
std::vector<TaskSample> read_tasks_binary(const std::string& path);

}  // namespace survpfn
