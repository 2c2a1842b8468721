#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "civic/neural.hpp"

namespace civic::neural {

inline constexpr int kCheckpointFormatVersion = 1;

/// Layout: 8-byte magic "CIVICKPT", little-endian uint64 header length, a JSON
/// header {"format_version", "config", "tensors": [{"name", "shape"}]}, then
/// every tensor as little-endian float32 in header order (row-major).
void save_checkpoint(std::ostream& out, const EncoderModel& model);
EncoderModel load_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model);
EncoderModel load_checkpoint(const std::filesystem::path& path);

/// JSON object with the ModelConfig field names.
std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

}  // namespace civic::neural
