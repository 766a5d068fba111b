#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "streamline/error.hpp"
#include "streamline/model.hpp"

namespace streamline {

using json = nlohmann::json;

// Structured failure while reading a persisted artifact.
class FormatError : public DataError {
public:
    enum class Kind { Io, Manifest, BlobMismatch, UnknownTensor, Checksum, Truncated, Fingerprint };

    FormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

std::uint32_t crc32_of(std::span<const unsigned char> bytes);
std::uint32_t crc32_of(std::span<const float> values);

std::vector<unsigned char> read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

// Canonical JSON text for every report the toolkit writes: two-space indent,
// sorted keys, shortest round-trip float formatting, trailing newline.
std::string dump_json(const json& j);
json read_json(const std::filesystem::path& path);

json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const json& j);

} // namespace streamline
