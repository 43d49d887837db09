#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace mvssl {

// Binary container shared by datasets and checkpoints:
//   magic (fixed length) | u32 version | u64 header length | JSON header |
//   u64 payload count | f64 payload | u32 CRC32 of the payload bytes.
// All integers and floats are little-endian.
struct Container {
    nlohmann::json header;
    std::vector<double> payload;
};

std::uint32_t crc32_of(const void* data, std::size_t bytes);

void write_container(const std::string& path, const std::string& magic, std::uint32_t version,
                     const Container& c);

// Throws DataError on I/O failure, wrong magic or version, truncation, or CRC mismatch.
Container read_container(const std::string& path, const std::string& magic, std::uint32_t version);

}  // namespace mvssl
