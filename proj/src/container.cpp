#include "mvssl/container.hpp"

#include "mvssl/common.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

namespace mvssl {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

std::uint32_t crc32_of(const void* data, std::size_t bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    const auto* p = static_cast<const Bytef*>(data);
    while (bytes > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes, 1u << 30));
        crc = ::crc32(crc, p, chunk);
        p += chunk;
        bytes -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw DataError(path + ": checksum error (file truncated)");
    return v;
}

}  // namespace

void write_container(const std::string& path, const std::string& magic, std::uint32_t version,
                     const Container& c) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");
    const std::string header = c.header.dump();
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    put<std::uint32_t>(out, version);
    put<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    put<std::uint64_t>(out, c.payload.size());
    const std::size_t bytes = c.payload.size() * sizeof(double);
    out.write(reinterpret_cast<const char*>(c.payload.data()), static_cast<std::streamsize>(bytes));
    put<std::uint32_t>(out, crc32_of(c.payload.data(), bytes));
    if (!out) throw DataError(path + ": write failed");
}

Container read_container(const std::string& path, const std::string& magic, std::uint32_t version) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open for reading");

    std::string got(magic.size(), '\0');
    if (!in.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic)
        throw DataError(path + ": version mismatch (bad magic, expected " + magic + ")");
    const auto ver = get<std::uint32_t>(in, path);
    if (ver != version)
        throw DataError(path + ": version mismatch (file " + std::to_string(ver) + ", expected " +
                        std::to_string(version) + ")");

    const auto hlen = get<std::uint64_t>(in, path);
    if (hlen > (1ull << 34)) throw DataError(path + ": corrupt header length");
    std::string header(hlen, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(hlen)))
        throw DataError(path + ": checksum error (file truncated)");

    Container c;
    try {
        c.header = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": corrupt header: " + e.what());
    }

    const auto n = get<std::uint64_t>(in, path);
    if (n > (1ull << 36)) throw DataError(path + ": corrupt payload length");
    c.payload.resize(n);
    if (!in.read(reinterpret_cast<char*>(c.payload.data()), static_cast<std::streamsize>(n * sizeof(double))))
        throw DataError(path + ": checksum error (file truncated)");
    const auto crc = get<std::uint32_t>(in, path);
    if (crc != crc32_of(c.payload.data(), n * sizeof(double)))
        throw DataError(path + ": checksum error (CRC32 mismatch)");
    return c;
}

}  // namespace mvssl
