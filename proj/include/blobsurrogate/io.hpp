#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace blobsurrogate::io {

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// reader never observes a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

// Little-endian encoding helpers shared by the binary formats.
void put_u32(std::string& out, std::uint32_t value);
void put_f32(std::string& out, float value);

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    std::uint32_t u32();
    float f32();
    std::string_view take(std::size_t n);
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

/// Shortest round-trip decimal text for a double.
std::string format_double(double value);
/// Parses a full token as a double; throws FormatError otherwise.
double parse_double(std::string_view token);

/// Splits `text` into lines, dropping a trailing carriage return on each.
std::vector<std::string_view> split_lines(std::string_view text);
std::vector<std::string_view> split(std::string_view text, char sep);

/// Stable 64-bit mixer used to derive independent RNG streams from a master
/// seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

}  // namespace blobsurrogate::io
