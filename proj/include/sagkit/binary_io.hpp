#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace sagkit::binio {

/// Appends little-endian values to a byte buffer.
class Writer {
public:
    void magic(std::string_view tag);
    void u32(std::uint32_t v);
    void f64(double v);
    /// Length-prefixed (u32) array of f32.
    void f32_blob(const std::vector<double>& values);
    void f64_blob(const std::vector<double>& values);

    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

/// Reads little-endian values; throws IoError on truncation.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void expect_magic(std::string_view tag);
    std::uint32_t u32();
    double f64();
    std::vector<double> f32_blob(std::size_t expected_count);
    std::vector<double> f64_blob(std::size_t expected_count);
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const;
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace sagkit::binio
