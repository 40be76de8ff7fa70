#include "sagkit/binary_io.hpp"

#include "sagkit/errors.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <string>

namespace sagkit::binio {

void Writer::magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }

void Writer::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(std::uint8_t((v >> (8 * i)) & 0xFFu));
}

void Writer::f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(std::uint8_t((bits >> (8 * i)) & 0xFFu));
}

void Writer::f32_blob(const std::vector<double>& values) {
    u32(std::uint32_t(values.size()));
    for (double v : values) u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

void Writer::f64_blob(const std::vector<double>& values) {
    u32(std::uint32_t(values.size()));
    for (double v : values) f64(v);
}

void Reader::need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("truncated binary file");
}

void Reader::expect_magic(std::string_view tag) {
    need(tag.size());
    if (std::string_view(reinterpret_cast<const char*>(bytes_.data() + pos_), tag.size()) != tag)
        throw IoError("bad magic header, expected \"" + std::string(tag) + "\"");
    pos_ += tag.size();
}

std::uint32_t Reader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + std::size_t(i)]) << (8 * i);
    pos_ += 4;
    return v;
}

double Reader::f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes_[pos_ + std::size_t(i)]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
}

std::vector<double> Reader::f32_blob(std::size_t expected_count) {
    const std::uint32_t count = u32();
    if (count != expected_count)
        throw IoError("blob has " + std::to_string(count) + " values, architecture expects " +
                      std::to_string(expected_count));
    std::vector<double> out(count);
    for (auto& v : out) v = double(std::bit_cast<float>(u32()));
    return out;
}

std::vector<double> Reader::f64_blob(std::size_t expected_count) {
    const std::uint32_t count = u32();
    if (count != expected_count)
        throw IoError("blob has " + std::to_string(count) + " values, expected " + std::to_string(expected_count));
    std::vector<double> out(count);
    for (auto& v : out) v = f64();
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

}  // namespace sagkit::binio
