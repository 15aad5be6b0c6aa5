#include "stonefuse/io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace stonefuse::io {

namespace {

void check_stream(const std::ios& s, const std::filesystem::path& file, const char* what) {
    if (!s) throw std::runtime_error(std::string(what) + " failed for " + file.string());
}

template <typename UInt>
void put_le(std::string& out, UInt v) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

template <typename UInt>
UInt get_le(const char* p) {
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        v |= static_cast<UInt>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return v;
}

std::string read_bytes(const std::filesystem::path& file, std::size_t expected) {
    std::ifstream in(file, std::ios::binary);
    check_stream(in, file, "open");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != expected) {
        throw std::runtime_error("size mismatch for " + file.string() + ": expected " +
                                 std::to_string(expected) + " bytes, got " +
                                 std::to_string(bytes.size()));
    }
    return bytes;
}

void write_bytes(const std::filesystem::path& file, const std::string& bytes) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    check_stream(out, file, "open");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    check_stream(out, file, "write");
}

}  // namespace

void write_f32raw(const std::filesystem::path& file, const std::vector<double>& values) {
    std::string bytes;
    bytes.reserve(values.size() * 4);
    for (double d : values) put_le(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(d)));
    write_bytes(file, bytes);
}

std::vector<double> read_f32raw(const std::filesystem::path& file, std::size_t expected_count) {
    const std::string bytes = read_bytes(file, expected_count * 4);
    std::vector<double> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) {
        out[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes.data() + i * 4)));
    }
    return out;
}

void write_f64raw(const std::filesystem::path& file, const std::vector<double>& values) {
    std::string bytes;
    bytes.reserve(values.size() * 8);
    for (double d : values) put_le(bytes, std::bit_cast<std::uint64_t>(d));
    write_bytes(file, bytes);
}

std::vector<double> read_f64raw(const std::filesystem::path& file, std::size_t expected_count) {
    const std::string bytes = read_bytes(file, expected_count * 8);
    std::vector<double> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) {
        out[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes.data() + i * 8));
    }
    return out;
}

void write_u8raw(const std::filesystem::path& file, const std::vector<std::uint8_t>& values) {
    std::string bytes(values.begin(), values.end());
    write_bytes(file, bytes);
}

std::vector<std::uint8_t> read_u8raw(const std::filesystem::path& file, std::size_t expected_count) {
    const std::string bytes = read_bytes(file, expected_count);
    return std::vector<std::uint8_t>(bytes.begin(), bytes.end());
}

void write_text(const std::filesystem::path& file, const std::string& content) {
    write_bytes(file, content);
}

std::string read_text(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    check_stream(in, file, "open");
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace stonefuse::io
