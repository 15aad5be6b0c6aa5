#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stonefuse::io {

// Raw buffers are written little-endian regardless of host byte order.

void write_f32raw(const std::filesystem::path& file, const std::vector<double>& values);
std::vector<double> read_f32raw(const std::filesystem::path& file, std::size_t expected_count);

void write_f64raw(const std::filesystem::path& file, const std::vector<double>& values);
std::vector<double> read_f64raw(const std::filesystem::path& file, std::size_t expected_count);

void write_u8raw(const std::filesystem::path& file, const std::vector<std::uint8_t>& values);
std::vector<std::uint8_t> read_u8raw(const std::filesystem::path& file, std::size_t expected_count);

void write_text(const std::filesystem::path& file, const std::string& content);
std::string read_text(const std::filesystem::path& file);

/// Stable decimal formatting for CSV output ("%.12g").
std::string fmt(double v);

}  // namespace stonefuse::io
