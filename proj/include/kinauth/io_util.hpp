#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace kinauth {

// Atomic file write: content goes to a temp file in the target directory,
// which is renamed over the destination once complete.
void write_file_atomic(const std::filesystem::path& dest,
                       const std::function<void(std::ostream&)>& writer);

std::vector<std::string> split_csv_line(const std::string& line);

// Strict finite-decimal parse; returns false on trailing garbage, NaN, inf.
bool parse_double(const std::string& s, double& out);

// Little-endian 32-bit helpers for the flat binary artifact formats.
void put_u32(std::ostream& os, std::uint32_t v);
void put_f32(std::ostream& os, float v);
std::uint32_t get_u32(std::istream& is);
float get_f32(std::istream& is);

}  // namespace kinauth
