#include "sacbf/util.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace sacbf {

uint64_t fnv1a(const std::string& text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::string>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << header << "\n";
  for (const auto& row : rows) out << row << "\n";
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v,
                                 std::chars_format::general, 17);
  (void)ec;
  return std::string(buf, ptr);
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

void ensure_directory(const std::string& path) {
  std::filesystem::create_directories(path);
}

}  // namespace sacbf
