#include "mos/common.hpp"

#include <cctype>
#include <cmath>
#include <numbers>

namespace mos {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config: return "E_CONFIG";
    case ErrorCode::Data: return "E_DATA";
    case ErrorCode::Numeric: return "E_NUMERIC";
  }
  return "E_UNKNOWN";
}

std::string_view modality_name(Modality m) { return m == Modality::Optical ? "optical" : "sar"; }

Modality parse_modality(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  std::string lower;
  for (char c : text) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "optical") return Modality::Optical;
  if (lower == "sar") return Modality::Sar;
  fail(ErrorCode::Data, "unknown modality '" + std::string(text) + "'");
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stage_seed(std::uint64_t master, std::string_view stage) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stage) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(master ^ mix64(h));
}

std::uint64_t sub_seed(std::uint64_t parent, std::uint64_t index) { return mix64(parent + mix64(index + 1)); }

double uniform01(Rng& rng) {
  // 53 random bits -> [0, 1)
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(Rng& rng) {
  // Box-Muller, one draw per call; u1 kept away from zero.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double standard_exponential(Rng& rng) { return -std::log(1.0 - uniform01(rng)); }

std::size_t uniform_index(Rng& rng, std::size_t n) {
  // Rejection sampling avoids modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return static_cast<std::size_t>(r % n);
}

}  // namespace mos
