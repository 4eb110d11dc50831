#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace mos {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Exit codes of the command-line tool double as error categories.
enum class ErrorCode : int {
  Config = 2,
  Data = 3,
  Numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

std::string_view error_code_name(ErrorCode code);

enum class Modality : std::uint8_t { Optical = 0, Sar = 1 };

std::string_view modality_name(Modality m);
Modality parse_modality(std::string_view text);  // case-insensitive "optical" / "sar"

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to decorrelate derived seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seed for a named stage: FNV-1a of the stage name mixed with the master seed.
/// Re-running one stage in isolation reproduces the stream it had inside a full run.
std::uint64_t stage_seed(std::uint64_t master, std::string_view stage);

/// Seed for the i-th sub-stream of a parent seed.
std::uint64_t sub_seed(std::uint64_t parent, std::uint64_t index);

// Platform-independent samplers. The std:: distributions are implementation
// defined, which would break byte-identical reproducibility across toolchains.
double uniform01(Rng& rng);
double standard_normal(Rng& rng);
double standard_exponential(Rng& rng);
std::size_t uniform_index(Rng& rng, std::size_t n);

}  // namespace mos
