#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace polyseq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitCheckFailed = 2;

/// Raised when a self-check or invariant fails (exit code 2).
class CheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(const std::string& bytes);

/// {"version", "seed", "inputs": {label: sha256}}
nlohmann::json make_meta(std::uint64_t seed, const nlohmann::json& inputs = nlohmann::json::object());

/// Writes to `out` when set, otherwise stdout.
void emit(const std::string& text, const std::optional<std::filesystem::path>& out);

struct Check {
  std::string name;
  double value;
  double tolerance;
  bool passed;
  std::optional<std::size_t> skipped;  // finite-difference kinks
};

std::vector<Check> loss_oracle_checks(std::uint64_t seed);
std::vector<Check> orientation_checks(std::uint64_t seed);
/// `corrupt_op` non-empty doubles that op's backward gradient for the duration.
std::vector<Check> gradient_checks(std::uint64_t seed, const std::string& corrupt_op = "");
std::vector<Check> metric_checks(std::uint64_t seed);

struct SelftestOptions {
  std::uint64_t seed = 0;
  std::string corrupt_op;
};

/// Runs every oracle check. Returns the JSON report; `passed` reflects the
/// overall result.
nlohmann::json run_selftest(const SelftestOptions& opt, bool& passed);

}  // namespace polyseq::cli
