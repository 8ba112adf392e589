#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrlab::cli {

/// Bad command-line usage; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<double> eps;
  std::filesystem::path out_dir;
  std::size_t threads = 1;
  bool gnuplot = false;
};

struct IbAnalyticOptions {
  std::optional<std::filesystem::path> problem;
  std::vector<double> betas;
  std::optional<double> beta_min;
  std::optional<double> beta_max;
  std::optional<std::size_t> beta_count;
};

struct VerifyBoundsOptions {
  std::filesystem::path checkpoint;
  std::string task;
  std::optional<double> witness_bound;
  std::optional<std::size_t> witness_depth;
  std::size_t sample_size = 256;
  bool keep_biases = false;
};

void cmd_train_track(const CommonOptions& common, std::ostream& out, std::ostream& log);
void cmd_ib_analytic(const CommonOptions& common, const IbAnalyticOptions& opts, std::ostream& out,
                     std::ostream& log);
void cmd_vib_sweep(const CommonOptions& common, std::ostream& out, std::ostream& log);
void cmd_verify_bounds(const CommonOptions& common, const VerifyBoundsOptions& opts, std::ostream& out,
                       std::ostream& log);

/// Parses argv (without the program name) and dispatches. Returns the process
/// exit code: 0 when a manifest was written, 2 for usage errors, 1 otherwise.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lrlab::cli
