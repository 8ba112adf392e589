#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrlab/dataset.hpp"
#include "lrlab/linalg.hpp"

namespace lrlab {

/// Joint Gaussian over (x, y) with block covariance [[sx, sxy], [sxy^T, sy]].
struct JointGaussianSpec {
  Matrix sigma_x;
  Matrix sigma_y;
  Matrix sigma_xy;
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;

  Matrix joint_covariance() const;
};

/// Draws pairs through the Cholesky factor of the joint covariance. A jitter of
/// 1e-10 on the diagonal is allowed for singular (PSD but not PD) joints.
Dataset sample_joint_gaussian(const JointGaussianSpec& spec);

/// x ~ N(0, I_n_in), y = C x + 0.1 xi with C ~ N(0, 1/n_in) fixed by the seed.
Dataset synthetic_regression_set(std::size_t n_in, std::size_t n_out, std::size_t sample_count,
                                 std::uint64_t seed);

/// The cross-covariance C of synthetic_regression_set for a given seed.
Matrix synthetic_regression_map(std::size_t n_in, std::size_t n_out, std::uint64_t seed);

class IdxError : public std::runtime_error {
 public:
  enum class Kind { Unreadable, WrongMagic, Truncated, CountMismatch, BadHeader };
  IdxError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parses an IDX image/label pair (big-endian headers, u8 payload). Pixels are
/// divided by 255 and flattened row-major.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

void write_idx_images(const std::filesystem::path& path, std::uint32_t rows, std::uint32_t cols,
                      const std::vector<std::uint8_t>& pixels);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

/// Seeded permutation of 0..n-1 for (seed, epoch), cut into batches; the last
/// batch may be short.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch);
std::vector<std::vector<std::size_t>> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch);

/// `count` distinct indices drawn without replacement (all of them when count >= n).
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::uint64_t seed);

/// $LRLAB_DATA_DIR, or ./data when unset.
std::filesystem::path data_dir();

/// Loads <data_dir>/<name>/<split>-{images-idx3,labels-idx1}-ubyte, name being
/// "mnist" or "fashion-mnist" and split "train" or "t10k".
Dataset load_image_dataset(const std::string& name, const std::string& split);

}  // namespace lrlab
