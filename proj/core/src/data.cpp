#include "lrlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>

#include "lrlab/io.hpp"
#include "lrlab/rng.hpp"

namespace lrlab {

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t offset) {
  const auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])); };
  return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>(v & 0xFF));
}

std::string read_idx_file(const std::filesystem::path& path) {
  try {
    return read_file(path);
  } catch (const std::exception&) {
    throw IdxError(IdxError::Kind::Unreadable, "cannot read IDX file " + path.string());
  }
}

void append_matrix(std::ostringstream& os, const char* name, const Matrix& m) {
  os << name << ' ' << m.rows() << ' ' << m.cols();
  for (double v : m.data()) os << ' ' << format_real(v);
  os << ';';
}

}  // namespace

void Dataset::validate() const {
  if (inputs.rows() == 0) throw std::invalid_argument("Dataset: empty");
  if (kind == TaskKind::Regression) {
    if (targets.rows() != inputs.rows()) throw std::invalid_argument("Dataset: input/target count mismatch");
  } else {
    if (labels.size() != inputs.rows()) throw std::invalid_argument("Dataset: input/label count mismatch");
    for (std::uint32_t c : labels)
      if (c >= class_count) throw std::invalid_argument("Dataset: class index >= class count");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw std::invalid_argument("Dataset::subset: empty index list");
  Dataset d;
  d.kind = kind;
  d.class_count = class_count;
  d.inputs = Matrix(indices.size(), inputs.cols());
  if (kind == TaskKind::Regression) d.targets = Matrix(indices.size(), targets.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw std::out_of_range("Dataset::subset: index out of range");
    std::copy(inputs.row(src).begin(), inputs.row(src).end(), d.inputs.row(i).begin());
    if (kind == TaskKind::Regression) {
      std::copy(targets.row(src).begin(), targets.row(src).end(), d.targets.row(i).begin());
    } else {
      d.labels.push_back(labels[src]);
    }
  }
  std::ostringstream os;
  os << digest << "|subset";
  for (std::size_t i : indices) os << ',' << i;
  d.digest = sha256_hex(os.str());
  return d;
}

Matrix JointGaussianSpec::joint_covariance() const {
  const std::size_t n = sigma_x.rows();
  const std::size_t m = sigma_y.rows();
  if (sigma_x.cols() != n || sigma_y.cols() != m || sigma_xy.rows() != n || sigma_xy.cols() != m) {
    throw std::invalid_argument("JointGaussianSpec: block shapes are inconsistent");
  }
  Matrix c(n + m, n + m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) c(i, j) = sigma_x(i, j);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) c(n + i, n + j) = sigma_y(i, j);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) c(i, n + j) = c(n + j, i) = sigma_xy(i, j);
  return c;
}

Dataset sample_joint_gaussian(const JointGaussianSpec& spec) {
  if (spec.sample_count == 0) throw std::invalid_argument("sample_joint_gaussian: sample_count must be positive");
  const Matrix joint = spec.joint_covariance();
  Matrix chol;
  try {
    chol = cholesky(joint);
  } catch (const NotPositiveDefiniteError&) {
    Matrix jittered = joint;
    for (std::size_t i = 0; i < joint.rows(); ++i) jittered(i, i) += 1e-10;
    chol = cholesky(jittered);
  }
  const std::size_t n = spec.sigma_x.rows();
  const std::size_t m = spec.sigma_y.rows();
  Dataset d;
  d.kind = TaskKind::Regression;
  d.inputs = Matrix(spec.sample_count, n);
  d.targets = Matrix(spec.sample_count, m);
  Rng rng(spec.seed);
  Vector z(n + m);
  for (std::size_t s = 0; s < spec.sample_count; ++s) {
    rng.fill_normal(z);
    for (std::size_t i = 0; i < n + m; ++i) {
      double v = 0.0;
      for (std::size_t k = 0; k <= i; ++k) v += chol(i, k) * z[k];
      if (i < n) {
        d.inputs(s, i) = v;
      } else {
        d.targets(s, i - n) = v;
      }
    }
  }
  std::ostringstream os;
  os << "joint_gaussian;";
  append_matrix(os, "sigma_x", spec.sigma_x);
  append_matrix(os, "sigma_y", spec.sigma_y);
  append_matrix(os, "sigma_xy", spec.sigma_xy);
  os << "count " << spec.sample_count << ";seed " << spec.seed;
  d.digest = sha256_hex(os.str());
  return d;
}

Matrix synthetic_regression_map(std::size_t n_in, std::size_t n_out, std::uint64_t seed) {
  if (n_in == 0 || n_out == 0) throw std::invalid_argument("synthetic_regression_map: dimensions must be positive");
  Rng rng(Rng::derive(seed, 0xC0));
  Matrix c(n_out, n_in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n_in));
  for (double& v : c.data()) v = scale * rng.normal();
  return c;
}

Dataset synthetic_regression_set(std::size_t n_in, std::size_t n_out, std::size_t sample_count, std::uint64_t seed) {
  if (sample_count == 0) throw std::invalid_argument("synthetic_regression_set: sample_count must be positive");
  const Matrix c = synthetic_regression_map(n_in, n_out, seed);
  Dataset d;
  d.kind = TaskKind::Regression;
  d.inputs = Matrix(sample_count, n_in);
  d.targets = Matrix(sample_count, n_out);
  Rng rng(Rng::derive(seed, 0xDA7A));
  for (std::size_t s = 0; s < sample_count; ++s) {
    auto x = d.inputs.row(s);
    rng.fill_normal(x);
    auto y = d.targets.row(s);
    for (std::size_t j = 0; j < n_out; ++j) y[j] = dot(c.row(j), x) + 0.1 * rng.normal();
  }
  std::ostringstream os;
  os << "synthetic_regression;n_in " << n_in << ";n_out " << n_out << ";count " << sample_count << ";seed " << seed;
  d.digest = sha256_hex(os.str());
  return d;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const std::string images = read_idx_file(images_path);
  const std::string labels = read_idx_file(labels_path);

  if (images.size() < 4) throw IdxError(IdxError::Kind::Truncated, images_path.string() + ": truncated header");
  if (read_be32(images, 0) != kIdxImageMagic) {
    throw IdxError(IdxError::Kind::WrongMagic, images_path.string() + ": wrong magic for an image file");
  }
  if (images.size() < 16) throw IdxError(IdxError::Kind::Truncated, images_path.string() + ": truncated header");
  const std::uint64_t count = read_be32(images, 4);
  const std::uint64_t rows = read_be32(images, 8);
  const std::uint64_t cols = read_be32(images, 12);
  if (count == 0 || rows == 0 || cols == 0) {
    throw IdxError(IdxError::Kind::BadHeader, images_path.string() + ": zero dimension in header");
  }
  const std::uint64_t pixels = rows * cols;
  if (images.size() < 16 + count * pixels) {
    throw IdxError(IdxError::Kind::Truncated, images_path.string() + ": payload shorter than header declares");
  }

  if (labels.size() < 4) throw IdxError(IdxError::Kind::Truncated, labels_path.string() + ": truncated header");
  if (read_be32(labels, 0) != kIdxLabelMagic) {
    throw IdxError(IdxError::Kind::WrongMagic, labels_path.string() + ": wrong magic for a label file");
  }
  if (labels.size() < 8) throw IdxError(IdxError::Kind::Truncated, labels_path.string() + ": truncated header");
  const std::uint64_t label_count = read_be32(labels, 4);
  if (labels.size() < 8 + label_count) {
    throw IdxError(IdxError::Kind::Truncated, labels_path.string() + ": payload shorter than header declares");
  }
  if (label_count != count) {
    throw IdxError(IdxError::Kind::CountMismatch, "IDX image count " + std::to_string(count) +
                                                      " != label count " + std::to_string(label_count));
  }

  Dataset d;
  d.kind = TaskKind::Classification;
  d.inputs = Matrix(count, pixels);
  auto dst = d.inputs.data();
  for (std::uint64_t i = 0; i < count * pixels; ++i) {
    dst[i] = static_cast<double>(static_cast<unsigned char>(images[16 + i])) / 255.0;
  }
  d.labels.resize(count);
  std::uint32_t max_label = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    d.labels[i] = static_cast<unsigned char>(labels[8 + i]);
    max_label = std::max(max_label, d.labels[i]);
  }
  d.class_count = max_label + 1;
  d.digest = sha256_hex(sha256_hex(images) + sha256_hex(labels));
  return d;
}

void write_idx_images(const std::filesystem::path& path, std::uint32_t rows, std::uint32_t cols,
                      const std::vector<std::uint8_t>& pixels) {
  const std::size_t per = static_cast<std::size_t>(rows) * cols;
  if (per == 0 || pixels.size() % per != 0) throw std::invalid_argument("write_idx_images: pixel count mismatch");
  std::string out;
  put_be32(out, kIdxImageMagic);
  put_be32(out, static_cast<std::uint32_t>(pixels.size() / per));
  put_be32(out, rows);
  put_be32(out, cols);
  out.append(pixels.begin(), pixels.end());
  write_file_atomic(path, out);
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::string out;
  put_be32(out, kIdxLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.append(labels.begin(), labels.end());
  write_file_atomic(path, out);
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be positive");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(Rng::derive(seed, 0xE90C0000ULL + epoch));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(perm[i - 1], perm[j]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<std::vector<std::size_t>> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
  return batches(data.size(), batch_size, seed, epoch);
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::uint64_t seed) {
  auto perm = batches(n, std::max<std::size_t>(n, 1), Rng::derive(seed, 0x5A3B1E), 0);
  std::vector<std::size_t> idx = perm.empty() ? std::vector<std::size_t>{} : perm.front();
  if (count < idx.size()) idx.resize(count);
  return idx;
}

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("LRLAB_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return "data";
}

Dataset load_image_dataset(const std::string& name, const std::string& split) {
  if (name != "mnist" && name != "fashion-mnist") throw std::invalid_argument("unknown image dataset '" + name + "'");
  if (split != "train" && split != "t10k") throw std::invalid_argument("unknown split '" + split + "'");
  const auto dir = data_dir() / name;
  return load_idx(dir / (split + "-images-idx3-ubyte"), dir / (split + "-labels-idx1-ubyte"));
}

}  // namespace lrlab
