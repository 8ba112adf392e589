#include "lrlab/mlp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lrlab/data.hpp"
#include "lrlab/io.hpp"
#include "lrlab/rng.hpp"

namespace lrlab {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

namespace {

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

std::vector<std::size_t> MlpParams::layer_sizes() const {
  std::vector<std::size_t> sizes;
  if (weights.empty()) return sizes;
  sizes.push_back(weights.front().cols());
  for (const auto& w : weights) sizes.push_back(w.rows());
  return sizes;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

void MlpParams::validate() const {
  if (weights.empty()) throw std::invalid_argument("MlpParams: no layers");
  if (biases.size() != weights.size() || activations.size() != weights.size()) {
    throw std::invalid_argument("MlpParams: weights, biases and activations differ in length");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (biases[l].size() != weights[l].rows()) {
      throw std::invalid_argument("MlpParams: bias length != rows of W_" + std::to_string(l + 1));
    }
    if (l > 0 && weights[l].cols() != weights[l - 1].rows()) {
      throw std::invalid_argument("MlpParams: cols(W_" + std::to_string(l + 1) + ") != rows(W_" +
                                  std::to_string(l) + ")");
    }
  }
}

MlpParams MlpParams::zeros_like() const {
  MlpParams z;
  z.activations = activations;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    z.weights.emplace_back(weights[l].rows(), weights[l].cols());
    z.biases.emplace_back(biases[l].size(), 0.0);
  }
  return z;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("TrainConfig: learning_rate must be finite and >= 0");
  }
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("TrainConfig: Adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("TrainConfig: adam_eps must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be positive");
  if (checkpoint_every == 0) throw std::invalid_argument("TrainConfig: checkpoint_every must be positive");
}

MlpParams init_mlp(std::span<const std::size_t> layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw std::invalid_argument("init_mlp: need at least two layer sizes");
  if (std::find(layer_sizes.begin(), layer_sizes.end(), std::size_t{0}) != layer_sizes.end()) {
    throw std::invalid_argument("init_mlp: layer sizes must be positive");
  }
  Rng rng(seed);
  MlpParams p;
  const std::size_t layers = layer_sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t fan_in = layer_sizes[l];
    Matrix w(layer_sizes[l + 1], fan_in);
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& x : w.data()) x = scale * rng.normal();
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(layer_sizes[l + 1], 0.0);
    p.activations.push_back(l + 1 == layers ? Activation::Identity : Activation::ReLU);
  }
  return p;
}

ForwardTrace forward(const MlpParams& params, std::span<const double> x) {
  params.validate();
  if (x.size() != params.input_dim()) throw std::invalid_argument("forward: input dimension mismatch");
  ForwardTrace t;
  t.input.assign(x.begin(), x.end());
  const Vector* h = &t.input;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    Vector p = params.weights[l] * *h;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += params.biases[l][i];
    Vector a = p;
    std::vector<std::uint8_t> mask(p.size(), 1);
    if (params.activations[l] == Activation::ReLU) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        mask[i] = p[i] > 0.0 ? 1 : 0;
        if (!mask[i]) a[i] = 0.0;
      }
    }
    t.pre_activations.push_back(std::move(p));
    t.activations.push_back(std::move(a));
    t.relu_masks.push_back(std::move(mask));
    h = &t.activations.back();
  }
  return t;
}

Matrix forward_batch(const MlpParams& params, const Matrix& inputs, BatchCache* cache) {
  if (inputs.cols() != params.input_dim()) throw std::invalid_argument("forward_batch: input dimension mismatch");
  if (cache != nullptr) {
    cache->layer_inputs.clear();
    cache->pre_activations.clear();
  }
  Matrix h = inputs;
  const std::size_t batch = inputs.rows();
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    const Matrix& w = params.weights[l];
    const Matrix wt = w.transpose();
    Matrix p(batch, w.rows());
    for (std::size_t b = 0; b < batch; ++b) {
      auto pb = p.row(b);
      std::copy(params.biases[l].begin(), params.biases[l].end(), pb.begin());
      auto hb = h.row(b);
      for (std::size_t k = 0; k < w.cols(); ++k) {
        if (hb[k] != 0.0) axpy(hb[k], wt.row(k), pb);
      }
    }
    Matrix next = p;
    if (params.activations[l] == Activation::ReLU) {
      for (double& v : next.data()) v = v > 0.0 ? v : 0.0;
    }
    if (cache != nullptr) {
      cache->layer_inputs.push_back(std::move(h));
      cache->pre_activations.push_back(std::move(p));
    }
    h = std::move(next);
  }
  return h;
}

MlpParams backward_batch(const MlpParams& params, const BatchCache& cache, const Matrix& d_output,
                         Matrix* d_inputs) {
  const std::size_t layers = params.layer_count();
  if (cache.layer_inputs.size() != layers) throw std::invalid_argument("backward_batch: cache does not match params");
  MlpParams grads = params.zeros_like();
  Matrix g = d_output;
  for (std::size_t li = layers; li-- > 0;) {
    const Matrix& pre = cache.pre_activations[li];
    const Matrix& in = cache.layer_inputs[li];
    if (g.rows() != pre.rows() || g.cols() != pre.cols()) {
      throw std::invalid_argument("backward_batch: gradient shape mismatch");
    }
    if (params.activations[li] == Activation::ReLU) {
      auto gd = g.data();
      auto pd = pre.data();
      for (std::size_t i = 0; i < gd.size(); ++i)
        if (!(pd[i] > 0.0)) gd[i] = 0.0;
    }
    Matrix& dw = grads.weights[li];
    Vector& db = grads.biases[li];
    for (std::size_t b = 0; b < g.rows(); ++b) {
      auto gb = g.row(b);
      auto hb = in.row(b);
      for (std::size_t i = 0; i < gb.size(); ++i) {
        if (gb[i] == 0.0) continue;
        db[i] += gb[i];
        axpy(gb[i], hb, dw.row(i));
      }
    }
    if (li > 0 || d_inputs != nullptr) {
      const Matrix& w = params.weights[li];
      Matrix prev(g.rows(), w.cols());
      for (std::size_t b = 0; b < g.rows(); ++b) {
        auto gb = g.row(b);
        auto pb = prev.row(b);
        for (std::size_t i = 0; i < gb.size(); ++i)
          if (gb[i] != 0.0) axpy(gb[i], w.row(i), pb);
      }
      g = std::move(prev);
    }
  }
  if (d_inputs != nullptr) *d_inputs = std::move(g);
  return grads;
}

double output_loss(const Matrix& outputs, const Targets& targets, LossKind kind, Matrix* d_outputs) {
  const std::size_t batch = outputs.rows();
  const std::size_t width = outputs.cols();
  if (d_outputs != nullptr) *d_outputs = Matrix(batch, width);
  if (kind == LossKind::MeanSquaredError) {
    const auto* y = std::get_if<Matrix>(&targets);
    if (y == nullptr) throw std::invalid_argument("loss: MSE needs real-valued targets");
    if (y->rows() != batch || y->cols() != width) throw std::invalid_argument("loss: MSE target shape != output shape");
    const double denom = static_cast<double>(batch * width);
    double loss = 0.0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      const double r = outputs.data()[i] - y->data()[i];
      loss += r * r;
      if (d_outputs != nullptr) d_outputs->data()[i] = 2.0 * r / denom;
    }
    return loss / denom;
  }
  const auto* labels = std::get_if<std::vector<std::uint32_t>>(&targets);
  if (labels == nullptr) throw std::invalid_argument("loss: cross-entropy needs class-index targets");
  if (labels->size() != batch) throw std::invalid_argument("loss: label count != batch size");
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint32_t label = (*labels)[b];
    if (label >= width) throw std::invalid_argument("loss: class index out of range");
    auto z = outputs.row(b);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double lse = zmax + std::log(sum);
    loss += lse - z[label];
    if (d_outputs != nullptr) {
      auto d = d_outputs->row(b);
      for (std::size_t j = 0; j < width; ++j) d[j] = std::exp(z[j] - lse) / static_cast<double>(batch);
      d[label] -= 1.0 / static_cast<double>(batch);
    }
  }
  return loss / static_cast<double>(batch);
}

LossAndGrad loss_and_grad(const MlpParams& params, const Matrix& batch_x, const Targets& batch_y, LossKind kind) {
  params.validate();
  if (batch_x.rows() == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  BatchCache cache;
  const Matrix out = forward_batch(params, batch_x, &cache);
  Matrix d_out;
  LossAndGrad r;
  r.loss = output_loss(out, batch_y, kind, &d_out);
  r.grads = backward_batch(params, cache, d_out);
  return r;
}

AdamState AdamState::fresh(const MlpParams& params) {
  return AdamState{0, params.zeros_like(), params.zeros_like()};
}

void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state, const TrainConfig& config) {
  const auto shapes = params.layer_sizes();
  if (grads.layer_sizes() != shapes || state.first_moment.layer_sizes() != shapes ||
      state.second_moment.layer_sizes() != shapes) {
    throw std::invalid_argument("adam_step: shape mismatch between params, grads and state");
  }
  state.step += 1;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  const double lr = config.learning_rate;
  const double decay = lr * config.weight_decay;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    auto update = [&](std::span<double> p, std::span<const double> g, std::span<double> m, std::span<double> v,
                      bool is_weight) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        if (is_weight && decay != 0.0) p[i] -= decay * p[i];
        p[i] -= lr * mhat / (std::sqrt(vhat) + config.adam_eps);
      }
    };
    update(params.weights[l].data(), grads.weights[l].data(), state.first_moment.weights[l].data(),
           state.second_moment.weights[l].data(), true);
    update(params.biases[l], grads.biases[l], state.first_moment.biases[l], state.second_moment.biases[l], false);
  }
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = m.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Targets gather_targets(const Dataset& data, std::span<const std::size_t> indices) {
  if (data.kind == TaskKind::Regression) return gather_rows(data.targets, indices);
  std::vector<std::uint32_t> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) labels.push_back(data.labels[i]);
  return labels;
}

std::vector<Checkpoint> train(MlpParams params, const Dataset& data, const TrainConfig& config,
                              const CheckpointObserver& observer) {
  config.validate();
  params.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  data.validate();
  if (data.input_dim() != params.input_dim()) throw std::invalid_argument("train: dataset/network input mismatch");
  const bool wants_labels = config.loss == LossKind::SoftmaxCrossEntropy;
  if (wants_labels != (data.kind == TaskKind::Classification)) {
    throw std::invalid_argument("train: loss kind does not match dataset kind");
  }
  if (!config.use_bias) {
    for (auto& b : params.biases) std::fill(b.begin(), b.end(), 0.0);
  }

  std::vector<Checkpoint> out;
  auto record = [&](std::uint64_t step) {
    out.push_back(Checkpoint{step, params});
    if (observer) observer(out.back());
  };
  record(0);

  AdamState state = AdamState::fresh(params);
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& batch : batches(data.size(), config.batch_size, config.seed, epoch)) {
      const Matrix x = gather_rows(data.inputs, batch);
      const Targets y = gather_targets(data, batch);
      LossAndGrad lg = loss_and_grad(params, x, y, config.loss);
      if (!config.use_bias) {
        for (auto& b : lg.grads.biases) std::fill(b.begin(), b.end(), 0.0);
      }
      adam_step(params, lg.grads, state, config);
      ++step;
      if (step % config.checkpoint_every == 0) record(step);
    }
  }
  if (out.back().step != step) record(step);
  return out;
}

std::vector<std::uint8_t> encode_checkpoint(const MlpParams& params) {
  params.validate();
  std::vector<std::uint8_t> bytes;
  auto put = [&bytes](const void* src, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(src);
    bytes.insert(bytes.end(), p, p + n);
  };
  auto put_u32 = [&](std::uint32_t v) { put(&v, sizeof v); };
  put("MLPC", 4);
  put_u32(1);
  put_u32(static_cast<std::uint32_t>(params.layer_count()));
  for (std::size_t n : params.layer_sizes()) put_u32(static_cast<std::uint32_t>(n));
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    put(params.weights[l].data().data(), params.weights[l].size() * sizeof(double));
    put(params.biases[l].data(), params.biases[l].size() * sizeof(double));
  }
  return bytes;
}

MlpParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  std::size_t off = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() - off < n) throw CheckpointError(std::string("truncated checkpoint while reading ") + what, off);
  };
  auto get_u32 = [&](const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + off, 4);
    off += 4;
    return v;
  };
  need(4, "magic");
  if (std::memcmp(bytes.data(), "MLPC", 4) != 0) throw CheckpointError("bad checkpoint magic", 0);
  off = 4;
  const std::size_t version_at = off;
  if (get_u32("version") != 1) throw CheckpointError("unsupported checkpoint version", version_at);
  const std::size_t layers_at = off;
  const std::uint32_t layers = get_u32("layer count");
  if (layers == 0) throw CheckpointError("checkpoint has zero layers", layers_at);
  std::vector<std::size_t> sizes;
  for (std::uint32_t i = 0; i <= layers; ++i) {
    const std::size_t at = off;
    const std::uint32_t n = get_u32("layer sizes");
    if (n == 0) throw CheckpointError("checkpoint layer size is zero", at);
    sizes.push_back(n);
  }
  MlpParams p;
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::size_t rows = sizes[l + 1];
    const std::size_t cols = sizes[l];
    std::vector<double> w(rows * cols);
    need(w.size() * sizeof(double), "weights");
    std::memcpy(w.data(), bytes.data() + off, w.size() * sizeof(double));
    const std::size_t w_at = off;
    off += w.size() * sizeof(double);
    Vector b(rows);
    need(b.size() * sizeof(double), "biases");
    std::memcpy(b.data(), bytes.data() + off, b.size() * sizeof(double));
    const std::size_t b_at = off;
    off += b.size() * sizeof(double);
    if (!std::all_of(w.begin(), w.end(), [](double x) { return std::isfinite(x); })) {
      throw CheckpointError("non-finite weight", w_at);
    }
    if (!std::all_of(b.begin(), b.end(), [](double x) { return std::isfinite(x); })) {
      throw CheckpointError("non-finite bias", b_at);
    }
    p.weights.emplace_back(rows, cols, std::move(w));
    p.biases.push_back(std::move(b));
    p.activations.push_back(l + 1 == layers ? Activation::Identity : Activation::ReLU);
  }
  if (off != bytes.size()) throw CheckpointError("trailing bytes after checkpoint payload", off);
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const MlpParams& params) {
  const auto bytes = encode_checkpoint(params);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

MlpParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string(), 0);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace lrlab
