#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "config.hpp"
#include "lrlab/bounds.hpp"
#include "lrlab/data.hpp"
#include "lrlab/gaussian_ib.hpp"
#include "lrlab/io.hpp"
#include "lrlab/local_rank.hpp"
#include "lrlab/mlp.hpp"
#include "lrlab/rng.hpp"
#include "lrlab/vib.hpp"
#include "manifest.hpp"

namespace lrlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kDataSalt = 0xDA7A5E7;
constexpr std::uint64_t kEvalDataSalt = 0xE7A1DA7A;
constexpr std::uint64_t kRankSampleSalt = 0x5A3B1E;

Config open_config(const CommonOptions& common, bool required) {
  Config cfg = common.config ? Config::load(*common.config) : Config::parse("", "<defaults>");
  if (required && !common.config) throw UsageError("--config is required for this command");
  if (common.seed) cfg.set("seed", std::to_string(*common.seed));
  return cfg;
}

void prepare_out_dir(const fs::path& dir) {
  fs::create_directories(dir);
  fs::remove(dir / kManifestName);
}

json rank_json(const RankEstimate& r) {
  return {{"layer", r.layer}, {"eps", r.eps}, {"mean_rank", r.mean_rank}, {"std_rank", r.std_rank},
          {"sample_size", r.sample_size}};
}

std::string join_reals(const Vector& v, const char* sep = " ") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + format_real(v[i]);
  return s;
}

Matrix sample_rows(const Matrix& inputs, std::size_t count, std::uint64_t seed) {
  return gather_rows(inputs, sample_indices(inputs.rows(), count, Rng::derive(seed, kRankSampleSalt)));
}

Dataset load_images(const std::string& name, const std::string& split, std::size_t count, std::uint64_t seed) {
  Dataset d = load_image_dataset(name, split);
  if (count == 0 || count >= d.size()) return d;
  return d.subset(sample_indices(d.size(), count, Rng::derive(seed, kDataSalt)));
}

bool is_image_dataset(const std::string& name) { return name == "mnist" || name == "fashion-mnist"; }

// ---------------------------------------------------------------- train-track

struct TrackSetup {
  std::string dataset;
  Dataset data;
  Matrix rank_sample;
  TrainConfig train;
  double eps = 1e-2;
  EpsMode mode = EpsMode::Absolute;
};

TrackSetup track_setup(Config& cfg) {
  TrackSetup s;
  s.dataset = cfg.get_string("dataset");
  const std::uint64_t seed = cfg.get_u64("seed", 0);
  s.train.seed = seed;
  if (s.dataset == "synthetic") {
    s.train.layer_sizes = cfg.get_sizes("layer_sizes", std::vector<std::size_t>{100, 200, 200, 2});
    if (s.train.layer_sizes.size() < 2) throw ConfigError(cfg.source(), 0, "'layer_sizes': need at least two sizes");
    const std::size_t n = cfg.get_size("train_count", 2048);
    s.data = synthetic_regression_set(s.train.layer_sizes.front(), s.train.layer_sizes.back(), n,
                                      cfg.get_u64("data_seed", seed));
    s.train.loss = LossKind::MeanSquaredError;
  } else if (is_image_dataset(s.dataset)) {
    s.train.layer_sizes = cfg.get_sizes("layer_sizes", std::vector<std::size_t>{784, 200, 200, 200, 10});
    s.data = load_images(s.dataset, "train", cfg.get_size("train_count", 0), seed);
    s.train.loss = LossKind::SoftmaxCrossEntropy;
  } else {
    throw ConfigError(cfg.source(), 0, "'dataset': expected synthetic, mnist or fashion-mnist, got '" + s.dataset + "'");
  }
  if (s.train.layer_sizes.size() < 2 || s.train.layer_sizes.front() != s.data.input_dim())
    throw ConfigError(cfg.source(), 0, "'layer_sizes': first size must equal the input dimension " +
                                           std::to_string(s.data.input_dim()));
  s.train.learning_rate = cfg.get_double("learning_rate", 1e-4);
  s.train.batch_size = cfg.get_size("batch_size", 64);
  s.train.epochs = cfg.get_size("epochs", 1);
  s.train.weight_decay = cfg.get_double("weight_decay", 0.0);
  s.train.use_bias = cfg.get_bool("use_bias", true);
  s.train.checkpoint_every = cfg.get_u64("checkpoint_every", 100);
  s.train.validate();
  s.eps = cfg.get_double("eps", 1e-2);
  if (!(s.eps > 0.0)) throw ConfigError(cfg.source(), 0, "'eps' must be positive");
  s.mode = eps_mode_from_string(cfg.get_string("eps_mode", std::string("absolute")));
  s.rank_sample = sample_rows(s.data.inputs, cfg.get_size("rank_sample_size", 256), seed);
  return s;
}

std::string rank_series_gnuplot(std::size_t layers) {
  std::ostringstream g;
  g << "set datafile separator ','\n"
    << "set xlabel 'optimizer step'\nset ylabel 'mean local rank'\nset key outside right\n"
    << "plot for [l=1:" << layers << "] 'rank_series.csv' every ::1 using 1:($2==l ? $4 : 1/0) "
    << "with linespoints title sprintf('layer %d', l)\n"
    << "pause mouse close\n";
  return g.str();
}

// ---------------------------------------------------------------- beta grids

std::vector<double> beta_grid_from(Config& cfg) {
  std::vector<double> betas;
  if (cfg.has("betas")) {
    betas = cfg.get_doubles("betas");
  } else if (cfg.has("beta_min") || cfg.has("beta_max") || cfg.has("beta_count")) {
    const double lo = cfg.get_double("beta_min");
    const double hi = cfg.get_double("beta_max");
    betas = log_spaced(lo, hi, cfg.get_size("beta_count"));
  }
  return betas;
}

void check_beta_grid(const std::vector<double>& betas) {
  if (betas.empty()) throw UsageError("empty beta grid (give --betas or --beta-min/--beta-max/--beta-count)");
  for (double b : betas)
    if (!(b > 0.0)) throw UsageError("betas must be positive");
}

}  // namespace

void cmd_train_track(const CommonOptions& common, std::ostream& out, std::ostream& log) {
  Config cfg = open_config(common, true);
  if (common.eps) cfg.set("eps", format_real(*common.eps));
  TrackSetup s = track_setup(cfg);
  cfg.reject_unknown();
  prepare_out_dir(common.out_dir);

  RunManifest manifest;
  manifest.command = "train-track";
  manifest.seed = s.train.seed;

  const MlpParams init = init_mlp(s.train.layer_sizes, s.train.seed);
  RankSeries series;
  series.eps = s.eps;
  series.mode = s.mode;
  series.run_id = run_id(manifest);
  json losses = json::array();
  const Targets sample_targets = [&] {
    const auto idx = sample_indices(s.data.size(), s.rank_sample.rows(), Rng::derive(s.train.seed, kRankSampleSalt));
    return gather_targets(s.data, idx);
  }();

  MlpParams final_params;
  const auto observer = [&](const Checkpoint& c) {
    auto est = local_rank_all_layers(c.params, s.rank_sample, s.eps, s.mode, common.threads);
    const double loss = output_loss(forward_batch(c.params, s.rank_sample), sample_targets, s.train.loss, nullptr);
    losses.push_back({{"step", c.step}, {"sample_loss", loss}});
    log << "step " << c.step << "  loss " << format_real(loss) << "  ranks";
    for (const auto& e : est) log << ' ' << format_real(e.mean_rank);
    log << std::endl;
    append_to_series(series, c.step, std::move(est));
    final_params = c.params;
  };
  (void)train(init, s.data, s.train, observer);

  write_file_atomic(common.out_dir / "rank_series.csv", rank_series_csv(series));
  save_checkpoint(common.out_dir / "final.mlpc", final_params);
  manifest.artifacts = {"rank_series.csv", "final.mlpc"};
  if (common.gnuplot) {
    write_file_atomic(common.out_dir / "rank_series.gp", rank_series_gnuplot(s.train.layer_sizes.size() - 1));
    manifest.artifacts.push_back("rank_series.gp");
  }

  json summary = json::array();
  for (const auto& layer : series.layers) {
    double peak = 0.0;
    for (const auto& p : layer) peak = std::max(peak, p.estimate.mean_rank);
    const double last = layer.back().estimate.mean_rank;
    summary.push_back({{"layer", layer.back().estimate.layer}, {"peak_mean_rank", peak}, {"final_mean_rank", last},
                       {"final_over_peak", peak > 0.0 ? last / peak : 0.0}});
    out << "layer " << layer.back().estimate.layer << ": peak " << format_real(peak) << ", final "
        << format_real(last) << "\n";
  }
  manifest.config = cfg.resolved();
  manifest.dataset_digests = {{s.dataset, s.data.digest}};
  manifest.results = {{"per_layer", summary}, {"checkpoint_loss", losses}, {"eps_mode", to_string(s.mode)},
                      {"pixel_normalization", is_image_dataset(s.dataset) ? "x/255, no centering" : "n/a"}};
  write_manifest(common.out_dir, manifest);
}

void cmd_ib_analytic(const CommonOptions& common, const IbAnalyticOptions& opts, std::ostream& out,
                     std::ostream& log) {
  Config cfg = open_config(common, false);
  fs::path problem_path;
  if (opts.problem) {
    problem_path = *opts.problem;
  } else if (cfg.has("problem")) {
    problem_path = cfg.get_string("problem");
    if (common.config && problem_path.is_relative()) problem_path = common.config->parent_path() / problem_path;
  } else {
    throw UsageError("ib-analytic needs --problem <file>");
  }

  std::vector<double> betas = opts.betas;
  if (betas.empty() && (opts.beta_min || opts.beta_max || opts.beta_count)) {
    if (!opts.beta_min || !opts.beta_max || !opts.beta_count)
      throw UsageError("--beta-min, --beta-max and --beta-count go together");
    if (!(*opts.beta_min > 0.0) || *opts.beta_max < *opts.beta_min)
      throw UsageError("need 0 < --beta-min <= --beta-max");
    betas = log_spaced(*opts.beta_min, *opts.beta_max, *opts.beta_count);
  }
  if (betas.empty()) betas = beta_grid_from(cfg);
  check_beta_grid(betas);
  const std::uint64_t seed = cfg.get_u64("seed", 0);
  cfg.reject_unknown();

  const GaussianIBProblem problem = load_ib_problem(problem_path);
  const GaussianIBSpectrum spectrum = ib_spectrum(problem);
  const auto staircase = rank_staircase(spectrum.critical_betas, betas);
  out << "eigenvalues: " << join_reals(spectrum.eigenvalues) << "\n";
  out << "critical betas: " << join_reals(spectrum.critical_betas) << "\n";
  log << "staircase over " << betas.size() << " betas\n";

  prepare_out_dir(common.out_dir);
  RunManifest manifest;
  manifest.command = "ib-analytic";
  manifest.seed = seed;
  write_file_atomic(common.out_dir / "staircase.csv", staircase_csv(staircase));
  manifest.artifacts = {"staircase.csv"};
  if (common.gnuplot) {
    write_file_atomic(common.out_dir / "staircase.gp",
                      "set datafile separator ','\nset logscale x\nset xlabel 'beta'\nset ylabel 'predicted rank'\n"
                      "plot 'staircase.csv' every ::1 using 1:2 with steps title 'rank(A_beta)'\n"
                      "pause mouse close\n");
    manifest.artifacts.push_back("staircase.gp");
  }
  manifest.config = cfg.resolved();
  manifest.config["problem"] = problem_path.string();
  manifest.config["betas"] = join_reals(betas, ",");
  manifest.dataset_digests = {{"problem", sha256_file(problem_path)}};
  json crit = json::array();
  for (double c : spectrum.critical_betas) crit.push_back(std::isinf(c) ? json("inf") : json(c));
  manifest.results = {{"eigenvalues", spectrum.eigenvalues}, {"critical_betas", crit}};
  write_manifest(common.out_dir, manifest);
}

void cmd_vib_sweep(const CommonOptions& common, std::ostream& out, std::ostream& log) {
  Config cfg = open_config(common, true);
  if (common.eps) cfg.set("rank_eps", format_real(*common.eps));
  const std::string problem = cfg.get_string("problem");
  const std::uint64_t seed = cfg.get_u64("seed", 0);

  SweepConfig sweep;
  sweep.seed = seed;
  sweep.threads = common.threads;
  Dataset train, eval;
  std::optional<GaussianIBProblem> ib;
  if (problem == "gaussian") {
    GaussianIBProblem p = GaussianIBProblem::reference_five_dim();
    if (cfg.has("problem_file")) {
      fs::path pf = cfg.get_string("problem_file");
      if (common.config && pf.is_relative()) pf = common.config->parent_path() / pf;
      p = load_ib_problem(pf);
    }
    const std::size_t n = p.sigma_x.rows();
    train = sample_joint_gaussian({p.sigma_x, p.sigma_y, p.sigma_xy, cfg.get_size("train_count", 10000),
                                   Rng::derive(seed, kDataSalt)});
    eval = sample_joint_gaussian({p.sigma_x, p.sigma_y, p.sigma_xy, cfg.get_size("eval_count", 2000),
                                  Rng::derive(seed, kEvalDataSalt)});
    sweep.architecture = VibArchitecture::gaussian_five_dim();
    sweep.architecture.trunk_sizes = {n, n, n};
    sweep.architecture.latent_dim = n;
    sweep.architecture.output_dim = p.sigma_y.rows();
    ib = p;
  } else if (is_image_dataset(problem)) {
    train = load_images(problem, "train", cfg.get_size("train_count", 0), seed);
    eval = load_images(problem, "t10k", cfg.get_size("eval_count", 0), seed);
    sweep.architecture = VibArchitecture::image(train.input_dim(), std::max<std::size_t>(train.class_count, 2));
  } else {
    throw ConfigError(cfg.source(), 0, "'problem': expected gaussian, mnist or fashion-mnist, got '" + problem + "'");
  }
  sweep.architecture.trunk_sizes = cfg.get_sizes("trunk_sizes", sweep.architecture.trunk_sizes);
  sweep.architecture.latent_dim = cfg.get_size("latent_dim", sweep.architecture.latent_dim);
  sweep.train.steps = cfg.get_u64("steps", 20000);
  sweep.train.batch_size = cfg.get_size("batch_size", 100);
  sweep.train.learning_rate = cfg.get_double("learning_rate", 1e-3);
  sweep.train.lr_decay = cfg.get_double("lr_decay", 1.0);
  sweep.train.lr_decay_steps = cfg.get_u64("lr_decay_steps", sweep.train.lr_decay_steps);
  sweep.architecture.initial_logvar = cfg.get_double("initial_logvar", sweep.architecture.initial_logvar);
  sweep.rank_eps = cfg.get_double("rank_eps", 1e-2);
  if (!(sweep.rank_eps > 0.0)) throw ConfigError(cfg.source(), 0, "'rank_eps' must be positive");
  sweep.rank_mode = encoder_rank_mode_from_string(cfg.get_string("rank_mode", std::string("noise-whitened")));
  const Matrix rank_sample = sample_rows(eval.inputs, cfg.get_size("rank_sample_size", 256), seed);
  const std::vector<double> betas = beta_grid_from(cfg);
  cfg.reject_unknown();
  if (betas.empty()) throw ConfigError(cfg.source(), 0, "empty beta grid (set betas or beta_min/beta_max/beta_count)");
  if (!std::is_sorted(betas.begin(), betas.end()) || std::adjacent_find(betas.begin(), betas.end()) != betas.end())
    throw ConfigError(cfg.source(), 0, "'betas' must be strictly ascending");
  if (sweep.architecture.trunk_sizes.empty() || sweep.architecture.trunk_sizes.front() != train.input_dim())
    throw ConfigError(cfg.source(), 0, "'trunk_sizes': first size must equal the input dimension");

  prepare_out_dir(common.out_dir);
  RunManifest manifest;
  manifest.command = "vib-sweep";
  manifest.seed = seed;

  // Rewritten atomically after every finished beta, so an interrupted sweep
  // leaves the completed rows in grid order and no manifest.
  std::string csv = std::string(kSweepHeader) + "\n";
  write_file_atomic(common.out_dir / "sweep.csv", csv);
  const auto observer = [&](std::size_t i, const SweepRecord& r) {
    csv += sweep_csv_row(r);
    write_file_atomic(common.out_dir / "sweep.csv", csv);
    log << "beta " << format_real(r.beta) << " [" << (i + 1) << "/" << betas.size() << "]  kl "
        << format_real(r.kl_term) << "  nll " << format_real(r.prediction_term) << "  rank "
        << format_real(r.encoder_local_rank.mean_rank) << std::endl;
  };

  std::vector<SweepRecord> records;
  try {
    records = beta_sweep(train, eval, rank_sample, betas, sweep, observer);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("vib sweep failed: ") + e.what());
  }

  json rows = json::array();
  std::vector<StaircasePoint> predicted;
  if (ib) predicted = rank_staircase(*ib, betas);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    json row = {{"beta", r.beta},
                {"kl_term", r.kl_term},
                {"prediction_term", r.prediction_term},
                {"accuracy_or_mse", r.accuracy_or_mse},
                {"encoder_rank", rank_json(r.encoder_local_rank)},
                {"absolute_rank", rank_json(r.absolute_rank)}};
    out << "beta " << format_real(r.beta) << ": rank " << format_real(r.encoder_local_rank.mean_rank);
    if (ib) {
      row["predicted_rank"] = predicted[i].predicted_rank;
      out << " (predicted " << predicted[i].predicted_rank << ")";
    }
    out << ", " << (train.kind == TaskKind::Classification ? "accuracy " : "mse ") << format_real(r.accuracy_or_mse)
        << "\n";
    rows.push_back(std::move(row));
  }

  manifest.artifacts = {"sweep.csv"};
  if (common.gnuplot) {
    write_file_atomic(common.out_dir / "sweep.gp",
                      "set datafile separator ','\nset logscale x\nset xlabel 'beta'\n"
                      "set ylabel 'encoder local rank'\nset y2label 'KL term'\nset y2tics\n"
                      "plot 'sweep.csv' every ::1 using 1:5:6 with yerrorlines title 'local rank', \\\n"
                      "     'sweep.csv' every ::1 using 1:2 axes x1y2 with linespoints title 'KL term'\n"
                      "pause mouse close\n");
    manifest.artifacts.push_back("sweep.gp");
  }
  manifest.config = cfg.resolved();
  manifest.config["rank_mode"] = to_string(sweep.rank_mode);
  manifest.dataset_digests = {{"train", train.digest}, {"eval", eval.digest}};
  manifest.results = {{"records", rows}, {"decoder", to_string(sweep.architecture.decoder)}};
  write_manifest(common.out_dir, manifest);
}

void cmd_verify_bounds(const CommonOptions& common, const VerifyBoundsOptions& opts, std::ostream& out,
                       std::ostream& log) {
  const double eps = common.eps.value_or(1e-2);
  if (!(eps > 0.0)) throw UsageError("--eps must be positive");
  const BoundTask task = [&] {
    try {
      return bound_task_from_string(opts.task);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }();
  if (opts.witness_bound && !(*opts.witness_bound > 0.0)) throw UsageError("--witness-bound must be positive");
  if (opts.witness_depth && *opts.witness_depth < 2) throw UsageError("--witness-depth must be >= 2");

  MlpParams params = load_checkpoint(opts.checkpoint);
  if (!opts.keep_biases)
    for (auto& b : params.biases) std::fill(b.begin(), b.end(), 0.0);

  Config cfg = open_config(common, false);
  std::optional<TrackSetup> setup;
  if (common.config) setup = track_setup(cfg);
  const std::uint64_t seed = common.seed.value_or(setup ? setup->train.seed : 0);
  if (setup) cfg.reject_unknown();

  Matrix sample;
  if (setup) {
    if (setup->data.input_dim() != params.input_dim())
      throw std::invalid_argument("checkpoint input dimension does not match the config dataset");
    sample = sample_rows(setup->data.inputs, opts.sample_size, seed);
  } else {
    sample = Matrix(opts.sample_size, params.input_dim());
    Rng rng(Rng::derive(seed, kRankSampleSalt));
    rng.fill_normal(sample.data());
  }

  json witness_json;
  double b = 0.0;
  std::size_t k = params.layer_count();
  if (opts.witness_bound) {
    b = *opts.witness_bound;
    k = opts.witness_depth.value_or(k);
    witness_json = {{"source", "flags"}, {"bound", b}, {"depth", k}};
  } else if (setup) {
    const TaskKind want = task == BoundTask::Classification ? TaskKind::Classification : TaskKind::Regression;
    if (setup->data.kind != want) throw UsageError("--task does not match the config dataset");
    const Witness w = derive_witness(params, setup->data, task);
    b = w.bound;
    k = opts.witness_depth.value_or(w.depth);
    witness_json = {{"source", "trained network"}, {"bound", b},        {"depth", k},
                    {"scale", w.scale},            {"fit_quality", w.fit_quality}, {"valid", w.valid},
                    {"note", w.note}};
  } else {
    for (const auto& w : params.weights) b = std::max(b, frobenius_norm(w));
    k = opts.witness_depth.value_or(k);
    witness_json = {{"source", "checkpoint weights, unverified"}, {"bound", b}, {"depth", k}, {"valid", false}};
  }
  if (k > params.layer_count()) throw UsageError("--witness-depth exceeds network depth");

  const BoundReport report = bound_report(params, task, b, k, sample, eps, common.threads);
  const std::size_t lemma_n = std::min<std::size_t>(32, sample.rows());
  const Matrix lemma_sample = gather_rows(sample, [&] {
    std::vector<std::size_t> idx(lemma_n);
    for (std::size_t i = 0; i < lemma_n; ++i) idx[i] = i;
    return idx;
  }());
  const std::vector<double> grid = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  const LemmaReport exact = verify_rank_lemma_exact(params, lemma_sample);
  const LemmaReport graded = verify_rank_lemma(params, lemma_sample, grid);
  log << "lemma: " << exact.violations.size() << " exact-proxy violations, " << graded.violations.size()
      << " grid violations over " << lemma_n << " inputs\n";

  json violations = json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(graded.violations.size(), 20); ++i) {
    const auto& v = graded.violations[i];
    violations.push_back({{"sample_index", v.sample_index}, {"layer", v.layer}, {"eps", v.eps},
                          {"jacobian_rank", v.jacobian_rank}, {"weight_rank", v.weight_rank}});
  }
  json doc = {
      {"task", to_string(task)},
      {"eps", eps},
      {"depth", report.depth},
      {"biases", opts.keep_biases ? "kept" : "zeroed"},
      {"witness", witness_json},
      {"norms",
       {{"frobenius", report.norms.frobenius},
        {"operator", report.norms.operator_norms},
        {"ratios", report.norms.ratios},
        {"harmonic_mean", report.norms.harmonic_mean_of_ratios},
        {"arithmetic_mean", report.norms.arithmetic_mean_of_ratios}}},
      {"ratio_bound", report.ratio_bound},
      {"rhs", report.rhs},
      {"trivial_rhs", report.trivial_rhs},
      {"argmin_layer", report.argmin_layer},
      {"measured", rank_json(report.measured)},
      {"slack", report.slack},
      {"lemma",
       {{"sample_size", lemma_n},
        {"exact_proxy_checks", exact.checks.size()},
        {"exact_proxy_violations", exact.violations.size()},
        {"eps_grid", grid},
        {"grid_checks", graded.checks.size()},
        {"grid_violations", graded.violations.size()},
        {"first_grid_violations", violations}}}};

  prepare_out_dir(common.out_dir);
  write_file_atomic(common.out_dir / "bound_report.json", doc.dump(2) + "\n");
  out << "argmin layer " << report.argmin_layer << ": rhs " << format_real(report.rhs[report.argmin_layer - 1])
      << ", measured " << format_real(report.measured.mean_rank) << ", slack " << format_real(report.slack) << "\n";
  out << "lemma violations: " << exact.violations.size() << "\n";

  RunManifest manifest;
  manifest.command = "verify-bounds";
  manifest.seed = seed;
  manifest.artifacts = {"bound_report.json"};
  manifest.config = cfg.resolved();
  manifest.config["checkpoint"] = opts.checkpoint.string();
  manifest.config["task"] = to_string(task);
  manifest.config["eps"] = format_real(eps);
  manifest.dataset_digests = {{"checkpoint", sha256_file(opts.checkpoint)}};
  if (setup) manifest.dataset_digests[setup->dataset] = setup->data.digest;
  write_manifest(common.out_dir, manifest);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Local-rank laboratory: rank tracking, Gaussian IB staircases, VIB sweeps and bound checks"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1, 1);

  CommonOptions common;
  std::string out_dir;
  std::optional<double> eps;
  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", common.config, "flat key = value config file");
    if (needs_config) c->required();
    sub->add_option("--seed", common.seed, "override the config seed");
    sub->add_option("--eps", eps, "rank threshold (must be > 0)");
    sub->add_option("--out-dir", out_dir, "output directory (default runs/<command>)");
    sub->add_option("--threads", common.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--gnuplot", common.gnuplot, "also write a gnuplot script");
  };

  auto* train = app.add_subcommand("train-track", "train an MLP and record per-layer local rank at checkpoints");
  add_common(train, true);

  IbAnalyticOptions ib;
  auto* ib_cmd = app.add_subcommand("ib-analytic", "critical betas and rank staircase of a Gaussian IB problem");
  add_common(ib_cmd, false);
  ib_cmd->add_option("--problem", ib.problem, "problem file with sigma_x, sigma_y, sigma_xy blocks");
  ib_cmd->add_option("--betas", ib.betas, "explicit beta grid")->delimiter(',');
  ib_cmd->add_option("--beta-min", ib.beta_min, "log-spaced grid start");
  ib_cmd->add_option("--beta-max", ib.beta_max, "log-spaced grid end");
  ib_cmd->add_option("--beta-count", ib.beta_count, "log-spaced grid size");

  auto* vib = app.add_subcommand("vib-sweep", "train one VIB per beta and record encoder local rank");
  add_common(vib, true);

  VerifyBoundsOptions vb;
  auto* verify = app.add_subcommand("verify-bounds", "norm ratios, bound right-hand sides and rank-lemma checks");
  add_common(verify, false);
  verify->add_option("--checkpoint", vb.checkpoint, "checkpoint file")->required();
  verify->add_option("--task", vb.task, "classification or regression")->required();
  verify->add_option("--witness-bound", vb.witness_bound, "witness weight-norm bound B");
  verify->add_option("--witness-depth", vb.witness_depth, "witness depth k");
  verify->add_option("--sample-size", vb.sample_size, "inputs used for the measured rank")->check(CLI::PositiveNumber);
  verify->add_flag("--keep-biases", vb.keep_biases, "evaluate with trained biases instead of zeroing them");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << version_string() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return 2;
  }

  if (eps && !(*eps > 0.0)) {
    err << "usage error: --eps must be positive\n";
    return 2;
  }
  common.eps = eps;
  CLI::App* chosen = app.get_subcommands().front();
  common.out_dir = out_dir.empty() ? fs::path("runs") / chosen->get_name() : fs::path(out_dir);

  // A manifest left over from an earlier run must not outlive a failure.
  auto fail = [&](int code) {
    std::error_code ec;
    fs::remove(common.out_dir / kManifestName, ec);
    return code;
  };
  try {
    if (chosen == train) cmd_train_track(common, out, err);
    else if (chosen == ib_cmd) cmd_ib_analytic(common, ib, out, err);
    else if (chosen == vib) cmd_vib_sweep(common, out, err);
    else cmd_verify_bounds(common, vb, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return fail(2);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return fail(1);
  }
  return 0;
}

}  // namespace lrlab::cli
