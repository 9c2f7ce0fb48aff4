// csunet: synthetic data, training, evaluation, prediction and gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <random>

#include "CLI11.hpp"
#include "csunet/battery.hpp"
#include "csunet/data_io.hpp"
#include "csunet/parallel.hpp"
#include "csunet/run_config.hpp"

namespace {

using namespace csunet;
using json = nlohmann::json;

constexpr int kOk = 0;
constexpr int kVerificationFailure = 1;
constexpr int kUsageError = 2;

/// Setup problems (bad flags, config, data) map to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string out;
  int count = 4;
  std::int64_t extent = 32;
  std::uint64_t seed = 0;
  double ground_glass_fraction = 0.0;
  double radius = 0.0;
  double noise_sigma = 0.1;
};

int cmd_synth(const SynthArgs& a) {
  if (a.count < 1) throw UsageError("--count must be positive");
  if (a.extent < 8) throw UsageError("--extent must be at least 8");
  if (a.ground_glass_fraction < 0 || a.ground_glass_fraction > 1) {
    throw UsageError("--ground-glass-fraction must lie in [0, 1]");
  }
  const double radius = a.radius > 0 ? a.radius : std::max(2.0, static_cast<double>(a.extent) / 8);
  if (radius < 2 || radius > static_cast<double>(a.extent) / 4) {
    throw UsageError("--radius must lie in [2, extent/4]");
  }
  if (a.noise_sigma < 0) throw UsageError("--noise-sigma must be non-negative");

  Rng master(a.seed);
  const auto gg_count = static_cast<int>(std::lround(a.ground_glass_fraction * a.count));
  std::vector<int> order(static_cast<std::size_t>(a.count));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[master() % i]);
  std::vector<bool> ground_glass(order.size(), false);
  for (int i = 0; i < gg_count; ++i) ground_glass[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

  const fs::path dir(a.out);
  fs::create_directories(dir);
  DatasetManifest m;
  char screening[160];
  std::snprintf(screening, sizeof screening, "synthetic spherical nodules, radius %.2f, ground-glass fraction %.3f",
                radius, a.ground_glass_fraction);
  m.screening = screening;
  for (int i = 0; i < a.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "p%04d", i);
    PhantomSpec spec;
    spec.extent = a.extent;
    spec.radius = radius;
    spec.noise_sigma = a.noise_sigma;
    spec.seed = master();
    const bool gg = ground_glass[static_cast<std::size_t>(i)];
    spec.contrast = gg ? kGroundGlassContrast : kSolidContrast;
    const auto ph = generate_phantom(spec);

    VolumeRecord r;
    r.id = id;
    r.image = r.id + kImageSuffix;
    r.mask = r.id + kMaskSuffix;
    r.meta = {{"kind", gg ? "ground_glass" : "solid"},
              {"contrast", spec.contrast},
              {"radius", radius},
              {"center", ph.center},
              {"noise_sigma", spec.noise_sigma},
              {"seed", spec.seed}};
    write_volume(dir / r.image, ph.image, VolumeDType::float32);
    write_volume(dir / r.mask, ph.mask, VolumeDType::uint8);
    m.samples.push_back(std::move(r));
  }
  write_manifest(dir / kManifestName, m);
  std::cout << "wrote " << a.count << " phantoms (" << gg_count << " ground-glass) to " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  int fold = -1;
  bool all = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_epochs;
  bool quiet = false;
};

std::vector<Sample> load_dataset(const fs::path& dir, const NetworkConfig& net) {
  std::vector<Sample> samples;
  try {
    samples = load_samples(dir / kManifestName);
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  }
  if (samples.empty()) throw UsageError("dataset " + dir.string() + " is empty");
  for (const auto& s : samples) {
    const Shape want{net.in_channels, net.input_extent, net.input_extent, net.input_extent};
    if (s.image.shape() != want) {
      throw UsageError("sample " + s.id + " has shape " + to_string(s.image.shape()) + ", network expects " +
                       to_string(want));
    }
  }
  return samples;
}

json history_json(int fold, const TrainState& st) {
  return {{"fold", fold}, {"best_epoch", st.best_epoch}, {"epochs", st.epoch}, {"history", st.history}};
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg;
  try {
    cfg = load_run_config(a.config);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (!a.data.empty()) cfg.paths.data = a.data;
  if (!a.out.empty()) cfg.paths.out = a.out;
  if (a.seed) {
    cfg.train.seed = *a.seed;
    cfg.network.seed = *a.seed;
  }
  if (a.max_epochs) cfg.train.max_epochs = *a.max_epochs;
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (cfg.paths.data.empty()) throw UsageError("no data directory (set paths.data or --data)");
  if (cfg.paths.out.empty()) throw UsageError("no output directory (set paths.out or --out)");
  if (a.fold >= cfg.train.folds) throw UsageError("--fold must be below train.folds");

  const auto samples = load_dataset(cfg.paths.data, cfg.network);
  if (!a.all && static_cast<int>(samples.size()) < cfg.train.folds) {
    throw UsageError("dataset has fewer samples than train.folds");
  }

  const fs::path out(cfg.paths.out);
  fs::create_directories(out);
  write_text_file(out / "config.json", dump(cfg));

  auto progress = [&](int fold, const EpochRecord& r) {
    if (a.quiet) return;
    std::fprintf(stderr, "fold %d epoch %3d  loss %.4f  val dsc %.4f%s\n", fold, r.epoch, r.train_loss, r.val.dsc,
                 r.improved ? "  *" : "");
  };
  const json run_config = {{"network", cfg.network}, {"train", cfg.train}, {"loss", cfg.loss}};

  CrossValidationReport report;
  json histories = json::array();
  if (a.all || a.fold >= 0) {
    std::vector<Sample> train_set, val_set;
    std::vector<std::string> val_ids;
    if (a.all) {
      train_set = val_set = samples;
      for (const auto& s : samples) val_ids.push_back(s.id);
    } else {
      std::vector<std::string> ids;
      for (const auto& s : samples) ids.push_back(s.id);
      const auto split = kfold_split(ids, cfg.train.folds, cfg.train.seed)[static_cast<std::size_t>(a.fold)];
      for (const auto& s : samples) {
        const bool val = std::find(split.val_ids.begin(), split.val_ids.end(), s.id) != split.val_ids.end();
        (val ? val_set : train_set).push_back(s);
      }
      val_ids = split.val_ids;
    }
    const int fold = a.all ? -1 : a.fold;
    CSUNet3D<float> net(cfg.network);
    FitHooks<float> hooks;
    hooks.on_epoch = [&](const EpochRecord& r) { progress(fold, r); };
    const auto res = fit(net, train_set, val_set, cfg.train, cfg.loss, hooks);
    FoldResult fr;
    fr.fold = fold;
    fr.metrics = evaluate(net, val_set, cfg.loss).metrics;
    fr.best_epoch = res.state.best_epoch;
    fr.val_ids = val_ids;
    report.folds.push_back(fr);
    summarize(report);
    report.config = run_config;
    save_checkpoint(net, out / "model.csuc");
    histories.push_back(history_json(fold, res.state));
  } else {
    CrossValidationHooks<float> hooks;
    hooks.on_epoch = progress;
    hooks.on_fold = [&](int fold, const CSUNet3D<float>& net, const TrainState& st) {
      save_checkpoint(net, out / ("fold" + std::to_string(fold) + ".csuc"));
      histories.push_back(history_json(fold, st));
    };
    report = cross_validate<float>(samples, cfg.network, cfg.train, cfg.loss, hooks);
    report.config = run_config;
  }
  write_text_file(out / "history.json", dump({{"folds", histories}}));
  write_text_file(out / "report.json", dump(report));

  const auto& mu = report.mean;
  const auto& sd = report.std;
  std::printf("SEN %.4f +- %.4f  DSC %.4f +- %.4f  PRE %.4f +- %.4f  mIoU %.4f +- %.4f\n", mu.sen, sd.sen, mu.dsc,
              sd.dsc, mu.pre, sd.pre, mu.miou, sd.miou);
  return kOk;
}

// ---------------------------------------------------------------------------
// eval / predict

CSUNet3D<float> open_model(const std::string& path) {
  try {
    return load_checkpoint<float>(path);
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  }
}

struct EvalArgs {
  std::string model;
  std::string data;
  std::string out;
  double min_dsc = 0;
};

int cmd_eval(const EvalArgs& a) {
  const auto net = open_model(a.model);
  const auto samples = load_dataset(a.data, net.config());
  LossConfig lc;
  lc.class_count = net.config().num_classes;
  const auto ev = evaluate(net, samples, lc);
  json j = ev.metrics;
  j["samples"] = samples.size();
  j["loss"] = ev.loss;
  j["tp"] = ev.counts.tp;
  j["fp"] = ev.counts.fp;
  j["fn"] = ev.counts.fn;
  j["tn"] = ev.counts.tn;
  if (!a.out.empty()) write_text_file(a.out, dump(j));
  std::cout << dump(j);
  if (ev.metrics.dsc < a.min_dsc) {
    std::fprintf(stderr, "DSC %.6f is below --min-dsc %.6f\n", ev.metrics.dsc, a.min_dsc);
    return kVerificationFailure;
  }
  return kOk;
}

struct PredictArgs {
  std::string model;
  std::string input;
  std::string output;
};

int cmd_predict(const PredictArgs& a) {
  const auto net = open_model(a.model);
  Tensor<float> vol;
  try {
    vol = read_volume(a.input);
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  }
  const auto& nc = net.config();
  const Shape want{nc.in_channels, nc.input_extent, nc.input_extent, nc.input_extent};
  if (vol.shape() != want) {
    throw UsageError("input shape " + to_string(vol.shape()) + " does not match model input " + to_string(want));
  }
  Shape batched{1};
  batched.insert(batched.end(), vol.shape().begin(), vol.shape().end());
  const auto labels = argmax_labels(net.predict_logits(vol.reshaped(batched)));
  Tensor<float> mask(Shape{1, nc.input_extent, nc.input_extent, nc.input_extent});
  std::int64_t fg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    mask[static_cast<std::int64_t>(i)] = labels[i];
    fg += labels[i] != 0;
  }
  write_volume(a.output, mask, VolumeDType::uint8);
  std::printf("foreground voxels %lld of %lld (%.4f)\n", static_cast<long long>(fg), static_cast<long long>(mask.numel()),
              static_cast<double>(fg) / static_cast<double>(mask.numel()));
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck / summary

struct GradcheckArgs {
  double tol = 1e-4;
  std::uint64_t seed = 7;
  std::string report;
  std::string inject_fault;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (!(a.tol > 0)) throw UsageError("--tol must be positive");
  if (!a.inject_fault.empty()) {
    if (a.inject_fault != "conv3d") throw UsageError("unknown fault: " + a.inject_fault);
    debug::set_conv_backward_sign_flip(true);
  }
  BatteryOptions opt;
  opt.tol = a.tol;
  opt.seed = a.seed;
  const auto items = run_gradcheck_battery(opt);
  int failed = 0;
  json rows = json::array();
  for (const auto& it : items) {
    failed += !it.report.pass;
    std::printf("%s  %-28s %-8s max_rel_err %.3e  tol %.0e  probes %5lld  worst %s\n", it.report.pass ? "PASS" : "FAIL",
                it.name.c_str(), to_string(it.kind).c_str(), it.report.max_rel_err, it.tol,
                static_cast<long long>(it.report.probes), it.report.worst.c_str());
    rows.push_back({{"name", it.name},
                    {"kind", to_string(it.kind)},
                    {"max_rel_err", it.report.max_rel_err},
                    {"tol", it.tol},
                    {"probes", it.report.probes},
                    {"worst", it.report.worst},
                    {"pass", it.report.pass}});
  }
  std::printf("%zu items, %d failed\n", items.size(), failed);
  if (!a.report.empty()) write_text_file(a.report, dump({{"items", rows}, {"failed", failed}}));
  return failed == 0 ? kOk : kVerificationFailure;
}

int cmd_summary(const std::string& config) {
  NetworkConfig nc;
  if (!config.empty()) {
    try {
      nc = load_run_config(config).network;
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  const CSUNet3D<float> net(nc);
  const auto census = net.census();
  json stages = json::array();
  for (const auto& s : net.summary()) stages.push_back({{"name", s.name}, {"input", s.input}, {"output", s.output}});
  std::cout << dump({{"network", nc},
                     {"parameters", net.parameter_count()},
                     {"stages", stages},
                     {"census",
                      {{"residual_adds", census.residual_adds},
                       {"se_gates", census.se_gates},
                       {"projections", census.projections},
                       {"mini_us", census.mini_us}}}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D nodule segmentation: synthetic data, training, evaluation and gradient checks"};
  app.require_subcommand(1);
  int threads = -1;
  app.add_option("--threads", threads, "Worker threads (0 = single-thread deterministic; default CSUNET_THREADS)");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate phantom image/mask pairs and a manifest");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--count", synth.count, "Number of phantoms")->capture_default_str();
  s->add_option("--extent", synth.extent, "Cubic volume extent")->capture_default_str();
  s->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  s->add_option("--ground-glass-fraction", synth.ground_glass_fraction, "Fraction of low-contrast nodules")
      ->capture_default_str();
  s->add_option("--radius", synth.radius, "Nodule radius in voxels (default extent/8, at least 2)");
  s->add_option("--noise-sigma", synth.noise_sigma, "Background noise standard deviation")->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Cross-validate, train one fold, or fit on every sample");
  t->add_option("--config", train.config, "Run configuration JSON")->required();
  t->add_option("--data", train.data, "Dataset directory (overrides paths.data)");
  t->add_option("--out", train.out, "Output directory (overrides paths.out)");
  auto* fold_opt = t->add_option("--fold", train.fold, "Train only this fold");
  t->add_flag("--all", train.all, "Train and validate on every sample")->excludes(fold_opt);
  t->add_option("--seed", train.seed, "Override network and training seeds");
  t->add_option("--max-epochs", train.max_epochs, "Override train.max_epochs");
  t->add_flag("--quiet", train.quiet, "No per-epoch progress");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint over a dataset");
  e->add_option("--model", eval.model, "Checkpoint")->required();
  e->add_option("--data", eval.data, "Dataset directory")->required();
  e->add_option("--out", eval.out, "Also write the metrics JSON here");
  e->add_option("--min-dsc", eval.min_dsc, "Exit 1 when DSC falls below this value");

  PredictArgs predict;
  auto* p = app.add_subcommand("predict", "Write the argmax mask of one volume");
  p->add_option("--model", predict.model, "Checkpoint")->required();
  p->add_option("--input", predict.input, "Input CSUV volume")->required();
  p->add_option("--output", predict.output, "Output CSUV mask (u8)")->required();

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Central-difference gradient battery");
  g->add_option("--tol", gc.tol, "Relative error tolerance")->capture_default_str();
  g->add_option("--seed", gc.seed, "Seed for inputs and probes")->capture_default_str();
  g->add_option("--report", gc.report, "Write per-item results as JSON");
  g->add_option("--inject-fault", gc.inject_fault)->group("");

  std::string summary_config;
  auto* m = app.add_subcommand("summary", "Print stage shapes and parameter counts");
  m->add_option("--config", summary_config, "Run configuration JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsageError;
  }
  if (threads >= 0) set_thread_count(threads);

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(train);
    if (*e) return cmd_eval(eval);
    if (*p) return cmd_predict(predict);
    if (*g) return cmd_gradcheck(gc);
    if (*m) return cmd_summary(summary_config);
  } catch (const UsageError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kUsageError;
  } catch (const std::invalid_argument& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kUsageError;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "failed: %s\n", err.what());
    return kVerificationFailure;
  }
  return kUsageError;
}
