// crash_cli: dataset generation, augmentation, training, evaluation and gradient checks.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "crash/data/io.hpp"
#include "crash/data/missing.hpp"
#include "crash/data/synthetic.hpp"
#include "crash/train/gradcheck_suite.hpp"
#include "crash/train/trainer.hpp"

using namespace crash;
using nlohmann::json;

namespace {

struct Options {
  std::string config = "desk";
  std::uint64_t seed = 0;
  std::size_t count = 40;
  double positive = 0.5;
  std::string mode;
  double rate = 0.1;
  int drop = 1;
  double subset = 1.0;
  std::size_t epochs = 80;
  std::size_t batch = 10;
  double lr = 1e-4;
  std::string ablate;
  std::string out;
  std::string in;
  std::string data;
  std::string csv;
  std::size_t frames = 0;
  std::size_t coords = 256;
  std::size_t threads = 1;
};

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 1; i < argc; ++i) {
    if (i > 1) s += ' ';
    s += argv[i];
  }
  return s;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw PreconditionError(std::string("missing required flag ") + flag);
}

model::ModelConfig model_config(const Options& o) {
  model::ModelConfig c = model::load_config(o.config);
  if (!o.ablate.empty()) c.ablation = model::Ablation::disabling(o.ablate);
  c.validate();
  return c;
}

std::optional<data::MissingSpec> missing_spec(const Options& o) {
  if (o.mode.empty()) return std::nullopt;
  data::MissingSpec s;
  s.mode = o.mode == "periodic" ? data::MissingMode::kPeriodic : data::MissingMode::kRandomRate;
  s.rate = o.rate;
  s.drop_per_window = o.drop;
  s.seed = o.seed;
  s.validate();
  return s;
}

void banner(const model::ModelConfig& c, std::uint64_t seed) {
  std::cout << "config " << model::fingerprint(c) << " seed " << seed << '\n';
}

int run_gen(const Options& o, const data::Provenance& prov) {
  require(o.out, "--out");
  const model::ModelConfig c = model_config(o);
  banner(c, o.seed);
  const auto videos = data::gen_synthetic(o.count, o.positive, train::synth_config_for(c, o.frames), o.seed);
  data::write_dataset(videos, o.out, prov);
  std::cout << "wrote " << videos.size() << " videos (" << data::count_label(videos, 1) << " positive) to "
            << o.out << '\n';
  return 0;
}

int run_augment(const Options& o, const data::Provenance& prov) {
  require(o.in, "--in");
  require(o.out, "--out");
  data::Dataset ds = data::read_dataset(o.in);
  std::cout << "config - seed " << o.seed << '\n';
  std::vector<data::VideoSample> v = ds.samples;
  if (o.subset != 1.0) v = data::subset(v, o.subset, o.seed);
  if (const auto spec = missing_spec(o)) v = data::apply_missing_all(v, *spec);
  data::write_dataset(v, o.out, prov);
  std::size_t masked = 0;
  for (const auto& s : v)
    for (const auto& f : s.frames) masked += !f.observed;
  std::cout << "wrote " << v.size() << " videos, " << masked << " masked frames, to " << o.out << '\n';
  return 0;
}

int run_train(const Options& o, const data::Provenance& prov) {
  require(o.in, "--in");
  require(o.out, "--out");
  train::TrainConfig tc;
  tc.model = model_config(o);
  tc.epochs = o.epochs;
  tc.batch = o.batch;
  tc.lr = o.lr;
  tc.seed = o.seed;
  tc.threads = o.threads;
  banner(tc.model, o.seed);
  const data::Dataset ds = data::read_dataset(o.in);
  json epochs = json::array();
  const auto result = train::train(ds.samples, tc, prov, [&](const train::EpochLog& e, const train::Checkpoint&) {
    std::printf("epoch %zu train %.6f val %.6f val_la %.6f lr %.3g\n", e.epoch, e.train_loss, e.val_loss,
                e.val_la, e.lr);
    std::fflush(stdout);
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                      {"val_la", e.val_la}, {"lr", e.lr}});
  });
  train::save_checkpoint(result.checkpoint, o.out);
  const json log{{"command", prov.command},
                 {"seed", prov.seed},
                 {"fingerprint", model::fingerprint(tc.model)},
                 {"epochs", epochs}};
  write_text(o.out + ".log.json", log.dump(2) + "\n");
  std::cout << "checkpoint " << o.out << '\n';
  return 0;
}

int run_eval(const Options& o, const data::Provenance& prov) {
  require(o.in, "--in");
  require(o.data, "--data");
  const train::Checkpoint ck = train::load_checkpoint(o.in);
  banner(ck.config, ck.provenance.seed);
  const data::Dataset ds = data::read_dataset(o.data);
  const eval::MetricsReport r = train::evaluate(ck, ds.samples, missing_spec(o), o.threads);
  json j = eval::to_json(r);
  j["command"] = prov.command;
  if (!o.mode.empty()) j["missing_seed"] = o.seed;
  if (!o.out.empty()) write_text(o.out, j.dump(2) + "\n");
  if (!o.csv.empty()) write_text(o.csv, eval::pr_curve_csv(r));
  std::printf("AP %.4f  mTTA %s  TTA@R80 %s\n", r.ap, r.mtta ? std::to_string(*r.mtta).c_str() : "n/a",
              r.tta_at_r80 ? std::to_string(*r.tta_at_r80).c_str() : "n/a");
  return 0;
}

int run_gradcheck(const Options& o, const data::Provenance& prov) {
  const model::ModelConfig c = model_config(o);
  banner(c, o.seed);
  diff::GradCheckOptions opt;
  opt.max_coords_per_tensor = o.coords;
  opt.seed = o.seed;
  const auto r = train::model_gradcheck(c, o.frames ? o.frames : 12, o.seed, opt);
  constexpr double kTol = 1e-4;
  std::printf("%-8s %8s %14s  %s\n", "module", "tensors", "max_rel_err", "result");
  std::size_t failed = 0;
  json rows = json::array();
  for (const auto& m : r.modules) {
    const bool ok = m.max_rel_error <= kTol;
    failed += !ok;
    std::printf("%-8s %8zu %14.3e  %s\n", m.module.c_str(), m.tensors, m.max_rel_error, ok ? "PASS" : "FAIL");
    rows.push_back({{"module", m.module}, {"tensors", m.tensors}, {"max_rel_error", m.max_rel_error}, {"pass", ok}});
  }
  std::printf("%zu coordinates in %.1f s\n", r.coords_checked, r.seconds);
  if (!o.out.empty())
    write_text(o.out, json{{"command", prov.command}, {"seed", prov.seed}, {"fingerprint", model::fingerprint(c)},
                           {"tolerance", kTol}, {"coords_checked", r.coords_checked}, {"modules", rows}}
                          .dump(2) + "\n");
  if (failed) throw NumericalFault("gradcheck: " + std::to_string(failed) + " module(s) above tolerance");
  return 0;
}

int run_report(const Options& o) {
  require(o.in, "--in");
  json j;
  try {
    j = json::parse(read_text(o.in));
  } catch (const json::exception& e) {
    throw FormatError(std::string("report parse error: ") + e.what());
  }
  const eval::MetricsReport r = eval::report_from_json(j);
  std::cout << "config " << (r.fingerprint.empty() ? "-" : r.fingerprint) << " seed " << r.seed << '\n';
  if (j.contains("command")) std::cout << "produced by: " << j["command"].get<std::string>() << '\n';
  std::printf("average precision   %.4f\n", r.ap);
  if (r.mtta) std::printf("mean TTA            %.3f s\n", *r.mtta);
  else std::printf("mean TTA            n/a\n");
  if (r.tta_at_r80) std::printf("TTA at 80%% recall   %.3f s\n", *r.tta_at_r80);
  else std::printf("TTA at 80%% recall   n/a (recall never reaches 0.8)\n");
  std::printf("thresholds          %zu\n", r.sweep.size());
  if (!r.sweep.empty()) {
    const auto& lo = r.sweep.front();
    std::printf("at lowest threshold %.4g: TP %zu FP %zu FN %zu TN %zu\n", lo.threshold, lo.tp, lo.fp, lo.fn, lo.tn);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Traffic accident anticipation: synthetic data, training and evaluation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* s) {
    s->add_option("--config", o.config, "preset (desk, paper-faithful) or JSON file");
    s->add_option("--seed", o.seed, "random seed");
    s->add_option("--ablate", o.ablate, "comma list of ofa,cab,fft,tfa,le to disable");
    s->add_option("--out", o.out, "output path");
  };
  auto missing = [&](CLI::App* s) {
    s->add_option("--mode", o.mode, "missing-data mode")->check(CLI::IsMember({"random", "periodic"}));
    s->add_option("--rate", o.rate, "random mode: fraction of frames dropped")->check(CLI::Range(0.0, 1.0));
    s->add_option("--drop", o.drop, "periodic mode: frames dropped per 5-frame window")->check(CLI::IsMember({1, 2}));
  };

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  common(gen);
  gen->add_option("--count", o.count, "number of videos");
  gen->add_option("--positive", o.positive, "fraction of positive videos")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--frames", o.frames, "frames per video (default: config)");

  auto* augment = app.add_subcommand("augment", "mask frames and/or subsample a dataset");
  augment->add_option("--in", o.in, "input dataset");
  augment->add_option("--out", o.out, "output dataset");
  augment->add_option("--seed", o.seed, "random seed");
  augment->add_option("--subset", o.subset, "stratified fraction of videos kept")->check(CLI::Range(0.0, 1.0));
  missing(augment);

  auto* tr = app.add_subcommand("train", "train a model");
  common(tr);
  tr->add_option("--in", o.in, "training dataset");
  tr->add_option("--epochs", o.epochs, "epochs");
  tr->add_option("--batch", o.batch, "batch size");
  tr->add_option("--lr", o.lr, "initial learning rate");
  tr->add_option("--threads", o.threads, "worker threads per batch");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--in", o.in, "checkpoint");
  ev->add_option("--data", o.data, "test dataset");
  ev->add_option("--out", o.out, "metrics report JSON");
  ev->add_option("--csv", o.csv, "PR-curve CSV");
  ev->add_option("--seed", o.seed, "seed for the missing-data masks");
  ev->add_option("--threads", o.threads, "worker threads");
  missing(ev);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every parameter tensor");
  common(gc);
  gc->add_option("--frames", o.frames, "frames in the probe video (default 12)");
  gc->add_option("--coords", o.coords, "coordinates sampled per tensor, 0 for all");

  auto* rep = app.add_subcommand("report", "summarize a metrics report");
  rep->add_option("--in", o.in, "metrics report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  const data::Provenance prov{command_line(argc, argv), o.seed};
  try {
    if (*gen) return run_gen(o, prov);
    if (*augment) return run_augment(o, prov);
    if (*tr) return run_train(o, prov);
    if (*ev) return run_eval(o, prov);
    if (*gc) return run_gradcheck(o, prov);
    if (*rep) return run_report(o);
  } catch (const DimensionError& e) {
    std::cerr << "error: dimension: " << e.what() << '\n';
  } catch (const NumericalFault& e) {
    std::cerr << "error: numerical: " << e.what() << '\n';
  } catch (const FormatError& e) {
    std::cerr << "error: format: " << e.what() << '\n';
  } catch (const PreconditionError& e) {
    std::cerr << "error: precondition: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
  }
  return 1;
}
