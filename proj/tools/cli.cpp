#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>

#include "CLI11.hpp"
#include "coatreg/checkpoint.hpp"
#include "coatreg/error.hpp"
#include "coatreg/gradcheck.hpp"
#include "coatreg/metrics.hpp"
#include "coatreg/phantom.hpp"
#include "coatreg/train.hpp"
#include "json.hpp"

namespace coatreg::cli {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

enum class Precision { f32, f64 };

Precision precision_from_env() {
  const char* v = std::getenv("COATREG_PRECISION");
  if (v == nullptr || std::string(v).empty() || std::string(v) == "f32") return Precision::f32;
  if (std::string(v) == "f64") return Precision::f64;
  throw UsageError(std::string("COATREG_PRECISION must be f32 or f64, got '") + v + "'");
}

Grid3 parse_dims(const std::string& s) {
  static const std::regex re(R"((\d+)x(\d+)x(\d+))");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw UsageError("--dims expects WxHxD, got '" + s + "'");
  return {std::stoul(m[1]), std::stoul(m[2]), std::stoul(m[3])};
}

Spacing parse_spacing(const std::string& s) {
  static const std::regex re(R"(([0-9.eE+-]+),([0-9.eE+-]+),([0-9.eE+-]+))");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw UsageError("--spacing expects sx,sy,sz, got '" + s + "'");
  Spacing sp{};
  for (int i = 0; i < 3; ++i) {
    try {
      sp[i] = std::stod(m[i + 1]);
    } catch (const std::exception&) {
      throw UsageError("--spacing: cannot parse '" + s + "'");
    }
    if (!(sp[i] > 0.0)) throw UsageError("--spacing values must be positive");
  }
  return sp;
}

std::string case_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03zu", k);
  return buf;
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
  std::uint64_t seed = 0;
  std::size_t count = 1;
  std::string dims = "32x32x16";
  std::string spacing = "1.5,1.5,3.15";
  double max_disp = 3.0;
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const Grid3 dims = parse_dims(a.dims);
  const Spacing spacing = parse_spacing(a.spacing);
  if (a.count < 1) throw UsageError("--count must be at least 1");
  if (!(a.max_disp >= 0.0)) throw UsageError("--max-disp must be non-negative");
  if (dims.w % 2 || dims.h % 2 || dims.d % 2) throw UsageError("--dims must be even in every axis");
  for (std::size_t k = 0; k < a.count; ++k) {
    const std::uint64_t seed = derive_seed(a.seed, {k});
    const SynthCase c = generate_gt_pair(seed, dims, spacing, a.max_disp);
    const fs::path dir = fs::path(a.out) / case_name(k);
    write_case(c, dir);
    ordered_json line;
    line["case"] = case_name(k);
    line["seed"] = seed;
    line["dir"] = dir.string();
    line["pre_avg_dice"] = evaluate_labels(c.moving_labels, c.fixed_labels).avg_dice;
    out << line.dump() << "\n";
  }
  return kExitOk;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::uint64_t iters = 1;
  double lr = 1e-4;
  std::size_t batch = 2;
  double lambda_sim = 20.0;
  double lambda_kl = 0.1;
  double prior_lambda = 10.0;
  KlNormalization kl_normalization = KlNormalization::per_voxel;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string resume;
  std::uint64_t save_every = 0;
};

template <typename T>
int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.iters < 1) throw UsageError("--iters must be at least 1");
  TrainOptions opts;
  opts.adam.lr = a.lr;
  opts.batch = a.batch;
  opts.weights = {a.lambda_sim, a.lambda_kl, a.prior_lambda, a.kl_normalization};
  opts.seed = a.seed;
  opts.validate();

  const auto cases = load_dataset(a.data);
  if (cases.size() * 2 < a.batch) throw DataError("dataset holds fewer training pairs than --batch");
  auto pairs = make_training_pairs<T>(cases);

  std::optional<Trainer<T>> trainer;
  if (!a.resume.empty()) {
    const Checkpoint ck = load_checkpoint(a.resume);
    if (!a.seed_given) opts.seed = ck.meta.seed;
    if (!(ck.meta.config.in_shape == cases.front().moving.shape)) {
      throw ShapeError("checkpoint expects " + shape_string(volume_shape(ck.meta.config.in_shape, 1)) +
                       " inputs, dataset has " + shape_string(volume_shape(cases.front().moving.shape, 1)));
    }
    trainer.emplace(Trainer<T>::resume(ck, opts, std::move(pairs)));
  } else {
    trainer.emplace(RegistrationNetwork<T>(NetworkConfig::for_shape(cases.front().moving.shape, opts.seed)), opts,
                    std::move(pairs));
  }

  out << std::setprecision(9);
  while (trainer->iteration() < a.iters) {
    const IterationRecord rec = trainer->step();
    ordered_json line;
    line["iter"] = rec.iter;
    line["loss"] = rec.loss;
    line["ncc"] = rec.ncc;
    line["kl"] = rec.kl;
    out << line.dump() << "\n" << std::flush;
    if (a.save_every > 0 && rec.iter % a.save_every == 0 && rec.iter < a.iters) {
      save_checkpoint(trainer->checkpoint(), a.out);
    }
  }
  save_checkpoint(trainer->checkpoint(), a.out);
  return kExitOk;
}

// ---- register / evaluate / dump-attention --------------------------------

struct RegisterArgs {
  std::string ckpt, moving, fixed, out_warped, out_flow;
  bool sample = false;
  std::uint64_t seed = 0;
};

template <typename T>
Tensor<T> network_input(const Volume& v) {
  return to_tensor<T>(v.channel(0));
}

void require_matching(const Volume& m, const Volume& f) {
  if (!(m.shape == f.shape)) throw ShapeError("moving and fixed differ in shape");
  if (m.spacing != f.spacing) throw DataError("moving and fixed differ in spacing");
}

template <typename T>
int cmd_register(const RegisterArgs& a) {
  const auto net = network_from_checkpoint<T>(load_checkpoint(a.ckpt));
  const Volume moving = read_volume(a.moving);
  const Volume fixed = read_volume(a.fixed);
  require_matching(moving, fixed);
  Rng rng = make_rng(a.seed, {id(Stream::sampling)});
  const auto r = net.register_pair(network_input<T>(moving), network_input<T>(fixed),
                                   a.sample ? SampleMode::sample : SampleMode::mean, &rng);

  // Channel 1 holds labels when present: nearest neighbour keeps them integral.
  Volume warped = moving;
  for (std::size_t c = 0; c < moving.channels; ++c) {
    if (c == 1) {
      const LabelVolume l = warp_labels(labels_from_volume(moving, 1), r.flow);
      for (std::size_t v = 0; v < moving.shape.voxels(); ++v) warped.data[v * moving.channels + 1] = l.labels[v];
      continue;
    }
    const Volume wc = to_volume(grid_sample(to_tensor<T>(moving.channel(c)), r.flow.disp), moving.spacing);
    for (std::size_t v = 0; v < moving.shape.voxels(); ++v) warped.data[v * moving.channels + c] = wc.data[v];
  }
  write_volume(warped, a.out_warped);
  write_volume(to_volume(r.flow.disp, moving.spacing), a.out_flow);
  return kExitOk;
}

struct EvaluateArgs {
  std::string ckpt, data, report;
};

ordered_json stats(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
  ordered_json j;
  j["mean"] = mean;
  j["sd"] = sd;
  return j;
}

ordered_json report_json(const EvalReport& r, bool with_flow) {
  ordered_json j;
  j["lvbp_dice"] = r.dice[0];
  j["lvm_dice"] = r.dice[1];
  j["rv_dice"] = r.dice[2];
  j["avg_dice"] = r.avg_dice;
  j["hd_mm"] = r.hd_mm_mean;
  j["hd_mm_lvbp"] = r.hd_mm[0];
  j["hd_mm_lvm"] = r.hd_mm[1];
  j["hd_mm_rv"] = r.hd_mm[2];
  j["hd_mm_foreground"] = r.hd_mm_foreground;
  if (with_flow) {
    j["foldings"] = r.foldings;
    j["jacobian_min"] = r.jacobian_min;
  }
  return j;
}

template <typename T>
int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto net = network_from_checkpoint<T>(load_checkpoint(a.ckpt));
  const auto cases = load_dataset(a.data);
  std::vector<EvalReport> reports;
  ordered_json per_case = ordered_json::array();
  for (const auto& c : cases) {
    if (!(c.moving.shape == net.config().in_shape)) {
      throw ShapeError("case " + c.name + " does not match the checkpoint input shape");
    }
    const auto r = net.register_pair(network_input<T>(c.moving), network_input<T>(c.fixed), SampleMode::mean);
    EvalReport rep;
    try {
      rep = evaluate_case(warp_labels(c.moving_labels, r.flow), c.fixed_labels, r.flow);
    } catch (const DataError& e) {
      throw DataError("case " + c.name + ": " + e.what());
    }
    reports.push_back(rep);
    ordered_json j;
    j["case"] = c.name;
    j["registered"] = report_json(rep, true);
    j["pre_registration"] = report_json(evaluate_labels(c.moving_labels, c.fixed_labels), false);
    per_case.push_back(j);
  }
  auto column = [&](auto get) {
    std::vector<double> xs;
    for (const auto& r : reports) xs.push_back(get(r));
    return stats(xs);
  };
  ordered_json report;
  report["aggregate"]["lvbp_dice"] = column([](const EvalReport& r) { return r.dice[0]; });
  report["aggregate"]["lvm_dice"] = column([](const EvalReport& r) { return r.dice[1]; });
  report["aggregate"]["rv_dice"] = column([](const EvalReport& r) { return r.dice[2]; });
  report["aggregate"]["avg_dice"] = column([](const EvalReport& r) { return r.avg_dice; });
  report["aggregate"]["hd_mm"] = column([](const EvalReport& r) { return r.hd_mm_mean; });
  report["aggregate"]["foldings"] = column([](const EvalReport& r) { return static_cast<double>(r.foldings); });
  report["aggregate"]["jacobian_min"] = column([](const EvalReport& r) { return r.jacobian_min; });
  report["cases"] = per_case;
  std::ofstream f(a.report);
  if (!f) throw DataError("cannot write report " + a.report);
  f << report.dump(2) << "\n";
  if (!f) throw DataError("write failure on " + a.report);
  out << report["aggregate"].dump() << "\n";
  return kExitOk;
}

struct DumpArgs {
  std::string ckpt, moving, fixed, out;
};

template <typename T>
int cmd_dump_attention(const DumpArgs& a) {
  const auto net = network_from_checkpoint<T>(load_checkpoint(a.ckpt));
  const Volume moving = read_volume(a.moving);
  const Volume fixed = read_volume(a.fixed);
  require_matching(moving, fixed);
  const auto feats = net.extract_features(network_input<T>(moving), network_input<T>(fixed));
  const auto att = net.attend(feats);
  const Spacing quarter{moving.spacing[0] * 4, moving.spacing[1] * 4, moving.spacing[2] * 4};
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw DataError("cannot create " + a.out + ": " + ec.message());
  const fs::path dir(a.out);
  write_volume(to_volume(att.gate_mov, quarter), dir / "gate_mov");
  write_volume(to_volume(att.gate_fix, quarter), dir / "gate_fix");
  write_volume(to_volume(att.o_mov, quarter), dir / "o_mov");
  write_volume(to_volume(att.o_fix, quarter), dir / "o_fix");
  std::ofstream m(dir / "alpha.txt");
  m << std::setprecision(9) << "alpha_mov " << net.attention_params().alpha_mov.item() << "\n"
    << "alpha_fix " << net.attention_params().alpha_fix.item() << "\n";
  if (!m) throw DataError("cannot write alpha manifest in " + a.out);
  return kExitOk;
}

// ---- gradcheck -----------------------------------------------------------

int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out, std::ostream& err) {
  const auto results = run_gradcheck(o);
  std::vector<std::string> failed;
  for (const auto& r : results) {
    char line[256];
    std::snprintf(line, sizeof line, "%-24s worst_rel_err=%.3e checked=%zu skipped=%zu %s", r.name.c_str(),
                  r.worst_error, r.checked, r.skipped, r.passed ? "PASS" : "FAIL");
    out << line << "\n";
    if (!r.passed) failed.push_back(r.name);
  }
  if (results.empty()) throw UsageError("gradcheck: --only matched no check");
  if (failed.empty()) return kExitOk;
  err << "gradcheck failed:";
  for (const auto& f : failed) err << " " << f;
  err << "\n";
  return kExitNumeric;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unsupervised deformable registration with co-attention"};
  app.name("coatreg");
  app.require_subcommand(1);

  std::function<int()> action;

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate synthetic phantom pairs");
  s->add_option("--seed", synth.seed);
  s->add_option("--count", synth.count)->required();
  s->add_option("--dims", synth.dims, "WxHxD")->capture_default_str();
  s->add_option("--spacing", synth.spacing, "sx,sy,sz in mm")->capture_default_str();
  s->add_option("--max-disp", synth.max_disp, "bound on ground-truth displacement, voxels")->capture_default_str();
  s->add_option("--out", synth.out)->required();
  s->callback([&] { action = [&] { return cmd_synth(synth, out); }; });

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a network with Adam");
  t->add_option("--data", train.data)->required();
  t->add_option("--out", train.out, "checkpoint path (writes <out>.json and <out>.bin)")->required();
  t->add_option("--iters", train.iters, "total iteration count to reach")->required();
  t->add_option("--lr", train.lr)->capture_default_str();
  t->add_option("--batch", train.batch)->capture_default_str();
  t->add_option("--lambda-sim", train.lambda_sim)->capture_default_str();
  t->add_option("--lambda-kl", train.lambda_kl)->capture_default_str();
  t->add_option("--prior-lambda", train.prior_lambda)->capture_default_str();
  t->add_option("--kl-normalization", train.kl_normalization, "per-voxel (default) or sum")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, KlNormalization>{{"per-voxel", KlNormalization::per_voxel},
                                                 {"sum", KlNormalization::sum}}));
  auto* seed_opt = t->add_option("--seed", train.seed);
  t->add_option("--resume", train.resume, "checkpoint to continue from");
  t->add_option("--save-every", train.save_every, "also checkpoint every N iterations");
  t->callback([&] {
    train.seed_given = seed_opt->count() > 0;
    action = [&] {
      return precision_from_env() == Precision::f64 ? cmd_train<double>(train, out) : cmd_train<float>(train, out);
    };
  });

  RegisterArgs reg;
  auto* r = app.add_subcommand("register", "Register a moving volume to a fixed volume");
  r->add_option("--ckpt", reg.ckpt)->required();
  r->add_option("--moving", reg.moving, "RVOL1 stem")->required();
  r->add_option("--fixed", reg.fixed, "RVOL1 stem")->required();
  r->add_option("--out-warped", reg.out_warped)->required();
  r->add_option("--out-flow", reg.out_flow)->required();
  auto* mean_flag = r->add_flag("--mean", "posterior mean velocity (default)");
  r->add_flag("--sample", reg.sample, "sample the velocity")->excludes(mean_flag);
  r->add_option("--seed", reg.seed);
  r->callback([&] {
    action = [&] { return precision_from_env() == Precision::f64 ? cmd_register<double>(reg) : cmd_register<float>(reg); };
  });

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset");
  e->add_option("--ckpt", ev.ckpt)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--report", ev.report)->required();
  e->callback([&] {
    action = [&] {
      return precision_from_env() == Precision::f64 ? cmd_evaluate<double>(ev, out) : cmd_evaluate<float>(ev, out);
    };
  });

  GradcheckOptions gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  g->add_option("--seed", gc.seed);
  g->add_option("--tol", gc.tol)->capture_default_str();
  g->add_option("--only", gc.filter, "run checks whose name contains this");
  g->add_option("--step", gc.step, "central-difference step")->capture_default_str();
  // Test hook: corrupt the backward pass of one op.
  g->add_option("--perturb-op", gc.perturb_op)->group("");
  g->callback([&] { action = [&] { return cmd_gradcheck(gc, out, err); }; });

  DumpArgs dump;
  auto* d = app.add_subcommand("dump-attention", "Export co-attention gates and outputs");
  d->add_option("--ckpt", dump.ckpt)->required();
  d->add_option("--moving", dump.moving)->required();
  d->add_option("--fixed", dump.fixed)->required();
  d->add_option("--out", dump.out)->required();
  d->callback([&] {
    action = [&] {
      return precision_from_env() == Precision::f64 ? cmd_dump_attention<double>(dump) : cmd_dump_attention<float>(dump);
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    return action();
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& ex) {
    err << "numeric error: " << ex.what() << "\n";
    return kExitNumeric;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitData;
  }
}

}  // namespace coatreg::cli
