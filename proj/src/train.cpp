#include "coatreg/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "coatreg/error.hpp"

namespace coatreg {

void write_case(const SynthCase& c, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  write_volume(pack_case_volume(c.moving, c.moving_labels), dir / "moving");
  write_volume(pack_case_volume(c.fixed, c.fixed_labels), dir / "fixed");
  write_volume(to_volume(c.gt_flow.disp, c.moving.spacing), dir / "gt_flow");
}

CaseData read_case(const std::filesystem::path& dir) {
  CaseData c;
  c.name = dir.filename().string();
  try {
    const Volume m = read_volume(dir / "moving");
    const Volume f = read_volume(dir / "fixed");
    if (m.channels < 2 || f.channels < 2) throw DataError("missing label channel");
    if (!(m.shape == f.shape)) throw DataError("moving and fixed differ in shape");
    if (m.spacing != f.spacing) throw DataError("moving and fixed differ in spacing");
    c.moving = m.channel(0);
    c.fixed = f.channel(0);
    c.moving_labels = labels_from_volume(m, 1);
    c.fixed_labels = labels_from_volume(f, 1);
  } catch (const DataError& e) {
    throw DataError("case " + c.name + ": " + e.what());
  }
  return c;
}

std::vector<CaseData> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " not found");
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory() && e.path().filename().string().rfind("case_", 0) == 0) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<CaseData> out;
  for (const auto& d : dirs) out.push_back(read_case(d));
  if (out.empty()) throw DataError("no case_* directories in " + dir.string());
  return out;
}

template <typename T>
std::vector<TrainingPair<T>> make_training_pairs(const std::vector<CaseData>& cases) {
  std::vector<TrainingPair<T>> pairs;
  for (const auto& c : cases) {
    const auto m = to_tensor<T>(c.moving);
    const auto f = to_tensor<T>(c.fixed);
    pairs.push_back({m, f});
    pairs.push_back({f, m});
  }
  return pairs;
}

void TrainOptions::validate() const {
  if (batch < 1) throw UsageError("batch must be at least 1");
  if (!(adam.lr > 0.0)) throw UsageError("learning rate must be positive");
  weights.validate();
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t iteration, std::size_t batch,
                                       std::size_t pair_count) {
  if (pair_count == 0) throw UsageError("no training pairs");
  std::vector<std::size_t> out;
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> perm(pair_count);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint64_t j = iteration * batch + b;
    const std::uint64_t epoch = j / pair_count;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng = make_rng(seed, {id(Stream::shuffle), epoch});
      // Fisher-Yates with explicit draws; std::shuffle is implementation-defined.
      for (std::size_t i = pair_count; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
      cached_epoch = epoch;
    }
    out.push_back(perm[j % pair_count]);
  }
  return out;
}

template <typename T>
Trainer<T>::Trainer(RegistrationNetwork<T> network, TrainOptions options, std::vector<TrainingPair<T>> pairs)
    : network_(std::move(network)),
      options_(options),
      pairs_(std::move(pairs)),
      optimizer_(network_.parameters(), options.adam) {
  options_.validate();
  if (pairs_.empty()) throw UsageError("trainer needs at least one training pair");
  const Shape expected = volume_shape(network_.config().in_shape, 1);
  for (const auto& p : pairs_) {
    if (p.moving.shape() != expected || p.fixed.shape() != expected) {
      throw ShapeError("training pair " + shape_string(p.moving.shape()) + " does not match network input " +
                       shape_string(expected));
    }
  }
}

template <typename T>
Trainer<T> Trainer<T>::resume(const Checkpoint& checkpoint, TrainOptions options, std::vector<TrainingPair<T>> pairs) {
  Trainer t(network_from_checkpoint<T>(checkpoint), options, std::move(pairs));
  std::vector<std::vector<T>> m, v;
  for (const auto& p : t.network_.parameters()) {
    const auto& sm = checkpoint.require("opt.m." + p.name, p.tensor.shape());
    const auto& sv = checkpoint.require("opt.v." + p.name, p.tensor.shape());
    m.emplace_back(sm.data.begin(), sm.data.end());
    v.emplace_back(sv.data.begin(), sv.data.end());
  }
  t.optimizer_.restore(std::move(m), std::move(v), checkpoint.meta.iteration);
  return t;
}

template <typename T>
IterationRecord Trainer<T>::step() {
  const std::uint64_t it = optimizer_.steps();
  const auto members = batch_indices(options_.seed, it, options_.batch, pairs_.size());
  const auto params = network_.parameters();
  std::vector<std::vector<T>> grads;
  for (const auto& p : params) grads.emplace_back(p.tensor.numel(), T(0));

  IterationRecord rec;
  rec.iter = it + 1;
  for (std::size_t b = 0; b < members.size(); ++b) {
    const auto& pair = pairs_[members[b]];
    Rng rng = make_rng(options_.seed, {id(Stream::sampling), it, b});
    Tape<T> tape;
    TapeScope<T> scope(tape);
    const auto r = network_.register_pair(pair.moving, pair.fixed, SampleMode::sample, &rng);
    const auto loss = total_loss(r.warped, pair.fixed, r.dist, options_.weights);
    const double value = loss.total.item();
    if (!std::isfinite(value)) throw NumericError("non-finite loss at iteration " + std::to_string(rec.iter));
    tape.backward(loss.total);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto g = tape.grad(params[i].tensor);
      for (std::size_t k = 0; k < g.size(); ++k) grads[i][k] += g[k];
    }
    rec.loss += value;
    rec.ncc += loss.ncc.item();
    rec.kl += loss.kl.item();
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (auto& g : grads) {
    for (auto& x : g) {
      x = static_cast<T>(x * inv);
      if (!std::isfinite(static_cast<double>(x))) {
        throw NumericError("non-finite gradient at iteration " + std::to_string(rec.iter));
      }
    }
  }
  rec.loss *= inv;
  rec.ncc *= inv;
  rec.kl *= inv;
  optimizer_.step(grads);
  return rec;
}

template <typename T>
Checkpoint Trainer<T>::checkpoint() const {
  Checkpoint ck;
  ck.meta.iteration = optimizer_.steps();
  ck.meta.seed = options_.seed;
  ck.meta.config = network_.config();
  ck.meta.extra["lr"] = options_.adam.lr;
  ck.meta.extra["batch"] = options_.batch;
  ck.meta.extra["lambda_sim"] = options_.weights.lambda_sim;
  ck.meta.extra["lambda_kl"] = options_.weights.lambda_kl;
  ck.meta.extra["prior_lambda"] = options_.weights.prior_lambda;
  ck.meta.extra["kl_normalization"] =
      options_.weights.kl_normalization == KlNormalization::sum ? "sum" : "per-voxel";
  ck.tensors = network_tensors(network_);
  const auto& params = optimizer_.params();
  for (const char* which : {"m", "v"}) {
    const auto& moments = which[0] == 'm' ? optimizer_.first_moments() : optimizer_.second_moments();
    for (std::size_t i = 0; i < params.size(); ++i) {
      ck.tensors.push_back({std::string("opt.") + which + "." + params[i].name, params[i].tensor.shape(),
                            std::vector<float>(moments[i].begin(), moments[i].end())});
    }
  }
  return ck;
}

template std::vector<TrainingPair<float>> make_training_pairs<float>(const std::vector<CaseData>&);
template std::vector<TrainingPair<double>> make_training_pairs<double>(const std::vector<CaseData>&);
template class Trainer<float>;
template class Trainer<double>;

}  // namespace coatreg
