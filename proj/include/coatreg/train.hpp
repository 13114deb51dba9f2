#pragma once

// Dataset layout and the training loop.
//
// A dataset directory holds case_<k>/ subdirectories (sorted by name), each
// with RVOL1 volumes moving, fixed (channel 0 intensity, channel 1 labels)
// and gt_flow (3 channels).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coatreg/checkpoint.hpp"
#include "coatreg/losses.hpp"
#include "coatreg/optim.hpp"
#include "coatreg/phantom.hpp"
#include "coatreg/regnet.hpp"

namespace coatreg {

struct CaseData {
  std::string name;
  Volume moving;  // one channel
  Volume fixed;
  LabelVolume moving_labels;
  LabelVolume fixed_labels;
};

void write_case(const SynthCase& c, const std::filesystem::path& dir);
CaseData read_case(const std::filesystem::path& dir);
std::vector<CaseData> load_dataset(const std::filesystem::path& dir);

template <typename T>
struct TrainingPair {
  Tensor<T> moving;
  Tensor<T> fixed;
};

// Both directions of every case, in case order: (m->f, f->m, ...).
template <typename T>
std::vector<TrainingPair<T>> make_training_pairs(const std::vector<CaseData>& cases);

struct TrainOptions {
  AdamOptions adam;
  std::size_t batch = 2;
  LossWeights weights;
  std::uint64_t seed = 0;

  void validate() const;
};

struct IterationRecord {
  std::uint64_t iter = 0;  // 1-based index of the completed iteration
  double loss = 0.0;
  double ncc = 0.0;
  double kl = 0.0;
};

// Pairs used at 0-based iteration i: positions i*batch .. i*batch+batch-1 of
// an endless sequence of per-epoch permutations. Pure in (seed, i).
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t iteration, std::size_t batch,
                                       std::size_t pair_count);

template <typename T>
class Trainer {
 public:
  Trainer(RegistrationNetwork<T> network, TrainOptions options, std::vector<TrainingPair<T>> pairs);
  // Network, Adam moments and iteration count from a checkpoint.
  static Trainer resume(const Checkpoint& checkpoint, TrainOptions options, std::vector<TrainingPair<T>> pairs);

  // One Adam step on the batch-mean gradient. Members are processed in
  // order; NumericError on a non-finite loss (parameters untouched).
  IterationRecord step();

  [[nodiscard]] std::uint64_t iteration() const noexcept { return optimizer_.steps(); }
  [[nodiscard]] const RegistrationNetwork<T>& network() const noexcept { return network_; }
  [[nodiscard]] RegistrationNetwork<T>& network() noexcept { return network_; }
  [[nodiscard]] Checkpoint checkpoint() const;

 private:
  RegistrationNetwork<T> network_;
  TrainOptions options_;
  std::vector<TrainingPair<T>> pairs_;
  Adam<T> optimizer_;
};

}  // namespace coatreg
