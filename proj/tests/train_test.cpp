#include <cmath>
#include <numeric>
#include <set>

#include "coatreg/error.hpp"
#include "coatreg/train.hpp"
#include "support.hpp"

using namespace coatreg;
using testsupport::slurp;
using testsupport::TempDir;

namespace {

std::vector<CaseData> make_cases(std::size_t n, Grid3 shape) {
  std::vector<CaseData> out;
  for (std::size_t k = 0; k < n; ++k) {
    const auto c = generate_gt_pair(derive_seed(77, {k}), shape, kDefaultSpacing);
    out.push_back({"case_" + std::to_string(k), c.moving, c.fixed, c.moving_labels, c.fixed_labels});
  }
  return out;
}

}  // namespace

TEST(Adam, MatchesHandComputedSteps) {
  Tensor<double> p({3}, {1.0, -2.0, 0.5});
  Adam<double> adam({{"p", p}}, AdamOptions{0.1, 0.9, 0.999, 1e-8});
  const std::vector<double> g1{0.5, -4.0, 0.0}, g2{-1.0, 2.0, 3.0};
  std::vector<double> ref{1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
  int t = 0;
  for (const auto& g : {g1, g2}) {
    adam.step({g});
    ++t;
    // The first step moves each element with a nonzero gradient by lr.
    if (t == 1) {
      EXPECT_NEAR(p.at(0), 0.9, 1e-7);
    }
    for (int i = 0; i < 3; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(p.at(i), ref[i], 1e-15);
  }
  EXPECT_EQ(adam.steps(), 2u);
  EXPECT_THROW(adam.step({{1.0}}), UsageError);
  EXPECT_THROW(Adam<double>({{"p", p}}, AdamOptions{0.0}), UsageError);
}

TEST(BatchIndices, PureAndPermutedPerEpoch) {
  const std::size_t pairs = 10, batch = 2;
  EXPECT_EQ(batch_indices(3, 7, batch, pairs), batch_indices(3, 7, batch, pairs));
  // Each epoch visits every pair exactly once.
  for (std::uint64_t epoch = 0; epoch < 4; ++epoch) {
    std::multiset<std::size_t> seen;
    for (std::uint64_t it = epoch * 5; it < epoch * 5 + 5; ++it)
      for (auto i : batch_indices(3, it, batch, pairs)) seen.insert(i);
    for (std::size_t i = 0; i < pairs; ++i) EXPECT_EQ(seen.count(i), 1u);
  }
  // Epochs are reshuffled.
  std::vector<std::size_t> e0, e1;
  for (std::uint64_t it = 0; it < 5; ++it) {
    for (auto i : batch_indices(3, it, batch, pairs)) e0.push_back(i);
    for (auto i : batch_indices(3, it + 5, batch, pairs)) e1.push_back(i);
  }
  EXPECT_NE(e0, e1);
  // A batch can straddle an epoch boundary.
  EXPECT_EQ(batch_indices(3, 1, 3, 4).size(), 3u);
  EXPECT_THROW(batch_indices(3, 0, 2, 0), UsageError);
}

TEST(TrainingPairs, BothDirections) {
  const auto cases = make_cases(2, {16, 16, 8});
  const auto pairs = make_training_pairs<float>(cases);
  ASSERT_EQ(pairs.size(), 4u);
  EXPECT_EQ(testsupport::values(pairs[0].moving), testsupport::values(pairs[1].fixed));
  EXPECT_EQ(testsupport::values(pairs[0].fixed), testsupport::values(pairs[1].moving));
}

TEST(Trainer, FirstIterationStartsAtTheIdentity) {
  // Default init: zero mu head and log-variance near -10, so the first warp
  // is the identity up to sampling noise of order exp(-5).
  const auto cases = make_cases(3, {16, 16, 8});
  const auto pairs = make_training_pairs<float>(cases);
  TrainOptions opts;
  opts.seed = 5;
  Trainer<float> trainer(RegistrationNetwork<float>(NetworkConfig::for_shape({16, 16, 8}, 5)), opts, pairs);
  const auto rec = trainer.step();
  double want = 0;
  for (auto i : batch_indices(opts.seed, 0, opts.batch, pairs.size())) {
    want += ncc_loss(pairs[i].moving, pairs[i].fixed).item();
  }
  want /= opts.batch;
  EXPECT_NEAR(rec.ncc, want, 1e-3 * want);
  EXPECT_EQ(rec.iter, 1u);
}

TEST(Trainer, ResumeEqualsStraightRun) {
  TempDir dir;
  const auto pairs = make_training_pairs<float>(make_cases(3, {16, 16, 8}));
  TrainOptions opts;
  opts.seed = 9;
  opts.adam.lr = 1e-3;
  const auto net = RegistrationNetwork<float>(NetworkConfig::for_shape({16, 16, 8}, 9));

  Trainer<float> straight(net, opts, pairs);
  for (int i = 0; i < 4; ++i) straight.step();

  // Fresh network from the same seed: the copy above shares storage.
  Trainer<float> first(RegistrationNetwork<float>(NetworkConfig::for_shape({16, 16, 8}, 9)), opts, pairs);
  for (int i = 0; i < 3; ++i) first.step();
  save_checkpoint(first.checkpoint(), dir / "n");
  auto resumed = Trainer<float>::resume(load_checkpoint(dir / "n"), opts, pairs);
  EXPECT_EQ(resumed.iteration(), 3u);
  resumed.step();

  save_checkpoint(straight.checkpoint(), dir / "a");
  save_checkpoint(resumed.checkpoint(), dir / "b");
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
}

TEST(Trainer, LossDescends) {
  // 200 iterations on 8 desk-scale cases; compare 20-iteration means.
  const auto pairs = make_training_pairs<float>(make_cases(8, {32, 32, 16}));
  TrainOptions opts;
  opts.seed = 1;
  Trainer<float> trainer(RegistrationNetwork<float>(NetworkConfig::for_shape({32, 32, 16}, 1)), opts, pairs);
  std::vector<double> loss;
  for (int i = 0; i < 200; ++i) loss.push_back(trainer.step().loss);
  const double head = std::accumulate(loss.begin(), loss.begin() + 20, 0.0) / 20;
  const double tail = std::accumulate(loss.end() - 20, loss.end(), 0.0) / 20;
  EXPECT_LT(tail, head);
}

TEST(Trainer, RejectsBadOptions) {
  TrainOptions o;
  o.batch = 0;
  EXPECT_THROW(o.validate(), UsageError);
  o = TrainOptions{};
  o.adam.lr = -1;
  EXPECT_THROW(o.validate(), UsageError);
  o = TrainOptions{};
  o.weights.lambda_sim = 0;
  EXPECT_THROW(o.validate(), UsageError);
}
