#include <cmath>
#include <numeric>

#include "coatreg/coattention.hpp"
#include "coatreg/error.hpp"
#include "support.hpp"

using namespace coatreg;
using testsupport::random_tensor;
using testsupport::values;

namespace {

CoAttentionParams<double> make_params(std::size_t cin, std::size_t catt, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return CoAttentionParams<double>::create(cin, catt, rng);
}

// Randomizes biases too, so no path is trivially zero.
void randomize(CoAttentionParams<double>& p, std::uint64_t seed) {
  ParameterList<double> list;
  p.collect("att", list);
  std::uint64_t s = seed;
  for (auto& e : list) {
    auto d = e.tensor.mutable_data();
    const auto r = testsupport::uniform<double>(d.size(), ++s, -0.8, 0.8);
    std::copy(r.begin(), r.end(), d.begin());
  }
}

std::vector<double> pointwise(const ConvLayer<double>& layer, const std::vector<double>& x, std::size_t n) {
  const std::size_t cin = layer.in_channels(), cout = layer.out_channels();
  const auto w = values(layer.weight), b = values(layer.bias);
  std::vector<double> y(n * cout);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t co = 0; co < cout; ++co) {
      double acc = b[co];
      for (std::size_t ci = 0; ci < cin; ++ci) acc += w[co + cout * ci] * x[ci + cin * i];
      y[co + cout * i] = acc;
    }
  return y;
}

}  // namespace

TEST(CoAttention, ZeroAlphaCollapsesToProjections) {
  auto p = make_params(4, 4, 1);
  randomize(p, 2);
  p.alpha_mov.mutable_data()[0] = 0.0;
  p.alpha_fix.mutable_data()[0] = 0.0;
  const auto fm = random_tensor(volume_shape({3, 2, 2}, 4), 3);
  const auto ff = random_tensor(volume_shape({3, 2, 2}, 4), 4);
  const auto out = co_attention_forward(fm, ff, p);
  EXPECT_EQ(values(out.o_mov), values(p.h1(fm)));
  EXPECT_EQ(values(out.o_fix), values(p.h2(ff)));
  const auto plain = plain_projection_forward(fm, ff, p);
  EXPECT_EQ(values(plain.o_mov), values(out.o_mov));
  EXPECT_EQ(values(plain.o_fix), values(out.o_fix));
}

TEST(CoAttention, IdenticalInputsAndTiedWeightsAreSymmetric) {
  auto p = make_params(4, 4, 5);
  randomize(p, 6);
  p.g = {Tensor<double>(p.f.weight.shape(), values(p.f.weight)), Tensor<double>(p.f.bias.shape(), values(p.f.bias))};
  p.h2 = {Tensor<double>(p.h1.weight.shape(), values(p.h1.weight)),
          Tensor<double>(p.h1.bias.shape(), values(p.h1.bias))};
  const auto f = random_tensor(volume_shape({2, 2, 2}, 4), 7);
  const auto out = co_attention_forward(f, f, p);
  const auto s = values(out.similarity);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(s[i * 8 + j], s[j * 8 + i], 1e-12);
  const auto am = values(out.att_mov), af = values(out.att_fix);
  for (std::size_t i = 0; i < am.size(); ++i) EXPECT_NEAR(am[i], af[i], 1e-6);
}

TEST(CoAttention, MatchesLoopOracle) {
  const std::size_t c = 4, n = 8;
  auto p = make_params(c, c, 8);
  randomize(p, 9);
  const auto fm = random_tensor(volume_shape({2, 2, 2}, c), 10);
  const auto ff = random_tensor(volume_shape({2, 2, 2}, c), 11);
  const auto out = co_attention_forward(fm, ff, p);
  ASSERT_EQ(out.similarity.shape(), (Shape{n, n}));

  const auto fq = pointwise(p.f, values(fm), n), gk = pointwise(p.g, values(ff), n);
  const auto h1 = pointwise(p.h1, values(fm), n), h2 = pointwise(p.h2, values(ff), n);
  std::vector<double> s(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < c; ++k) acc += fq[k + c * i] * gk[k + c * j];
      s[i * n + j] = acc;
    }
  const auto sim = values(out.similarity);
  for (std::size_t i = 0; i < n * n; ++i) EXPECT_NEAR(sim[i], s[i], 1e-12);

  const auto att_mov = values(out.att_mov), att_fix = values(out.att_fix);
  for (std::size_t i = 0; i < n; ++i) {
    double zr = 0, zc = 0, mr = -1e300, mc = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      mr = std::max(mr, s[i * n + j]);
      mc = std::max(mc, s[j * n + i]);
    }
    for (std::size_t j = 0; j < n; ++j) {
      zr += std::exp(s[i * n + j] - mr);
      zc += std::exp(s[j * n + i] - mc);
    }
    double row_total = 0;
    for (std::size_t k = 0; k < c; ++k) {
      double em = 0, ef = 0;
      for (std::size_t j = 0; j < n; ++j) {
        em += std::exp(s[i * n + j] - mr) / zr * h2[k + c * j];
        ef += std::exp(s[j * n + i] - mc) / zc * h1[k + c * j];
      }
      EXPECT_NEAR(att_mov[k + c * i], em, 1e-12);
      EXPECT_NEAR(att_fix[k + c * i], ef, 1e-12);
    }
    for (std::size_t j = 0; j < n; ++j) row_total += std::exp(s[i * n + j] - mr) / zr;
    EXPECT_NEAR(row_total, 1.0, 1e-12);
  }

  // O = h + alpha * sigmoid(gate(ATT)) * h
  const double am = p.alpha_mov.item();
  const auto gate = pointwise(p.gate_mov, att_mov, n);
  const auto o = values(out.o_mov);
  for (std::size_t i = 0; i < o.size(); ++i) {
    EXPECT_NEAR(o[i], h1[i] + am * (1.0 / (1.0 + std::exp(-gate[i]))) * h1[i], 1e-12);
  }
}

TEST(CoAttention, SpatialPermutationEquivariance) {
  const std::size_t c = 3;
  const Grid3 g{3, 2, 2};
  const std::size_t n = g.voxels();
  auto p = make_params(c, c, 12);
  randomize(p, 13);
  const auto fm = values(random_tensor(volume_shape(g, c), 14));
  const auto ff = values(random_tensor(volume_shape(g, c), 15));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = make_rng(16);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto permute = [&](const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k) out[k + c * i] = v[k + c * perm[i]];
    return out;
  };
  const Shape shape = volume_shape(g, c);
  const auto base = co_attention_forward(Tensor<double>(shape, fm), Tensor<double>(shape, ff), p);
  const auto moved = co_attention_forward(Tensor<double>(shape, permute(fm)), Tensor<double>(shape, permute(ff)), p);
  const auto a = permute(values(base.o_mov)), b = values(moved.o_mov);
  const auto a2 = permute(values(base.o_fix)), b2 = values(moved.o_fix);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i], b[i], 1e-12);
    EXPECT_NEAR(a2[i], b2[i], 1e-12);
  }
  const auto s0 = values(base.similarity), s1 = values(moved.similarity);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(s1[i * n + j], s0[perm[i] * n + perm[j]], 1e-12);
}

TEST(CoAttention, GradientFlow) {
  auto p = make_params(4, 4, 17);
  randomize(p, 18);
  const auto fm = random_tensor(volume_shape({2, 2, 2}, 4), 19);
  const auto ff = random_tensor(volume_shape({2, 2, 2}, 4), 20);
  const auto wm = random_tensor(volume_shape({2, 2, 2}, 4), 21);
  const auto wf = random_tensor(volume_shape({2, 2, 2}, 4), 22);
  ParameterList<double> list;
  p.collect("att", list);

  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const auto out = co_attention_forward(fm, ff, p);
    tape.backward(add(sum(mul(out.o_mov, wm)), sum(mul(out.o_fix, wf))));
    for (const auto& e : list) {
      const auto g = tape.grad(e.tensor);
      EXPECT_TRUE(std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; })) << e.name;
    }
  }

  p.alpha_mov.mutable_data()[0] = 0.0;
  p.alpha_fix.mutable_data()[0] = 0.0;
  Tape<double> tape;
  TapeScope<double> scope(tape);
  const auto out = co_attention_forward(fm, ff, p);
  tape.backward(add(sum(mul(out.o_mov, wm)), sum(mul(out.o_fix, wf))));
  for (const auto& e : list) {
    if (e.name.find("gate") == std::string::npos) continue;
    for (double v : tape.grad(e.tensor)) EXPECT_EQ(v, 0.0) << e.name;
  }
}

TEST(CoAttention, ShapesAndBudget) {
  auto p = make_params(4, 6, 23);
  const auto f = random_tensor(volume_shape({4, 4, 2}, 4), 24);
  const auto out = co_attention_forward(f, f, p);
  EXPECT_EQ(out.o_mov.shape(), volume_shape({4, 4, 2}, 6));
  EXPECT_EQ(out.att_fix.shape(), volume_shape({4, 4, 2}, 6));
  for (double v : values(out.gate_mov)) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(co_attention_forward(f, f, p, 31), ResourceError);
  EXPECT_THROW(co_attention_forward(f, random_tensor(volume_shape({4, 4, 1}, 4), 25), p), ShapeError);
  EXPECT_THROW(co_attention_forward(random_tensor(volume_shape({2, 2, 2}, 3), 26),
                                    random_tensor(volume_shape({2, 2, 2}, 3), 27), p),
               ShapeError);
}
