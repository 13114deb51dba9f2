#include "coatreg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>

#include "coatreg/coattention.hpp"
#include "coatreg/error.hpp"
#include "coatreg/losses.hpp"
#include "coatreg/ops.hpp"
#include "coatreg/phantom.hpp"
#include "coatreg/regnet.hpp"

namespace coatreg {
namespace {

using Td = Tensor<double>;

Td random_param(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = dist(rng);
  return Td::parameter(std::move(shape), std::move(v));
}

Td random_const(Shape shape, Rng& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = dist(rng);
  return Td(std::move(shape), std::move(v));
}

// Scalar projection <w, out> so every output element contributes.
Td project(const Td& out, const Td& w) { return sum(mul(out, w)); }

std::vector<GradcheckLeaf> leaves_of(std::initializer_list<std::pair<const char*, Td>> items) {
  std::vector<GradcheckLeaf> out;
  for (const auto& [n, t] : items) out.push_back({n, t, {}});
  return out;
}

struct Check {
  std::string name;
  std::function<GradcheckResult(const GradcheckOptions&, Rng&)> run;
};

// Smooth single-channel image with values in [0, 1].
Td smooth_image(Grid3 g, Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(g.voxels());
  for (auto& x : v) x = dist(rng);
  gaussian_blur(v, g, 1, 1.0);
  return Td(volume_shape(g, 1), std::move(v));
}

template <typename Build>
Check unary(const std::string& name, Shape shape, Build build, double lo = -2.0, double hi = 2.0) {
  return {name, [=](const GradcheckOptions& o, Rng& rng) {
            Td x = random_param(shape, rng, lo, hi);
            Td w = random_const(build(x).shape(), rng);
            return check_gradient(name, leaves_of({{"x", x}}), [=] { return project(build(x), w); }, o);
          }};
}

std::vector<Check> all_checks() {
  std::vector<Check> checks;
  checks.push_back({"matmul", [](const GradcheckOptions& o, Rng& rng) {
                      Td a = random_param({3, 4}, rng), b = random_param({4, 5}, rng);
                      Td w = random_const({3, 5}, rng);
                      return check_gradient("matmul", leaves_of({{"a", a}, {"b", b}}),
                                            [=] { return project(matmul(a, b), w); }, o);
                    }});
  checks.push_back(unary("softmax", {4, 6}, [](const Td& x) { return softmax(x, 1); }, -3.0, 3.0));
  checks.push_back(unary("softmax_axis0", {4, 6}, [](const Td& x) { return softmax(x, 0); }, -3.0, 3.0));
  checks.push_back(unary("sigmoid", {2, 3, 4, 2}, [](const Td& x) { return sigmoid(x); }, -4.0, 4.0));
  checks.push_back(unary("leaky_relu", {2, 3, 4, 2}, [](const Td& x) { return leaky_relu(x); }));
  checks.push_back(unary("exp", {2, 3, 2, 2}, [](const Td& x) { return exp(x); }));
  checks.push_back(unary("clamp", {2, 3, 4, 2}, [](const Td& x) { return clamp(x, -1.0, 1.0); }));
  checks.push_back({"elementwise", [](const GradcheckOptions& o, Rng& rng) {
                      Td a = random_param({2, 2, 3, 2}, rng), b = random_param({2, 2, 3, 2}, rng);
                      Td alpha = random_param({1}, rng);
                      Td w = random_const({2, 2, 3, 4}, rng);
                      return check_gradient(
                          "elementwise", leaves_of({{"a", a}, {"b", b}, {"alpha", alpha}}),
                          [=] {
                            Td m = mul_scalar(sub(mul(a, b), scale(add(a, b), 0.3)), alpha);
                            return project(concat_channels<double>({m, b}), w);
                          },
                          o);
                    }});
  for (std::size_t stride : {1, 2}) {
    const std::string name = stride == 1 ? "conv3d" : "conv3d_stride2";
    checks.push_back({name, [name, stride](const GradcheckOptions& o, Rng& rng) {
                        Td x = random_param({3, 4, 5, 2}, rng), wgt = random_param({3, 3, 3, 2, 3}, rng);
                        Td bias = random_param({3}, rng);
                        const ConvOptions opt{{stride, stride, stride}, Padding::same};
                        const Td probe = conv3d(Td(x.shape(), {x.data().begin(), x.data().end()}),
                                                Td(wgt.shape(), {wgt.data().begin(), wgt.data().end()}), Td(), opt);
                        Td w = random_const(probe.shape(), rng);
                        return check_gradient(name, leaves_of({{"input", x}, {"weight", wgt}, {"bias", bias}}),
                                              [=] { return project(conv3d(x, wgt, bias, opt), w); }, o);
                      }});
  }
  checks.push_back({"conv3d_valid", [](const GradcheckOptions& o, Rng& rng) {
                      Td x = random_param({3, 4, 4, 2}, rng), wgt = random_param({2, 3, 3, 2, 2}, rng);
                      Td w = random_const({2, 2, 2, 2}, rng);
                      const ConvOptions opt{{1, 1, 1}, Padding::valid};
                      return check_gradient("conv3d_valid", leaves_of({{"input", x}, {"weight", wgt}}),
                                            [=] { return project(conv3d(x, wgt, Td(), opt), w); }, o);
                    }});
  checks.push_back({"conv_transpose3d", [](const GradcheckOptions& o, Rng& rng) {
                      Td x = random_param({2, 2, 3, 3}, rng), wgt = random_param({2, 2, 2, 2, 3}, rng);
                      Td bias = random_param({2}, rng);
                      Td w = random_const({4, 4, 6, 2}, rng);
                      return check_gradient(
                          "conv_transpose3d", leaves_of({{"input", x}, {"weight", wgt}, {"bias", bias}}),
                          [=] { return project(conv_transpose3d(x, wgt, bias, Axes3{2, 2, 2}), w); }, o);
                    }});
  checks.push_back({"grid_sample", [](const GradcheckOptions& o, Rng& rng) {
                      Td vol = random_param({3, 4, 5, 2}, rng);
                      // Large enough to leave the grid: exercises border clamping.
                      Td disp = random_param({3, 4, 5, 3}, rng, -2.5, 2.5);
                      Td w = random_const({3, 4, 5, 2}, rng);
                      return check_gradient("grid_sample", leaves_of({{"volume", vol}, {"displacement", disp}}),
                                            [=] { return project(grid_sample(vol, disp), w); }, o);
                    }});
  checks.push_back(unary("resize_trilinear_up", {2, 3, 4, 2}, [](const Td& x) { return resize_trilinear(x, 2.0); }));
  checks.push_back(
      unary("resize_trilinear_down", {4, 4, 6, 2}, [](const Td& x) { return resize_trilinear(x, 0.5); }));
  checks.push_back(unary("resize_to", {2, 3, 4, 2}, [](const Td& x) { return resize_to(x, Grid3{5, 3, 4}); }));
  checks.push_back({"ncc_loss", [](const GradcheckOptions& o, Rng& rng) {
                      Td x = random_param({3, 4, 5, 1}, rng), y = random_param({3, 4, 5, 1}, rng);
                      return check_gradient("ncc_loss", leaves_of({{"warped", x}, {"fixed", y}}),
                                            [=] { return ncc_loss(x, y); }, o);
                    }});
  checks.push_back({"kl_loss", [](const GradcheckOptions& o, Rng& rng) {
                      Td mu = random_param({2, 3, 4, 3}, rng), lv = random_param({2, 3, 4, 3}, rng, -3.0, 1.0);
                      return check_gradient("kl_loss", leaves_of({{"mu", mu}, {"log_var", lv}}),
                                            [=] { return kl_loss(mu, lv, 10.0); }, o);
                    }});
  checks.push_back({"co_attention_forward", [](const GradcheckOptions& o, Rng& rng) {
                      auto params = CoAttentionParams<double>::create(3, 4, rng);
                      params.alpha_mov.mutable_data()[0] = 0.7;
                      params.alpha_fix.mutable_data()[0] = -0.4;
                      ParameterList<double> plist;
                      params.collect("coatt", plist);
                      std::uniform_real_distribution<double> bias(-0.3, 0.3);
                      for (auto& p : plist) {
                        if (p.tensor.rank() == 1 && p.tensor.numel() > 1) {
                          for (auto& b : p.tensor.mutable_data()) b = bias(rng);
                        }
                      }
                      Td fm = random_param({2, 3, 2, 3}, rng), ff = random_param({2, 3, 2, 3}, rng);
                      Td wm = random_const({2, 3, 2, 4}, rng), wf = random_const({2, 3, 2, 4}, rng);
                      std::vector<GradcheckLeaf> leaves{{"f_mov", fm, {}}, {"f_fix", ff, {}}};
                      for (const auto& p : plist) leaves.push_back({p.name, p.tensor, {}});
                      return check_gradient("co_attention_forward", leaves,
                                            [=] {
                                              const auto out = co_attention_forward(fm, ff, params);
                                              return add(project(out.o_mov, wm), project(out.o_fix, wf));
                                            },
                                            o);
                    }});
  checks.push_back({"integrate_svf", [](const GradcheckOptions& o, Rng& rng) {
                      Td v = random_param({2, 3, 3, 3}, rng, -0.8, 0.8);
                      Td w = random_const({4, 6, 6, 3}, rng);
                      return check_gradient("integrate_svf", leaves_of({{"velocity", v}}),
                                            [=] {
                                              auto phi = integrate_svf(DeformationField<double>{v, FieldResolution::half}, 4);
                                              return project(upsample_flow(phi).disp, w);
                                            },
                                            o);
                    }});
  checks.push_back({"network_8x8x4", [](const GradcheckOptions& o, Rng& rng) {
                      auto net = std::make_shared<RegistrationNetwork<double>>(NetworkConfig::for_shape(Grid3{8, 8, 4}));
                      net->randomize_parameters(rng());
                      // Spread the attention logits; near-uniform softmax leaves f and g
                      // with gradients below the finite-difference noise floor.
                      for (auto* w : {&net->attention_params().f.weight, &net->attention_params().g.weight}) {
                        for (auto& v : w->mutable_data()) v *= 6.0;
                      }
                      net->attention_params().alpha_mov.mutable_data()[0] = 2.0;
                      net->attention_params().alpha_fix.mutable_data()[0] = -2.0;
                      const Td moving = smooth_image({8, 8, 4}, rng);
                      const Td fixed = smooth_image({8, 8, 4}, rng);
                      const std::uint64_t eps_seed = rng();
                      std::vector<GradcheckLeaf> leaves;
                      for (const auto& p : net->parameters()) {
                        GradcheckLeaf leaf{p.name, p.tensor, {}};
                        const std::size_t n = p.tensor.numel();
                        if (n > o.network_samples) {
                          std::uniform_int_distribution<std::size_t> pick(0, n - 1);
                          while (leaf.probe.size() < o.network_samples) {
                            const std::size_t i = pick(rng);
                            if (std::find(leaf.probe.begin(), leaf.probe.end(), i) == leaf.probe.end()) {
                              leaf.probe.push_back(i);
                            }
                          }
                          std::sort(leaf.probe.begin(), leaf.probe.end());
                        }
                        leaves.push_back(std::move(leaf));
                      }
                      return check_gradient("network_8x8x4", leaves,
                                            [=] {
                                              Rng eps = make_rng(eps_seed);
                                              const auto r = net->register_pair(moving, fixed, SampleMode::sample, &eps);
                                              return total_loss(r.warped, fixed, r.dist, LossWeights{}).total;
                                            },
                                            o);
                    }});
  return checks;
}

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const std::function<Td()>& loss) {
  KinkProbe probe;
  const Td l = loss();
  return {l.item(), probe.signature()};
}

}  // namespace

GradcheckResult check_gradient(const std::string& name, const std::vector<GradcheckLeaf>& leaves,
                               const std::function<Td()>& loss, const GradcheckOptions& options) {
  GradcheckResult res;
  res.name = name;

  std::vector<std::vector<double>> analytic;
  {
    std::optional<GradientFault> fault;
    if (!options.perturb_op.empty()) fault.emplace(options.perturb_op, options.perturb_error);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const Td l = loss();
    if (l.numel() != 1) throw UsageError("gradcheck: loss of " + name + " is not a scalar");
    tape.backward(l);
    for (const auto& leaf : leaves) analytic.push_back(tape.grad(leaf.tensor));
  }

  const Evaluation base = evaluate(loss);
  const double h = options.step;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const auto& leaf = leaves[li];
    Td handle = leaf.tensor;
    auto data = handle.mutable_data();
    std::vector<std::size_t> probe = leaf.probe;
    if (probe.empty()) {
      probe.resize(data.size());
      for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = i;
    }
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    for (std::size_t i : probe) {
      const double saved = data[i];
      data[i] = saved + h;
      const Evaluation plus = evaluate(loss);
      data[i] = saved - h;
      const Evaluation minus = evaluate(loss);
      data[i] = saved;
      if (plus.signature != base.signature || minus.signature != base.signature) {
        ++res.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * h);
      const double a = analytic[li][i];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_a = std::max(max_a, std::abs(a));
      max_n = std::max(max_n, std::abs(numeric));
      ++res.checked;
    }
    const double scale = std::max(max_a, max_n);
    const double err = scale > 0.0 ? max_diff / scale : 0.0;
    res.worst_error = std::max(res.worst_error, err);
  }
  res.passed = res.checked > 0 && res.worst_error < options.tol;
  return res;
}

std::vector<std::string> gradcheck_names() {
  std::vector<std::string> names;
  for (const auto& c : all_checks()) names.push_back(c.name);
  return names;
}

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options) {
  if (!(options.tol >= 0.0)) throw UsageError("gradcheck: tolerance must be non-negative");
  if (!(options.step > 0.0)) throw UsageError("gradcheck: step must be positive");
  std::vector<GradcheckResult> out;
  const auto checks = all_checks();
  for (std::size_t i = 0; i < checks.size(); ++i) {
    if (!options.filter.empty() && checks[i].name.find(options.filter) == std::string::npos) continue;
    Rng rng = make_rng(options.seed, {id(Stream::gradcheck), i});
    out.push_back(checks[i].run(options, rng));
  }
  return out;
}

}  // namespace coatreg
