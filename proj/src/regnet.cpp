#include "coatreg/regnet.hpp"

#include <cmath>
#include <string>

#include "coatreg/error.hpp"

namespace coatreg {
namespace {

bool divisible(std::size_t n, std::size_t levels) { return n % (std::size_t{4} << levels) == 0; }

constexpr std::size_t kMaxDepth = 3;

}  // namespace

void NetworkConfig::validate() const {
  if (in_shape.voxels() == 0) throw ShapeError("network input shape must be non-empty");
  if (!divisible(in_shape.w, unet_depth) || !divisible(in_shape.h, unet_depth)) {
    throw ShapeError("input W and H must be divisible by 4*2^unet_depth = " +
                     std::to_string(std::size_t{4} << unet_depth));
  }
  if (unet_depth_z > unet_depth) throw ShapeError("unet_depth_z cannot exceed unet_depth");
  if (!divisible(in_shape.d, unet_depth_z)) {
    throw ShapeError("input D must be divisible by 4*2^unet_depth_z = " +
                     std::to_string(std::size_t{4} << unet_depth_z));
  }
  if (integration_steps < 1) throw UsageError("integration_steps must be at least 1");
  if (unet_channels.size() < unet_depth + 1) throw UsageError("unet_channels needs unet_depth + 1 entries");
  for (auto c : unet_channels) {
    if (c == 0) throw UsageError("unet channel counts must be positive");
  }
  if (stem_channels[0] == 0 || stem_channels[1] == 0 || att_channels == 0) {
    throw UsageError("stem and attention channel counts must be positive");
  }
}

NetworkConfig NetworkConfig::for_shape(Grid3 shape, std::uint64_t seed) {
  if (!divisible(shape.w, 0) || !divisible(shape.h, 0) || !divisible(shape.d, 0)) {
    throw ShapeError("input extents must be divisible by 4 for the two-layer stem");
  }
  NetworkConfig c;
  c.in_shape = shape;
  c.seed = seed;
  c.unet_depth = 0;
  while (c.unet_depth < kMaxDepth && divisible(shape.w, c.unet_depth + 1) && divisible(shape.h, c.unet_depth + 1)) {
    ++c.unet_depth;
  }
  c.unet_depth_z = 0;
  while (c.unet_depth_z < c.unet_depth && divisible(shape.d, c.unet_depth_z + 1)) ++c.unet_depth_z;
  c.validate();
  return c;
}

template <typename T>
RegistrationNetwork<T>::RegistrationNetwork(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng = make_rng(config_.seed, {id(Stream::init)});
  build(rng);
}

template <typename T>
void RegistrationNetwork<T>::build(Rng& rng) {
  const auto& c = config_;
  stem_[0] = ConvLayer<T>::glorot(3, 1, c.stem_channels[0], rng);
  stem_[1] = ConvLayer<T>::glorot(3, c.stem_channels[0], c.stem_channels[1], rng);
  attention_ = CoAttentionParams<T>::create(c.stem_channels[1], c.att_channels, rng);
  const std::size_t concat = 2 * c.stem_channels[1] + 2 * c.att_channels;
  up_ = UpConvLayer<T>::glorot(Axes3{2, 2, 2}, concat, c.unet_channels[0], rng);
  encoder_.clear();
  decoder_.clear();
  for (std::size_t l = 1; l <= c.unet_depth; ++l) {
    encoder_.push_back(ConvLayer<T>::glorot(3, c.unet_channels[l - 1], c.unet_channels[l], rng));
  }
  for (std::size_t l = 1; l <= c.unet_depth; ++l) {
    decoder_.push_back(
        ConvLayer<T>::glorot(3, c.unet_channels[l] + c.unet_channels[l - 1], c.unet_channels[l - 1], rng));
  }
  mu_head_ = ConvLayer<T>::zeros(3, c.unet_channels[0], 3);
  log_var_head_ = ConvLayer<T>::zeros(3, c.unet_channels[0], 3);
  for (auto& b : log_var_head_.bias.mutable_data()) b = T(-10);
}

template <typename T>
ParameterList<T> RegistrationNetwork<T>::parameters() const {
  ParameterList<T> out;
  stem_[0].collect("stem.0", out);
  stem_[1].collect("stem.1", out);
  attention_.collect("coatt", out);
  up_.collect("up", out);
  for (std::size_t l = 0; l < encoder_.size(); ++l) encoder_[l].collect("unet.enc." + std::to_string(l + 1), out);
  for (std::size_t l = 0; l < decoder_.size(); ++l) decoder_[l].collect("unet.dec." + std::to_string(l + 1), out);
  mu_head_.collect("head.mu", out);
  log_var_head_.collect("head.log_var", out);
  return out;
}

template <typename T>
void RegistrationNetwork<T>::zero_parameters() {
  for (auto& p : parameters()) {
    for (auto& v : p.tensor.mutable_data()) v = T(0);
  }
}

template <typename T>
void RegistrationNetwork<T>::randomize_parameters(std::uint64_t seed) {
  Rng rng = make_rng(seed, {id(Stream::init), 1});
  for (auto& p : parameters()) {
    auto data = p.tensor.mutable_data();
    const auto& s = p.tensor.shape();
    double limit = 0.5;
    if (s.size() == 5) {
      const double taps = static_cast<double>(s[0] * s[1] * s[2]);
      limit = std::sqrt(6.0 / (taps * static_cast<double>(s[3] + s[4])));
    }
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : data) v = static_cast<T>(dist(rng));
  }
  // Keep the posterior narrow enough for the sampled path to stay tame.
  for (auto& b : log_var_head_.bias.mutable_data()) b -= T(4);
}

template <typename T>
Features<T> RegistrationNetwork<T>::extract_features(const Tensor<T>& moving, const Tensor<T>& fixed) const {
  const Shape expected = volume_shape(config_.in_shape, 1);
  if (moving.shape() != expected || fixed.shape() != expected) {
    throw ShapeError("network expects single-channel " + shape_string(expected) + " inputs, got " +
                     shape_string(moving.shape()) + " and " + shape_string(fixed.shape()));
  }
  const ConvOptions down{{2, 2, 2}, Padding::same};
  auto stem = [&](const Tensor<T>& x) { return leaky_relu(stem_[1](leaky_relu(stem_[0](x, down)), down)); };
  return {stem(moving), stem(fixed)};
}

template <typename T>
CoAttentionOutput<T> RegistrationNetwork<T>::attend(const Features<T>& features) const {
  if (ablate_) return plain_projection_forward(features.moving, features.fixed, attention_);
  return co_attention_forward(features.moving, features.fixed, attention_, config_.attention_budget);
}

template <typename T>
FlowDistribution<T> RegistrationNetwork<T>::predict_flow_distribution(const Features<T>& features,
                                                                      const CoAttentionOutput<T>& attention) const {
  const Tensor<T> cat = concat_channels<T>({features.moving, features.fixed, attention.o_mov, attention.o_fix});
  if (cat.grid() != config_.quarter_shape()) {
    throw ShapeError("flow head expects quarter-resolution features " +
                     shape_string(volume_shape(config_.quarter_shape(), cat.channels())) + ", got " +
                     shape_string(cat.shape()));
  }
  std::vector<Tensor<T>> skips;
  skips.push_back(leaky_relu(up_(cat)));
  Tensor<T> x = skips.back();
  for (std::size_t l = 1; l <= config_.unet_depth; ++l) {
    const ConvOptions down{{2, 2, l <= config_.unet_depth_z ? std::size_t{2} : std::size_t{1}}, Padding::same};
    x = leaky_relu(encoder_[l - 1](x, down));
    skips.push_back(x);
  }
  for (std::size_t l = config_.unet_depth; l >= 1; --l) {
    const Tensor<T>& skip = skips[l - 1];
    x = leaky_relu(decoder_[l - 1](concat_channels<T>({resize_to(x, skip.grid()), skip})));
  }
  FlowDistribution<T> dist;
  dist.mu = mu_head_(x);
  dist.log_var = clamp(log_var_head_(x), static_cast<T>(kLogVarMin), static_cast<T>(kLogVarMax));
  return dist;
}

template <typename T>
RegistrationResult<T> RegistrationNetwork<T>::register_pair(const Tensor<T>& moving, const Tensor<T>& fixed,
                                                            SampleMode mode, Rng* rng) const {
  RegistrationResult<T> r;
  r.features = extract_features(moving, fixed);
  r.attention = attend(r.features);
  r.dist = predict_flow_distribution(r.features, r.attention);
  r.velocity = sample_velocity(r.dist, mode, rng);
  r.flow = upsample_flow(integrate_svf(r.velocity, config_.integration_steps));
  r.warped = grid_sample(moving, r.flow.disp);
  return r;
}

template <typename T>
DeformationField<T> sample_velocity(const FlowDistribution<T>& dist, SampleMode mode, Rng* rng) {
  if (dist.mu.shape() != dist.log_var.shape()) throw ShapeError("flow distribution: mu/log_var shape mismatch");
  if (mode == SampleMode::mean) return {dist.mu, FieldResolution::half};
  if (rng == nullptr) throw UsageError("sample_velocity: sampling mode needs a random generator");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> eps(dist.mu.numel());
  for (auto& e : eps) e = static_cast<T>(normal(*rng));
  const Tensor<T> noise(dist.mu.shape(), std::move(eps));
  return {add(dist.mu, mul(exp(scale(dist.log_var, T(0.5))), noise)), FieldResolution::half};
}

template <typename T>
DeformationField<T> integrate_svf(const DeformationField<T>& velocity, std::size_t steps) {
  if (steps < 1) throw UsageError("integrate_svf: at least one squaring step is required");
  if (velocity.disp.channels() != 3) throw ShapeError("integrate_svf: velocity needs 3 channels");
  Tensor<T> u = scale(velocity.disp, static_cast<T>(std::ldexp(1.0, -static_cast<int>(steps))));
  for (std::size_t k = 0; k < steps; ++k) u = add(u, grid_sample(u, u));
  return {u, velocity.resolution};
}

template <typename T>
DeformationField<T> upsample_flow(const DeformationField<T>& half) {
  if (half.resolution != FieldResolution::half) throw UsageError("upsample_flow: field is already full resolution");
  return {scale(resize_trilinear(half.disp, 2.0), T(2)), FieldResolution::full};
}

#define COATREG_INSTANTIATE_REGNET(T)                                                                   \
  template class RegistrationNetwork<T>;                                                                \
  template DeformationField<T> sample_velocity<T>(const FlowDistribution<T>&, SampleMode, Rng*);        \
  template DeformationField<T> integrate_svf<T>(const DeformationField<T>&, std::size_t);               \
  template DeformationField<T> upsample_flow<T>(const DeformationField<T>&);

COATREG_INSTANTIATE_REGNET(float)
COATREG_INSTANTIATE_REGNET(double)

#undef COATREG_INSTANTIATE_REGNET

}  // namespace coatreg
