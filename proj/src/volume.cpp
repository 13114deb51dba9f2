#include "coatreg/volume.hpp"

#include <cmath>
#include <string>

#include "byteio.hpp"
#include "coatreg/error.hpp"
#include "json.hpp"

namespace coatreg {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr const char* kMagic = "RVOL1";
constexpr const char* kDtype = "f32le";
constexpr const char* kOrder = "c,x,y,z";

std::size_t positive_integer(const ordered_json& j, const std::string& field) {
  if (!j.is_number_unsigned() || j.get<std::uint64_t>() == 0) {
    throw DataError("RVOL1 header: field '" + field + "' must be a positive integer");
  }
  return j.get<std::size_t>();
}

const ordered_json& require(const ordered_json& header, const char* field) {
  auto it = header.find(field);
  if (it == header.end()) throw DataError(std::string("RVOL1 header: missing field '") + field + "'");
  return *it;
}

}  // namespace

const char* structure_name(Structure s) {
  switch (s) {
    case kBackground: return "background";
    case kLVBP: return "LVBP";
    case kLVM: return "LVM";
    case kRV: return "RV";
  }
  return "unknown";
}

Volume Volume::zeros(Grid3 shape, std::size_t channels, Spacing spacing) {
  Volume v;
  v.shape = shape;
  v.channels = channels;
  v.spacing = spacing;
  v.data.assign(shape.voxels() * channels, 0.0f);
  return v;
}

void Volume::validate() const {
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw DataError("volume spacing must be strictly positive");
  }
  if (channels == 0 || shape.voxels() == 0) throw DataError("volume must have non-zero extents and channels");
  if (data.size() != shape.voxels() * channels) {
    throw DataError("volume holds " + std::to_string(data.size()) + " values, shape needs " +
                    std::to_string(shape.voxels() * channels));
  }
  for (float v : data) {
    if (!std::isfinite(v)) throw DataError("volume contains a non-finite value");
  }
}

Volume Volume::channel(std::size_t c) const {
  if (c >= channels) throw UsageError("channel " + std::to_string(c) + " out of range");
  Volume out = zeros(shape, 1, spacing);
  for (std::size_t v = 0; v < shape.voxels(); ++v) out.data[v] = data[v * channels + c];
  return out;
}

LabelVolume LabelVolume::zeros(Grid3 shape, Spacing spacing) {
  LabelVolume l;
  l.shape = shape;
  l.spacing = spacing;
  l.labels.assign(shape.voxels(), 0);
  return l;
}

void write_volume(const Volume& volume, const std::filesystem::path& stem) {
  volume.validate();
  ordered_json header;
  header["magic"] = kMagic;
  header["shape"] = {volume.shape.w, volume.shape.h, volume.shape.d};
  header["channels"] = volume.channels;
  header["spacing_mm"] = {volume.spacing[0], volume.spacing[1], volume.spacing[2]};
  header["dtype"] = kDtype;
  header["order"] = kOrder;
  detail::write_text(detail::with_suffix(stem, ".json"), header.dump() + "\n");
  std::vector<char> raw;
  detail::append_f32le(raw, volume.data);
  detail::write_file(detail::with_suffix(stem, ".raw"), raw);
}

Volume read_volume(const std::filesystem::path& stem) {
  const auto text = detail::read_file(detail::with_suffix(stem, ".json"));
  ordered_json header;
  try {
    header = ordered_json::parse(text.begin(), text.end());
  } catch (const ordered_json::parse_error& e) {
    throw DataError("RVOL1 header: malformed JSON in " + stem.string() + ".json: " + e.what());
  }
  if (!header.is_object()) throw DataError("RVOL1 header: top level must be an object");

  const auto& magic = require(header, "magic");
  if (!magic.is_string() || magic.get<std::string>() != kMagic) throw DataError("RVOL1 header: field 'magic' is not RVOL1");
  const auto& dtype = require(header, "dtype");
  if (!dtype.is_string() || dtype.get<std::string>() != kDtype) {
    throw DataError("RVOL1 header: field 'dtype' must be f32le");
  }
  const auto& order = require(header, "order");
  if (!order.is_string() || order.get<std::string>() != kOrder) {
    throw DataError("RVOL1 header: field 'order' must be c,x,y,z");
  }
  const auto& shape = require(header, "shape");
  if (!shape.is_array() || shape.size() != 3) throw DataError("RVOL1 header: field 'shape' must hold [W,H,D]");
  const auto& spacing = require(header, "spacing_mm");
  if (!spacing.is_array() || spacing.size() != 3) {
    throw DataError("RVOL1 header: field 'spacing_mm' must hold [sx,sy,sz]");
  }

  Volume v;
  v.shape = {positive_integer(shape[0], "shape"), positive_integer(shape[1], "shape"),
             positive_integer(shape[2], "shape")};
  v.channels = positive_integer(require(header, "channels"), "channels");
  for (std::size_t i = 0; i < 3; ++i) {
    if (!spacing[i].is_number() || !(spacing[i].get<double>() > 0.0)) {
      throw DataError("RVOL1 header: field 'spacing_mm' must be strictly positive");
    }
    v.spacing[i] = spacing[i].get<double>();
  }

  const auto raw = detail::read_file(detail::with_suffix(stem, ".raw"));
  const std::size_t count = v.shape.voxels() * v.channels;
  if (raw.size() != count * 4) {
    throw DataError("RVOL1 payload: expected " + std::to_string(count * 4) + " bytes, found " +
                    std::to_string(raw.size()) + " in " + stem.string() + ".raw");
  }
  v.data = detail::parse_f32le(raw.data(), count);
  for (float x : v.data) {
    if (!std::isfinite(x)) throw DataError("RVOL1 payload: non-finite value in " + stem.string() + ".raw");
  }
  return v;
}

LabelVolume labels_from_volume(const Volume& volume, std::size_t channel) {
  if (channel >= volume.channels) {
    throw DataError("volume has no label channel " + std::to_string(channel));
  }
  LabelVolume out = LabelVolume::zeros(volume.shape, volume.spacing);
  for (std::size_t v = 0; v < volume.shape.voxels(); ++v) {
    const float x = volume.data[v * volume.channels + channel];
    if (x != 0.0f && x != 1.0f && x != 2.0f && x != 3.0f) {
      throw DataError("label channel holds a value outside {0,1,2,3}");
    }
    out.labels[v] = static_cast<std::uint8_t>(x);
  }
  return out;
}

Volume labels_to_volume(const LabelVolume& labels) {
  Volume v = Volume::zeros(labels.shape, 1, labels.spacing);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) v.data[i] = static_cast<float>(labels.labels[i]);
  return v;
}

Volume pack_case_volume(const Volume& image, const LabelVolume& labels) {
  if (image.channels != 1 || !(image.shape == labels.shape)) {
    throw ShapeError("pack_case_volume: need a single-channel image matching the labels");
  }
  Volume v = Volume::zeros(image.shape, 2, image.spacing);
  for (std::size_t i = 0; i < image.shape.voxels(); ++i) {
    v.data[2 * i] = image.data[i];
    v.data[2 * i + 1] = static_cast<float>(labels.labels[i]);
  }
  return v;
}

template <typename T>
Tensor<T> to_tensor(const Volume& volume) {
  std::vector<T> data(volume.data.begin(), volume.data.end());
  return Tensor<T>(volume_shape(volume.shape, volume.channels), std::move(data));
}

template <typename T>
Volume to_volume(const Tensor<T>& tensor, Spacing spacing) {
  if (tensor.rank() != 4) throw ShapeError("to_volume: expected {D,H,W,C}, got " + shape_string(tensor.shape()));
  Volume v;
  v.shape = tensor.grid();
  v.channels = tensor.channels();
  v.spacing = spacing;
  const auto d = tensor.data();
  v.data.assign(d.begin(), d.end());
  return v;
}

template Tensor<float> to_tensor<float>(const Volume&);
template Tensor<double> to_tensor<double>(const Volume&);
template Volume to_volume<float>(const Tensor<float>&, Spacing);
template Volume to_volume<double>(const Tensor<double>&, Spacing);

}  // namespace coatreg
