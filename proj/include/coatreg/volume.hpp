#pragma once

// Volumes on disk (RVOL1) and their conversion to tensors.
//
// RVOL1 is a pair of files sharing a stem:
//   <stem>.json  {"magic":"RVOL1","shape":[W,H,D],"channels":C,
//                 "spacing_mm":[sx,sy,sz],"dtype":"f32le","order":"c,x,y,z"}
//   <stem>.raw   W*H*D*C little-endian float32, offset c + C*(x + W*(y + H*z))
// That offset is also the in-memory tensor layout, so conversion is a copy.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "coatreg/tensor.hpp"

namespace coatreg {

using Spacing = std::array<double, 3>;

inline constexpr Spacing kDefaultSpacing{1.5, 1.5, 3.15};

struct Volume {
  Grid3 shape;
  std::size_t channels = 1;
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<float> data;

  static Volume zeros(Grid3 shape, std::size_t channels, Spacing spacing);

  [[nodiscard]] float& at(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) {
    return data[c + channels * shape.index(x, y, z)];
  }
  [[nodiscard]] float at(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) const {
    return data[c + channels * shape.index(x, y, z)];
  }

  // Throws DataError when spacing is not strictly positive, the data size
  // disagrees with the shape or a value is not finite.
  void validate() const;
  [[nodiscard]] Volume channel(std::size_t c) const;
};

enum Structure : std::uint8_t { kBackground = 0, kLVBP = 1, kLVM = 2, kRV = 3 };
inline constexpr std::array<Structure, 3> kStructures{kLVBP, kLVM, kRV};
const char* structure_name(Structure s);

struct LabelVolume {
  Grid3 shape;
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> labels;

  static LabelVolume zeros(Grid3 shape, Spacing spacing);

  [[nodiscard]] std::uint8_t& at(std::size_t x, std::size_t y, std::size_t z) { return labels[shape.index(x, y, z)]; }
  [[nodiscard]] std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const {
    return labels[shape.index(x, y, z)];
  }
};

void write_volume(const Volume& volume, const std::filesystem::path& stem);
// Throws DataError naming the offending header field, or the byte count.
Volume read_volume(const std::filesystem::path& stem);

// Label channel stored as float: values must be exact integers in {0..3}.
LabelVolume labels_from_volume(const Volume& volume, std::size_t channel);
Volume labels_to_volume(const LabelVolume& labels);
// Intensity channel 0 plus labels as channel 1.
Volume pack_case_volume(const Volume& image, const LabelVolume& labels);

template <typename T>
Tensor<T> to_tensor(const Volume& volume);
template <typename T>
Volume to_volume(const Tensor<T>& tensor, Spacing spacing);

}  // namespace coatreg
