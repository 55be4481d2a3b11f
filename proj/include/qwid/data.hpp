// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qwid/tensor.hpp"

namespace qwid {

inline constexpr Index kNumClasses = 9;

/// Default class names, index 8 being the negative class.
const std::vector<std::string>& default_class_names();

struct Dataset {
  std::vector<FloatTensor> images;  // (3, H, W), values in [0, 1]
  std::vector<int> labels;
  std::vector<std::string> class_names = default_class_names();

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }
  /// Throws DatasetError if images and labels disagree or a label is out of range.
  void validate() const;
  std::vector<std::size_t> class_counts() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Procedural 9-class texture set. Class 8 gets 8x `per_class` images.
///
/// Classes: horizontal, vertical, diagonal and anti-diagonal stripes,
/// checkerboard, concentric rings, blobs, fine dot grid; the negative class
/// is smooth low-frequency noise. Each class has a loose colour palette, and
/// every image has its own phase, frequency jitter and pixel noise.
Dataset generate_synthetic(std::uint64_t seed, Index per_class, Index size = 32);

/// Binary pixmap (P6, maxval <= 255) -> (3, H, W) in [0, 1]. With
/// `size` > 0 the image is resized to size x size by nearest neighbour.
FloatTensor read_ppm(const std::filesystem::path& path, Index size = 0);
void write_ppm(const std::filesystem::path& path, const FloatTensor& image);

/// `<root>/<class>/*.ppm`, classes in sorted directory-name order.
Dataset load_image_dir(const std::filesystem::path& root, Index size = 32);

struct DataSplit {
  Dataset train;
  Dataset val;
  Dataset test;
  /// Stratification warnings (classes with fewer than 5 samples).
  std::vector<std::string> warnings;
};

/// Stratified 60/20/20 split. Val and test each get floor(N / 5) samples,
/// apportioned across classes by largest remainder; train takes the rest.
DataSplit split(const Dataset& d, std::uint64_t seed);

/// Stacks the selected images into a (B, 3, H, W) tensor.
FloatTensor make_batch(const Dataset& d, const std::vector<std::size_t>& indices);
FloatTensor make_batch(const Dataset& d, std::size_t begin, std::size_t end);

}  // namespace qwid
