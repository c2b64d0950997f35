#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sqens/tensor.hpp"

namespace sqens {

/// Flattened images in [0, 1], one per row, with integer labels.
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  int n_classes = 10;
  int height = 0;  // 0 for non-image data
  int width = 0;

  int size() const { return static_cast<int>(labels.size()); }
  int dim() const { return static_cast<int>(images.cols()); }
  Dataset subset(const std::vector<int>& indices) const;
  Dataset head(int n) const;
};

/// IDX files: big-endian magic 0x00000803 (u8 images, n x rows x cols) and
/// 0x00000801 (u8 labels). Pixels are scaled by 1/255.
Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Writes the inverse of load_mnist; pixels are rounded to u8.
void save_mnist(const Dataset& d, const std::filesystem::path& images, const std::filesystem::path& labels);

/// Unit-variance Gaussian blobs centred at separation * e_c for class c, then
/// mapped by x' = (x + 4) / (separation + 8) and clipped to [0, 1].
Dataset synth_blobs(int n_per_class, int classes, int dim, double separation, std::uint64_t seed);

}  // namespace sqens
