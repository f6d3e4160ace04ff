#pragma once

#include <array>
#include <string>
#include <vector>

#include "unibrain/tensor.hpp"

namespace ub {

// A single-channel brain volume.  Voxels are stored C order over (x, y, z):
// index = (x * Y + y) * Z + z.
struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  std::vector<float> voxels;

  long size() const { return long(dims[0]) * dims[1] * dims[2]; }
  float at(int x, int y, int z) const {
    return voxels[(std::size_t(x) * dims[1] + std::size_t(y)) * dims[2] + std::size_t(z)];
  }
  float& at(int x, int y, int z) {
    return voxels[(std::size_t(x) * dims[1] + std::size_t(y)) * dims[2] + std::size_t(z)];
  }
};

// UBV1 container: "UBV1" magic, three uint32 LE extents, then X*Y*Z float32
// LE voxels in C order.
Volume load_volume(const std::string& path);
void save_volume(const std::string& path, const Volume& vol);

Volume make_volume(std::array<int, 3> dims, float fill = 0.0f);

// [1, X, Y, Z] double tensor for the encoder stack
Tensor volume_tensor(const Volume& vol);

// axis: 0 = x (sagittal mirror), 1 = y (coronal), 2 = z (axial)
void flip_axis(Volume& vol, int axis);
// v -> (v + shift) * scale, applied to every voxel
void shift_scale(Volume& vol, double shift, double scale);

}  // namespace ub
