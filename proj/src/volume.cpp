#include "unibrain/volume.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ub {

namespace {

constexpr char kMagic[4] = {'U', 'B', 'V', '1'};

static_assert(sizeof(float) == 4, "UBV1 stores 4-byte floats");

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

void swap_floats(float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    (void)data;
    (void)n;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      char* b = reinterpret_cast<char*>(data + i);
      std::swap(b[0], b[3]);
      std::swap(b[1], b[2]);
    }
  }
}

}  // namespace

Volume make_volume(std::array<int, 3> dims, float fill) {
  for (int d : dims)
    if (d < 1) fail(ErrCode::shape, "volume extents must be >= 1");
  Volume v;
  v.dims = dims;
  v.voxels.assign(std::size_t(v.size()), fill);
  return v;
}

Volume load_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrCode::io, "cannot open volume '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    fail(ErrCode::parse, "'" + path + "' is not a UBV1 volume");
  std::uint32_t raw[3];
  is.read(reinterpret_cast<char*>(raw), sizeof(raw));
  if (!is) fail(ErrCode::parse, "volume '" + path + "' truncated in header");
  Volume v;
  for (int i = 0; i < 3; ++i) {
    std::uint32_t e = to_le(raw[i]);
    if (e == 0 || e > (1u << 20))
      fail(ErrCode::parse, "volume '" + path + "' has invalid extent " + std::to_string(e));
    v.dims[std::size_t(i)] = int(e);
  }
  v.voxels.resize(std::size_t(v.size()));
  is.read(reinterpret_cast<char*>(v.voxels.data()),
          std::streamsize(v.voxels.size() * sizeof(float)));
  if (!is) fail(ErrCode::parse, "volume '" + path + "' truncated in voxel data");
  // a trailing byte means the header lied about the extents
  is.peek();
  if (!is.eof()) fail(ErrCode::parse, "volume '" + path + "' has trailing data");
  swap_floats(v.voxels.data(), v.voxels.size());
  return v;
}

void save_volume(const std::string& path, const Volume& vol) {
  if (long(vol.voxels.size()) != vol.size())
    fail(ErrCode::validation, "volume voxel count does not match extents");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrCode::io, "cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  for (int i = 0; i < 3; ++i) {
    std::uint32_t e = to_le(std::uint32_t(vol.dims[std::size_t(i)]));
    os.write(reinterpret_cast<const char*>(&e), 4);
  }
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(vol.voxels.data()),
             std::streamsize(vol.voxels.size() * sizeof(float)));
  } else {
    std::vector<float> tmp = vol.voxels;
    swap_floats(tmp.data(), tmp.size());
    os.write(reinterpret_cast<const char*>(tmp.data()),
             std::streamsize(tmp.size() * sizeof(float)));
  }
  if (!os) fail(ErrCode::io, "failed writing volume '" + path + "'");
}

Tensor volume_tensor(const Volume& vol) {
  if (long(vol.voxels.size()) != vol.size())
    fail(ErrCode::validation, "volume voxel count does not match extents");
  Tensor t({1, vol.dims[0], vol.dims[1], vol.dims[2]});
  double* p = t.data();
  for (std::size_t i = 0; i < vol.voxels.size(); ++i) p[i] = double(vol.voxels[i]);
  return t;
}

void flip_axis(Volume& vol, int axis) {
  if (axis < 0 || axis > 2) fail(ErrCode::validation, "flip_axis: axis must be 0, 1, or 2");
  int X = vol.dims[0], Y = vol.dims[1], Z = vol.dims[2];
  Volume out = vol;
  for (int x = 0; x < X; ++x)
    for (int y = 0; y < Y; ++y)
      for (int z = 0; z < Z; ++z) {
        int sx = axis == 0 ? X - 1 - x : x;
        int sy = axis == 1 ? Y - 1 - y : y;
        int sz = axis == 2 ? Z - 1 - z : z;
        out.at(x, y, z) = vol.at(sx, sy, sz);
      }
  vol = std::move(out);
}

void shift_scale(Volume& vol, double shift, double scale) {
  for (float& v : vol.voxels) v = float((double(v) + shift) * scale);
}

}  // namespace ub
