#include "unibrain/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace ub {

namespace {

static_assert(sizeof(double) == 8, "checkpoint blobs assume 8-byte doubles");

void write_le_doubles(std::ofstream& os, const std::vector<double>& vals) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(vals.data()),
             std::streamsize(vals.size() * sizeof(double)));
  } else {
    for (double v : vals) {
      char buf[8];
      std::memcpy(buf, &v, 8);
      std::swap(buf[0], buf[7]);
      std::swap(buf[1], buf[6]);
      std::swap(buf[2], buf[5]);
      std::swap(buf[3], buf[4]);
      os.write(buf, 8);
    }
  }
}

void read_le_doubles(std::ifstream& is, double* out, std::size_t n) {
  is.read(reinterpret_cast<char*>(out), std::streamsize(n * sizeof(double)));
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < n; ++i) {
      char* b = reinterpret_cast<char*>(out + i);
      std::swap(b[0], b[7]);
      std::swap(b[1], b[6]);
      std::swap(b[2], b[5]);
      std::swap(b[3], b[4]);
    }
  }
}

}  // namespace

Tensor& ParamStore::create(const std::string& name, Shape shape) {
  return put(name, Tensor(std::move(shape)));
}

Tensor& ParamStore::put(const std::string& name, Tensor t) {
  if (index_.count(name))
    fail(ErrCode::validation, "parameter '" + name + "' already exists");
  if (!t.defined()) fail(ErrCode::validation, "parameter '" + name + "' is undefined");
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, std::move(t)});
  return entries_.back().tensor;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrCode::validation, "no parameter named '" + name + "'");
  return entries_[it->second].tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrCode::validation, "no parameter named '" + name + "'");
  return entries_[it->second].tensor;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

long ParamStore::total_elements() const {
  long n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const nlohmann::json& meta) {
  namespace fs = std::filesystem;
  std::string blob_path = path + ".blob";
  std::string tmp_manifest = path + ".tmp";
  std::string tmp_blob = blob_path + ".tmp";

  nlohmann::json tensors = nlohmann::json::array();
  {
    std::ofstream blob(tmp_blob, std::ios::binary | std::ios::trunc);
    if (!blob) fail(ErrCode::io, "cannot open '" + tmp_blob + "' for writing");
    std::uint64_t offset = 0;
    for (const auto& e : params.entries()) {
      nlohmann::json t;
      t["name"] = e.name;
      t["shape"] = e.tensor.shape();
      t["offset"] = offset;
      tensors.push_back(std::move(t));
      write_le_doubles(blob, e.tensor.values());
      offset += std::uint64_t(e.tensor.size()) * sizeof(double);
    }
    blob.flush();
    if (!blob) fail(ErrCode::io, "failed writing checkpoint blob '" + tmp_blob + "'");
  }

  nlohmann::json manifest;
  manifest["format"] = "UBCKPT1";
  manifest["version"] = 1;
  manifest["meta"] = meta;
  manifest["tensors"] = std::move(tensors);
  {
    std::ofstream mf(tmp_manifest, std::ios::binary | std::ios::trunc);
    if (!mf) fail(ErrCode::io, "cannot open '" + tmp_manifest + "' for writing");
    mf << manifest.dump(2) << '\n';
    mf.flush();
    if (!mf) fail(ErrCode::io, "failed writing checkpoint manifest '" + tmp_manifest + "'");
  }

  std::error_code ec;
  fs::rename(tmp_blob, blob_path, ec);
  if (ec) fail(ErrCode::io, "cannot move checkpoint blob into place: " + ec.message());
  fs::rename(tmp_manifest, path, ec);
  if (ec) fail(ErrCode::io, "cannot move checkpoint manifest into place: " + ec.message());
}

nlohmann::json load_checkpoint(const std::string& path, ParamStore& params) {
  if (params.count() != 0)
    fail(ErrCode::validation, "load_checkpoint expects an empty parameter store");
  std::ifstream mf(path, std::ios::binary);
  if (!mf) fail(ErrCode::io, "cannot open checkpoint manifest '" + path + "'");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrCode::parse, "checkpoint manifest '" + path + "' is not valid JSON: " + e.what());
  }
  if (!manifest.is_object() || manifest.value("format", "") != "UBCKPT1")
    fail(ErrCode::checkpoint, "'" + path + "' is not a UBCKPT1 checkpoint");
  if (manifest.value("version", 0) != 1)
    fail(ErrCode::checkpoint, "unsupported checkpoint version in '" + path + "'");
  if (!manifest.contains("tensors") || !manifest["tensors"].is_array())
    fail(ErrCode::checkpoint, "checkpoint manifest '" + path + "' lacks a tensors array");

  std::string blob_path = path + ".blob";
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) fail(ErrCode::io, "cannot open checkpoint blob '" + blob_path + "'");
  blob.seekg(0, std::ios::end);
  std::uint64_t blob_size = std::uint64_t(blob.tellg());

  for (const auto& t : manifest["tensors"]) {
    if (!t.contains("name") || !t.contains("shape") || !t.contains("offset"))
      fail(ErrCode::checkpoint, "checkpoint tensor entry missing name/shape/offset");
    std::string name = t["name"].get<std::string>();
    Shape shape = t["shape"].get<Shape>();
    std::uint64_t offset = t["offset"].get<std::uint64_t>();
    Tensor tensor(shape);
    std::uint64_t bytes = std::uint64_t(tensor.size()) * sizeof(double);
    if (offset + bytes > blob_size)
      fail(ErrCode::checkpoint, "checkpoint blob too short for tensor '" + name + "'");
    blob.seekg(std::streamoff(offset));
    read_le_doubles(blob, tensor.data(), std::size_t(tensor.size()));
    if (!blob) fail(ErrCode::io, "failed reading checkpoint blob for tensor '" + name + "'");
    params.put(name, std::move(tensor));
  }
  return manifest.value("meta", nlohmann::json::object());
}

}  // namespace ub
