#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "hypernst/nn.hpp"
#include "hypernst/tensor.hpp"

namespace hypernst {

using json = nlohmann::json;

// Shared on-disk format: a directory with manifest.json plus params.bin
// holding little-endian floats concatenated in manifest order. Model
// checkpoints use f4 entries; training-state snapshots use f8 so that
// interrupt/resume is bit-exact.
struct CheckpointEntry {
  std::string name;
  std::string kind;  // "mapping", "modulated_conv", "toRGB", or "param"
  int index = -1;    // generator layer index, -1 elsewhere
  std::vector<int> shape;
  std::string dtype;  // "f4" or "f8"
  std::uint64_t offset = 0;
  std::uint64_t nbytes = 0;
};

class CheckpointWriter {
 public:
  explicit CheckpointWriter(std::string dtype = "f4") : dtype_(std::move(dtype)) {}

  void add(const std::string& name, const Tensor& t, const std::string& kind = "param",
           int index = -1) {
    CheckpointEntry e;
    e.name = name;
    e.kind = kind;
    e.index = index;
    e.shape = t.shape;
    e.dtype = dtype_;
    e.offset = blob_.size();
    if (dtype_ == "f4") {
      for (double x : t.v) {
        float f = static_cast<float>(x);
        const auto* p = reinterpret_cast<const unsigned char*>(&f);
        blob_.insert(blob_.end(), p, p + 4);
      }
      e.nbytes = t.v.size() * 4;
    } else {
      const auto* p = reinterpret_cast<const unsigned char*>(t.v.data());
      blob_.insert(blob_.end(), p, p + t.v.size() * 8);
      e.nbytes = t.v.size() * 8;
    }
    entries_.push_back(std::move(e));
  }

  void add_params(const nn::ParamMap& params, const std::string& kind = "param") {
    for (const auto& [name, v] : params.items) add(name, v->val, kind);
  }

  void set_meta(json meta) { meta_ = std::move(meta); }

  void write(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json manifest;
    manifest["format_version"] = 1;
    for (auto& [k, v] : meta_.items()) manifest[k] = v;
    json jentries = json::array();
    for (const auto& e : entries_) {
      jentries.push_back({{"name", e.name},
                          {"kind", e.kind},
                          {"index", e.index},
                          {"shape", e.shape},
                          {"dtype", e.dtype},
                          {"offset", e.offset},
                          {"nbytes", e.nbytes}});
    }
    manifest["entries"] = std::move(jentries);
    {
      std::ofstream f(fs::path(dir) / "manifest.json");
      f << manifest.dump(2) << "\n";
    }
    {
      std::ofstream f(fs::path(dir) / "params.bin", std::ios::binary);
      f.write(reinterpret_cast<const char*>(blob_.data()),
              static_cast<std::streamsize>(blob_.size()));
    }
  }

 private:
  std::string dtype_;
  std::vector<CheckpointEntry> entries_;
  std::vector<unsigned char> blob_;
  json meta_;
};

struct Checkpoint {
  json manifest;
  std::vector<CheckpointEntry> entries;
  std::map<std::string, Tensor> tensors;

  const Tensor& get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("checkpoint missing entry: " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return tensors.count(name) > 0; }
};

inline Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto mpath = fs::path(dir) / "manifest.json";
  const auto bpath = fs::path(dir) / "params.bin";
  if (!fs::exists(mpath) || !fs::exists(bpath))
    throw DataError("not a checkpoint directory: " + dir);

  Checkpoint ck;
  {
    std::ifstream f(mpath);
    f >> ck.manifest;
  }
  std::vector<unsigned char> blob;
  {
    std::ifstream f(bpath, std::ios::binary);
    blob.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  for (const auto& je : ck.manifest.at("entries")) {
    CheckpointEntry e;
    e.name = je.at("name").get<std::string>();
    e.kind = je.at("kind").get<std::string>();
    e.index = je.at("index").get<int>();
    e.shape = je.at("shape").get<std::vector<int>>();
    e.dtype = je.at("dtype").get<std::string>();
    e.offset = je.at("offset").get<std::uint64_t>();
    e.nbytes = je.at("nbytes").get<std::uint64_t>();
    if (e.offset + e.nbytes > blob.size())
      throw DataError("checkpoint entry out of range: " + e.name);
    Tensor t(e.shape);
    if (e.dtype == "f4") {
      for (int i = 0; i < t.numel(); ++i) {
        float f;
        std::memcpy(&f, blob.data() + e.offset + 4ull * i, 4);
        t.v[i] = f;
      }
    } else if (e.dtype == "f8") {
      std::memcpy(t.v.data(), blob.data() + e.offset, t.v.size() * 8);
    } else {
      throw DataError("unknown dtype in checkpoint: " + e.dtype);
    }
    ck.tensors.emplace(e.name, std::move(t));
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

// assign stored values onto a live module's parameters, by name
inline void restore_params(const Checkpoint& ck, const nn::ParamMap& params) {
  for (const auto& [name, v] : params.items) {
    const Tensor& t = ck.get(name);
    if (t.shape != v->val.shape)
      throw ShapeError(cat("checkpoint shape mismatch for ", name, ": ",
                           t.shape_str(), " vs ", v->val.shape_str()));
    v->val = t;
  }
}

inline std::uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("missing file: " + path);
  std::vector<char> buf(std::istreambuf_iterator<char>(f), {});
  return fnv1a64(buf.data(), buf.size());
}

inline std::uint64_t checkpoint_hash(const std::string& dir) {
  namespace fs = std::filesystem;
  return file_hash((fs::path(dir) / "params.bin").string());
}

}  // namespace hypernst
