#pragma once

// Read side of the dataset directory layout written by synth::generate_dataset.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "eclad/errors.hpp"
#include "eclad/image_io.hpp"
#include "eclad/tensor.hpp"

namespace eclad {

struct PrimitiveInfo {
  std::string id;
  bool important = false;
  bool background = false;
};

struct DatasetFile {
  std::string id;
  std::string path;  // relative to the dataset root
  std::size_t label = 0;
  std::vector<std::string> mask_paths;  // parallel to Dataset::primitives
};

class Dataset {
 public:
  static Dataset open(const std::filesystem::path& root) {
    const auto manifest_path = root / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot read dataset manifest " + manifest_path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    Dataset ds;
    ds.root_ = root;
    try {
      ds.name_ = j.value("name", "");
      ds.classes_ = j.at("classes").get<std::vector<std::string>>();
      ds.image_size_ = j.at("image_size").get<std::size_t>();
      ds.seed_ = j.value("seed", std::uint64_t{0});
      for (const auto& p : j.at("primitives")) {
        ds.primitives_.push_back({p.at("id").get<std::string>(), p.value("important", false),
                                  p.value("background", false)});
      }
      for (const auto& f : j.at("files")) {
        DatasetFile file;
        file.id = f.at("id").get<std::string>();
        file.path = f.at("path").get<std::string>();
        file.label = f.at("class").get<std::size_t>();
        if (file.label >= ds.classes_.size()) {
          throw InvalidArgument("file " + file.id + " has class index out of range");
        }
        const auto& mp = f.at("mask_paths");
        for (const auto& prim : ds.primitives_) file.mask_paths.push_back(mp.at(prim.id).get<std::string>());
        ds.files_.push_back(std::move(file));
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    return ds;
  }

  const std::filesystem::path& root() const { return root_; }
  const std::string& name() const { return name_; }
  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t n_classes() const { return classes_.size(); }
  std::size_t image_size() const { return image_size_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<PrimitiveInfo>& primitives() const { return primitives_; }
  const std::vector<DatasetFile>& files() const { return files_; }
  std::size_t size() const { return files_.size(); }

  Tensor3 load_image(std::size_t i) const { return read_rgb(root_ / files_.at(i).path); }

  std::vector<Mask2> load_masks(std::size_t i) const {
    std::vector<Mask2> masks;
    for (const auto& p : files_.at(i).mask_paths) masks.push_back(read_mask(root_ / p));
    return masks;
  }

  /// Overrides the manifest's important flags.
  void set_important(const std::vector<std::string>& ids) {
    for (auto& p : primitives_) {
      p.important = std::find(ids.begin(), ids.end(), p.id) != ids.end();
    }
    for (const auto& id : ids) {
      if (std::none_of(primitives_.begin(), primitives_.end(), [&](const auto& p) { return p.id == id; })) {
        throw InvalidArgument("unknown primitive '" + id + "'");
      }
    }
  }

 private:
  std::filesystem::path root_;
  std::string name_;
  std::vector<std::string> classes_;
  std::size_t image_size_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<PrimitiveInfo> primitives_;
  std::vector<DatasetFile> files_;
};

}  // namespace eclad
