#pragma once

// Concept extraction from local aggregated descriptors (LADs): per-pixel
// concatenations of upscaled activation maps, clustered with minibatch
// k-means. Concepts are localised as nearest-centroid masks and scored by
// contrastive gradient x activation sensitivity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "eclad/dataset.hpp"
#include "eclad/ectf.hpp"
#include "eclad/errors.hpp"
#include "eclad/image_io.hpp"
#include "eclad/micronet.hpp"
#include "eclad/parallel.hpp"
#include "eclad/rng.hpp"
#include "eclad/tensor.hpp"

namespace eclad {

/// Named activation maps of one image, in layer order.
struct TapSet {
  std::vector<std::string> names;
  std::vector<Tensor3> maps;
};

/// d(logit_k)/d(activation) for the maps of a TapSet.
struct GradTapSet {
  std::size_t class_k = 0;
  std::vector<std::string> names;
  std::vector<Tensor3> maps;
};

struct Extent {
  std::size_t height = 0;
  std::size_t width = 0;
};

/// How LADs are rescaled before clustering and assignment.
///   none      raw concatenation
///   channel   per-channel z-scoring with dataset statistics
///   layer_l2  each layer's slice of every LAD scaled to unit length
enum class LadNormalization { none, channel, layer_l2 };

inline std::string_view to_string(LadNormalization n) {
  switch (n) {
    case LadNormalization::none: return "none";
    case LadNormalization::channel: return "channel";
    case LadNormalization::layer_l2: return "layer_l2";
  }
  return "none";
}

inline LadNormalization parse_lad_normalization(std::string_view name) {
  for (auto n : {LadNormalization::none, LadNormalization::channel, LadNormalization::layer_l2}) {
    if (to_string(n) == name) return n;
  }
  throw InvalidArgument("unknown LAD normalization '" + std::string(name) + "' (expected none, channel, layer_l2)");
}

/// Per-channel statistics for LadNormalization::channel.
struct Standardization {
  std::vector<float> mean;
  std::vector<float> stddev;
};

/// Upscales every map to `target` and concatenates them in the given order.
inline Tensor3 aggregate_maps(const std::vector<Tensor3>& maps, Extent target, UpscaleMode mode) {
  if (maps.empty()) throw InvalidArgument("no tapped layers to aggregate");
  std::vector<Tensor3> up;
  up.reserve(maps.size());
  for (const auto& m : maps) up.push_back(upscale(m, target.height, target.width, mode));
  return concat_channels(up);
}

inline Tensor3 compute_descriptor(const TapSet& taps, Extent target, UpscaleMode mode) {
  if (taps.maps.empty()) throw InvalidArgument("compute_descriptor: empty tap set");
  if (taps.names.size() != taps.maps.size()) throw InvalidArgument("compute_descriptor: names/maps mismatch");
  return aggregate_maps(taps.maps, target, mode);
}

/// Same mechanics as compute_descriptor; `layers` must match the descriptor's layer order.
inline Tensor3 compute_gradient_field(const GradTapSet& grads, const std::vector<std::string>& layers,
                                      Extent target, UpscaleMode mode) {
  if (grads.names != layers) throw InvalidArgument("compute_gradient_field: layer set differs from descriptor");
  return aggregate_maps(grads.maps, target, mode);
}

inline void standardize_in_place(Tensor3& d, const Standardization& s) {
  if (s.mean.size() != d.channels()) throw InvalidArgument("standardization channel count mismatch");
  const std::size_t c = d.channels();
  auto& v = d.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t ch = i % c;
    v[i] = (v[i] - s.mean[ch]) / s.stddev[ch];
  }
}

struct ConceptModel {
  std::vector<std::vector<float>> centroids;  // n_c x c*
  std::vector<std::string> layers;
  std::vector<std::size_t> layer_channels;
  UpscaleMode mode = UpscaleMode::bilinear;
  Extent target;
  LadNormalization normalization = LadNormalization::none;
  std::optional<Standardization> standardization;  // set iff normalization == channel

  std::size_t n_concepts() const { return centroids.size(); }
  std::size_t dim() const { return centroids.empty() ? 0 : centroids.front().size(); }
};

// ---------------------------------------------------------------------------
// Nearest-centroid assignment

namespace detail {

inline double squared_distance(std::span<const float> x, std::span<const double> c) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - c[i];
    acc += d * d;
  }
  return acc;
}

// Index of the nearest center; ties go to the lowest index.
inline std::size_t nearest(std::span<const float> x, const std::vector<std::vector<double>>& centers) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centers.size(); ++j) {
    const double d = squared_distance(x, centers[j]);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

inline std::vector<std::vector<double>> to_double(const std::vector<std::vector<float>>& v) {
  std::vector<std::vector<double>> out;
  for (const auto& row : v) out.emplace_back(row.begin(), row.end());
  return out;
}

}  // namespace detail

/// Concept index of every pixel of a descriptor already in the model's LAD space.
inline std::vector<std::uint32_t> assign_concepts(const Tensor3& d, const ConceptModel& model) {
  if (d.channels() != model.dim()) {
    throw InvalidArgument("descriptor has " + std::to_string(d.channels()) + " channels, model expects " +
                          std::to_string(model.dim()));
  }
  const auto centers = detail::to_double(model.centroids);
  const std::size_t n = d.height() * d.width();
  std::vector<std::uint32_t> labels(n);
  for (std::size_t p = 0; p < n; ++p) labels[p] = static_cast<std::uint32_t>(detail::nearest(d.pixel(p), centers));
  return labels;
}

inline Mask2 labels_to_mask(const std::vector<std::uint32_t>& labels, Extent extent, std::size_t j) {
  Mask2 m(extent.height, extent.width);
  for (std::size_t p = 0; p < labels.size(); ++p) m.set(p, labels[p] == j);
  return m;
}

/// Pixels whose nearest centroid is `j`. `d` is taken as stored in the
/// LAD space of the model (see model_space).
inline Mask2 mask_concept(const Tensor3& d, const ConceptModel& model, std::size_t j) {
  if (j >= model.n_concepts()) throw InvalidArgument("concept index " + std::to_string(j) + " out of range");
  return labels_to_mask(assign_concepts(d, model), {d.height(), d.width()}, j);
}

/// Keeps masked pixels and attenuates the rest by `lambda`.
inline Tensor3 render_examples(const Tensor3& image, const Mask2& mask, double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw InvalidArgument("attenuation must lie in (0, 1]");
  if (image.height() != mask.height() || image.width() != mask.width()) {
    throw InvalidArgument("render_examples: image and mask dims differ");
  }
  Tensor3 out = image;
  const auto l = static_cast<float>(lambda);
  for (std::size_t r = 0; r < image.height(); ++r) {
    for (std::size_t c = 0; c < image.width(); ++c) {
      if (mask(r, c)) continue;
      for (float& v : out.pixel(r, c)) v *= l;
    }
  }
  return out;
}

/// Signed per-pixel scalar map.
struct SensitivityMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
};

/// Per-pixel dot product of the gradient field with the descriptor.
inline SensitivityMap pixel_sensitivity(const Tensor3& d, const Tensor3& g) {
  if (!d.same_shape(g)) {
    throw InvalidArgument("pixel_sensitivity: layouts differ " + d.shape_string() + " vs " + g.shape_string());
  }
  SensitivityMap s{d.height(), d.width(), std::vector<double>(d.height() * d.width())};
  for (std::size_t p = 0; p < s.values.size(); ++p) {
    const auto dp = d.pixel(p);
    const auto gp = g.pixel(p);
    double acc = 0.0;
    for (std::size_t i = 0; i < dp.size(); ++i) acc += static_cast<double>(gp[i]) * dp[i];
    s.values[p] = acc;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Minibatch k-means

/// Ordered source of descriptors; get(i) must be deterministic.
struct DescriptorStream {
  std::size_t size = 0;
  std::function<Tensor3(std::size_t)> get;
};

struct KMeansOptions {
  std::size_t n_concepts = 10;
  std::size_t images_per_batch = 2;
  std::uint64_t seed = 0;
  std::size_t epochs = 1;
};

/// Greedy k-means++ seeding over `points` (rows of a flat row-major matrix).
inline std::vector<std::vector<double>> kmeans_pp_init(const std::vector<float>& points, std::size_t dim,
                                                       std::size_t k, std::uint64_t seed) {
  const std::size_t n = dim == 0 ? 0 : points.size() / dim;
  if (k == 0) throw InvalidArgument("k-means++: need at least one center");
  if (k > n) throw InvalidArgument("k-means++: more centers than points");
  Rng rng(mix_seed(seed, 0x6b6d70ULL));
  auto row = [&](std::size_t i) { return std::span<const float>(points.data() + i * dim, dim); };

  std::vector<std::vector<double>> centers;
  std::vector<std::size_t> chosen;
  const std::size_t first = rng.below(n);
  chosen.push_back(first);
  centers.emplace_back(row(first).begin(), row(first).end());
  std::vector<double> closest(n);
  for (std::size_t i = 0; i < n; ++i) closest[i] = detail::squared_distance(row(i), centers[0]);

  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  std::vector<double> cand_closest(n);
  std::vector<double> best_closest(n);
  while (centers.size() < k) {
    const double total = std::accumulate(closest.begin(), closest.end(), 0.0);
    std::size_t best_candidate = n;
    double best_potential = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < trials; ++t) {
      std::size_t cand = 0;
      if (total > 0.0) {
        double target = rng.uniform() * total;
        cand = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          target -= closest[i];
          if (target < 0.0) {
            cand = i;
            break;
          }
        }
        while (closest[cand] == 0.0 && cand > 0) --cand;  // never re-pick an existing center
      } else {
        // Fewer distinct points than centers: fall back to unchosen indices.
        cand = rng.below(n);
        while (std::find(chosen.begin(), chosen.end(), cand) != chosen.end()) cand = (cand + 1) % n;
      }
      const std::vector<double> c(row(cand).begin(), row(cand).end());
      double potential = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        cand_closest[i] = std::min(closest[i], detail::squared_distance(row(i), c));
        potential += cand_closest[i];
      }
      if (potential < best_potential) {
        best_potential = potential;
        best_candidate = cand;
        best_closest.swap(cand_closest);
      }
    }
    chosen.push_back(best_candidate);
    centers.emplace_back(row(best_candidate).begin(), row(best_candidate).end());
    closest.swap(best_closest);
    best_closest.resize(n);
  }
  return centers;
}

namespace detail {

inline void append_lads(std::vector<float>& flat, const Tensor3& d) {
  flat.insert(flat.end(), d.data().begin(), d.data().end());
}

}  // namespace detail

/// Minibatch k-means over all LADs of the stream. Each batch of
/// `images_per_batch` descriptors is assigned to the current centers, then
/// every center moves to the count-weighted mean of its previous position
/// and the newly assigned points (per-center learning rate 1/count).
inline std::vector<std::vector<float>> fit_centroids(const DescriptorStream& stream, const KMeansOptions& opt) {
  if (stream.size == 0) throw InvalidArgument("fit_concepts: empty descriptor stream");
  if (opt.n_concepts == 0) throw InvalidArgument("fit_concepts: n_c must be at least 1");
  if (opt.images_per_batch == 0) throw InvalidArgument("fit_concepts: n_i must be at least 1");

  // Seeding pool: the first minibatch, extended if it holds fewer LADs than n_c.
  std::vector<float> pool;
  std::size_t dim = 0;
  std::size_t total_lads = 0;
  std::size_t pooled_images = 0;
  {
    std::size_t i = 0;
    while (i < stream.size && (i < opt.images_per_batch || (dim > 0 && pool.size() / dim < opt.n_concepts))) {
      const Tensor3 d = stream.get(i);
      if (dim == 0) dim = d.channels();
      if (d.channels() != dim) throw InvalidArgument("fit_concepts: descriptor channel count changed");
      detail::append_lads(pool, d);
      ++i;
    }
    pooled_images = i;
    total_lads = pool.size() / dim;
  }
  if (total_lads < opt.n_concepts) {
    throw InvalidArgument("fit_concepts: n_c = " + std::to_string(opt.n_concepts) + " exceeds LAD count " +
                          std::to_string(total_lads));
  }
  std::vector<std::vector<double>> centers = kmeans_pp_init(pool, dim, opt.n_concepts, opt.seed);
  std::vector<double> counts(opt.n_concepts, 0.0);

  const std::size_t k = opt.n_concepts;
  std::vector<std::vector<double>> sums(k, std::vector<double>(dim));
  std::vector<double> batch_counts(k);
  std::vector<float> batch;
  for (std::size_t epoch = 0; epoch < std::max<std::size_t>(opt.epochs, 1); ++epoch) {
    for (std::size_t start = 0; start < stream.size; start += opt.images_per_batch) {
      const std::size_t end = std::min(stream.size, start + opt.images_per_batch);
      if (epoch == 0 && end <= pooled_images) {
        // The pool may span several batches; slice the relevant images out.
        const std::size_t per_image = pool.size() / pooled_images;
        batch.assign(pool.begin() + static_cast<std::ptrdiff_t>(start * per_image),
                     pool.begin() + static_cast<std::ptrdiff_t>(end * per_image));
      } else {
        batch.clear();
        for (std::size_t i = start; i < end; ++i) {
          const Tensor3 d = stream.get(i);
          if (d.channels() != dim) throw InvalidArgument("fit_concepts: descriptor channel count changed");
          detail::append_lads(batch, d);
        }
      }
      const std::size_t n = batch.size() / dim;
      for (auto& s : sums) std::fill(s.begin(), s.end(), 0.0);
      std::fill(batch_counts.begin(), batch_counts.end(), 0.0);
      for (std::size_t p = 0; p < n; ++p) {
        const std::span<const float> x(batch.data() + p * dim, dim);
        const std::size_t j = detail::nearest(x, centers);
        batch_counts[j] += 1.0;
        auto& s = sums[j];
        for (std::size_t q = 0; q < dim; ++q) s[q] += x[q];
      }
      for (std::size_t j = 0; j < k; ++j) {
        if (batch_counts[j] == 0.0) continue;
        const double total = counts[j] + batch_counts[j];
        for (std::size_t q = 0; q < dim; ++q) centers[j][q] = (counts[j] * centers[j][q] + sums[j][q]) / total;
        counts[j] = total;
      }
    }
  }
  std::vector<std::vector<float>> out;
  for (const auto& c : centers) {
    std::vector<float> f(dim);
    for (std::size_t q = 0; q < dim; ++q) f[q] = static_cast<float>(c[q]);
    out.push_back(std::move(f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Importance scoring

struct ImportanceReport {
  std::vector<std::vector<double>> cs;  // n_c x n_classes contrastive sensitivities
  std::vector<double> ri;               // relative importance in [-1, 1]
  std::vector<std::size_t> k_of;        // class with the largest |cs| per concept
  std::vector<std::vector<std::size_t>> pixel_counts;  // n_c x n_classes
  bool degenerate = false;              // every cs entry is zero
};

/// Streams per-image sensitivities into the per-(concept, class) sums
/// behind the contrastive sensitivity. Images must be added in a fixed order.
class ImportanceAccumulator {
 public:
  ImportanceAccumulator(std::size_t n_concepts, std::size_t n_classes)
      : n_concepts_(n_concepts), n_classes_(n_classes),
        in_sum_(n_concepts, std::vector<double>(n_classes)), in_count_(in_sum_),
        out_sum_(in_sum_), out_count_(in_sum_),
        pixels_(n_concepts, std::vector<std::size_t>(n_classes)) {}

  /// `labels`: concept per pixel; `sensitivity[k]`: s^k per pixel.
  void add(std::size_t image_class, const std::vector<std::uint32_t>& labels,
           const std::vector<SensitivityMap>& sensitivity) {
    if (image_class >= n_classes_) throw InvalidArgument("image class out of range");
    if (sensitivity.size() != n_classes_) throw InvalidArgument("need one sensitivity map per class");
    for (const auto& s : sensitivity) {
      if (s.values.size() != labels.size()) throw InvalidArgument("sensitivity/label size mismatch");
    }
    for (std::size_t p = 0; p < labels.size(); ++p) {
      const std::size_t j = labels[p];
      if (j >= n_concepts_) throw InvalidArgument("concept label out of range");
      ++pixels_[j][image_class];
    }
    for (std::size_t k = 0; k < n_classes_; ++k) {
      auto& sum = image_class == k ? in_sum_ : out_sum_;
      auto& cnt = image_class == k ? in_count_ : out_count_;
      const auto& s = sensitivity[k].values;
      for (std::size_t p = 0; p < labels.size(); ++p) {
        sum[labels[p]][k] += s[p];
        cnt[labels[p]][k] += 1.0;
      }
    }
  }

  ImportanceReport finish() const {
    ImportanceReport rep;
    rep.cs.assign(n_concepts_, std::vector<double>(n_classes_));
    rep.pixel_counts = pixels_;
    double max_abs = 0.0;
    for (std::size_t j = 0; j < n_concepts_; ++j) {
      for (std::size_t k = 0; k < n_classes_; ++k) {
        const double in = in_count_[j][k] > 0.0 ? in_sum_[j][k] / in_count_[j][k] : 0.0;
        const double out = out_count_[j][k] > 0.0 ? out_sum_[j][k] / out_count_[j][k] : 0.0;
        rep.cs[j][k] = in - out;
        max_abs = std::max(max_abs, std::abs(rep.cs[j][k]));
      }
    }
    return with_relative_importance(std::move(rep), max_abs);
  }

  /// RI and k_of from a filled cs matrix.
  static ImportanceReport with_relative_importance(ImportanceReport rep, double max_abs) {
    const std::size_t nc = rep.cs.size();
    rep.ri.assign(nc, 0.0);
    rep.k_of.assign(nc, 0);
    for (std::size_t j = 0; j < nc; ++j) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < rep.cs[j].size(); ++k) {
        if (std::abs(rep.cs[j][k]) > std::abs(rep.cs[j][best])) best = k;
      }
      rep.k_of[j] = best;
      rep.ri[j] = max_abs > 0.0 ? rep.cs[j][best] / max_abs : 0.0;
    }
    rep.degenerate = max_abs == 0.0;
    return rep;
  }

 private:
  std::size_t n_concepts_;
  std::size_t n_classes_;
  std::vector<std::vector<double>> in_sum_, in_count_, out_sum_, out_count_;
  std::vector<std::vector<std::size_t>> pixels_;
};

/// One image's contribution to the importance scores.
struct ScoredImage {
  std::size_t label = 0;
  std::vector<std::uint32_t> concept_of_pixel;
  std::vector<SensitivityMap> sensitivity;  // one per class
};

inline ImportanceReport score_concepts(const std::vector<ScoredImage>& images, std::size_t n_concepts,
                                       std::size_t n_classes) {
  ImportanceAccumulator acc(n_concepts, n_classes);
  for (const auto& im : images) acc.add(im.label, im.concept_of_pixel, im.sensitivity);
  return acc.finish();
}

// ---------------------------------------------------------------------------
// Tap sources

struct ImageTaps {
  TapSet acts;
  std::vector<GradTapSet> grads;  // one per class when requested
};

/// Supplies per-image activation (and gradient) taps in a fixed image order.
class TapSource {
 public:
  virtual ~TapSource() = default;
  virtual std::size_t size() const = 0;
  virtual const std::string& image_id(std::size_t i) const = 0;
  virtual std::size_t label(std::size_t i) const = 0;
  virtual std::size_t n_classes() const = 0;
  virtual Extent image_extent() const = 0;
  virtual std::vector<std::string> available_layers() const = 0;
  virtual ImageTaps fetch(std::size_t i, const std::vector<std::string>& layers, bool with_grads) const = 0;
  virtual Tensor3 image(std::size_t i) const = 0;
};

namespace detail {

inline std::vector<std::size_t> select_layers(const std::vector<std::string>& available,
                                              const std::vector<std::string>& wanted) {
  std::vector<std::size_t> idx;
  for (const auto& name : wanted) {
    const auto it = std::find(available.begin(), available.end(), name);
    if (it == available.end()) {
      std::string list;
      for (const auto& a : available) list += (list.empty() ? "" : ", ") + a;
      throw InvalidArgument("unknown layer '" + name + "' (available: " + list + ")");
    }
    idx.push_back(static_cast<std::size_t>(it - available.begin()));
  }
  return idx;
}

}  // namespace detail

/// Taps computed by the built-in network over a dataset directory.
class NetworkTapSource : public TapSource {
 public:
  NetworkTapSource(net::Params params, Dataset dataset) : params_(std::move(params)), dataset_(std::move(dataset)) {
    if (dataset_.image_size() != params_.arch.input_size) {
      throw InvalidArgument("dataset image size " + std::to_string(dataset_.image_size()) +
                            " does not match network input " + std::to_string(params_.arch.input_size));
    }
    if (dataset_.n_classes() != params_.arch.n_classes) {
      throw InvalidArgument("dataset class count does not match the network head");
    }
  }

  std::size_t size() const override { return dataset_.size(); }
  const std::string& image_id(std::size_t i) const override { return dataset_.files().at(i).id; }
  std::size_t label(std::size_t i) const override { return dataset_.files().at(i).label; }
  std::size_t n_classes() const override { return dataset_.n_classes(); }
  Extent image_extent() const override { return {dataset_.image_size(), dataset_.image_size()}; }
  std::vector<std::string> available_layers() const override { return params_.arch.tap_names(); }
  Tensor3 image(std::size_t i) const override { return dataset_.load_image(i); }
  const Dataset& dataset() const { return dataset_; }
  const net::Params& params() const { return params_; }

  ImageTaps fetch(std::size_t i, const std::vector<std::string>& layers, bool with_grads) const override {
    const auto sel = detail::select_layers(available_layers(), layers);
    const Tensor3 img = image(i);
    const net::ForwardCache cache = net::forward_cached(params_, img);
    ImageTaps out;
    out.acts.names = layers;
    for (std::size_t s : sel) out.acts.maps.push_back(cache.taps[s]);
    if (with_grads) {
      for (std::size_t k = 0; k < n_classes(); ++k) {
        std::vector<float> seed(n_classes(), 0.0f);
        seed[k] = 1.0f;
        std::vector<Tensor3> g;
        net::backward(params_, cache, seed, &g, nullptr);
        GradTapSet gs{k, layers, {}};
        for (std::size_t s : sel) gs.maps.push_back(std::move(g[s]));
        out.grads.push_back(std::move(gs));
      }
    }
    return out;
  }

 private:
  net::Params params_;
  Dataset dataset_;
};

/// Taps read from `<image_id>.acts.ectf` / `<image_id>.class<k>.grads.ectf`.
class DirectoryTapSource : public TapSource {
 public:
  DirectoryTapSource(std::filesystem::path tap_dir, Dataset dataset)
      : dir_(std::move(tap_dir)), dataset_(std::move(dataset)) {
    if (dataset_.size() == 0) throw InvalidArgument("tap directory source: dataset is empty");
    const auto first = ectf::read_file(acts_path(0));
    for (const auto& e : first) layers_.push_back(e.name);
  }

  std::size_t size() const override { return dataset_.size(); }
  const std::string& image_id(std::size_t i) const override { return dataset_.files().at(i).id; }
  std::size_t label(std::size_t i) const override { return dataset_.files().at(i).label; }
  std::size_t n_classes() const override { return dataset_.n_classes(); }
  Extent image_extent() const override { return {dataset_.image_size(), dataset_.image_size()}; }
  std::vector<std::string> available_layers() const override { return layers_; }
  Tensor3 image(std::size_t i) const override { return dataset_.load_image(i); }

  std::filesystem::path acts_path(std::size_t i) const { return dir_ / (image_id(i) + ".acts.ectf"); }
  std::filesystem::path grads_path(std::size_t i, std::size_t k) const {
    return dir_ / (image_id(i) + ".class" + std::to_string(k) + ".grads.ectf");
  }

  ImageTaps fetch(std::size_t i, const std::vector<std::string>& layers, bool with_grads) const override {
    ImageTaps out;
    const auto acts = ectf::read_file(acts_path(i));
    out.acts.names = layers;
    for (const auto& name : layers) out.acts.maps.push_back(ectf::find(acts, name));
    if (with_grads) {
      for (std::size_t k = 0; k < n_classes(); ++k) {
        const auto grads = ectf::read_file(grads_path(i, k));
        GradTapSet gs{k, layers, {}};
        for (std::size_t li = 0; li < layers.size(); ++li) {
          const Tensor3& g = ectf::find(grads, layers[li]);
          if (!g.same_shape(out.acts.maps[li])) {
            throw InvalidArgument(grads_path(i, k).string() + ": gradient shape differs from activation for " +
                                  layers[li]);
          }
          gs.maps.push_back(g);
        }
        out.grads.push_back(std::move(gs));
      }
    }
    return out;
  }

 private:
  std::filesystem::path dir_;
  Dataset dataset_;
  std::vector<std::string> layers_;
};

// ---------------------------------------------------------------------------
// End-to-end extraction

struct EcladConfig {
  std::vector<std::string> layers;  // empty: every available tap, in source order
  std::size_t n_concepts = 10;
  std::size_t images_per_batch = 2;
  double lambda = 0.3;
  UpscaleMode mode = UpscaleMode::bilinear;
  std::uint64_t seed = 0;
  std::size_t epochs = 1;
  LadNormalization normalization = LadNormalization::none;
  std::size_t downscale = 1;           // descriptor extent = image extent / downscale
  std::size_t max_per_class = 200;     // images per class considered
  std::size_t examples_per_concept = 16;

  nlohmann::json to_json() const {
    return {{"layers", layers},
            {"n_concepts", n_concepts},
            {"images_per_batch", images_per_batch},
            {"lambda", lambda},
            {"upscale", std::string(to_string(mode))},
            {"seed", seed},
            {"epochs", epochs},
            {"normalization", std::string(to_string(normalization))},
            {"downscale", downscale},
            {"max_per_class", max_per_class},
            {"examples_per_concept", examples_per_concept}};
  }
};

inline void layer_l2_in_place(Tensor3& d, const std::vector<std::size_t>& layer_channels) {
  const std::size_t c = d.channels();
  std::size_t total = 0;
  for (auto n : layer_channels) total += n;
  if (total != c) throw InvalidArgument("layer channel counts do not add up to the descriptor width");
  auto& v = d.data();
  for (std::size_t base = 0; base < v.size(); base += c) {
    std::size_t q = base;
    for (std::size_t n : layer_channels) {
      double sq = 0.0;
      for (std::size_t k = 0; k < n; ++k) sq += static_cast<double>(v[q + k]) * v[q + k];
      if (sq > 0.0) {
        const double inv = 1.0 / std::sqrt(sq);
        for (std::size_t k = 0; k < n; ++k) v[q + k] = static_cast<float>(v[q + k] * inv);
      }
      q += n;
    }
  }
}

/// Raw descriptor mapped into the model's LAD space.
inline Tensor3 model_space(Tensor3 d, const ConceptModel& model) {
  switch (model.normalization) {
    case LadNormalization::none: break;
    case LadNormalization::channel:
      if (!model.standardization) throw InvalidArgument("channel normalization without statistics");
      standardize_in_place(d, *model.standardization);
      break;
    case LadNormalization::layer_l2: layer_l2_in_place(d, model.layer_channels); break;
  }
  return d;
}

inline Extent descriptor_extent(Extent image, std::size_t downscale) {
  if (downscale == 0) throw InvalidArgument("downscale must be at least 1");
  return {std::max<std::size_t>(1, image.height / downscale), std::max<std::size_t>(1, image.width / downscale)};
}

/// Nearest-neighbour resize of a mask (identity when the extent already matches).
inline Mask2 resize_mask(const Mask2& m, Extent target) {
  if (m.height() == target.height && m.width() == target.width) return m;
  Mask2 out(target.height, target.width);
  for (std::size_t r = 0; r < target.height; ++r) {
    const std::size_t sr = std::min(m.height() - 1, r * m.height() / target.height);
    for (std::size_t c = 0; c < target.width; ++c) {
      const std::size_t sc = std::min(m.width() - 1, c * m.width() / target.width);
      out.set(r, c, m(sr, sc));
    }
  }
  return out;
}

/// Per-pixel concept labels (at the model's descriptor extent) for one image's taps.
inline std::vector<std::uint32_t> concept_labels(const TapSet& acts, const ConceptModel& model) {
  if (acts.names != model.layers) throw InvalidArgument("tap layers differ from the concept model's layers");
  for (std::size_t l = 0; l < acts.maps.size(); ++l) {
    if (acts.maps[l].channels() != model.layer_channels.at(l)) {
      throw InvalidArgument("layer " + acts.names[l] + " has " + std::to_string(acts.maps[l].channels()) +
                            " channels, concept model expects " + std::to_string(model.layer_channels[l]));
    }
  }
  return assign_concepts(model_space(compute_descriptor(acts, model.target, model.mode), model), model);
}

inline std::vector<Mask2> labels_to_masks(const std::vector<std::uint32_t>& labels, const ConceptModel& model,
                                          Extent image) {
  std::vector<Mask2> masks;
  for (std::size_t j = 0; j < model.n_concepts(); ++j) {
    masks.push_back(resize_mask(labels_to_mask(labels, model.target, j), image));
  }
  return masks;
}

/// Concept masks of image `i` at image resolution, one per concept.
inline std::vector<Mask2> localize(const TapSource& source, const ConceptModel& model, std::size_t i) {
  const ImageTaps taps = source.fetch(i, model.layers, false);
  return labels_to_masks(concept_labels(taps.acts, model), model, source.image_extent());
}

struct EcladResult {
  ConceptModel model;
  ImportanceReport importance;
  std::vector<std::size_t> image_indices;  // images used, stream order
  nlohmann::json report;
};

/// Up to `max_per_class` images per class, interleaved round-robin across
/// classes so every minibatch stream sees all classes early.
inline std::vector<std::size_t> select_images(const TapSource& source, std::size_t max_per_class) {
  std::vector<std::vector<std::size_t>> by_class(source.n_classes());
  for (std::size_t i = 0; i < source.size(); ++i) {
    auto& bucket = by_class.at(source.label(i));
    if (bucket.size() < max_per_class) bucket.push_back(i);
  }
  std::vector<std::size_t> out;
  for (std::size_t r = 0;; ++r) {
    bool any = false;
    for (const auto& bucket : by_class) {
      if (r < bucket.size()) {
        out.push_back(bucket[r]);
        any = true;
      }
    }
    if (!any) break;
  }
  return out;
}

inline nlohmann::json model_to_json(const ConceptModel& m) {
  std::vector<ectf::Entry> entries;
  std::vector<float> flat;
  for (const auto& c : m.centroids) flat.insert(flat.end(), c.begin(), c.end());
  entries.push_back({"centroids", Tensor3(m.n_concepts(), 1, m.dim(), flat)});
  if (m.standardization) {
    entries.push_back({"standardization.mean", Tensor3(1, 1, m.dim(), m.standardization->mean)});
    entries.push_back({"standardization.std", Tensor3(1, 1, m.dim(), m.standardization->stddev)});
  }
  return {{"layers", m.layers},
          {"layer_channels", m.layer_channels},
          {"upscale", std::string(to_string(m.mode))},
          {"target", {m.target.height, m.target.width}},
          {"normalization", std::string(to_string(m.normalization))},
          {"n_concepts", m.n_concepts()},
          {"c_star", m.dim()},
          {"centroids_ectf_base64", base64::encode(ectf::encode(entries))}};
}

inline ConceptModel model_from_json(const nlohmann::json& j) {
  ConceptModel m;
  try {
    m.layers = j.at("layers").get<std::vector<std::string>>();
    m.layer_channels = j.at("layer_channels").get<std::vector<std::size_t>>();
    m.mode = parse_upscale_mode(j.at("upscale").get<std::string>());
    m.target = {j.at("target").at(0).get<std::size_t>(), j.at("target").at(1).get<std::size_t>()};
    const auto entries = ectf::decode(base64::decode(j.at("centroids_ectf_base64").get<std::string>()));
    const Tensor3& c = ectf::find(entries, "centroids");
    for (std::size_t r = 0; r < c.height(); ++r) {
      const auto px = c.pixel(r, 0);
      m.centroids.emplace_back(px.begin(), px.end());
    }
    m.normalization = parse_lad_normalization(j.value("normalization", std::string("none")));
    if (m.normalization == LadNormalization::channel) {
      Standardization s;
      s.mean = ectf::find(entries, "standardization.mean").data();
      s.stddev = ectf::find(entries, "standardization.std").data();
      m.standardization = std::move(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed concept model: ") + e.what());
  }
  if (m.centroids.empty()) throw InvalidArgument("concept model has no centroids");
  std::size_t sum = 0;
  for (auto c : m.layer_channels) sum += c;
  if (sum != m.dim() || m.layers.size() != m.layer_channels.size()) {
    throw InvalidArgument("concept model layer channels do not add up to the centroid dimension");
  }
  return m;
}

inline ConceptModel load_concept_model(const std::filesystem::path& report_path) {
  std::ifstream in(report_path);
  if (!in) throw IoError("cannot read " + report_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("malformed report " + report_path.string() + ": " + e.what());
  }
  if (!j.contains("model")) throw InvalidArgument(report_path.string() + " has no concept model");
  return model_from_json(j.at("model"));
}

/// Runs the full extraction: LADs -> minibatch k-means -> per-concept
/// examples -> per-class contrastive sensitivity -> relative importance.
/// Writes eclad_report.json and concepts/c<j>/<image_id>.png when `out_dir` is set.
inline EcladResult run_eclad(const TapSource& source, const EcladConfig& cfg,
                             const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  if (!(cfg.lambda > 0.0 && cfg.lambda <= 1.0)) throw InvalidArgument("lambda must lie in (0, 1]");
  EcladResult res;
  ConceptModel& model = res.model;
  model.layers = cfg.layers.empty() ? source.available_layers() : cfg.layers;
  detail::select_layers(source.available_layers(), model.layers);
  model.mode = cfg.mode;
  model.target = descriptor_extent(source.image_extent(), cfg.downscale);

  res.image_indices = select_images(source, cfg.max_per_class);
  const auto& idx = res.image_indices;
  if (idx.empty()) throw InvalidArgument("run_eclad: no images");

  {
    const ImageTaps t0 = source.fetch(idx[0], model.layers, false);
    for (const auto& m : t0.acts.maps) model.layer_channels.push_back(m.channels());
  }

  auto raw_descriptor = [&](std::size_t s) {
    return compute_descriptor(source.fetch(idx[s], model.layers, false).acts, model.target, model.mode);
  };

  model.normalization = cfg.normalization;
  if (cfg.normalization == LadNormalization::channel) {
    std::size_t dim = 0;
    std::vector<double> sum;
    std::vector<double> sq;
    double n = 0.0;
    for (std::size_t s = 0; s < idx.size(); ++s) {
      const Tensor3 d = raw_descriptor(s);
      if (dim == 0) {
        dim = d.channels();
        sum.assign(dim, 0.0);
        sq.assign(dim, 0.0);
      }
      for (std::size_t p = 0; p < d.height() * d.width(); ++p) {
        const auto px = d.pixel(p);
        for (std::size_t q = 0; q < dim; ++q) {
          sum[q] += px[q];
          sq[q] += static_cast<double>(px[q]) * px[q];
        }
      }
      n += static_cast<double>(d.height() * d.width());
    }
    Standardization st;
    for (std::size_t q = 0; q < dim; ++q) {
      const double mean = sum[q] / n;
      const double var = std::max(0.0, sq[q] / n - mean * mean);
      st.mean.push_back(static_cast<float>(mean));
      st.stddev.push_back(static_cast<float>(var > 1e-12 ? std::sqrt(var) : 1.0));
    }
    model.standardization = std::move(st);
  }

  DescriptorStream stream{idx.size(), [&](std::size_t s) { return model_space(raw_descriptor(s), model); }};
  model.centroids = fit_centroids(stream, {cfg.n_concepts, cfg.images_per_batch, cfg.seed, cfg.epochs});

  const std::size_t n_classes = source.n_classes();
  ImportanceAccumulator acc(model.n_concepts(), n_classes);
  std::vector<std::size_t> examples_written(model.n_concepts(), 0);
  if (out_dir) {
    for (std::size_t j = 0; j < model.n_concepts(); ++j) {
      std::filesystem::create_directories(*out_dir / "concepts" / ("c" + std::to_string(j)));
    }
  }
  for (std::size_t s = 0; s < idx.size(); ++s) {
    const std::size_t i = idx[s];
    const ImageTaps taps = source.fetch(i, model.layers, true);
    const Tensor3 d = compute_descriptor(taps.acts, model.target, model.mode);
    const auto labels = assign_concepts(model_space(d, model), model);
    std::vector<SensitivityMap> sens;
    for (const auto& g : taps.grads) {
      sens.push_back(pixel_sensitivity(d, compute_gradient_field(g, model.layers, model.target, model.mode)));
    }
    acc.add(source.label(i), labels, sens);

    if (out_dir) {
      const Tensor3 img = source.image(i);
      for (std::size_t j = 0; j < model.n_concepts(); ++j) {
        if (examples_written[j] >= cfg.examples_per_concept) continue;
        const Mask2 m = resize_mask(labels_to_mask(labels, model.target, j), {img.height(), img.width()});
        if (!m.any()) continue;
        write_rgb(*out_dir / "concepts" / ("c" + std::to_string(j)) / (source.image_id(i) + ".png"),
                  render_examples(img, m, cfg.lambda));
        ++examples_written[j];
      }
    }
  }
  res.importance = acc.finish();

  nlohmann::json concepts = nlohmann::json::array();
  for (std::size_t j = 0; j < model.n_concepts(); ++j) {
    concepts.push_back({{"id", "c" + std::to_string(j)},
                        {"ri", res.importance.ri[j]},
                        {"class", res.importance.k_of[j]},
                        {"cs", res.importance.cs[j]},
                        {"pixels_per_class", res.importance.pixel_counts[j]}});
  }
  res.report = {{"config", cfg.to_json()},
                {"images", idx.size()},
                {"n_classes", n_classes},
                {"model", model_to_json(model)},
                {"cs", res.importance.cs},
                {"ri", res.importance.ri},
                {"k_of", res.importance.k_of},
                {"degenerate", res.importance.degenerate},
                {"concepts", concepts}};
  if (out_dir) {
    std::ofstream out(*out_dir / "eclad_report.json");
    if (!out) throw IoError("cannot write eclad_report.json");
    out << res.report.dump(2) << "\n";
    if (!out) throw IoError("write failed: eclad_report.json");
  }
  return res;
}

}  // namespace eclad
