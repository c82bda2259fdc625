#pragma once

// A small convolutional classifier: stages of conv3x3 -> ReLU -> maxpool2,
// then flatten + dense. Every post-pool activation can be tapped, and the
// backward pass exposes d(logit_k)/d(tap) alongside the usual weight
// gradients for SGD training.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <tuple>
#include <string>
#include <vector>

#include "json.hpp"

#include "eclad/dataset.hpp"
#include "eclad/ectf.hpp"
#include "eclad/errors.hpp"
#include "eclad/parallel.hpp"
#include "eclad/rng.hpp"
#include "eclad/tensor.hpp"

namespace eclad::net {

struct Stage {
  std::size_t kernel = 3;
  std::size_t out_channels = 16;
};

struct Architecture {
  std::size_t input_size = 64;
  std::size_t in_channels = 3;
  std::vector<Stage> stages{{3, 16}, {3, 32}, {3, 64}, {3, 64}};
  std::size_t n_classes = 2;
  // Map pixel values from [0, 1] to [-1, 1] before the first convolution so
  // dark and bright regions both drive the zero-bias filters.
  bool center_input = true;

  std::size_t stage_size(std::size_t i) const { return input_size >> (i + 1); }
  std::size_t stage_in_channels(std::size_t i) const {
    return i == 0 ? in_channels : stages[i - 1].out_channels;
  }
  std::size_t flat_dim() const {
    const std::size_t s = stage_size(stages.size() - 1);
    return s * s * stages.back().out_channels;
  }

  /// Names of the tap points, one per stage output (after pooling).
  std::vector<std::string> tap_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < stages.size(); ++i) names.push_back(tap_name(i));
    return names;
  }
  static std::string tap_name(std::size_t stage) { return "stage" + std::to_string(stage + 1); }

  std::size_t tap_index(std::string_view name) const {
    for (std::size_t i = 0; i < stages.size(); ++i) {
      if (tap_name(i) == name) return i;
    }
    throw InvalidArgument("unknown tap '" + std::string(name) + "'");
  }

  void validate() const {
    if (stages.size() < 2) throw InvalidArgument("architecture needs at least two tapped stages");
    if (n_classes < 2) throw InvalidArgument("architecture needs at least two classes");
    if (in_channels == 0 || input_size == 0) throw InvalidArgument("architecture input is empty");
    if (input_size % (std::size_t{1} << stages.size()) != 0) {
      throw InvalidArgument("input size must be divisible by 2^stages");
    }
    if (stage_size(stages.size() - 1) < 2) {
      throw InvalidArgument("every tap needs spatial dims of at least 2x2");
    }
    for (const auto& s : stages) {
      if (s.kernel % 2 == 0 || s.kernel == 0) throw InvalidArgument("kernel size must be odd");
      if (s.out_channels == 0) throw InvalidArgument("stage with zero channels");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json st = nlohmann::json::array();
    for (const auto& s : stages) st.push_back({{"kernel", s.kernel}, {"out_channels", s.out_channels}});
    return {{"input_size", input_size}, {"in_channels", in_channels}, {"stages", st},
            {"n_classes", n_classes}, {"center_input", center_input}, {"taps", tap_names()}};
  }

  static Architecture from_json(const nlohmann::json& j) {
    Architecture a;
    a.input_size = j.at("input_size").get<std::size_t>();
    a.in_channels = j.value("in_channels", std::size_t{3});
    a.n_classes = j.at("n_classes").get<std::size_t>();
    a.center_input = j.value("center_input", true);
    a.stages.clear();
    for (const auto& s : j.at("stages")) {
      a.stages.push_back({s.value("kernel", std::size_t{3}), s.at("out_channels").get<std::size_t>()});
    }
    a.validate();
    return a;
  }

  friend bool operator==(const Architecture& a, const Architecture& b) {
    if (a.input_size != b.input_size || a.in_channels != b.in_channels || a.n_classes != b.n_classes ||
        a.center_input != b.center_input || a.stages.size() != b.stages.size()) {
      return false;
    }
    for (std::size_t i = 0; i < a.stages.size(); ++i) {
      if (a.stages[i].kernel != b.stages[i].kernel || a.stages[i].out_channels != b.stages[i].out_channels) {
        return false;
      }
    }
    return true;
  }
};

/// Kernels are stored [ky][kx][in][out]; the head weight is [class][flat].
struct Params {
  Architecture arch;
  std::vector<std::vector<float>> kernels;
  std::vector<std::vector<float>> biases;
  std::vector<float> head_weight;
  std::vector<float> head_bias;

  friend bool operator==(const Params&, const Params&) = default;

  std::size_t count() const {
    std::size_t n = head_weight.size() + head_bias.size();
    for (std::size_t i = 0; i < kernels.size(); ++i) n += kernels[i].size() + biases[i].size();
    return n;
  }

  bool all_finite() const {
    auto ok = [](const std::vector<float>& v) {
      return std::all_of(v.begin(), v.end(), [](float f) { return std::isfinite(f); });
    };
    for (std::size_t i = 0; i < kernels.size(); ++i) {
      if (!ok(kernels[i]) || !ok(biases[i])) return false;
    }
    return ok(head_weight) && ok(head_bias);
  }

  /// Same-shaped zero parameter set (gradient / momentum buffers).
  Params zeros_like() const {
    Params z;
    z.arch = arch;
    for (std::size_t i = 0; i < kernels.size(); ++i) {
      z.kernels.emplace_back(kernels[i].size(), 0.0f);
      z.biases.emplace_back(biases[i].size(), 0.0f);
    }
    z.head_weight.assign(head_weight.size(), 0.0f);
    z.head_bias.assign(head_bias.size(), 0.0f);
    return z;
  }

  /// Applies fn(param_vector, other_vector) to every parameter block.
  template <typename Fn>
  void zip(Params& other, Fn&& fn) {
    for (std::size_t i = 0; i < kernels.size(); ++i) {
      fn(kernels[i], other.kernels[i]);
      fn(biases[i], other.biases[i]);
    }
    fn(head_weight, other.head_weight);
    fn(head_bias, other.head_bias);
  }
};

/// He-uniform kernels, zero biases.
inline Params init(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(mix_seed(seed, 0x6e6574ULL));
  Params p;
  p.arch = arch;
  for (std::size_t i = 0; i < arch.stages.size(); ++i) {
    const std::size_t k = arch.stages[i].kernel;
    const std::size_t cin = arch.stage_in_channels(i);
    const std::size_t cout = arch.stages[i].out_channels;
    const double bound = std::sqrt(6.0 / static_cast<double>(k * k * cin));
    std::vector<float> w(k * k * cin * cout);
    for (auto& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
    p.kernels.push_back(std::move(w));
    p.biases.emplace_back(cout, 0.0f);
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(arch.flat_dim()));
  p.head_weight.resize(arch.n_classes * arch.flat_dim());
  for (auto& v : p.head_weight) v = static_cast<float>(rng.uniform(-bound, bound));
  p.head_bias.assign(arch.n_classes, 0.0f);
  return p;
}

/// Intermediate values kept by forward() for the backward pass.
struct ForwardCache {
  std::vector<Tensor3> inputs;  // input of each stage
  std::vector<Tensor3> pre;     // conv output before ReLU
  std::vector<std::vector<std::uint32_t>> argmax;  // flat index into pre per pooled element
  std::vector<Tensor3> taps;    // pooled stage outputs
  std::vector<float> logits;
};

struct ForwardResult {
  std::vector<float> logits;
  std::vector<Tensor3> taps;  // one per stage, ordered as Architecture::tap_names()
};

namespace detail {

inline Tensor3 conv_forward(const Tensor3& in, const std::vector<float>& kernel, const std::vector<float>& bias,
                            std::size_t k) {
  const std::size_t h = in.height();
  const std::size_t w = in.width();
  const std::size_t cin = in.channels();
  const std::size_t cout = bias.size();
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  Tensor3 out(h, w, cout);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      float* o = out.pixel(y, x).data();
      std::copy(bias.begin(), bias.end(), o);
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(ky) - pad;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(x) + static_cast<std::ptrdiff_t>(kx) - pad;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const float* src = in.pixel(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)).data();
          const float* wk = kernel.data() + (ky * k + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const float a = src[ci];
            if (a == 0.0f) continue;
            const float* wr = wk + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) o[co] += a * wr[co];
          }
        }
      }
    }
  }
  return out;
}

// Accumulates kernel/bias gradients and (optionally) the input gradient.
inline void conv_backward(const Tensor3& in, const std::vector<float>& kernel, std::size_t k,
                          const Tensor3& grad_out, std::vector<float>* grad_kernel,
                          std::vector<float>* grad_bias, Tensor3* grad_in) {
  const std::size_t h = in.height();
  const std::size_t w = in.width();
  const std::size_t cin = in.channels();
  const std::size_t cout = grad_out.channels();
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  // Input gradients sum up to k*k*cout terms that often cancel; accumulate in double.
  std::vector<double> gin(grad_in ? h * w * cin : 0, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const float* g = grad_out.pixel(y, x).data();
      if (std::all_of(g, g + cout, [](float v) { return v == 0.0f; })) continue;
      if (grad_bias) {
        for (std::size_t co = 0; co < cout; ++co) (*grad_bias)[co] += g[co];
      }
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(ky) - pad;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(x) + static_cast<std::ptrdiff_t>(kx) - pad;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const auto sy = static_cast<std::size_t>(iy);
          const auto sx = static_cast<std::size_t>(ix);
          const float* src = in.pixel(sy, sx).data();
          const std::size_t base = (ky * k + kx) * cin * cout;
          if (grad_kernel) {
            float* gk = grad_kernel->data() + base;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const float a = src[ci];
              if (a == 0.0f) continue;
              float* gr = gk + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) gr[co] += a * g[co];
            }
          }
          if (grad_in) {
            double* gi = gin.data() + (sy * w + sx) * cin;
            const float* wk = kernel.data() + base;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const float* wr = wk + ci * cout;
              double acc = 0.0;
              for (std::size_t co = 0; co < cout; ++co) acc += static_cast<double>(wr[co]) * g[co];
              gi[ci] += acc;
            }
          }
        }
      }
    }
  }
  if (grad_in) {
    *grad_in = Tensor3(h, w, cin);
    auto& out = grad_in->data();
    for (std::size_t i = 0; i < gin.size(); ++i) out[i] = static_cast<float>(gin[i]);
  }
}

inline Tensor3 relu_maxpool(const Tensor3& pre, std::vector<std::uint32_t>& argmax) {
  const std::size_t h = pre.height() / 2;
  const std::size_t w = pre.width() / 2;
  const std::size_t c = pre.channels();
  Tensor3 out(h, w, c);
  argmax.assign(h * w * c, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        float best = -std::numeric_limits<float>::infinity();
        std::uint32_t best_idx = 0;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * y + dy) * pre.width() + (2 * x + dx)) * c + ch;
            const float v = pre.data()[idx];
            if (v > best) {
              best = v;
              best_idx = static_cast<std::uint32_t>(idx);
            }
          }
        }
        // max(relu(v)) == relu(max(v)); the gradient reaches only the winner.
        out.at(y, x, ch) = std::max(best, 0.0f);
        argmax[(y * w + x) * c + ch] = best_idx;
      }
    }
  }
  return out;
}

// Gradient w.r.t. the pre-activation given the gradient w.r.t. the pooled output.
inline Tensor3 relu_maxpool_backward(const Tensor3& pre, const std::vector<std::uint32_t>& argmax,
                                     const Tensor3& grad_pooled) {
  Tensor3 g(pre.height(), pre.width(), pre.channels());
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    const std::uint32_t src = argmax[i];
    if (pre.data()[src] > 0.0f) g.data()[src] += grad_pooled.data()[i];
  }
  return g;
}

}  // namespace detail

inline void check_image(const Architecture& arch, const Tensor3& image) {
  if (image.height() != arch.input_size || image.width() != arch.input_size ||
      image.channels() != arch.in_channels) {
    throw InvalidArgument("image shape " + image.shape_string() + " does not match architecture input (" +
                          std::to_string(arch.input_size) + "," + std::to_string(arch.input_size) + "," +
                          std::to_string(arch.in_channels) + ")");
  }
}

inline ForwardCache forward_cached(const Params& params, const Tensor3& image) {
  const auto& arch = params.arch;
  check_image(arch, image);
  ForwardCache cache;
  const std::size_t n = arch.stages.size();
  cache.inputs.reserve(n);
  cache.pre.reserve(n);
  cache.argmax.resize(n);
  cache.taps.reserve(n);
  Tensor3 centered;
  const Tensor3* x = &image;
  if (arch.center_input) {
    centered = image;
    for (float& v : centered.data()) v = 2.0f * v - 1.0f;
    x = &centered;
  }
  for (std::size_t i = 0; i < n; ++i) {
    cache.inputs.push_back(*x);
    cache.pre.push_back(detail::conv_forward(*x, params.kernels[i], params.biases[i], arch.stages[i].kernel));
    cache.taps.push_back(detail::relu_maxpool(cache.pre.back(), cache.argmax[i]));
    x = &cache.taps.back();
  }
  const std::size_t flat = arch.flat_dim();
  const auto& f = cache.taps.back().data();
  cache.logits.resize(arch.n_classes);
  for (std::size_t k = 0; k < arch.n_classes; ++k) {
    const float* wr = params.head_weight.data() + k * flat;
    double acc = params.head_bias[k];
    for (std::size_t j = 0; j < flat; ++j) acc += static_cast<double>(wr[j]) * f[j];
    cache.logits[k] = static_cast<float>(acc);
  }
  return cache;
}

inline ForwardResult forward(const Params& params, const Tensor3& image) {
  ForwardCache cache = forward_cached(params, image);
  return {std::move(cache.logits), std::move(cache.taps)};
}

inline std::vector<double> softmax(std::span<const float> logits) {
  const float mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(static_cast<double>(logits[i] - mx));
  for (auto& v : p) v /= sum;
  return p;
}

/// Reverse pass from d(objective)/d(logits). Fills tap gradients and/or
/// accumulates parameter gradients into `grads` when provided.
inline void backward(const Params& params, const ForwardCache& cache, std::span<const float> grad_logits,
                     std::vector<Tensor3>* tap_grads, Params* grads) {
  const auto& arch = params.arch;
  const std::size_t n = arch.stages.size();
  const std::size_t flat = arch.flat_dim();
  Tensor3 g(cache.taps.back().height(), cache.taps.back().width(), cache.taps.back().channels());
  for (std::size_t k = 0; k < arch.n_classes; ++k) {
    const float gk = grad_logits[k];
    if (gk == 0.0f) continue;
    const float* wr = params.head_weight.data() + k * flat;
    for (std::size_t j = 0; j < flat; ++j) g.data()[j] += gk * wr[j];
    if (grads) {
      grads->head_bias[k] += gk;
      float* gw = grads->head_weight.data() + k * flat;
      const auto& f = cache.taps.back().data();
      for (std::size_t j = 0; j < flat; ++j) gw[j] += gk * f[j];
    }
  }
  if (tap_grads) tap_grads->assign(n, Tensor3{});
  for (std::size_t i = n; i-- > 0;) {
    if (tap_grads) (*tap_grads)[i] = g;
    const bool need_input = i > 0;
    if (!need_input && !grads) break;
    const Tensor3 g_pre = detail::relu_maxpool_backward(cache.pre[i], cache.argmax[i], g);
    Tensor3 g_in;
    detail::conv_backward(cache.inputs[i], params.kernels[i], arch.stages[i].kernel, g_pre,
                          grads ? &grads->kernels[i] : nullptr, grads ? &grads->biases[i] : nullptr,
                          need_input ? &g_in : nullptr);
    if (need_input) g = std::move(g_in);
  }
}

/// d(logit_k)/d(tap) for every tap, ordered as Architecture::tap_names().
inline std::vector<Tensor3> backward_to_taps(const Params& params, const Tensor3& image, std::size_t class_k) {
  if (class_k >= params.arch.n_classes) {
    throw InvalidArgument("class index " + std::to_string(class_k) + " out of range");
  }
  const ForwardCache cache = forward_cached(params, image);
  std::vector<float> seed(params.arch.n_classes, 0.0f);
  seed[class_k] = 1.0f;
  std::vector<Tensor3> taps;
  backward(params, cache, seed, &taps, nullptr);
  return taps;
}

// ---------------------------------------------------------------------------
// Checkpoints: ECTF entries stage<i>.kernel (k*k, in, out), stage<i>.bias
// (1, 1, out), head.weight (classes, 1, flat), head.bias (1, 1, classes) and
// a JSON sidecar `<checkpoint>.json` holding the architecture.

inline std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".json");
}

inline void save_checkpoint(const Params& p, const std::filesystem::path& path) {
  std::vector<ectf::Entry> entries;
  for (std::size_t i = 0; i < p.kernels.size(); ++i) {
    const auto& st = p.arch.stages[i];
    const std::string prefix = "stage" + std::to_string(i + 1);
    entries.push_back({prefix + ".kernel",
                       Tensor3(st.kernel * st.kernel, p.arch.stage_in_channels(i), st.out_channels, p.kernels[i])});
    entries.push_back({prefix + ".bias", Tensor3(1, 1, st.out_channels, p.biases[i])});
  }
  entries.push_back({"head.weight", Tensor3(p.arch.n_classes, 1, p.arch.flat_dim(), p.head_weight)});
  entries.push_back({"head.bias", Tensor3(1, 1, p.arch.n_classes, p.head_bias)});
  ectf::write_file(path, entries);
  std::ofstream out(sidecar_path(path));
  if (!out) throw IoError("cannot write " + sidecar_path(path).string());
  out << p.arch.to_json().dump(2) << "\n";
}

inline Params load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw IoError("missing architecture sidecar " + sidecar_path(path).string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed architecture sidecar: " + std::string(e.what()));
  }
  Params p;
  p.arch = Architecture::from_json(j);
  const auto entries = ectf::read_file(path);
  auto take = [&](const std::string& name, std::size_t expected) {
    const Tensor3& t = ectf::find(entries, name);
    if (t.size() != expected) throw InvalidArgument("checkpoint entry " + name + " has wrong size");
    return t.data();
  };
  for (std::size_t i = 0; i < p.arch.stages.size(); ++i) {
    const auto& st = p.arch.stages[i];
    const std::string prefix = "stage" + std::to_string(i + 1);
    p.kernels.push_back(take(prefix + ".kernel", st.kernel * st.kernel * p.arch.stage_in_channels(i) * st.out_channels));
    p.biases.push_back(take(prefix + ".bias", st.out_channels));
  }
  p.head_weight = take("head.weight", p.arch.n_classes * p.arch.flat_dim());
  p.head_bias = take("head.bias", p.arch.n_classes);
  if (!p.all_finite()) throw InvalidArgument("checkpoint contains non-finite values");
  return p;
}

// ---------------------------------------------------------------------------
// Training

struct Hyper {
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 30;
  std::size_t batch = 24;
  std::uint64_t seed = 0;
  double val_fraction = 0.15;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Params params;
  std::vector<EpochMetrics> history;
  double initial_train_loss = 0.0;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
};

/// Per-class shuffled split; the first val_fraction of each class goes to validation.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    const std::vector<std::size_t>& labels, std::size_t n_classes, double val_fraction, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x73706c6974ULL));
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  for (std::size_t k = 0; k < n_classes; ++k) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == k) idx.push_back(i);
    }
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(idx.size())));
    val.insert(val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline Evaluation evaluate(const Params& params, const std::vector<Tensor3>& images,
                           const std::vector<std::size_t>& labels, const std::vector<std::size_t>& subset) {
  if (subset.empty()) return {};
  std::vector<double> loss(subset.size());
  std::vector<int> correct(subset.size());
  parallel_for(subset.size(), [&](std::size_t j) {
    const std::size_t i = subset[j];
    const auto fr = forward(params, images[i]);
    const auto p = softmax(fr.logits);
    loss[j] = -std::log(std::max(p[labels[i]], 1e-300));
    const auto pred = static_cast<std::size_t>(std::max_element(fr.logits.begin(), fr.logits.end()) - fr.logits.begin());
    correct[j] = pred == labels[i] ? 1 : 0;
  });
  const double n = static_cast<double>(subset.size());
  return {std::accumulate(loss.begin(), loss.end(), 0.0) / n,
          static_cast<double>(std::accumulate(correct.begin(), correct.end(), 0)) / n};
}

/// SGD with momentum on the mean negative log-likelihood.
inline TrainResult train(const Architecture& arch, const std::vector<Tensor3>& images,
                         const std::vector<std::size_t>& labels, const Hyper& hyper) {
  if (images.empty() || images.size() != labels.size()) throw InvalidArgument("train: empty or mismatched data");
  if (hyper.batch == 0) throw InvalidArgument("train: batch size must be positive");
  if (hyper.val_fraction < 0.0 || hyper.val_fraction >= 1.0) throw InvalidArgument("train: val_fraction in [0,1)");
  for (std::size_t l : labels) {
    if (l >= arch.n_classes) throw InvalidArgument("train: label out of range");
  }
  TrainResult result;
  result.params = init(arch, hyper.seed);
  std::tie(result.train_indices, result.val_indices) =
      split_indices(labels, arch.n_classes, hyper.val_fraction, hyper.seed);
  const auto& train_idx = result.train_indices;
  if (train_idx.empty()) throw InvalidArgument("train: empty training split");
  result.initial_train_loss = evaluate(result.params, images, labels, train_idx).loss;

  Params& params = result.params;
  Params velocity = params.zeros_like();
  Rng rng(mix_seed(hyper.seed, 0x7368756666ULL));
  std::vector<std::size_t> order = train_idx;

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t end = std::min(order.size(), start + hyper.batch);
      const std::size_t bsz = end - start;
      std::vector<Params> sample_grads(bsz);
      std::vector<double> sample_loss(bsz);
      std::vector<int> sample_correct(bsz);
      parallel_for(bsz, [&](std::size_t j) {
        const std::size_t i = order[start + j];
        const ForwardCache cache = forward_cached(params, images[i]);
        const auto p = softmax(cache.logits);
        sample_loss[j] = -std::log(std::max(p[labels[i]], 1e-300));
        const auto pred = static_cast<std::size_t>(
            std::max_element(cache.logits.begin(), cache.logits.end()) - cache.logits.begin());
        sample_correct[j] = pred == labels[i] ? 1 : 0;
        std::vector<float> gl(p.size());
        for (std::size_t k = 0; k < p.size(); ++k) {
          gl[k] = static_cast<float>((p[k] - (k == labels[i] ? 1.0 : 0.0)) / static_cast<double>(bsz));
        }
        sample_grads[j] = params.zeros_like();
        backward(params, cache, gl, nullptr, &sample_grads[j]);
      });
      Params& total = sample_grads[0];
      for (std::size_t j = 1; j < bsz; ++j) {
        total.zip(sample_grads[j], [](std::vector<float>& a, std::vector<float>& b) {
          for (std::size_t q = 0; q < a.size(); ++q) a[q] += b[q];
        });
      }
      const auto lr = static_cast<float>(hyper.lr);
      const auto mu = static_cast<float>(hyper.momentum);
      velocity.zip(total, [mu](std::vector<float>& v, std::vector<float>& g) {
        for (std::size_t q = 0; q < v.size(); ++q) v[q] = mu * v[q] + g[q];
      });
      params.zip(velocity, [lr](std::vector<float>& w, std::vector<float>& v) {
        for (std::size_t q = 0; q < w.size(); ++q) w[q] -= lr * v[q];
      });
      for (std::size_t j = 0; j < bsz; ++j) {
        loss_sum += sample_loss[j];
        correct += static_cast<std::size_t>(sample_correct[j]);
      }
      if (!std::isfinite(loss_sum) || !params.all_finite()) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1) + " (non-finite loss)");
      }
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    const auto val = evaluate(params, images, labels, result.val_indices);
    m.val_loss = val.loss;
    m.val_accuracy = val.accuracy;
    result.history.push_back(m);
  }
  return result;
}

struct LoadedImages {
  std::vector<Tensor3> images;
  std::vector<std::size_t> labels;
};

inline LoadedImages load_all(const Dataset& ds) {
  LoadedImages out;
  out.images.resize(ds.size());
  out.labels.resize(ds.size());
  parallel_for(ds.size(), [&](std::size_t i) { out.images[i] = ds.load_image(i); });
  for (std::size_t i = 0; i < ds.size(); ++i) out.labels[i] = ds.files()[i].label;
  return out;
}

inline TrainResult train(const Architecture& arch, const std::filesystem::path& dataset_dir, const Hyper& hyper) {
  const Dataset ds = Dataset::open(dataset_dir);
  if (ds.size() == 0) throw InvalidArgument("train: dataset is empty");
  Architecture a = arch;
  a.n_classes = ds.n_classes();
  if (a.input_size != ds.image_size()) a.input_size = ds.image_size();
  a.validate();
  const auto data = load_all(ds);
  return train(a, data.images, data.labels, hyper);
}

/// Fraction of dataset images whose argmax logit equals the label.
inline double accuracy(const Params& params, const std::filesystem::path& dataset_dir) {
  const Dataset ds = Dataset::open(dataset_dir);
  if (ds.size() == 0) throw InvalidArgument("accuracy: dataset is empty");
  const auto data = load_all(ds);
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  return evaluate(params, data.images, data.labels, all).accuracy;
}

}  // namespace eclad::net
