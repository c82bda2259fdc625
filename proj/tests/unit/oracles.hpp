#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance driver. Nothing here calls the code path it checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "eclad/eclad.hpp"
#include "eclad/micronet.hpp"

namespace oracles {

using eclad::Tensor3;
using eclad::net::Params;
using eclad::net::forward;
using eclad::net::backward_to_taps;

// Double-precision re-implementation of the layers after tap `from`:
// conv3 (zero pad, kernel [ky][kx][in][out]) -> ReLU -> 2x2 max-pool, then the dense head.
struct Oracle {
  const Params& p;

  std::vector<double> conv_relu_pool(const std::vector<double>& in, std::size_t n, std::size_t cin,
                                     std::size_t stage) const {
    const std::size_t cout = p.arch.stages[stage].out_channels;
    const std::size_t k = p.arch.stages[stage].kernel;
    const auto& w = p.kernels[stage];
    std::vector<double> pre(n * n * cout);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        for (std::size_t o = 0; o < cout; ++o) {
          double acc = p.biases[stage][o];
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long yy = static_cast<long>(y + ky) - static_cast<long>(k / 2);
              const long xx = static_cast<long>(x + kx) - static_cast<long>(k / 2);
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(n) || xx >= static_cast<long>(n)) continue;
              for (std::size_t i = 0; i < cin; ++i) {
                acc += w[((ky * k + kx) * cin + i) * cout + o] * in[(yy * n + xx) * cin + i];
              }
            }
          }
          pre[(y * n + x) * cout + o] = acc;
        }
      }
    }
    const std::size_t m = n / 2;
    std::vector<double> out(m * m * cout);
    for (std::size_t y = 0; y < m; ++y) {
      for (std::size_t x = 0; x < m; ++x) {
        for (std::size_t o = 0; o < cout; ++o) {
          double best = 0.0;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) best = std::max(best, pre[((2 * y + dy) * n + 2 * x + dx) * cout + o]);
          }
          out[(y * m + x) * cout + o] = best;
        }
      }
    }
    return out;
  }

  // logit_k as a function of tap `from` (the pooled output of stage `from`).
  double logit(std::vector<double> a, std::size_t from, std::size_t class_k) const {
    std::size_t n = p.arch.stage_size(from);
    for (std::size_t s = from + 1; s < p.arch.stages.size(); ++s) {
      a = conv_relu_pool(a, n, p.arch.stages[s - 1].out_channels, s);
      n /= 2;
    }
    const std::size_t flat = p.arch.flat_dim();
    double acc = p.head_bias[class_k];
    for (std::size_t j = 0; j < flat; ++j) acc += p.head_weight[class_k * flat + j] * a[j];
    return acc;
  }
};

struct FdCheck {
  double worst = 0.0;
  std::size_t nonzero = 0;
  bool shapes_ok = true;
};

/// Every tap gradient against central differences of the double-precision oracle.
inline FdCheck finite_difference_check(const Params& params, const Tensor3& image) {
  const Oracle oracle{params};
  const auto fr = forward(params, image);
  FdCheck res;
  for (std::size_t k = 0; k < params.arch.n_classes; ++k) {
    const auto grads = backward_to_taps(params, image, k);
    for (std::size_t l = 0; l < grads.size(); ++l) {
      res.shapes_ok = res.shapes_ok && grads[l].same_shape(fr.taps[l]);
      std::vector<double> a(fr.taps[l].data().begin(), fr.taps[l].data().end());
      for (std::size_t q = 0; q < a.size(); ++q) {
        const double keep = a[q];
        a[q] = keep + 1e-3;
        const double up = oracle.logit(a, l, k);
        a[q] = keep - 1e-3;
        const double down = oracle.logit(a, l, k);
        a[q] = keep;
        const double fd = (up - down) / 2e-3;
        const double g = grads[l].data()[q];
        res.nonzero += g != 0.0;
        const double scale = std::max({std::abs(fd), std::abs(g), 1e-6});
        res.worst = std::max(res.worst, std::abs(fd - g) / scale);
      }
    }
  }
  return res;
}

/// One Lloyd step (nearest center with lowest-index ties, then plain means)
/// from `centers`, over the rows of a flat matrix.
inline std::vector<std::vector<float>> lloyd_step(const std::vector<float>& flat, std::size_t dim,
                                                  std::vector<std::vector<double>> centers) {
  const std::size_t k = centers.size();
  const std::size_t n = flat.size() / dim;
  std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
  std::vector<double> counts(k, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t j = 0; j < k; ++j) {
      double d2 = 0;
      for (std::size_t q = 0; q < dim; ++q) {
        const double e = static_cast<double>(flat[p * dim + q]) - centers[j][q];
        d2 += e * e;
      }
      if (d2 < best_d) {
        best_d = d2;
        best = j;
      }
    }
    counts[best] += 1;
    for (std::size_t q = 0; q < dim; ++q) sums[best][q] += flat[p * dim + q];
  }
  std::vector<std::vector<float>> out(k, std::vector<float>(dim));
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t q = 0; q < dim; ++q) {
      out[j][q] = static_cast<float>(counts[j] > 0 ? sums[j][q] / counts[j] : centers[j][q]);
    }
  }
  return out;
}

/// Two images, two classes, two concepts on a 4x4 frame with c* = 3.
struct Toy {
  std::vector<Tensor3> d;                       // per image
  std::vector<std::vector<Tensor3>> g;          // per image, per class
  std::vector<std::vector<eclad::Mask2>> masks; // per image, per concept
  std::vector<std::size_t> label{0, 1};
};

inline Toy make_toy(float grad_scale) {
  Toy t;
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor3 d(4, 4, 3);
    for (std::size_t p = 0; p < 16; ++p) {
      for (std::size_t q = 0; q < 3; ++q) d.at(p / 4, p % 4, q) = static_cast<float>((p + 2 * q + 3 * i) % 5) - 1.0f;
    }
    t.d.push_back(d);
    std::vector<Tensor3> gs;
    for (std::size_t k = 0; k < 2; ++k) {
      Tensor3 g(4, 4, 3);
      for (std::size_t p = 0; p < 16; ++p) {
        for (std::size_t q = 0; q < 3; ++q) {
          g.at(p / 4, p % 4, q) = grad_scale * (static_cast<float>((3 * p + q + k + i) % 4) - 1.5f);
        }
      }
      gs.push_back(g);
    }
    t.g.push_back(gs);
    eclad::Mask2 m0(4, 4);
    for (std::size_t p = 0; p < 16; ++p) m0.set(p, i == 0 ? p < 6 : (p % 3 == 0));
    eclad::Mask2 m1(4, 4);
    for (std::size_t p = 0; p < 16; ++p) m1.set(p, !m0[p]);
    t.masks.push_back({m0, m1});
  }
  return t;
}

/// The toy through the library's scoring path.
inline eclad::ImportanceReport score_toy(const Toy& t) {
  std::vector<eclad::ScoredImage> imgs;
  for (std::size_t i = 0; i < 2; ++i) {
    eclad::ScoredImage s;
    s.label = t.label[i];
    s.concept_of_pixel.resize(16);
    for (std::size_t p = 0; p < 16; ++p) s.concept_of_pixel[p] = t.masks[i][0][p] ? 0 : 1;
    for (std::size_t k = 0; k < 2; ++k) s.sensitivity.push_back(eclad::pixel_sensitivity(t.d[i], t.g[i][k]));
    imgs.push_back(std::move(s));
  }
  return eclad::score_concepts(imgs, 2, 2);
}

struct Enumerated {
  double cs[2][2];
  double ri[2];
  std::size_t k_of[2];
};

/// Contrastive sensitivity and relative importance by direct enumeration over pixels.
inline Enumerated enumerate_toy(const Toy& t) {
  Enumerated e{};
  double max_abs = 0;
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t k = 0; k < 2; ++k) {
      double in = 0, out = 0;
      int nin = 0, nout = 0;
      for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t p = 0; p < 16; ++p) {
          if (!t.masks[i][j][p]) continue;
          double s = 0;
          for (std::size_t q = 0; q < 3; ++q) {
            s += static_cast<double>(t.d[i].at(p / 4, p % 4, q)) * t.g[i][k].at(p / 4, p % 4, q);
          }
          if (t.label[i] == k) {
            in += s;
            ++nin;
          } else {
            out += s;
            ++nout;
          }
        }
      }
      e.cs[j][k] = (nin ? in / nin : 0.0) - (nout ? out / nout : 0.0);
      max_abs = std::max(max_abs, std::abs(e.cs[j][k]));
    }
  }
  for (std::size_t j = 0; j < 2; ++j) {
    e.k_of[j] = std::abs(e.cs[j][1]) > std::abs(e.cs[j][0]) ? 1 : 0;
    e.ri[j] = e.cs[j][e.k_of[j]] / max_abs;
  }
  return e;
}

}  // namespace oracles
