#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "fedseg/labelmap.hpp"
#include "fedseg/rng.hpp"
#include "fedseg/tensor.hpp"

namespace fedseg {

struct Photometric {
  std::array<double, 3> offset{0.0, 0.0, 0.0};  // per-channel shift
  double contrast = 1.0;
};

struct ClassStyle {
  std::array<double, 3> color{0.5, 0.5, 0.5};  // mean color in [0,1]
  double noise_sigma = 0.03;
};

// Generator parameters for one synthetic domain. The first
// `background_classes` ids render as horizontal stripes (always present);
// the remaining ids are dynamic object classes sampled as blobs with
// probability proportional to class_pi.
struct DomainSpec {
  std::string domain_id;
  int num_classes = 8;
  int background_classes = 3;
  int height = 32;
  int width = 32;
  std::vector<ClassStyle> palette;   // size num_classes
  std::vector<double> class_pi;      // size num_classes, >= 0, sums to 1
  double horizon_min = 0.10;         // clamp on the top stripe's height fraction
  double horizon_max = 0.60;
  int min_blobs = 4;
  int max_blobs = 9;
  double blob_min_frac = 0.015;      // blob area as fraction of the image
  double blob_max_frac = 0.060;
  Photometric shift;
  bool is_target = false;

  void validate() const {
    if (num_classes < 2 || background_classes < 1 || background_classes >= num_classes)
      throw ContractError("DomainSpec: bad class partition for " + domain_id);
    if (static_cast<int>(palette.size()) != num_classes)
      throw ContractError("DomainSpec: palette size mismatch for " + domain_id);
    if (static_cast<int>(class_pi.size()) != num_classes)
      throw ContractError("DomainSpec: class_pi size mismatch for " + domain_id);
    double sum = 0.0;
    for (double p : class_pi) {
      if (p < 0.0) throw ContractError("DomainSpec: negative class prior in " + domain_id);
      sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-6)
      throw ContractError("DomainSpec: class priors must sum to 1 in " + domain_id);
    if (height < 4 || width < 4) throw ContractError("DomainSpec: image too small");
    if (horizon_min <= 0.0 || horizon_max >= 1.0 || horizon_min > horizon_max)
      throw ContractError("DomainSpec: bad horizon range");
    if (min_blobs < 0 || max_blobs < min_blobs) throw ContractError("DomainSpec: bad blob counts");
  }
};

struct Scene {
  Tensor image;                    // (3,H,W), values in [0,1]
  std::optional<LabelMap> labels;  // absent for unlabeled datasets
};

struct DomainDataset {
  std::string domain_id;
  int num_classes = 0;
  int height = 0;
  int width = 0;
  bool labeled = true;
  std::vector<Scene> scenes;
};

namespace detail {

inline void paint_ellipse(LabelMap& labels, double cy, double cx, double ry, double rx,
                          uint8_t cls) {
  int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
  int y1 = std::min(labels.height - 1, static_cast<int>(std::ceil(cy + ry)));
  int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
  int x1 = std::min(labels.width - 1, static_cast<int>(std::ceil(cx + rx)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double dy = (y + 0.5 - cy) / ry;
      double dx = (x + 0.5 - cx) / rx;
      if (dy * dy + dx * dx <= 1.0) labels.at(y, x) = cls;
    }
}

// Stripe layout + blob sampling; returns the label map and the horizon row.
inline LabelMap scene_layout(const DomainSpec& spec, Rng& rng, int* horizon_row_out) {
  int h = spec.height, w = spec.width, bg = spec.background_classes;

  // Stripe heights follow the background priors (with a floor so every
  // stripe class stays present), jittered per scene.
  std::vector<double> weight(bg);
  for (int i = 0; i < bg; ++i)
    weight[i] = std::max(spec.class_pi[i], 0.02) * rng.uniform(0.8, 1.2);
  double wsum = 0.0;
  for (double v : weight) wsum += v;
  std::vector<double> frac(bg);
  for (int i = 0; i < bg; ++i) frac[i] = weight[i] / wsum;
  frac[0] = std::clamp(frac[0], spec.horizon_min, spec.horizon_max);
  if (bg > 1) {
    double rest = 0.0;
    for (int i = 1; i < bg; ++i) rest += frac[i];
    double scale = rest > 0.0 ? (1.0 - frac[0]) / rest : 0.0;
    for (int i = 1; i < bg; ++i) frac[i] *= scale;
  }

  LabelMap labels(h, w, 0);
  int row = 0;
  int horizon_row = h;
  for (int i = 0; i < bg; ++i) {
    int rows = i == bg - 1 ? h - row : static_cast<int>(std::round(frac[i] * h));
    rows = std::clamp(rows, 0, h - row);
    for (int y = row; y < row + rows; ++y)
      for (int x = 0; x < w; ++x) labels.at(y, x) = static_cast<uint8_t>(i);
    row += rows;
    if (i == 0) horizon_row = row;
  }

  // Dynamic blobs, classes drawn from the dynamic prior.
  std::vector<double> dyn_pi(spec.class_pi.begin() + bg, spec.class_pi.end());
  double dyn_sum = 0.0;
  for (double v : dyn_pi) dyn_sum += v;
  if (dyn_sum > 0.0) {
    int blobs = rng.uniform_int(spec.min_blobs, spec.max_blobs);
    for (int bidx = 0; bidx < blobs; ++bidx) {
      int cls = bg + rng.categorical(dyn_pi);
      double area = rng.uniform(spec.blob_min_frac, spec.blob_max_frac) * h * w;
      double aspect = rng.uniform(0.6, 1.6);
      double ry = std::sqrt(area / (3.14159265358979323846 * aspect));
      double rx = aspect * ry;
      double cy = rng.uniform(static_cast<double>(horizon_row), static_cast<double>(h));
      double cx = rng.uniform(0.0, static_cast<double>(w));
      paint_ellipse(labels, cy, cx, std::max(1.0, ry), std::max(1.0, rx),
                    static_cast<uint8_t>(cls));
    }
  }
  if (horizon_row_out) *horizon_row_out = horizon_row;
  return labels;
}

// Colors every pixel from its class style, then applies the domain's
// photometric shift.
inline Tensor render_colors(const DomainSpec& spec, const LabelMap& labels, Rng& rng) {
  int h = spec.height, w = spec.width;
  std::vector<double> img(static_cast<size_t>(3) * h * w);
  for (int y = 0; y < h; ++y) {
    double shade = 0.06 * (static_cast<double>(y) / h - 0.5);
    for (int x = 0; x < w; ++x) {
      const ClassStyle& style = spec.palette[labels.at(y, x)];
      for (int ch = 0; ch < 3; ++ch) {
        double v = style.color[ch] + rng.normal() * style.noise_sigma + shade;
        v = (v - 0.5) * spec.shift.contrast + 0.5 + spec.shift.offset[ch];
        img[(static_cast<size_t>(ch) * h + y) * w + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return Tensor::from({3, h, w}, std::move(img));
}

}  // namespace detail

// Generates n scenes, a pure function of (spec, n, seed). Scene i uses an
// RNG stream derived from (seed, i), so generation may be parallelized per
// scene without changing the result.
inline DomainDataset make_domain(const DomainSpec& spec, int n, uint64_t seed,
                                 bool labeled = true) {
  spec.validate();
  if (n < 1) throw ContractError("make_domain: need at least one scene");
  DomainDataset ds;
  ds.domain_id = spec.domain_id;
  ds.num_classes = spec.num_classes;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.labeled = labeled;
  ds.scenes.reserve(n);
  uint64_t base = derive_seed(seed, "scenegen:" + spec.domain_id);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(base, static_cast<uint64_t>(i)));
    LabelMap labels = detail::scene_layout(spec, rng, nullptr);
    Scene s;
    s.image = detail::render_colors(spec, labels, rng);
    if (labeled) s.labels = std::move(labels);
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

// Unlabeled images with class `cls` rendered prominently (>= 20% of pixels).
// The generating layout is kept as hidden ground truth for diagnostics; it
// must never feed distillation.
struct AugmentBatch {
  std::vector<Tensor> images;
  std::vector<LabelMap> hidden_gt;
};

inline AugmentBatch augment_for_class(int cls, int count, const DomainSpec& spec, uint64_t seed) {
  spec.validate();
  if (cls < 0 || cls >= spec.num_classes)
    throw ContractError("augment_for_class: class id out of range");
  AugmentBatch batch;
  if (count <= 0) return batch;
  int h = spec.height, w = spec.width;
  size_t want = static_cast<size_t>(0.2 * h * w) + 1;
  uint64_t base = derive_seed(seed, "augment:" + spec.domain_id + ":" + std::to_string(cls));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(base, static_cast<uint64_t>(i)));
    int horizon = 0;
    LabelMap labels = detail::scene_layout(spec, rng, &horizon);
    auto count_cls = [&] {
      size_t c = 0;
      for (uint8_t id : labels.ids) c += (id == cls);
      return c;
    };
    int placed = 0;
    while (count_cls() < want && placed < 64) {
      double area = rng.uniform(0.08, 0.18) * h * w;
      double aspect = rng.uniform(0.7, 1.4);
      double ry = std::sqrt(area / (3.14159265358979323846 * aspect));
      double rx = aspect * ry;
      double cy = rng.uniform(static_cast<double>(horizon), static_cast<double>(h));
      double cx = rng.uniform(0.0, static_cast<double>(w));
      detail::paint_ellipse(labels, cy, cx, std::max(1.5, ry), std::max(1.5, rx),
                            static_cast<uint8_t>(cls));
      ++placed;
    }
    batch.images.push_back(detail::render_colors(spec, labels, rng));
    batch.hidden_gt.push_back(std::move(labels));
  }
  return batch;
}

}  // namespace fedseg
