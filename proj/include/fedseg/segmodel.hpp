#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fedseg/labelmap.hpp"
#include "fedseg/ops.hpp"
#include "fedseg/optim.hpp"
#include "fedseg/rng.hpp"
#include "fedseg/tensor.hpp"

namespace fedseg {

struct SegModelConfig {
  int num_classes = 8;       // C, real classes; class head emits C+1 (background last)
  int num_queries = 8;       // Q
  int feature_channels = 16; // C_f
  int backbone_depth = 2;    // stride-2 conv blocks
  int embed_dim = 16;        // d
  int height = 32;
  int width = 32;

  int feat_h() const { return height >> backbone_depth; }
  int feat_w() const { return width >> backbone_depth; }

  void validate() const {
    if (num_classes < 2) throw ContractError("SegModelConfig: need at least 2 classes");
    if (num_queries < 1) throw ContractError("SegModelConfig: need at least 1 query");
    int div = 1 << backbone_depth;
    if (backbone_depth < 1 || height % div != 0 || width % div != 0)
      throw ContractError("SegModelConfig: input size not divisible by 2^backbone_depth");
    if (feature_channels < 1 || embed_dim < 1)
      throw ContractError("SegModelConfig: channel/embedding dims must be positive");
  }

  bool operator==(const SegModelConfig&) const = default;
};

// Class + mask logits for one image: cls (Q, C+1), mask (Q, H', W').
struct LogitPair {
  Tensor cls;
  Tensor mask;
};

// Miniature query-based segmentation model. The decomposition mirrors a
// Mask2Former head: a strided conv backbone, a 1x1 pixel decoder producing
// per-pixel embeddings, and a single cross-attention block in which learned
// queries attend to flattened backbone features. Mask logits are inner
// products of query and pixel embeddings.
struct SegModel {
  SegModelConfig config;
  std::vector<Tensor> conv_w;  // [depth], (C_f, Cin, 3, 3)
  std::vector<Tensor> conv_b;  // [depth], (C_f)
  Tensor pixel_w;              // (d, C_f)
  Tensor pixel_b;              // (d)
  Tensor attn_wq;              // (d, d)
  Tensor attn_wk;              // (d, C_f)
  Tensor attn_wv;              // (d, C_f)
  Tensor cls_w;                // (C+1, d)
  Tensor cls_b;                // (C+1)
  Tensor queries;              // (Q, d)

  NamedParams named_params() const {
    NamedParams out;
    for (size_t i = 0; i < conv_w.size(); ++i) {
      out.emplace_back("backbone.conv" + std::to_string(i) + ".weight", conv_w[i]);
      out.emplace_back("backbone.conv" + std::to_string(i) + ".bias", conv_b[i]);
    }
    out.emplace_back("pixel.weight", pixel_w);
    out.emplace_back("pixel.bias", pixel_b);
    out.emplace_back("attn.wq", attn_wq);
    out.emplace_back("attn.wk", attn_wk);
    out.emplace_back("attn.wv", attn_wv);
    out.emplace_back("cls.weight", cls_w);
    out.emplace_back("cls.bias", cls_b);
    out.emplace_back("queries", queries);
    return out;
  }

  void set_requires_grad(bool b) {
    for (auto& [name, p] : named_params()) {
      (void)name;
      p.set_requires_grad(b);
    }
  }
};

namespace detail {

inline Tensor uniform_fan_in(Shape shape, int fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace detail

// Deterministic seeded initialization: scaled-uniform fan-in weights, zero
// biases, unit-normal queries scaled by 1/sqrt(d).
inline SegModel init_model(const SegModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "segmodel.init"));
  SegModel m;
  m.config = cfg;
  int cf = cfg.feature_channels, d = cfg.embed_dim, cp1 = cfg.num_classes + 1;
  for (int i = 0; i < cfg.backbone_depth; ++i) {
    int cin = i == 0 ? 3 : cf;
    m.conv_w.push_back(detail::uniform_fan_in({cf, cin, 3, 3}, cin * 9, rng));
    m.conv_b.push_back(Tensor::zeros({cf}));
  }
  m.pixel_w = detail::uniform_fan_in({d, cf}, cf, rng);
  m.pixel_b = Tensor::zeros({d});
  m.attn_wq = detail::uniform_fan_in({d, d}, d, rng);
  m.attn_wk = detail::uniform_fan_in({d, cf}, cf, rng);
  m.attn_wv = detail::uniform_fan_in({d, cf}, cf, rng);
  m.cls_w = detail::uniform_fan_in({cp1, d}, d, rng);
  m.cls_b = Tensor::zeros({cp1});
  {
    double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> q(static_cast<size_t>(cfg.num_queries) * d);
    for (double& x : q) x = rng.normal() * scale;
    m.queries = Tensor::from({cfg.num_queries, d}, std::move(q));
  }
  m.set_requires_grad(true);
  return m;
}

// image (3,H,W) -> features (C_f,H',W'), differentiable.
inline Tensor backbone_forward(const SegModel& m, const Tensor& image) {
  const auto& cfg = m.config;
  if (image.shape() != Shape{3, cfg.height, cfg.width})
    throw ShapeError("backbone_forward: image shape " + shape_str(image.shape()) +
                     " does not match config");
  Tensor x = reshape(image, {1, 3, cfg.height, cfg.width});
  for (int i = 0; i < cfg.backbone_depth; ++i) {
    x = relu(conv2d_3x3_same(x, m.conv_w[i], m.conv_b[i], 2));
  }
  return reshape(x, {cfg.feature_channels, cfg.feat_h(), cfg.feat_w()});
}

// features (C_f,H',W') -> logits. Accepts features from any backbone with
// matching channel count (feature fusion decodes foreign features).
inline LogitPair decode(const SegModel& m, const Tensor& features) {
  const auto& cfg = m.config;
  int hp = cfg.feat_h(), wp = cfg.feat_w(), p = hp * wp, d = cfg.embed_dim;
  if (features.shape() != Shape{cfg.feature_channels, hp, wp})
    throw ShapeError("decode: feature shape " + shape_str(features.shape()) +
                     " does not match config");
  Tensor fm = reshape(features, {cfg.feature_channels, p});

  // pixel decoder: per-pixel embeddings
  Tensor embed = add(matmul(m.pixel_w, fm), broadcast_to(reshape(m.pixel_b, {d, 1}), {d, p}));

  // cross-attention: queries attend to flattened backbone features
  Tensor keys = matmul(m.attn_wk, fm);    // (d, P)
  Tensor vals = matmul(m.attn_wv, fm);    // (d, P)
  Tensor qproj = matmul(m.queries, m.attn_wq);  // (Q, d)
  Tensor scores = scalar_mul(matmul(qproj, keys), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor attn = softmax_axis(scores, 1);  // (Q, P)
  Tensor q_out = add(m.queries, matmul(attn, transpose2(vals)));  // (Q, d)

  LogitPair out;
  int cp1 = cfg.num_classes + 1;
  out.cls = add(matmul(q_out, transpose2(m.cls_w)),
                broadcast_to(reshape(m.cls_b, {1, cp1}), {cfg.num_queries, cp1}));
  out.mask = reshape(matmul(q_out, embed), {cfg.num_queries, hp, wp});
  return out;
}

inline LogitPair model_forward(const SegModel& m, const Tensor& image) {
  return decode(m, backbone_forward(m, image));
}

// score(c, p) = sum_q softmax(cls_q)[c] * sigmoid(mask_q[p]) over real
// classes; per-pixel argmax (ties toward the smaller id), nearest-neighbor
// upsampled to out_size. The background column never appears in the output.
inline LabelMap semantic_inference(const LogitPair& logits, int out_h, int out_w) {
  const Shape& cs = logits.cls.shape();
  const Shape& ms = logits.mask.shape();
  if (cs.size() != 2 || ms.size() != 3 || cs[0] != ms[0])
    throw ShapeError("semantic_inference: malformed LogitPair");
  int q = cs[0], cp1 = cs[1], c = cp1 - 1;
  int hp = ms[1], wp = ms[2], p = hp * wp;

  const auto& clsv = logits.cls.values();
  const auto& maskv = logits.mask.values();

  // softmax over all C+1 columns per query
  std::vector<double> probs(static_cast<size_t>(q) * cp1);
  for (int i = 0; i < q; ++i) {
    double mx = -1e300;
    for (int j = 0; j < cp1; ++j) mx = std::max(mx, clsv[i * cp1 + j]);
    double sum = 0.0;
    for (int j = 0; j < cp1; ++j) {
      probs[i * cp1 + j] = std::exp(clsv[i * cp1 + j] - mx);
      sum += probs[i * cp1 + j];
    }
    for (int j = 0; j < cp1; ++j) probs[i * cp1 + j] /= sum;
  }

  // per-pixel class scores at feature resolution
  std::vector<double> score(static_cast<size_t>(c) * p, 0.0);
  for (int i = 0; i < q; ++i) {
    for (int pix = 0; pix < p; ++pix) {
      double mlogit = maskv[i * p + pix];
      double mprob = mlogit >= 0.0 ? 1.0 / (1.0 + std::exp(-mlogit))
                                   : std::exp(mlogit) / (1.0 + std::exp(mlogit));
      if (mprob == 0.0) continue;
      for (int cls = 0; cls < c; ++cls)
        score[static_cast<size_t>(cls) * p + pix] += probs[i * cp1 + cls] * mprob;
    }
  }

  LabelMap low(hp, wp);
  for (int pix = 0; pix < p; ++pix) {
    int best = 0;
    double best_score = score[pix];
    for (int cls = 1; cls < c; ++cls) {
      double s = score[static_cast<size_t>(cls) * p + pix];
      if (s > best_score) {  // strict: ties keep the smaller id
        best_score = s;
        best = cls;
      }
    }
    low.ids[pix] = static_cast<uint8_t>(best);
  }

  if (out_h == hp && out_w == wp) return low;
  LabelMap up(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    int sy = static_cast<int>((static_cast<int64_t>(y) * hp) / out_h);
    for (int x = 0; x < out_w; ++x) {
      int sx = static_cast<int>((static_cast<int64_t>(x) * wp) / out_w);
      up.at(y, x) = low.at(sy, sx);
    }
  }
  return up;
}

// Full inference path: image -> label map at input resolution.
inline LabelMap predict(const SegModel& m, const Tensor& image) {
  NoGradScope ng;
  LogitPair lp = model_forward(m, image);
  return semantic_inference(lp, m.config.height, m.config.width);
}

}  // namespace fedseg
