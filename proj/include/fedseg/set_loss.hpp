#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "fedseg/hungarian.hpp"
#include "fedseg/labelmap.hpp"
#include "fedseg/ops.hpp"
#include "fedseg/segmodel.hpp"

namespace fedseg {

struct TrainConfig {
  int iterations = 400;
  int batch_size = 2;
  double lr = 1e-4;
  double w_cls = 2.0;
  double w_bce = 5.0;
  double w_dice = 5.0;
  double no_object_weight = 0.1;

  void validate() const {
    if (iterations < 0 || batch_size < 1) throw ContractError("TrainConfig: bad schedule");
    if (lr <= 0.0) throw ContractError("TrainConfig: lr must be positive");
    if (w_cls < 0 || w_bce < 0 || w_dice < 0 || no_object_weight < 0)
      throw ContractError("TrainConfig: weights must be non-negative");
  }
};

// One binary mask per class present in the (downsampled) ground truth.
// Masks are disjoint; cells whose source block is all-ignore belong to none.
struct GTSegments {
  std::vector<int> class_ids;
  std::vector<Tensor> masks;  // each (H',W'), values in {0,1}

  size_t count() const { return class_ids.size(); }
};

// Majority-vote downsampling of a label map to H'xW'. Ignore pixels are
// excluded from the vote; ties go to the smaller class id.
inline GTSegments extract_segments(const LabelMap& gt, int num_classes, int hp, int wp) {
  if (gt.height % hp != 0 || gt.width % wp != 0)
    throw ShapeError("extract_segments: label map not divisible by target grid");
  int fy = gt.height / hp, fx = gt.width / wp;

  std::vector<uint8_t> down(static_cast<size_t>(hp) * wp, LabelMap::kIgnore);
  std::vector<int> votes(num_classes);
  for (int cy = 0; cy < hp; ++cy)
    for (int cx = 0; cx < wp; ++cx) {
      std::fill(votes.begin(), votes.end(), 0);
      for (int y = cy * fy; y < (cy + 1) * fy; ++y)
        for (int x = cx * fx; x < (cx + 1) * fx; ++x) {
          uint8_t id = gt.at(y, x);
          if (id == LabelMap::kIgnore) continue;
          if (id >= num_classes) throw ContractError("extract_segments: label id out of range");
          ++votes[id];
        }
      int best = -1, best_votes = 0;
      for (int c = 0; c < num_classes; ++c)
        if (votes[c] > best_votes) {
          best_votes = votes[c];
          best = c;
        }
      if (best >= 0) down[static_cast<size_t>(cy) * wp + cx] = static_cast<uint8_t>(best);
    }

  GTSegments segs;
  for (int c = 0; c < num_classes; ++c) {
    bool present = false;
    for (uint8_t id : down) present |= (id == c);
    if (!present) continue;
    std::vector<double> mask(down.size(), 0.0);
    for (size_t i = 0; i < down.size(); ++i) mask[i] = down[i] == c ? 1.0 : 0.0;
    segs.class_ids.push_back(c);
    segs.masks.push_back(Tensor::from({hp, wp}, std::move(mask)));
  }
  return segs;
}

namespace detail {

// (log sigmoid(x), log(1 - sigmoid(x))) elementwise, stable for all logits:
// log-softmax over the pair [x, 0].
inline std::pair<Tensor, Tensor> log_sigmoid_pair(const Tensor& x) {
  int n = static_cast<int>(x.size());
  Tensor col = reshape(x, {n, 1});
  Tensor z = concat_axis({col, Tensor::zeros({n, 1})}, 1);
  Tensor ls = log_softmax_axis(z, 1);
  std::vector<double> m0(static_cast<size_t>(n) * 2, 0.0), m1(static_cast<size_t>(n) * 2, 0.0);
  for (int i = 0; i < n; ++i) {
    m0[2 * i] = 1.0;
    m1[2 * i + 1] = 1.0;
  }
  Tensor sel0 = Tensor::from({n, 2}, std::move(m0));
  Tensor sel1 = Tensor::from({n, 2}, std::move(m1));
  Tensor log_s = reshape(sum_axis(mul(ls, sel0), 1), x.shape());
  Tensor log_1ms = reshape(sum_axis(mul(ls, sel1), 1), x.shape());
  return {log_s, log_1ms};
}

// Soft binary cross-entropy, mean over all entries; targets are constants.
inline Tensor soft_bce(const Tensor& logits, const Tensor& targets) {
  auto [log_s, log_1ms] = log_sigmoid_pair(logits);
  Tensor ones = Tensor::full(targets.shape(), 1.0);
  Tensor term = add(mul(targets, log_s), mul(sub(ones, targets), log_1ms));
  return scalar_mul(mean_all(term), -1.0);
}

inline constexpr double kDiceSmooth = 1.0;

// Squared-denominator soft Dice, averaged over rows of (n, P) inputs.
inline Tensor soft_dice(const Tensor& probs, const Tensor& targets) {
  int n = probs.shape()[0];
  Tensor ts = sum_axis(mul(targets, probs), 1);
  Tensor ss = sum_axis(mul(probs, probs), 1);
  Tensor tt = sum_axis(mul(targets, targets), 1);
  Tensor eps = Tensor::full({n}, kDiceSmooth);
  Tensor num = add(scalar_mul(ts, 2.0), eps);
  Tensor den = add(add(tt, ss), eps);
  // a/b for positive a, b
  Tensor ratio = exp(sub(log(num), log(den)));
  return mean_axis(sub(Tensor::full({n}, 1.0), ratio), 0);
}

inline double value_log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

}  // namespace detail

struct SetLossParts {
  Tensor total;  // w_cls*cls + w_bce*bce + w_dice*dice
  Tensor cls;
  Tensor bce;
  Tensor dice;
  std::vector<std::pair<int, int>> assignment;  // (query, segment)
};

// Hungarian-matched set prediction loss. The match cost per (query, segment)
// pair is w_cls*(-softmax prob of the segment class) + w_bce*BCE + w_dice*Dice
// on mask logits; the loss combines matched cross-entropy, matched BCE+Dice,
// and a background cross-entropy for unmatched queries weighted by
// no_object_weight (weighted-mean normalization).
inline SetLossParts set_loss(const LogitPair& pred, const GTSegments& gt, const TrainConfig& cfg) {
  cfg.validate();
  int q = pred.cls.shape()[0];
  int cp1 = pred.cls.shape()[1];
  int background = cp1 - 1;
  int hp = pred.mask.shape()[1], wp = pred.mask.shape()[2];
  int p = hp * wp;
  int s = static_cast<int>(gt.count());

  std::vector<std::pair<int, int>> assignment;
  if (s > 0) {
    NoGradScope ng;
    // softmax probabilities per query (values only)
    std::vector<double> probs(static_cast<size_t>(q) * cp1);
    for (int i = 0; i < q; ++i) {
      double mx = -1e300;
      for (int j = 0; j < cp1; ++j) mx = std::max(mx, pred.cls.values()[i * cp1 + j]);
      double sum = 0.0;
      for (int j = 0; j < cp1; ++j) {
        probs[i * cp1 + j] = std::exp(pred.cls.values()[i * cp1 + j] - mx);
        sum += probs[i * cp1 + j];
      }
      for (int j = 0; j < cp1; ++j) probs[i * cp1 + j] /= sum;
    }

    std::vector<double> cost(static_cast<size_t>(q) * s);
    for (int i = 0; i < q; ++i) {
      for (int k = 0; k < s; ++k) {
        const auto& tmask = gt.masks[k].values();
        double bce = 0.0, ts = 0.0, ss = 0.0, tt = 0.0;
        for (int pix = 0; pix < p; ++pix) {
          double x = pred.mask.values()[i * p + pix];
          double t = tmask[pix];
          double log_s = detail::value_log_sigmoid(x);
          double log_1ms = detail::value_log_sigmoid(-x);
          bce -= t * log_s + (1.0 - t) * log_1ms;
          double sv = 1.0 / (1.0 + std::exp(-x));
          ts += t * sv;
          ss += sv * sv;
          tt += t;
        }
        bce /= p;
        double dice =
            1.0 - (2.0 * ts + detail::kDiceSmooth) / (tt + ss + detail::kDiceSmooth);
        double cls_cost = -probs[i * cp1 + gt.class_ids[k]];
        cost[static_cast<size_t>(i) * s + k] =
            cfg.w_cls * cls_cost + cfg.w_bce * bce + cfg.w_dice * dice;
      }
    }
    assignment = hungarian_match(Tensor::from({q, s}, std::move(cost)));
  }

  // classification: weighted cross-entropy toward matched class / background
  std::vector<int> target(q, background);
  std::vector<double> weight(q, cfg.no_object_weight);
  for (auto [qi, si] : assignment) {
    target[qi] = gt.class_ids[si];
    weight[qi] = 1.0;
  }
  double wsum = 0.0;
  std::vector<double> sel(static_cast<size_t>(q) * cp1, 0.0);
  for (int i = 0; i < q; ++i) {
    sel[static_cast<size_t>(i) * cp1 + target[i]] = weight[i];
    wsum += weight[i];
  }
  Tensor cls_term = Tensor::scalar(0.0);
  if (wsum > 0.0) {
    Tensor log_probs = log_softmax_axis(pred.cls, 1);
    cls_term =
        scalar_mul(sum_all(mul(Tensor::from({q, cp1}, std::move(sel)), log_probs)), -1.0 / wsum);
  }

  Tensor bce_term = Tensor::scalar(0.0);
  Tensor dice_term = Tensor::scalar(0.0);
  if (!assignment.empty()) {
    int n = static_cast<int>(assignment.size());
    std::vector<double> selm(static_cast<size_t>(n) * q, 0.0);
    std::vector<double> tgt(static_cast<size_t>(n) * p, 0.0);
    for (int r = 0; r < n; ++r) {
      selm[static_cast<size_t>(r) * q + assignment[r].first] = 1.0;
      const auto& tm = gt.masks[assignment[r].second].values();
      std::copy(tm.begin(), tm.end(), tgt.begin() + static_cast<size_t>(r) * p);
    }
    Tensor selector = Tensor::from({n, q}, std::move(selm));
    Tensor matched_logits = matmul(selector, reshape(pred.mask, {q, p}));
    Tensor targets = Tensor::from({n, p}, std::move(tgt));
    bce_term = detail::soft_bce(matched_logits, targets);
    dice_term = detail::soft_dice(sigmoid(matched_logits), targets);
  }

  SetLossParts parts;
  parts.cls = cls_term;
  parts.bce = bce_term;
  parts.dice = dice_term;
  parts.total = add(scalar_mul(cls_term, cfg.w_cls),
                    add(scalar_mul(bce_term, cfg.w_bce), scalar_mul(dice_term, cfg.w_dice)));
  parts.assignment = std::move(assignment);
  return parts;
}

}  // namespace fedseg
