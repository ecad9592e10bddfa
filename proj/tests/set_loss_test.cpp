#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fedseg/gradcheck.hpp"
#include "fedseg/rng.hpp"
#include "fedseg/set_loss.hpp"

namespace fedseg {
namespace {

TrainConfig unit_weights() {
  TrainConfig cfg;
  cfg.w_cls = 1.0;
  cfg.w_bce = 1.0;
  cfg.w_dice = 1.0;
  return cfg;
}

TEST(ExtractSegments, MajorityVoteDownsampling) {
  // 4x4 -> 2x2 cells; cell (0,0) has 3 votes for class 1, one for class 2.
  LabelMap gt(4, 4, 0);
  gt.at(0, 0) = 1;
  gt.at(0, 1) = 1;
  gt.at(1, 0) = 1;
  gt.at(1, 1) = 2;
  GTSegments segs = extract_segments(gt, 4, 2, 2);
  ASSERT_EQ(segs.count(), 2u);  // classes 0 and 1 present after the vote
  EXPECT_EQ(segs.class_ids[0], 0);
  EXPECT_EQ(segs.class_ids[1], 1);
  EXPECT_DOUBLE_EQ(segs.masks[1].values()[0], 1.0);  // cell (0,0) -> class 1
  EXPECT_DOUBLE_EQ(segs.masks[0].values()[1], 1.0);
}

TEST(ExtractSegments, IgnoreExcludedFromVoteAndSegments) {
  LabelMap gt(4, 4, LabelMap::kIgnore);
  gt.at(0, 0) = 3;  // single non-ignore pixel in cell (0,0)
  GTSegments segs = extract_segments(gt, 4, 2, 2);
  ASSERT_EQ(segs.count(), 1u);
  EXPECT_EQ(segs.class_ids[0], 3);
  // only cell (0,0) belongs to the segment; all-ignore cells belong to none
  EXPECT_DOUBLE_EQ(segs.masks[0].values()[0], 1.0);
  EXPECT_DOUBLE_EQ(segs.masks[0].values()[1], 0.0);
  EXPECT_DOUBLE_EQ(segs.masks[0].values()[2], 0.0);
  EXPECT_DOUBLE_EQ(segs.masks[0].values()[3], 0.0);
}

LogitPair saturated_perfect_prediction(int c, int hp, int wp) {
  // query 0 -> class 1 on the left half, query 1 -> class 2 on the right
  Tensor cls = Tensor::zeros({2, c + 1});
  cls.values()[0 * (c + 1) + 1] = 25.0;
  cls.values()[1 * (c + 1) + 2] = 25.0;
  Tensor mask = Tensor::zeros({2, hp, wp});
  for (int y = 0; y < hp; ++y)
    for (int x = 0; x < wp; ++x) {
      bool left = x < wp / 2;
      mask.values()[(0 * hp + y) * wp + x] = left ? 25.0 : -25.0;
      mask.values()[(1 * hp + y) * wp + x] = left ? -25.0 : 25.0;
    }
  return {cls, mask};
}

GTSegments half_split_segments(int hp, int wp) {
  GTSegments segs;
  segs.class_ids = {1, 2};
  Tensor left = Tensor::zeros({hp, wp});
  Tensor right = Tensor::zeros({hp, wp});
  for (int y = 0; y < hp; ++y)
    for (int x = 0; x < wp; ++x)
      (x < wp / 2 ? left : right).values()[y * wp + x] = 1.0;
  segs.masks = {left, right};
  return segs;
}

TEST(SetLoss, SaturatedPerfectPredictionNearZero) {
  int c = 4, hp = 4, wp = 4;
  LogitPair pred = saturated_perfect_prediction(c, hp, wp);
  GTSegments gt = half_split_segments(hp, wp);
  TrainConfig cfg;  // defaults: w_cls=2, w_bce=5, w_dice=5
  SetLossParts parts = set_loss(pred, gt, cfg);
  EXPECT_LT(parts.total.item(), 1e-3);
  EXPECT_GE(parts.total.item(), 0.0);
}

TEST(SetLoss, EmptyGTUniformLogitsClosedForm) {
  int c = 5, q = 3, hp = 2, wp = 2;
  LogitPair pred{Tensor::zeros({q, c + 1}), Tensor::zeros({q, hp, wp})};
  GTSegments empty;
  SetLossParts parts = set_loss(pred, empty, unit_weights());
  // all queries classified toward background with uniform logits:
  // weighted-mean cross-entropy is exactly -log(1/(C+1))
  EXPECT_NEAR(parts.total.item(), std::log(static_cast<double>(c + 1)), 1e-12);
  EXPECT_DOUBLE_EQ(parts.bce.item(), 0.0);
  EXPECT_DOUBLE_EQ(parts.dice.item(), 0.0);
}

TEST(SetLoss, DoublingDiceWeightDoublesOnlyDiceContribution) {
  Rng rng(4);
  int c = 4, q = 3, hp = 4, wp = 4;
  std::vector<double> cv(static_cast<size_t>(q) * (c + 1));
  for (double& v : cv) v = rng.uniform(-2.0, 2.0);
  std::vector<double> mv(static_cast<size_t>(q) * hp * wp);
  for (double& v : mv) v = rng.uniform(-2.0, 2.0);
  LogitPair pred{Tensor::from({q, c + 1}, std::move(cv)), Tensor::from({q, hp, wp}, std::move(mv))};
  GTSegments gt = half_split_segments(hp, wp);

  TrainConfig a = unit_weights();
  TrainConfig b = unit_weights();
  b.w_dice = 2.0;
  SetLossParts pa = set_loss(pred, gt, a);
  SetLossParts pb = set_loss(pred, gt, b);
  ASSERT_EQ(pa.assignment, pb.assignment) << "instance must keep the match stable";
  EXPECT_DOUBLE_EQ(pa.cls.item(), pb.cls.item());
  EXPECT_DOUBLE_EQ(pa.bce.item(), pb.bce.item());
  EXPECT_DOUBLE_EQ(pa.dice.item(), pb.dice.item());
  EXPECT_NEAR(pb.total.item() - pa.total.item(), pa.dice.item(), 1e-12);
}

TEST(SetLoss, NonNegativeOnRandomInstances) {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    int c = rng.uniform_int(2, 6);
    int q = rng.uniform_int(1, 5);
    int hp = 4, wp = 4;
    std::vector<double> cv(static_cast<size_t>(q) * (c + 1));
    for (double& v : cv) v = rng.uniform(-5.0, 5.0);
    std::vector<double> mv(static_cast<size_t>(q) * hp * wp);
    for (double& v : mv) v = rng.uniform(-5.0, 5.0);
    LogitPair pred{Tensor::from({q, c + 1}, std::move(cv)),
                   Tensor::from({q, hp, wp}, std::move(mv))};
    LabelMap gt(8, 8);
    for (uint8_t& id : gt.ids) id = static_cast<uint8_t>(rng.uniform_int(0, c - 1));
    GTSegments segs = extract_segments(gt, c, hp, wp);
    SetLossParts parts = set_loss(pred, segs, TrainConfig{});
    EXPECT_GE(parts.total.item(), 0.0);
    EXPECT_GE(parts.cls.item(), 0.0);
    EXPECT_GE(parts.bce.item(), 0.0);
  }
}

TEST(SetLoss, GradcheckOnSmallInstance) {
  Rng rng(17);
  int c = 4, q = 3, hp = 4, wp = 4;
  std::vector<double> cv(static_cast<size_t>(q) * (c + 1));
  for (double& v : cv) v = rng.uniform(-1.0, 1.0);
  std::vector<double> mv(static_cast<size_t>(q) * hp * wp);
  for (double& v : mv) v = rng.uniform(-1.0, 1.0);
  Tensor cls = Tensor::from({q, c + 1}, std::move(cv));
  Tensor mask = Tensor::from({q, hp, wp}, std::move(mv));
  GTSegments gt = half_split_segments(hp, wp);
  TrainConfig cfg;

  auto f_cls = [&](const Tensor& t) { return set_loss({t, mask}, gt, cfg).total; };
  auto f_mask = [&](const Tensor& t) { return set_loss({cls, t}, gt, cfg).total; };
  EXPECT_LT(finite_diff_check(f_cls, cls, 1e-6), 1e-4);
  EXPECT_LT(finite_diff_check(f_mask, mask, 1e-6), 1e-4);
}

}  // namespace
}  // namespace fedseg
