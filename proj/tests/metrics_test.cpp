#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fedseg/metrics.hpp"
#include "fedseg/rng.hpp"

namespace fedseg {
namespace {

LabelMap map_from(int h, int w, std::vector<uint8_t> ids) {
  LabelMap lm(h, w);
  lm.ids = std::move(ids);
  return lm;
}

TEST(Confusion, PerfectPredictionIsDiagonal) {
  ConfusionMatrix cm(3);
  LabelMap gt = map_from(2, 2, {0, 1, 2, 1});
  cm.accumulate(gt, gt);
  EXPECT_EQ(cm.at(0, 0), 1);
  EXPECT_EQ(cm.at(1, 1), 2);
  EXPECT_EQ(cm.at(2, 2), 1);
  EXPECT_EQ(cm.at(0, 1), 0);
  EXPECT_EQ(cm.total(), 4);
}

TEST(Confusion, IgnorePixelsExcluded) {
  ConfusionMatrix cm(3);
  LabelMap gt = map_from(2, 2, {LabelMap::kIgnore, LabelMap::kIgnore, LabelMap::kIgnore,
                                LabelMap::kIgnore});
  LabelMap pred = map_from(2, 2, {0, 1, 2, 0});
  cm.accumulate(pred, gt);
  EXPECT_EQ(cm.total(), 0);
}

TEST(Confusion, HandTally) {
  ConfusionMatrix cm(2);
  LabelMap gt = map_from(2, 2, {0, 0, 1, 1});
  LabelMap pred = map_from(2, 2, {0, 1, 1, 0});
  cm.accumulate(pred, gt);
  EXPECT_EQ(cm.at(0, 0), 1);
  EXPECT_EQ(cm.at(0, 1), 1);
  EXPECT_EQ(cm.at(1, 1), 1);
  EXPECT_EQ(cm.at(1, 0), 1);
}

TEST(Confusion, DimensionMismatchRejected) {
  ConfusionMatrix cm(2);
  EXPECT_THROW(cm.accumulate(LabelMap(2, 2), LabelMap(2, 3)), ShapeError);
}

TEST(Iou, PerfectDiagonal) {
  ConfusionMatrix cm(3);
  LabelMap gt = map_from(3, 1, {0, 1, 2});
  cm.accumulate(gt, gt);
  for (double v : iou(cm)) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_DOUBLE_EQ(miou(cm), 1.0);
}

TEST(Iou, ClassAbsentFromBothExcludedFromMean) {
  ConfusionMatrix cm(3);
  LabelMap gt = map_from(2, 1, {0, 1});
  cm.accumulate(gt, gt);  // class 2 never appears
  std::vector<double> per = iou(cm);
  EXPECT_TRUE(std::isnan(per[2]));
  EXPECT_DOUBLE_EQ(miou(cm), 1.0);
  EXPECT_NEAR(miou(cm, /*exclude_absent=*/false), 2.0 / 3.0, 1e-12);
}

TEST(Iou, HalfOverlapArithmetic) {
  // TP=50, FP=25, FN=25 -> IoU = 0.5
  ConfusionMatrix cm(2);
  LabelMap gt(10, 10), pred(10, 10);
  // 75 pixels of class 1 in gt; prediction covers 50 of them plus 25 extra
  for (int i = 0; i < 75; ++i) gt.ids[i] = 1;
  for (int i = 25; i < 100; ++i) pred.ids[i] = 1;
  cm.accumulate(pred, gt);
  EXPECT_DOUBLE_EQ(iou(cm)[1], 0.5);
}

TEST(Iou, MatchesSetBasedBruteForce) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    int c = rng.uniform_int(2, 6);
    LabelMap gt(6, 6), pred(6, 6);
    for (auto& id : gt.ids) id = static_cast<uint8_t>(rng.uniform_int(0, c - 1));
    for (auto& id : pred.ids) id = static_cast<uint8_t>(rng.uniform_int(0, c - 1));
    ConfusionMatrix cm(c);
    cm.accumulate(pred, gt);
    std::vector<double> fast = iou(cm);
    for (int k = 0; k < c; ++k) {
      int64_t inter = 0, uni = 0;
      for (size_t i = 0; i < gt.ids.size(); ++i) {
        bool a = gt.ids[i] == k, b = pred.ids[i] == k;
        inter += (a && b);
        uni += (a || b);
      }
      if (uni == 0) {
        EXPECT_TRUE(std::isnan(fast[k]));
      } else {
        EXPECT_DOUBLE_EQ(fast[k], static_cast<double>(inter) / uni);
      }
    }
  }
}

TEST(Iou, InvariantUnderSimultaneousClassPermutation) {
  Rng rng(21);
  int c = 4;
  LabelMap gt(8, 8), pred(8, 8);
  for (auto& id : gt.ids) id = static_cast<uint8_t>(rng.uniform_int(0, c - 1));
  for (auto& id : pred.ids) id = static_cast<uint8_t>(rng.uniform_int(0, c - 1));
  ConfusionMatrix a(c);
  a.accumulate(pred, gt);

  std::vector<uint8_t> perm{2, 3, 1, 0};
  LabelMap gt2 = gt, pred2 = pred;
  for (auto& id : gt2.ids) id = perm[id];
  for (auto& id : pred2.ids) id = perm[id];
  ConfusionMatrix b(c);
  b.accumulate(pred2, gt2);
  EXPECT_DOUBLE_EQ(miou(a), miou(b));
}

TEST(Confusion, AccumulationOrderIndependent) {
  Rng rng(33);
  std::vector<std::pair<LabelMap, LabelMap>> batches;
  for (int i = 0; i < 5; ++i) {
    LabelMap gt(4, 4), pred(4, 4);
    for (auto& id : gt.ids) id = static_cast<uint8_t>(rng.uniform_int(0, 2));
    for (auto& id : pred.ids) id = static_cast<uint8_t>(rng.uniform_int(0, 2));
    batches.emplace_back(pred, gt);
  }
  ConfusionMatrix fwd(3), rev(3);
  for (auto& [p, g] : batches) fwd.accumulate(p, g);
  for (auto it = batches.rbegin(); it != batches.rend(); ++it) rev.accumulate(it->first, it->second);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_EQ(fwd.at(i, j), rev.at(i, j));
}

TEST(Average, UnweightedMeanAcrossDomains) {
  DomainReport a, b;
  a.miou = 0.4;
  b.miou = 0.6;
  EXPECT_DOUBLE_EQ(average_miou({a, b}), 0.5);
  EXPECT_DOUBLE_EQ(average_miou({a}), 0.4);
}

}  // namespace
}  // namespace fedseg
