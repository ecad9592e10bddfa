#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "fedseg/dataset_io.hpp"
#include "fedseg/scenegen.hpp"

namespace fedseg {
namespace {

DomainSpec toy_spec() {
  DomainSpec s;
  s.domain_id = "toy";
  s.num_classes = 8;
  s.background_classes = 3;
  s.height = 32;
  s.width = 32;
  s.class_pi = {0.25, 0.30, 0.15, 0.10, 0.08, 0.06, 0.04, 0.02};
  s.palette.resize(8);
  for (int i = 0; i < 8; ++i) {
    double t = i / 7.0;
    s.palette[i].color = {0.2 + 0.6 * t, 0.7 - 0.4 * t, 0.3 + 0.1 * i};
    s.palette[i].noise_sigma = 0.02;
  }
  return s;
}

std::vector<double> empirical_freq(const DomainDataset& ds) {
  std::vector<double> counts(ds.num_classes, 0.0);
  double total = 0.0;
  for (const Scene& s : ds.scenes) {
    for (uint8_t id : s.labels->ids) {
      counts[id] += 1.0;
      total += 1.0;
    }
  }
  for (double& c : counts) c /= total;
  return counts;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<int> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int i, int j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (size_t i = 0; i < order.size(); ++i) r[order[i]] = static_cast<double>(i);
    return r;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = 0, mb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= ra.size();
  mb /= rb.size();
  double num = 0, da = 0, db = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(da * db);
}

TEST(MakeDomain, DeterministicPerSeed) {
  DomainSpec spec = toy_spec();
  DomainDataset a = make_domain(spec, 5, 42);
  DomainDataset b = make_domain(spec, 5, 42);
  ASSERT_EQ(a.scenes.size(), b.scenes.size());
  for (size_t i = 0; i < a.scenes.size(); ++i) {
    EXPECT_EQ(a.scenes[i].image.values(), b.scenes[i].image.values());
    EXPECT_TRUE(*a.scenes[i].labels == *b.scenes[i].labels);
  }
  DomainDataset c = make_domain(spec, 5, 43);
  EXPECT_NE(a.scenes[0].image.values(), c.scenes[0].image.values());
}

TEST(MakeDomain, SingleDynamicClassPrior) {
  DomainSpec spec = toy_spec();
  // all dynamic mass on class 3
  spec.class_pi = {0.25, 0.30, 0.15, 0.30, 0.0, 0.0, 0.0, 0.0};
  DomainDataset ds = make_domain(spec, 10, 7);
  for (const Scene& s : ds.scenes)
    for (uint8_t id : s.labels->ids)
      EXPECT_TRUE(id < 3 || id == 3) << static_cast<int>(id);
}

TEST(MakeDomain, ZeroPriorClassNeverAppears) {
  DomainSpec spec = toy_spec();
  spec.class_pi = {0.25, 0.30, 0.15, 0.10, 0.08, 0.0, 0.10, 0.02};  // class 5 missing
  DomainDataset ds = make_domain(spec, 50, 3);
  for (const Scene& s : ds.scenes)
    for (uint8_t id : s.labels->ids) EXPECT_NE(id, 5);
}

TEST(MakeDomain, EmpiricalFrequenciesTrackPrior) {
  DomainSpec spec = toy_spec();
  DomainDataset ds = make_domain(spec, 200, 11);
  std::vector<double> freq = empirical_freq(ds);
  EXPECT_GT(spearman(freq, spec.class_pi), 0.8);
}

TEST(MakeDomain, UnlabeledDatasetCarriesNoLabels) {
  DomainDataset ds = make_domain(toy_spec(), 3, 5, /*labeled=*/false);
  EXPECT_FALSE(ds.labeled);
  for (const Scene& s : ds.scenes) EXPECT_FALSE(s.labels.has_value());
}

TEST(MakeDomain, PhotometricShiftSeparatesChannelStatistics) {
  DomainSpec a = toy_spec();
  DomainSpec b = toy_spec();
  b.shift.offset = {0.10, -0.06, 0.08};
  double mag = std::sqrt(0.10 * 0.10 + 0.06 * 0.06 + 0.08 * 0.08);

  auto mean_rgb = [](const DomainDataset& ds) {
    std::array<double, 3> m{0, 0, 0};
    int64_t per = 0;
    for (const Scene& s : ds.scenes) {
      int hw = s.image.shape()[1] * s.image.shape()[2];
      per = hw;
      for (int ch = 0; ch < 3; ++ch)
        for (int i = 0; i < hw; ++i) m[ch] += s.image.values()[ch * hw + i];
    }
    for (double& v : m) v /= static_cast<double>(per) * ds.scenes.size();
    return m;
  };

  auto ma = mean_rgb(make_domain(a, 40, 9));
  auto mb = mean_rgb(make_domain(b, 40, 9));
  double dist = 0.0;
  for (int ch = 0; ch < 3; ++ch) dist += (ma[ch] - mb[ch]) * (ma[ch] - mb[ch]);
  dist = std::sqrt(dist);
  EXPECT_GT(dist, mag / 2.0);
}

TEST(Augment, ZeroCountGivesEmptyBatch) {
  AugmentBatch b = augment_for_class(4, 0, toy_spec(), 1);
  EXPECT_TRUE(b.images.empty());
}

TEST(Augment, DefaultCountProducesOneHundredImages) {
  AugmentBatch b = augment_for_class(4, 100, toy_spec(), 1);
  EXPECT_EQ(b.images.size(), 100u);
  EXPECT_EQ(b.hidden_gt.size(), 100u);
}

TEST(Augment, TargetClassCoversAtLeastTwentyPercent) {
  DomainSpec spec = toy_spec();
  AugmentBatch b = augment_for_class(6, 20, spec, 77);
  double frac_sum = 0.0;
  for (const LabelMap& gt : b.hidden_gt) {
    size_t hits = 0;
    for (uint8_t id : gt.ids) hits += (id == 6);
    frac_sum += static_cast<double>(hits) / gt.pixels();
  }
  EXPECT_GE(frac_sum / b.hidden_gt.size(), 0.2);
}

TEST(Augment, Deterministic) {
  AugmentBatch a = augment_for_class(3, 5, toy_spec(), 21);
  AugmentBatch b = augment_for_class(3, 5, toy_spec(), 21);
  for (size_t i = 0; i < a.images.size(); ++i)
    EXPECT_EQ(a.images[i].values(), b.images[i].values());
}

TEST(DatasetIo, RoundTripLabeled) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "fedseg_ds_test_labeled";
  fs::remove_all(dir);
  DomainDataset ds = make_domain(toy_spec(), 4, 13);
  write_dataset(ds, dir);
  DomainDataset r = read_dataset(dir);
  EXPECT_EQ(r.domain_id, ds.domain_id);
  EXPECT_EQ(r.num_classes, ds.num_classes);
  EXPECT_TRUE(r.labeled);
  ASSERT_EQ(r.scenes.size(), ds.scenes.size());
  for (size_t i = 0; i < ds.scenes.size(); ++i) {
    EXPECT_TRUE(*r.scenes[i].labels == *ds.scenes[i].labels);
    // images round-trip through f32
    const auto& a = ds.scenes[i].image.values();
    const auto& b = r.scenes[i].image.values();
    for (size_t k = 0; k < a.size(); ++k)
      EXPECT_NEAR(a[k], b[k], 1e-7);
  }
  fs::remove_all(dir);
}

TEST(DatasetIo, UnlabeledDatasetWritesNoLabelFiles) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "fedseg_ds_test_unlabeled";
  fs::remove_all(dir);
  DomainDataset ds = make_domain(toy_spec(), 3, 13, /*labeled=*/false);
  write_dataset(ds, dir);
  for (const auto& entry : fs::directory_iterator(dir))
    EXPECT_EQ(entry.path().extension() == ".labels", false);
  DomainDataset r = read_dataset(dir);
  EXPECT_FALSE(r.labeled);
  EXPECT_FALSE(r.scenes[0].labels.has_value());
  fs::remove_all(dir);
}

TEST(DatasetIo, MissingSceneFileRejected) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "fedseg_ds_test_corrupt";
  fs::remove_all(dir);
  DomainDataset ds = make_domain(toy_spec(), 2, 13);
  write_dataset(ds, dir);
  fs::remove(dir / "scene_00001.image");
  EXPECT_THROW(read_dataset(dir), IoError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace fedseg
