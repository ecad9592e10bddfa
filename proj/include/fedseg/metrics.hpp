#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fedseg/labelmap.hpp"
#include "fedseg/scenegen.hpp"
#include "fedseg/segmodel.hpp"

namespace fedseg {

// Row = ground truth class, column = predicted class. Ignore pixels are
// never counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes)
      : classes_(num_classes),
        counts_(static_cast<size_t>(num_classes) * num_classes, 0) {}

  int num_classes() const { return classes_; }

  int64_t at(int gt, int pred) const {
    return counts_[static_cast<size_t>(gt) * classes_ + pred];
  }

  int64_t total() const {
    int64_t t = 0;
    for (int64_t v : counts_) t += v;
    return t;
  }

  void accumulate(const LabelMap& pred, const LabelMap& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
      throw ShapeError("ConfusionMatrix::accumulate: dimension mismatch");
    for (size_t i = 0; i < gt.ids.size(); ++i) {
      uint8_t g = gt.ids[i];
      if (g == LabelMap::kIgnore) continue;
      uint8_t p = pred.ids[i];
      if (g >= classes_ || p >= classes_)
        throw ContractError("ConfusionMatrix::accumulate: class id out of range");
      ++counts_[static_cast<size_t>(g) * classes_ + p];
    }
  }

  void merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw ContractError("ConfusionMatrix::merge: size mismatch");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

 private:
  int classes_;
  std::vector<int64_t> counts_;
};

// IoU_c = TP / (TP + FP + FN); NaN marks classes absent from both ground
// truth and prediction.
inline std::vector<double> iou(const ConfusionMatrix& cm) {
  int c = cm.num_classes();
  std::vector<double> out(c);
  for (int k = 0; k < c; ++k) {
    int64_t tp = cm.at(k, k);
    int64_t fp = 0, fn = 0;
    for (int j = 0; j < c; ++j) {
      if (j == k) continue;
      fp += cm.at(j, k);
      fn += cm.at(k, j);
    }
    int64_t denom = tp + fp + fn;
    out[k] = denom == 0 ? std::nan("") : static_cast<double>(tp) / static_cast<double>(denom);
  }
  return out;
}

// Mean IoU over classes with defined IoU. With exclude_absent=false, absent
// classes count as 0 instead.
inline double miou(const ConfusionMatrix& cm, bool exclude_absent = true) {
  std::vector<double> per_class = iou(cm);
  double sum = 0.0;
  int n = 0;
  for (double v : per_class) {
    if (std::isnan(v)) {
      if (exclude_absent) continue;
      v = 0.0;
    }
    sum += v;
    ++n;
  }
  return n == 0 ? std::nan("") : sum / n;
}

struct DomainReport {
  std::string domain_id;
  std::vector<double> class_iou;  // NaN = undefined
  double miou = 0.0;
  int image_count = 0;
};

struct EvalSummary {
  std::vector<DomainReport> domains;
  double average_miou = 0.0;  // unweighted mean of per-domain mIoU
};

inline DomainReport evaluate_on_domain(const SegModel& model, const DomainDataset& domain,
                                       bool exclude_absent = true) {
  if (!domain.labeled) throw ContractError("evaluate_on_domain: dataset is unlabeled");
  ConfusionMatrix cm(model.config.num_classes);
  for (const Scene& s : domain.scenes) cm.accumulate(predict(model, s.image), *s.labels);
  DomainReport rep;
  rep.domain_id = domain.domain_id;
  rep.class_iou = iou(cm);
  rep.miou = miou(cm, exclude_absent);
  rep.image_count = static_cast<int>(domain.scenes.size());
  return rep;
}

inline double average_miou(const std::vector<DomainReport>& reports) {
  double acc = 0.0;
  for (const DomainReport& r : reports) acc += r.miou;
  return reports.empty() ? 0.0 : acc / reports.size();
}

inline EvalSummary evaluate_on_domains(const SegModel& model,
                                       const std::vector<DomainDataset>& targets,
                                       bool exclude_absent = true) {
  EvalSummary sum;
  for (const DomainDataset& d : targets)
    sum.domains.push_back(evaluate_on_domain(model, d, exclude_absent));
  sum.average_miou = average_miou(sum.domains);
  return sum;
}

}  // namespace fedseg
