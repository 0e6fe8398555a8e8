#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdsa {

struct MetricsReport {
  int n_classes = 0;
  std::vector<std::int64_t> confusion;  // [truth * n_classes + pred]
  std::vector<double> per_class_iou;    // 0 for classes absent from pred and truth
  double miou = 0.0;
  double oa = 0.0;
  double macc = 0.0;

  std::int64_t at(int truth, int pred) const {
    return confusion[static_cast<std::size_t>(truth * n_classes + pred)];
  }
  std::int64_t tp(int c) const { return at(c, c); }
  std::int64_t fp(int c) const {
    std::int64_t s = 0;
    for (int t = 0; t < n_classes; ++t)
      if (t != c) s += at(t, c);
    return s;
  }
  std::int64_t fn(int c) const {
    std::int64_t s = 0;
    for (int p = 0; p < n_classes; ++p)
      if (p != c) s += at(c, p);
    return s;
  }
};

/// Confusion matrix plus mIoU / OA / mAcc. Classes absent from both the
/// predictions and the truth are left out of the mIoU mean; mAcc averages
/// over classes present in the truth (elsewhere the per-class accuracy is
/// 0/0).
inline MetricsReport compute_metrics(const std::vector<int>& pred, const std::vector<int>& truth,
                                     int n_classes) {
  if (pred.empty()) throw std::invalid_argument("compute_metrics: empty input");
  if (pred.size() != truth.size())
    throw std::invalid_argument("compute_metrics: prediction/truth size mismatch");
  if (n_classes < 1) throw std::invalid_argument("compute_metrics: n_classes must be >= 1");

  MetricsReport r;
  r.n_classes = n_classes;
  r.confusion.assign(static_cast<std::size_t>(n_classes) * static_cast<std::size_t>(n_classes), 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= n_classes || truth[i] < 0 || truth[i] >= n_classes)
      throw std::invalid_argument("compute_metrics: label out of range");
    ++r.confusion[static_cast<std::size_t>(truth[i] * n_classes + pred[i])];
  }

  r.per_class_iou.assign(static_cast<std::size_t>(n_classes), 0.0);
  std::int64_t tp_total = 0;
  double iou_sum = 0.0, acc_sum = 0.0;
  int iou_classes = 0, acc_classes = 0;
  for (int c = 0; c < n_classes; ++c) {
    const std::int64_t tp = r.tp(c), fp = r.fp(c), fn = r.fn(c);
    tp_total += tp;
    if (tp + fp + fn > 0) {
      r.per_class_iou[static_cast<std::size_t>(c)] =
          static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      iou_sum += r.per_class_iou[static_cast<std::size_t>(c)];
      ++iou_classes;
    }
    if (tp + fn > 0) {
      acc_sum += static_cast<double>(tp) / static_cast<double>(tp + fn);
      ++acc_classes;
    }
  }
  r.oa = static_cast<double>(tp_total) / static_cast<double>(pred.size());
  r.miou = iou_classes ? iou_sum / iou_classes : 0.0;
  r.macc = acc_classes ? acc_sum / acc_classes : 0.0;
  return r;
}

/// CSV form, one row per class: `class,tp,fp,fn,iou`. Class names default to
/// the numeric id when none are given.
inline std::string metrics_csv(const MetricsReport& r,
                               const std::vector<std::string>& class_names = {}) {
  std::ostringstream os;
  os << "class,tp,fp,fn,iou\n";
  for (int c = 0; c < r.n_classes; ++c) {
    if (static_cast<std::size_t>(c) < class_names.size())
      os << class_names[static_cast<std::size_t>(c)];
    else
      os << c;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", r.per_class_iou[static_cast<std::size_t>(c)]);
    os << ',' << r.tp(c) << ',' << r.fp(c) << ',' << r.fn(c) << ',' << buf << '\n';
  }
  return os.str();
}

}  // namespace pdsa
