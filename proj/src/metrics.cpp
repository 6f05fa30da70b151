#include "engage/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "engage/errors.hpp"

namespace engage::metrics {

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

Metrics metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
  const std::size_t classes = confusion.size();
  if (classes == 0) throw Error(Errc::empty_input, "empty confusion matrix");

  Metrics m;
  m.confusion = confusion;
  m.per_class.resize(classes);

  std::size_t total = 0;
  std::size_t correct = 0;
  std::vector<std::size_t> predicted_count(classes, 0);
  for (std::size_t a = 0; a < classes; ++a)
    for (std::size_t p = 0; p < classes; ++p) {
      total += confusion[a][p];
      predicted_count[p] += confusion[a][p];
      if (a == p) correct += confusion[a][p];
    }
  if (total == 0) throw Error(Errc::empty_input, "confusion matrix has no samples");

  double recall_sum = 0.0;
  for (std::size_t k = 0; k < classes; ++k) {
    ClassMetrics& c = m.per_class[k];
    std::size_t support = 0;
    for (std::size_t p = 0; p < classes; ++p) support += confusion[k][p];
    c.support = support;
    const std::size_t tp = confusion[k][k];
    c.recall = support > 0 ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
    c.precision =
        predicted_count[k] > 0 ? static_cast<double>(tp) / static_cast<double>(predicted_count[k])
                               : 0.0;
    c.f1 = f1_score(c.precision, c.recall);
    recall_sum += c.recall;

    m.weighted.precision += static_cast<double>(support) * c.precision;
    m.weighted.recall += static_cast<double>(support) * c.recall;
    m.weighted.f1 += static_cast<double>(support) * c.f1;
  }
  m.weighted.precision /= static_cast<double>(total);
  m.weighted.recall /= static_cast<double>(total);
  m.weighted.f1 /= static_cast<double>(total);
  m.weighted.support = total;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  m.mean_class_accuracy = recall_sum / static_cast<double>(classes);
  return m;
}

Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels,
                        int num_classes) {
  if (predictions.size() != labels.size())
    throw Error(Errc::length_mismatch, "predictions and labels differ in length");
  if (predictions.empty()) throw Error(Errc::empty_input, "no samples");
  std::vector<std::vector<std::size_t>> confusion(
      static_cast<std::size_t>(num_classes),
      std::vector<std::size_t>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int a = labels[i];
    const int p = predictions[i];
    if (a < 0 || a >= num_classes || p < 0 || p >= num_classes)
      throw Error(Errc::label_out_of_range, "class index outside [0, num_classes)");
    ++confusion[static_cast<std::size_t>(a)][static_cast<std::size_t>(p)];
  }
  return metrics_from_confusion(confusion);
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::length_mismatch, "series differ in length");
  const std::size_t n = a.size();
  if (n < 2) return std::nullopt;
  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= static_cast<double>(n);
  mean_b /= static_cast<double>(n);
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0) return std::nullopt;
  return cov / std::sqrt(var_a * var_b);
}

Timeline mean_engagement_timeline(const std::vector<EngagementRecord>& records) {
  if (records.empty()) throw Error(Errc::empty_input, "no engagement records");

  struct Bucket {
    double predicted_sum = 0.0;
    double reference_sum = 0.0;
    std::size_t count = 0;
    std::size_t reference_count = 0;
  };
  std::map<int, Bucket> buckets;
  for (const EngagementRecord& r : records) {
    Bucket& bucket = buckets[r.window_id];
    bucket.predicted_sum += r.predicted;
    ++bucket.count;
    if (r.reference) {
      bucket.reference_sum += *r.reference;
      ++bucket.reference_count;
    }
  }

  Timeline timeline;
  std::vector<double> predicted_series, reference_series;
  for (const auto& [window_id, bucket] : buckets) {
    TimelinePoint point;
    point.window_id = window_id;
    point.mean_predicted = bucket.predicted_sum / static_cast<double>(bucket.count);
    if (bucket.reference_count > 0) {
      point.mean_reference = bucket.reference_sum / static_cast<double>(bucket.reference_count);
      predicted_series.push_back(point.mean_predicted);
      reference_series.push_back(*point.mean_reference);
    }
    timeline.points.push_back(point);
  }
  if (!reference_series.empty())
    timeline.correlation = pearson(predicted_series, reference_series);
  return timeline;
}

}  // namespace engage::metrics
