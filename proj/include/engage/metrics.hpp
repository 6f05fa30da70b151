#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace engage::metrics {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// Confusion-derived classification metrics. Rows of the confusion matrix
/// are actual classes, columns predicted.
struct Metrics {
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<ClassMetrics> per_class;
  ClassMetrics weighted;          // support-weighted averages; support = N
  double accuracy = 0.0;          // trace / N, the top-1 accuracy
  double mean_class_accuracy = 0.0;  // unweighted mean of per-class recalls
};

/// Harmonic mean of precision and recall; 0 when both are 0.
double f1_score(double precision, double recall);

Metrics metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion);

/// Throws length_mismatch when sizes differ, empty_input on empty lists.
Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels,
                        int num_classes);

/// Pearson correlation; nullopt when under 2 points or either side has zero
/// variance.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// engagement timeline

/// One (student, window) engagement outcome; engaged encodes as 1.
struct EngagementRecord {
  int track_id = 0;
  int window_id = 0;
  int predicted = 0;
  std::optional<int> reference;
};

struct TimelinePoint {
  int window_id = 0;
  double mean_predicted = 0.0;
  std::optional<double> mean_reference;
};

struct Timeline {
  std::vector<TimelinePoint> points;  // window id ascending
  std::optional<double> correlation;  // predicted vs reference means
};

/// Per-window mean engagement across the students present in that window,
/// with the reference column when labels are supplied. Throws empty_input.
Timeline mean_engagement_timeline(const std::vector<EngagementRecord>& records);

}  // namespace engage::metrics
