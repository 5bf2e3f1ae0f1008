#pragma once

#include <map>
#include <string>
#include <vector>

namespace s2a {

struct Box {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;

  double area() const;
};

/// Intersection over union; degenerate (zero-area) boxes score 0 against
/// anything.
double iou(const Box& a, const Box& b);

struct EvalDetection {
  int image_id = 0;
  int class_id = 0;
  double score = 0.0;
  Box box;
};

struct EvalGroundTruth {
  int image_id = 0;
  int class_id = 0;
  Box box;
};

/// Single-class AP: greedy score-ordered matching (ties by image id then
/// x_min) against unmatched GTs at the given IoU threshold, then area under
/// the right-monotonized precision envelope over recall. No GTs and no
/// detections yields 0.
double average_precision(std::vector<EvalDetection> dets,
                         const std::vector<EvalGroundTruth>& gts,
                         double iou_thresh);

struct EvalResult {
  std::map<int, double> per_class_ap50;
  double map50 = 0.0;
  double map5095 = 0.0;
  // (C+1) x (C+1); row = GT class, column = predicted class; the extra
  // index C is background (row C = false positives, column C = misses).
  std::vector<std::vector<long long>> confusion;
};

EvalResult evaluate(const std::vector<EvalDetection>& dets,
                    const std::vector<EvalGroundTruth>& gts, int num_classes);

struct DatasetStats {
  std::map<int, long long> per_class;
  long long total_objects = 0;
  int images = 0;
  double per_image_mean = 0.0;
  std::vector<std::string> malformed;  // "file:line: message"
};

/// Scans a directory of `class cx cy w h` annotation files.
DatasetStats validate_dataset(const std::string& annotation_dir);

/// Writes metrics.txt (key = value lines) and confusion.csv into out_dir.
void write_metrics(const EvalResult& result, const std::string& out_dir);

}  // namespace s2a
