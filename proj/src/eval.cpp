#include "s2a/eval.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "s2a/common.hpp"

namespace s2a {

namespace fs = std::filesystem;

double Box::area() const {
  return std::max(0.0, x_max - x_min) * std::max(0.0, y_max - y_min);
}

double iou(const Box& a, const Box& b) {
  const double area_a = a.area(), area_b = b.area();
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (area_a + area_b - inter);
}

namespace {

void sort_by_score(std::vector<EvalDetection>& dets) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const EvalDetection& a, const EvalDetection& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.image_id != b.image_id) return a.image_id < b.image_id;
                     return a.box.x_min < b.box.x_min;
                   });
}

/// Greedy matching used by both AP and the confusion matrix: each detection,
/// in score order, claims the highest-IoU unmatched GT of its image at or
/// above the threshold. Returns, per detection, the matched GT index or -1.
std::vector<int> greedy_match(const std::vector<EvalDetection>& sorted_dets,
                              const std::vector<EvalGroundTruth>& gts,
                              double iou_thresh) {
  std::vector<bool> taken(gts.size(), false);
  std::vector<int> match(sorted_dets.size(), -1);
  for (std::size_t d = 0; d < sorted_dets.size(); ++d) {
    int best = -1;
    double best_iou = iou_thresh;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].image_id != sorted_dets[d].image_id) continue;
      const double v = iou(sorted_dets[d].box, gts[g].box);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      taken[best] = true;
      match[d] = best;
    }
  }
  return match;
}

}  // namespace

double average_precision(std::vector<EvalDetection> dets,
                         const std::vector<EvalGroundTruth>& gts,
                         double iou_thresh) {
  const std::size_t npos = gts.size();
  if (npos == 0) return 0.0;
  sort_by_score(dets);
  const std::vector<int> match = greedy_match(dets, gts, iou_thresh);

  // Precision envelope over recall, all-points interpolation.
  double ap = 0.0;
  std::size_t tp = 0;
  std::vector<double> recall(dets.size()), precision(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (match[i] >= 0) ++tp;
    recall[i] = static_cast<double>(tp) / npos;
    precision[i] = static_cast<double>(tp) / (i + 1);
  }
  double env = 0.0;
  for (std::size_t i = dets.size(); i-- > 0;) {
    env = std::max(env, precision[i]);
    const double r_lo = i == 0 ? 0.0 : recall[i - 1];
    ap += (recall[i] - r_lo) * env;
  }
  return ap;
}

EvalResult evaluate(const std::vector<EvalDetection>& dets,
                    const std::vector<EvalGroundTruth>& gts, int num_classes) {
  if (num_classes <= 0) throw ValidationError("need at least one class");
  for (const EvalDetection& d : dets)
    if (d.class_id < 0 || d.class_id >= num_classes)
      throw ValidationError("detection class id out of range");
  for (const EvalGroundTruth& g : gts)
    if (g.class_id < 0 || g.class_id >= num_classes)
      throw ValidationError("ground-truth class id out of range");

  // Classes absent from both GT and detections are excluded from the means.
  std::set<int> present;
  for (const EvalDetection& d : dets) present.insert(d.class_id);
  for (const EvalGroundTruth& g : gts) present.insert(g.class_id);

  EvalResult result;
  auto class_ap = [&](int cls, double thresh) {
    std::vector<EvalDetection> cd;
    std::vector<EvalGroundTruth> cg;
    for (const EvalDetection& d : dets)
      if (d.class_id == cls) cd.push_back(d);
    for (const EvalGroundTruth& g : gts)
      if (g.class_id == cls) cg.push_back(g);
    return average_precision(std::move(cd), cg, thresh);
  };

  double sum50 = 0.0, sum5095 = 0.0;
  for (int cls : present) {
    const double ap50 = class_ap(cls, 0.5);
    result.per_class_ap50[cls] = ap50;
    sum50 += ap50;
    for (int t = 0; t < 10; ++t) sum5095 += class_ap(cls, 0.5 + 0.05 * t);
  }
  if (!present.empty()) {
    result.map50 = sum50 / present.size();
    result.map5095 = sum5095 / (10.0 * present.size());
  }

  // Class-agnostic 0.5-IoU matching drives the confusion matrix; background
  // row C collects false positives, background column C collects misses.
  result.confusion.assign(num_classes + 1,
                          std::vector<long long>(num_classes + 1, 0));
  std::vector<EvalDetection> sorted = dets;
  sort_by_score(sorted);
  const std::vector<int> match = greedy_match(sorted, gts, 0.5);
  std::vector<bool> gt_hit(gts.size(), false);
  for (std::size_t d = 0; d < sorted.size(); ++d) {
    if (match[d] >= 0) {
      gt_hit[match[d]] = true;
      ++result.confusion[gts[match[d]].class_id][sorted[d].class_id];
    } else {
      ++result.confusion[num_classes][sorted[d].class_id];
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g)
    if (!gt_hit[g]) ++result.confusion[gts[g].class_id][num_classes];
  return result;
}

DatasetStats validate_dataset(const std::string& annotation_dir) {
  if (!fs::is_directory(annotation_dir))
    throw IoError("annotation directory not found: " + annotation_dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(annotation_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  DatasetStats stats;
  for (const fs::path& file : files) {
    ++stats.images;
    std::ifstream in(file);
    if (!in) throw IoError("cannot read " + file.string());
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream ls(line);
      int cls;
      double cx, cy, w, h;
      std::string extra;
      if (!(ls >> cls >> cx >> cy >> w >> h) || (ls >> extra) || cls < 0 ||
          cx < 0.0 || cx > 1.0 || cy < 0.0 || cy > 1.0 || w <= 0.0 || w > 1.0 ||
          h <= 0.0 || h > 1.0) {
        stats.malformed.push_back(file.filename().string() + ":" +
                                  std::to_string(line_no) +
                                  ": expected `class cx cy w h` with normalized boxes");
        continue;
      }
      ++stats.per_class[cls];
      ++stats.total_objects;
    }
  }
  stats.per_image_mean =
      stats.images ? static_cast<double>(stats.total_objects) / stats.images : 0.0;
  return stats;
}

void write_metrics(const EvalResult& result, const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream out(fs::path(out_dir) / "metrics.txt");
    if (!out) throw IoError("cannot write metrics.txt in " + out_dir);
    out << std::fixed << std::setprecision(6);
    out << "map50 = " << result.map50 << "\n";
    out << "map5095 = " << result.map5095 << "\n";
    for (const auto& [cls, ap] : result.per_class_ap50)
      out << "ap50.class" << cls << " = " << ap << "\n";
  }
  {
    std::ofstream out(fs::path(out_dir) / "confusion.csv");
    if (!out) throw IoError("cannot write confusion.csv in " + out_dir);
    for (const auto& row : result.confusion) {
      for (std::size_t i = 0; i < row.size(); ++i)
        out << row[i] << (i + 1 < row.size() ? "," : "");
      out << "\n";
    }
  }
}

}  // namespace s2a
