#include "s2a/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <unistd.h>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "s2a/common.hpp"
#include "s2a/rng.hpp"

using namespace s2a;
namespace fs = std::filesystem;

namespace {

Box make_box(double x0, double y0, double x1, double y1) {
  return Box{x0, y0, x1, y1};
}

/// Independent AP reference, written in a deliberately different style:
/// detections are ordered with plain index sorting, matching walks every
/// (detection, GT) pair, and the envelope is recomputed per recall point by
/// a full scan instead of a running suffix maximum.
double ap_reference(std::vector<EvalDetection> dets,
                    const std::vector<EvalGroundTruth>& gts, double thresh) {
  if (gts.empty()) return 0.0;
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    if (dets[a].image_id != dets[b].image_id)
      return dets[a].image_id < dets[b].image_id;
    if (dets[a].box.x_min != dets[b].box.x_min)
      return dets[a].box.x_min < dets[b].box.x_min;
    return a < b;  // stable under full ties
  });

  std::vector<bool> used(gts.size(), false);
  std::vector<int> is_tp;
  for (std::size_t k : order) {
    int pick = -1;
    double pick_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].image_id != dets[k].image_id) continue;
      const double v = iou(dets[k].box, gts[g].box);
      if (v >= thresh && v > pick_iou) {
        pick = static_cast<int>(g);
        pick_iou = v;
      }
    }
    if (pick >= 0) used[pick] = true;
    is_tp.push_back(pick >= 0 ? 1 : 0);
  }

  std::vector<double> rec, prec;
  int tp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    tp += is_tp[i];
    rec.push_back(static_cast<double>(tp) / gts.size());
    prec.push_back(static_cast<double>(tp) / (i + 1));
  }
  double ap = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    double env = 0.0;
    for (std::size_t j = i; j < rec.size(); ++j) env = std::max(env, prec[j]);
    ap += (rec[i] - prev) * env;
    prev = rec[i];
  }
  return ap;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("s2a_eval_" + tag + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("iou matches hand arithmetic and is symmetric") {
  const Box a = make_box(0, 0, 2, 2);
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, make_box(5, 5, 6, 6)) == 0.0);
  // inter 2, union 6
  CHECK(iou(a, make_box(1, 0, 3, 2)) == doctest::Approx(1.0 / 3.0));
  // degenerate boxes score zero against anything, themselves included
  const Box line = make_box(1, 1, 1, 3);
  CHECK(iou(line, a) == 0.0);
  CHECK(iou(line, line) == 0.0);

  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    auto rand_box = [&] {
      const double x0 = rng.uniform(0, 10), y0 = rng.uniform(0, 10);
      return make_box(x0, y0, x0 + rng.uniform(0.1, 5), y0 + rng.uniform(0.1, 5));
    };
    const Box p = rand_box(), q = rand_box();
    CHECK(iou(p, q) == iou(q, p));
    CHECK(iou(p, q) >= 0.0);
    CHECK(iou(p, q) <= 1.0);
  }
}

TEST_CASE("average precision on hand-computed curves") {
  const std::vector<EvalGroundTruth> gts = {{0, 0, make_box(0, 0, 10, 10)}};

  SUBCASE("single exact match") {
    std::vector<EvalDetection> dets = {{0, 0, 0.9, make_box(0, 0, 10, 10)}};
    CHECK(average_precision(dets, gts, 0.5) == doctest::Approx(1.0));
  }
  SUBCASE("one false positive ranked above one true positive") {
    // precisions (0, 0.5) at recalls (0, 1); envelope gives AP = 0.5
    std::vector<EvalDetection> dets = {
        {0, 0, 0.9, make_box(50, 50, 60, 60)},
        {0, 0, 0.8, make_box(0, 0, 10, 10)},
    };
    CHECK(average_precision(dets, gts, 0.5) == doctest::Approx(0.5));
  }
  SUBCASE("no ground truth and no detections scores zero") {
    CHECK(average_precision({}, {}, 0.5) == 0.0);
  }
  SUBCASE("detections but no ground truth scores zero") {
    std::vector<EvalDetection> dets = {{0, 0, 0.9, make_box(0, 0, 1, 1)}};
    CHECK(average_precision(dets, {}, 0.5) == 0.0);
  }
}

TEST_CASE("average precision agrees with a brute-force reference") {
  Rng rng(1234);
  for (int trial = 0; trial < 300; ++trial) {
    const int n_gt = static_cast<int>(rng.below(6));
    const int n_det = static_cast<int>(rng.below(10));
    std::vector<EvalGroundTruth> gts;
    std::vector<EvalDetection> dets;
    for (int g = 0; g < n_gt; ++g) {
      const double x = rng.uniform(0, 20), y = rng.uniform(0, 20);
      gts.push_back({static_cast<int>(rng.below(3)), 0,
                     make_box(x, y, x + rng.uniform(1, 8), y + rng.uniform(1, 8))});
    }
    for (int d = 0; d < n_det; ++d) {
      const double x = rng.uniform(0, 20), y = rng.uniform(0, 20);
      // quantized scores so ties actually happen
      const double score = static_cast<double>(rng.below(5)) / 5.0;
      dets.push_back({static_cast<int>(rng.below(3)), 0, score,
                      make_box(x, y, x + rng.uniform(1, 8), y + rng.uniform(1, 8))});
    }
    const double thresh = trial % 2 ? 0.5 : 0.3;
    CHECK(average_precision(dets, gts, thresh) ==
          doctest::Approx(ap_reference(dets, gts, thresh)).epsilon(1e-12));
  }
}

TEST_CASE("adding a top-ranked true positive never lowers AP") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<EvalGroundTruth> gts;
    std::vector<EvalDetection> dets;
    for (int g = 0; g < 4; ++g) {
      const double x = 20.0 * g, y = 0.0;
      gts.push_back({0, 0, make_box(x, y, x + 10, y + 10)});
    }
    for (int d = 0; d < 5; ++d) {
      const double x = rng.uniform(0, 80), y = rng.uniform(0, 15);
      dets.push_back({0, 0, rng.uniform(0.1, 0.8),
                      make_box(x, y, x + 10, y + 10)});
    }
    const double before = average_precision(dets, gts, 0.5);
    dets.push_back({0, 0, 0.99, gts[0].box});  // exact match, highest score
    const double after = average_precision(dets, gts, 0.5);
    CHECK(after >= before - 1e-12);
  }
}

TEST_CASE("evaluate: perfect detections give perfect metrics") {
  std::vector<EvalGroundTruth> gts;
  std::vector<EvalDetection> dets;
  for (int cls = 0; cls < 3; ++cls)
    for (int img = 0; img < 4; ++img) {
      const Box b = make_box(10 * cls, 10 * img, 10 * cls + 8, 10 * img + 8);
      gts.push_back({img, cls, b});
      dets.push_back({img, cls, 0.9, b});
    }
  const EvalResult r = evaluate(dets, gts, 3);
  CHECK(r.map50 == doctest::Approx(1.0));
  CHECK(r.map5095 == doctest::Approx(1.0));
  for (int cls = 0; cls < 3; ++cls)
    CHECK(r.per_class_ap50.at(cls) == doctest::Approx(1.0));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(r.confusion[i][j] == (i == j && i < 3 ? 4 : 0));
}

TEST_CASE("evaluate: all detections with the wrong class") {
  std::vector<EvalGroundTruth> gts = {{0, 0, make_box(0, 0, 10, 10)},
                                      {1, 0, make_box(0, 0, 10, 10)}};
  std::vector<EvalDetection> dets = {{0, 1, 0.9, make_box(0, 0, 10, 10)},
                                     {1, 1, 0.8, make_box(0, 0, 10, 10)}};
  const EvalResult r = evaluate(dets, gts, 2);
  CHECK(r.map50 == 0.0);
  CHECK(r.map5095 == 0.0);
  // class-agnostic matching still pairs them up: GT class 0, predicted 1
  CHECK(r.confusion[0][1] == 2);
  CHECK(r.confusion[0][0] == 0);
  CHECK(r.confusion[2][1] == 0);
}

TEST_CASE("evaluate: classes absent everywhere are excluded from the mean") {
  // class 1 of 3 never appears; the mean is over classes 0 and 2 only
  std::vector<EvalGroundTruth> gts = {{0, 0, make_box(0, 0, 10, 10)},
                                      {0, 2, make_box(20, 20, 30, 30)}};
  std::vector<EvalDetection> dets = {{0, 0, 0.9, make_box(0, 0, 10, 10)}};
  const EvalResult r = evaluate(dets, gts, 3);
  CHECK(r.per_class_ap50.count(1) == 0);
  CHECK(r.map50 == doctest::Approx(0.5));  // (1.0 + 0.0) / 2
}

TEST_CASE("evaluate: confusion rows sum to ground-truth counts") {
  Rng rng(5150);
  for (int trial = 0; trial < 20; ++trial) {
    const int num_classes = 3;
    std::vector<EvalGroundTruth> gts;
    std::vector<EvalDetection> dets;
    std::vector<long long> gt_count(num_classes, 0);
    for (int g = 0; g < 12; ++g) {
      const int cls = static_cast<int>(rng.below(3));
      const double x = rng.uniform(0, 50), y = rng.uniform(0, 50);
      gts.push_back({static_cast<int>(rng.below(4)), cls,
                     make_box(x, y, x + 6, y + 6)});
      ++gt_count[cls];
    }
    for (int d = 0; d < 15; ++d) {
      const double x = rng.uniform(0, 50), y = rng.uniform(0, 50);
      dets.push_back({static_cast<int>(rng.below(4)),
                      static_cast<int>(rng.below(3)),
                      rng.uniform(0.05, 1.0), make_box(x, y, x + 6, y + 6)});
    }
    const EvalResult r = evaluate(dets, gts, num_classes);
    for (int cls = 0; cls < num_classes; ++cls) {
      long long row = 0;
      for (long long v : r.confusion[cls]) row += v;
      CHECK(row == gt_count[cls]);
    }
    long long fp_row = 0;
    for (long long v : r.confusion[num_classes]) fp_row += v;
    long long matched = 0;
    for (int cls = 0; cls < num_classes; ++cls)
      for (int j = 0; j < num_classes; ++j) matched += r.confusion[cls][j];
    CHECK(fp_row == static_cast<long long>(dets.size()) - matched);
  }
}

TEST_CASE("validate_dataset counts annotations and flags malformed lines") {
  SUBCASE("empty directory") {
    TempDir dir("empty");
    const DatasetStats stats = validate_dataset(dir.path.string());
    CHECK(stats.images == 0);
    CHECK(stats.total_objects == 0);
    CHECK(stats.per_class.empty());
    CHECK(stats.malformed.empty());
  }
  SUBCASE("three files with known contents") {
    TempDir dir("fixture");
    std::ofstream(dir.path / "a.txt") << "0 0.5 0.5 0.2 0.2\n"
                                         "1 0.3 0.3 0.1 0.1\n";
    std::ofstream(dir.path / "b.txt") << "1 0.7 0.2 0.15 0.25\n";
    std::ofstream(dir.path / "c.txt") << "\n";  // blank lines are fine
    const DatasetStats stats = validate_dataset(dir.path.string());
    CHECK(stats.images == 3);
    CHECK(stats.total_objects == 3);
    CHECK(stats.per_class.at(0) == 1);
    CHECK(stats.per_class.at(1) == 2);
    CHECK(stats.per_image_mean == doctest::Approx(1.0));
    CHECK(stats.malformed.empty());
  }
  SUBCASE("malformed lines carry file and line number") {
    TempDir dir("bad");
    std::ofstream(dir.path / "bad.txt") << "0 0.5 0.5 0.2 0.2\n"
                                           "7 1.5 0.5 0.2 0.2\n"   // cx > 1
                                           "oops\n"                 // not numeric
                                           "0 0.5 0.5 0.2 0.2 9\n"; // extra field
    const DatasetStats stats = validate_dataset(dir.path.string());
    CHECK(stats.total_objects == 1);
    REQUIRE(stats.malformed.size() == 3);
    CHECK(stats.malformed[0].rfind("bad.txt:2:", 0) == 0);
    CHECK(stats.malformed[1].rfind("bad.txt:3:", 0) == 0);
    CHECK(stats.malformed[2].rfind("bad.txt:4:", 0) == 0);
  }
  SUBCASE("missing directory throws") {
    CHECK_THROWS_AS(validate_dataset("/nonexistent/annotations"), IoError);
  }
}

TEST_CASE("write_metrics emits key = value lines and the confusion CSV") {
  TempDir dir("metrics");
  EvalResult r;
  r.map50 = 0.75;
  r.map5095 = 0.5;
  r.per_class_ap50[0] = 1.0;
  r.per_class_ap50[1] = 0.5;
  r.confusion = {{3, 0, 1}, {0, 2, 0}, {1, 1, 0}};
  write_metrics(r, dir.path.string());

  std::ifstream metrics(dir.path / "metrics.txt");
  REQUIRE(metrics.good());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(metrics, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "map50 = 0.750000");
  CHECK(lines[1] == "map5095 = 0.500000");
  CHECK(lines[2] == "ap50.class0 = 1.000000");
  CHECK(lines[3] == "ap50.class1 = 0.500000");

  std::ifstream csv(dir.path / "confusion.csv");
  REQUIRE(csv.good());
  std::vector<std::string> rows;
  while (std::getline(csv, line)) rows.push_back(line);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "3,0,1");
  CHECK(rows[1] == "0,2,0");
  CHECK(rows[2] == "1,1,0");
}
