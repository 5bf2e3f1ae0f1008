#pragma once

#include <cstdint>
#include <string>

namespace s2a {

/// Pipeline-wide settings parsed from a plain `key = value` file. Unknown
/// keys are rejected so typos surface immediately.
struct PipelineConfig {
  std::string data_dir = ".";
  std::string out_dir;  // empty -> data_dir

  // Information decoupling.
  int k_sa = 3, k_se = 3;
  double p_low = 0.02, p_high = 0.98;

  // Synthetic corpus generation.
  int syn_images = 80;
  int syn_size = 64;
  int syn_bands = 16;
  int syn_classes = 2;
  int syn_min_objects = 1, syn_max_objects = 2;

  // Dataset split ratios (train : val : test).
  double ratio_train = 7.0, ratio_val = 1.0, ratio_test = 2.0;

  // Training.
  double lr = 0.01;
  double power = 0.9;
  int max_epoch = 40;
  int batch = 8;
  std::uint64_t seed = 0;

  // Detector architecture / inference.
  std::string mode = "sa_se";  // sa_se | sa_sa | sa_only
  int ssa_r = 2;
  int head_channels = 32;
  double conf_threshold = 0.25;
  double nms_iou = 0.6;
  double eval_conf = 0.001;

  static PipelineConfig load(const std::string& path);

  /// Applies one key/value pair (same keys as the config file).
  void set(const std::string& key, const std::string& value);

  void validate() const;
  std::string resolved_out_dir() const { return out_dir.empty() ? data_dir : out_dir; }
};

}  // namespace s2a
