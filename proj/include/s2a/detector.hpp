#pragma once

#include <map>
#include <string>
#include <vector>

#include "s2a/cube.hpp"
#include "s2a/ssa.hpp"
#include "s2a/tensor.hpp"

namespace s2a {

/// Toy five-stage backbone: each stage is a 3x3 stride-2 convolution plus one
/// residual 3x3 block. SSA blocks sit in front of the listed stages.
struct BackboneConfig {
  std::vector<int> stage_channels = {4, 8, 16, 32, 64};
  std::vector<int> ssa_stages = {3, 4, 5};
  int input_channels = 3;
  int ssa_r = 2;
  int ssa_ffn_expansion = 2;
  int ssa_sam_reduction = 4;

  void validate() const;
};

struct Anchor {
  double width = 0.0;   // pixels at input scale
  double height = 0.0;
  int level = 3;        // pyramid level, strides 8/16/32 for 3/4/5
};

struct Detection {
  int class_id = 0;
  double score = 0.0;
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
};

struct GroundTruthBox {
  int class_id = 0;
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;  // normalized to [0, 1]

  void validate(int num_classes) const;
};

struct LossBreakdown {
  double total = 0.0, cls = 0.0, box = 0.0;
};

struct DetectorConfig {
  BackboneConfig backbone;
  int num_classes = 2;
  int input_h = 64, input_w = 64;
  int head_channels = 32;
  bool two_stream = true;
  bool use_ssa = true;
  std::vector<Anchor> anchors;  // defaults to one (stride*4)^2 anchor per level
  double conf_threshold = 0.25;
  double nms_iou = 0.6;
  double exp_clamp = 4.0;

  void validate() const;
  std::vector<Anchor> anchors_for_level(int level) const;
  static int level_stride(int level) { return 1 << level; }
};

std::vector<Anchor> default_anchors();

/// Dense per-(level, anchor, cell) training targets produced by
/// assign_targets. Layouts match the reshaped head maps [A, *, h, w].
struct LevelTargets {
  int level = 3;
  int grid_h = 0, grid_w = 0;
  std::vector<double> obj;       // A*h*w objectness targets
  std::vector<double> cls;       // A*C*h*w one-hot class targets (positives)
  std::vector<double> pos_mask;  // A*h*w, 1 at positives
  std::vector<double> gt_box;    // A*4*h*w pixel-space x1,y1,x2,y2 at positives
};

struct Assignment {
  int gt_index = -1;
  int level = 3;
  int anchor = 0;
  int cell_y = 0, cell_x = 0;
};

struct Assignments {
  std::vector<LevelTargets> levels;
  std::vector<Assignment> entries;
  int positives = 0;
};

class DetectorModel {
 public:
  DetectorModel(const DetectorConfig& cfg, Rng& rng);

  const DetectorConfig& config() const { return cfg_; }

  /// Backbone + neck: fused pyramid features P3, P4, P5.
  std::vector<Tensor> backbone_forward(const Tensor& sa, const Tensor& se);

  /// Per-level raw prediction maps [1, A*(5+C), h, w].
  std::vector<Tensor> head_forward(const std::vector<Tensor>& pyramid);

  std::vector<Tensor> forward(const Tensor& sa, const Tensor& se);

  std::map<std::string, Tensor>& parameters() { return params_; }
  const std::map<std::string, Tensor>& parameters() const { return params_; }

  void zero_grads();
  void sgd_step(double lr);

 private:
  Tensor stream_forward_stage(const Tensor& x, const std::string& prefix, int stage);
  Tensor conv_block(const Tensor& x, const std::string& name, int stride);

  DetectorConfig cfg_;
  std::map<std::string, Tensor> params_;
  std::map<int, SsaConfig> ssa_cfgs_;      // keyed by stage
  std::map<int, SsaParams> ssa_params_;
};

/// AggregatedImage -> [1, 3, H, W] tensor scaled to [0, 1].
Tensor image_to_tensor(const AggregatedImage& img);

Assignments assign_targets(const std::vector<GroundTruthBox>& gts,
                           const DetectorConfig& cfg);

std::vector<Detection> decode(const std::vector<Tensor>& raw,
                              const DetectorConfig& cfg, double conf_threshold);

/// Differentiable Eq.-style loss: BCE objectness over all locations, BCE
/// class logits over positives, (1 - IoU) box loss over positives.
LossBreakdown detection_loss(const std::vector<Tensor>& raw,
                             const Assignments& assignments,
                             const DetectorConfig& cfg, Tensor* loss_graph);

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

/// (1 - epoch/max_epoch)^power * base.
double poly_lr(double base, int epoch, int max_epoch, double power);

struct TrainSample {
  Tensor sa;
  Tensor se;
  std::vector<GroundTruthBox> gts;
};

LossBreakdown train_step(DetectorModel& model, const std::vector<TrainSample>& batch,
                         double lr);

/// Inverse of decode for a GT assigned to (level, anchor, cell); used by the
/// encode/decode consistency checks.
std::vector<double> encode_gt(const GroundTruthBox& gt, const Anchor& anchor,
                              const Assignment& at, const DetectorConfig& cfg);

}  // namespace s2a
