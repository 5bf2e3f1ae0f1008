#include "s2a/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "s2a/common.hpp"
#include "s2a/eval.hpp"

namespace s2a {

namespace {

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// [1, C, h, w] feature map -> n x C token matrix (row-major over the grid).
Tensor to_tokens(const Tensor& x) {
  const int c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return transpose2d(reshape(x, {c, h * w}));
}

Tensor to_map(const Tensor& tokens, int c, int h, int w) {
  return reshape(transpose2d(tokens), {1, c, h, w});
}

Box gt_to_box(const GroundTruthBox& gt, int img_w, int img_h) {
  return Box{(gt.cx - gt.w / 2.0) * img_w, (gt.cy - gt.h / 2.0) * img_h,
             (gt.cx + gt.w / 2.0) * img_w, (gt.cy + gt.h / 2.0) * img_h};
}

}  // namespace

void BackboneConfig::validate() const {
  if (stage_channels.size() != 5)
    throw ValidationError("backbone needs exactly 5 stage channel counts");
  int prev = 1;
  for (int c : stage_channels) {
    if (c <= 0) throw ValidationError("stage channels must be positive");
    if (c < prev) throw ValidationError("stage channels must be non-decreasing");
    prev = c;
  }
  for (int s : ssa_stages)
    if (s < 3 || s > 5)
      throw ValidationError("SSA insertion stages must lie in {3, 4, 5}");
  if (input_channels <= 0) throw ValidationError("input channels must be positive");
  if (ssa_r <= 0) throw ValidationError("SSA reduction rate must be positive");
}

void GroundTruthBox::validate(int num_classes) const {
  if (class_id < 0 || class_id >= num_classes)
    throw ValidationError("ground-truth class id out of range");
  if (cx < 0.0 || cx > 1.0 || cy < 0.0 || cy > 1.0)
    throw ValidationError("ground-truth center must be normalized to [0, 1]");
  if (w <= 0.0 || w > 1.0 || h <= 0.0 || h > 1.0)
    throw ValidationError("ground-truth size must lie in (0, 1]");
}

void DetectorConfig::validate() const {
  backbone.validate();
  if (num_classes <= 0) throw ValidationError("need at least one class");
  if (input_h <= 0 || input_w <= 0 || input_h % 32 != 0 || input_w % 32 != 0)
    throw ValidationError("input size must be positive and divisible by 32");
  if (head_channels <= 0) throw ValidationError("head channels must be positive");
  for (const Anchor& a : anchors) {
    if (a.width <= 0.0 || a.height <= 0.0)
      throw ValidationError("anchors need positive dimensions");
    if (a.level < 3 || a.level > 5)
      throw ValidationError("anchor level must lie in {3, 4, 5}");
  }
  for (int s : backbone.ssa_stages) {
    const int gh = input_h >> (s - 1), gw = input_w >> (s - 1);
    if (gh % backbone.ssa_r != 0 || gw % backbone.ssa_r != 0)
      throw ValidationError("SSA grid at stage " + std::to_string(s) +
                            " is not divisible by the reduction rate");
  }
}

std::vector<Anchor> DetectorConfig::anchors_for_level(int level) const {
  std::vector<Anchor> out;
  for (const Anchor& a : anchors)
    if (a.level == level) out.push_back(a);
  return out;
}

std::vector<Anchor> default_anchors() {
  std::vector<Anchor> out;
  for (int level = 3; level <= 5; ++level) {
    const double side = 4.0 * DetectorConfig::level_stride(level);
    out.push_back(Anchor{side, side, level});
  }
  return out;
}

DetectorModel::DetectorModel(const DetectorConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg_.anchors.empty()) cfg_.anchors = default_anchors();
  cfg_.validate();
  for (int level = 3; level <= 5; ++level)
    if (cfg_.anchors_for_level(level).empty())
      throw ValidationError("every pyramid level needs at least one anchor");

  const auto& bb = cfg_.backbone;
  auto conv_param = [&](const std::string& name, int out_c, int in_c, int k) {
    const double stddev = std::sqrt(2.0 / (in_c * k * k));
    params_.emplace(name + ".w",
                    Tensor::randn({out_c, in_c, k, k}, rng, stddev, true));
    params_.emplace(name + ".b", Tensor::zeros({out_c, 1, 1}, true));
  };

  const std::vector<std::string> streams =
      cfg_.two_stream ? std::vector<std::string>{"a", "e"}
                      : std::vector<std::string>{"a"};
  for (const std::string& stream : streams) {
    int in_c = bb.input_channels;
    for (int stage = 1; stage <= 5; ++stage) {
      const int out_c = bb.stage_channels[stage - 1];
      const std::string prefix = "backbone." + stream + ".stage" + std::to_string(stage);
      conv_param(prefix + ".down", out_c, in_c, 3);
      conv_param(prefix + ".res1", out_c, out_c, 3);
      conv_param(prefix + ".res2", out_c, out_c, 3);
      in_c = out_c;
    }
  }

  if (cfg_.two_stream && cfg_.use_ssa) {
    for (int stage : bb.ssa_stages) {
      SsaConfig scfg;
      scfg.d = bb.stage_channels[stage - 2];
      scfg.d_k = scfg.d;
      scfg.d_v = scfg.d;
      scfg.r = bb.ssa_r;
      scfg.ffn_expansion = bb.ssa_ffn_expansion;
      scfg.sam_reduction = bb.ssa_sam_reduction;
      scfg.h = cfg_.input_h >> (stage - 1);
      scfg.w = cfg_.input_w >> (stage - 1);
      scfg.validate();
      SsaParams sp = init_ssa_params(scfg, rng, 0.1);
      ssa_cfgs_.emplace(stage, scfg);
      ssa_params_.emplace(stage, sp);
      for (auto& [name, t] : sp.named("ssa.stage" + std::to_string(stage)))
        params_.emplace(name, t);
    }
  }

  const int pred_c =
      static_cast<int>(cfg_.anchors_for_level(3).size()) * (5 + cfg_.num_classes);
  for (int level = 3; level <= 5; ++level) {
    const int in_c = bb.stage_channels[level - 1];
    const int a = static_cast<int>(cfg_.anchors_for_level(level).size());
    const std::string prefix = "head.l" + std::to_string(level);
    conv_param(prefix + ".hidden", cfg_.head_channels, in_c, 1);
    conv_param(prefix + ".pred", a * (5 + cfg_.num_classes), cfg_.head_channels, 1);
  }
  (void)pred_c;
}

Tensor DetectorModel::conv_block(const Tensor& x, const std::string& name, int stride) {
  return add(conv2d(x, params_.at(name + ".w"), stride, 1), params_.at(name + ".b"));
}

Tensor DetectorModel::stream_forward_stage(const Tensor& x, const std::string& prefix,
                                           int stage) {
  const std::string name = "backbone." + prefix + ".stage" + std::to_string(stage);
  Tensor y = relu(conv_block(x, name + ".down", 2));
  Tensor r = relu(conv_block(y, name + ".res1", 1));
  r = conv_block(r, name + ".res2", 1);
  return relu(add(y, r));
}

std::vector<Tensor> DetectorModel::backbone_forward(const Tensor& sa, const Tensor& se) {
  auto check_input = [&](const Tensor& t, const char* what) {
    if (!t.defined() || t.shape().size() != 4 || t.dim(0) != 1 ||
        t.dim(1) != cfg_.backbone.input_channels || t.dim(2) != cfg_.input_h ||
        t.dim(3) != cfg_.input_w)
      throw ValidationError(std::string(what) + " input has the wrong shape");
  };
  check_input(sa, "spatial-stream");
  if (cfg_.two_stream) check_input(se, "spectral-stream");

  Tensor xa = sa;
  Tensor xe = cfg_.two_stream ? se : Tensor();
  std::vector<Tensor> pyramid;
  const auto& bb = cfg_.backbone;
  for (int stage = 1; stage <= 5; ++stage) {
    if (cfg_.two_stream && cfg_.use_ssa &&
        std::find(bb.ssa_stages.begin(), bb.ssa_stages.end(), stage) !=
            bb.ssa_stages.end()) {
      const SsaConfig& scfg = ssa_cfgs_.at(stage);
      StreamPair in{to_tokens(xa), to_tokens(xe)};
      StreamPair corr = ssa_forward(in, scfg, ssa_params_.at(stage));
      xa = add(xa, to_map(corr.a, scfg.d, scfg.h, scfg.w));
      xe = add(xe, to_map(corr.e, scfg.d, scfg.h, scfg.w));
    }
    xa = stream_forward_stage(xa, "a", stage);
    if (cfg_.two_stream) xe = stream_forward_stage(xe, "e", stage);
    if (stage >= 3) pyramid.push_back(cfg_.two_stream ? add(xa, xe) : xa);
  }
  return pyramid;
}

std::vector<Tensor> DetectorModel::head_forward(const std::vector<Tensor>& pyramid) {
  if (pyramid.size() != 3) throw ValidationError("head expects three pyramid levels");
  std::vector<Tensor> raw;
  for (int li = 0; li < 3; ++li) {
    const std::string name = "head.l" + std::to_string(3 + li);
    Tensor h = relu(add(conv2d(pyramid[li], params_.at(name + ".hidden.w"), 1, 0),
                        params_.at(name + ".hidden.b")));
    raw.push_back(add(conv2d(h, params_.at(name + ".pred.w"), 1, 0),
                      params_.at(name + ".pred.b")));
  }
  return raw;
}

std::vector<Tensor> DetectorModel::forward(const Tensor& sa, const Tensor& se) {
  return head_forward(backbone_forward(sa, se));
}

void DetectorModel::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void DetectorModel::sgd_step(double lr) {
  for (auto& [name, t] : params_) {
    auto& v = t.values();
    const auto& g = t.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
}

Tensor image_to_tensor(const AggregatedImage& img) {
  std::vector<double> data(static_cast<std::size_t>(3) * img.height * img.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        data[(static_cast<std::size_t>(c) * img.height + y) * img.width + x] =
            img.data[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] / 255.0;
  return Tensor::from_data({1, 3, img.height, img.width}, std::move(data));
}

Assignments assign_targets(const std::vector<GroundTruthBox>& gts,
                           const DetectorConfig& cfg) {
  Assignments out;
  for (int level = 3; level <= 5; ++level) {
    LevelTargets lt;
    lt.level = level;
    lt.grid_h = cfg.input_h / DetectorConfig::level_stride(level);
    lt.grid_w = cfg.input_w / DetectorConfig::level_stride(level);
    const int a = static_cast<int>(cfg.anchors_for_level(level).size());
    const std::size_t cells = static_cast<std::size_t>(lt.grid_h) * lt.grid_w;
    lt.obj.assign(a * cells, 0.0);
    lt.cls.assign(a * cfg.num_classes * cells, 0.0);
    lt.pos_mask.assign(a * cells, 0.0);
    lt.gt_box.assign(a * 4 * cells, 0.0);
    out.levels.push_back(std::move(lt));
  }

  for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
    const GroundTruthBox& gt = gts[g];
    gt.validate(cfg.num_classes);
    const Box gt_px = gt_to_box(gt, cfg.input_w, cfg.input_h);

    // Best (level, anchor) by IoU of the anchor box, centered on the cell
    // that holds the GT center, against the GT box. Ties prefer the lower
    // level, then the lower anchor index.
    double best_iou = -1.0;
    Assignment best;
    for (int level = 3; level <= 5; ++level) {
      const LevelTargets& lt = out.levels[level - 3];
      const double stride = DetectorConfig::level_stride(level);
      const int cx = std::min(lt.grid_w - 1,
                              std::max(0, static_cast<int>(gt.cx * cfg.input_w / stride)));
      const int cy = std::min(lt.grid_h - 1,
                              std::max(0, static_cast<int>(gt.cy * cfg.input_h / stride)));
      const auto anchors = cfg.anchors_for_level(level);
      for (int ai = 0; ai < static_cast<int>(anchors.size()); ++ai) {
        const double acx = (cx + 0.5) * stride, acy = (cy + 0.5) * stride;
        const Box ab{acx - anchors[ai].width / 2.0, acy - anchors[ai].height / 2.0,
                     acx + anchors[ai].width / 2.0, acy + anchors[ai].height / 2.0};
        const double v = iou(ab, gt_px);
        if (v > best_iou) {
          best_iou = v;
          best = Assignment{g, level, ai, cy, cx};
        }
      }
    }

    LevelTargets& lt = out.levels[best.level - 3];
    const std::size_t cells = static_cast<std::size_t>(lt.grid_h) * lt.grid_w;
    const std::size_t cell = static_cast<std::size_t>(best.cell_y) * lt.grid_w + best.cell_x;
    const std::size_t loc = best.anchor * cells + cell;
    if (lt.pos_mask[loc] != 0.0) continue;  // slot already claimed by an earlier GT
    lt.pos_mask[loc] = 1.0;
    lt.obj[loc] = 1.0;
    lt.cls[(static_cast<std::size_t>(best.anchor) * cfg.num_classes + gt.class_id) *
               cells + cell] = 1.0;
    const std::size_t box_base = static_cast<std::size_t>(best.anchor) * 4 * cells + cell;
    lt.gt_box[box_base + 0 * cells] = gt_px.x_min;
    lt.gt_box[box_base + 1 * cells] = gt_px.y_min;
    lt.gt_box[box_base + 2 * cells] = gt_px.x_max;
    lt.gt_box[box_base + 3 * cells] = gt_px.y_max;
    out.entries.push_back(best);
    ++out.positives;
  }
  return out;
}

std::vector<Detection> decode(const std::vector<Tensor>& raw,
                              const DetectorConfig& cfg, double conf_threshold) {
  if (raw.size() != 3) throw ValidationError("decode expects three raw levels");
  std::vector<Detection> dets;
  const int c_cls = cfg.num_classes;
  for (int li = 0; li < 3; ++li) {
    const int level = 3 + li;
    const double stride = DetectorConfig::level_stride(level);
    const auto anchors = cfg.anchors_for_level(level);
    const int a_count = static_cast<int>(anchors.size());
    const Tensor& t = raw[li];
    const int h = t.dim(2), w = t.dim(3);
    if (t.dim(1) != a_count * (5 + c_cls))
      throw ValidationError("raw map channel count does not match anchors/classes");
    const auto& v = t.values();
    auto at = [&](int ch, int i, int j) {
      return v[(static_cast<std::size_t>(ch) * h + i) * w + j];
    };
    for (int a = 0; a < a_count; ++a)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const int base = a * (5 + c_cls);
          const double cx = (j + sigmoid_scalar(at(base + 0, i, j))) * stride;
          const double cy = (i + sigmoid_scalar(at(base + 1, i, j))) * stride;
          const double tw = std::clamp(at(base + 2, i, j), -cfg.exp_clamp, cfg.exp_clamp);
          const double th = std::clamp(at(base + 3, i, j), -cfg.exp_clamp, cfg.exp_clamp);
          const double bw = anchors[a].width * std::exp(tw);
          const double bh = anchors[a].height * std::exp(th);
          int best_c = 0;
          for (int c = 1; c < c_cls; ++c)
            if (at(base + 5 + c, i, j) > at(base + 5 + best_c, i, j)) best_c = c;
          const double score = sigmoid_scalar(at(base + 4, i, j)) *
                               sigmoid_scalar(at(base + 5 + best_c, i, j));
          if (score < conf_threshold) continue;
          Detection d;
          d.class_id = best_c;
          d.score = score;
          d.x_min = std::clamp(cx - bw / 2.0, 0.0, static_cast<double>(cfg.input_w));
          d.x_max = std::clamp(cx + bw / 2.0, 0.0, static_cast<double>(cfg.input_w));
          d.y_min = std::clamp(cy - bh / 2.0, 0.0, static_cast<double>(cfg.input_h));
          d.y_max = std::clamp(cy + bh / 2.0, 0.0, static_cast<double>(cfg.input_h));
          if (d.x_max <= d.x_min || d.y_max <= d.y_min) continue;  // clipped away
          dets.push_back(d);
        }
  }
  return dets;
}

LossBreakdown detection_loss(const std::vector<Tensor>& raw,
                             const Assignments& assignments,
                             const DetectorConfig& cfg, Tensor* loss_graph) {
  if (raw.size() != 3 || assignments.levels.size() != 3)
    throw ValidationError("loss expects three levels of predictions and targets");

  Tensor obj_sum, cls_sum, box_sum;
  const int c_cls = cfg.num_classes;

  for (int li = 0; li < 3; ++li) {
    const LevelTargets& lt = assignments.levels[li];
    const auto anchors = cfg.anchors_for_level(3 + li);
    const int a_count = static_cast<int>(anchors.size());
    const int h = lt.grid_h, w = lt.grid_w;
    const double stride = DetectorConfig::level_stride(3 + li);
    Tensor map = reshape(raw[li], {a_count, 5 + c_cls, h, w});
    std::vector<Tensor> parts = split(map, 1, {1, 1, 1, 1, 1, c_cls});
    const Tensor& tx = parts[0];
    const Tensor& ty = parts[1];
    const Tensor& tw = parts[2];
    const Tensor& th = parts[3];
    const Tensor& obj = parts[4];
    const Tensor& cls = parts[5];

    Tensor obj_t = Tensor::from_data({a_count, 1, h, w}, lt.obj);
    Tensor cls_t = Tensor::from_data({a_count, c_cls, h, w}, lt.cls);
    Tensor mask = Tensor::from_data({a_count, 1, h, w}, lt.pos_mask);

    Tensor obj_term = sum_all(bce_with_logits(obj, obj_t));
    Tensor cls_term = sum_all(mul(bce_with_logits(cls, cls_t), mask));
    obj_sum = obj_sum.defined() ? add(obj_sum, obj_term) : obj_term;
    cls_sum = cls_sum.defined() ? add(cls_sum, cls_term) : cls_term;

    // Differentiable decode of the positive boxes; matches decode() except
    // boxes stay unclipped so edge gradients survive.
    std::vector<double> gx(static_cast<std::size_t>(h) * w), gy(gx.size());
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        gx[static_cast<std::size_t>(i) * w + j] = j;
        gy[static_cast<std::size_t>(i) * w + j] = i;
      }
    Tensor grid_x = Tensor::from_data({1, 1, h, w}, gx);
    Tensor grid_y = Tensor::from_data({1, 1, h, w}, gy);
    std::vector<double> aw(a_count), ah(a_count);
    for (int a = 0; a < a_count; ++a) {
      aw[a] = anchors[a].width;
      ah[a] = anchors[a].height;
    }
    Tensor anchor_w = Tensor::from_data({a_count, 1, 1, 1}, aw);
    Tensor anchor_h = Tensor::from_data({a_count, 1, 1, 1}, ah);

    Tensor cx = scale(add(sigmoid(tx), grid_x), stride);
    Tensor cy = scale(add(sigmoid(ty), grid_y), stride);
    Tensor bw = mul(anchor_w, exp_op(clamp(tw, -cfg.exp_clamp, cfg.exp_clamp)));
    Tensor bh = mul(anchor_h, exp_op(clamp(th, -cfg.exp_clamp, cfg.exp_clamp)));
    Tensor x1 = sub(cx, scale(bw, 0.5)), x2 = add(cx, scale(bw, 0.5));
    Tensor y1 = sub(cy, scale(bh, 0.5)), y2 = add(cy, scale(bh, 0.5));

    std::vector<Tensor> gt_parts =
        split(Tensor::from_data({a_count, 4, h, w}, lt.gt_box), 1, {1, 1, 1, 1});
    Tensor iw = relu(sub(minimum(x2, gt_parts[2]), maximum(x1, gt_parts[0])));
    Tensor ih = relu(sub(minimum(y2, gt_parts[3]), maximum(y1, gt_parts[1])));
    Tensor inter = mul(iw, ih);
    Tensor area_p = mul(sub(x2, x1), sub(y2, y1));
    Tensor area_g = mul(sub(gt_parts[2], gt_parts[0]), sub(gt_parts[3], gt_parts[1]));
    Tensor uni = add_scalar(sub(add(area_p, area_g), inter), 1e-12);
    Tensor one_minus_iou = add_scalar(neg(divide(inter, uni)), 1.0);
    Tensor box_term = sum_all(mul(one_minus_iou, mask));
    box_sum = box_sum.defined() ? add(box_sum, box_term) : box_term;
  }

  // Every term is normalized by the positive count: keeping the objectness
  // sum on the same scale as the box and class terms is what lets the
  // (sparse) positive cells outweigh the sea of easy negatives.
  const double pos_norm = 1.0 / std::max(1, assignments.positives);
  Tensor cls_total = scale(add(obj_sum, cls_sum), pos_norm);
  Tensor box_total = scale(box_sum, pos_norm);
  Tensor total = add(cls_total, box_total);
  if (loss_graph) *loss_graph = total;

  LossBreakdown out;
  out.cls = cls_total.item();
  out.box = box_total.item();
  out.total = out.cls + out.box;
  return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.x_min != b.x_min) return a.x_min < b.x_min;
    return a.y_min < b.y_min;
  });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id != d.class_id) continue;
      const Box a{d.x_min, d.y_min, d.x_max, d.y_max};
      const Box b{k.x_min, k.y_min, k.x_max, k.y_max};
      if (iou(a, b) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

double poly_lr(double base, int epoch, int max_epoch, double power) {
  if (max_epoch <= 0) throw ValidationError("max_epoch must be positive");
  const double frac = 1.0 - static_cast<double>(epoch) / max_epoch;
  return base * std::pow(std::max(0.0, frac), power);
}

LossBreakdown train_step(DetectorModel& model, const std::vector<TrainSample>& batch,
                         double lr) {
  if (batch.empty()) throw ValidationError("empty training batch");
  model.zero_grads();

  Tensor total;
  LossBreakdown acc;
  for (const TrainSample& sample : batch) {
    std::vector<Tensor> raw = model.forward(sample.sa, sample.se);
    Assignments assignments = assign_targets(sample.gts, model.config());
    Tensor loss;
    LossBreakdown lb = detection_loss(raw, assignments, model.config(), &loss);
    acc.cls += lb.cls;
    acc.box += lb.box;
    total = total.defined() ? add(total, loss) : loss;
  }
  const double inv_n = 1.0 / batch.size();
  total = scale(total, inv_n);
  acc.cls *= inv_n;
  acc.box *= inv_n;
  acc.total = acc.cls + acc.box;
  if (!std::isfinite(acc.total)) {
    std::ostringstream msg;
    msg << "non-finite training loss (cls=" << acc.cls << ", box=" << acc.box << ")";
    throw NumericError(msg.str());
  }

  backward(total);
  model.sgd_step(lr);
  model.zero_grads();
  return acc;
}

std::vector<double> encode_gt(const GroundTruthBox& gt, const Anchor& anchor,
                              const Assignment& at, const DetectorConfig& cfg) {
  const double stride = DetectorConfig::level_stride(at.level);
  const double cx_cells = gt.cx * cfg.input_w / stride;
  const double cy_cells = gt.cy * cfg.input_h / stride;
  auto logit = [](double p) {
    const double q = std::clamp(p, 1e-9, 1.0 - 1e-9);
    return std::log(q / (1.0 - q));
  };
  return {logit(cx_cells - at.cell_x), logit(cy_cells - at.cell_y),
          std::log(gt.w * cfg.input_w / anchor.width),
          std::log(gt.h * cfg.input_h / anchor.height)};
}

}  // namespace s2a
