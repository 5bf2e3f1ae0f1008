#include "s2a/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "s2a/checkpoint.hpp"
#include "s2a/common.hpp"
#include "s2a/detector.hpp"
#include "s2a/eval.hpp"
#include "s2a/gradcheck.hpp"
#include "s2a/hid.hpp"
#include "s2a/synthetic.hpp"

namespace s2a {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> stems_with_extension(const fs::path& dir,
                                              const std::string& ext) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ext)
      out.push_back(entry.path().stem().string());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest: " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

std::vector<GroundTruthBox> read_annotations(const fs::path& file, int num_classes) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read annotations: " + file.string());
  std::vector<GroundTruthBox> gts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    GroundTruthBox gt;
    if (!(ls >> gt.class_id >> gt.cx >> gt.cy >> gt.w >> gt.h))
      throw ValidationError(file.string() + ":" + std::to_string(line_no) +
                            ": expected `class cx cy w h`");
    gt.validate(num_classes);
    gts.push_back(gt);
  }
  return gts;
}

DetectorConfig detector_config(const PipelineConfig& cfg, int input_h, int input_w) {
  DetectorConfig dc;
  dc.num_classes = cfg.syn_classes;
  dc.input_h = input_h;
  dc.input_w = input_w;
  dc.head_channels = cfg.head_channels;
  dc.backbone.ssa_r = cfg.ssa_r;
  dc.two_stream = cfg.mode != "sa_only";
  dc.use_ssa = dc.two_stream;
  dc.conf_threshold = cfg.conf_threshold;
  dc.nms_iou = cfg.nms_iou;
  return dc;
}

struct LoadedImagePair {
  Tensor sa, se;
  int height = 0, width = 0;
};

LoadedImagePair load_pair(const PipelineConfig& cfg, const fs::path& images_dir,
                          const std::string& id) {
  const AggregatedImage sa_img = read_image((images_dir / (id + "_sa.ppm")).string());
  LoadedImagePair pair;
  pair.height = sa_img.height;
  pair.width = sa_img.width;
  pair.sa = image_to_tensor(sa_img);
  if (cfg.mode == "sa_se")
    pair.se = image_to_tensor(read_image((images_dir / (id + "_se.ppm")).string()));
  else if (cfg.mode == "sa_sa")
    pair.se = pair.sa;
  return pair;
}

void draw_box(AggregatedImage& img, const Detection& det) {
  static const std::uint8_t palette[3][3] = {
      {0, 0, 255}, {255, 255, 0}, {255, 0, 0}};  // blue / yellow / red
  const std::uint8_t* color = palette[det.class_id % 3];
  const int x0 = std::clamp(static_cast<int>(std::lround(det.x_min)), 0, img.width - 1);
  const int x1 = std::clamp(static_cast<int>(std::lround(det.x_max)) - 1, 0, img.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::lround(det.y_min)), 0, img.height - 1);
  const int y1 = std::clamp(static_cast<int>(std::lround(det.y_max)) - 1, 0, img.height - 1);
  for (int x = x0; x <= x1; ++x)
    for (int y : {y0, y1})
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
  for (int y = y0; y <= y1; ++y)
    for (int x : {x0, x1})
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
}

}  // namespace

void cmd_generate(const PipelineConfig& cfg) {
  SyntheticSceneSpec spec;
  spec.image_size = cfg.syn_size;
  spec.bands = cfg.syn_bands;
  spec.num_images = cfg.syn_images;
  spec.num_classes = cfg.syn_classes;
  spec.min_objects = cfg.syn_min_objects;
  spec.max_objects = cfg.syn_max_objects;
  // Object sizes scale with the image so small corpora stay valid.
  spec.min_object_size = std::max(4, spec.min_object_size * cfg.syn_size / 64);
  spec.max_object_size =
      std::max(spec.min_object_size, spec.max_object_size * cfg.syn_size / 64);
  spec.seed = cfg.seed;
  generate_corpus(spec, cfg.resolved_out_dir());
}

void cmd_decouple(const PipelineConfig& cfg) {
  const fs::path cubes = fs::path(cfg.data_dir) / "cubes";
  const fs::path images = fs::path(cfg.resolved_out_dir()) / "images";
  const std::vector<std::string> ids = stems_with_extension(cubes, ".hdr");
  if (ids.empty()) {
    std::cerr << "warning: no cubes found under " << cubes.string() << "\n";
    return;
  }
  fs::create_directories(images);
  GenerationParams gen;
  gen.low_percentile = cfg.p_low;
  gen.high_percentile = cfg.p_high;
  for (const std::string& id : ids) {
    try {
      const HyperCube cube = read_cube((cubes / id).string());
      auto [sa, se] = decouple(cube, cfg.k_se, cfg.k_sa, gen);
      render_image(sa, (images / (id + "_sa.ppm")).string());
      render_image(se, (images / (id + "_se.ppm")).string());
      std::ofstream prov(images / (id + "_hid.txt"));
      prov << sa.provenance << "\n" << se.provenance << "\n";
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping cube " << id << ": " << e.what() << "\n";
    }
  }
}

void cmd_bandselect(const PipelineConfig& cfg) {
  const fs::path cubes = fs::path(cfg.data_dir) / "cubes";
  const fs::path out_dir(cfg.resolved_out_dir());
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "bandselect.txt");
  if (!out) throw IoError("cannot write bandselect.txt");
  char buf[64];
  for (const std::string& id : stems_with_extension(cubes, ".hdr")) {
    const HyperCube cube = read_cube((cubes / id).string());
    const BandSelection sel = select_bands(cube, cfg.k_sa);
    out << id << " objective=";
    std::snprintf(buf, sizeof(buf), "%.9e", sel.objective_value);
    out << buf << " boundaries=";
    for (std::size_t i = 0; i < sel.segment_boundaries.size(); ++i)
      out << (i ? "," : "") << sel.segment_boundaries[i];
    out << " representatives=";
    for (std::size_t i = 0; i < sel.representatives.size(); ++i)
      out << (i ? "," : "") << sel.representatives[i];
    out << "\n";
  }
}

void cmd_pca(const PipelineConfig& cfg) {
  const fs::path cubes = fs::path(cfg.data_dir) / "cubes";
  const fs::path out_dir(cfg.resolved_out_dir());
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "pca.txt");
  if (!out) throw IoError("cannot write pca.txt");
  char buf[64];
  for (const std::string& id : stems_with_extension(cubes, ".hdr")) {
    const PcaModel model = fit_pca(read_cube((cubes / id).string()), cfg.k_se);
    out << id << " explained_variance=";
    for (std::size_t i = 0; i < model.explained_variance.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.9e", model.explained_variance[i]);
      out << (i ? "," : "") << buf;
    }
    out << "\n";
  }
}

void cmd_split(const PipelineConfig& cfg) {
  const fs::path ann_dir = fs::path(cfg.data_dir) / "annotations";
  const std::vector<std::string> ids = stems_with_extension(ann_dir, ".txt");
  if (ids.size() < 10)
    throw ValidationError("split needs at least 10 annotated images, found " +
                          std::to_string(ids.size()));

  std::map<std::string, std::map<int, long long>> per_image_counts;
  std::map<int, long long> global_counts;
  long long global_total = 0;
  for (const std::string& id : ids)
    for (const GroundTruthBox& gt :
         read_annotations(ann_dir / (id + ".txt"), cfg.syn_classes)) {
      ++per_image_counts[id][gt.class_id];
      ++global_counts[gt.class_id];
      ++global_total;
    }

  // Largest-remainder split sizes for exact proportions when they divide.
  const double ratio_sum = cfg.ratio_train + cfg.ratio_val + cfg.ratio_test;
  const double ratios[3] = {cfg.ratio_train, cfg.ratio_val, cfg.ratio_test};
  std::size_t sizes[3];
  double fracs[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = ids.size() * ratios[i] / ratio_sum;
    sizes[i] = static_cast<std::size_t>(exact);
    fracs[i] = exact - sizes[i];
    assigned += sizes[i];
  }
  while (assigned < ids.size()) {
    const int best = static_cast<int>(std::max_element(fracs, fracs + 3) - fracs);
    ++sizes[best];
    fracs[best] = -1.0;
    ++assigned;
  }

  // Shuffle until every class proportion in every split sits within 10%
  // relative of its global proportion, keeping the best-balanced shuffle
  // seen in case the target is unattainable (tiny splits quantize the
  // proportions too coarsely to always hit it).
  Rng rng(cfg.seed);
  std::vector<std::string> order = ids;
  std::vector<std::string> splits[3];
  double best_dev = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < 100 && best_dev > 0.10; ++attempt) {
    rng.shuffle(order);
    std::vector<std::string> candidate[3];
    std::size_t at = 0;
    for (int i = 0; i < 3; ++i) {
      candidate[i].assign(order.begin() + at, order.begin() + at + sizes[i]);
      at += sizes[i];
    }

    double dev = 0.0;
    for (int i = 0; i < 3; ++i) {
      std::map<int, long long> counts;
      long long total = 0;
      for (const std::string& id : candidate[i])
        for (const auto& [cls, n] : per_image_counts[id]) {
          counts[cls] += n;
          total += n;
        }
      for (const auto& [cls, global_n] : global_counts) {
        const double global_prop = static_cast<double>(global_n) / global_total;
        const double split_prop =
            total ? static_cast<double>(counts[cls]) / total : 0.0;
        dev = std::max(dev, std::abs(split_prop - global_prop) / global_prop);
      }
    }
    if (dev < best_dev) {
      best_dev = dev;
      for (int i = 0; i < 3; ++i) splits[i] = candidate[i];
    }
  }
  if (best_dev > 0.10)
    std::cerr << "warning: class proportions off by up to "
              << static_cast<int>(best_dev * 100)
              << "% relative after 100 shuffles; keeping the best split\n";

  const fs::path split_dir = fs::path(cfg.resolved_out_dir()) / "splits";
  fs::create_directories(split_dir);
  const char* names[3] = {"train.txt", "val.txt", "test.txt"};
  for (int i = 0; i < 3; ++i) {
    std::ofstream out(split_dir / names[i]);
    if (!out) throw IoError("cannot write split manifest");
    for (const std::string& id : splits[i]) out << id << "\n";
  }
}

void cmd_train(const PipelineConfig& cfg) {
  const fs::path root(cfg.data_dir);
  const fs::path out_root(cfg.resolved_out_dir());
  const fs::path images = root / "images";
  const fs::path ann_dir = root / "annotations";
  const fs::path manifest = root / "splits" / "train.txt";

  std::vector<std::string> ids = fs::exists(manifest)
                                     ? read_manifest(manifest)
                                     : stems_with_extension(ann_dir, ".txt");
  if (ids.empty()) throw ValidationError("no training images found");
  std::sort(ids.begin(), ids.end());

  std::vector<TrainSample> samples;
  int input_h = 0, input_w = 0;
  for (const std::string& id : ids) {
    LoadedImagePair pair = load_pair(cfg, images, id);
    if (input_h == 0) {
      input_h = pair.height;
      input_w = pair.width;
    } else if (pair.height != input_h || pair.width != input_w) {
      throw ValidationError("image " + id + " size differs from the rest");
    }
    TrainSample sample;
    sample.sa = pair.sa;
    sample.se = pair.se;
    sample.gts = read_annotations(ann_dir / (id + ".txt"), cfg.syn_classes);
    samples.push_back(std::move(sample));
  }

  Rng model_rng(cfg.seed);
  DetectorModel model(detector_config(cfg, input_h, input_w), model_rng);
  Rng order_rng(cfg.seed + 0x9e3779b97f4a7c15ull);

  const fs::path ckpt_dir = out_root / "checkpoints";
  fs::create_directories(ckpt_dir);
  std::ofstream log(out_root / "train_log.txt");
  if (!log) throw IoError("cannot write train_log.txt");

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double best_loss = 0.0;
  bool have_best = false;
  char line[160];
  for (int epoch = 0; epoch < cfg.max_epoch; ++epoch) {
    const double lr = poly_lr(cfg.lr, epoch, cfg.max_epoch, cfg.power);
    order_rng.shuffle(order);
    LossBreakdown epoch_loss;
    int steps = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch) {
      std::vector<TrainSample> batch;
      for (std::size_t i = at; i < std::min(order.size(), at + cfg.batch); ++i)
        batch.push_back(samples[order[i]]);
      LossBreakdown lb;
      try {
        lb = train_step(model, batch, lr);
      } catch (const NumericError&) {
        save_checkpoint(model.parameters(), (ckpt_dir / "last_good.ckpt").string());
        throw;
      }
      epoch_loss.cls += lb.cls;
      epoch_loss.box += lb.box;
      ++steps;
    }
    epoch_loss.cls /= steps;
    epoch_loss.box /= steps;
    epoch_loss.total = epoch_loss.cls + epoch_loss.box;
    std::snprintf(line, sizeof(line), "epoch %d lr %.8f cls %.6f box %.6f total %.6f\n",
                  epoch, lr, epoch_loss.cls, epoch_loss.box, epoch_loss.total);
    log << line;
    save_checkpoint(model.parameters(), (ckpt_dir / "final.ckpt").string());
    if (!have_best || epoch_loss.total < best_loss) {
      best_loss = epoch_loss.total;
      have_best = true;
      save_checkpoint(model.parameters(), (ckpt_dir / "best.ckpt").string());
    }
  }
}

void cmd_detect(const PipelineConfig& cfg) {
  const fs::path root(cfg.data_dir);
  const fs::path out_root(cfg.resolved_out_dir());
  const fs::path images = root / "images";
  const fs::path manifest = root / "splits" / "test.txt";

  std::vector<std::string> ids;
  if (fs::exists(manifest)) {
    ids = read_manifest(manifest);
  } else {
    for (const std::string& stem : stems_with_extension(images, ".ppm"))
      if (stem.size() > 3 && stem.substr(stem.size() - 3) == "_sa")
        ids.push_back(stem.substr(0, stem.size() - 3));
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw ValidationError("no images to run detection on");

  const LoadedImagePair probe = load_pair(cfg, images, ids.front());
  Rng rng(cfg.seed);
  DetectorModel model(detector_config(cfg, probe.height, probe.width), rng);
  restore_into(model.parameters(),
               (out_root / "checkpoints" / "final.ckpt").string());

  const fs::path det_dir = out_root / "detections";
  const fs::path overlay_dir = out_root / "overlays";
  fs::create_directories(det_dir);
  fs::create_directories(overlay_dir);
  char line[200];
  for (const std::string& id : ids) {
    const LoadedImagePair pair = load_pair(cfg, images, id);
    const std::vector<Tensor> raw = model.forward(pair.sa, pair.se);
    const std::vector<Detection> dets =
        nms(decode(raw, model.config(), cfg.conf_threshold), cfg.nms_iou);

    std::ofstream out(det_dir / (id + ".txt"));
    if (!out) throw IoError("cannot write detections for " + id);
    AggregatedImage overlay = read_image((images / (id + "_sa.ppm")).string());
    for (const Detection& det : dets) {
      std::snprintf(line, sizeof(line), "%d %.6f %.6f %.6f %.6f %.6f\n",
                    det.class_id, det.score, det.x_min, det.y_min, det.x_max,
                    det.y_max);
      out << line;
      draw_box(overlay, det);
    }
    render_image(overlay, (overlay_dir / (id + ".ppm")).string());
  }
}

void cmd_eval(const PipelineConfig& cfg) {
  const fs::path root(cfg.data_dir);
  const fs::path out_root(cfg.resolved_out_dir());
  const fs::path det_dir = out_root / "detections";
  const fs::path ann_dir = root / "annotations";
  const fs::path images = root / "images";

  const std::vector<std::string> ids = stems_with_extension(det_dir, ".txt");
  if (ids.empty()) throw ValidationError("no detection files under " + det_dir.string());

  std::vector<EvalDetection> dets;
  std::vector<EvalGroundTruth> gts;
  for (int image_id = 0; image_id < static_cast<int>(ids.size()); ++image_id) {
    const std::string& id = ids[image_id];
    const fs::path ann_file = ann_dir / (id + ".txt");
    if (!fs::exists(ann_file))
      throw ValidationError("no annotations for detection file " + id);

    int w = cfg.syn_size, h = cfg.syn_size;
    const fs::path sa_path = images / (id + "_sa.ppm");
    if (fs::exists(sa_path)) {
      const AggregatedImage img = read_image(sa_path.string());
      w = img.width;
      h = img.height;
    }

    std::ifstream in(det_dir / (id + ".txt"));
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream ls(line);
      EvalDetection d;
      d.image_id = image_id;
      if (!(ls >> d.class_id >> d.score >> d.box.x_min >> d.box.y_min >>
            d.box.x_max >> d.box.y_max))
        throw ValidationError(id + ".txt:" + std::to_string(line_no) +
                              ": expected `class score x_min y_min x_max y_max`");
      if (d.score >= cfg.eval_conf) dets.push_back(d);
    }

    for (const GroundTruthBox& gt : read_annotations(ann_file, cfg.syn_classes)) {
      EvalGroundTruth g;
      g.image_id = image_id;
      g.class_id = gt.class_id;
      g.box = Box{(gt.cx - gt.w / 2) * w, (gt.cy - gt.h / 2) * h,
                  (gt.cx + gt.w / 2) * w, (gt.cy + gt.h / 2) * h};
      gts.push_back(g);
    }
  }

  const EvalResult result = evaluate(dets, gts, cfg.syn_classes);
  write_metrics(result, (out_root / "metrics").string());
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", result.map50);
  std::cout << "map50 = " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.6f", result.map5095);
  std::cout << "map5095 = " << buf << "\n";
  for (const auto& [cls, ap] : result.per_class_ap50) {
    std::snprintf(buf, sizeof(buf), "%.6f", ap);
    std::cout << "ap50.class" << cls << " = " << buf << "\n";
  }
}

void cmd_gradcheck(const PipelineConfig& cfg) {
  Rng rng(cfg.seed);
  bool all_pass = true;
  auto report = [&](const std::string& name, const GradCheckReport& r) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3e", r.max_rel_error);
    std::cout << name << ": max_rel_error " << buf
              << (r.pass ? " pass" : " FAIL") << "\n";
    all_pass = all_pass && r.pass;
  };

  auto scalarize = [](const Tensor& t) { return mean_all(t); };

  {
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({3, 4}, rng, 1.0, true);
    report("elementwise", grad_check(
                              [&](const std::vector<Tensor>& in) {
                                return mean_all(mul(add(in[0], in[1]),
                                                    sigmoid(sub(in[0], in[1]))));
                              },
                              {a, b}));
  }
  {
    Tensor a = Tensor::randn({3, 5}, rng, 1.0, true);
    Tensor b = Tensor::randn({5, 2}, rng, 1.0, true);
    report("matmul_softmax", grad_check(
                                 [&](const std::vector<Tensor>& in) {
                                   return mean_all(softmax(matmul(in[0], in[1]), 1));
                                 },
                                 {a, b}));
  }
  {
    Tensor x = Tensor::randn({1, 2, 6, 6}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.5, true);
    report("conv2d", grad_check(
                         [&](const std::vector<Tensor>& in) {
                           return mean_all(relu(conv2d(in[0], in[1], 2, 1)));
                         },
                         {x, w}));
  }
  {
    Tensor x = Tensor::randn({1, 3, 4, 4}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 2, 2}, rng, 0.5, true);
    report("depthwise_conv2d", grad_check(
                                   [&](const std::vector<Tensor>& in) {
                                     return mean_all(depthwise_conv2d(in[0], in[1], 2));
                                   },
                                   {x, w}));
  }
  {
    Tensor x = Tensor::randn({2, 6}, rng, 1.0, true);
    Tensor z = Tensor::from_data({2, 6}, std::vector<double>(12, 0.5));
    report("bce_upsample", grad_check(
                               [&](const std::vector<Tensor>& in) {
                                 Tensor img = reshape(in[0], {1, 3, 2, 2});
                                 Tensor up = upsample_nearest2x(img);
                                 return add(mean_all(bce_with_logits(in[0], z)),
                                            mean_all(up));
                               },
                               {x}));
  }
  {
    SsaConfig scfg;
    scfg.d = 4;
    scfg.d_k = 4;
    scfg.d_v = 4;
    scfg.r = 2;
    scfg.h = 4;
    scfg.w = 4;
    SsaParams params = init_ssa_params(scfg, rng, 0.2);
    std::vector<Tensor> leaves;
    for (auto& [name, t] : params.named("ssa")) leaves.push_back(t);
    Tensor a = Tensor::randn({16, 4}, rng, 1.0, true);
    Tensor e = Tensor::randn({16, 4}, rng, 1.0, true);
    leaves.push_back(a);
    leaves.push_back(e);
    report("ssa_block", grad_check(
                            [&](const std::vector<Tensor>&) {
                              StreamPair out = ssa_forward({a, e}, scfg, params);
                              return scalarize(add(out.a, out.e));
                            },
                            leaves));
  }

  if (!all_pass) throw NumericError("gradient checks failed");
}

void run_command(const std::string& name, const PipelineConfig& cfg) {
  cfg.validate();
  if (name == "generate") cmd_generate(cfg);
  else if (name == "decouple") cmd_decouple(cfg);
  else if (name == "bandselect") cmd_bandselect(cfg);
  else if (name == "pca") cmd_pca(cfg);
  else if (name == "split") cmd_split(cfg);
  else if (name == "train") cmd_train(cfg);
  else if (name == "detect") cmd_detect(cfg);
  else if (name == "eval") cmd_eval(cfg);
  else if (name == "gradcheck") cmd_gradcheck(cfg);
  else throw ValidationError("unknown command '" + name + "'");
}

}  // namespace s2a
