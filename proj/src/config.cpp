#include "s2a/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "s2a/common.hpp"

namespace s2a {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

int to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "' needs an integer, got '" + value + "'");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "' needs a number, got '" + value + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "' needs a non-negative integer, got '" +
                          value + "'");
  }
}

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& value) {
  if (key == "data_dir") data_dir = value;
  else if (key == "out_dir") out_dir = value;
  else if (key == "hid.k_sa") k_sa = to_int(key, value);
  else if (key == "hid.k_se") k_se = to_int(key, value);
  else if (key == "hid.p_low") p_low = to_double(key, value);
  else if (key == "hid.p_high") p_high = to_double(key, value);
  else if (key == "synthetic.images") syn_images = to_int(key, value);
  else if (key == "synthetic.size") syn_size = to_int(key, value);
  else if (key == "synthetic.bands") syn_bands = to_int(key, value);
  else if (key == "synthetic.classes") syn_classes = to_int(key, value);
  else if (key == "synthetic.min_objects") syn_min_objects = to_int(key, value);
  else if (key == "synthetic.max_objects") syn_max_objects = to_int(key, value);
  else if (key == "split.train") ratio_train = to_double(key, value);
  else if (key == "split.val") ratio_val = to_double(key, value);
  else if (key == "split.test") ratio_test = to_double(key, value);
  else if (key == "train.lr") lr = to_double(key, value);
  else if (key == "train.power") power = to_double(key, value);
  else if (key == "train.max_epoch") max_epoch = to_int(key, value);
  else if (key == "train.batch") batch = to_int(key, value);
  else if (key == "seed") seed = to_u64(key, value);
  else if (key == "detector.mode") mode = value;
  else if (key == "ssa.r") ssa_r = to_int(key, value);
  else if (key == "detector.head_channels") head_channels = to_int(key, value);
  else if (key == "detector.conf") conf_threshold = to_double(key, value);
  else if (key == "eval.nms_iou") nms_iou = to_double(key, value);
  else if (key == "eval.conf") eval_conf = to_double(key, value);
  else throw ValidationError("unknown config key '" + key + "'");
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  PipelineConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": expected `key = value`");
    cfg.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

void PipelineConfig::validate() const {
  if (k_sa <= 0 || k_se <= 0)
    throw ValidationError("hid.k_sa and hid.k_se must be positive");
  if (!(p_low >= 0.0 && p_low < p_high && p_high <= 1.0))
    throw ValidationError("percentiles need 0 <= p_low < p_high <= 1");
  if (syn_images <= 0 || syn_bands <= 0 || syn_classes <= 0)
    throw ValidationError("synthetic corpus sizes must be positive");
  if (syn_size <= 0 || syn_size % 32 != 0)
    throw ValidationError("synthetic.size must be positive and divisible by 32");
  if (syn_min_objects < 0 || syn_max_objects < syn_min_objects)
    throw ValidationError("synthetic object count range is inverted");
  if (ratio_train <= 0.0 || ratio_val <= 0.0 || ratio_test <= 0.0)
    throw ValidationError("split ratios must be positive");
  if (lr <= 0.0) throw ValidationError("train.lr must be positive");
  if (power < 0.0) throw ValidationError("train.power must be non-negative");
  if (max_epoch <= 0) throw ValidationError("train.max_epoch must be positive");
  if (batch <= 0) throw ValidationError("train.batch must be positive");
  if (mode != "sa_se" && mode != "sa_sa" && mode != "sa_only")
    throw ValidationError("detector.mode must be sa_se, sa_sa, or sa_only");
  if (ssa_r <= 0) throw ValidationError("ssa.r must be positive");
  if (head_channels <= 0) throw ValidationError("detector.head_channels must be positive");
  if (conf_threshold < 0.0 || conf_threshold > 1.0 || eval_conf < 0.0 || eval_conf > 1.0)
    throw ValidationError("confidence thresholds must lie in [0, 1]");
  if (nms_iou < 0.0 || nms_iou > 1.0)
    throw ValidationError("eval.nms_iou must lie in [0, 1]");
}

}  // namespace s2a
