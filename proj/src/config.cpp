#include "ofkit/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ofkit/eval.hpp"

namespace ofkit {

using nlohmann::json;

double lr_at_epoch(const OptimConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int d : cfg.decay_epochs)
    if (epoch > d) lr *= cfg.decay_factor;
  return lr;
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw ConfigError("config: unknown key '" + key + "' in section '" + section + "'");
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text, const std::string& origin) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config: '" + origin + "' is not valid JSON");
  check_keys(j, {"profile", "seed", "model", "optimizer", "loss", "data", "eval", "synth"},
             "top-level");

  RunConfig cfg;
  cfg.profile = get_or<std::string>(j, "profile", cfg.profile);
  cfg.seed = get_or<uint64_t>(j, "seed", cfg.seed);

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m,
               {"num_queries", "dim", "depth", "self_heads", "cross_heads", "cross_points",
                "pe_frequencies", "pe_temperature", "eta", "strides", "num_classes",
                "ffn_multiplier", "detach_boxes", "backbone_channels", "image_width",
                "image_height"},
               "model");
    ModelConfig& mc = cfg.model;
    mc.num_queries = get_or(m, "num_queries", mc.num_queries);
    mc.dim = get_or(m, "dim", mc.dim);
    mc.depth = get_or(m, "depth", mc.depth);
    mc.self_heads = get_or(m, "self_heads", mc.self_heads);
    mc.cross_heads = get_or(m, "cross_heads", mc.cross_heads);
    mc.cross_points = get_or(m, "cross_points", mc.cross_points);
    mc.pe_frequencies = get_or(m, "pe_frequencies", mc.pe_frequencies);
    mc.pe_temperature = get_or(m, "pe_temperature", mc.pe_temperature);
    mc.eta = get_or(m, "eta", mc.eta);
    mc.strides = get_or(m, "strides", mc.strides);
    mc.num_classes = get_or(m, "num_classes", mc.num_classes);
    mc.ffn_multiplier = get_or(m, "ffn_multiplier", mc.ffn_multiplier);
    mc.detach_boxes = get_or(m, "detach_boxes", mc.detach_boxes);
    mc.backbone_channels = get_or(m, "backbone_channels", mc.backbone_channels);
    mc.image_width = get_or(m, "image_width", mc.image_width);
    mc.image_height = get_or(m, "image_height", mc.image_height);
  }

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    check_keys(o,
               {"lr", "weight_decay", "beta1", "beta2", "eps", "epochs", "decay_epochs",
                "decay_factor", "batch_size", "grad_clip", "max_iterations",
                "flip_augmentation"},
               "optimizer");
    OptimConfig& oc = cfg.optim;
    oc.lr = get_or(o, "lr", oc.lr);
    oc.weight_decay = get_or(o, "weight_decay", oc.weight_decay);
    oc.beta1 = get_or(o, "beta1", oc.beta1);
    oc.beta2 = get_or(o, "beta2", oc.beta2);
    oc.eps = get_or(o, "eps", oc.eps);
    oc.epochs = get_or(o, "epochs", oc.epochs);
    oc.decay_epochs = get_or(o, "decay_epochs", oc.decay_epochs);
    oc.decay_factor = get_or(o, "decay_factor", oc.decay_factor);
    oc.batch_size = get_or(o, "batch_size", oc.batch_size);
    oc.grad_clip = get_or(o, "grad_clip", oc.grad_clip);
    oc.max_iterations = get_or(o, "max_iterations", oc.max_iterations);
    oc.flip_augmentation = get_or(o, "flip_augmentation", oc.flip_augmentation);
  }

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    check_keys(l, {"cls", "l1", "iou", "focal_alpha", "focal_gamma"}, "loss");
    cfg.loss.cls = get_or(l, "cls", cfg.loss.cls);
    cfg.loss.l1 = get_or(l, "l1", cfg.loss.l1);
    cfg.loss.iou = get_or(l, "iou", cfg.loss.iou);
    cfg.loss.focal_alpha = get_or(l, "focal_alpha", cfg.loss.focal_alpha);
    cfg.loss.focal_gamma = get_or(l, "focal_gamma", cfg.loss.focal_gamma);
  }

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, {"classes", "train_dir", "test_dir"}, "data");
    cfg.data.classes = get_or(d, "classes", cfg.data.classes);
    cfg.data.train_dir = get_or(d, "train_dir", cfg.data.train_dir);
    cfg.data.test_dir = get_or(d, "test_dir", cfg.data.test_dir);
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"protocol", "score_threshold", "top_k", "threads"}, "eval");
    cfg.eval.protocol = get_or(e, "protocol", cfg.eval.protocol);
    cfg.eval.score_threshold = get_or(e, "score_threshold", cfg.eval.score_threshold);
    cfg.eval.top_k = get_or(e, "top_k", cfg.eval.top_k);
    cfg.eval.threads = get_or(e, "threads", cfg.eval.threads);
  }

  if (j.contains("synth")) {
    const json& s = j.at("synth");
    check_keys(s,
               {"width", "height", "min_objects", "max_objects", "min_size", "max_size",
                "min_aspect", "max_aspect", "classes", "max_overlap", "noise", "max_attempts",
                "train_count", "test_count"},
               "synth");
    SynthConfig& sc = cfg.synth.scene;
    sc.width = get_or(s, "width", sc.width);
    sc.height = get_or(s, "height", sc.height);
    sc.min_objects = get_or(s, "min_objects", sc.min_objects);
    sc.max_objects = get_or(s, "max_objects", sc.max_objects);
    sc.min_size = get_or(s, "min_size", sc.min_size);
    sc.max_size = get_or(s, "max_size", sc.max_size);
    sc.min_aspect = get_or(s, "min_aspect", sc.min_aspect);
    sc.max_aspect = get_or(s, "max_aspect", sc.max_aspect);
    sc.classes = get_or(s, "classes", sc.classes);
    sc.max_overlap = get_or(s, "max_overlap", sc.max_overlap);
    sc.noise = get_or(s, "noise", sc.noise);
    sc.max_attempts = get_or(s, "max_attempts", sc.max_attempts);
    cfg.synth.train_count = get_or(s, "train_count", cfg.synth.train_count);
    cfg.synth.test_count = get_or(s, "test_count", cfg.synth.test_count);
  }

  // class list drives the classification width
  if (!cfg.data.classes.empty()) cfg.model.num_classes = static_cast<int>(cfg.data.classes.size());
  return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json_text(ss.str(), path);
}

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (optim.lr <= 0) throw ConfigError("config: lr must be positive");
  if (optim.epochs < 1) throw ConfigError("config: epochs must be >= 1");
  if (optim.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (optim.decay_factor <= 0 || optim.decay_factor >= 1)
    throw ConfigError("config: decay_factor must lie in (0, 1)");
  if (optim.beta1 <= 0 || optim.beta1 >= 1 || optim.beta2 <= 0 || optim.beta2 >= 1)
    throw ConfigError("config: adam betas must lie in (0, 1)");
  if (loss.cls < 0 || loss.l1 < 0 || loss.iou < 0)
    throw ConfigError("config: loss weights must be non-negative");
  if (loss.focal_alpha <= 0 || loss.focal_alpha >= 1)
    throw ConfigError("config: focal_alpha must lie in (0, 1)");
  if (loss.focal_gamma < 0) throw ConfigError("config: focal_gamma must be >= 0");
  try {
    protocol_from_string(eval.protocol);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (eval.threads < 1) throw ConfigError("config: eval threads must be >= 1");
  if (!data.classes.empty() &&
      static_cast<int>(data.classes.size()) != model.num_classes)
    throw ConfigError("config: num_classes disagrees with the class list");
  if (synth.scene.classes > static_cast<int>(data.classes.size()) && !data.classes.empty())
    throw ConfigError("config: synth classes exceed the label map");
}

}  // namespace ofkit
