#include "ofkit/model.hpp"

#include <algorithm>
#include <cmath>

#include "ofkit/row_map.hpp"

namespace ofkit {

void ModelConfig::validate() const {
  if (num_queries < 1) throw std::invalid_argument("config: num_queries must be positive");
  if (dim < 1 || depth < 1) throw std::invalid_argument("config: dim/depth must be positive");
  if (dim % self_heads != 0) throw std::invalid_argument("config: self_heads must divide dim");
  if (dim % cross_heads != 0) throw std::invalid_argument("config: cross_heads must divide dim");
  if (cross_points < 1) throw std::invalid_argument("config: cross_points must be positive");
  if (eta <= 0) throw std::invalid_argument("config: eta must be positive");
  if (num_classes < 1) throw std::invalid_argument("config: num_classes must be positive");
  if (ffn_multiplier < 1) throw std::invalid_argument("config: ffn_multiplier must be positive");
  PEConfig{pe_temperature, pe_frequencies}.validate();
  if (strides.empty()) throw std::invalid_argument("config: strides must be non-empty");
  for (size_t l = 0; l < strides.size(); ++l) {
    const int s = strides[l];
    if (s < 1 || (s & (s - 1)) != 0)
      throw std::invalid_argument("config: strides must be powers of two");
    if (l > 0 && strides[l] != 2 * strides[l - 1])
      throw std::invalid_argument("config: adjacent strides must differ by factor 2");
  }
  const int stem = static_cast<int>(std::log2(static_cast<double>(strides[0])));
  if (static_cast<int>(backbone_channels.size()) != stem)
    throw std::invalid_argument("config: backbone_channels needs one entry per stem conv (" +
                                std::to_string(stem) + ")");
  if (image_width % strides.back() != 0 || image_height % strides.back() != 0)
    throw std::invalid_argument("config: image size must be divisible by the max stride");
}

std::vector<OrientedBox> LayerPrediction::boxes() const {
  const Tensor& b = boxes5.value();
  std::vector<OrientedBox> out(static_cast<size_t>(b.dim(0)));
  for (int64_t i = 0; i < b.dim(0); ++i)
    out[static_cast<size_t>(i)] = {b.at(i, 0), b.at(i, 1), b.at(i, 2), b.at(i, 3), b.at(i, 4)};
  return out;
}

Var zr_to_box_rows(const Var& qp5) {
  using D = Dual<5>;
  return map_rows<5>("zr_to_box_rows", qp5, 5, [](const D* row, D* out) {
    out[0] = row[0];
    out[1] = row[1];
    kern::zr_to_wh(row[2], row[3], out[2], out[3]);
    out[4] = row[4];
  });
}

Var canonicalize_rows(const Var& qp5) {
  using D = Dual<5>;
  return map_rows<5>("canonicalize_rows", qp5, 5, [](const D* row, D* out) {
    out[0] = row[0];
    out[1] = row[1];
    out[2] = row[2];
    const double theta = row[4].v;
    const double folded = theta - 2.0 * kPi * std::floor((theta + kPi) / (2.0 * kPi));
    const double shift = folded - theta;  // constant within the branch
    if (folded >= kPi / 2) {
      out[3] = -row[3];
      out[4] = row[4] + D(shift - kPi / 2);
    } else if (folded < -kPi / 2) {
      out[3] = -row[3];
      out[4] = row[4] + D(shift + kPi / 2);
    } else {
      out[3] = row[3];
      out[4] = row[4] + D(shift);
    }
  });
}

Tensor initial_query_grid(int num_queries, int image_w, int image_h) {
  const int rows = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(num_queries)))));
  const int cols = (num_queries + rows - 1) / rows;
  const double cell_w = static_cast<double>(image_w) / cols;
  const double cell_h = static_cast<double>(image_h) / rows;
  const double z = std::log2(std::sqrt(cell_w * cell_h));
  Tensor grid({num_queries, 5});
  for (int i = 0; i < num_queries; ++i) {
    const int r = i / cols, c = i % cols;
    grid.at(i, 0) = (c + 0.5) * cell_w;
    grid.at(i, 1) = (r + 0.5) * cell_h;
    grid.at(i, 2) = z;
    grid.at(i, 3) = 0.0;
    grid.at(i, 4) = 0.0;
  }
  return grid;
}

Detector::Detector(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const int64_t d = cfg_.dim;

  // stem: stride-2 3x3 convs from RGB down to strides[0]
  int64_t in_ch = 3;
  for (size_t i = 0; i < cfg_.backbone_channels.size(); ++i) {
    const int64_t out_ch = cfg_.backbone_channels[i];
    ConvParams p;
    const double std_dev = std::sqrt(2.0 / static_cast<double>(9 * in_ch));
    p.w = params_.add("backbone/stem" + std::to_string(i) + "/w",
                      normal_init({out_ch, 3, 3, in_ch}, std_dev, rng));
    p.b = params_.add("backbone/stem" + std::to_string(i) + "/b", Tensor({out_ch}));
    stem_.push_back(p);
    in_ch = out_ch;
  }
  const int64_t trunk = in_ch;
  for (size_t l = 1; l < cfg_.strides.size(); ++l) {
    ConvParams p;
    const double std_dev = std::sqrt(2.0 / static_cast<double>(9 * trunk));
    p.w = params_.add("backbone/down" + std::to_string(l) + "/w",
                      normal_init({trunk, 3, 3, trunk}, std_dev, rng));
    p.b = params_.add("backbone/down" + std::to_string(l) + "/b", Tensor({trunk}));
    extra_.push_back(p);
  }
  for (size_t l = 0; l < cfg_.strides.size(); ++l)
    channel_mappers_.push_back(
        make_linear(params_, "backbone/map" + std::to_string(l), trunk, d, rng));

  query_embed_ = params_.add("queries/content",
                             normal_init({cfg_.num_queries, d}, 1.0, rng));
  query_grid_ = initial_query_grid(cfg_.num_queries, cfg_.image_width, cfg_.image_height);

  const int64_t pe_len = cfg_.pe_config().embedding_length(2);
  for (int layer = 0; layer < cfg_.depth; ++layer) {
    const std::string prefix = "decoder" + std::to_string(layer);
    LayerParams lp;
    lp.pe_proj.w = params_.add(prefix + "/pe_proj/w",
                               pe_len == d ? Tensor::identity(d)
                                           : xavier_uniform({pe_len, d}, pe_len, d, rng));
    lp.pe_proj.b = params_.add(prefix + "/pe_proj/b", Tensor({d}));
    lp.self_out = make_linear(params_, prefix + "/self_out", d, d, rng);
    lp.cross = make_cross_attention_params(params_, prefix + "/cross", d, cfg_.cross_config(), rng);
    lp.ffn_in = make_linear(params_, prefix + "/ffn_in", d, cfg_.ffn_multiplier * d, rng);
    lp.ffn_out = make_linear(params_, prefix + "/ffn_out", cfg_.ffn_multiplier * d, d, rng);
    lp.cls_head = make_linear(params_, prefix + "/cls_head", d, cfg_.num_classes, rng);
    // focal prior: start every class near p ~ 0.12 so background dominates
    {
      Tensor& b = lp.cls_head.b.node()->value;
      for (int64_t i = 0; i < b.numel(); ++i) b[i] = -2.0;
    }
    // zero box head: the first refinement leaves the grid untouched
    lp.box_head.w = params_.add(prefix + "/box_head/w", Tensor({d, 5}));
    lp.box_head.b = params_.add(prefix + "/box_head/b", Tensor({5}));
    lp.ln1_g = params_.add(prefix + "/ln1/g", Tensor::full({d}, 1.0));
    lp.ln1_b = params_.add(prefix + "/ln1/b", Tensor({d}));
    lp.ln2_g = params_.add(prefix + "/ln2/g", Tensor::full({d}, 1.0));
    lp.ln2_b = params_.add(prefix + "/ln2/b", Tensor({d}));
    lp.ln3_g = params_.add(prefix + "/ln3/g", Tensor::full({d}, 1.0));
    lp.ln3_b = params_.add(prefix + "/ln3/b", Tensor({d}));
    layers_.push_back(lp);
  }
}

FeaturePyramid Detector::run_backbone(const Var& image) {
  const Tensor& img = image.value();
  if (img.rank() != 3 || img.dim(2) != 3)
    throw std::invalid_argument("backbone: image must be [H,W,3]");
  if (img.dim(0) % cfg_.strides.back() != 0 || img.dim(1) % cfg_.strides.back() != 0)
    throw std::invalid_argument("backbone: image size must be divisible by the max stride");

  Var x = image;
  for (const ConvParams& p : stem_) x = relu(conv2d(x, p.w, p.b, 2, 1));

  FeaturePyramid fp;
  fp.strides = cfg_.strides;
  std::vector<Var> trunk_levels{x};
  for (const ConvParams& p : extra_) {
    x = relu(conv2d(x, p.w, p.b, 2, 1));
    trunk_levels.push_back(x);
  }
  for (size_t l = 0; l < trunk_levels.size(); ++l) {
    const Tensor& t = trunk_levels[l].value();
    const int64_t h = t.dim(0), w = t.dim(1), c = t.dim(2);
    Var flat = reshape(trunk_levels[l], {h * w, c});
    fp.levels.push_back(reshape(channel_mappers_[l](flat), {h, w, cfg_.dim}));
  }
  return fp;
}

Var Detector::refine_queries(const Var& qp_in, const Var& deltas) const {
  // center deltas are scale-relative: dx * 2^z pixels
  constexpr double kLn2 = 0.6931471805599453;
  const Var z2 = exp(mul_scalar(slice(qp_in, 1, 2, 1), kLn2));

  const Var nx = add(slice(qp_in, 1, 0, 1), mul(slice(deltas, 1, 0, 1), z2));
  const Var ny = add(slice(qp_in, 1, 1, 1), mul(slice(deltas, 1, 1, 1), z2));
  const Var nz = add(slice(qp_in, 1, 2, 1), slice(deltas, 1, 2, 1));
  const Var nr = add(slice(qp_in, 1, 3, 1), slice(deltas, 1, 3, 1));
  const Var nt = add(slice(qp_in, 1, 4, 1), slice(deltas, 1, 4, 1));
  return canonicalize_rows(concatenate({nx, ny, nz, nr, nt}, 1));
}

std::vector<LayerPrediction> Detector::forward(const Tensor& image) {
  const FeaturePyramid fp = run_backbone(Var::constant(image));
  Var qc = query_embed_;
  Var qp = Var::constant(query_grid_);

  std::vector<LayerPrediction> predictions;
  predictions.reserve(static_cast<size_t>(cfg_.depth));
  for (int layer = 0; layer < cfg_.depth; ++layer) {
    const LayerParams& lp = layers_[static_cast<size_t>(layer)];
    const Var qp_in = cfg_.detach_boxes ? qp.detach() : qp;

    const Var phi = lp.pe_proj(gaussian_pe_rows(qp_in, cfg_.pe_config()));
    const Var scores = wasserstein_score_matrix(qp_in);
    const Var sa = wasserstein_self_attention(qc, phi, scores, cfg_.self_config(), lp.self_out);
    qc = layer_norm(add(qc, sa), lp.ln1_g, lp.ln1_b);

    const Var ca = oriented_cross_attention(qc, qp_in, fp, cfg_.cross_config(), lp.cross);
    qc = layer_norm(add(qc, ca), lp.ln2_g, lp.ln2_b);

    const Var ff = lp.ffn_out(relu(lp.ffn_in(qc)));
    qc = layer_norm(add(qc, ff), lp.ln3_g, lp.ln3_b);

    const Var logits = lp.cls_head(qc);
    const Var deltas = lp.box_head(qc);
    qp = refine_queries(qp_in, deltas);

    LayerPrediction pred;
    pred.class_logits = logits;
    pred.qp5 = qp;
    pred.boxes5 = zr_to_box_rows(qp);
    pred.layer_index = layer;
    predictions.push_back(pred);
  }
  return predictions;
}

std::vector<QueryDetection> Detector::infer(const Tensor& image, double score_threshold,
                                            int top_k) {
  NoGradGuard ng;
  const std::vector<LayerPrediction> preds = forward(image);
  const LayerPrediction& last = preds.back();
  const Tensor& logits = last.class_logits.value();
  const std::vector<OrientedBox> boxes = last.boxes();

  std::vector<QueryDetection> dets;
  for (int64_t i = 0; i < logits.dim(0); ++i) {
    int best_c = 0;
    double best_logit = logits.at(i, 0);
    for (int64_t c = 1; c < logits.dim(1); ++c)
      if (logits.at(i, c) > best_logit) {
        best_logit = logits.at(i, c);
        best_c = static_cast<int>(c);
      }
    const double score = 1.0 / (1.0 + std::exp(-best_logit));
    if (score >= score_threshold)
      dets.push_back({best_c, score, boxes[static_cast<size_t>(i)]});
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const QueryDetection& a, const QueryDetection& b) { return a.score > b.score; });
  if (top_k >= 0 && static_cast<int>(dets.size()) > top_k) dets.resize(static_cast<size_t>(top_k));
  return dets;
}

namespace {

Tensor hparam_scalar(double v) { return Tensor({1}, {v}); }

Tensor hparam_list(const std::vector<int>& v) {
  Tensor t({static_cast<int64_t>(v.size())});
  for (size_t i = 0; i < v.size(); ++i) t[static_cast<int64_t>(i)] = v[i];
  return t;
}

}  // namespace

void Detector::save_checkpoint(const std::string& path) const {
  std::vector<CheckpointRecord> extra;
  extra.push_back({"hparam/num_queries", hparam_scalar(cfg_.num_queries)});
  extra.push_back({"hparam/dim", hparam_scalar(cfg_.dim)});
  extra.push_back({"hparam/depth", hparam_scalar(cfg_.depth)});
  extra.push_back({"hparam/self_heads", hparam_scalar(cfg_.self_heads)});
  extra.push_back({"hparam/cross_heads", hparam_scalar(cfg_.cross_heads)});
  extra.push_back({"hparam/cross_points", hparam_scalar(cfg_.cross_points)});
  extra.push_back({"hparam/pe_frequencies", hparam_scalar(cfg_.pe_frequencies)});
  extra.push_back({"hparam/pe_temperature", hparam_scalar(cfg_.pe_temperature)});
  extra.push_back({"hparam/eta", hparam_scalar(cfg_.eta)});
  extra.push_back({"hparam/num_classes", hparam_scalar(cfg_.num_classes)});
  extra.push_back({"hparam/ffn_multiplier", hparam_scalar(cfg_.ffn_multiplier)});
  extra.push_back({"hparam/detach_boxes", hparam_scalar(cfg_.detach_boxes ? 1 : 0)});
  extra.push_back({"hparam/image_width", hparam_scalar(cfg_.image_width)});
  extra.push_back({"hparam/image_height", hparam_scalar(cfg_.image_height)});
  extra.push_back({"hparam/strides", hparam_list(cfg_.strides)});
  extra.push_back({"hparam/backbone_channels", hparam_list(cfg_.backbone_channels)});
  params_.save(path, extra);
}

void Detector::load_checkpoint(const std::string& path) { params_.load(path); }

Detector Detector::from_checkpoint(const std::string& path) {
  const auto records = read_checkpoint_map(path);
  auto scalar = [&](const std::string& name) {
    auto it = records.find("hparam/" + name);
    if (it == records.end())
      throw std::runtime_error("checkpoint: missing hyperparameter '" + name + "'");
    return it->second[0];
  };
  auto list = [&](const std::string& name) {
    auto it = records.find("hparam/" + name);
    if (it == records.end())
      throw std::runtime_error("checkpoint: missing hyperparameter '" + name + "'");
    std::vector<int> out;
    for (int64_t i = 0; i < it->second.numel(); ++i)
      out.push_back(static_cast<int>(it->second[i]));
    return out;
  };
  ModelConfig cfg;
  cfg.num_queries = static_cast<int>(scalar("num_queries"));
  cfg.dim = static_cast<int>(scalar("dim"));
  cfg.depth = static_cast<int>(scalar("depth"));
  cfg.self_heads = static_cast<int>(scalar("self_heads"));
  cfg.cross_heads = static_cast<int>(scalar("cross_heads"));
  cfg.cross_points = static_cast<int>(scalar("cross_points"));
  cfg.pe_frequencies = static_cast<int>(scalar("pe_frequencies"));
  cfg.pe_temperature = scalar("pe_temperature");
  cfg.eta = scalar("eta");
  cfg.num_classes = static_cast<int>(scalar("num_classes"));
  cfg.ffn_multiplier = static_cast<int>(scalar("ffn_multiplier"));
  cfg.detach_boxes = scalar("detach_boxes") != 0;
  cfg.image_width = static_cast<int>(scalar("image_width"));
  cfg.image_height = static_cast<int>(scalar("image_height"));
  cfg.strides = list("strides");
  cfg.backbone_channels = list("backbone_channels");

  Detector model(cfg, /*seed=*/0);
  model.load_checkpoint(path);
  return model;
}

}  // namespace ofkit
