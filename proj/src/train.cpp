#include "ofkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <thread>

#include <json.hpp>

namespace fs = std::filesystem;

namespace ofkit {

namespace {

bool is_decayed_param(const std::string& name) {
  // weight matrices only: biases, norms, and the query embedding stay undecayed
  if (name.size() >= 2 && name.compare(name.size() - 2, 2, "/b") == 0) return false;
  if (name.find("/ln") != std::string::npos) return false;
  if (name.find("queries/") != std::string::npos) return false;
  return true;
}

}  // namespace

void AdamW::step(ParamStore& params, double lr) {
  auto& entries = params.entries();
  if (m_.empty()) {
    for (const auto& [name, v] : entries) {
      m_.push_back(Tensor::zeros(v.value().shape()));
      v_.push_back(Tensor::zeros(v.value().shape()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t p = 0; p < entries.size(); ++p) {
    const auto& [name, var] = entries[p];
    if (!var.requires_grad()) continue;
    Tensor& value = var.node()->value;
    const Tensor& grad = var.node()->ensure_grad();
    const bool decay = cfg_.weight_decay > 0 && is_decayed_param(name);
    double* mv = m_[p].data();
    double* vv = v_[p].data();
    double* x = value.data();
    const double* g = grad.data();
    for (int64_t i = 0; i < value.numel(); ++i) {
      mv[i] = cfg_.beta1 * mv[i] + (1.0 - cfg_.beta1) * g[i];
      vv[i] = cfg_.beta2 * vv[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = mv[i] / bc1;
      const double v_hat = vv[i] / bc2;
      x[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps));
      if (decay) x[i] -= lr * cfg_.weight_decay * x[i];
    }
  }
}

double clip_gradients(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, v] : params.entries()) {
    const Tensor& g = v.node()->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [name, v] : params.entries()) {
      Tensor& g = v.node()->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= scale;
    }
  }
  return norm;
}

AnnotatedImage flip_scene(const AnnotatedImage& img, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return img;
  AnnotatedImage out = img;
  const int w = img.width, h = img.height;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sx = horizontal ? w - 1 - x : x;
      const int sy = vertical ? h - 1 - y : y;
      for (int c = 0; c < 3; ++c)
        out.pixels[static_cast<size_t>(3 * (y * w + x) + c)] =
            img.pixels[static_cast<size_t>(3 * (sy * w + sx) + c)];
    }
  for (Instance& inst : out.objects) {
    if (horizontal) {
      inst.box.cx = w - inst.box.cx;
      inst.box.theta = -inst.box.theta;
    }
    if (vertical) {
      inst.box.cy = h - inst.box.cy;
      inst.box.theta = -inst.box.theta;
    }
    inst.box = normalize_angle(inst.box);
  }
  return out;
}

TrainStats train_run(const RunConfig& cfg, const std::string& out_dir, std::ostream* progress) {
  const LabelMap labels = cfg.label_map();
  std::vector<AnnotatedImage> dataset = load_dataset(cfg.data.train_dir, labels, true);
  if (dataset.empty()) throw std::runtime_error("train: no images under '" + cfg.data.train_dir + "'");

  fs::create_directories(out_dir);
  const std::string log_path = (fs::path(out_dir) / "train_log.jsonl").string();
  const std::string ckpt_path = (fs::path(out_dir) / "model.ofkt").string();
  std::ofstream log(log_path);
  if (!log) throw std::runtime_error("train: cannot open log '" + log_path + "'");

  Detector model(cfg.model, cfg.seed);
  AdamW optimizer(cfg.optim);
  Rng rng(mix_seed(cfg.seed, 0x7261696e));

  const double img_w = cfg.model.image_width, img_h = cfg.model.image_height;
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  TrainStats stats;
  stats.checkpoint_path = ckpt_path;
  stats.log_path = log_path;
  int iteration = 0;
  bool stop = false;

  std::vector<std::string> recent_lines;  // diagnostic tail for a NaN abort
  auto record_line = [&](const std::string& line) {
    log << line << '\n';
    recent_lines.push_back(line);
    if (recent_lines.size() > 16) recent_lines.erase(recent_lines.begin());
  };

  for (int epoch = 1; epoch <= cfg.optim.epochs && !stop; ++epoch) {
    const double lr = lr_at_epoch(cfg.optim, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size() && !stop; start += cfg.optim.batch_size) {
      const size_t batch_n = std::min<size_t>(cfg.optim.batch_size, order.size() - start);
      model.params().zero_grads();
      double loss_sum = 0, cls_sum = 0, l1_sum = 0, iou_sum = 0;
      int matched = 0;
      for (size_t b = 0; b < batch_n; ++b) {
        const AnnotatedImage& raw = dataset[order[start + b]];
        const bool fh = cfg.optim.flip_augmentation && uniform(rng, 0.0, 1.0) < 0.5;
        const bool fv = cfg.optim.flip_augmentation && uniform(rng, 0.0, 1.0) < 0.5;
        const AnnotatedImage scene = flip_scene(raw, fh, fv);

        std::vector<GroundTruth> gt;
        gt.reserve(scene.objects.size());
        for (const Instance& inst : scene.objects) gt.push_back({inst.category, inst.box});

        const auto preds = model.forward(image_to_tensor(scene));
        const LossBreakdown lb = total_loss(preds, gt, cfg.loss, img_w, img_h);
        backpropagate(mul_scalar(lb.total, 1.0 / static_cast<double>(batch_n)));
        loss_sum += lb.total.value()[0];
        cls_sum += lb.cls;
        l1_sum += lb.l1;
        iou_sum += lb.iou;
        matched += lb.matched;
      }
      const double inv = 1.0 / static_cast<double>(batch_n);
      const double loss_mean = loss_sum * inv;
      if (!std::isfinite(loss_mean)) {
        log.flush();
        std::string dump = "train: non-finite loss at iteration " + std::to_string(iteration + 1) +
                           "; recent log tail:\n";
        for (const std::string& line : recent_lines) dump += "  " + line + "\n";
        throw NumericError(dump);
      }
      clip_gradients(model.params(), cfg.optim.grad_clip);
      optimizer.step(model.params(), lr);
      ++iteration;

      nlohmann::json j = {{"iteration", iteration},       {"epoch", epoch},
                          {"lr", lr},                     {"loss", loss_mean},
                          {"loss_cls", cls_sum * inv},    {"loss_l1", l1_sum * inv},
                          {"loss_iou", iou_sum * inv},    {"matched", matched}};
      record_line(j.dump());
      stats.final_loss = loss_mean;
      if (progress && iteration % 100 == 0)
        (*progress) << "iter " << iteration << " epoch " << epoch << " lr " << lr << " loss "
                    << loss_mean << "\n";
      if (cfg.optim.max_iterations > 0 && iteration >= cfg.optim.max_iterations) stop = true;
    }
    stats.epochs_run = epoch;
  }
  stats.iterations = iteration;
  model.save_checkpoint(ckpt_path);
  return stats;
}

std::vector<Detection> run_inference(Detector& model, const std::vector<AnnotatedImage>& images,
                                     double score_threshold, int top_k, int threads) {
  std::vector<std::vector<Detection>> slots(images.size());
  auto work = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      const auto dets = model.infer(image_to_tensor(images[i]), score_threshold, top_k);
      std::vector<Detection> out;
      out.reserve(dets.size());
      for (const QueryDetection& d : dets)
        out.push_back({images[i].id, d.category, d.score, d.box});
      slots[i] = std::move(out);
    }
  };
  if (threads <= 1) {
    work(0, images.size());
  } else {
    const size_t n = images.size();
    const size_t per = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      const size_t begin = std::min(n, static_cast<size_t>(t) * per);
      const size_t end = std::min(n, begin + per);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (std::thread& t : pool) t.join();
  }
  std::vector<Detection> merged;  // image order: independent of thread count
  for (auto& s : slots) merged.insert(merged.end(), s.begin(), s.end());
  return merged;
}

}  // namespace ofkit
