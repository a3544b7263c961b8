#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "ofkit/model.hpp"

using namespace ofkit;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.num_queries = 3;
  cfg.dim = 8;
  cfg.depth = 2;
  cfg.self_heads = 2;
  cfg.cross_heads = 2;
  cfg.cross_points = 4;
  cfg.pe_frequencies = 2;  // 4K = 8 = dim
  cfg.strides = {8, 16};
  cfg.num_classes = 2;
  cfg.ffn_multiplier = 2;
  cfg.backbone_channels = {2, 2, 3};
  cfg.image_width = 16;
  cfg.image_height = 16;
  return cfg;
}

Tensor random_image(Rng& rng, int64_t h, int64_t w) {
  Tensor img({h, w, 3});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = uniform(rng, -0.5, 0.5);
  return img;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent settings") {
  ModelConfig cfg = tiny_config();
  cfg.self_heads = 3;  // does not divide dim
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config();
  cfg.strides = {8, 32};
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config();
  cfg.backbone_channels = {2, 2};
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config();
  cfg.image_width = 20;  // not divisible by 16
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("initial_query_grid covers the image uniformly") {
  const Tensor grid = initial_query_grid(4, 64, 64);
  const double expect[4][2] = {{16, 16}, {48, 16}, {16, 48}, {48, 48}};
  for (int i = 0; i < 4; ++i) {
    CHECK(grid.at(i, 0) == doctest::Approx(expect[i][0]));
    CHECK(grid.at(i, 1) == doctest::Approx(expect[i][1]));
    CHECK(grid.at(i, 2) == doctest::Approx(5.0));  // log2(32)
    CHECK(grid.at(i, 3) == 0.0);
    CHECK(grid.at(i, 4) == 0.0);
  }
}

TEST_CASE("backbone produces the expected pyramid shapes") {
  ModelConfig cfg = tiny_config();
  cfg.strides = {8, 16, 32, 64};
  cfg.image_width = cfg.image_height = 64;
  Detector model(cfg, 1);
  Rng rng(2);
  const FeaturePyramid fp = model.run_backbone(Var::constant(random_image(rng, 64, 64)));
  REQUIRE(fp.levels.size() == 4);
  const int64_t hw[4] = {8, 4, 2, 1};
  for (int l = 0; l < 4; ++l) {
    CHECK(fp.levels[static_cast<size_t>(l)].value().dim(0) == hw[l]);
    CHECK(fp.levels[static_cast<size_t>(l)].value().dim(1) == hw[l]);
    CHECK(fp.levels[static_cast<size_t>(l)].value().dim(2) == cfg.dim);
  }
  CHECK_THROWS(model.run_backbone(Var::constant(random_image(rng, 48, 48))));
}

TEST_CASE("zero image with zero biases yields an all-zero pyramid") {
  Detector model(tiny_config(), 3);
  const FeaturePyramid fp = model.run_backbone(Var::constant(Tensor({16, 16, 3})));
  for (const Var& level : fp.levels)
    for (int64_t i = 0; i < level.value().numel(); ++i) CHECK(level.value()[i] == 0.0);
}

TEST_CASE("forward emits one prediction per layer with contract shapes") {
  ModelConfig cfg = tiny_config();
  Detector model(cfg, 4);
  Rng rng(5);
  const auto preds = model.forward(random_image(rng, 16, 16));
  REQUIRE(static_cast<int>(preds.size()) == cfg.depth);
  for (int l = 0; l < cfg.depth; ++l) {
    CHECK(preds[static_cast<size_t>(l)].layer_index == l);
    CHECK(preds[static_cast<size_t>(l)].class_logits.value().shape() ==
          std::vector<int64_t>{cfg.num_queries, cfg.num_classes});
    CHECK(preds[static_cast<size_t>(l)].boxes5.value().shape() ==
          std::vector<int64_t>{cfg.num_queries, 5});
    for (const OrientedBox& b : preds[static_cast<size_t>(l)].boxes())
      CHECK(box_is_canonical(b));
  }
}

TEST_CASE("zero-initialized box head keeps the query grid through refinement") {
  ModelConfig cfg = tiny_config();
  Detector model(cfg, 6);
  Rng rng(7);
  const auto preds = model.forward(random_image(rng, 16, 16));
  const Tensor grid = initial_query_grid(cfg.num_queries, cfg.image_width, cfg.image_height);
  for (const auto& pred : preds)
    for (int64_t i = 0; i < grid.numel(); ++i)
      CHECK(pred.qp5.value()[i] == doctest::Approx(grid[i]).epsilon(1e-12));
}

TEST_CASE("forward is bit-deterministic for a fixed seed") {
  Rng rng(8);
  const Tensor img = random_image(rng, 16, 16);
  Detector a(tiny_config(), 99);
  Detector b(tiny_config(), 99);
  const auto pa = a.forward(img);
  const auto pb = b.forward(img);
  const auto pa2 = a.forward(img);
  REQUIRE(pa.size() == pb.size());
  for (size_t l = 0; l < pa.size(); ++l)
    for (int64_t i = 0; i < pa[l].class_logits.value().numel(); ++i) {
      CHECK(pa[l].class_logits.value()[i] == pb[l].class_logits.value()[i]);
      CHECK(pa[l].class_logits.value()[i] == pa2[l].class_logits.value()[i]);
    }
}

TEST_CASE("refinement keeps boxes canonical under random box heads") {
  ModelConfig cfg = tiny_config();
  Detector model(cfg, 10);
  // overwrite the zero box head with something that moves boxes around
  Rng rng(11);
  for (auto& [name, v] : model.params().entries())
    if (name.find("box_head") != std::string::npos) {
      Tensor& t = v.node()->value;
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(rng, -0.8, 0.8);
    }
  const auto preds = model.forward(random_image(rng, 16, 16));
  for (const auto& pred : preds)
    for (const OrientedBox& b : pred.boxes()) {
      CHECK(box_is_canonical(b));
      CHECK(b.w > 0.0);
      CHECK(b.h > 0.0);
    }
}

TEST_CASE("infer returns at most N detections sorted by score") {
  ModelConfig cfg = tiny_config();
  Detector model(cfg, 12);
  Rng rng(13);
  const auto dets = model.infer(random_image(rng, 16, 16), 0.0, cfg.num_queries);
  CHECK(static_cast<int>(dets.size()) <= cfg.num_queries);
  for (size_t i = 1; i < dets.size(); ++i) CHECK(dets[i - 1].score >= dets[i].score);

  const auto blank = model.infer(Tensor({16, 16, 3}), 0.9999, cfg.num_queries);
  CHECK(blank.size() <= static_cast<size_t>(cfg.num_queries));  // no-crash contract
}

TEST_CASE("checkpoint round trip reproduces the model bit for bit") {
  ModelConfig cfg = tiny_config();
  Detector model(cfg, 14);
  Rng rng(15);
  const Tensor img = random_image(rng, 16, 16);
  const auto before = model.forward(img);

  const std::string path = "model_roundtrip.ofkt";
  model.save_checkpoint(path);
  Detector loaded = Detector::from_checkpoint(path);
  CHECK(loaded.config().dim == cfg.dim);
  CHECK(loaded.config().strides == cfg.strides);
  const auto after = loaded.forward(img);
  for (size_t l = 0; l < before.size(); ++l)
    for (int64_t i = 0; i < before[l].boxes5.value().numel(); ++i)
      CHECK(before[l].boxes5.value()[i] == after[l].boxes5.value()[i]);

  ModelConfig other = cfg;
  other.dim = 16;
  other.pe_frequencies = 4;
  Detector mismatched(other, 16);
  CHECK_THROWS(mismatched.load_checkpoint(path));
  std::remove(path.c_str());
}

TEST_CASE("backbone conv gradients match finite differences on a 16x16 input") {
  ModelConfig cfg = tiny_config();
  Detector model(cfg, 17);
  Rng rng(18);
  const Tensor img = random_image(rng, 16, 16);

  auto loss_value = [&]() {
    const FeaturePyramid fp = model.run_backbone(Var::constant(img));
    Var acc = sum(fp.levels[0]);
    for (size_t l = 1; l < fp.levels.size(); ++l) acc = add(acc, sum(fp.levels[l]));
    return acc;
  };
  Var loss = loss_value();
  backpropagate(loss);

  const Var w0 = model.params().get("backbone/stem0/w");
  const Tensor fd = finite_difference_gradient(
      [&](const Tensor& probe) {
        NoGradGuard ng;
        Tensor& dst = w0.node()->value;
        const Tensor saved = dst;
        std::copy(probe.data(), probe.data() + probe.numel(), dst.data());
        const double v = loss_value().value()[0];
        std::copy(saved.data(), saved.data() + saved.numel(), dst.data());
        return v;
      },
      w0.value());
  CHECK(gradient_rel_error(w0.grad(), fd) <= 1e-4);
}
