#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ofkit/geometry.hpp"
#include "ofkit/tensor.hpp"

namespace ofkit {

struct Instance {
  int category = 0;
  OrientedBox box;
  bool difficult = false;
};

struct AnnotatedImage {
  std::string id;
  int width = 0, height = 0;
  std::vector<Instance> objects;
  bool generation_truncated = false;  // rejection budget ran out during synthesis
  std::vector<uint8_t> pixels;        // RGB8 row-major; empty when not loaded
};

class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::vector<std::string> names);
  int id(const std::string& name) const;  // -1 when unknown
  const std::string& name(int id) const;
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> ids_;
};

struct ParseStats {
  int parsed = 0;
  std::vector<std::string> warnings;
};

// One instance per line: "x1 y1 x2 y2 x3 y3 x4 y4 category difficulty".
// Header lines ("imagesource:...", "gsd:...") are ignored. A coordinate line
// with fewer than 8 numbers is an error; other malformed lines are skipped
// with a warning carrying the line number. Quadrilaterals are reduced to
// their minimum-area enclosing rectangle; skew beyond 2 degrees warns.
std::vector<Instance> parse_dota_annotation(const std::string& text, const LabelMap& labels,
                                            ParseStats* stats = nullptr);
std::string write_dota_annotation(const std::vector<Instance>& objects, const LabelMap& labels);

// Binary PPM (P6) / PGM (P5), 8-bit. Grayscale is replicated to RGB.
void write_ppm(const std::string& path, int width, int height, const std::vector<uint8_t>& rgb);
void read_image(const std::string& path, int& width, int& height, std::vector<uint8_t>& rgb);

struct SynthConfig {
  int width = 64, height = 64;
  int min_objects = 1, max_objects = 5;
  double min_size = 12.0, max_size = 28.0;     // longer side, pixels
  double min_aspect = 1.2, max_aspect = 2.5;   // w / h
  int classes = 3;
  double max_overlap = 0.3;                    // pairwise rotated IoU bound
  double noise = 0.03;                         // additive uniform noise amplitude
  int max_attempts = 200;                      // rejection budget per object
};

// Deterministic synthetic scene: anti-aliased rotated rectangles with
// class-coded colors over a noisy background. Ground truth is exactly the
// rendered geometry.
AnnotatedImage synthesize_scene(uint64_t seed, const SynthConfig& cfg);

// Fraction of each pixel covered by the box, via supersampling; row-major.
std::vector<double> render_coverage(const OrientedBox& box, int width, int height,
                                    int supersample = 4);

// RGB8 -> [H,W,3] doubles in [-0.5, 0.5].
Tensor image_to_tensor(const AnnotatedImage& img);

// On-disk dataset layout: <dir>/images/<id>.ppm + <dir>/annotations/<id>.txt
// plus a classes.txt naming the label map.
void save_dataset(const std::string& dir, const std::vector<AnnotatedImage>& images,
                  const LabelMap& labels);
std::vector<AnnotatedImage> load_dataset(const std::string& dir, const LabelMap& labels,
                                         bool load_pixels, ParseStats* stats = nullptr);
std::vector<std::string> read_class_file(const std::string& dir);  // empty if absent

}  // namespace ofkit
