#include "ofkit/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ofkit/rng.hpp"

namespace fs = std::filesystem;

namespace ofkit {

LabelMap::LabelMap(std::vector<std::string> names) : names_(std::move(names)) {
  for (size_t i = 0; i < names_.size(); ++i) ids_[names_[i]] = static_cast<int>(i);
}

int LabelMap::id(const std::string& name) const {
  auto it = ids_.find(name);
  return it == ids_.end() ? -1 : it->second;
}

const std::string& LabelMap::name(int id) const {
  return names_.at(static_cast<size_t>(id));
}

namespace {

bool parse_double(const std::string& tok, double& out) {
  const char* begin = tok.data();
  const char* end = begin + tok.size();
  auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end;
}

double quad_max_skew_deg(const std::vector<Vec2>& q) {
  double worst = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Vec2& prev = q[static_cast<size_t>((i + 3) % 4)];
    const Vec2& cur = q[static_cast<size_t>(i)];
    const Vec2& next = q[static_cast<size_t>((i + 1) % 4)];
    const double ax = prev.x - cur.x, ay = prev.y - cur.y;
    const double bx = next.x - cur.x, by = next.y - cur.y;
    const double dot = ax * bx + ay * by;
    const double cross = ax * by - ay * bx;
    const double angle = std::atan2(std::fabs(cross), dot) * 180.0 / kPi;
    worst = std::max(worst, std::fabs(angle - 90.0));
  }
  return worst;
}

}  // namespace

std::vector<Instance> parse_dota_annotation(const std::string& text, const LabelMap& labels,
                                            ParseStats* stats) {
  std::vector<Instance> out;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  auto warn = [&](const std::string& msg) {
    if (stats) stats->warnings.push_back("line " + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line.find(':') != std::string::npos) continue;  // headers
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
    if (tokens.empty()) continue;

    double first;
    if (!parse_double(tokens[0], first)) {
      warn("unrecognized line skipped");
      continue;
    }
    std::vector<double> coords;
    for (const std::string& t : tokens) {
      double v;
      if (!parse_double(t, v)) break;
      coords.push_back(v);
    }
    if (coords.size() < 8)
      throw std::runtime_error("dota: line " + std::to_string(line_no) + " has only " +
                               std::to_string(coords.size()) + " coordinates, need 8");
    if (tokens.size() < 9) {
      warn("missing category, instance skipped");
      continue;
    }
    const std::string& category = tokens[8];
    const int cat_id = labels.id(category);
    if (cat_id < 0) {
      warn("unknown category '" + category + "', instance skipped");
      continue;
    }
    int difficult = 0;
    if (tokens.size() >= 10) {
      double v;
      if (!parse_double(tokens[9], v)) {
        warn("bad difficulty flag, instance skipped");
        continue;
      }
      difficult = static_cast<int>(v);
    }

    std::vector<Vec2> quad;
    for (int i = 0; i < 4; ++i)
      quad.push_back({coords[static_cast<size_t>(2 * i)], coords[static_cast<size_t>(2 * i + 1)]});
    const double skew = quad_max_skew_deg(quad);
    if (skew > 2.0)
      warn("quadrilateral skewed by " + std::to_string(skew) + " degrees, fitting enclosing box");
    Instance inst;
    inst.category = cat_id;
    inst.box = minimum_enclosing_box(quad);
    inst.difficult = difficult != 0;
    out.push_back(inst);
    if (stats) ++stats->parsed;
  }
  return out;
}

std::string write_dota_annotation(const std::vector<Instance>& objects, const LabelMap& labels) {
  std::ostringstream os;
  char buf[64];
  for (const Instance& inst : objects) {
    const auto corners = box_corners(inst.box);
    for (const Vec2& c : corners) {
      std::snprintf(buf, sizeof(buf), "%.6f %.6f ", c.x, c.y);
      os << buf;
    }
    os << labels.name(inst.category) << ' ' << (inst.difficult ? 1 : 0) << '\n';
  }
  return os.str();
}

void write_ppm(const std::string& path, int width, int height, const std::vector<uint8_t>& rgb) {
  if (static_cast<size_t>(width) * height * 3 != rgb.size())
    throw std::invalid_argument("write_ppm: buffer does not match dimensions");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_ppm: cannot open '" + path + "'");
  os << "P6\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!os) throw std::runtime_error("write_ppm: write failed for '" + path + "'");
}

namespace {

int read_pnm_token(std::istream& is) {
  // skips whitespace and '#' comments
  while (true) {
    int c = is.peek();
    if (c == '#') {
      std::string comment;
      std::getline(is, comment);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int value;
  if (!(is >> value)) throw std::runtime_error("pnm: malformed header");
  return value;
}

}  // namespace

void read_image(const std::string& path, int& width, int& height, std::vector<uint8_t>& rgb) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_image: cannot open '" + path + "'");
  char magic[2];
  is.read(magic, 2);
  if (!is || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw std::runtime_error("read_image: '" + path + "' is not a binary PPM/PGM file");
  const bool gray = magic[1] == '5';
  width = read_pnm_token(is);
  height = read_pnm_token(is);
  const int maxval = read_pnm_token(is);
  if (maxval != 255) throw std::runtime_error("read_image: only 8-bit images are supported");
  is.get();  // single whitespace after header
  const size_t n = static_cast<size_t>(width) * height;
  std::vector<uint8_t> raw(gray ? n : 3 * n);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw std::runtime_error("read_image: truncated pixel data in '" + path + "'");
  if (gray) {
    rgb.resize(3 * n);
    for (size_t i = 0; i < n; ++i) rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = raw[i];
  } else {
    rgb = std::move(raw);
  }
}

std::vector<double> render_coverage(const OrientedBox& box, int width, int height,
                                    int supersample) {
  std::vector<double> cov(static_cast<size_t>(width) * height, 0.0);
  // only pixels near the box can have coverage
  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  for (const Vec2& v : box_corners(box)) {
    min_x = std::min(min_x, v.x);
    max_x = std::max(max_x, v.x);
    min_y = std::min(min_y, v.y);
    max_y = std::max(max_y, v.y);
  }
  const int x0 = std::max(0, static_cast<int>(std::floor(min_x)) - 1);
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(max_x)) + 1);
  const int y0 = std::max(0, static_cast<int>(std::floor(min_y)) - 1);
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(max_y)) + 1);
  const double inv = 1.0 / supersample;
  const double norm = inv * inv;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < supersample; ++sy)
        for (int sx = 0; sx < supersample; ++sx)
          hits += point_in_box(box, x + (sx + 0.5) * inv, y + (sy + 0.5) * inv);
      cov[static_cast<size_t>(y) * width + x] = hits * norm;
    }
  return cov;
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb class_color(int category) {
  static const Rgb palette[6] = {{0.95, 0.35, 0.25}, {0.30, 0.90, 0.35}, {0.30, 0.45, 0.95},
                                 {0.92, 0.85, 0.25}, {0.85, 0.35, 0.90}, {0.30, 0.88, 0.88}};
  return palette[category % 6];
}

}  // namespace

AnnotatedImage synthesize_scene(uint64_t seed, const SynthConfig& cfg) {
  Rng rng(seed);
  AnnotatedImage img;
  img.width = cfg.width;
  img.height = cfg.height;

  const int target = uniform_int(rng, cfg.min_objects, cfg.max_objects);
  const double margin = cfg.max_size * 0.5 + 1.0;
  for (int k = 0; k < target; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
      OrientedBox box;
      box.w = uniform(rng, cfg.min_size, cfg.max_size);
      box.h = box.w / uniform(rng, cfg.min_aspect, cfg.max_aspect);
      box.cx = uniform(rng, margin, cfg.width - margin);
      box.cy = uniform(rng, margin, cfg.height - margin);
      box.theta = uniform(rng, -kPi / 2, kPi / 2);
      const int category = uniform_int(rng, 0, cfg.classes - 1);
      bool ok = true;
      for (const Instance& other : img.objects)
        if (rotated_iou(box, other.box) > cfg.max_overlap) {
          ok = false;
          break;
        }
      if (!ok) continue;
      img.objects.push_back({category, box, false});
      placed = true;
      break;
    }
    if (!placed) {
      img.generation_truncated = true;
      break;
    }
  }

  // paint: noisy dark background, then anti-aliased boxes in object order
  const size_t n = static_cast<size_t>(cfg.width) * cfg.height;
  std::vector<double> canvas(3 * n);
  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c)
      canvas[3 * i + c] = 0.08 + uniform(rng, -cfg.noise, cfg.noise);
  }
  for (const Instance& inst : img.objects) {
    const Rgb base = class_color(inst.category);
    const double intensity = uniform(rng, 0.75, 1.0);
    const Rgb color{base.r * intensity, base.g * intensity, base.b * intensity};
    const std::vector<double> cov = render_coverage(inst.box, cfg.width, cfg.height);
    for (size_t i = 0; i < n; ++i) {
      const double a = cov[i];
      if (a == 0.0) continue;
      canvas[3 * i + 0] = canvas[3 * i + 0] * (1.0 - a) + color.r * a;
      canvas[3 * i + 1] = canvas[3 * i + 1] * (1.0 - a) + color.g * a;
      canvas[3 * i + 2] = canvas[3 * i + 2] * (1.0 - a) + color.b * a;
    }
  }
  img.pixels.resize(3 * n);
  for (size_t i = 0; i < 3 * n; ++i) {
    const double v = std::clamp(canvas[i], 0.0, 1.0);
    img.pixels[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

Tensor image_to_tensor(const AnnotatedImage& img) {
  if (img.pixels.empty()) throw std::invalid_argument("image_to_tensor: pixels not loaded");
  Tensor t({img.height, img.width, 3});
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<double>(img.pixels[static_cast<size_t>(i)]) / 255.0 - 0.5;
  return t;
}

void save_dataset(const std::string& dir, const std::vector<AnnotatedImage>& images,
                  const LabelMap& labels) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "annotations");
  {
    std::ofstream os(fs::path(dir) / "classes.txt");
    for (const std::string& name : labels.names()) os << name << '\n';
  }
  for (const AnnotatedImage& img : images) {
    if (img.pixels.empty())
      throw std::invalid_argument("save_dataset: image '" + img.id + "' has no pixels");
    write_ppm((fs::path(dir) / "images" / (img.id + ".ppm")).string(), img.width, img.height,
              img.pixels);
    std::ofstream os(fs::path(dir) / "annotations" / (img.id + ".txt"));
    os << write_dota_annotation(img.objects, labels);
  }
}

std::vector<std::string> read_class_file(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "classes.txt");
  std::vector<std::string> names;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) names.push_back(line);
  return names;
}

std::vector<AnnotatedImage> load_dataset(const std::string& dir, const LabelMap& labels,
                                         bool load_pixels, ParseStats* stats) {
  const fs::path ann_dir = fs::path(dir) / "annotations";
  if (!fs::is_directory(ann_dir))
    throw std::runtime_error("load_dataset: no annotations directory under '" + dir + "'");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(ann_dir))
    if (entry.path().extension() == ".txt") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<AnnotatedImage> out;
  for (const fs::path& f : files) {
    AnnotatedImage img;
    img.id = f.stem().string();
    std::ifstream is(f);
    std::stringstream ss;
    ss << is.rdbuf();
    img.objects = parse_dota_annotation(ss.str(), labels, stats);
    const fs::path image_path = fs::path(dir) / "images" / (img.id + ".ppm");
    if (fs::exists(image_path)) {
      std::vector<uint8_t> rgb;
      read_image(image_path.string(), img.width, img.height, rgb);
      if (load_pixels) img.pixels = std::move(rgb);
    } else if (load_pixels) {
      throw std::runtime_error("load_dataset: missing image '" + image_path.string() + "'");
    }
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace ofkit
