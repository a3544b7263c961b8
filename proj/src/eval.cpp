#include "ofkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ofkit {

using nlohmann::json;

ApProtocol protocol_from_string(const std::string& name) {
  if (name == "voc07") return ApProtocol::Voc07;
  if (name == "voc12") return ApProtocol::Voc12;
  throw std::invalid_argument("unknown AP protocol '" + name + "' (use voc07 or voc12)");
}

std::string protocol_to_string(ApProtocol p) {
  return p == ApProtocol::Voc07 ? "voc07" : "voc12";
}

namespace {

struct GtPool {
  std::vector<OrientedBox> boxes;
  std::vector<bool> difficult;
  std::vector<bool> used;
};

double ap_from_pr(const std::vector<double>& recall, const std::vector<double>& precision,
                  ApProtocol protocol) {
  if (recall.empty()) return 0.0;
  if (protocol == ApProtocol::Voc07) {
    double ap = 0.0;
    for (int i = 0; i <= 10; ++i) {
      const double r = 0.1 * i;
      double best = 0.0;
      for (size_t k = 0; k < recall.size(); ++k)
        if (recall[k] >= r - 1e-12) best = std::max(best, precision[k]);
      ap += best / 11.0;
    }
    return ap;
  }
  // VOC12: area under the monotone envelope
  std::vector<double> mrec{0.0};
  std::vector<double> mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (size_t i = mpre.size() - 1; i-- > 0;) mpre[i] = std::max(mpre[i], mpre[i + 1]);
  double ap = 0.0;
  for (size_t i = 0; i + 1 < mrec.size(); ++i) ap += (mrec[i + 1] - mrec[i]) * mpre[i + 1];
  return ap;
}

}  // namespace

double EvalReport::mean_ap(double threshold) const {
  double total = 0.0;
  int count = 0;
  for (const ClassApResult& r : per_class)
    if (std::fabs(r.threshold - threshold) < 1e-9) {
      total += r.ap;
      ++count;
    }
  return count == 0 ? 0.0 : total / count;
}

EvalReport evaluate_ap(const std::vector<Detection>& detections,
                       const std::vector<AnnotatedImage>& ground_truth,
                       const std::vector<double>& thresholds, ApProtocol protocol) {
  EvalReport report;
  report.protocol = protocol;
  report.thresholds = thresholds;

  // classes that appear anywhere; empty-empty classes never enter the report
  std::set<int> classes;
  for (const AnnotatedImage& img : ground_truth)
    for (const Instance& inst : img.objects) classes.insert(inst.category);
  for (const Detection& d : detections) classes.insert(d.category);

  for (double threshold : thresholds) {
    for (int cls : classes) {
      std::map<std::string, GtPool> pools;
      int npos = 0;
      for (const AnnotatedImage& img : ground_truth)
        for (const Instance& inst : img.objects)
          if (inst.category == cls) {
            GtPool& pool = pools[img.id];
            pool.boxes.push_back(inst.box);
            pool.difficult.push_back(inst.difficult);
            pool.used.push_back(false);
            if (!inst.difficult) ++npos;
          }

      std::vector<const Detection*> dets;
      for (const Detection& d : detections)
        if (d.category == cls) dets.push_back(&d);
      std::stable_sort(dets.begin(), dets.end(), [](const Detection* a, const Detection* b) {
        if (a->score != b->score) return a->score > b->score;
        return a->image_id < b->image_id;
      });

      std::vector<double> recall, precision;
      std::vector<double> cutoffs;
      int tp = 0, fp = 0;
      for (const Detection* d : dets) {
        auto pool_it = pools.find(d->image_id);
        int best_gt = -1;
        double best_iou = 0.0;
        if (pool_it != pools.end()) {
          GtPool& pool = pool_it->second;
          for (size_t g = 0; g < pool.boxes.size(); ++g) {
            const double iou = rotated_iou(d->box, pool.boxes[g]);
            if (iou > best_iou) {
              best_iou = iou;
              best_gt = static_cast<int>(g);
            }
          }
        }
        if (best_gt >= 0 && best_iou >= threshold) {
          GtPool& pool = pool_it->second;
          if (pool.difficult[static_cast<size_t>(best_gt)]) {
            continue;  // difficult: neither TP nor FP
          }
          if (!pool.used[static_cast<size_t>(best_gt)]) {
            pool.used[static_cast<size_t>(best_gt)] = true;
            ++tp;
          } else {
            ++fp;  // duplicate on an already-matched ground truth
          }
        } else {
          ++fp;
        }
        recall.push_back(npos > 0 ? static_cast<double>(tp) / npos : 0.0);
        precision.push_back(tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0);
        cutoffs.push_back(d->score);
      }

      ClassApResult result;
      result.category = cls;
      result.threshold = threshold;
      result.num_gt = npos;
      result.num_detections = static_cast<int>(dets.size());
      result.ap = npos > 0 ? ap_from_pr(recall, precision, protocol) : 0.0;
      // export curve with the precision envelope applied
      std::vector<double> envelope = precision;
      for (size_t i = envelope.size(); i-- > 1;)
        envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
      for (size_t i = 0; i < recall.size(); ++i)
        result.curve.push_back({cutoffs[i], envelope[i], recall[i]});
      report.per_class.push_back(std::move(result));
    }
  }

  report.ap50 = report.mean_ap(0.5);
  report.ap75 = report.mean_ap(0.75);
  double sum = 0.0;
  int n = 0;
  for (double t : thresholds) {
    sum += report.mean_ap(t);
    ++n;
  }
  report.ap50_95 = n > 0 ? sum / n : 0.0;
  return report;
}

void export_pr_curves(const EvalReport& report, const LabelMap& labels, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("export_pr_curves: cannot open '" + path + "'");
  os << "class,threshold,score_cutoff,precision,recall\n";
  char buf[160];
  for (const ClassApResult& r : report.per_class)
    for (const PrPoint& p : r.curve) {
      std::snprintf(buf, sizeof(buf), "%s,%.2f,%.9g,%.9g,%.9g\n",
                    labels.name(r.category).c_str(), r.threshold, p.score_cutoff, p.precision,
                    p.recall);
      os << buf;
    }
  if (!os) throw std::runtime_error("export_pr_curves: write failed for '" + path + "'");
}

std::vector<PrPoint> parse_pr_csv_for(const std::string& path, const std::string& class_name,
                                      double threshold) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("parse_pr_csv_for: cannot open '" + path + "'");
  std::string line;
  std::getline(is, line);  // header
  std::vector<PrPoint> out;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string cls, thr, cut, prec, rec;
    std::getline(ls, cls, ',');
    std::getline(ls, thr, ',');
    std::getline(ls, cut, ',');
    std::getline(ls, prec, ',');
    std::getline(ls, rec, ',');
    if (cls != class_name || std::fabs(std::stod(thr) - threshold) > 1e-9) continue;
    out.push_back({std::stod(cut), std::stod(prec), std::stod(rec)});
  }
  return out;
}

void write_eval_report_json(const EvalReport& report, const LabelMap& labels,
                            const std::string& path) {
  json j;
  j["protocol"] = protocol_to_string(report.protocol);
  j["ap50"] = report.ap50;
  j["ap75"] = report.ap75;
  j["ap50_95"] = report.ap50_95;
  j["per_class"] = json::array();
  for (const ClassApResult& r : report.per_class)
    j["per_class"].push_back({{"class", labels.name(r.category)},
                              {"threshold", r.threshold},
                              {"ap", r.ap},
                              {"num_gt", r.num_gt},
                              {"num_detections", r.num_detections}});
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_eval_report_json: cannot open '" + path + "'");
  os << j.dump(2) << '\n';
}

void write_detections_jsonl(const std::string& path, const std::vector<Detection>& detections,
                            const LabelMap& labels) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_detections_jsonl: cannot open '" + path + "'");
  for (const Detection& d : detections) {
    json j = {{"image_id", d.image_id}, {"class", labels.name(d.category)},
              {"score", d.score},      {"cx", d.box.cx},
              {"cy", d.box.cy},        {"w", d.box.w},
              {"h", d.box.h},          {"theta", d.box.theta}};
    os << j.dump() << '\n';
  }
}

std::vector<Detection> read_detections_jsonl(const std::string& path, const LabelMap& labels,
                                             std::vector<std::string>* warnings) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_detections_jsonl: cannot open '" + path + "'");
  std::vector<Detection> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      if (warnings) warnings->push_back("line " + std::to_string(line_no) + ": bad JSON, skipped");
      continue;
    }
    const int cls = labels.id(j.value("class", std::string{}));
    if (cls < 0) {
      if (warnings)
        warnings->push_back("line " + std::to_string(line_no) + ": unknown class, skipped");
      continue;
    }
    Detection d;
    d.image_id = j.value("image_id", std::string{});
    d.category = cls;
    d.score = j.value("score", 0.0);
    d.box = {j.value("cx", 0.0), j.value("cy", 0.0), j.value("w", 0.0), j.value("h", 0.0),
             j.value("theta", 0.0)};
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace ofkit
