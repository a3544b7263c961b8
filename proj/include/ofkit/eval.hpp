#pragma once

#include <string>
#include <vector>

#include "ofkit/data.hpp"

namespace ofkit {

enum class ApProtocol { Voc07, Voc12 };

ApProtocol protocol_from_string(const std::string& name);
std::string protocol_to_string(ApProtocol p);

struct Detection {
  std::string image_id;
  int category = 0;
  double score = 0.0;
  OrientedBox box;
};

struct PrPoint {
  double score_cutoff = 0.0;
  double precision = 0.0;  // monotone-interpolated
  double recall = 0.0;
};

struct ClassApResult {
  int category = 0;
  double threshold = 0.5;
  double ap = 0.0;
  int num_gt = 0;         // non-difficult ground truths
  int num_detections = 0;
  std::vector<PrPoint> curve;
};

struct EvalReport {
  ApProtocol protocol = ApProtocol::Voc07;
  std::vector<double> thresholds;
  std::vector<ClassApResult> per_class;  // one entry per (class, threshold)
  double ap50 = 0.0;   // mean over classes at IoU 0.5
  double ap75 = 0.0;
  double ap50_95 = 0.0;

  double mean_ap(double threshold) const;
};

// Greedy score-descending matching against rotated IoU; each ground truth is
// matched at most once, difficult instances are excluded from both the
// denominators and the false positives (VOC convention).
EvalReport evaluate_ap(const std::vector<Detection>& detections,
                       const std::vector<AnnotatedImage>& ground_truth,
                       const std::vector<double>& thresholds, ApProtocol protocol);

inline std::vector<double> coco_style_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

// CSV with header "class,threshold,score_cutoff,precision,recall".
void export_pr_curves(const EvalReport& report, const LabelMap& labels, const std::string& path);
std::vector<PrPoint> parse_pr_csv_for(const std::string& path, const std::string& class_name,
                                      double threshold);

void write_eval_report_json(const EvalReport& report, const LabelMap& labels,
                            const std::string& path);

// JSON-lines: {"image_id","class","score","cx","cy","w","h","theta"} per line.
void write_detections_jsonl(const std::string& path, const std::vector<Detection>& detections,
                            const LabelMap& labels);
std::vector<Detection> read_detections_jsonl(const std::string& path, const LabelMap& labels,
                                             std::vector<std::string>* warnings = nullptr);

}  // namespace ofkit
