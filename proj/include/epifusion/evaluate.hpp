#pragma once

#include <string>
#include <vector>

#include "epifusion/metrics.hpp"
#include "epifusion/model.hpp"
#include "epifusion/synthetic.hpp"

namespace epifusion {

struct EvalReport {
  std::string model_name;
  double jdr_mean = 0.0;                 // %
  std::vector<double> jdr_joint;         // per joint, %
  double mpjpe_mean = 0.0;               // mm
  std::vector<double> mpjpe_joint;       // per joint, mm
  double mpjpe_occluded = 0.0;           // over (frame, joint) pairs occluded in some view
  double mpjpe_visible = 0.0;
  int n_frames = 0;
  int n_occluded_joints = 0;
  std::string config_snapshot;           // key = value text
};

// Forward both views of every frame, decode heatmaps, compute JDR at the
// per-frame threshold (half the projected head-neck bone), triangulate every
// joint across views and compute MPJPE. Frame-parallel with a deterministic
// ordered merge.
EvalReport evaluate(const Parameters& params, const Dataset& dataset, int threads = 0,
                    const std::string& model_name = "model");

// Oracle variant: decodes the ground-truth heatmaps instead of running the
// model, bounding what the decode + triangulation pipeline can achieve.
EvalReport evaluate_oracle(const Dataset& dataset, const std::string& model_name = "oracle");

void write_report_json(const std::string& path, const EvalReport& report);
EvalReport read_report_json(const std::string& path);

// Versioned flat CSV, one row per evaluated model/arm.
struct MetricsRow {
  std::string model;
  std::string arm;
  double gamma = 0.0;
  int layers = 0;
  int heads = 0;
  uint64_t seed = 0;
  double jdr = 0.0;
  double mpjpe = 0.0;
  double mpjpe_occluded = 0.0;
  double mpjpe_visible = 0.0;
};
std::string metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

// Writes the per-layer/head cross-view attention rows for one query pixel
// plus the analytic epipolar field for the same query, all in EPIFIELD
// format. Returns the written paths.
std::vector<std::string> dump_attention(const Parameters& params, const Dataset& dataset,
                                        int frame, int view, const Pixel& query,
                                        const std::string& out_prefix);

}  // namespace epifusion
