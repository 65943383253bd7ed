#include "epifusion/evaluate.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "epifusion/epipolar_field.hpp"

namespace epifusion {

namespace {

struct FrameResult {
  std::vector<std::vector<Pixel>> pred2d;  // [view][joint]
  Eigen::MatrixXd pred3d;                  // k x 3
};

FrameResult eval_frame(const std::vector<std::vector<DecodedJoint>>& decoded, const Rig& rig,
                       int k) {
  FrameResult fr;
  fr.pred3d.resize(k, 3);
  for (const auto& d : decoded) {
    std::vector<Pixel> px;
    px.reserve(d.size());
    for (const DecodedJoint& dj : d) px.push_back(dj.px);
    fr.pred2d.push_back(std::move(px));
  }
  for (int j = 0; j < k; ++j) {
    std::vector<std::pair<CameraParams, Pixel>> obs;
    for (size_t v = 0; v < rig.cameras.size() && v < decoded.size(); ++v)
      obs.emplace_back(rig.cameras[v], decoded[v][static_cast<size_t>(j)].px);
    fr.pred3d.row(j) = triangulate_dlt(obs).transpose();
  }
  return fr;
}

EvalReport aggregate(const Dataset& ds, const std::vector<FrameResult>& frames,
                     const std::string& model_name) {
  const int k = ds.k;
  EvalReport rep;
  rep.model_name = model_name;
  rep.n_frames = static_cast<int>(ds.frames.size());
  rep.jdr_joint.assign(static_cast<size_t>(k), 0.0);
  rep.mpjpe_joint.assign(static_cast<size_t>(k), 0.0);

  std::vector<long> jdr_hit(static_cast<size_t>(k), 0), jdr_total(static_cast<size_t>(k), 0);
  std::vector<double> mpjpe_acc(static_cast<size_t>(k), 0.0);
  double occ_acc = 0.0, vis_acc = 0.0;
  long occ_n = 0, vis_n = 0;

  for (size_t f = 0; f < ds.frames.size(); ++f) {
    const ScenePose& pose = ds.frames[f];
    const FrameResult& fr = frames[f];
    for (size_t v = 0; v < pose.views.size(); ++v) {
      const std::vector<Pixel>& gt2d = pose.views[v].joints2d;
      // JDR threshold: half the projected head-neck bone of this view/frame.
      const double head_size = std::hypot(gt2d[kHead].u - gt2d[kNeck].u,
                                          gt2d[kHead].v - gt2d[kNeck].v);
      const double thr = std::max(1e-6, 0.5 * head_size);
      for (int j = 0; j < k; ++j) {
        const double dist = std::hypot(fr.pred2d[v][static_cast<size_t>(j)].u - gt2d[static_cast<size_t>(j)].u,
                                       fr.pred2d[v][static_cast<size_t>(j)].v - gt2d[static_cast<size_t>(j)].v);
        if (dist <= thr) ++jdr_hit[static_cast<size_t>(j)];
        ++jdr_total[static_cast<size_t>(j)];
      }
    }
    for (int j = 0; j < k; ++j) {
      const double err = (fr.pred3d.row(j) - pose.joints3d.row(j)).norm();
      mpjpe_acc[static_cast<size_t>(j)] += err;
      bool occluded = false;
      for (const ViewObservation& obs : pose.views)
        if (!obs.visible[static_cast<size_t>(j)]) occluded = true;
      if (occluded) {
        occ_acc += err;
        ++occ_n;
      } else {
        vis_acc += err;
        ++vis_n;
      }
    }
  }

  long hit_all = 0, total_all = 0;
  double mp_all = 0.0;
  for (int j = 0; j < k; ++j) {
    hit_all += jdr_hit[static_cast<size_t>(j)];
    total_all += jdr_total[static_cast<size_t>(j)];
    mp_all += mpjpe_acc[static_cast<size_t>(j)];
    rep.jdr_joint[static_cast<size_t>(j)] =
        jdr_total[static_cast<size_t>(j)] == 0
            ? 0.0
            : 100.0 * jdr_hit[static_cast<size_t>(j)] / static_cast<double>(jdr_total[static_cast<size_t>(j)]);
    rep.mpjpe_joint[static_cast<size_t>(j)] =
        ds.frames.empty() ? 0.0 : mpjpe_acc[static_cast<size_t>(j)] / static_cast<double>(ds.frames.size());
  }
  rep.jdr_mean = total_all == 0 ? 0.0 : 100.0 * hit_all / static_cast<double>(total_all);
  rep.mpjpe_mean =
      ds.frames.empty() ? 0.0 : mp_all / static_cast<double>(ds.frames.size() * static_cast<size_t>(k));
  rep.mpjpe_occluded = occ_n == 0 ? 0.0 : occ_acc / static_cast<double>(occ_n);
  rep.mpjpe_visible = vis_n == 0 ? 0.0 : vis_acc / static_cast<double>(vis_n);
  rep.n_occluded_joints = static_cast<int>(occ_n);
  return rep;
}

}  // namespace

EvalReport evaluate(const Parameters& params, const Dataset& dataset, int threads,
                    const std::string& model_name) {
  if (dataset.frames.empty()) throw DataError("evaluate: dataset is empty");
  const ModelConfig& cfg = params.cfg;
  GeometryContext geo = make_geometry_context(dataset.rig, cfg);
  const int n_threads =
      threads > 0 ? threads : std::max(1u, std::thread::hardware_concurrency());

  std::vector<FrameResult> frames(dataset.frames.size());
  std::vector<std::string> errors(static_cast<size_t>(n_threads));
  auto worker = [&](int tid) {
    try {
      for (size_t f = static_cast<size_t>(tid); f < dataset.frames.size();
           f += static_cast<size_t>(n_threads)) {
        Tape tape;
        ModelVars vars = stage_params(tape, params);
        const Tensor pooled1 = pool_patches(dataset.images[f][0], cfg);
        const Tensor pooled2 = pool_patches(dataset.images[f][1], cfg);
        ForwardResult fwd =
            model_forward(tape, params, vars, geo, pooled1, pooled2, nullptr, nullptr);
        std::vector<std::vector<DecodedJoint>> decoded;
        decoded.push_back(decode_heatmap(tensor_to_heatmap(fwd.hm1->val)));
        decoded.push_back(decode_heatmap(tensor_to_heatmap(fwd.hm2->val)));
        frames[f] = eval_frame(decoded, dataset.rig, dataset.k);
      }
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(tid)] = e.what();
    }
  };
  if (n_threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
    for (std::thread& t : pool) t.join();
  }
  for (const std::string& err : errors)
    if (!err.empty()) throw NumericError("evaluate failed: " + err);

  EvalReport rep = aggregate(dataset, frames, model_name);
  rep.config_snapshot = "pe_mode = " + std::string(pe_mode_name(cfg.pe_mode)) +
                        "\nsingle_view = " + (cfg.mask_cross_view ? "1" : "0") +
                        "\ngamma = " + std::to_string(cfg.gamma) +
                        "\nlayers = " + std::to_string(cfg.layers) +
                        "\nheads = " + std::to_string(cfg.heads);
  return rep;
}

EvalReport evaluate_oracle(const Dataset& dataset, const std::string& model_name) {
  std::vector<FrameResult> frames(dataset.frames.size());
  for (size_t f = 0; f < dataset.frames.size(); ++f) {
    std::vector<std::vector<DecodedJoint>> decoded;
    for (size_t v = 0; v < 2; ++v) {
      const Heatmap gt = render_gt_heatmap(dataset.frames[f].views[v].joints2d,
                                           dataset.rig.image_size, dataset.sigma_hm);
      decoded.push_back(decode_heatmap(gt));
    }
    frames[f] = eval_frame(decoded, dataset.rig, dataset.k);
  }
  EvalReport rep = aggregate(dataset, frames, model_name);
  rep.config_snapshot = "oracle = 1";
  return rep;
}

void write_report_json(const std::string& path, const EvalReport& report) {
  nlohmann::json j;
  j["model"] = report.model_name;
  j["jdr_mean"] = report.jdr_mean;
  j["jdr_joint"] = report.jdr_joint;
  j["mpjpe_mean"] = report.mpjpe_mean;
  j["mpjpe_joint"] = report.mpjpe_joint;
  j["mpjpe_occluded"] = report.mpjpe_occluded;
  j["mpjpe_visible"] = report.mpjpe_visible;
  j["n_frames"] = report.n_frames;
  j["n_occluded_joints"] = report.n_occluded_joints;
  j["config"] = report.config_snapshot;
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

EvalReport read_report_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open for reading: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report parse error: ") + e.what());
  }
  EvalReport rep;
  rep.model_name = j.value("model", "");
  rep.jdr_mean = j.at("jdr_mean").get<double>();
  rep.jdr_joint = j.at("jdr_joint").get<std::vector<double>>();
  rep.mpjpe_mean = j.at("mpjpe_mean").get<double>();
  rep.mpjpe_joint = j.at("mpjpe_joint").get<std::vector<double>>();
  rep.mpjpe_occluded = j.at("mpjpe_occluded").get<double>();
  rep.mpjpe_visible = j.at("mpjpe_visible").get<double>();
  rep.n_frames = j.at("n_frames").get<int>();
  rep.n_occluded_joints = j.at("n_occluded_joints").get<int>();
  rep.config_snapshot = j.value("config", "");
  return rep;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "schema,model,arm,gamma,layers,heads,seed,jdr,mpjpe,mpjpe_occluded,mpjpe_visible\n";
  for (const MetricsRow& r : rows)
    os << "v1," << r.model << "," << r.arm << "," << r.gamma << "," << r.layers << "," << r.heads
       << "," << r.seed << "," << r.jdr << "," << r.mpjpe << "," << r.mpjpe_occluded << ","
       << r.mpjpe_visible << "\n";
  return os.str();
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << metrics_csv(rows);
}

std::vector<std::string> dump_attention(const Parameters& params, const Dataset& dataset,
                                        int frame, int view, const Pixel& query,
                                        const std::string& out_prefix) {
  if (frame < 0 || static_cast<size_t>(frame) >= dataset.frames.size())
    throw IndexOutOfRange("dump_attention: frame index out of range");
  if (view < 0 || view > 1) throw IndexOutOfRange("dump_attention: view must be 0 or 1");
  const ModelConfig& cfg = params.cfg;
  const GridSpec grid = cfg.grid();
  const int col = static_cast<int>(std::lround((query.u - grid.offset) / grid.stride));
  const int row = static_cast<int>(std::lround((query.v - grid.offset) / grid.stride));
  if (col < 0 || col >= grid.width || row < 0 || row >= grid.height)
    throw IndexOutOfRange("dump_attention: query pixel outside the feature grid");
  const int L = cfg.seq_len();
  const int qtoken = view * L + row * grid.width + col;

  GeometryContext geo = make_geometry_context(dataset.rig, cfg);
  Tape tape;
  ModelVars vars = stage_params(tape, params);
  AttnTrace trace;
  const size_t f = static_cast<size_t>(frame);
  model_forward(tape, params, vars, geo, pool_patches(dataset.images[f][0], cfg),
                pool_patches(dataset.images[f][1], cfg), nullptr, nullptr, &trace);

  std::vector<std::string> written;
  const int other_off = (1 - view) * L;
  for (int l = 0; l < cfg.layers; ++l)
    for (int h = 0; h < cfg.heads; ++h) {
      const Tensor& attn = trace.attn[static_cast<size_t>(l * cfg.heads + h)];
      EpipolarFieldGrid g;
      g.query = query;
      g.grid = grid;
      g.gamma = cfg.gamma;
      g.scores.resize(static_cast<size_t>(L));
      for (int m = 0; m < L; ++m) g.scores[static_cast<size_t>(m)] = attn.at(qtoken, other_off + m);
      const std::string path =
          out_prefix + "_layer" + std::to_string(l) + "_head" + std::to_string(h) + ".epf";
      write_epifield_file(path, g);
      written.push_back(path);
    }

  const CameraParams& cam_q = dataset.rig.cameras[static_cast<size_t>(view)];
  const CameraParams& cam_r = dataset.rig.cameras[static_cast<size_t>(1 - view)];
  EpipolarFieldGrid field = epipolar_field(cam_q, cam_r, query, grid, cfg.gamma);
  const std::string fpath = out_prefix + "_field.epf";
  write_epifield_file(fpath, field);
  written.push_back(fpath);
  return written;
}

}  // namespace epifusion
