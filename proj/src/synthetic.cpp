#include "epifusion/synthetic.hpp"

#include <cmath>

namespace epifusion {

const char* const kJointNames[kNumJoints] = {"head",    "neck",    "r_elbow", "r_wrist",
                                             "l_elbow", "l_wrist", "hip",     "knee"};

const int kJointParent[kNumJoints] = {kNeck, kHip, kNeck, kRElbow, kNeck, kLElbow, -1, kHip};

const double kJointChannelWeights[kNumJoints][3] = {
    {1.0, 0.1, 0.1}, {0.1, 1.0, 0.1}, {0.1, 0.1, 1.0}, {1.0, 1.0, 0.1},
    {1.0, 0.1, 1.0}, {0.1, 1.0, 1.0}, {0.7, 0.4, 0.9}, {0.9, 0.7, 0.3},
};

Rig make_rig(int n_cams, double radius_mm, double height_mm, int image_size, double focal_px,
             uint64_t seed) {
  if (n_cams < 2) throw DegenerateGeometry("rig needs at least two cameras");
  Rng rng = make_rng(seed, RngStream::RigJitter);
  Rig rig;
  rig.image_size = image_size;
  // Two-camera rigs use a quarter-circle spacing: antipodal cameras aimed at
  // the origin leave triangulation of points near the rig center
  // ill-conditioned (rays meet at ~180 degrees).
  const double spacing = n_cams == 2 ? M_PI / 2.0 : 2.0 * M_PI / n_cams;
  for (int i = 0; i < n_cams; ++i) {
    const double phi = spacing * i + rng.uniform(-0.02, 0.02) * spacing;
    const double r = radius_mm * (1.0 + rng.uniform(-0.02, 0.02));
    const double h = height_mm * (1.0 + rng.uniform(-0.02, 0.02));
    const Vec3 center(r * std::cos(phi), r * std::sin(phi), h);

    // Look-at rotation (x right, y down, z forward), aimed at the origin.
    const Vec3 fwd = (-center).normalized();
    Vec3 up(0.0, 0.0, 1.0);
    if (std::abs(fwd.dot(up)) > 0.999) up = Vec3(0.0, 1.0, 0.0);
    const Vec3 right = fwd.cross(up).normalized();
    const Vec3 down = fwd.cross(right);

    CameraParams cam;
    cam.R.row(0) = right.transpose();
    cam.R.row(1) = down.transpose();
    cam.R.row(2) = fwd.transpose();
    cam.t = -cam.R * center;
    cam.K = Mat3::Identity();
    cam.K(0, 0) = cam.K(1, 1) = focal_px;
    cam.K(0, 2) = cam.K(1, 2) = (image_size - 1) / 2.0;
    cam.width = cam.height = image_size;
    cam.validate();
    rig.cameras.push_back(cam);
  }
  return rig;
}

namespace {

Vec3 sph(double azimuth, double polar) {
  return Vec3(std::sin(polar) * std::cos(azimuth), std::sin(polar) * std::sin(azimuth),
              std::cos(polar));
}

// Desk-scale bone lengths (mm), sized so every pose stays inside the default
// narrow-FOV frustum.
constexpr double kLenTorso = 48.0;
constexpr double kLenHead = 25.0;
constexpr double kLenUpperArm = 30.0;
constexpr double kLenForearm = 27.0;
constexpr double kLenLeg = 45.0;

}  // namespace

std::vector<Eigen::MatrixXd> animate_skeleton(int n_frames, uint64_t seed) {
  if (n_frames < 1) throw DataError("animate_skeleton: need at least one frame");
  Rng rng = make_rng(seed, RngStream::SkeletonPhases);
  double ph[14];
  for (double& p : ph) p = rng.uniform(0.0, 2.0 * M_PI);

  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<size_t>(n_frames));
  for (int f = 0; f < n_frames; ++f) {
    const double t = static_cast<double>(f);
    Eigen::MatrixXd j(kNumJoints, 3);

    const Vec3 root(22.0 * std::sin(0.11 * t + ph[0]), 22.0 * std::sin(0.13 * t + ph[1]),
                    22.0 * std::sin(0.09 * t + ph[2]));
    j.row(kHip) = root.transpose();

    const Vec3 torso_dir = sph(ph[3] + 0.5 * std::sin(0.07 * t + ph[4]),
                               0.18 + 0.12 * std::sin(0.10 * t + ph[5]));
    j.row(kNeck) = (root + kLenTorso * torso_dir).transpose();

    const Vec3 head_dir =
        sph(ph[3] + 0.4 * std::sin(0.12 * t + ph[6]), 0.12 + 0.10 * std::sin(0.14 * t + ph[6]));
    j.row(kHead) = (j.row(kNeck).transpose() + kLenHead * head_dir).transpose();

    // Arms swing widely so distal joints are hard to infer from a single
    // view when their blobs are hidden.
    const Vec3 re_dir = sph(0.4 + 0.9 * std::sin(0.23 * t + ph[7]),
                            1.25 + 0.45 * std::sin(0.19 * t + ph[8]));
    j.row(kRElbow) = (j.row(kNeck).transpose() + kLenUpperArm * re_dir).transpose();
    const Vec3 rw_dir = sph(0.2 + 1.3 * std::sin(0.31 * t + ph[9]),
                            1.35 + 0.65 * std::sin(0.27 * t + ph[10]));
    j.row(kRWrist) = (j.row(kRElbow).transpose() + kLenForearm * rw_dir).transpose();

    const Vec3 le_dir = sph(M_PI - 0.4 + 0.9 * std::sin(0.21 * t + ph[11]),
                            1.25 + 0.45 * std::sin(0.17 * t + ph[12]));
    j.row(kLElbow) = (j.row(kNeck).transpose() + kLenUpperArm * le_dir).transpose();
    const Vec3 lw_dir = sph(M_PI - 0.2 + 1.3 * std::sin(0.29 * t + ph[13]),
                            1.35 + 0.65 * std::sin(0.25 * t + ph[0]));
    j.row(kLWrist) = (j.row(kLElbow).transpose() + kLenForearm * lw_dir).transpose();

    const Vec3 knee_dir = sph(ph[1] + 0.6 * std::sin(0.15 * t + ph[2]),
                              M_PI - 0.25 - 0.15 * std::sin(0.12 * t + ph[4]));
    j.row(kKnee) = (root + kLenLeg * knee_dir).transpose();

    out.push_back(std::move(j));
  }
  return out;
}

ScenePose project_pose(const Eigen::MatrixXd& joints3d, const Rig& rig, int frame_id) {
  ScenePose pose;
  pose.frame_id = frame_id;
  pose.joints3d = joints3d;
  for (const CameraParams& cam : rig.cameras) {
    ViewObservation obs;
    for (int j = 0; j < joints3d.rows(); ++j) {
      obs.joints2d.push_back(project(cam, joints3d.row(j).transpose()));
      obs.visible.push_back(1);
    }
    pose.views.push_back(std::move(obs));
  }
  return pose;
}

Heatmap render_gt_heatmap(const std::vector<Pixel>& joints2d, int image_size, double sigma_hm) {
  const int hh = image_size / 4;
  Heatmap hm(static_cast<int>(joints2d.size()), hh, hh);
  for (size_t j = 0; j < joints2d.size(); ++j) {
    const double cu = image_to_heatmap(joints2d[j].u);
    const double cv = image_to_heatmap(joints2d[j].v);
    const int qc = static_cast<int>(std::lround(cu));
    const int qr = static_cast<int>(std::lround(cv));
    if (qc < 0 || qc >= hh || qr < 0 || qr >= hh) continue;
    double mx = 0.0;
    for (int r = 0; r < hh; ++r)
      for (int c = 0; c < hh; ++c) {
        const double d2 = (c - cu) * (c - cu) + (r - cv) * (r - cv);
        const double val = std::exp(-d2 / (2.0 * sigma_hm * sigma_hm));
        hm.at(static_cast<int>(j), r, c) = val;
        mx = std::max(mx, val);
      }
    // Normalize so the channel max is exactly 1 at the quantized joint cell.
    if (mx > 0.0)
      for (int r = 0; r < hh; ++r)
        for (int c = 0; c < hh; ++c) hm.at(static_cast<int>(j), r, c) /= mx;
  }
  return hm;
}

void render_views(ScenePose& pose, const Rig& rig, const RenderConfig& cfg, uint64_t seed,
                  std::vector<ViewImage>& images_out, GtHeatmapSet& gt_out) {
  const int n_views = static_cast<int>(rig.cameras.size());
  const int sz = rig.image_size;
  const int k = static_cast<int>(pose.joints3d.rows());

  // Occlusion draw for this frame.
  Rng occ_rng(seed ^ 0x0cc10dedULL, static_cast<uint64_t>(pose.frame_id));
  const bool occlude_frame = occ_rng.uniform() < cfg.occlusion.frame_fraction;
  int occ_view = -1;
  std::vector<int> occ_joints;
  if (occlude_frame && cfg.occlusion.joints_per_frame > 0) {
    occ_view = static_cast<int>(occ_rng.uniform_int(static_cast<uint64_t>(n_views)));
    std::vector<int> pool(static_cast<size_t>(k));
    for (int j = 0; j < k; ++j) pool[static_cast<size_t>(j)] = j;
    for (int pick = 0; pick < cfg.occlusion.joints_per_frame && !pool.empty(); ++pick) {
      const size_t idx = occ_rng.uniform_int(pool.size());
      occ_joints.push_back(pool[idx]);
      pool.erase(pool.begin() + static_cast<long>(idx));
    }
  }

  images_out.assign(static_cast<size_t>(n_views), ViewImage{});
  gt_out.views.clear();
  Rng noise_rng(seed ^ 0x5eedf00dULL, static_cast<uint64_t>(pose.frame_id) * 16 + 1);
  for (int v = 0; v < n_views; ++v) {
    ViewObservation& obs = pose.views[static_cast<size_t>(v)];
    for (int j : occ_joints)
      if (v == occ_view) obs.visible[static_cast<size_t>(j)] = 0;

    ViewImage img;
    img.channels = 3;
    img.height = img.width = sz;
    img.v.assign(static_cast<size_t>(3) * sz * sz, 0.0f);
    const int win = static_cast<int>(std::ceil(4.0 * cfg.sigma_img));
    for (int j = 0; j < k; ++j) {
      if (!obs.visible[static_cast<size_t>(j)]) continue;  // occluded blobs are omitted
      const Pixel& px = obs.joints2d[static_cast<size_t>(j)];
      const int x0 = std::max(0, static_cast<int>(std::floor(px.u)) - win);
      const int x1 = std::min(sz - 1, static_cast<int>(std::ceil(px.u)) + win);
      const int y0 = std::max(0, static_cast<int>(std::floor(px.v)) - win);
      const int y1 = std::min(sz - 1, static_cast<int>(std::ceil(px.v)) + win);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double d2 = (x - px.u) * (x - px.u) + (y - px.v) * (y - px.v);
          const double g = std::exp(-d2 / (2.0 * cfg.sigma_img * cfg.sigma_img));
          for (int c = 0; c < 3; ++c)
            img.at(c, y, x) += static_cast<float>(kJointChannelWeights[j][c] * g);
        }
    }
    if (cfg.sigma_feat > 0.0) {
      for (float& val : img.v) val += static_cast<float>(noise_rng.normal(0.0, cfg.sigma_feat));
    }
    images_out[static_cast<size_t>(v)] = std::move(img);
    gt_out.views.push_back(render_gt_heatmap(obs.joints2d, sz, cfg.sigma_hm));
  }
}

Dataset generate_dataset(const GenConfig& cfg) {
  Dataset ds;
  ds.rig = make_rig(cfg.n_cams, cfg.radius_mm, cfg.height_mm, cfg.image_size, cfg.focal_px,
                    cfg.seed);
  ds.k = kNumJoints;
  ds.sigma_hm = cfg.render.sigma_hm;
  const std::vector<Eigen::MatrixXd> skel = animate_skeleton(cfg.n_frames, cfg.seed);
  for (int f = 0; f < cfg.n_frames; ++f) {
    ScenePose pose = project_pose(skel[static_cast<size_t>(f)], ds.rig, f);
    std::vector<ViewImage> imgs;
    GtHeatmapSet gt;
    render_views(pose, ds.rig, cfg.render, cfg.seed, imgs, gt);
    ds.frames.push_back(std::move(pose));
    ds.images.push_back(std::move(imgs));
  }
  return ds;
}

}  // namespace epifusion
