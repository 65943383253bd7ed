#pragma once

#include <string>
#include <vector>

#include "epifusion/geometry.hpp"
#include "epifusion/heatmap.hpp"

namespace epifusion {

// Joint order of the synthetic 8-joint chain.
enum Joint : int {
  kHead = 0,
  kNeck = 1,
  kRElbow = 2,
  kRWrist = 3,
  kLElbow = 4,
  kLWrist = 5,
  kHip = 6,
  kKnee = 7,
};
constexpr int kNumJoints = 8;
extern const char* const kJointNames[kNumJoints];

// Parent joint per bone; the hip is the root.
extern const int kJointParent[kNumJoints];

struct Rig {
  std::vector<CameraParams> cameras;
  int image_size = 128;
};

struct ViewObservation {
  std::vector<Pixel> joints2d;    // k entries
  std::vector<uint8_t> visible;   // k entries; 0 only for occluded joints
};

struct ScenePose {
  int frame_id = 0;
  Eigen::MatrixXd joints3d;              // k x 3, mm
  std::vector<ViewObservation> views;    // one per camera
};

// Raw float blob image, one per view. Values are stored as 32-bit floats so
// the in-memory dataset is bit-identical to its on-disk form.
struct ViewImage {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<float> v;  // channel-major

  float at(int c, int y, int x) const {
    return v[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float& at(int c, int y, int x) {
    return v[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

struct GtHeatmapSet {
  std::vector<Heatmap> views;  // one per camera
};

struct OcclusionConfig {
  double frame_fraction = 0.25;  // fraction of frames with occlusion
  int joints_per_frame = 2;      // joints hidden in the chosen view
};

struct RenderConfig {
  OcclusionConfig occlusion;
  double sigma_img = 3.0;    // blob stddev, image px
  double sigma_hm = 2.0;     // ground-truth gaussian stddev, heatmap cells
  double sigma_feat = 0.05;  // additive image noise stddev
};

// Cameras on a circle of the given radius at the given height, aimed at the
// world origin. The seed jitters positions by <= 2% for non-degeneracy; the
// look-at rotation is recomputed after jittering.
Rig make_rig(int n_cams, double radius_mm, double height_mm, int image_size, double focal_px,
             uint64_t seed);

// Smooth sinusoidal joint-angle skeleton animation with per-seed phases and
// constant bone lengths. Returns one k x 3 joint matrix per frame.
std::vector<Eigen::MatrixXd> animate_skeleton(int n_frames, uint64_t seed);

// Per-joint blob channel weights (fixed palette, distinct per joint).
extern const double kJointChannelWeights[kNumJoints][3];

// Projects a skeleton into every view. Throws DepthNonPositive if a joint
// falls behind a camera.
ScenePose project_pose(const Eigen::MatrixXd& joints3d, const Rig& rig, int frame_id);

// Renders blob input images plus ground-truth heatmaps for one frame.
// Occlusion (decided by seed + config) removes the chosen joints' blobs from
// exactly one view and clears their visibility flags, but the ground-truth
// heatmaps keep supervising the true locations.
void render_views(ScenePose& pose, const Rig& rig, const RenderConfig& cfg, uint64_t seed,
                  std::vector<ViewImage>& images_out, GtHeatmapSet& gt_out);

// Ground-truth heatmap for one view: gaussian per joint at heatmap
// resolution, channel-normalized so the max is exactly 1 at the quantized
// joint cell. Joints outside the heatmap leave their channel zero.
Heatmap render_gt_heatmap(const std::vector<Pixel>& joints2d, int image_size, double sigma_hm);

struct Dataset {
  Rig rig;
  int k = kNumJoints;
  std::vector<ScenePose> frames;
  std::vector<std::vector<ViewImage>> images;  // [frame][view]
  double sigma_hm = 2.0;
};

struct GenConfig {
  int n_cams = 2;
  int n_frames = 100;
  double radius_mm = 3000.0;
  double height_mm = 500.0;
  int image_size = 128;
  double focal_px = 1600.0;
  RenderConfig render;
  uint64_t seed = 0;
};

Dataset generate_dataset(const GenConfig& cfg);

}  // namespace epifusion
