#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "epifusion/autograd.hpp"
#include "epifusion/encoding.hpp"
#include "epifusion/heatmap.hpp"
#include "epifusion/synthetic.hpp"

namespace epifusion {

// 3D positional-encoding ablation arms plus the full model.
enum class PeMode { No3d, Learnable3d, GpeNoLpos, Full };

const char* pe_mode_name(PeMode m);
PeMode pe_mode_from_name(const std::string& name);

struct ModelConfig {
  int d = 32;
  int heads = 4;
  int layers = 3;
  int d_ff = 64;
  int d_head = 32;  // deconv output channels
  int grid_h = 16;
  int grid_w = 16;
  int image_size = 128;
  int channels = 3;
  int k = kNumJoints;
  double gamma = 10.0;
  PeMode pe_mode = PeMode::Full;
  bool mask_cross_view = false;  // single-view baseline: block cross-view attention

  int seq_len() const { return grid_h * grid_w; }       // L
  int heat_size() const { return image_size / 4; }      // H_h = W_h
  double patch_stride() const { return static_cast<double>(image_size) / grid_h; }
  GridSpec grid() const {
    const double stride = patch_stride();
    return GridSpec{grid_h, grid_w, stride, (stride - 1.0) / 2.0};
  }
  void check() const;
};

struct LayerParams {
  Tensor wq, wk, wv, wo;  // d x d
  Tensor ln1_g, ln1_b;    // d
  Tensor ff1, ff2;        // d x d_ff, d_ff x d
  Tensor ln2_g, ln2_b;    // d
};

struct Parameters {
  ModelConfig cfg;
  Tensor patch_w, patch_b;        // d x C, d
  Tensor w_e;                     // d x 3 (Full / GpeNoLpos)
  Tensor pe_learn1, pe_learn2;    // L x d (Learnable3d)
  std::vector<LayerParams> layers;
  Tensor deconv_w, deconv_b;      // {d, d_head, 4, 4}, {d_head}
  Tensor conv_w, conv_b;          // {k, d_head}, {k}

  void init(uint64_t seed);
  // Fixed-order registry of the tensors active in this mode; drives the
  // optimizer layout, gradient merging and the checkpoint format.
  std::vector<std::pair<std::string, Tensor*>> registry();
  std::vector<std::pair<std::string, const Tensor*>> registry() const;
};

// Geometry shared by every sample of a two-camera dataset: sine PE, per-view
// rays and the cached epipolar-field targets (never backpropagated through).
struct GeometryContext {
  Tensor e2d;           // L x d
  Tensor rays1, rays2;  // L x 3
  Tensor s12, s21;      // L x L
};

GeometryContext make_geometry_context(const Rig& rig, const ModelConfig& cfg);

// 8x8 (image/grid) patch average pooling per channel -> L x C patch features.
Tensor pool_patches(const ViewImage& img, const ModelConfig& cfg);

// Captured attention weights: trace[layer * heads + head] is the n x n
// row-stochastic matrix of one head.
struct AttnTrace {
  std::vector<Tensor> attn;
};

// Per-tape handles to the staged parameters.
struct ModelVars {
  Var patch_w = nullptr, patch_b = nullptr;
  Var w_e = nullptr;
  Var pe_learn1 = nullptr, pe_learn2 = nullptr;
  struct LayerVars {
    Var wq, wk, wv, wo, ln1_g, ln1_b, ff1, ff2, ln2_g, ln2_b;
  };
  std::vector<LayerVars> layers;
  Var deconv_w = nullptr, deconv_b = nullptr, conv_w = nullptr, conv_b = nullptr;

  // Leaf gradients in registry order (after Tape::backward).
  std::vector<Tensor> grads(const Parameters& params) const;
};

ModelVars stage_params(Tape& tape, const Parameters& params);

// Patch embedding: pooled L x C patches through the learnable linear map.
Var backbone_tokens(Tape& tape, const ModelVars& vars, const Tensor& pooled);
// Convenience overload matching the raw-image operation contract.
Var backbone_stub(Tape& tape, const ModelVars& vars, const ViewImage& img, const ModelConfig& cfg);

// One encoder layer: PE added to Q/K only, per-head scaled dot-product
// attention, output projection, residual + layer norm, MLP block.
// pe == nullptr means no positional encoding.
Var mhsa_layer(Tape& tape, Var x, Var pe, const ModelVars::LayerVars& lv, int heads,
               const Tensor* attn_mask, AttnTrace* trace);

Var encoder_forward(Tape& tape, Var tokens, Var pe, const ModelVars& vars, int heads,
                    const Tensor* attn_mask, AttnTrace* trace);

// Token grid -> heatmaps: reshape to d x H x W, stride-2 4x4 transposed
// convolution, rectifier, 1x1 convolution.
Var predict_heatmaps(Tape& tape, Var view_tokens, const ModelVars& vars, const ModelConfig& cfg);

// Squared Frobenius difference / (H_h * W_h), summed over joints.
Var heatmap_mse(Tape& tape, Var pred, const Tensor& gt);

// Additive mask blocking cross-view attention (0 within a view, -1e30 across).
Tensor cross_view_mask(int seq_len);

struct ForwardResult {
  Var tokens_out = nullptr;          // 2L x d encoder output
  Var hm1 = nullptr, hm2 = nullptr;  // {k, H_h, W_h}
  Var eg1 = nullptr, eg2 = nullptr;  // L x d geometry encodings (GPE modes)
  Var loss = nullptr;                // total training loss (when gt given)
  double hm_loss = 0.0, lpos = 0.0;  // component values
};

// Full forward pass over one two-view sample. gt1/gt2 may be null for
// inference. Throws NonFinite on non-finite inputs.
ForwardResult model_forward(Tape& tape, const Parameters& params, const ModelVars& vars,
                            const GeometryContext& geo, const Tensor& pooled1,
                            const Tensor& pooled2, const Tensor* gt1, const Tensor* gt2,
                            AttnTrace* trace = nullptr);

Tensor heatmap_to_tensor(const Heatmap& hm);
Heatmap tensor_to_heatmap(const Tensor& t);

// Loss plus gradients for all learnable parameters of one sample, in
// registry order. Deterministic for fixed inputs.
struct GradResult {
  double loss = 0.0, hm_loss = 0.0, lpos = 0.0;
  std::vector<Tensor> grads;
};
GradResult grad_all(const Parameters& params, const GeometryContext& geo, const Tensor& pooled1,
                    const Tensor& pooled2, const Tensor& gt1, const Tensor& gt2);

}  // namespace epifusion
