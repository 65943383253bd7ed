#include "epifusion/model.hpp"

#include <cmath>

namespace epifusion {

const char* pe_mode_name(PeMode m) {
  switch (m) {
    case PeMode::No3d: return "no-3d-pe";
    case PeMode::Learnable3d: return "learnable-3d-pe";
    case PeMode::GpeNoLpos: return "gpe-no-lpos";
    case PeMode::Full: return "full";
  }
  return "full";
}

PeMode pe_mode_from_name(const std::string& name) {
  if (name == "no-3d-pe") return PeMode::No3d;
  if (name == "learnable-3d-pe") return PeMode::Learnable3d;
  if (name == "gpe-no-lpos") return PeMode::GpeNoLpos;
  if (name == "full") return PeMode::Full;
  throw DataError("unknown pe mode: " + name);
}

void ModelConfig::check() const {
  if (d % 4 != 0) throw InvalidDim("model: d must be divisible by 4 for the sine encoding");
  if (d % heads != 0) throw InvalidDim("model: d must be divisible by the head count");
  if (image_size % 8 != 0) throw InvalidDim("model: image size must be divisible by 8");
  if (grid_h * 8 != image_size || grid_w * 8 != image_size)
    throw InvalidDim("model: feature grid must be image/8");
}

namespace {

void init_linear(Tensor& w, Rng& rng, int fan_in) {
  const double a = std::sqrt(1.0 / fan_in);
  w.fill_uniform(rng, -a, a);
}

}  // namespace

void Parameters::init(uint64_t seed) {
  cfg.check();
  Rng rng = make_rng(seed, RngStream::ParamInit);
  const int d = cfg.d, c = cfg.channels, dff = cfg.d_ff, dh = cfg.d_head, k = cfg.k;
  const int L = cfg.seq_len();

  patch_w = Tensor({d, c});
  init_linear(patch_w, rng, c);
  patch_b = Tensor({d});

  w_e = Tensor({d, 3});
  const double a_we = std::sqrt(1.0 / 3.0);
  w_e.fill_uniform(rng, -a_we, a_we);

  pe_learn1 = Tensor({L, d});
  pe_learn2 = Tensor({L, d});
  pe_learn1.fill_uniform(rng, -0.5, 0.5);
  pe_learn2.fill_uniform(rng, -0.5, 0.5);

  layers.clear();
  for (int l = 0; l < cfg.layers; ++l) {
    LayerParams lp;
    lp.wq = Tensor({d, d});
    lp.wk = Tensor({d, d});
    lp.wv = Tensor({d, d});
    lp.wo = Tensor({d, d});
    init_linear(lp.wq, rng, d);
    init_linear(lp.wk, rng, d);
    init_linear(lp.wv, rng, d);
    init_linear(lp.wo, rng, d);
    lp.ln1_g = Tensor::full({d}, 1.0);
    lp.ln1_b = Tensor({d});
    lp.ff1 = Tensor({d, dff});
    lp.ff2 = Tensor({dff, d});
    init_linear(lp.ff1, rng, d);
    init_linear(lp.ff2, rng, dff);
    lp.ln2_g = Tensor::full({d}, 1.0);
    lp.ln2_b = Tensor({d});
    layers.push_back(std::move(lp));
  }

  deconv_w = Tensor({d, dh, 4, 4});
  init_linear(deconv_w, rng, d * 16);
  deconv_b = Tensor({dh});
  conv_w = Tensor({k, dh});
  init_linear(conv_w, rng, dh);
  conv_b = Tensor({k});
}

std::vector<std::pair<std::string, Tensor*>> Parameters::registry() {
  std::vector<std::pair<std::string, Tensor*>> reg;
  reg.emplace_back("backbone/patch_w", &patch_w);
  reg.emplace_back("backbone/patch_b", &patch_b);
  if (cfg.pe_mode == PeMode::Full || cfg.pe_mode == PeMode::GpeNoLpos)
    reg.emplace_back("gpe/w_e", &w_e);
  if (cfg.pe_mode == PeMode::Learnable3d) {
    reg.emplace_back("pe3d/learn1", &pe_learn1);
    reg.emplace_back("pe3d/learn2", &pe_learn2);
  }
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "encoder/layer" + std::to_string(l) + "/";
    reg.emplace_back(p + "wq", &layers[l].wq);
    reg.emplace_back(p + "wk", &layers[l].wk);
    reg.emplace_back(p + "wv", &layers[l].wv);
    reg.emplace_back(p + "wo", &layers[l].wo);
    reg.emplace_back(p + "ln1_g", &layers[l].ln1_g);
    reg.emplace_back(p + "ln1_b", &layers[l].ln1_b);
    reg.emplace_back(p + "ff1", &layers[l].ff1);
    reg.emplace_back(p + "ff2", &layers[l].ff2);
    reg.emplace_back(p + "ln2_g", &layers[l].ln2_g);
    reg.emplace_back(p + "ln2_b", &layers[l].ln2_b);
  }
  reg.emplace_back("head/deconv_w", &deconv_w);
  reg.emplace_back("head/deconv_b", &deconv_b);
  reg.emplace_back("head/conv_w", &conv_w);
  reg.emplace_back("head/conv_b", &conv_b);
  return reg;
}

std::vector<std::pair<std::string, const Tensor*>> Parameters::registry() const {
  auto mut = const_cast<Parameters*>(this)->registry();
  std::vector<std::pair<std::string, const Tensor*>> reg;
  reg.reserve(mut.size());
  for (auto& [name, t] : mut) reg.emplace_back(name, t);
  return reg;
}

GeometryContext make_geometry_context(const Rig& rig, const ModelConfig& cfg) {
  if (rig.cameras.size() < 2) throw DegenerateGeometry("geometry context needs two cameras");
  GeometryContext geo;
  const GridSpec grid = cfg.grid();
  geo.e2d = from_eigen(sine_pe(cfg.grid_h, cfg.grid_w, cfg.d));
  geo.rays1 = from_eigen(rays_matrix(grid_ray_dirs(rig.cameras[0], grid)));
  geo.rays2 = from_eigen(rays_matrix(grid_ray_dirs(rig.cameras[1], grid)));
  geo.s12 = from_eigen(field_score_matrix(rig.cameras[0], rig.cameras[1], grid, cfg.gamma));
  geo.s21 = from_eigen(field_score_matrix(rig.cameras[1], rig.cameras[0], grid, cfg.gamma));
  return geo;
}

Tensor pool_patches(const ViewImage& img, const ModelConfig& cfg) {
  if (img.channels != cfg.channels || img.height != cfg.image_size || img.width != cfg.image_size)
    throw ShapeMismatch("pool_patches: image does not match model config");
  const int ph = img.height / cfg.grid_h;
  const int pw = img.width / cfg.grid_w;
  Tensor out({cfg.seq_len(), cfg.channels});
  for (int gr = 0; gr < cfg.grid_h; ++gr)
    for (int gc = 0; gc < cfg.grid_w; ++gc) {
      const int row = gr * cfg.grid_w + gc;
      for (int c = 0; c < cfg.channels; ++c) {
        double acc = 0.0;
        for (int y = gr * ph; y < (gr + 1) * ph; ++y)
          for (int x = gc * pw; x < (gc + 1) * pw; ++x) acc += img.at(c, y, x);
        out.at(row, c) = acc / (ph * pw);
      }
    }
  return out;
}

ModelVars stage_params(Tape& tape, const Parameters& params) {
  ModelVars v;
  v.patch_w = tape.param(params.patch_w);
  v.patch_b = tape.param(params.patch_b);
  if (params.cfg.pe_mode == PeMode::Full || params.cfg.pe_mode == PeMode::GpeNoLpos)
    v.w_e = tape.param(params.w_e);
  if (params.cfg.pe_mode == PeMode::Learnable3d) {
    v.pe_learn1 = tape.param(params.pe_learn1);
    v.pe_learn2 = tape.param(params.pe_learn2);
  }
  for (const LayerParams& lp : params.layers) {
    ModelVars::LayerVars lv;
    lv.wq = tape.param(lp.wq);
    lv.wk = tape.param(lp.wk);
    lv.wv = tape.param(lp.wv);
    lv.wo = tape.param(lp.wo);
    lv.ln1_g = tape.param(lp.ln1_g);
    lv.ln1_b = tape.param(lp.ln1_b);
    lv.ff1 = tape.param(lp.ff1);
    lv.ff2 = tape.param(lp.ff2);
    lv.ln2_g = tape.param(lp.ln2_g);
    lv.ln2_b = tape.param(lp.ln2_b);
    v.layers.push_back(lv);
  }
  v.deconv_w = tape.param(params.deconv_w);
  v.deconv_b = tape.param(params.deconv_b);
  v.conv_w = tape.param(params.conv_w);
  v.conv_b = tape.param(params.conv_b);
  return v;
}

std::vector<Tensor> ModelVars::grads(const Parameters& params) const {
  std::vector<Var> leaves;
  leaves.push_back(patch_w);
  leaves.push_back(patch_b);
  if (params.cfg.pe_mode == PeMode::Full || params.cfg.pe_mode == PeMode::GpeNoLpos)
    leaves.push_back(w_e);
  if (params.cfg.pe_mode == PeMode::Learnable3d) {
    leaves.push_back(pe_learn1);
    leaves.push_back(pe_learn2);
  }
  for (const LayerVars& lv : layers) {
    leaves.push_back(lv.wq);
    leaves.push_back(lv.wk);
    leaves.push_back(lv.wv);
    leaves.push_back(lv.wo);
    leaves.push_back(lv.ln1_g);
    leaves.push_back(lv.ln1_b);
    leaves.push_back(lv.ff1);
    leaves.push_back(lv.ff2);
    leaves.push_back(lv.ln2_g);
    leaves.push_back(lv.ln2_b);
  }
  leaves.push_back(deconv_w);
  leaves.push_back(deconv_b);
  leaves.push_back(conv_w);
  leaves.push_back(conv_b);

  std::vector<Tensor> out;
  out.reserve(leaves.size());
  for (Var l : leaves) {
    if (l->grad.shape.empty())
      out.push_back(Tensor::zeros(l->val.shape));
    else
      out.push_back(l->grad);
  }
  return out;
}

Var backbone_tokens(Tape& tape, const ModelVars& vars, const Tensor& pooled) {
  Var p = tape.constant(pooled);
  // tokens = pooled * W^T + b
  Var tok = tape.matmul_nt(p, vars.patch_w);
  return tape.add_rowvec(tok, vars.patch_b);
}

Var backbone_stub(Tape& tape, const ModelVars& vars, const ViewImage& img, const ModelConfig& cfg) {
  return backbone_tokens(tape, vars, pool_patches(img, cfg));
}

Var mhsa_layer(Tape& tape, Var x, Var pe, const ModelVars::LayerVars& lv, int heads,
               const Tensor* attn_mask, AttnTrace* trace) {
  if (!x->val.all_finite()) throw NonFinite("mhsa: non-finite input");
  const int d = x->val.cols();
  if (d % heads != 0) throw ShapeMismatch("mhsa: d must be divisible by heads");
  const int dh = d / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

  Var xp = pe ? tape.add(x, pe) : x;
  Var q = tape.matmul(xp, lv.wq);
  Var k = tape.matmul(xp, lv.wk);
  Var v = tape.matmul(x, lv.wv);  // values carry no positional encoding

  std::vector<Var> head_outs;
  for (int h = 0; h < heads; ++h) {
    Var qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
    Var logits = tape.scale(tape.matmul_nt(qh, kh), scl);
    Var attn = tape.softmax_rows(logits, attn_mask);
    if (trace) trace->attn.push_back(attn->val);
    head_outs.push_back(tape.matmul(attn, vh));
  }
  Var concat = heads == 1 ? head_outs[0] : tape.concat_cols(head_outs);
  Var proj = tape.matmul(concat, lv.wo);
  Var res1 = tape.layer_norm_rows(tape.add(x, proj), lv.ln1_g, lv.ln1_b);

  Var ff = tape.matmul(tape.relu(tape.matmul(res1, lv.ff1)), lv.ff2);
  return tape.layer_norm_rows(tape.add(res1, ff), lv.ln2_g, lv.ln2_b);
}

Var encoder_forward(Tape& tape, Var tokens, Var pe, const ModelVars& vars, int heads,
                    const Tensor* attn_mask, AttnTrace* trace) {
  Var x = tokens;
  for (const ModelVars::LayerVars& lv : vars.layers)
    x = mhsa_layer(tape, x, pe, lv, heads, attn_mask, trace);
  return x;
}

Var predict_heatmaps(Tape& tape, Var view_tokens, const ModelVars& vars, const ModelConfig& cfg) {
  const int d = cfg.d, h = cfg.grid_h, w = cfg.grid_w;
  if (view_tokens->val.rows() != h * w || view_tokens->val.cols() != d)
    throw ShapeMismatch("predict_heatmaps: token grid mismatch");
  Var fmap = tape.reshape(tape.transpose(view_tokens), {d, h, w});
  Var up = tape.relu(tape.conv_transpose2d_s2k4(fmap, vars.deconv_w, vars.deconv_b));
  return tape.conv1x1(up, vars.conv_w, vars.conv_b);
}

Var heatmap_mse(Tape& tape, Var pred, const Tensor& gt) {
  if (pred->val.shape != gt.shape) throw ShapeMismatch("heatmap_mse: shape mismatch");
  const int hh = gt.dim(1), ww = gt.dim(2);
  Var diff = tape.sub(pred, tape.constant(gt));
  return tape.scale(tape.sum_all(tape.square(diff)), 1.0 / (static_cast<double>(hh) * ww));
}

Tensor cross_view_mask(int seq_len) {
  Tensor m({2 * seq_len, 2 * seq_len});
  for (int r = 0; r < 2 * seq_len; ++r)
    for (int c = 0; c < 2 * seq_len; ++c)
      if ((r < seq_len) != (c < seq_len)) m.at(r, c) = -1e30;
  return m;
}

Tensor heatmap_to_tensor(const Heatmap& hm) {
  return Tensor({hm.k, hm.height, hm.width}, hm.v);
}

Heatmap tensor_to_heatmap(const Tensor& t) {
  if (t.rank() != 3) throw ShapeMismatch("tensor_to_heatmap: rank 3 required");
  Heatmap hm(t.dim(0), t.dim(1), t.dim(2));
  hm.v = t.data;
  return hm;
}

ForwardResult model_forward(Tape& tape, const Parameters& params, const ModelVars& vars,
                            const GeometryContext& geo, const Tensor& pooled1,
                            const Tensor& pooled2, const Tensor* gt1, const Tensor* gt2,
                            AttnTrace* trace) {
  const ModelConfig& cfg = params.cfg;
  const int L = cfg.seq_len();
  if (!pooled1.all_finite() || !pooled2.all_finite())
    throw NonFinite("model_forward: non-finite input");

  ForwardResult out;
  Var tok1 = backbone_tokens(tape, vars, pooled1);
  Var tok2 = backbone_tokens(tape, vars, pooled2);

  Var e2d = tape.constant(geo.e2d);
  Var pe1 = e2d, pe2 = e2d;
  if (cfg.pe_mode == PeMode::Full || cfg.pe_mode == PeMode::GpeNoLpos) {
    Var rays1 = tape.constant(geo.rays1);
    Var rays2 = tape.constant(geo.rays2);
    out.eg1 = tape.matmul_nt(rays1, vars.w_e);  // rays * W_e^T
    out.eg2 = tape.matmul_nt(rays2, vars.w_e);
    pe1 = tape.add(e2d, out.eg1);
    pe2 = tape.add(e2d, out.eg2);
  } else if (cfg.pe_mode == PeMode::Learnable3d) {
    pe1 = tape.add(e2d, vars.pe_learn1);
    pe2 = tape.add(e2d, vars.pe_learn2);
  }

  Var x = tape.concat_rows({tok1, tok2});
  Var pe = tape.concat_rows({pe1, pe2});

  static thread_local Tensor mask_cache;
  const Tensor* mask = nullptr;
  if (cfg.mask_cross_view) {
    if (mask_cache.shape.empty() || mask_cache.dim(0) != 2 * L) mask_cache = cross_view_mask(L);
    mask = &mask_cache;
  }

  out.tokens_out = encoder_forward(tape, x, pe, vars, cfg.heads, mask, trace);
  Var x1 = tape.slice_rows(out.tokens_out, 0, L);
  Var x2 = tape.slice_rows(out.tokens_out, L, 2 * L);
  out.hm1 = predict_heatmaps(tape, x1, vars, cfg);
  out.hm2 = predict_heatmaps(tape, x2, vars, cfg);

  if (gt1 && gt2) {
    Var mse1 = heatmap_mse(tape, out.hm1, *gt1);
    Var mse2 = heatmap_mse(tape, out.hm2, *gt2);
    Var loss = tape.add(mse1, mse2);
    out.hm_loss = loss->val.data[0];
    if (cfg.pe_mode == PeMode::Full) {
      // Symmetrized epipolar-field matching loss; the targets are geometry,
      // not parameters, so they enter as constants.
      Var d12 = tape.matmul_nt(out.eg1, out.eg2);
      Var d21 = tape.transpose(d12);
      Var r12 = tape.sub(d12, tape.constant(geo.s12));
      Var r21 = tape.sub(d21, tape.constant(geo.s21));
      Var lp = tape.scale(
          tape.add(tape.mean_all(tape.square(r12)), tape.mean_all(tape.square(r21))), 0.5);
      out.lpos = lp->val.data[0];
      loss = tape.add(loss, lp);
    }
    out.loss = loss;
  }
  return out;
}

GradResult grad_all(const Parameters& params, const GeometryContext& geo, const Tensor& pooled1,
                    const Tensor& pooled2, const Tensor& gt1, const Tensor& gt2) {
  Tape tape;
  ModelVars vars = stage_params(tape, params);
  ForwardResult fwd = model_forward(tape, params, vars, geo, pooled1, pooled2, &gt1, &gt2);
  tape.backward(fwd.loss);
  GradResult res;
  res.loss = fwd.loss->val.data[0];
  res.hm_loss = fwd.hm_loss;
  res.lpos = fwd.lpos;
  res.grads = vars.grads(params);
  return res;
}

}  // namespace epifusion
