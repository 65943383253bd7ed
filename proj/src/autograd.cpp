#include "epifusion/autograd.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <mutex>

namespace epifusion {

Tape::Var Tape::make(Tensor val, bool requires_grad, std::function<void(Tape&, Node&)> backfn) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.val = std::move(val);
  n.requires_grad = requires_grad;
  n.backfn = std::move(backfn);
  return &n;
}

Tape::Var Tape::leaf(Tensor v, bool requires_grad) { return make(std::move(v), requires_grad, nullptr); }

static void add_into(Tensor& acc, const Tensor& g) {
  for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
}

Tape::Var Tape::add(Var a, Var b) {
  if (!a->val.same_shape(b->val)) throw ShapeMismatch("add: shape mismatch");
  Tensor out = a->val;
  add_into(out, b->val);
  bool rg = a->requires_grad || b->requires_grad;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a, b](Tape&, Node& n) {
    if (a->requires_grad) add_into(a->ensure_grad(), n.grad);
    if (b->requires_grad) add_into(b->ensure_grad(), n.grad);
  }));
}

Tape::Var Tape::sub(Var a, Var b) {
  if (!a->val.same_shape(b->val)) throw ShapeMismatch("sub: shape mismatch");
  Tensor out = a->val;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->val.data[i];
  bool rg = a->requires_grad || b->requires_grad;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a, b](Tape&, Node& n) {
    if (a->requires_grad) add_into(a->ensure_grad(), n.grad);
    if (b->requires_grad) {
      Tensor& g = b->ensure_grad();
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] -= n.grad.data[i];
    }
  }));
}

Tape::Var Tape::mul(Var a, Var b) {
  if (!a->val.same_shape(b->val)) throw ShapeMismatch("mul: shape mismatch");
  Tensor out = a->val;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->val.data[i];
  bool rg = a->requires_grad || b->requires_grad;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a, b](Tape&, Node& n) {
    if (a->requires_grad) {
      Tensor& g = a->ensure_grad();
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * b->val.data[i];
    }
    if (b->requires_grad) {
      Tensor& g = b->ensure_grad();
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * a->val.data[i];
    }
  }));
}

Tape::Var Tape::scale(Var a, double c) {
  Tensor out = a->val;
  for (double& v : out.data) v *= c;
  bool rg = a->requires_grad;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a, c](Tape&, Node& n) {
    Tensor& g = a->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += c * n.grad.data[i];
  }));
}

Tape::Var Tape::relu(Var a) {
  Tensor out = a->val;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  bool rg = a->requires_grad;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a](Tape&, Node& n) {
    Tensor& g = a->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i)
      if (a->val.data[i] > 0.0) g.data[i] += n.grad.data[i];
  }));
}

Tape::Var Tape::square(Var a) {
  Tensor out = a->val;
  for (double& v : out.data) v *= v;
  bool rg = a->requires_grad;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a](Tape&, Node& n) {
    Tensor& g = a->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += 2.0 * a->val.data[i] * n.grad.data[i];
  }));
}

Tape::Var Tape::add_rowvec(Var a, Var bias) {
  if (a->val.rank() != 2 || bias->val.numel() != static_cast<size_t>(a->val.cols()))
    throw ShapeMismatch("add_rowvec: bias must match columns");
  Tensor out = a->val;
  const int rows = out.rows(), cols = out.cols();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out.at(r, c) += bias->val.data[static_cast<size_t>(c)];
  bool rg = a->requires_grad || bias->requires_grad;
  return make(std::move(out), rg,
              !rg ? nullptr : std::function<void(Tape&, Node&)>([a, bias, rows, cols](Tape&, Node& n) {
                if (a->requires_grad) add_into(a->ensure_grad(), n.grad);
                if (bias->requires_grad) {
                  Tensor& g = bias->ensure_grad();
                  for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cols; ++c) g.data[static_cast<size_t>(c)] += n.grad.at(r, c);
                }
              }));
}

Tape::Var Tape::matmul(Var a, Var b) {
  if (a->val.rank() != 2 || b->val.rank() != 2 || a->val.cols() != b->val.rows())
    throw ShapeMismatch("matmul: incompatible shapes");
  Tensor out({a->val.rows(), b->val.cols()});
  out.mat().noalias() = a->val.mat() * b->val.mat();
  bool rg = a->requires_grad || b->requires_grad;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a, b](Tape&, Node& n) {
    if (a->requires_grad) a->ensure_grad().mat().noalias() += n.grad.mat() * b->val.mat().transpose();
    if (b->requires_grad) b->ensure_grad().mat().noalias() += a->val.mat().transpose() * n.grad.mat();
  }));
}

Tape::Var Tape::matmul_nt(Var a, Var b) {
  if (a->val.rank() != 2 || b->val.rank() != 2 || a->val.cols() != b->val.cols())
    throw ShapeMismatch("matmul_nt: incompatible shapes");
  Tensor out({a->val.rows(), b->val.rows()});
  out.mat().noalias() = a->val.mat() * b->val.mat().transpose();
  bool rg = a->requires_grad || b->requires_grad;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a, b](Tape&, Node& n) {
    if (a->requires_grad) a->ensure_grad().mat().noalias() += n.grad.mat() * b->val.mat();
    if (b->requires_grad) b->ensure_grad().mat().noalias() += n.grad.mat().transpose() * a->val.mat();
  }));
}

Tape::Var Tape::transpose(Var a) {
  if (a->val.rank() != 2) throw ShapeMismatch("transpose: rank 2 required");
  Tensor out({a->val.cols(), a->val.rows()});
  out.mat() = a->val.mat().transpose();
  bool rg = a->requires_grad;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a](Tape&, Node& n) {
    a->ensure_grad().mat() += n.grad.mat().transpose();
  }));
}

Tape::Var Tape::reshape(Var a, std::vector<int> shape) {
  if (Tensor::count(shape) != a->val.numel()) throw ShapeMismatch("reshape: element count mismatch");
  Tensor out(shape, a->val.data);
  bool rg = a->requires_grad;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a](Tape&, Node& n) {
    Tensor& g = a->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
  }));
}

Tape::Var Tape::slice_cols(Var a, int c0, int c1) {
  if (a->val.rank() != 2 || c0 < 0 || c1 > a->val.cols() || c0 >= c1)
    throw ShapeMismatch("slice_cols: bad range");
  const int rows = a->val.rows(), w = c1 - c0;
  Tensor out({rows, w});
  out.mat() = a->val.mat().middleCols(c0, w);
  bool rg = a->requires_grad;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a, c0, w](Tape&, Node& n) {
    a->ensure_grad().mat().middleCols(c0, w) += n.grad.mat();
  }));
}

Tape::Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: empty");
  const int rows = parts[0]->val.rows();
  int cols = 0;
  bool rg = false;
  for (Var p : parts) {
    if (p->val.rows() != rows) throw ShapeMismatch("concat_cols: row mismatch");
    cols += p->val.cols();
    rg = rg || p->requires_grad;
  }
  Tensor out({rows, cols});
  int off = 0;
  for (Var p : parts) {
    out.mat().middleCols(off, p->val.cols()) = p->val.mat();
    off += p->val.cols();
  }
  std::vector<Var> ps = parts;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([ps](Tape&, Node& n) {
    int off = 0;
    for (Var p : ps) {
      const int w = p->val.cols();
      if (p->requires_grad) p->ensure_grad().mat() += n.grad.mat().middleCols(off, w);
      off += w;
    }
  }));
}

Tape::Var Tape::slice_rows(Var a, int r0, int r1) {
  if (a->val.rank() != 2 || r0 < 0 || r1 > a->val.rows() || r0 >= r1)
    throw ShapeMismatch("slice_rows: bad range");
  const int h = r1 - r0, cols = a->val.cols();
  Tensor out({h, cols});
  out.mat() = a->val.mat().middleRows(r0, h);
  bool rg = a->requires_grad;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a, r0, h](Tape&, Node& n) {
    a->ensure_grad().mat().middleRows(r0, h) += n.grad.mat();
  }));
}

Tape::Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: empty");
  const int cols = parts[0]->val.cols();
  int rows = 0;
  bool rg = false;
  for (Var p : parts) {
    if (p->val.cols() != cols) throw ShapeMismatch("concat_rows: column mismatch");
    rows += p->val.rows();
    rg = rg || p->requires_grad;
  }
  Tensor out({rows, cols});
  int off = 0;
  for (Var p : parts) {
    out.mat().middleRows(off, p->val.rows()) = p->val.mat();
    off += p->val.rows();
  }
  std::vector<Var> ps = parts;
  return make(std::move(out), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([ps](Tape&, Node& n) {
    int off = 0;
    for (Var p : ps) {
      const int h = p->val.rows();
      if (p->requires_grad) p->ensure_grad().mat() += n.grad.mat().middleRows(off, h);
      off += h;
    }
  }));
}

Tape::Var Tape::sum_all(Var a) {
  double s = 0.0;
  for (double v : a->val.data) s += v;
  bool rg = a->requires_grad;
  return make(Tensor::scalar(s), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a](Tape&, Node& n) {
    Tensor& g = a->ensure_grad();
    const double gy = n.grad.data[0];
    for (double& v : g.data) v += gy;
  }));
}

Tape::Var Tape::mean_all(Var a) {
  const double inv = 1.0 / static_cast<double>(a->val.numel());
  double s = 0.0;
  for (double v : a->val.data) s += v;
  bool rg = a->requires_grad;
  return make(Tensor::scalar(s * inv), rg, !rg ? nullptr : std::function<void(Tape&, Node&)>([a, inv](Tape&, Node& n) {
    Tensor& g = a->ensure_grad();
    const double gy = n.grad.data[0] * inv;
    for (double& v : g.data) v += gy;
  }));
}

Tape::Var Tape::softmax_rows(Var a, const Tensor* add_mask) {
  if (a->val.rank() != 2) throw ShapeMismatch("softmax_rows: rank 2 required");
  if (add_mask && !add_mask->same_shape(a->val)) throw ShapeMismatch("softmax_rows: mask shape mismatch");
  const int rows = a->val.rows(), cols = a->val.cols();
  Tensor out = a->val;
  if (add_mask) add_into(out, *add_mask);
  for (int r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < cols; ++c) mx = std::max(mx, out.at(r, c));
    double z = 0.0;
    for (int c = 0; c < cols; ++c) {
      double e = std::exp(out.at(r, c) - mx);
      out.at(r, c) = e;
      z += e;
    }
    const double iz = 1.0 / z;
    for (int c = 0; c < cols; ++c) out.at(r, c) *= iz;
  }
  bool rg = a->requires_grad;
  return make(std::move(out), rg,
              !rg ? nullptr : std::function<void(Tape&, Node&)>([a, rows, cols](Tape&, Node& n) {
                // dx = y .* (dy - rowsum(dy .* y))
                Tensor& g = a->ensure_grad();
                for (int r = 0; r < rows; ++r) {
                  double dot = 0.0;
                  for (int c = 0; c < cols; ++c) dot += n.grad.at(r, c) * n.val.at(r, c);
                  for (int c = 0; c < cols; ++c)
                    g.at(r, c) += n.val.at(r, c) * (n.grad.at(r, c) - dot);
                }
              }));
}

Tape::Var Tape::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  if (x->val.rank() != 2) throw ShapeMismatch("layer_norm_rows: rank 2 required");
  const int rows = x->val.rows(), cols = x->val.cols();
  if (gamma->val.numel() != static_cast<size_t>(cols) || beta->val.numel() != static_cast<size_t>(cols))
    throw ShapeMismatch("layer_norm_rows: gamma/beta size mismatch");
  Tensor out({rows, cols});
  Tensor xhat({rows, cols});
  std::vector<double> inv_std(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (int c = 0; c < cols; ++c) mean += x->val.at(r, c);
    mean /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double d = x->val.at(r, c) - mean;
      var += d * d;
    }
    var /= cols;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int c = 0; c < cols; ++c) {
      const double h = (x->val.at(r, c) - mean) * is;
      xhat.at(r, c) = h;
      out.at(r, c) = gamma->val.data[static_cast<size_t>(c)] * h + beta->val.data[static_cast<size_t>(c)];
    }
  }
  bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
  return make(std::move(out), rg,
              !rg ? nullptr
                  : std::function<void(Tape&, Node&)>([x, gamma, beta, rows, cols,
                                                       xh = std::move(xhat),
                                                       is = std::move(inv_std)](Tape&, Node& n) {
                      for (int r = 0; r < rows; ++r) {
                        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                        for (int c = 0; c < cols; ++c) {
                          const double dxh =
                              n.grad.at(r, c) * gamma->val.data[static_cast<size_t>(c)];
                          sum_dxh += dxh;
                          sum_dxh_xh += dxh * xh.at(r, c);
                        }
                        if (x->requires_grad) {
                          Tensor& gx = x->ensure_grad();
                          const double m1 = sum_dxh / cols, m2 = sum_dxh_xh / cols;
                          for (int c = 0; c < cols; ++c) {
                            const double dxh =
                                n.grad.at(r, c) * gamma->val.data[static_cast<size_t>(c)];
                            gx.at(r, c) += is[static_cast<size_t>(r)] * (dxh - m1 - xh.at(r, c) * m2);
                          }
                        }
                        if (gamma->requires_grad) {
                          Tensor& gg = gamma->ensure_grad();
                          for (int c = 0; c < cols; ++c)
                            gg.data[static_cast<size_t>(c)] += n.grad.at(r, c) * xh.at(r, c);
                        }
                        if (beta->requires_grad) {
                          Tensor& gb = beta->ensure_grad();
                          for (int c = 0; c < cols; ++c) gb.data[static_cast<size_t>(c)] += n.grad.at(r, c);
                        }
                      }
                    }));
}

// Index tables turning the stride-2 4x4 transposed convolution into one GEMM
// per output-parity class. For each output pixel of a parity class, the
// gather lists the <=4 contributing input cells; -1 marks clipped borders.
namespace {
struct DeconvPlan {
  int h = 0, w = 0;        // input spatial dims
  int oh = 0, ow = 0;      // output spatial dims (2h, 2w)
  // Per parity class: rows = output pixels (row-major within class),
  // cols = 4 taps; entry = input spatial index or -1.
  std::array<std::vector<int>, 4> gather;
  // Output spatial index of each class row.
  std::array<std::vector<int>, 4> out_index;
  // Kernel tap (ky, kx) per parity per tap slot (a, b in {0,1}).
  std::array<std::array<std::pair<int, int>, 4>, 4> taps;
};

const DeconvPlan& deconv_plan(int h, int w) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, DeconvPlan> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find({h, w});
  if (it != cache.end()) return it->second;
  DeconvPlan plan;
  plan.h = h;
  plan.w = w;
  plan.oh = 2 * h;
  plan.ow = 2 * w;
  for (int py = 0; py < 2; ++py)
    for (int px = 0; px < 2; ++px) {
      const int cls = py * 2 + px;
      for (int t = 0; t < 4; ++t) {
        const int a = t / 2, b = t % 2;
        plan.taps[static_cast<size_t>(cls)][static_cast<size_t>(t)] = {py + 2 * a, px + 2 * b};
      }
      for (int y = 0; y < plan.oh; ++y) {
        if (((y + 1) & 1) != py) continue;
        const int q = (y + 1 - py) / 2;
        for (int x = 0; x < plan.ow; ++x) {
          if (((x + 1) & 1) != px) continue;
          const int p = (x + 1 - px) / 2;
          plan.out_index[static_cast<size_t>(cls)].push_back(y * plan.ow + x);
          for (int t = 0; t < 4; ++t) {
            const int a = t / 2, b = t % 2;
            const int r = q - a, c = p - b;
            const bool ok = r >= 0 && r < h && c >= 0 && c < w;
            plan.gather[static_cast<size_t>(cls)].push_back(ok ? r * w + c : -1);
          }
        }
      }
    }
  return cache.emplace(std::make_pair(h, w), std::move(plan)).first->second;
}
}  // namespace

Tape::Var Tape::conv_transpose2d_s2k4(Var x, Var w, Var b) {
  if (x->val.rank() != 3) throw ShapeMismatch("conv_transpose2d: input must be {C,H,W}");
  if (w->val.rank() != 4 || w->val.dim(2) != 4 || w->val.dim(3) != 4 || w->val.dim(0) != x->val.dim(0))
    throw ShapeMismatch("conv_transpose2d: weight must be {Cin,Cout,4,4}");
  const int cin = x->val.dim(0), h = x->val.dim(1), wd = x->val.dim(2);
  const int cout = w->val.dim(1);
  if (b->val.numel() != static_cast<size_t>(cout)) throw ShapeMismatch("conv_transpose2d: bias size");
  const DeconvPlan& plan = deconv_plan(h, wd);
  const int hw = h * wd;

  Tensor out({cout, 2 * h, 2 * wd});
  // Weight matrix per class: (cin*4) x cout.
  std::array<RowMat, 4> wmats;
  for (int cls = 0; cls < 4; ++cls) {
    RowMat wm(cin * 4, cout);
    for (int i = 0; i < cin; ++i)
      for (int t = 0; t < 4; ++t) {
        const auto [ky, kx] = plan.taps[static_cast<size_t>(cls)][static_cast<size_t>(t)];
        for (int o = 0; o < cout; ++o)
          wm(i * 4 + t, o) = w->val.data[((static_cast<size_t>(i) * cout + o) * 4 + ky) * 4 + kx];
      }
    wmats[static_cast<size_t>(cls)] = std::move(wm);
  }
  std::array<RowMat, 4> cols_cache;
  for (int cls = 0; cls < 4; ++cls) {
    const auto& gather = plan.gather[static_cast<size_t>(cls)];
    const auto& oidx = plan.out_index[static_cast<size_t>(cls)];
    const int npix = static_cast<int>(oidx.size());
    RowMat cols(npix, cin * 4);
    for (int r = 0; r < npix; ++r)
      for (int i = 0; i < cin; ++i)
        for (int t = 0; t < 4; ++t) {
          const int src = gather[static_cast<size_t>(r) * 4 + t];
          cols(r, i * 4 + t) = src < 0 ? 0.0 : x->val.data[static_cast<size_t>(i) * hw + src];
        }
    RowMat res = cols * wmats[static_cast<size_t>(cls)];  // npix x cout
    for (int r = 0; r < npix; ++r)
      for (int o = 0; o < cout; ++o)
        out.data[static_cast<size_t>(o) * plan.oh * plan.ow + oidx[static_cast<size_t>(r)]] =
            res(r, o) + b->val.data[static_cast<size_t>(o)];
    cols_cache[static_cast<size_t>(cls)] = std::move(cols);
  }

  bool rg = x->requires_grad || w->requires_grad || b->requires_grad;
  return make(std::move(out), rg,
              !rg ? nullptr
                  : std::function<void(Tape&, Node&)>([x, w, b, cin, h, wd, cout, hw,
                                                       wmats = std::move(wmats),
                                                       cols_cache = std::move(cols_cache)](Tape&, Node& n) {
                      const DeconvPlan& plan = deconv_plan(h, wd);
                      for (int cls = 0; cls < 4; ++cls) {
                        const auto& gather = plan.gather[static_cast<size_t>(cls)];
                        const auto& oidx = plan.out_index[static_cast<size_t>(cls)];
                        const int npix = static_cast<int>(oidx.size());
                        RowMat dres(npix, cout);
                        for (int r = 0; r < npix; ++r)
                          for (int o = 0; o < cout; ++o)
                            dres(r, o) = n.grad.data[static_cast<size_t>(o) * plan.oh * plan.ow +
                                                     oidx[static_cast<size_t>(r)]];
                        if (b->requires_grad) {
                          Tensor& gb = b->ensure_grad();
                          for (int o = 0; o < cout; ++o) gb.data[static_cast<size_t>(o)] += dres.col(o).sum();
                        }
                        if (w->requires_grad) {
                          RowMat dwm = cols_cache[static_cast<size_t>(cls)].transpose() * dres;
                          Tensor& gw = w->ensure_grad();
                          for (int i = 0; i < cin; ++i)
                            for (int t = 0; t < 4; ++t) {
                              const auto [ky, kx] =
                                  plan.taps[static_cast<size_t>(cls)][static_cast<size_t>(t)];
                              for (int o = 0; o < cout; ++o)
                                gw.data[((static_cast<size_t>(i) * cout + o) * 4 + ky) * 4 + kx] +=
                                    dwm(i * 4 + t, o);
                            }
                        }
                        if (x->requires_grad) {
                          RowMat dcols = dres * wmats[static_cast<size_t>(cls)].transpose();
                          Tensor& gx = x->ensure_grad();
                          for (int r = 0; r < npix; ++r)
                            for (int i = 0; i < cin; ++i)
                              for (int t = 0; t < 4; ++t) {
                                const int src = gather[static_cast<size_t>(r) * 4 + t];
                                if (src >= 0)
                                  gx.data[static_cast<size_t>(i) * hw + src] += dcols(r, i * 4 + t);
                              }
                        }
                      }
                    }));
}

Tape::Var Tape::conv1x1(Var x, Var w, Var b) {
  if (x->val.rank() != 3) throw ShapeMismatch("conv1x1: input must be {C,H,W}");
  const int cin = x->val.dim(0), h = x->val.dim(1), wd = x->val.dim(2);
  if (w->val.rank() != 2 || w->val.cols() != cin) throw ShapeMismatch("conv1x1: weight must be {Cout,Cin}");
  const int cout = w->val.rows();
  if (b->val.numel() != static_cast<size_t>(cout)) throw ShapeMismatch("conv1x1: bias size");
  const int hw = h * wd;
  Tensor out({cout, h, wd});
  out.as_mat(cout, hw).noalias() = w->val.mat() * x->val.as_mat(cin, hw);
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < hw; ++i) out.data[static_cast<size_t>(o) * hw + i] += b->val.data[static_cast<size_t>(o)];
  bool rg = x->requires_grad || w->requires_grad || b->requires_grad;
  return make(std::move(out), rg,
              !rg ? nullptr : std::function<void(Tape&, Node&)>([x, w, b, cin, cout, hw](Tape&, Node& n) {
                if (x->requires_grad)
                  x->ensure_grad().as_mat(cin, hw).noalias() +=
                      w->val.mat().transpose() * n.grad.as_mat(cout, hw);
                if (w->requires_grad)
                  w->ensure_grad().mat().noalias() +=
                      n.grad.as_mat(cout, hw) * x->val.as_mat(cin, hw).transpose();
                if (b->requires_grad) {
                  Tensor& gb = b->ensure_grad();
                  for (int o = 0; o < cout; ++o)
                    for (int i = 0; i < hw; ++i) gb.data[static_cast<size_t>(o)] += n.grad.data[static_cast<size_t>(o) * hw + i];
                }
              }));
}

void Tape::backward(Var root) {
  if (root->val.numel() != 1) throw ShapeMismatch("backward: root must be scalar");
  if (!std::isfinite(root->val.data[0])) throw NonFinite("backward: loss is not finite");
  root->ensure_grad();
  root->grad.data[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    if (!n.backfn || n.grad.shape.empty()) continue;
    n.backfn(*this, n);
  }
  for (const Node& n : nodes_) {
    if (n.requires_grad && !n.grad.shape.empty() && !n.grad.all_finite())
      throw NonFinite("backward: non-finite gradient");
  }
}

}  // namespace epifusion
