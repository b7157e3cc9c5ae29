#include "apa/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace apa::ad {

Var Tape::leaf(Tensor value, bool requires_grad) {
  return emit(std::move(value), requires_grad, nullptr);
}

Var Tape::emit(Tensor value, bool requires_grad,
               std::function<void(Tape&, const Node&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Tensor::zeros(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

void Tape::accum(Var v, const Tensor& g) {
  if (!nodes_[v.id].requires_grad) return;
  Tensor& buf = grad_buffer(v);
  for (int64_t i = 0; i < buf.numel(); ++i) buf[i] += g[i];
}

void Tape::accum_scaled(Var v, const Tensor& g, double s) {
  if (!nodes_[v.id].requires_grad) return;
  Tensor& buf = grad_buffer(v);
  for (int64_t i = 0; i < buf.numel(); ++i) buf[i] += s * g[i];
}

void Tape::backward(Var out) {
  if (nodes_[out.id].value.numel() != 1)
    throw std::invalid_argument("Tape::backward: output must be scalar");
  grad_buffer(out)[0] += 1.0;
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backprop) continue;
    n.backprop(*this, n);
  }
}

namespace {
bool rg(const Tape& t, Var a) { return t.requires_grad(a); }
bool rg(const Tape& t, Var a, Var b) {
  return t.requires_grad(a) || t.requires_grad(b);
}
}  // namespace

// ----- elementwise -----

Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "ad::add");
  Tensor out = t.value(a);
  out += t.value(b);
  return t.emit(std::move(out), rg(t, a, b),
                [a, b](Tape& tp, const Tape::Node& n) {
                  tp.accum(a, n.grad);
                  tp.accum(b, n.grad);
                });
}

Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "ad::sub");
  Tensor out = t.value(a);
  out -= t.value(b);
  return t.emit(std::move(out), rg(t, a, b),
                [a, b](Tape& tp, const Tape::Node& n) {
                  tp.accum(a, n.grad);
                  tp.accum_scaled(b, n.grad, -1.0);
                });
}

Var mul(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "ad::mul");
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  Tensor out(va.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
  return t.emit(std::move(out), rg(t, a, b),
                [a, b](Tape& tp, const Tape::Node& n) {
                  const Tensor& va = tp.value(a);
                  const Tensor& vb = tp.value(b);
                  if (tp.requires_grad(a)) {
                    Tensor& ga = tp.grad_buffer(a);
                    for (int64_t i = 0; i < ga.numel(); ++i)
                      ga[i] += n.grad[i] * vb[i];
                  }
                  if (tp.requires_grad(b)) {
                    Tensor& gb = tp.grad_buffer(b);
                    for (int64_t i = 0; i < gb.numel(); ++i)
                      gb[i] += n.grad[i] * va[i];
                  }
                });
}

Var scale(Tape& t, Var a, double s) {
  Tensor out = t.value(a);
  out *= s;
  return t.emit(std::move(out), rg(t, a),
                [a, s](Tape& tp, const Tape::Node& n) {
                  tp.accum_scaled(a, n.grad, s);
                });
}

Var lincomb(Tape& t, double alpha, Var a, double beta, Var b) {
  require_same_shape(t.value(a), t.value(b), "ad::lincomb");
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  Tensor out(va.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = alpha * va[i] + beta * vb[i];
  return t.emit(std::move(out), rg(t, a, b),
                [a, b, alpha, beta](Tape& tp, const Tape::Node& n) {
                  tp.accum_scaled(a, n.grad, alpha);
                  tp.accum_scaled(b, n.grad, beta);
                });
}

Var add_scalar(Tape& t, Var a, double s) {
  Tensor out = t.value(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return t.emit(std::move(out), rg(t, a),
                [a](Tape& tp, const Tape::Node& n) { tp.accum(a, n.grad); });
}

Var silu(Tape& t, Var a) {
  const Tensor& va = t.value(a);
  Tensor out(va.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    double s = 1.0 / (1.0 + std::exp(-va[i]));
    out[i] = va[i] * s;
  }
  return t.emit(std::move(out), rg(t, a),
                [a](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(a)) return;
                  const Tensor& va = tp.value(a);
                  Tensor& ga = tp.grad_buffer(a);
                  for (int64_t i = 0; i < ga.numel(); ++i) {
                    double s = 1.0 / (1.0 + std::exp(-va[i]));
                    ga[i] += n.grad[i] * s * (1.0 + va[i] * (1.0 - s));
                  }
                });
}

Var detach(Tape& t, Var a) { return t.constant(t.value(a)); }

// ----- reductions -----

Var sum(Tape& t, Var a) {
  return t.emit(Tensor::scalar(t.value(a).sum()), rg(t, a),
                [a](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(a)) return;
                  Tensor& ga = tp.grad_buffer(a);
                  for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[0];
                });
}

Var mean(Tape& t, Var a) {
  double inv = 1.0 / static_cast<double>(t.value(a).numel());
  return t.emit(Tensor::scalar(t.value(a).sum() * inv), rg(t, a),
                [a, inv](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(a)) return;
                  Tensor& ga = tp.grad_buffer(a);
                  for (int64_t i = 0; i < ga.numel(); ++i)
                    ga[i] += n.grad[0] * inv;
                });
}

Var sum_squares(Tape& t, Var a) {
  const Tensor& va = t.value(a);
  double s = 0.0;
  for (int64_t i = 0; i < va.numel(); ++i) s += va[i] * va[i];
  return t.emit(Tensor::scalar(s), rg(t, a),
                [a](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(a)) return;
                  const Tensor& va = tp.value(a);
                  Tensor& ga = tp.grad_buffer(a);
                  for (int64_t i = 0; i < ga.numel(); ++i)
                    ga[i] += 2.0 * va[i] * n.grad[0];
                });
}

Var l2_norm(Tape& t, Var a) {
  double norm = t.value(a).l2_norm();
  return t.emit(Tensor::scalar(norm), rg(t, a),
                [a, norm](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(a) || norm <= 0.0) return;
                  const Tensor& va = tp.value(a);
                  Tensor& ga = tp.grad_buffer(a);
                  double s = n.grad[0] / norm;
                  for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += s * va[i];
                });
}

Var mean_scalars(Tape& t, const std::vector<Var>& xs) {
  if (xs.empty())
    throw std::invalid_argument("ad::mean_scalars: empty term list");
  double s = 0.0;
  bool needs = false;
  for (Var x : xs) {
    if (t.value(x).numel() != 1)
      throw std::invalid_argument("ad::mean_scalars: non-scalar term");
    s += t.value(x)[0];
    needs = needs || t.requires_grad(x);
  }
  double inv = 1.0 / static_cast<double>(xs.size());
  return t.emit(Tensor::scalar(s * inv), needs,
                [xs, inv](Tape& tp, const Tape::Node& n) {
                  Tensor g = Tensor::scalar(n.grad[0] * inv);
                  for (Var x : xs) tp.accum(x, g);
                });
}

Var add_scalars(Tape& t, Var a, Var b) { return add(t, a, b); }

// ----- shape -----

Var reshape(Tape& t, Var a, std::vector<int> shape) {
  Tensor out(shape, t.value(a).vec());
  std::vector<int> orig = t.value(a).shape();
  return t.emit(std::move(out), rg(t, a),
                [a](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(a)) return;
                  Tensor& ga = tp.grad_buffer(a);
                  for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[i];
                });
}

Var concat_ch(Tape& t, Var a, Var b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (va.ndim() != 3 || vb.ndim() != 3 || va.dim(1) != vb.dim(1) ||
      va.dim(2) != vb.dim(2))
    throw std::invalid_argument("ad::concat_ch: incompatible shapes");
  Tensor out({va.dim(0) + vb.dim(0), va.dim(1), va.dim(2)});
  std::copy(va.data(), va.data() + va.numel(), out.data());
  std::copy(vb.data(), vb.data() + vb.numel(), out.data() + va.numel());
  int64_t na = va.numel();
  return t.emit(std::move(out), rg(t, a, b),
                [a, b, na](Tape& tp, const Tape::Node& n) {
                  if (tp.requires_grad(a)) {
                    Tensor& ga = tp.grad_buffer(a);
                    for (int64_t i = 0; i < na; ++i) ga[i] += n.grad[i];
                  }
                  if (tp.requires_grad(b)) {
                    Tensor& gb = tp.grad_buffer(b);
                    for (int64_t i = 0; i < gb.numel(); ++i)
                      gb[i] += n.grad[na + i];
                  }
                });
}

Var patchify(Tape& t, Var a, int p) {
  const Tensor& x = t.value(a);
  if (x.ndim() != 3 || x.dim(1) % p != 0 || x.dim(2) % p != 0)
    throw std::invalid_argument("ad::patchify: shape not divisible by patch");
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  int gy = h / p, gx = w / p;
  Tensor out({gy * gx, c * p * p});
  for (int ty = 0; ty < gy; ++ty)
    for (int tx = 0; tx < gx; ++tx) {
      int tok = ty * gx + tx;
      int64_t o = static_cast<int64_t>(tok) * c * p * p;
      for (int ci = 0; ci < c; ++ci)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px)
            out[o++] = x.at(ci, ty * p + py, tx * p + px);
    }
  return t.emit(std::move(out), rg(t, a),
                [a, p](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(a)) return;
                  Tensor& ga = tp.grad_buffer(a);
                  int c = ga.dim(0), h = ga.dim(1), w = ga.dim(2);
                  int gy = h / p, gx = w / p;
                  for (int ty = 0; ty < gy; ++ty)
                    for (int tx = 0; tx < gx; ++tx) {
                      int tok = ty * gx + tx;
                      int64_t o = static_cast<int64_t>(tok) * c * p * p;
                      for (int ci = 0; ci < c; ++ci)
                        for (int py = 0; py < p; ++py)
                          for (int px = 0; px < p; ++px)
                            ga.at(ci, ty * p + py, tx * p + px) += n.grad[o++];
                    }
                });
}

// ----- linear algebra -----

Var linear(Tape& t, Var x, Var w, Var b) {
  const Tensor& vx = t.value(x);
  const Tensor& vw = t.value(w);
  const Tensor& vb = t.value(b);
  int m = vw.dim(0), k = vw.dim(1);
  if (vx.numel() != k || vb.numel() != m)
    throw std::invalid_argument("ad::linear: shape mismatch");
  Tensor out({m});
  for (int i = 0; i < m; ++i) {
    double acc = vb[i];
    const double* row = vw.data() + static_cast<int64_t>(i) * k;
    for (int j = 0; j < k; ++j) acc += row[j] * vx[j];
    out[i] = acc;
  }
  return t.emit(std::move(out), t.requires_grad(x) || rg(t, w, b),
                [x, w, b, m, k](Tape& tp, const Tape::Node& n) {
                  const Tensor& vx = tp.value(x);
                  const Tensor& vw = tp.value(w);
                  if (tp.requires_grad(x)) {
                    Tensor& gx = tp.grad_buffer(x);
                    for (int i = 0; i < m; ++i) {
                      const double* row = vw.data() + static_cast<int64_t>(i) * k;
                      double g = n.grad[i];
                      for (int j = 0; j < k; ++j) gx[j] += g * row[j];
                    }
                  }
                  if (tp.requires_grad(w)) {
                    Tensor& gw = tp.grad_buffer(w);
                    for (int i = 0; i < m; ++i) {
                      double g = n.grad[i];
                      double* row = gw.data() + static_cast<int64_t>(i) * k;
                      for (int j = 0; j < k; ++j) row[j] += g * vx[j];
                    }
                  }
                  if (tp.requires_grad(b)) tp.accum(b, n.grad);
                });
}

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(1) != vb.dim(0))
    throw std::invalid_argument("ad::matmul: shape mismatch");
  int m = va.dim(0), k = va.dim(1), n2 = vb.dim(1);
  Tensor out({m, n2});
  for (int i = 0; i < m; ++i)
    for (int l = 0; l < k; ++l) {
      double av = va[static_cast<int64_t>(i) * k + l];
      if (av == 0.0) continue;
      const double* brow = vb.data() + static_cast<int64_t>(l) * n2;
      double* orow = out.data() + static_cast<int64_t>(i) * n2;
      for (int j = 0; j < n2; ++j) orow[j] += av * brow[j];
    }
  return t.emit(std::move(out), rg(t, a, b),
                [a, b, m, k, n2](Tape& tp, const Tape::Node& n) {
                  const Tensor& va = tp.value(a);
                  const Tensor& vb = tp.value(b);
                  if (tp.requires_grad(a)) {
                    Tensor& ga = tp.grad_buffer(a);
                    for (int i = 0; i < m; ++i)
                      for (int l = 0; l < k; ++l) {
                        const double* brow = vb.data() + static_cast<int64_t>(l) * n2;
                        const double* grow = n.grad.data() + static_cast<int64_t>(i) * n2;
                        double acc = 0.0;
                        for (int j = 0; j < n2; ++j) acc += grow[j] * brow[j];
                        ga[static_cast<int64_t>(i) * k + l] += acc;
                      }
                  }
                  if (tp.requires_grad(b)) {
                    Tensor& gb = tp.grad_buffer(b);
                    for (int i = 0; i < m; ++i)
                      for (int l = 0; l < k; ++l) {
                        double av = va[static_cast<int64_t>(i) * k + l];
                        if (av == 0.0) continue;
                        const double* grow = n.grad.data() + static_cast<int64_t>(i) * n2;
                        double* brow = gb.data() + static_cast<int64_t>(l) * n2;
                        for (int j = 0; j < n2; ++j) brow[j] += av * grow[j];
                      }
                  }
                });
}

Var transpose(Tape& t, Var a) {
  const Tensor& va = t.value(a);
  if (va.ndim() != 2) throw std::invalid_argument("ad::transpose: need 2-d");
  int m = va.dim(0), n2 = va.dim(1);
  Tensor out({n2, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n2; ++j)
      out[static_cast<int64_t>(j) * m + i] = va[static_cast<int64_t>(i) * n2 + j];
  return t.emit(std::move(out), rg(t, a),
                [a, m, n2](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(a)) return;
                  Tensor& ga = tp.grad_buffer(a);
                  for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n2; ++j)
                      ga[static_cast<int64_t>(i) * n2 + j] +=
                          n.grad[static_cast<int64_t>(j) * m + i];
                });
}

Var add_row_bias(Tape& t, Var a, Var b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (va.ndim() != 2 || vb.numel() != va.dim(1))
    throw std::invalid_argument("ad::add_row_bias: shape mismatch");
  int m = va.dim(0), n2 = va.dim(1);
  Tensor out = va;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n2; ++j) out[static_cast<int64_t>(i) * n2 + j] += vb[j];
  return t.emit(std::move(out), rg(t, a, b),
                [a, b, m, n2](Tape& tp, const Tape::Node& n) {
                  tp.accum(a, n.grad);
                  if (tp.requires_grad(b)) {
                    Tensor& gb = tp.grad_buffer(b);
                    for (int i = 0; i < m; ++i)
                      for (int j = 0; j < n2; ++j)
                        gb[j] += n.grad[static_cast<int64_t>(i) * n2 + j];
                  }
                });
}

Var mean_rows(Tape& t, Var a) {
  const Tensor& va = t.value(a);
  if (va.ndim() != 2) throw std::invalid_argument("ad::mean_rows: need 2-d");
  int m = va.dim(0), n2 = va.dim(1);
  double inv = 1.0 / static_cast<double>(m);
  Tensor out({n2});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n2; ++j) out[j] += va[static_cast<int64_t>(i) * n2 + j] * inv;
  return t.emit(std::move(out), rg(t, a),
                [a, m, n2, inv](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(a)) return;
                  Tensor& ga = tp.grad_buffer(a);
                  for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n2; ++j)
                      ga[static_cast<int64_t>(i) * n2 + j] += n.grad[j] * inv;
                });
}

// ----- conv / spatial -----

namespace {
struct ConvDims {
  int ic, ih, iw, oc, kh, kw, oh, ow, stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.ndim() != 3 || w.ndim() != 4)
    throw std::invalid_argument("ad::conv2d: x must be CHW, w must be OIKK");
  ConvDims d;
  d.ic = x.dim(0);
  d.ih = x.dim(1);
  d.iw = x.dim(2);
  d.oc = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  if (w.dim(1) != d.ic)
    throw std::invalid_argument("ad::conv2d: channel mismatch");
  d.oh = (d.ih + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.iw + 2 * pad - d.kw) / stride + 1;
  if (d.oh <= 0 || d.ow <= 0)
    throw std::invalid_argument("ad::conv2d: empty output");
  return d;
}
}  // namespace

Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& vx = t.value(x);
  const Tensor& vw = t.value(w);
  const Tensor& vb = t.value(b);
  ConvDims d = conv_dims(vx, vw, stride, pad);
  if (vb.numel() != d.oc) throw std::invalid_argument("ad::conv2d: bias size");
  Tensor out({d.oc, d.oh, d.ow});
  for (int oc = 0; oc < d.oc; ++oc) {
    double* oplane = out.data() + static_cast<int64_t>(oc) * d.oh * d.ow;
    double bias = vb[oc];
    for (int64_t i = 0; i < static_cast<int64_t>(d.oh) * d.ow; ++i)
      oplane[i] = bias;
    for (int ic = 0; ic < d.ic; ++ic) {
      const double* iplane = vx.data() + static_cast<int64_t>(ic) * d.ih * d.iw;
      const double* kker =
          vw.data() + (static_cast<int64_t>(oc) * d.ic + ic) * d.kh * d.kw;
      for (int ky = 0; ky < d.kh; ++ky)
        for (int kx = 0; kx < d.kw; ++kx) {
          double wv = kker[ky * d.kw + kx];
          if (wv == 0.0) continue;
          for (int oy = 0; oy < d.oh; ++oy) {
            int iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.ih) continue;
            const double* irow = iplane + static_cast<int64_t>(iy) * d.iw;
            double* orow = oplane + static_cast<int64_t>(oy) * d.ow;
            for (int ox = 0; ox < d.ow; ++ox) {
              int ix = ox * d.stride - d.pad + kx;
              if (ix < 0 || ix >= d.iw) continue;
              orow[ox] += wv * irow[ix];
            }
          }
        }
    }
  }
  return t.emit(
      std::move(out), t.requires_grad(x) || rg(t, w, b),
      [x, w, b, d](Tape& tp, const Tape::Node& n) {
        const Tensor& vx = tp.value(x);
        const Tensor& vw = tp.value(w);
        bool need_x = tp.requires_grad(x);
        bool need_w = tp.requires_grad(w);
        bool need_b = tp.requires_grad(b);
        Tensor* gx = need_x ? &tp.grad_buffer(x) : nullptr;
        Tensor* gw = need_w ? &tp.grad_buffer(w) : nullptr;
        Tensor* gb = need_b ? &tp.grad_buffer(b) : nullptr;
        for (int oc = 0; oc < d.oc; ++oc) {
          const double* gplane =
              n.grad.data() + static_cast<int64_t>(oc) * d.oh * d.ow;
          if (need_b) {
            double acc = 0.0;
            for (int64_t i = 0; i < static_cast<int64_t>(d.oh) * d.ow; ++i)
              acc += gplane[i];
            (*gb)[oc] += acc;
          }
          if (!need_x && !need_w) continue;
          for (int ic = 0; ic < d.ic; ++ic) {
            const double* iplane =
                vx.data() + static_cast<int64_t>(ic) * d.ih * d.iw;
            const double* kker =
                vw.data() + (static_cast<int64_t>(oc) * d.ic + ic) * d.kh * d.kw;
            double* gker =
                need_w ? gw->data() +
                             (static_cast<int64_t>(oc) * d.ic + ic) * d.kh * d.kw
                       : nullptr;
            double* giplane =
                need_x ? gx->data() + static_cast<int64_t>(ic) * d.ih * d.iw
                       : nullptr;
            for (int ky = 0; ky < d.kh; ++ky)
              for (int kx = 0; kx < d.kw; ++kx) {
                double wv = kker[ky * d.kw + kx];
                double wacc = 0.0;
                for (int oy = 0; oy < d.oh; ++oy) {
                  int iy = oy * d.stride - d.pad + ky;
                  if (iy < 0 || iy >= d.ih) continue;
                  const double* grow = gplane + static_cast<int64_t>(oy) * d.ow;
                  const double* irow = iplane + static_cast<int64_t>(iy) * d.iw;
                  double* girow =
                      need_x ? giplane + static_cast<int64_t>(iy) * d.iw : nullptr;
                  for (int ox = 0; ox < d.ow; ++ox) {
                    int ix = ox * d.stride - d.pad + kx;
                    if (ix < 0 || ix >= d.iw) continue;
                    double g = grow[ox];
                    if (need_w) wacc += g * irow[ix];
                    if (need_x) girow[ix] += g * wv;
                  }
                }
                if (need_w) gker[ky * d.kw + kx] += wacc;
              }
          }
        }
      });
}

Var add_channel_bias(Tape& t, Var x, Var bias) {
  const Tensor& vx = t.value(x);
  const Tensor& vb = t.value(bias);
  if (vx.ndim() != 3 || vb.numel() != vx.dim(0))
    throw std::invalid_argument("ad::add_channel_bias: shape mismatch");
  int c = vx.dim(0);
  int64_t hw = static_cast<int64_t>(vx.dim(1)) * vx.dim(2);
  Tensor out = vx;
  for (int ci = 0; ci < c; ++ci) {
    double bv = vb[ci];
    double* p = out.data() + ci * hw;
    for (int64_t i = 0; i < hw; ++i) p[i] += bv;
  }
  return t.emit(std::move(out), rg(t, x, bias),
                [x, bias, c, hw](Tape& tp, const Tape::Node& n) {
                  tp.accum(x, n.grad);
                  if (tp.requires_grad(bias)) {
                    Tensor& gb = tp.grad_buffer(bias);
                    for (int ci = 0; ci < c; ++ci) {
                      const double* p = n.grad.data() + ci * hw;
                      double acc = 0.0;
                      for (int64_t i = 0; i < hw; ++i) acc += p[i];
                      gb[ci] += acc;
                    }
                  }
                });
}

Var upsample2x(Tape& t, Var x) {
  const Tensor& vx = t.value(x);
  if (vx.ndim() != 3) throw std::invalid_argument("ad::upsample2x: need CHW");
  int c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        double v = vx.at(ci, y, xx);
        out.at(ci, 2 * y, 2 * xx) = v;
        out.at(ci, 2 * y, 2 * xx + 1) = v;
        out.at(ci, 2 * y + 1, 2 * xx) = v;
        out.at(ci, 2 * y + 1, 2 * xx + 1) = v;
      }
  return t.emit(std::move(out), rg(t, x),
                [x, c, h, w](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(x)) return;
                  Tensor& gx = tp.grad_buffer(x);
                  for (int ci = 0; ci < c; ++ci)
                    for (int y = 0; y < h; ++y)
                      for (int xx = 0; xx < w; ++xx)
                        gx.at(ci, y, xx) += n.grad.at(ci, 2 * y, 2 * xx) +
                                            n.grad.at(ci, 2 * y, 2 * xx + 1) +
                                            n.grad.at(ci, 2 * y + 1, 2 * xx) +
                                            n.grad.at(ci, 2 * y + 1, 2 * xx + 1);
                });
}

Var avg_pool2(Tape& t, Var x) {
  const Tensor& vx = t.value(x);
  if (vx.ndim() != 3 || vx.dim(1) % 2 || vx.dim(2) % 2)
    throw std::invalid_argument("ad::avg_pool2: need CHW with even H,W");
  int c = vx.dim(0), h = vx.dim(1) / 2, w = vx.dim(2) / 2;
  Tensor out({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        out.at(ci, y, xx) =
            0.25 * (vx.at(ci, 2 * y, 2 * xx) + vx.at(ci, 2 * y, 2 * xx + 1) +
                    vx.at(ci, 2 * y + 1, 2 * xx) + vx.at(ci, 2 * y + 1, 2 * xx + 1));
  return t.emit(std::move(out), rg(t, x),
                [x, c, h, w](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(x)) return;
                  Tensor& gx = tp.grad_buffer(x);
                  for (int ci = 0; ci < c; ++ci)
                    for (int y = 0; y < h; ++y)
                      for (int xx = 0; xx < w; ++xx) {
                        double g = 0.25 * n.grad.at(ci, y, xx);
                        gx.at(ci, 2 * y, 2 * xx) += g;
                        gx.at(ci, 2 * y, 2 * xx + 1) += g;
                        gx.at(ci, 2 * y + 1, 2 * xx) += g;
                        gx.at(ci, 2 * y + 1, 2 * xx + 1) += g;
                      }
                });
}

Var global_avg_pool(Tape& t, Var x) {
  const Tensor& vx = t.value(x);
  if (vx.ndim() != 3) throw std::invalid_argument("ad::global_avg_pool: need CHW");
  int c = vx.dim(0);
  int64_t hw = static_cast<int64_t>(vx.dim(1)) * vx.dim(2);
  double inv = 1.0 / static_cast<double>(hw);
  Tensor out({c});
  for (int ci = 0; ci < c; ++ci) {
    const double* p = vx.data() + ci * hw;
    double acc = 0.0;
    for (int64_t i = 0; i < hw; ++i) acc += p[i];
    out[ci] = acc * inv;
  }
  return t.emit(std::move(out), rg(t, x),
                [x, c, hw, inv](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(x)) return;
                  Tensor& gx = tp.grad_buffer(x);
                  for (int ci = 0; ci < c; ++ci) {
                    double g = n.grad[ci] * inv;
                    double* p = gx.data() + ci * hw;
                    for (int64_t i = 0; i < hw; ++i) p[i] += g;
                  }
                });
}

Var pad2d_zero(Tape& t, Var x, int p) {
  if (p < 0) throw std::invalid_argument("ad::pad2d_zero: negative pad");
  const Tensor& vx = t.value(x);
  if (vx.ndim() != 3) throw std::invalid_argument("ad::pad2d_zero: need CHW");
  int c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
  Tensor out({c, h + 2 * p, w + 2 * p});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        out.at(ci, y + p, xx + p) = vx.at(ci, y, xx);
  return t.emit(std::move(out), rg(t, x),
                [x, p, c, h, w](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(x)) return;
                  Tensor& gx = tp.grad_buffer(x);
                  for (int ci = 0; ci < c; ++ci)
                    for (int y = 0; y < h; ++y)
                      for (int xx = 0; xx < w; ++xx)
                        gx.at(ci, y, xx) += n.grad.at(ci, y + p, xx + p);
                });
}

Var bilinear_resize(Tape& t, Var x, int out_h, int out_w) {
  const Tensor& vx = t.value(x);
  if (vx.ndim() != 3) throw std::invalid_argument("ad::bilinear_resize: need CHW");
  int c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
  // Half-pixel-center coordinate mapping with edge clamping; linear in the
  // pixel values, so gradients w.r.t. x are exact everywhere.
  double sy = static_cast<double>(h) / out_h;
  double sx = static_cast<double>(w) / out_w;
  struct Taps {
    int y0, y1, x0, x1;
    double fy, fx;
  };
  std::vector<Taps> taps(static_cast<size_t>(out_h) * out_w);
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      double yc = (oy + 0.5) * sy - 0.5;
      double xc = (ox + 0.5) * sx - 0.5;
      double y0f = std::floor(yc), x0f = std::floor(xc);
      Taps tp;
      tp.fy = yc - y0f;
      tp.fx = xc - x0f;
      tp.y0 = std::clamp(static_cast<int>(y0f), 0, h - 1);
      tp.y1 = std::clamp(static_cast<int>(y0f) + 1, 0, h - 1);
      tp.x0 = std::clamp(static_cast<int>(x0f), 0, w - 1);
      tp.x1 = std::clamp(static_cast<int>(x0f) + 1, 0, w - 1);
      taps[static_cast<size_t>(oy) * out_w + ox] = tp;
    }
  Tensor out({c, out_h, out_w});
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        const Taps& tp = taps[static_cast<size_t>(oy) * out_w + ox];
        double top = (1.0 - tp.fx) * vx.at(ci, tp.y0, tp.x0) +
                     tp.fx * vx.at(ci, tp.y0, tp.x1);
        double bot = (1.0 - tp.fx) * vx.at(ci, tp.y1, tp.x0) +
                     tp.fx * vx.at(ci, tp.y1, tp.x1);
        out.at(ci, oy, ox) = (1.0 - tp.fy) * top + tp.fy * bot;
      }
  return t.emit(std::move(out), rg(t, x),
                [x, c, out_h, out_w, taps](Tape& tp2, const Tape::Node& n) {
                  if (!tp2.requires_grad(x)) return;
                  Tensor& gx = tp2.grad_buffer(x);
                  for (int ci = 0; ci < c; ++ci)
                    for (int oy = 0; oy < out_h; ++oy)
                      for (int ox = 0; ox < out_w; ++ox) {
                        const Taps& tp = taps[static_cast<size_t>(oy) * out_w + ox];
                        double g = n.grad.at(ci, oy, ox);
                        gx.at(ci, tp.y0, tp.x0) += g * (1.0 - tp.fy) * (1.0 - tp.fx);
                        gx.at(ci, tp.y0, tp.x1) += g * (1.0 - tp.fy) * tp.fx;
                        gx.at(ci, tp.y1, tp.x0) += g * tp.fy * (1.0 - tp.fx);
                        gx.at(ci, tp.y1, tp.x1) += g * tp.fy * tp.fx;
                      }
                });
}

// ----- classification -----

Var softmax_rows(Tape& t, Var a) {
  const Tensor& va = t.value(a);
  if (va.ndim() != 2) throw std::invalid_argument("ad::softmax_rows: need 2-d");
  int m = va.dim(0), k = va.dim(1);
  Tensor out({m, k});
  for (int i = 0; i < m; ++i) {
    const double* row = va.data() + static_cast<int64_t>(i) * k;
    double* orow = out.data() + static_cast<int64_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < k; ++j) orow[j] /= z;
  }
  return t.emit(std::move(out), rg(t, a),
                [a, m, k](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(a)) return;
                  Tensor& ga = tp.grad_buffer(a);
                  for (int i = 0; i < m; ++i) {
                    const double* s = n.value.data() + static_cast<int64_t>(i) * k;
                    const double* g = n.grad.data() + static_cast<int64_t>(i) * k;
                    double dot = 0.0;
                    for (int j = 0; j < k; ++j) dot += s[j] * g[j];
                    double* gr = ga.data() + static_cast<int64_t>(i) * k;
                    for (int j = 0; j < k; ++j) gr[j] += s[j] * (g[j] - dot);
                  }
                });
}

Var softmax_cross_entropy(Tape& t, Var logits, int label) {
  const Tensor& vl = t.value(logits);
  int k = static_cast<int>(vl.numel());
  if (label < 0 || label >= k)
    throw std::invalid_argument("ad::softmax_cross_entropy: label out of range");
  double mx = vl[0];
  for (int j = 1; j < k; ++j) mx = std::max(mx, vl[j]);
  double z = 0.0;
  for (int j = 0; j < k; ++j) z += std::exp(vl[j] - mx);
  double loss = mx + std::log(z) - vl[label];
  return t.emit(Tensor::scalar(loss), rg(t, logits),
                [logits, label, k](Tape& tp, const Tape::Node& n) {
                  if (!tp.requires_grad(logits)) return;
                  const Tensor& vl = tp.value(logits);
                  Tensor& gl = tp.grad_buffer(logits);
                  double mx = vl[0];
                  for (int j = 1; j < k; ++j) mx = std::max(mx, vl[j]);
                  double z = 0.0;
                  for (int j = 0; j < k; ++j) z += std::exp(vl[j] - mx);
                  double g = n.grad[0];
                  for (int j = 0; j < k; ++j) {
                    double p = std::exp(vl[j] - mx) / z;
                    gl[j] += g * (p - (j == label ? 1.0 : 0.0));
                  }
                });
}

}  // namespace apa::ad
