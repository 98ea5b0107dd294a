#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "cs2/tensor.hpp"

namespace cs2 {

// Handle into a Tape.
struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

// Reverse-mode tape of primitive ops. Each op appends one node holding the
// result value; nodes that (transitively) depend on a grad-requiring leaf get
// a grad buffer and a backward closure. backward() walks the tape in reverse.
//
// Values are immutable once recorded; a tape is built, differentiated and
// discarded per training step.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  const Tensor& val(Var v) const { return nodes_[idx(v)].value; }

  const std::vector<double>& grad(Var v) const {
    const Node& n = nodes_[idx(v)];
    if (!n.needs_grad) raise_data("tape: node has no gradient");
    return n.grad;
  }

  Var leaf(Tensor t) {
    const bool needs = t.requires_grad;
    return push(std::move(t), needs, {});
  }

  Var constant(Tensor t) {
    t.set_requires_grad(false);
    return push(std::move(t), false, {});
  }

  // --- elementwise -------------------------------------------------------

  Var add(Var a, Var b) { return binary_ew(a, b, "add", 1.0); }
  Var sub(Var a, Var b) { return binary_ew(a, b, "sub", -1.0); }

  Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    Tensor out(ta.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = ta.data[i] * tb.data[i];
    const bool needs = needs_grad(a) || needs_grad(b);
    Var o = push(std::move(out), needs, {});
    if (needs) {
      set_backward(o, [this, a, b, o] {
        const auto& g = nodes_[o.i].grad;
        if (needs_grad(a)) {
          auto& ga = nodes_[a.i].grad;
          const auto& vb = nodes_[b.i].value.data;
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
        }
        if (needs_grad(b)) {
          auto& gb = nodes_[b.i].grad;
          const auto& va = nodes_[a.i].value.data;
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
        }
      });
    }
    return o;
  }

  Var scale(Var a, double k) {
    Tensor out(val(a).shape);
    const auto& va = val(a).data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = k * va[i];
    const bool needs = needs_grad(a);
    Var o = push(std::move(out), needs, {});
    if (needs) {
      set_backward(o, [this, a, o, k] {
        const auto& g = nodes_[o.i].grad;
        auto& ga = nodes_[a.i].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
      });
    }
    return o;
  }

  Var relu(Var a) {
    Tensor out(val(a).shape);
    const auto& va = val(a).data;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = va[i] > 0.0 ? va[i] : 0.0;
    const bool needs = needs_grad(a);
    Var o = push(std::move(out), needs, {});
    if (needs) {
      set_backward(o, [this, a, o] {
        const auto& g = nodes_[o.i].grad;
        const auto& va2 = nodes_[a.i].value.data;
        auto& ga = nodes_[a.i].grad;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (va2[i] > 0.0) ga[i] += g[i];
      });
    }
    return o;
  }

  Var leaky_relu(Var a, double slope) {
    Tensor out(val(a).shape);
    const auto& va = val(a).data;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = va[i] > 0.0 ? va[i] : slope * va[i];
    const bool needs = needs_grad(a);
    Var o = push(std::move(out), needs, {});
    if (needs) {
      set_backward(o, [this, a, o, slope] {
        const auto& g = nodes_[o.i].grad;
        const auto& va2 = nodes_[a.i].value.data;
        auto& ga = nodes_[a.i].grad;
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += (va2[i] > 0.0 ? 1.0 : slope) * g[i];
      });
    }
    return o;
  }

  Var sigmoid(Var a) {
    Tensor out(val(a).shape);
    const auto& va = val(a).data;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = 1.0 / (1.0 + std::exp(-va[i]));
    const bool needs = needs_grad(a);
    Var o = push(std::move(out), needs, {});
    if (needs) {
      set_backward(o, [this, a, o] {
        const auto& g = nodes_[o.i].grad;
        const auto& y = nodes_[o.i].value.data;
        auto& ga = nodes_[a.i].grad;
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * y[i] * (1.0 - y[i]);
      });
    }
    return o;
  }

  Var sum(Var a) {
    double acc = 0.0;
    for (double v : val(a).data) acc += v;
    const bool needs = needs_grad(a);
    Var o = push(Tensor::scalar(acc), needs, {});
    if (needs) {
      set_backward(o, [this, a, o] {
        const double g = nodes_[o.i].grad[0];
        auto& ga = nodes_[a.i].grad;
        for (auto& v : ga) v += g;
      });
    }
    return o;
  }

  // --- convolution -------------------------------------------------------

  // x: [Cin,H,W], k: [Cout,Cin,kh,kw] -> [Cout,Ho,Wo] with
  // Ho = (H + 2*pad - kh)/stride + 1 (floor), likewise Wo.
  Var conv2d(Var x, Var k, int stride, int padding) {
    const Tensor& tx = val(x);
    const Tensor& tk = val(k);
    if (tx.ndim() != 3)
      raise_data("conv2d: input must be [C,H,W], got ", shape_str(tx.shape));
    if (tk.ndim() != 4)
      raise_data("conv2d: kernel must be [Cout,Cin,kh,kw], got ",
                 shape_str(tk.shape));
    if (stride < 1) raise_data("conv2d: stride must be >= 1, got ", stride);
    if (padding < 0) raise_data("conv2d: padding must be >= 0, got ", padding);
    const int Ci = tx.dim(0), H = tx.dim(1), W = tx.dim(2);
    const int Co = tk.dim(0), kh = tk.dim(2), kw = tk.dim(3);
    if (tk.dim(1) != Ci)
      raise_data("conv2d: kernel input channels ", tk.dim(1),
                 " do not match input channels ", Ci);
    if (kh > H + 2 * padding || kw > W + 2 * padding)
      raise_data("conv2d: kernel ", kh, "x", kw, " exceeds padded input ",
                 H + 2 * padding, "x", W + 2 * padding);
    const int Ho = (H + 2 * padding - kh) / stride + 1;
    const int Wo = (W + 2 * padding - kw) / stride + 1;

    Tensor out({Co, Ho, Wo});
    conv2d_forward(tx.data.data(), Ci, H, W, tk.data.data(), Co, kh, kw, stride,
                   padding, out.data.data(), Ho, Wo);

    const bool needs = needs_grad(x) || needs_grad(k);
    Var o = push(std::move(out), needs, {});
    if (needs) {
      set_backward(o, [this, x, k, o, stride, padding] {
        const Tensor& vx = nodes_[x.i].value;
        const Tensor& vk = nodes_[k.i].value;
        const Tensor& vo = nodes_[o.i].value;
        const auto& g = nodes_[o.i].grad;
        const int Ci2 = vx.dim(0), H2 = vx.dim(1), W2 = vx.dim(2);
        const int Co2 = vk.dim(0), kh2 = vk.dim(2), kw2 = vk.dim(3);
        const int Ho2 = vo.dim(1), Wo2 = vo.dim(2);
        if (needs_grad(x))
          conv2d_backward_input(nodes_[x.i].grad.data(), Ci2, H2, W2,
                                vk.data.data(), Co2, kh2, kw2, stride, padding,
                                g.data(), Ho2, Wo2);
        if (needs_grad(k))
          conv2d_backward_kernel(vx.data.data(), Ci2, H2, W2,
                                 nodes_[k.i].grad.data(), Co2, kh2, kw2, stride,
                                 padding, g.data(), Ho2, Wo2);
      });
    }
    return o;
  }

  // x: [C,H,W] + b: [C]
  Var bias_add(Var x, Var b) {
    const Tensor& tx = val(x);
    const Tensor& tb = val(b);
    if (tx.ndim() != 3 || tb.ndim() != 1 || tb.dim(0) != tx.dim(0))
      raise_data("bias_add: expected [C,H,W] + [C], got ", shape_str(tx.shape),
                 " + ", shape_str(tb.shape));
    const int C = tx.dim(0);
    const std::size_t hw = static_cast<std::size_t>(tx.dim(1)) * tx.dim(2);
    Tensor out(tx.shape);
    for (int c = 0; c < C; ++c) {
      const double bv = tb.data[static_cast<std::size_t>(c)];
      const double* src = tx.data.data() + c * hw;
      double* dst = out.data.data() + c * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + bv;
    }
    const bool needs = needs_grad(x) || needs_grad(b);
    Var o = push(std::move(out), needs, {});
    if (needs) {
      set_backward(o, [this, x, b, o, C, hw] {
        const auto& g = nodes_[o.i].grad;
        if (needs_grad(x)) {
          auto& gx = nodes_[x.i].grad;
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (needs_grad(b)) {
          auto& gb = nodes_[b.i].grad;
          for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            const double* gc = g.data() + c * hw;
            for (std::size_t i = 0; i < hw; ++i) acc += gc[i];
            gb[static_cast<std::size_t>(c)] += acc;
          }
        }
      });
    }
    return o;
  }

  // --- normalization -----------------------------------------------------

  // Per-channel (x - mean) / sqrt(popvar + eps) over the spatial extent.
  Var instance_norm(Var x, double eps) {
    const Tensor& tx = val(x);
    if (tx.ndim() != 3)
      raise_data("instance_norm: input must be [C,H,W], got ",
                 shape_str(tx.shape));
    const int C = tx.dim(0);
    const std::size_t hw = static_cast<std::size_t>(tx.dim(1)) * tx.dim(2);
    Tensor out(tx.shape);
    std::vector<double> sigma(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
      const double* src = tx.data.data() + c * hw;
      double mu = 0.0;
      for (std::size_t i = 0; i < hw; ++i) mu += src[i];
      mu /= static_cast<double>(hw);
      double var = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = src[i] - mu;
        var += d * d;
      }
      var /= static_cast<double>(hw);
      const double s = std::sqrt(var + eps);
      sigma[static_cast<std::size_t>(c)] = s;
      double* dst = out.data.data() + c * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] = (src[i] - mu) / s;
    }
    const bool needs = needs_grad(x);
    Var o = push(std::move(out), needs, {});
    if (needs) {
      set_backward(o, [this, x, o, C, hw, sigma = std::move(sigma)] {
        const auto& g = nodes_[o.i].grad;
        const auto& y = nodes_[o.i].value.data;
        auto& gx = nodes_[x.i].grad;
        for (int c = 0; c < C; ++c) {
          const double* gc = g.data() + c * hw;
          const double* yc = y.data() + c * hw;
          double gmean = 0.0, gymean = 0.0;
          for (std::size_t i = 0; i < hw; ++i) {
            gmean += gc[i];
            gymean += gc[i] * yc[i];
          }
          gmean /= static_cast<double>(hw);
          gymean /= static_cast<double>(hw);
          const double inv_s = 1.0 / sigma[static_cast<std::size_t>(c)];
          double* gxc = gx.data() + c * hw;
          for (std::size_t i = 0; i < hw; ++i)
            gxc[i] += inv_s * (gc[i] - gmean - yc[i] * gymean);
        }
      });
    }
    return o;
  }

  // Renormalize content channels to the style channels' mean/std:
  //   out_c = sqrt(var_s + eps) * (content_c - mean_c)/sqrt(var_c + eps) + mean_s
  // Using the same eps on both sides makes adain(x, x) the identity.
  // Spatial extents of content and style may differ.
  Var adain(Var content, Var style, double eps) {
    const Tensor& tc = val(content);
    const Tensor& ts = val(style);
    if (tc.ndim() != 3 || ts.ndim() != 3)
      raise_data("adain: inputs must be [C,H,W], got ", shape_str(tc.shape),
                 " and ", shape_str(ts.shape));
    if (tc.dim(0) != ts.dim(0))
      raise_data("adain: content has ", tc.dim(0), " channels but style has ",
                 ts.dim(0));
    const int C = tc.dim(0);
    const std::size_t nc = static_cast<std::size_t>(tc.dim(1)) * tc.dim(2);
    const std::size_t ns = static_cast<std::size_t>(ts.dim(1)) * ts.dim(2);

    std::vector<double> mu_c(C), sig_c(C), mu_s(C), sig_s(C);
    channel_stats(tc.data.data(), C, nc, eps, mu_c.data(), sig_c.data());
    channel_stats(ts.data.data(), C, ns, eps, mu_s.data(), sig_s.data());

    Tensor out(tc.shape);
    for (int c = 0; c < C; ++c) {
      const double* src = tc.data.data() + c * nc;
      double* dst = out.data.data() + c * nc;
      const double a = sig_s[c] / sig_c[c];
      const double mc = mu_c[c], msv = mu_s[c];
      for (std::size_t i = 0; i < nc; ++i) dst[i] = a * (src[i] - mc) + msv;
    }

    const bool needs = needs_grad(content) || needs_grad(style);
    Var o = push(std::move(out), needs, {});
    if (needs) {
      set_backward(o, [this, content, style, o, C, nc, ns, mu_c = std::move(mu_c),
                       sig_c = std::move(sig_c), mu_s = std::move(mu_s),
                       sig_s = std::move(sig_s)] {
        const auto& g = nodes_[o.i].grad;
        const auto& vc = nodes_[content.i].value.data;
        const auto& vs = nodes_[style.i].value.data;
        for (int c = 0; c < C; ++c) {
          const double* gc = g.data() + c * nc;
          const double* cc = vc.data() + c * nc;
          // chat_i = (content_i - mu_c)/sig_c
          double gmean = 0.0, gdot = 0.0;
          for (std::size_t i = 0; i < nc; ++i) {
            const double chat = (cc[i] - mu_c[c]) / sig_c[c];
            gmean += gc[i];
            gdot += gc[i] * chat;
          }
          if (needs_grad(content)) {
            auto& gxc = nodes_[content.i].grad;
            double* gx = gxc.data() + c * nc;
            const double a = sig_s[c] / sig_c[c];
            const double gm = gmean / static_cast<double>(nc);
            const double gd = gdot / static_cast<double>(nc);
            for (std::size_t i = 0; i < nc; ++i) {
              const double chat = (cc[i] - mu_c[c]) / sig_c[c];
              gx[i] += a * (gc[i] - gm - chat * gd);
            }
          }
          if (needs_grad(style)) {
            auto& gsx = nodes_[style.i].grad;
            double* gs = gsx.data() + c * ns;
            const double* sc = vs.data() + c * ns;
            for (std::size_t i = 0; i < ns; ++i) {
              const double shat = (sc[i] - mu_s[c]) / sig_s[c];
              gs[i] += (gdot * shat + gmean) / static_cast<double>(ns);
            }
          }
        }
      });
    }
    return o;
  }

  // --- losses ------------------------------------------------------------

  Var mse(Var a, Var b) {
    require_same_shape(a, b, "mse");
    const auto& va = val(a).data;
    const auto& vb = val(b).data;
    const double n = static_cast<double>(va.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) {
      const double d = va[i] - vb[i];
      acc += d * d;
    }
    const bool needs = needs_grad(a) || needs_grad(b);
    Var o = push(Tensor::scalar(acc / n), needs, {});
    if (needs) {
      set_backward(o, [this, a, b, o, n] {
        const double g = nodes_[o.i].grad[0];
        const auto& va2 = nodes_[a.i].value.data;
        const auto& vb2 = nodes_[b.i].value.data;
        const double k = 2.0 * g / n;
        if (needs_grad(a)) {
          auto& ga = nodes_[a.i].grad;
          for (std::size_t i = 0; i < va2.size(); ++i)
            ga[i] += k * (va2[i] - vb2[i]);
        }
        if (needs_grad(b)) {
          auto& gb = nodes_[b.i].grad;
          for (std::size_t i = 0; i < va2.size(); ++i)
            gb[i] -= k * (va2[i] - vb2[i]);
        }
      });
    }
    return o;
  }

  // logits: [M, ...spatial], targets: one label in [0,M) per spatial site.
  // Mean over sites of -log softmax(logits)[target].
  Var cross_entropy(Var logits, const std::vector<int>& targets) {
    const Tensor& tl = val(logits);
    if (tl.ndim() < 2)
      raise_data("cross_entropy: logits must be [M, ...], got ",
                 shape_str(tl.shape));
    const int M = tl.dim(0);
    const std::size_t n = static_cast<std::size_t>(tl.numel() / M);
    if (targets.size() != n)
      raise_data("cross_entropy: ", targets.size(), " targets for ", n,
                 " sites");
    const int W = tl.ndim() == 3 ? tl.dim(2) : static_cast<int>(n);
    for (std::size_t p = 0; p < n; ++p)
      if (targets[p] < 0 || targets[p] >= M)
        raise_data("cross_entropy: label ", targets[p], " out of range [0,", M,
                   ") at pixel (", p / static_cast<std::size_t>(W), ",",
                   p % static_cast<std::size_t>(W), ")");

    // softmax probabilities cached for the backward pass
    std::vector<double> probs(tl.data.size());
    double loss = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      double mx = tl.data[p];
      for (int m = 1; m < M; ++m)
        mx = std::max(mx, tl.data[static_cast<std::size_t>(m) * n + p]);
      double z = 0.0;
      for (int m = 0; m < M; ++m) {
        const double e = std::exp(tl.data[static_cast<std::size_t>(m) * n + p] - mx);
        probs[static_cast<std::size_t>(m) * n + p] = e;
        z += e;
      }
      for (int m = 0; m < M; ++m) probs[static_cast<std::size_t>(m) * n + p] /= z;
      loss -= std::log(probs[static_cast<std::size_t>(targets[p]) * n + p]);
    }
    loss /= static_cast<double>(n);

    const bool needs = needs_grad(logits);
    Var o = push(Tensor::scalar(loss), needs, {});
    if (needs) {
      set_backward(o, [this, logits, o, M, n, targets, probs = std::move(probs)] {
        const double g = nodes_[o.i].grad[0] / static_cast<double>(n);
        auto& gl = nodes_[logits.i].grad;
        for (int m = 0; m < M; ++m) {
          const std::size_t off = static_cast<std::size_t>(m) * n;
          for (std::size_t p = 0; p < n; ++p) {
            const double ind = targets[p] == m ? 1.0 : 0.0;
            gl[off + p] += g * (probs[off + p] - ind);
          }
        }
      });
    }
    return o;
  }

  // Gram matrix of a feature map: G = F F^T / (H*W) with F = x as [C, H*W].
  Var gram(Var x) {
    const Tensor& tx = val(x);
    if (tx.ndim() != 3)
      raise_data("gram: input must be [C,H,W], got ", shape_str(tx.shape));
    const int C = tx.dim(0);
    const std::size_t hw = static_cast<std::size_t>(tx.dim(1)) * tx.dim(2);
    Tensor out({C, C});
    for (int a = 0; a < C; ++a) {
      const double* fa = tx.data.data() + a * hw;
      for (int b = a; b < C; ++b) {
        const double* fb = tx.data.data() + b * hw;
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += fa[i] * fb[i];
        acc /= static_cast<double>(hw);
        out.data[static_cast<std::size_t>(a) * C + b] = acc;
        out.data[static_cast<std::size_t>(b) * C + a] = acc;
      }
    }
    const bool needs = needs_grad(x);
    Var o = push(std::move(out), needs, {});
    if (needs) {
      set_backward(o, [this, x, o, C, hw] {
        const auto& g = nodes_[o.i].grad;
        const auto& f = nodes_[x.i].value.data;
        auto& gx = nodes_[x.i].grad;
        // dF = (G' + G'^T) F / (H*W)
        for (int a = 0; a < C; ++a) {
          double* gfa = gx.data() + a * hw;
          for (int b = 0; b < C; ++b) {
            const double w = (g[static_cast<std::size_t>(a) * C + b] +
                              g[static_cast<std::size_t>(b) * C + a]) /
                             static_cast<double>(hw);
            if (w == 0.0) continue;
            const double* fb = f.data() + b * hw;
            for (std::size_t i = 0; i < hw; ++i) gfa[i] += w * fb[i];
          }
        }
      });
    }
    return o;
  }

  // w: [O,I], x: [I,B], b: [O] -> [O,B]
  Var linear(Var w, Var x, Var b) {
    const Tensor& tw = val(w);
    const Tensor& tx = val(x);
    const Tensor& tb = val(b);
    if (tw.ndim() != 2 || tx.ndim() != 2 || tb.ndim() != 1 ||
        tw.dim(1) != tx.dim(0) || tb.dim(0) != tw.dim(0))
      raise_data("linear: incompatible shapes ", shape_str(tw.shape), " x ",
                 shape_str(tx.shape), " + ", shape_str(tb.shape));
    const int O = tw.dim(0), I = tw.dim(1), B = tx.dim(1);
    Tensor out({O, B});
    for (int o = 0; o < O; ++o) {
      double* yo = out.data.data() + static_cast<std::size_t>(o) * B;
      const double bo = tb.data[static_cast<std::size_t>(o)];
      for (int bb = 0; bb < B; ++bb) yo[bb] = bo;
      for (int i = 0; i < I; ++i) {
        const double wv = tw.data[static_cast<std::size_t>(o) * I + i];
        const double* xi = tx.data.data() + static_cast<std::size_t>(i) * B;
        for (int bb = 0; bb < B; ++bb) yo[bb] += wv * xi[bb];
      }
    }
    const bool needs = needs_grad(w) || needs_grad(x) || needs_grad(b);
    Var ov = push(std::move(out), needs, {});
    if (needs) {
      set_backward(ov, [this, w, x, b, ov, O, I, B] {
        const auto& g = nodes_[ov.i].grad;
        const auto& vw = nodes_[w.i].value.data;
        const auto& vx = nodes_[x.i].value.data;
        if (needs_grad(w)) {
          auto& gw = nodes_[w.i].grad;
          for (int o = 0; o < O; ++o)
            for (int i = 0; i < I; ++i) {
              const double* go = g.data() + static_cast<std::size_t>(o) * B;
              const double* xi = vx.data() + static_cast<std::size_t>(i) * B;
              double acc = 0.0;
              for (int bb = 0; bb < B; ++bb) acc += go[bb] * xi[bb];
              gw[static_cast<std::size_t>(o) * I + i] += acc;
            }
        }
        if (needs_grad(x)) {
          auto& gx = nodes_[x.i].grad;
          for (int i = 0; i < I; ++i) {
            double* gxi = gx.data() + static_cast<std::size_t>(i) * B;
            for (int o = 0; o < O; ++o) {
              const double wv = vw[static_cast<std::size_t>(o) * I + i];
              const double* go = g.data() + static_cast<std::size_t>(o) * B;
              for (int bb = 0; bb < B; ++bb) gxi[bb] += wv * go[bb];
            }
          }
        }
        if (needs_grad(b)) {
          auto& gb = nodes_[b.i].grad;
          for (int o = 0; o < O; ++o) {
            const double* go = g.data() + static_cast<std::size_t>(o) * B;
            double acc = 0.0;
            for (int bb = 0; bb < B; ++bb) acc += go[bb];
            gb[static_cast<std::size_t>(o)] += acc;
          }
        }
      });
    }
    return ov;
  }

  // Nearest-neighbour 2x upsample of [C,H,W].
  Var upsample_nearest2x(Var x) {
    const Tensor& tx = val(x);
    if (tx.ndim() != 3)
      raise_data("upsample_nearest2x: input must be [C,H,W], got ",
                 shape_str(tx.shape));
    const int C = tx.dim(0), H = tx.dim(1), W = tx.dim(2);
    Tensor out({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h) {
        const double* src = tx.data.data() + (static_cast<std::size_t>(c) * H + h) * W;
        double* d0 = out.data.data() +
                     (static_cast<std::size_t>(c) * 2 * H + 2 * h) * (2 * W);
        double* d1 = d0 + 2 * W;
        for (int w = 0; w < W; ++w) {
          d0[2 * w] = d0[2 * w + 1] = src[w];
          d1[2 * w] = d1[2 * w + 1] = src[w];
        }
      }
    const bool needs = needs_grad(x);
    Var o = push(std::move(out), needs, {});
    if (needs) {
      set_backward(o, [this, x, o, C, H, W] {
        const auto& g = nodes_[o.i].grad;
        auto& gx = nodes_[x.i].grad;
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h) {
            double* dst = gx.data() + (static_cast<std::size_t>(c) * H + h) * W;
            const double* g0 = g.data() +
                               (static_cast<std::size_t>(c) * 2 * H + 2 * h) * (2 * W);
            const double* g1 = g0 + 2 * W;
            for (int w = 0; w < W; ++w)
              dst[w] += g0[2 * w] + g0[2 * w + 1] + g1[2 * w] + g1[2 * w + 1];
          }
      });
    }
    return o;
  }

  // Runs reverse-mode accumulation from a scalar node.
  void backward(Var loss) {
    Node& top = nodes_[idx(loss)];
    if (top.value.numel() != 1)
      raise_data("backward: loss must be scalar, got ",
                 shape_str(top.value.shape));
    if (!top.needs_grad)
      raise_data("backward: loss does not depend on any grad-requiring leaf");
    top.grad[0] = 1.0;
    for (std::size_t i = nodes_.size(); i > 0; --i) {
      Node& n = nodes_[i - 1];
      if (n.needs_grad && n.back) n.back();
    }
  }

  std::size_t size() const { return nodes_.size(); }

private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool needs_grad = false;
    std::function<void()> back;
  };

  int idx(Var v) const {
    if (v.i < 0 || v.i >= static_cast<int>(nodes_.size()))
      raise_data("tape: invalid var");
    return v.i;
  }

  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.i)].needs_grad; }

  Var push(Tensor value, bool needs, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs;
    if (needs) n.grad.assign(n.value.data.size(), 0.0);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void set_backward(Var v, std::function<void()> back) {
    nodes_[static_cast<std::size_t>(v.i)].back = std::move(back);
  }

  void require_same_shape(Var a, Var b, const char* op) const {
    if (!val(a).same_shape(val(b)))
      raise_data(op, ": shape mismatch ", shape_str(val(a).shape), " vs ",
                 shape_str(val(b).shape));
  }

  Var binary_ew(Var a, Var b, const char* op, double bsign) {
    require_same_shape(a, b, op);
    const auto& va = val(a).data;
    const auto& vb = val(b).data;
    Tensor out(val(a).shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = va[i] + bsign * vb[i];
    const bool needs = needs_grad(a) || needs_grad(b);
    Var o = push(std::move(out), needs, {});
    if (needs) {
      set_backward(o, [this, a, b, o, bsign] {
        const auto& g = nodes_[o.i].grad;
        if (needs_grad(a)) {
          auto& ga = nodes_[a.i].grad;
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (needs_grad(b)) {
          auto& gb = nodes_[b.i].grad;
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += bsign * g[i];
        }
      });
    }
    return o;
  }

  static void channel_stats(const double* data, int C, std::size_t n, double eps,
                            double* mu, double* sigma) {
    for (int c = 0; c < C; ++c) {
      const double* src = data + c * n;
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += src[i];
      m /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = src[i] - m;
        var += d * d;
      }
      var /= static_cast<double>(n);
      mu[c] = m;
      sigma[c] = std::sqrt(var + eps);
    }
  }

  // Direct convolution; the inner loop runs over contiguous output rows so it
  // vectorizes. Accumulation order per output element is (ci, kh, kw).
  static void conv2d_forward(const double* __restrict__ x, int Ci, int H, int W,
                             const double* __restrict__ k, int Co, int kh,
                             int kw, int s, int p, double* __restrict__ y,
                             int Ho, int Wo) {
    for (int co = 0; co < Co; ++co) {
      double* yc = y + static_cast<std::size_t>(co) * Ho * Wo;
      for (int ci = 0; ci < Ci; ++ci) {
        const double* xc = x + static_cast<std::size_t>(ci) * H * W;
        const double* kc = k + (static_cast<std::size_t>(co) * Ci + ci) * kh * kw;
        for (int r = 0; r < kh; ++r)
          for (int c = 0; c < kw; ++c) {
            const double kv = kc[r * kw + c];
            for (int oh = 0; oh < Ho; ++oh) {
              const int ih = oh * s - p + r;
              if (ih < 0 || ih >= H) continue;
              const double* xrow = xc + static_cast<std::size_t>(ih) * W;
              double* yrow = yc + static_cast<std::size_t>(oh) * Wo;
              int lo = 0, hi = Wo;
              while (lo < hi && lo * s - p + c < 0) ++lo;
              while (hi > lo && (hi - 1) * s - p + c >= W) --hi;
              const double* xoff = xrow - p + c;
              if (s == 1) {
                for (int ow = lo; ow < hi; ++ow) yrow[ow] += kv * xoff[ow];
              } else {
                for (int ow = lo; ow < hi; ++ow) yrow[ow] += kv * xoff[ow * s];
              }
            }
          }
      }
    }
  }

  static void conv2d_backward_input(double* __restrict__ gx, int Ci, int H,
                                    int W, const double* __restrict__ k, int Co,
                                    int kh, int kw, int s, int p,
                                    const double* __restrict__ gy, int Ho,
                                    int Wo) {
    for (int co = 0; co < Co; ++co) {
      const double* gyc = gy + static_cast<std::size_t>(co) * Ho * Wo;
      for (int ci = 0; ci < Ci; ++ci) {
        double* gxc = gx + static_cast<std::size_t>(ci) * H * W;
        const double* kc = k + (static_cast<std::size_t>(co) * Ci + ci) * kh * kw;
        for (int r = 0; r < kh; ++r)
          for (int c = 0; c < kw; ++c) {
            const double kv = kc[r * kw + c];
            if (kv == 0.0) continue;
            for (int oh = 0; oh < Ho; ++oh) {
              const int ih = oh * s - p + r;
              if (ih < 0 || ih >= H) continue;
              double* gxrow = gxc + static_cast<std::size_t>(ih) * W;
              const double* gyrow = gyc + static_cast<std::size_t>(oh) * Wo;
              int lo = 0, hi = Wo;
              while (lo < hi && lo * s - p + c < 0) ++lo;
              while (hi > lo && (hi - 1) * s - p + c >= W) --hi;
              double* gxoff = gxrow - p + c;
              if (s == 1) {
                for (int ow = lo; ow < hi; ++ow) gxoff[ow] += kv * gyrow[ow];
              } else {
                for (int ow = lo; ow < hi; ++ow) gxoff[ow * s] += kv * gyrow[ow];
              }
            }
          }
      }
    }
  }

  static void conv2d_backward_kernel(const double* __restrict__ x, int Ci,
                                     int H, int W, double* __restrict__ gk,
                                     int Co, int kh, int kw, int s, int p,
                                     const double* __restrict__ gy, int Ho,
                                     int Wo) {
    for (int co = 0; co < Co; ++co) {
      const double* gyc = gy + static_cast<std::size_t>(co) * Ho * Wo;
      for (int ci = 0; ci < Ci; ++ci) {
        const double* xc = x + static_cast<std::size_t>(ci) * H * W;
        double* gkc = gk + (static_cast<std::size_t>(co) * Ci + ci) * kh * kw;
        for (int r = 0; r < kh; ++r)
          for (int c = 0; c < kw; ++c) {
            // four fixed-order partial sums so the reduction vectorizes
            double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
            for (int oh = 0; oh < Ho; ++oh) {
              const int ih = oh * s - p + r;
              if (ih < 0 || ih >= H) continue;
              const double* xrow = xc + static_cast<std::size_t>(ih) * W;
              const double* gyrow = gyc + static_cast<std::size_t>(oh) * Wo;
              int lo = 0, hi = Wo;
              while (lo < hi && lo * s - p + c < 0) ++lo;
              while (hi > lo && (hi - 1) * s - p + c >= W) --hi;
              const double* xoff = xrow - p + c;
              if (s == 1) {
                int ow = lo;
                for (; ow + 4 <= hi; ow += 4) {
                  a0 += xoff[ow] * gyrow[ow];
                  a1 += xoff[ow + 1] * gyrow[ow + 1];
                  a2 += xoff[ow + 2] * gyrow[ow + 2];
                  a3 += xoff[ow + 3] * gyrow[ow + 3];
                }
                for (; ow < hi; ++ow) a0 += xoff[ow] * gyrow[ow];
              } else {
                for (int ow = lo; ow < hi; ++ow) a0 += xoff[ow * s] * gyrow[ow];
              }
            }
            gkc[r * kw + c] += ((a0 + a1) + (a2 + a3));
          }
      }
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace cs2
