#include "codo/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace codo::nn {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

void GradSink::accumulate(int param_id, const Tensor& g) {
  auto& slot = grads_.at(static_cast<std::size_t>(param_id));
  if (slot.data.empty())
    slot = g;
  else
    slot.add_(g);
}

void GradSink::merge(const GradSink& other) {
  if (grads_.size() != other.grads_.size())
    throw std::invalid_argument("GradSink::merge: size mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (other.grads_[i].data.empty()) continue;
    if (grads_[i].data.empty())
      grads_[i] = other.grads_[i];
    else
      grads_[i].add_(other.grads_[i]);
  }
}

void GradSink::clear() {
  for (auto& g : grads_) g = Tensor{};
}

Tensor* GradSink::slot(int param_id) {
  auto& t = grads_.at(static_cast<std::size_t>(param_id));
  return t.data.empty() ? nullptr : &t;
}

const Tensor* GradSink::slot(int param_id) const {
  const auto& t = grads_.at(static_cast<std::size_t>(param_id));
  return t.data.empty() ? nullptr : &t;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var parameter(Tensor value, int param_id) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->param_id = param_id;
  return n;
}

namespace {

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(Node&, GradSink&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p->requires_grad) {
        n->requires_grad = true;
        break;
      }
    if (n->requires_grad) {
      n->parents = std::move(parents);
      n->backward_fn = std::move(fn);
    }
  }
  return n;
}

void add_grad(Node& parent, Tensor g, GradSink& sink) {
  if (!parent.requires_grad) return;
  if (parent.param_id >= 0) {
    sink.accumulate(parent.param_id, g);
    return;
  }
  if (parent.grad.data.empty())
    parent.grad = std::move(g);
  else
    parent.grad.add_(g);
}

}  // namespace

void backward(const Var& root, GradSink& sink) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  if (!root->requires_grad) return;

  std::vector<Node*> postorder;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node* p = f.n->parents[f.next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      postorder.push_back(f.n);
      stack.pop_back();
    }
  }

  root->grad = Tensor({1});
  root->grad(0) = 1.0;

  for (auto it = postorder.rbegin(); it != postorder.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.data.empty()) n->backward_fn(*n, sink);
  }
}

// --- conv2d -----------------------------------------------------------------

namespace {

void im2col(const Tensor& x, int k, int stride, int pad, int oh, int ow,
            Tensor& cols) {
  const int cin = static_cast<int>(x.dim(0));
  const int h = static_cast<int>(x.dim(1));
  const int w = static_cast<int>(x.dim(2));
  double* cp = cols.data.data();
  for (int c = 0; c < cin; ++c) {
    const double* xc = x.data.data() + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < ow; ++ox) *cp++ = 0.0;
            continue;
          }
          const double* row = xc + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            *cp++ = (ix < 0 || ix >= w) ? 0.0 : row[ix];
          }
        }
      }
    }
  }
}

void col2im(const Tensor& cols, int cin, int h, int w, int k, int stride,
            int pad, int oh, int ow, Tensor& dx) {
  const double* cp = cols.data.data();
  for (int c = 0; c < cin; ++c) {
    double* xc = dx.data.data() + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            cp += ow;
            continue;
          }
          double* row = xc + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) row[ix] += cp[ox];
          }
          cp += ow;
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int ksize, int stride,
           int pad) {
  const Tensor& xt = x->value;
  if (xt.rank() != 3) throw std::invalid_argument("conv2d: input must be CHW");
  const int cin = static_cast<int>(xt.dim(0));
  const int h = static_cast<int>(xt.dim(1));
  const int wd = static_cast<int>(xt.dim(2));
  const int cout = static_cast<int>(w->value.dim(0));
  if (w->value.dim(1) != static_cast<std::int64_t>(cin) * ksize * ksize)
    throw std::invalid_argument("conv2d: weight shape mismatch");
  const int oh = (h + 2 * pad - ksize) / stride + 1;
  const int ow = (wd + 2 * pad - ksize) / stride + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d: output too small");

  auto cols = std::make_shared<Tensor>(
      Tensor{{static_cast<std::int64_t>(cin) * ksize * ksize,
              static_cast<std::int64_t>(oh) * ow}});
  im2col(xt, ksize, stride, pad, oh, ow, *cols);

  Tensor y({cout, oh, ow});
  {
    CMapM wm(w->value.data.data(), cout, cin * ksize * ksize);
    CMapM cm(cols->data.data(), cin * ksize * ksize, oh * ow);
    MapM ym(y.data.data(), cout, oh * ow);
    ym.noalias() = wm * cm;
    for (int o = 0; o < cout; ++o) ym.row(o).array() += b->value(o);
  }

  const int cin_c = cin, h_c = h, w_c = wd, k_c = ksize, s_c = stride,
            p_c = pad, oh_c = oh, ow_c = ow, cout_c = cout;
  return make_op(std::move(y), {x, w, b},
                 [cols, cin_c, h_c, w_c, k_c, s_c, p_c, oh_c, ow_c,
                  cout_c](Node& self, GradSink& sink) {
                   const Tensor& gy = self.grad;
                   CMapM gym(gy.data.data(), cout_c, oh_c * ow_c);
                   Node& xn = *self.parents[0];
                   Node& wn = *self.parents[1];
                   Node& bn = *self.parents[2];
                   if (wn.requires_grad) {
                     Tensor gw({cout_c, static_cast<std::int64_t>(cin_c) * k_c * k_c});
                     MapM gwm(gw.data.data(), cout_c, cin_c * k_c * k_c);
                     CMapM cm(cols->data.data(), cin_c * k_c * k_c, oh_c * ow_c);
                     gwm.noalias() = gym * cm.transpose();
                     add_grad(wn, std::move(gw), sink);
                   }
                   if (bn.requires_grad) {
                     Tensor gb({cout_c});
                     for (int o = 0; o < cout_c; ++o) gb(o) = gym.row(o).sum();
                     add_grad(bn, std::move(gb), sink);
                   }
                   if (xn.requires_grad) {
                     Tensor gcols({static_cast<std::int64_t>(cin_c) * k_c * k_c,
                                   static_cast<std::int64_t>(oh_c) * ow_c});
                     MapM gcm(gcols.data.data(), cin_c * k_c * k_c, oh_c * ow_c);
                     CMapM wm(wn.value.data.data(), cout_c, cin_c * k_c * k_c);
                     gcm.noalias() = wm.transpose() * gym;
                     Tensor gx({cin_c, h_c, w_c});
                     col2im(gcols, cin_c, h_c, w_c, k_c, s_c, p_c, oh_c, ow_c, gx);
                     add_grad(xn, std::move(gx), sink);
                   }
                 });
}

// --- group_norm ---------------------------------------------------------------

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups,
               double eps) {
  const Tensor& xt = x->value;
  if (xt.rank() != 3) throw std::invalid_argument("group_norm: input must be CHW");
  const int c = static_cast<int>(xt.dim(0));
  const int hw = static_cast<int>(xt.dim(1) * xt.dim(2));
  if (c % groups != 0)
    throw std::invalid_argument("group_norm: channels not divisible by groups");
  const int cg = c / groups;
  const std::int64_t m = static_cast<std::int64_t>(cg) * hw;

  auto xhat = std::make_shared<Tensor>(xt);  // normalized values, same shape
  auto inv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(groups));
  Tensor y(xt.shape);

  for (int g = 0; g < groups; ++g) {
    double* xh = xhat->data.data() + static_cast<std::size_t>(g) * m;
    double mu = 0.0;
    for (std::int64_t i = 0; i < m; ++i) mu += xh[i];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
      const double d = xh[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(m);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[static_cast<std::size_t>(g)] = iv;
    for (std::int64_t i = 0; i < m; ++i) xh[i] = (xh[i] - mu) * iv;
  }
  for (int ch = 0; ch < c; ++ch) {
    const double ga = gamma->value(ch);
    const double be = beta->value(ch);
    const double* xh = xhat->data.data() + static_cast<std::size_t>(ch) * hw;
    double* yp = y.data.data() + static_cast<std::size_t>(ch) * hw;
    for (int i = 0; i < hw; ++i) yp[i] = ga * xh[i] + be;
  }

  const int c_c = c, hw_c = hw, cg_c = cg, groups_c = groups;
  return make_op(
      std::move(y), {x, gamma, beta},
      [xhat, inv, c_c, hw_c, cg_c, groups_c](Node& self, GradSink& sink) {
        const Tensor& gy = self.grad;
        Node& xn = *self.parents[0];
        Node& gn = *self.parents[1];
        Node& bn = *self.parents[2];
        if (gn.requires_grad) {
          Tensor gg({c_c});
          for (int ch = 0; ch < c_c; ++ch) {
            const double* xh = xhat->data.data() + static_cast<std::size_t>(ch) * hw_c;
            const double* gp = gy.data.data() + static_cast<std::size_t>(ch) * hw_c;
            double s = 0.0;
            for (int i = 0; i < hw_c; ++i) s += gp[i] * xh[i];
            gg(ch) = s;
          }
          add_grad(gn, std::move(gg), sink);
        }
        if (bn.requires_grad) {
          Tensor gb({c_c});
          for (int ch = 0; ch < c_c; ++ch) {
            const double* gp = gy.data.data() + static_cast<std::size_t>(ch) * hw_c;
            double s = 0.0;
            for (int i = 0; i < hw_c; ++i) s += gp[i];
            gb(ch) = s;
          }
          add_grad(bn, std::move(gb), sink);
        }
        if (xn.requires_grad) {
          Tensor gx(xn.value.shape);
          const std::int64_t m = static_cast<std::int64_t>(cg_c) * hw_c;
          for (int g = 0; g < groups_c; ++g) {
            const double iv = (*inv)[static_cast<std::size_t>(g)];
            // dxhat = gy * gamma(per channel)
            double s1 = 0.0, s2 = 0.0;
            for (int lc = 0; lc < cg_c; ++lc) {
              const int ch = g * cg_c + lc;
              const double ga = gn.value(ch);
              const double* gp = gy.data.data() + static_cast<std::size_t>(ch) * hw_c;
              const double* xh = xhat->data.data() + static_cast<std::size_t>(ch) * hw_c;
              for (int i = 0; i < hw_c; ++i) {
                const double dxh = gp[i] * ga;
                s1 += dxh;
                s2 += dxh * xh[i];
              }
            }
            const double mean1 = s1 / static_cast<double>(m);
            const double mean2 = s2 / static_cast<double>(m);
            for (int lc = 0; lc < cg_c; ++lc) {
              const int ch = g * cg_c + lc;
              const double ga = gn.value(ch);
              const double* gp = gy.data.data() + static_cast<std::size_t>(ch) * hw_c;
              const double* xh = xhat->data.data() + static_cast<std::size_t>(ch) * hw_c;
              double* gxp = gx.data.data() + static_cast<std::size_t>(ch) * hw_c;
              for (int i = 0; i < hw_c; ++i)
                gxp[i] = iv * (gp[i] * ga - mean1 - xh[i] * mean2);
            }
          }
          add_grad(xn, std::move(gx), sink);
        }
      });
}

// --- pointwise and shape ops ---------------------------------------------------

Var relu(const Var& x) {
  Tensor y = x->value;
  for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
  return make_op(std::move(y), {x}, [](Node& self, GradSink& sink) {
    Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    Tensor gx = self.grad;
    for (std::size_t i = 0; i < gx.data.size(); ++i)
      if (self.value.data[i] <= 0.0) gx.data[i] = 0.0;
    add_grad(xn, std::move(gx), sink);
  });
}

Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("add: shape mismatch");
  Tensor y = a->value;
  y.add_(b->value);
  return make_op(std::move(y), {a, b}, [](Node& self, GradSink& sink) {
    add_grad(*self.parents[0], self.grad, sink);
    add_grad(*self.parents[1], self.grad, sink);
  });
}

Var upsample_nearest2x(const Var& x) {
  const Tensor& xt = x->value;
  const int c = static_cast<int>(xt.dim(0));
  const int h = static_cast<int>(xt.dim(1));
  const int w = static_cast<int>(xt.dim(2));
  Tensor y({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int yy = 0; yy < 2 * h; ++yy) {
      const double* src = &xt(ch, yy / 2, 0);
      double* dst = &y(ch, yy, 0);
      for (int xx = 0; xx < 2 * w; ++xx) dst[xx] = src[xx / 2];
    }
  const int c_c = c, h_c = h, w_c = w;
  return make_op(std::move(y), {x}, [c_c, h_c, w_c](Node& self, GradSink& sink) {
    Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    Tensor gx({c_c, h_c, w_c});
    for (int ch = 0; ch < c_c; ++ch)
      for (int yy = 0; yy < 2 * h_c; ++yy) {
        const double* gp = &self.grad(ch, yy, 0);
        double* gxp = &gx(ch, yy / 2, 0);
        for (int xx = 0; xx < 2 * w_c; ++xx) gxp[xx / 2] += gp[xx];
      }
    add_grad(xn, std::move(gx), sink);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const int in = static_cast<int>(x->value.numel());
  const int out = static_cast<int>(w->value.dim(0));
  if (w->value.dim(1) != in)
    throw std::invalid_argument("linear: weight shape mismatch");
  Tensor y({out});
  {
    CMapM wm(w->value.data.data(), out, in);
    CMapV xv(x->value.data.data(), in);
    MapV yv(y.data.data(), out);
    yv.noalias() = wm * xv;
    yv += CMapV(b->value.data.data(), out);
  }
  const int in_c = in, out_c = out;
  return make_op(std::move(y), {x, w, b}, [in_c, out_c](Node& self, GradSink& sink) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    CMapV gyv(self.grad.data.data(), out_c);
    if (wn.requires_grad) {
      Tensor gw({out_c, in_c});
      MapM gwm(gw.data.data(), out_c, in_c);
      CMapV xv(xn.value.data.data(), in_c);
      gwm.noalias() = gyv * xv.transpose();
      add_grad(wn, std::move(gw), sink);
    }
    if (bn.requires_grad) add_grad(bn, self.grad, sink);
    if (xn.requires_grad) {
      Tensor gx(xn.value.shape);
      MapV gxv(gx.data.data(), in_c);
      CMapM wm(wn.value.data.data(), out_c, in_c);
      gxv.noalias() = wm.transpose() * gyv;
      add_grad(xn, std::move(gx), sink);
    }
  });
}

Var flatten(const Var& x) {
  Tensor y = x->value;
  y.shape = {y.numel()};
  return make_op(std::move(y), {x}, [](Node& self, GradSink& sink) {
    Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    Tensor gx = self.grad;
    gx.shape = xn.value.shape;
    add_grad(xn, std::move(gx), sink);
  });
}

Var reshape(const Var& x, std::vector<std::int64_t> shape) {
  Tensor y = x->value;
  y.shape = std::move(shape);
  if (y.numel() != x->value.numel())
    throw std::invalid_argument("reshape changes element count");
  return make_op(std::move(y), {x}, [](Node& self, GradSink& sink) {
    Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    Tensor gx = self.grad;
    gx.shape = xn.value.shape;
    add_grad(xn, std::move(gx), sink);
  });
}

Var l2_normalize(const Var& x, double eps) {
  const double n = x->value.norm2();
  const double denom = std::max(n, eps);
  Tensor y = x->value;
  y.scale_(1.0 / denom);
  auto ycopy = std::make_shared<Tensor>(y);
  return make_op(std::move(y), {x}, [ycopy, denom](Node& self, GradSink& sink) {
    Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const Tensor& gy = self.grad;
    const double proj = ycopy->dot(gy);
    Tensor gx = gy;
    gx.axpy_(-proj, *ycopy);
    gx.scale_(1.0 / denom);
    add_grad(xn, std::move(gx), sink);
  });
}

// --- roi_align -----------------------------------------------------------------

namespace {

struct RoiSample {
  int idx[4];
  double w[4];
};

void bilinear_weights(double px, double py, int w, int h, RoiSample& s) {
  double u = px - 0.5;
  double v = py - 0.5;
  if (u < -1.0 || u > w || v < -1.0 || v > h) {
    s.idx[0] = s.idx[1] = s.idx[2] = s.idx[3] = 0;
    s.w[0] = s.w[1] = s.w[2] = s.w[3] = 0.0;
    return;
  }
  u = std::clamp(u, 0.0, static_cast<double>(w - 1));
  v = std::clamp(v, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(u);
  const int y0 = static_cast<int>(v);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double lx = u - x0;
  const double ly = v - y0;
  s.idx[0] = y0 * w + x0;
  s.idx[1] = y0 * w + x1;
  s.idx[2] = y1 * w + x0;
  s.idx[3] = y1 * w + x1;
  s.w[0] = (1.0 - ly) * (1.0 - lx);
  s.w[1] = (1.0 - ly) * lx;
  s.w[2] = ly * (1.0 - lx);
  s.w[3] = ly * lx;
}

}  // namespace

Var roi_align(const Var& fmap, const BoundingBox& box, double stride,
              int out_size) {
  const Tensor& ft = fmap->value;
  if (ft.rank() != 3) throw std::invalid_argument("roi_align: map must be CHW");
  if (!box.valid()) throw std::invalid_argument("roi_align: degenerate box");
  const int c = static_cast<int>(ft.dim(0));
  const int h = static_cast<int>(ft.dim(1));
  const int w = static_cast<int>(ft.dim(2));
  const double bx0 = box.x0 / stride;
  const double by0 = box.y0 / stride;
  const double bw = (box.x1 - box.x0) / stride;
  const double bh = (box.y1 - box.y0) / stride;
  if (!(bw > 0.0) || !(bh > 0.0))
    throw std::invalid_argument("roi_align: zero area after stride scaling");
  const double bin_w = bw / out_size;
  const double bin_h = bh / out_size;

  // 2x2 regular samples per bin; weights shared across channels
  const int n_bins = out_size * out_size;
  auto samples = std::make_shared<std::vector<RoiSample>>(
      static_cast<std::size_t>(n_bins) * 4);
  for (int by = 0; by < out_size; ++by)
    for (int bx = 0; bx < out_size; ++bx)
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double py = by0 + (by + (sy + 0.5) / 2.0) * bin_h;
          const double px = bx0 + (bx + (sx + 0.5) / 2.0) * bin_w;
          bilinear_weights(
              px, py, w, h,
              (*samples)[static_cast<std::size_t>((by * out_size + bx) * 4 + sy * 2 + sx)]);
        }

  Tensor y({c, out_size, out_size});
  for (int ch = 0; ch < c; ++ch) {
    const double* fp = ft.data.data() + static_cast<std::size_t>(ch) * h * w;
    double* yp = y.data.data() + static_cast<std::size_t>(ch) * n_bins;
    for (int bin = 0; bin < n_bins; ++bin) {
      double acc = 0.0;
      for (int s = 0; s < 4; ++s) {
        const RoiSample& sm = (*samples)[static_cast<std::size_t>(bin * 4 + s)];
        acc += sm.w[0] * fp[sm.idx[0]] + sm.w[1] * fp[sm.idx[1]] +
               sm.w[2] * fp[sm.idx[2]] + sm.w[3] * fp[sm.idx[3]];
      }
      yp[bin] = acc / 4.0;
    }
  }

  const int c_c = c, h_c = h, w_c = w, nb = n_bins;
  return make_op(std::move(y), {fmap}, [samples, c_c, h_c, w_c, nb](Node& self,
                                                                     GradSink& sink) {
    Node& fn = *self.parents[0];
    if (!fn.requires_grad) return;
    Tensor gf({c_c, h_c, w_c});
    for (int ch = 0; ch < c_c; ++ch) {
      double* gp = gf.data.data() + static_cast<std::size_t>(ch) * h_c * w_c;
      const double* gyp = self.grad.data.data() + static_cast<std::size_t>(ch) * nb;
      for (int bin = 0; bin < nb; ++bin) {
        const double g = gyp[bin] / 4.0;
        for (int s = 0; s < 4; ++s) {
          const RoiSample& sm = (*samples)[static_cast<std::size_t>(bin * 4 + s)];
          gp[sm.idx[0]] += g * sm.w[0];
          gp[sm.idx[1]] += g * sm.w[1];
          gp[sm.idx[2]] += g * sm.w[2];
          gp[sm.idx[3]] += g * sm.w[3];
        }
      }
    }
    add_grad(fn, std::move(gf), sink);
  });
}

// --- contrastive loss ------------------------------------------------------------

Var info_nce_loss(const Var& q, const Tensor& k_pos, const double* negatives,
                  int n_neg, double tau) {
  const int d = static_cast<int>(q->value.numel());
  if (k_pos.numel() != d)
    throw std::invalid_argument("info_nce: dimension mismatch");
  if (tau <= 0.0) throw std::invalid_argument("info_nce: tau must be positive");

  const double* qp = q->value.data.data();
  auto logits = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(n_neg) + 1);
  {
    CMapV qv(qp, d);
    (*logits)[0] = qv.dot(CMapV(k_pos.data.data(), d)) / tau;
    if (n_neg > 0) {
      CMapM nm(negatives, n_neg, d);
      Eigen::VectorXd dots = nm * qv;
      for (int i = 0; i < n_neg; ++i)
        (*logits)[static_cast<std::size_t>(i) + 1] = dots(i) / tau;
    }
  }
  double mx = (*logits)[0];
  for (double v : *logits) mx = std::max(mx, v);
  double z = 0.0;
  for (auto& v : *logits) {
    v = std::exp(v - mx);  // reuse as softmax numerators
    z += v;
  }
  const double loss = -std::log((*logits)[0] / z);
  for (auto& v : *logits) v /= z;  // now probabilities

  Tensor out({1});
  out(0) = loss;
  auto kcopy = std::make_shared<Tensor>(k_pos);
  return make_op(std::move(out), {q},
                 [logits, kcopy, negatives, n_neg, tau, d](Node& self,
                                                           GradSink& sink) {
                   Node& qn = *self.parents[0];
                   if (!qn.requires_grad) return;
                   const double g = self.grad(0);
                   Tensor gq({d});
                   MapV gv(gq.data.data(), d);
                   const double p0 = (*logits)[0];
                   gv = (p0 - 1.0) * CMapV(kcopy->data.data(), d);
                   if (n_neg > 0) {
                     CMapM nm(negatives, n_neg, d);
                     Eigen::VectorXd pv(n_neg);
                     for (int i = 0; i < n_neg; ++i)
                       pv(i) = (*logits)[static_cast<std::size_t>(i) + 1];
                     gv.noalias() += nm.transpose() * pv;
                   }
                   gv *= g / tau;
                   add_grad(qn, std::move(gq), sink);
                 });
}

Var weighted_sum(const std::vector<Var>& terms,
                 const std::vector<double>& weights) {
  if (terms.empty() || terms.size() != weights.size())
    throw std::invalid_argument("weighted_sum: bad arity");
  Tensor y({1});
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i]->value.numel() != 1)
      throw std::invalid_argument("weighted_sum: terms must be scalar");
    y(0) += weights[i] * terms[i]->value(0);
  }
  auto wcopy = std::make_shared<std::vector<double>>(weights);
  return make_op(std::move(y), terms, [wcopy](Node& self, GradSink& sink) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Tensor g({1});
      g(0) = self.grad(0) * (*wcopy)[i];
      add_grad(*self.parents[i], std::move(g), sink);
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor y = x->value;
  y.scale_(factor);
  return make_op(std::move(y), {x}, [factor](Node& self, GradSink& sink) {
    Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    Tensor gx = self.grad;
    gx.scale_(factor);
    add_grad(xn, std::move(gx), sink);
  });
}

}  // namespace codo::nn
