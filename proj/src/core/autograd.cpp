#include "core/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace mvi::nn {

namespace {

bool g_grad_enabled = true;

constexpr double kNormEps = 1e-5;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(VarNode&)> fn) {
  auto n = std::make_shared<VarNode>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool track = false;
    for (const auto& p : parents) track = track || p->track;
    if (track) {
      n->track = true;
      n->parents = std::move(parents);
      n->backward_fn = std::move(fn);
    }
  }
  return n;
}

void accum_flat(VarNode& p, const double* g) {
  Tensor& grad = p.ensure_grad();
  const int64_t n = grad.numel();
  double* dst = grad.data();
  for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  require_arg(a->value.same_shape(b->value),
              std::string(op) + ": shape mismatch " + a->value.shape_str() + " vs " +
                  b->value.shape_str());
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var constant(Tensor value) {
  auto n = std::make_shared<VarNode>();
  n->value = std::move(value);
  return n;
}

Var make_param(Tensor value) {
  auto n = std::make_shared<VarNode>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->track = true;
  return n;
}

void backward(const Var& root) {
  require_arg(root->value.numel() == 1, "backward: root must be scalar");
  if (!root->track) return;

  std::vector<VarNode*> order;
  std::unordered_set<VarNode*> visited;
  struct Frame {
    VarNode* node;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      VarNode* p = f.node->parents[f.next++].get();
      if (p->track && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad().fill_(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    VarNode* n = *it;
    if (n->backward_fn && n->grad_alloc) n->backward_fn(*n);
  }
}

// --- elementwise ---------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value.clone();
  out.add_(b->value);
  return make_node(std::move(out), {a, b}, [a, b](VarNode& n) {
    accum_flat(*a, n.grad.data());
    accum_flat(*b, n.grad.data());
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value.clone();
  for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] -= b->value.data()[i];
  return make_node(std::move(out), {a, b}, [a, b](VarNode& n) {
    accum_flat(*a, n.grad.data());
    Tensor& gb = b->ensure_grad();
    for (int64_t i = 0; i < gb.numel(); ++i) gb.data()[i] -= n.grad.data()[i];
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a->value.data()[i] * b->value.data()[i];
  return make_node(std::move(out), {a, b}, [a, b](VarNode& n) {
    Tensor& ga = a->ensure_grad();
    Tensor& gb = b->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) {
      ga.data()[i] += n.grad.data()[i] * b->value.data()[i];
      gb.data()[i] += n.grad.data()[i] * a->value.data()[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a->value.data()[i] * s;
  return make_node(std::move(out), {a}, [a, s](VarNode& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) ga.data()[i] += n.grad.data()[i] * s;
  });
}

Var mul_const(const Var& a, const Tensor& c) {
  require_arg(a->value.numel() == c.numel(), "mul_const: size mismatch");
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a->value.data()[i] * c.data()[i];
  return make_node(std::move(out), {a}, [a, c](VarNode& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) ga.data()[i] += n.grad.data()[i] * c.data()[i];
  });
}

// --- shape ops -----------------------------------------------------------

Var reshape(const Var& x, std::vector<int> shape) {
  Tensor out = x->value.reshaped(std::move(shape));
  return make_node(std::move(out), {x}, [x](VarNode& n) { accum_flat(*x, n.grad.data()); });
}

Var permute_102(const Var& x) {
  require_arg(x->value.ndim() == 3, "permute_102 expects rank 3");
  const int A = x->value.dim(0), B = x->value.dim(1), C = x->value.dim(2);
  Tensor out({B, A, C});
  for (int a = 0; a < A; ++a)
    for (int b = 0; b < B; ++b)
      for (int c2 = 0; c2 < C; ++c2)
        out.data()[(int64_t(b) * A + a) * C + c2] = x->value.data()[(int64_t(a) * B + b) * C + c2];
  return make_node(std::move(out), {x}, [x, A, B, C](VarNode& n) {
    Tensor& gx = x->ensure_grad();
    for (int a = 0; a < A; ++a)
      for (int b = 0; b < B; ++b)
        for (int c2 = 0; c2 < C; ++c2)
          gx.data()[(int64_t(a) * B + b) * C + c2] += n.grad.data()[(int64_t(b) * A + a) * C + c2];
  });
}

Var select_frame(const Var& x, int f) {
  require_arg(x->value.ndim() >= 1 && f >= 0 && f < x->value.dim(0), "select_frame: bad index");
  std::vector<int> shape(x->value.shape().begin() + 1, x->value.shape().end());
  if (shape.empty()) shape = {1};
  const int64_t stride = Tensor::count(shape);
  Tensor out(shape);
  std::copy(x->value.data() + f * stride, x->value.data() + (f + 1) * stride, out.data());
  return make_node(std::move(out), {x}, [x, f, stride](VarNode& n) {
    Tensor& gx = x->ensure_grad();
    double* dst = gx.data() + f * stride;
    for (int64_t i = 0; i < stride; ++i) dst[i] += n.grad.data()[i];
  });
}

Var stack_frames(const std::vector<Var>& xs) {
  require_arg(!xs.empty(), "stack_frames: empty input");
  const auto& base = xs[0]->value.shape();
  for (const auto& v : xs)
    require_arg(v->value.shape() == base, "stack_frames: inconsistent shapes");
  std::vector<int> shape;
  shape.push_back(int(xs.size()));
  shape.insert(shape.end(), base.begin(), base.end());
  const int64_t stride = xs[0]->value.numel();
  Tensor out(shape);
  for (size_t f = 0; f < xs.size(); ++f)
    std::copy(xs[f]->value.data(), xs[f]->value.data() + stride, out.data() + int64_t(f) * stride);
  return make_node(std::move(out), {xs.begin(), xs.end()}, [stride](VarNode& n) {
    for (size_t f = 0; f < n.parents.size(); ++f) {
      Tensor& g = n.parents[f]->ensure_grad();
      const double* src = n.grad.data() + int64_t(f) * stride;
      for (int64_t i = 0; i < stride; ++i) g.data()[i] += src[i];
    }
  });
}

Var concat_axis0(const Var& a, const Var& b) {
  require_arg(a->value.ndim() == b->value.ndim(), "concat_axis0: rank mismatch");
  for (int i = 1; i < a->value.ndim(); ++i)
    require_arg(a->value.dim(i) == b->value.dim(i), "concat_axis0: trailing shape mismatch");
  std::vector<int> shape = a->value.shape();
  shape[0] += b->value.dim(0);
  Tensor out(shape);
  std::copy(a->value.data(), a->value.data() + a->value.numel(), out.data());
  std::copy(b->value.data(), b->value.data() + b->value.numel(),
            out.data() + a->value.numel());
  const int64_t na = a->value.numel();
  return make_node(std::move(out), {a, b}, [a, b, na](VarNode& n) {
    accum_flat(*a, n.grad.data());
    Tensor& gb = b->ensure_grad();
    const double* src = n.grad.data() + na;
    for (int64_t i = 0; i < gb.numel(); ++i) gb.data()[i] += src[i];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_arg(a->value.ndim() == 4 && b->value.ndim() == 4, "concat_channels: rank must be 4");
  const int f = a->value.dim(0), ca = a->value.dim(1), h = a->value.dim(2), w = a->value.dim(3);
  const int cb = b->value.dim(1);
  require_arg(b->value.dim(0) == f && b->value.dim(2) == h && b->value.dim(3) == w,
              "concat_channels: frame/spatial shape mismatch");
  const int64_t hw = int64_t(h) * w;
  Tensor out({f, ca + cb, h, w});
  for (int fr = 0; fr < f; ++fr) {
    std::copy(a->value.data() + int64_t(fr) * ca * hw, a->value.data() + int64_t(fr + 1) * ca * hw,
              out.data() + int64_t(fr) * (ca + cb) * hw);
    std::copy(b->value.data() + int64_t(fr) * cb * hw, b->value.data() + int64_t(fr + 1) * cb * hw,
              out.data() + int64_t(fr) * (ca + cb) * hw + ca * hw);
  }
  return make_node(std::move(out), {a, b}, [a, b, f, ca, cb, hw](VarNode& n) {
    Tensor& ga = a->ensure_grad();
    Tensor& gb = b->ensure_grad();
    for (int fr = 0; fr < f; ++fr) {
      const double* src = n.grad.data() + int64_t(fr) * (ca + cb) * hw;
      double* da = ga.data() + int64_t(fr) * ca * hw;
      double* db = gb.data() + int64_t(fr) * cb * hw;
      for (int64_t i = 0; i < ca * hw; ++i) da[i] += src[i];
      for (int64_t i = 0; i < cb * hw; ++i) db[i] += src[ca * hw + i];
    }
  });
}

Var split_heads(const Var& x, int heads) {
  require_arg(x->value.ndim() == 3, "split_heads: rank must be 3");
  const int b = x->value.dim(0), l = x->value.dim(1), d = x->value.dim(2);
  require_arg(heads >= 1 && d % heads == 0, "split_heads: heads must divide the model width");
  const int dh = d / heads;
  Tensor out({b * heads, l, dh});
  for (int bi = 0; bi < b; ++bi)
    for (int g = 0; g < heads; ++g)
      for (int li = 0; li < l; ++li)
        std::copy(x->value.data() + (int64_t(bi) * l + li) * d + int64_t(g) * dh,
                  x->value.data() + (int64_t(bi) * l + li) * d + int64_t(g + 1) * dh,
                  out.data() + ((int64_t(bi) * heads + g) * l + li) * dh);
  return make_node(std::move(out), {x}, [x, b, l, d, heads, dh](VarNode& n) {
    Tensor& gx = x->ensure_grad();
    for (int bi = 0; bi < b; ++bi)
      for (int g = 0; g < heads; ++g)
        for (int li = 0; li < l; ++li) {
          const double* src = n.grad.data() + ((int64_t(bi) * heads + g) * l + li) * dh;
          double* dst = gx.data() + (int64_t(bi) * l + li) * d + int64_t(g) * dh;
          for (int i = 0; i < dh; ++i) dst[i] += src[i];
        }
  });
}

Var merge_heads(const Var& x, int heads) {
  require_arg(x->value.ndim() == 3, "merge_heads: rank must be 3");
  const int bh = x->value.dim(0), l = x->value.dim(1), dh = x->value.dim(2);
  require_arg(heads >= 1 && bh % heads == 0, "merge_heads: heads must divide the batch");
  const int b = bh / heads;
  const int d = dh * heads;
  Tensor out({b, l, d});
  for (int bi = 0; bi < b; ++bi)
    for (int g = 0; g < heads; ++g)
      for (int li = 0; li < l; ++li)
        std::copy(x->value.data() + ((int64_t(bi) * heads + g) * l + li) * dh,
                  x->value.data() + ((int64_t(bi) * heads + g) * l + li + 1) * dh,
                  out.data() + (int64_t(bi) * l + li) * d + int64_t(g) * dh);
  return make_node(std::move(out), {x}, [x, b, l, d, heads, dh](VarNode& n) {
    Tensor& gx = x->ensure_grad();
    for (int bi = 0; bi < b; ++bi)
      for (int g = 0; g < heads; ++g)
        for (int li = 0; li < l; ++li) {
          const double* src = n.grad.data() + (int64_t(bi) * l + li) * d + int64_t(g) * dh;
          double* dst = gx.data() + ((int64_t(bi) * heads + g) * l + li) * dh;
          for (int i = 0; i < dh; ++i) dst[i] += src[i];
        }
  });
}

Var nchw_to_tokens(const Var& x) {
  require_arg(x->value.ndim() == 4, "nchw_to_tokens: rank must be 4");
  const int f = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  const int64_t hw = int64_t(h) * w;
  Tensor out({f, h * w, c});
  for (int fr = 0; fr < f; ++fr)
    for (int ci = 0; ci < c; ++ci)
      for (int64_t p = 0; p < hw; ++p)
        out.data()[(int64_t(fr) * hw + p) * c + ci] =
            x->value.data()[(int64_t(fr) * c + ci) * hw + p];
  return make_node(std::move(out), {x}, [x, f, c, hw](VarNode& n) {
    Tensor& gx = x->ensure_grad();
    for (int fr = 0; fr < f; ++fr)
      for (int ci = 0; ci < c; ++ci)
        for (int64_t p = 0; p < hw; ++p)
          gx.data()[(int64_t(fr) * c + ci) * hw + p] +=
              n.grad.data()[(int64_t(fr) * hw + p) * c + ci];
  });
}

Var tokens_to_nchw(const Var& x, int h, int w) {
  require_arg(x->value.ndim() == 3, "tokens_to_nchw: rank must be 3");
  const int f = x->value.dim(0), l = x->value.dim(1), c = x->value.dim(2);
  require_arg(l == h * w, "tokens_to_nchw: token count must equal h*w");
  const int64_t hw = int64_t(h) * w;
  Tensor out({f, c, h, w});
  for (int fr = 0; fr < f; ++fr)
    for (int ci = 0; ci < c; ++ci)
      for (int64_t p = 0; p < hw; ++p)
        out.data()[(int64_t(fr) * c + ci) * hw + p] =
            x->value.data()[(int64_t(fr) * hw + p) * c + ci];
  return make_node(std::move(out), {x}, [x, f, c, hw](VarNode& n) {
    Tensor& gx = x->ensure_grad();
    for (int fr = 0; fr < f; ++fr)
      for (int ci = 0; ci < c; ++ci)
        for (int64_t p = 0; p < hw; ++p)
          gx.data()[(int64_t(fr) * hw + p) * c + ci] +=
              n.grad.data()[(int64_t(fr) * c + ci) * hw + p];
  });
}

// --- dense linear algebra ------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_arg(a->value.ndim() == 2 && b->value.ndim() == 2, "matmul expects rank 2");
  const int m = a->value.dim(0), k = a->value.dim(1), n2 = b->value.dim(1);
  require_arg(b->value.dim(0) == k, "matmul: inner dim mismatch");
  Tensor out({m, n2});
  out.mat(m, n2).noalias() = a->value.mat(m, k) * b->value.mat(k, n2);
  return make_node(std::move(out), {a, b}, [a, b, m, k, n2](VarNode& n) {
    ECMap g(n.grad.data(), m, n2);
    a->ensure_grad().mat(m, k).noalias() += g * b->value.mat(k, n2).transpose();
    b->ensure_grad().mat(k, n2).noalias() += a->value.mat(m, k).transpose() * g;
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require_arg(x->value.ndim() >= 2 && w->value.ndim() == 2, "linear: bad ranks");
  const int cin = x->value.dim(x->value.ndim() - 1);
  const int rows = int(x->value.numel() / cin);
  const int cout = w->value.dim(0);
  require_arg(w->value.dim(1) == cin, "linear: weight/input dim mismatch");
  require_arg(b->value.numel() == cout, "linear: bias dim mismatch");
  std::vector<int> out_shape = x->value.shape();
  out_shape.back() = cout;
  Tensor out(out_shape);
  out.mat(rows, cout).noalias() = x->value.mat(rows, cin) * w->value.mat(cout, cin).transpose();
  {
    EMap om = out.mat(rows, cout);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cout; ++c) om(r, c) += b->value.data()[c];
  }
  return make_node(std::move(out), {x, w, b}, [x, w, b, rows, cin, cout](VarNode& n) {
    ECMap g(n.grad.data(), rows, cout);
    x->ensure_grad().mat(rows, cin).noalias() += g * w->value.mat(cout, cin);
    w->ensure_grad().mat(cout, cin).noalias() += g.transpose() * x->value.mat(rows, cin);
    Tensor& gb = b->ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cout; ++c) gb.data()[c] += g(r, c);
  });
}

Var linear_nobias(const Var& x, const Var& w) {
  require_arg(x->value.ndim() >= 2 && w->value.ndim() == 2, "linear_nobias: bad ranks");
  const int cin = x->value.dim(x->value.ndim() - 1);
  const int rows = int(x->value.numel() / cin);
  const int cout = w->value.dim(0);
  require_arg(w->value.dim(1) == cin, "linear_nobias: dim mismatch");
  std::vector<int> out_shape = x->value.shape();
  out_shape.back() = cout;
  Tensor out(out_shape);
  out.mat(rows, cout).noalias() = x->value.mat(rows, cin) * w->value.mat(cout, cin).transpose();
  return make_node(std::move(out), {x, w}, [x, w, rows, cin, cout](VarNode& n) {
    ECMap g(n.grad.data(), rows, cout);
    x->ensure_grad().mat(rows, cin).noalias() += g * w->value.mat(cout, cin);
    w->ensure_grad().mat(cout, cin).noalias() += g.transpose() * x->value.mat(rows, cin);
  });
}

// --- convolution ---------------------------------------------------------

namespace {

void im2col(const double* x, int ci, int h, int w, int kh, int kw, int stride, int pad, int ho,
            int wo, double* col) {
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        double* row = col + (int64_t(c) * kh * kw + ky * kw + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? x[(int64_t(c) * h + iy) * w + ix]
                                    : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int ci, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo, double* x) {
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const double* row = col + (int64_t(c) * kh * kw + ky * kw + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= w) continue;
            x[(int64_t(c) * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require_arg(x->value.ndim() == 4 && w->value.ndim() == 4, "conv2d: bad ranks");
  const int f = x->value.dim(0), ci = x->value.dim(1), h = x->value.dim(2), wd = x->value.dim(3);
  const int co = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  require_arg(w->value.dim(1) == ci, "conv2d: channel mismatch");
  require_arg(b->value.numel() == co, "conv2d: bias mismatch");
  require_arg(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  require_arg(ho >= 1 && wo >= 1, "conv2d: output collapses to zero");

  const int krows = ci * kh * kw;
  Tensor out({f, co, ho, wo});
  std::vector<double> col(size_t(krows) * ho * wo);
  ECMap wm(w->value.data(), co, krows);
  for (int fi = 0; fi < f; ++fi) {
    im2col(x->value.data() + int64_t(fi) * ci * h * wd, ci, h, wd, kh, kw, stride, pad, ho, wo,
           col.data());
    EMap om(out.data() + int64_t(fi) * co * ho * wo, co, ho * wo);
    om.noalias() = wm * ECMap(col.data(), krows, ho * wo);
    for (int c = 0; c < co; ++c) om.row(c).array() += b->value.data()[c];
  }

  return make_node(std::move(out), {x, w, b},
                   [x, w, b, f, ci, h, wd, co, kh, kw, stride, pad, ho, wo, krows](VarNode& n) {
                     Tensor& gx = x->ensure_grad();
                     Tensor& gw = w->ensure_grad();
                     Tensor& gb = b->ensure_grad();
                     std::vector<double> col(size_t(krows) * ho * wo);
                     std::vector<double> dcol(size_t(krows) * ho * wo);
                     EMap gwm(gw.data(), co, krows);
                     ECMap wm(w->value.data(), co, krows);
                     for (int fi = 0; fi < f; ++fi) {
                       ECMap gm(n.grad.data() + int64_t(fi) * co * ho * wo, co, ho * wo);
                       im2col(x->value.data() + int64_t(fi) * ci * h * wd, ci, h, wd, kh, kw,
                              stride, pad, ho, wo, col.data());
                       gwm.noalias() += gm * ECMap(col.data(), krows, ho * wo).transpose();
                       for (int c = 0; c < co; ++c) gb.data()[c] += gm.row(c).sum();
                       EMap dcm(dcol.data(), krows, ho * wo);
                       dcm.noalias() = wm.transpose() * gm;
                       col2im_add(dcol.data(), ci, h, wd, kh, kw, stride, pad, ho, wo,
                                  gx.data() + int64_t(fi) * ci * h * wd);
                     }
                   });
}

Var upsample_nearest2(const Var& x) {
  require_arg(x->value.ndim() == 4, "upsample_nearest2: bad rank");
  const int f = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  Tensor out({f, c, 2 * h, 2 * w});
  for (int fc = 0; fc < f * c; ++fc) {
    const double* src = x->value.data() + int64_t(fc) * h * w;
    double* dst = out.data() + int64_t(fc) * 4 * h * w;
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + (xx / 2)];
  }
  return make_node(std::move(out), {x}, [x, f, c, h, w](VarNode& n) {
    Tensor& gx = x->ensure_grad();
    for (int fc = 0; fc < f * c; ++fc) {
      double* dst = gx.data() + int64_t(fc) * h * w;
      const double* src = n.grad.data() + int64_t(fc) * 4 * h * w;
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + (xx / 2)] += src[y * 2 * w + xx];
    }
  });
}

// --- normalization and activation ----------------------------------------

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups) {
  require_arg(x->value.ndim() == 4, "group_norm: bad rank");
  const int f = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  require_arg(groups >= 1 && c % groups == 0, "group_norm: groups must divide channels");
  require_arg(gamma->value.numel() == c && beta->value.numel() == c, "group_norm: affine mismatch");
  const int cg = c / groups;
  const int64_t gsz = int64_t(cg) * h * w;

  Tensor out({f, c, h, w});
  Tensor xhat({f, c, h, w});
  Tensor inv_std({f, groups});
  for (int fi = 0; fi < f; ++fi) {
    for (int g = 0; g < groups; ++g) {
      const double* src = x->value.data() + (int64_t(fi) * c + int64_t(g) * cg) * h * w;
      double mean = 0.0;
      for (int64_t i = 0; i < gsz; ++i) mean += src[i];
      mean /= double(gsz);
      double var = 0.0;
      for (int64_t i = 0; i < gsz; ++i) {
        const double d = src[i] - mean;
        var += d * d;
      }
      var /= double(gsz);
      const double istd = 1.0 / std::sqrt(var + kNormEps);
      inv_std.data()[fi * groups + g] = istd;
      double* xh = xhat.data() + (int64_t(fi) * c + int64_t(g) * cg) * h * w;
      double* o = out.data() + (int64_t(fi) * c + int64_t(g) * cg) * h * w;
      for (int cc = 0; cc < cg; ++cc) {
        const double ga = gamma->value.data()[g * cg + cc];
        const double be = beta->value.data()[g * cg + cc];
        for (int64_t i = 0; i < int64_t(h) * w; ++i) {
          const int64_t idx = int64_t(cc) * h * w + i;
          xh[idx] = (src[idx] - mean) * istd;
          o[idx] = ga * xh[idx] + be;
        }
      }
    }
  }

  return make_node(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, f, c, h, w, groups, cg, gsz](VarNode& n) {
        Tensor& gx = x->ensure_grad();
        Tensor& gg = gamma->ensure_grad();
        Tensor& gb = beta->ensure_grad();
        const int64_t hw = int64_t(h) * w;
        for (int fi = 0; fi < f; ++fi) {
          for (int g = 0; g < groups; ++g) {
            const int64_t base = (int64_t(fi) * c + int64_t(g) * cg) * hw;
            const double* gy = n.grad.data() + base;
            const double* xh = xhat.data() + base;
            const double istd = inv_std.data()[fi * groups + g];
            // per-channel affine grads
            for (int cc = 0; cc < cg; ++cc) {
              double sg = 0.0, sb = 0.0;
              for (int64_t i = 0; i < hw; ++i) {
                sg += gy[cc * hw + i] * xh[cc * hw + i];
                sb += gy[cc * hw + i];
              }
              gg.data()[g * cg + cc] += sg;
              gb.data()[g * cg + cc] += sb;
            }
            // dxhat = gy * gamma_c ; then the group-wise whitening backward
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (int cc = 0; cc < cg; ++cc) {
              const double ga = gamma->value.data()[g * cg + cc];
              for (int64_t i = 0; i < hw; ++i) {
                const double dxh = gy[cc * hw + i] * ga;
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[cc * hw + i];
              }
            }
            mean_dxh /= double(gsz);
            mean_dxh_xh /= double(gsz);
            double* dst = gx.data() + base;
            for (int cc = 0; cc < cg; ++cc) {
              const double ga = gamma->value.data()[g * cg + cc];
              for (int64_t i = 0; i < hw; ++i) {
                const double dxh = gy[cc * hw + i] * ga;
                dst[cc * hw + i] += istd * (dxh - mean_dxh - xh[cc * hw + i] * mean_dxh_xh);
              }
            }
          }
        }
      });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta) {
  const int d = x->value.dim(x->value.ndim() - 1);
  const int rows = int(x->value.numel() / d);
  require_arg(gamma->value.numel() == d && beta->value.numel() == d, "layer_norm: affine mismatch");

  Tensor out(x->value.shape());
  Tensor xhat(x->value.shape());
  Tensor inv_std({rows});
  for (int r = 0; r < rows; ++r) {
    const double* src = x->value.data() + int64_t(r) * d;
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += src[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      const double dd = src[i] - mean;
      var += dd * dd;
    }
    var /= d;
    const double istd = 1.0 / std::sqrt(var + kNormEps);
    inv_std.data()[r] = istd;
    double* xh = xhat.data() + int64_t(r) * d;
    double* o = out.data() + int64_t(r) * d;
    for (int i = 0; i < d; ++i) {
      xh[i] = (src[i] - mean) * istd;
      o[i] = gamma->value.data()[i] * xh[i] + beta->value.data()[i];
    }
  }

  return make_node(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat, inv_std, rows, d](VarNode& n) {
                     Tensor& gx = x->ensure_grad();
                     Tensor& gg = gamma->ensure_grad();
                     Tensor& gb = beta->ensure_grad();
                     for (int r = 0; r < rows; ++r) {
                       const double* gy = n.grad.data() + int64_t(r) * d;
                       const double* xh = xhat.data() + int64_t(r) * d;
                       const double istd = inv_std.data()[r];
                       double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                       for (int i = 0; i < d; ++i) {
                         gg.data()[i] += gy[i] * xh[i];
                         gb.data()[i] += gy[i];
                         const double dxh = gy[i] * gamma->value.data()[i];
                         mean_dxh += dxh;
                         mean_dxh_xh += dxh * xh[i];
                       }
                       mean_dxh /= d;
                       mean_dxh_xh /= d;
                       double* dst = gx.data() + int64_t(r) * d;
                       for (int i = 0; i < d; ++i) {
                         const double dxh = gy[i] * gamma->value.data()[i];
                         dst[i] += istd * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
                       }
                     }
                   });
}

Var silu(const Var& x) {
  Tensor out(x->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    const double v = x->value.data()[i];
    out.data()[i] = v / (1.0 + std::exp(-v));
  }
  return make_node(std::move(out), {x}, [x](VarNode& n) {
    Tensor& gx = x->ensure_grad();
    for (int64_t i = 0; i < gx.numel(); ++i) {
      const double v = x->value.data()[i];
      const double s = 1.0 / (1.0 + std::exp(-v));
      gx.data()[i] += n.grad.data()[i] * s * (1.0 + v * (1.0 - s));
    }
  });
}

Var add_frame_channel(const Var& x, const Var& e) {
  require_arg(x->value.ndim() == 4 && e->value.ndim() == 2, "add_frame_channel: bad ranks");
  const int f = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  require_arg(e->value.dim(0) == f && e->value.dim(1) == c, "add_frame_channel: shape mismatch");
  Tensor out = x->value.clone();
  const int64_t hw = int64_t(h) * w;
  for (int fi = 0; fi < f; ++fi)
    for (int cc = 0; cc < c; ++cc) {
      const double b = e->value.data()[fi * c + cc];
      double* dst = out.data() + (int64_t(fi) * c + cc) * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] += b;
    }
  return make_node(std::move(out), {x, e}, [x, e, f, c, hw](VarNode& n) {
    accum_flat(*x, n.grad.data());
    Tensor& ge = e->ensure_grad();
    for (int fi = 0; fi < f; ++fi)
      for (int cc = 0; cc < c; ++cc) {
        const double* src = n.grad.data() + (int64_t(fi) * c + cc) * hw;
        double s = 0.0;
        for (int64_t i = 0; i < hw; ++i) s += src[i];
        ge.data()[fi * c + cc] += s;
      }
  });
}

// --- attention -----------------------------------------------------------

Var attention(const Var& q, const Var& k, const Var& v, double scale) {
  require_arg(q->value.ndim() == 3 && k->value.ndim() == 3 && v->value.ndim() == 3,
              "attention: expects [B,L,dh]");
  const int bn = q->value.dim(0), lq = q->value.dim(1), dh = q->value.dim(2);
  const int lk = k->value.dim(1);
  require_arg(k->value.dim(0) == bn && v->value.dim(0) == bn, "attention: batch mismatch");
  require_arg(k->value.dim(2) == dh && v->value.dim(2) == dh, "attention: head dim mismatch");
  require_arg(v->value.dim(1) == lk, "attention: key/value length mismatch");
  require_arg(lk >= 1, "attention: empty key set");

  Tensor out({bn, lq, dh});
  Tensor probs({bn, lq, lk});
  for (int b = 0; b < bn; ++b) {
    ECMap qm(q->value.data() + int64_t(b) * lq * dh, lq, dh);
    ECMap km(k->value.data() + int64_t(b) * lk * dh, lk, dh);
    ECMap vm(v->value.data() + int64_t(b) * lk * dh, lk, dh);
    EMap am(probs.data() + int64_t(b) * lq * lk, lq, lk);
    am.noalias() = qm * km.transpose() * scale;
    for (int r = 0; r < lq; ++r) {
      const double mx = am.row(r).maxCoeff();
      am.row(r) = (am.row(r).array() - mx).exp();
      am.row(r) /= am.row(r).sum();
    }
    EMap om(out.data() + int64_t(b) * lq * dh, lq, dh);
    om.noalias() = am * vm;
  }

  return make_node(std::move(out), {q, k, v}, [q, k, v, probs, scale, bn, lq, lk, dh](VarNode& n) {
    Tensor& gq = q->ensure_grad();
    Tensor& gk = k->ensure_grad();
    Tensor& gv = v->ensure_grad();
    EMat ds(lq, lk);
    for (int b = 0; b < bn; ++b) {
      ECMap g(n.grad.data() + int64_t(b) * lq * dh, lq, dh);
      ECMap am(probs.data() + int64_t(b) * lq * lk, lq, lk);
      ECMap qm(q->value.data() + int64_t(b) * lq * dh, lq, dh);
      ECMap km(k->value.data() + int64_t(b) * lk * dh, lk, dh);
      ECMap vm(v->value.data() + int64_t(b) * lk * dh, lk, dh);
      EMap gqm(gq.data() + int64_t(b) * lq * dh, lq, dh);
      EMap gkm(gk.data() + int64_t(b) * lk * dh, lk, dh);
      EMap gvm(gv.data() + int64_t(b) * lk * dh, lk, dh);
      gvm.noalias() += am.transpose() * g;
      ds.noalias() = g * vm.transpose();  // dA
      for (int r = 0; r < lq; ++r) {
        const double dot = ds.row(r).dot(am.row(r));
        ds.row(r) = am.row(r).array() * (ds.row(r).array() - dot);
      }
      gqm.noalias() += scale * ds * km;
      gkm.noalias() += scale * ds.transpose() * qm;
    }
  });
}

Var query_softmax_attention(const Var& qp, const Var& kp, const Var& vp, double scale) {
  require_arg(qp->value.ndim() == 2 && kp->value.ndim() == 2 && vp->value.ndim() == 2,
              "query_softmax_attention: expects rank 2");
  const int kslots = qp->value.dim(0), d = qp->value.dim(1);
  const int l = kp->value.dim(0);
  require_arg(kp->value.dim(1) == d && vp->value.dim(1) == d,
              "query_softmax_attention: dim mismatch");
  require_arg(l >= 1, "query_softmax_attention: empty key set");
  require_arg(vp->value.dim(0) == l, "query_softmax_attention: key/value length mismatch");

  Tensor probs({kslots, l});
  {
    EMap am(probs.data(), kslots, l);
    am.noalias() = qp->value.mat(kslots, d) * kp->value.mat(l, d).transpose() * scale;
    // normalize each key column over the slot axis
    for (int j = 0; j < l; ++j) {
      const double mx = am.col(j).maxCoeff();
      am.col(j) = (am.col(j).array() - mx).exp();
      am.col(j) /= am.col(j).sum();
    }
  }
  Tensor out({kslots, d});
  out.mat(kslots, d).noalias() = ECMap(probs.data(), kslots, l) * vp->value.mat(l, d);

  return make_node(std::move(out), {qp, kp, vp},
                   [qp, kp, vp, probs, scale, kslots, d, l](VarNode& n) {
                     ECMap g(n.grad.data(), kslots, d);
                     ECMap am(probs.data(), kslots, l);
                     vp->ensure_grad().mat(l, d).noalias() += am.transpose() * g;
                     EMat ds(kslots, l);
                     ds.noalias() = g * vp->value.mat(l, d).transpose();
                     for (int j = 0; j < l; ++j) {
                       const double dot = ds.col(j).dot(am.col(j));
                       ds.col(j) = am.col(j).array() * (ds.col(j).array() - dot);
                     }
                     qp->ensure_grad().mat(kslots, d).noalias() += scale * ds * kp->value.mat(l, d);
                     kp->ensure_grad().mat(l, d).noalias() +=
                         scale * ds.transpose() * qp->value.mat(kslots, d);
                   });
}

// --- reductions ----------------------------------------------------------

Var mean_all(const Var& x) {
  const int64_t n = x->value.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += x->value.data()[i];
  Tensor out = Tensor::scalar(s / double(n));
  return make_node(std::move(out), {x}, [x, n](VarNode& nd) {
    Tensor& gx = x->ensure_grad();
    const double g = nd.grad.data()[0] / double(n);
    for (int64_t i = 0; i < n; ++i) gx.data()[i] += g;
  });
}

Var mse_loss(const Var& pred, const Var& target) {
  check_same_shape(pred, target, "mse_loss");
  const int64_t n = pred->value.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = pred->value.data()[i] - target->value.data()[i];
    s += d * d;
  }
  Tensor out = Tensor::scalar(s / double(n));
  return make_node(std::move(out), {pred, target}, [pred, target, n](VarNode& nd) {
    const double g = nd.grad.data()[0] * 2.0 / double(n);
    Tensor& gp = pred->ensure_grad();
    Tensor& gt = target->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      const double d = pred->value.data()[i] - target->value.data()[i];
      gp.data()[i] += g * d;
      gt.data()[i] -= g * d;
    }
  });
}

Var weighted_mse_loss(const Var& pred, const Var& target, const Tensor& w) {
  check_same_shape(pred, target, "weighted_mse_loss");
  require_arg(w.numel() == pred->value.numel(), "weighted_mse_loss: weight size mismatch");
  const int64_t n = pred->value.numel();
  double sw = 0.0;
  for (int64_t i = 0; i < n; ++i) sw += w.data()[i];
  require(sw > 0.0, ErrKind::invalid_argument, "weighted_mse_loss: zero total weight");
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = pred->value.data()[i] - target->value.data()[i];
    s += w.data()[i] * d * d;
  }
  Tensor out = Tensor::scalar(s / sw);
  return make_node(std::move(out), {pred, target}, [pred, target, w, n, sw](VarNode& nd) {
    const double g = nd.grad.data()[0] * 2.0 / sw;
    Tensor& gp = pred->ensure_grad();
    Tensor& gt = target->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      const double d = pred->value.data()[i] - target->value.data()[i];
      gp.data()[i] += g * w.data()[i] * d;
      gt.data()[i] -= g * w.data()[i] * d;
    }
  });
}

}  // namespace mvi::nn
