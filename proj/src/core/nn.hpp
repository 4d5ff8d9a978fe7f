#pragma once

#include <map>
#include <string>
#include <vector>

#include "core/autograd.hpp"
#include "core/rng.hpp"

namespace mvi::nn {

// Named parameter registry. Every learnable tensor of a model lives here so
// that optimization, checkpointing and scope selection can work by name.
class ParamStore {
 public:
  Var create(const std::string& name, Tensor init, bool trainable = true);
  Var get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) != 0; }
  std::vector<std::string> names() const;

  // Marks each parameter trainable iff pred(name). Used for adapter-only scopes.
  template <typename Pred>
  void set_trainable(Pred pred) {
    for (auto& [name, var] : params_) var->requires_grad = pred(name);
  }

  std::vector<Var> trainable() const;
  int64_t numel_total() const;
  int64_t numel_trainable() const;
  void zero_grad();

  std::map<std::string, Tensor> snapshot() const;           // name -> value (shared buffers)
  void load(const std::map<std::string, Tensor>& tensors, bool allow_missing = false);

 private:
  std::map<std::string, Var> params_;
};

// Flat binary tensor archive: magic "MVTA", u32 count, then per tensor
// u32 name_len, name bytes, u32 ndim, i32 dims, f64 payload (little endian).
void save_tensor_archive(const std::string& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_tensor_archive(const std::string& path);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update to every trainable parameter with an accumulated grad.
  void step(ParamStore& store);
  void set_lr(double lr) { lr_ = lr; }

 private:
  struct Slot {
    Tensor m, v;
    int64_t t = 0;
  };
  double lr_, beta1_, beta2_, eps_;
  std::map<std::string, Slot> state_;
};

// Clips the global l2 norm of all trainable grads to max_norm; returns the
// pre-clip norm.
double clip_grad_norm(ParamStore& store, double max_norm);

// --- init helpers --------------------------------------------------------

Tensor kaiming_normal(Rng& rng, const std::vector<int>& shape, int fan_in);
Tensor xavier_normal(Rng& rng, int rows, int cols);

// --- layers --------------------------------------------------------------

struct Linear {
  Var w, b;
  static Linear create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                       bool zero_init = false);
  Var forward(const Var& x) const { return linear(x, w, b); }
};

struct LinearNoBias {
  Var w;
  static LinearNoBias create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                             bool zero_init = false);
  Var forward(const Var& x) const { return linear_nobias(x, w); }
};

struct Conv2d {
  Var w, b;
  int stride = 1, pad = 0;
  static Conv2d create(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k,
                       int stride, int pad, Rng& rng, bool zero_init = false);
  Var forward(const Var& x) const { return conv2d(x, w, b, stride, pad); }
};

struct GroupNormLayer {
  Var gamma, beta;
  int groups = 1;
  static GroupNormLayer create(ParamStore& ps, const std::string& name, int channels, int groups);
  Var forward(const Var& x) const { return group_norm(x, gamma, beta, groups); }
};

struct LayerNormLayer {
  Var gamma, beta;
  static LayerNormLayer create(ParamStore& ps, const std::string& name, int dim);
  Var forward(const Var& x) const { return layer_norm(x, gamma, beta); }
};

}  // namespace mvi::nn
