#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "core/tensor.hpp"

namespace mvi::nn {

struct VarNode;
using Var = std::shared_ptr<VarNode>;

// Node in the dynamically built computation graph. `track` is true when the
// node is a trainable leaf or depends on one; only tracked nodes record a
// backward closure.
struct VarNode {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool track = false;
  bool grad_alloc = false;
  std::vector<Var> parents;
  std::function<void(VarNode&)> backward_fn;

  const std::vector<int>& shape() const { return value.shape(); }

  Tensor& ensure_grad() {
    if (!grad_alloc) {
      grad = Tensor::zeros(value.shape());
      grad_alloc = true;
    }
    return grad;
  }
};

// When false, ops build no graph; used during sampling and evaluation.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();

 private:
  bool prev_;
};

Var constant(Tensor value);
Var make_param(Tensor value);

// Runs reverse-mode accumulation from a scalar root.
void backward(const Var& root);

// --- primitive ops -------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// Elementwise product with a constant tensor (no gradient through c).
Var mul_const(const Var& a, const Tensor& c);

Var reshape(const Var& x, std::vector<int> shape);
// [A,B,C] -> [B,A,C]
Var permute_102(const Var& x);
Var select_frame(const Var& x, int f);          // [F,rest...] -> [rest...]
Var stack_frames(const std::vector<Var>& xs);   // k x [rest...] -> [k,rest...]
Var concat_axis0(const Var& a, const Var& b);   // [La,C]+[Lb,C] -> [La+Lb,C]

Var matmul(const Var& a, const Var& b);
// x:[R,Cin] w:[Cout,Cin] b:[Cout] -> [R,Cout]
Var linear(const Var& x, const Var& w, const Var& b);
Var linear_nobias(const Var& x, const Var& w);

// x:[F,Ci,H,W] w:[Co,Ci,kh,kw] b:[Co]; zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_nearest2(const Var& x);  // [F,C,H,W] -> [F,C,2H,2W]

Var concat_channels(const Var& a, const Var& b);  // [F,Ca,H,W]+[F,Cb,H,W] -> [F,Ca+Cb,H,W]
// Multi-head reshuffles: [B,L,h*dh] <-> [B*h,L,dh], heads kept batch-major.
Var split_heads(const Var& x, int heads);
Var merge_heads(const Var& x, int heads);
// Token layout conversions: [F,C,H,W] <-> [F,H*W,C].
Var nchw_to_tokens(const Var& x);
Var tokens_to_nchw(const Var& x, int h, int w);

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta);
Var silu(const Var& x);

// Adds e[f,c] to every spatial position of x[f,c,:,:].
Var add_frame_channel(const Var& x, const Var& e);

// Scaled dot-product attention, softmax over keys. q:[B,Lq,dh] k,v:[B,Lk,dh].
Var attention(const Var& q, const Var& k, const Var& v, double scale);
// Slot attention core: softmax over the query axis. qp:[K,d] kp,vp:[L,d].
Var query_softmax_attention(const Var& qp, const Var& kp, const Var& vp, double scale);

Var mean_all(const Var& x);
Var mse_loss(const Var& pred, const Var& target);
// sum(w*(pred-target)^2)/sum(w); w is a constant weight tensor.
Var weighted_mse_loss(const Var& pred, const Var& target, const Tensor& w);

}  // namespace mvi::nn
