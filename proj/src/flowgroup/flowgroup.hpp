#pragma once

#include <string>
#include <vector>

#include "core/autograd.hpp"
#include "core/image.hpp"
#include "core/nn.hpp"
#include "core/rng.hpp"

namespace mvi::flowgroup {

enum class FlowMode { none, dense, slot2d, slot3d };
enum class FlowInject { none, cross_attn_token, time_emb_add };

FlowMode flow_mode_from_string(const std::string& s);
FlowInject flow_inject_from_string(const std::string& s);
std::string to_string(FlowMode m);
std::string to_string(FlowInject i);

struct FlowGroupConfig {
  FlowMode mode = FlowMode::slot3d;
  FlowInject inject = FlowInject::cross_attn_token;
  int slots = 4;
  int dim = 32;        // flow feature / embedding width
  int token_dim = 32;  // width of the prompt tokens a motion token joins
  int time_dim = 64;   // width of the timestep embedding for time_emb_add
  bool temporal_pos_enc = true;

  void validate() const;
};

// Conditioning payload handed to the denoiser. Exactly one of the vectors is
// populated, matching `inject`.
struct MotionPayload {
  FlowInject inject = FlowInject::none;
  std::vector<nn::Var> tokens;    // cross_attn_token: [1, token_dim] per embedding
  std::vector<nn::Var> time_add;  // time_emb_add: [time_dim] per embedding
};

// Motion summarization: a small convolutional encoder over masked flow, slot
// attention pooling into K slots, and a fused motion embedding.
class FlowGroup {
 public:
  FlowGroup(const FlowGroupConfig& cfg, nn::ParamStore& ps, Rng& rng,
            const std::string& prefix = "flow.");

  const FlowGroupConfig& config() const { return cfg_; }

  // Flow fields -> stacked feature maps [N, dim, h/8, w/8]. Flow values
  // inside dilate(mask, 5) are zeroed before the encoder sees them.
  nn::Var encode_flow(const std::vector<FlowField>& flows, const std::vector<Mask>& masks) const;

  // feats: [L, dim]. A = softmax over the slot axis of (Q K^T / sqrt(dim)),
  // so each feature column distributes one unit of weight across the slots;
  // returns A V with shape [slots, dim].
  nn::Var slot_attention(const nn::Var& feats) const;

  // [slots, dim] -> [dim] via one affine layer over the concatenated slots.
  nn::Var fuse_slots(const nn::Var& slots) const;

  // slot2d: one embedding per frame. slot3d: a single shared embedding after
  // a temporal attention layer (bypassed at N=1).
  std::vector<nn::Var> group_flow(const nn::Var& feats) const;

  // Packages embeddings for the denoiser according to the configured inject.
  MotionPayload inject_motion(const std::vector<nn::Var>& embeddings) const;

  // Dense mode only: nearest-upsample encoded features to the denoiser input
  // resolution so they can join its input channels.
  nn::Var dense_features(const nn::Var& feats, int target_h, int target_w) const;

 private:
  FlowGroupConfig cfg_;

  nn::Conv2d conv1_, conv2_, conv3_;
  nn::GroupNormLayer gn1_, gn2_, gn3_;

  nn::Var queries_;
  nn::LinearNoBias wq_, wk_, wv_;
  nn::Linear fuse_;

  nn::LinearNoBias t_wq_, t_wk_, t_wv_, t_wo_;
  nn::LinearNoBias token_proj_, time_proj_;

  nn::Var frame_features(const nn::Var& feats, int frame) const;  // -> [L, dim]
};

}  // namespace mvi::flowgroup
