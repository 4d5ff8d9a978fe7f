#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "core/autograd.hpp"
#include "core/nn.hpp"
#include "core/rng.hpp"
#include "flowgroup/flowgroup.hpp"

namespace mvi::denoise {

enum class PromptMode { caption_table, learned_global_16 };
enum class TrainScope { adapters_only, full };

PromptMode prompt_mode_from_string(const std::string& s);
TrainScope train_scope_from_string(const std::string& s);
std::string to_string(PromptMode m);
std::string to_string(TrainScope s);

struct DenoiserConfig {
  int base_channels = 64;
  int depth = 3;
  std::vector<int> attn_resolutions = {16, 8};  // spatial sizes that run attention
  int num_heads = 4;
  int frame_capacity = 24;    // largest clip length (N+1) the model accepts
  int cond_channels = 3;      // channels of the signal being denoised
  int extra_in_channels = 0;  // appended conditioning planes (dense flow features)
  PromptMode prompt_mode = PromptMode::learned_global_16;
  int caption_count = 4;  // rows of the caption table
  int token_dim = 32;     // prompt / motion token width
  int lora_rank = 4;      // 0 disables the adapters
  double lora_alpha = 8.0;
  TrainScope train_scope = TrainScope::full;

  // Noised signal + clean masked signal + mask plane + extras.
  int in_channels() const { return 2 * cond_channels + 1 + extra_in_channels; }
  int time_dim() const { return 4 * base_channels; }
  void validate() const;
};

// Linear projection with an optional low-rank adapter:
// y = base(x) + (alpha/rank) * B(A(x)). B starts at zero, so a freshly created
// adapter leaves the base projection untouched.
class LoraLinear {
 public:
  static LoraLinear create(nn::ParamStore& ps, const std::string& name, int in, int out, int rank,
                           double alpha, Rng& rng);
  nn::Var forward(const nn::Var& x) const;

 private:
  nn::Linear base_;
  nn::Var down_, up_;  // A: [rank,in], B: [out,rank]
  int rank_ = 0;
  double alpha_ = 0.0;
};

// One spatial attention stage: reference-aware self-attention followed by
// prompt cross-attention, each pre-normalized and wrapped in a residual.
class SpatialAttention {
 public:
  static SpatialAttention create(nn::ParamStore& ps, const std::string& name, int channels,
                                 int heads, int token_dim, int rank, double alpha, Rng& rng);

  // target: [L,d], ref: [Lr,d]. Multi-head attention where queries come from
  // the target alone; with enabled=true the keys and values are the target's
  // with the reference's appended along the token axis, otherwise plain
  // self-attention. Returns merged heads [L,d] before the output projection.
  nn::Var ref_kv_attention(const nn::Var& target, const nn::Var& ref, bool enabled) const;

  // x: [F,C,H,W]. Frame 0 attends to itself; every later frame also sees
  // frame 0's keys and values.
  nn::Var self_block(const nn::Var& x) const;

  // x: [F,C,H,W]; each frame cross-attends to the prompt tokens, with that
  // frame's motion token appended when one is supplied (empty vector or a null
  // entry means no token for that frame).
  nn::Var cross_block(const nn::Var& x, const nn::Var& prompt,
                      const std::vector<nn::Var>& motion_tokens = {}) const;

 private:
  int heads_ = 1;
  nn::GroupNormLayer gn_;
  LoraLinear q_, k_, v_, o_;
  nn::LayerNormLayer ln_;
  LoraLinear cq_, ck_, cv_, co_;
};

// Motion-module style temporal stage: at each spatial location, attention runs
// across the frame axis with sinusoidal frame-position codes added to the
// normalized attention input. The output projection starts at zero, so the
// block is exactly the identity until trained.
class TemporalAttention {
 public:
  static TemporalAttention create(nn::ParamStore& ps, const std::string& name, int channels,
                                  int heads, int capacity, Rng& rng);

  // feats: [F,L,d] -> [F,L,d]; includes the residual connection.
  nn::Var attend(const nn::Var& feats) const;

  // x: [F,C,H,W] convenience wrapper around attend.
  nn::Var apply(const nn::Var& x) const;

 private:
  int heads_ = 1;
  int capacity_ = 0;
  nn::LayerNormLayer ln_;
  nn::Linear wq_, wk_, wv_, wo_;  // wo zero-initialized
};

// GroupNorm/SiLU residual block with a per-frame timestep shift.
class ResBlock {
 public:
  static ResBlock create(nn::ParamStore& ps, const std::string& name, int in_ch, int out_ch,
                         int time_dim, Rng& rng);
  // x: [F,in,H,W], temb: [F,time_dim] -> [F,out,H,W]
  nn::Var apply(const nn::Var& x, const nn::Var& temb) const;

 private:
  nn::GroupNormLayer gn1_, gn2_;
  nn::Conv2d conv1_, conv2_;
  nn::Linear time_;
  bool has_skip_ = false;
  nn::Conv2d skip_;
};

// Sinusoidal code for an integer position (timestep or frame index); dim even.
nn::Tensor sinusoidal_embedding(double t, int dim);

// Multi-frame epsilon-prediction U-Net. Frames share weights; cross-frame
// information moves through reference K/V concatenation and the temporal
// stages. Attention stages run wherever the current spatial size is listed in
// attn_resolutions.
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, nn::ParamStore& ps, Rng& rng);

  const DenoiserConfig& config() const { return cfg_; }

  // x: [F, 2C+1+extra, H, W], t: diffusion timestep, prompt: [T_c, token_dim].
  // Returns the epsilon estimate [F, C, H, W].
  nn::Var forward(const nn::Var& x, int t, const nn::Var& prompt,
                  const flowgroup::MotionPayload& motion = {}) const;

  // learned_global_16: the 16 shared tokens (caption_id ignored).
  // caption_table: the 16 learned tokens of the given category.
  nn::Var prompt_embed(int caption_id = -1) const;

 private:
  struct DownLevel {
    ResBlock res;
    SpatialAttention attn;
    TemporalAttention temporal;
    nn::Conv2d down;
    bool has_down = false;
  };
  struct UpLevel {
    ResBlock res;
    SpatialAttention attn;
    TemporalAttention temporal;
    nn::Conv2d upconv;
    bool has_up = false;
  };

  bool attn_here(int h) const;
  nn::Var run_attention(const nn::Var& h, const SpatialAttention& attn,
                        const TemporalAttention& temporal, const nn::Var& prompt,
                        const std::vector<nn::Var>& motion_tokens) const;

  DenoiserConfig cfg_;
  nn::Conv2d in_;
  nn::Linear tm1_, tm2_;
  std::vector<DownLevel> down_;
  ResBlock mid_res1_, mid_res2_;
  SpatialAttention mid_attn_;
  TemporalAttention mid_temporal_;
  std::vector<UpLevel> up_;
  nn::GroupNormLayer out_gn_;
  nn::Conv2d out_conv_;
  nn::Var prompt_param_;
};

// True for parameters trained in the adapters_only scope: LoRA factors, the
// temporal stages, flow grouping, and prompt embeddings.
bool is_adapter_param(const std::string& name);
void apply_train_scope(nn::ParamStore& ps, TrainScope scope);

nlohmann::json denoiser_config_to_json(const DenoiserConfig& cfg);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

// Checkpoint = directory holding weights.mvta (flat named-tensor archive) and
// manifest.json. The manifest carries at least {"denoiser": <config>}; callers
// may add sections of their own.
void save_checkpoint(const std::string& dir, const nlohmann::json& manifest,
                     const nn::ParamStore& ps);
nlohmann::json load_checkpoint_manifest(const std::string& dir);
void load_checkpoint_weights(const std::string& dir, nn::ParamStore& ps);

}  // namespace mvi::denoise
