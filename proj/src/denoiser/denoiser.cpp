#include "denoiser/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "core/error.hpp"

namespace mvi::denoise {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Tensor;
using nn::Var;

namespace {

int norm_groups(int channels) {
  for (int g : {8, 4, 2, 1})
    if (channels % g == 0) return g;
  return 1;
}

// Clip-relative index of the motion embedding that conditions frame f:
// a single pooled embedding serves every frame; per-frame embeddings follow
// the flow they were computed from (flow i describes motion into frame i+1).
int motion_index(int f, int count) { return std::clamp(count == 1 ? 0 : f - 1, 0, count - 1); }

}  // namespace

PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "caption_table") return PromptMode::caption_table;
  if (s == "learned_global_16") return PromptMode::learned_global_16;
  fail(ErrKind::config, "unknown prompt mode: " + s);
}

TrainScope train_scope_from_string(const std::string& s) {
  if (s == "adapters_only") return TrainScope::adapters_only;
  if (s == "full") return TrainScope::full;
  fail(ErrKind::config, "unknown train scope: " + s);
}

std::string to_string(PromptMode m) {
  return m == PromptMode::caption_table ? "caption_table" : "learned_global_16";
}

std::string to_string(TrainScope s) { return s == TrainScope::adapters_only ? "adapters_only" : "full"; }

void DenoiserConfig::validate() const {
  require(base_channels >= 2 && base_channels % 2 == 0, ErrKind::config,
          "base_channels must be a positive even number");
  require(depth >= 1, ErrKind::config, "depth must be at least 1");
  require(num_heads >= 1 && base_channels % num_heads == 0, ErrKind::config,
          "num_heads must divide base_channels");
  require(frame_capacity >= 24, ErrKind::config, "frame_capacity must be at least 24");
  require(cond_channels >= 1, ErrKind::config, "cond_channels must be positive");
  require(extra_in_channels >= 0, ErrKind::config, "extra_in_channels must be non-negative");
  require(caption_count >= 1, ErrKind::config, "caption_count must be positive");
  require(token_dim >= 1, ErrKind::config, "token_dim must be positive");
  require(lora_rank >= 0, ErrKind::config, "lora_rank must be non-negative");
  for (int r : attn_resolutions)
    require(r >= 1, ErrKind::config, "attn_resolutions entries must be positive");
}

// --- LoraLinear ----------------------------------------------------------

LoraLinear LoraLinear::create(nn::ParamStore& ps, const std::string& name, int in, int out,
                              int rank, double alpha, Rng& rng) {
  LoraLinear l;
  l.base_ = nn::Linear::create(ps, name, in, out, rng);
  l.rank_ = rank;
  l.alpha_ = alpha;
  if (rank > 0) {
    l.down_ = ps.create(name + ".lora_a", nn::kaiming_normal(rng, {rank, in}, in));
    l.up_ = ps.create(name + ".lora_b", Tensor::zeros({out, rank}));
  }
  return l;
}

Var LoraLinear::forward(const Var& x) const {
  Var y = base_.forward(x);
  if (rank_ > 0)
    y = nn::add(y, nn::scale(nn::linear_nobias(nn::linear_nobias(x, down_), up_),
                             alpha_ / double(rank_)));
  return y;
}

// --- SpatialAttention ----------------------------------------------------

SpatialAttention SpatialAttention::create(nn::ParamStore& ps, const std::string& name,
                                          int channels, int heads, int token_dim, int rank,
                                          double alpha, Rng& rng) {
  require_arg(heads >= 1 && channels % heads == 0, "attention heads must divide channels");
  SpatialAttention a;
  a.heads_ = heads;
  a.gn_ = nn::GroupNormLayer::create(ps, name + ".gn", channels, norm_groups(channels));
  a.q_ = LoraLinear::create(ps, name + ".q", channels, channels, rank, alpha, rng);
  a.k_ = LoraLinear::create(ps, name + ".k", channels, channels, rank, alpha, rng);
  a.v_ = LoraLinear::create(ps, name + ".v", channels, channels, rank, alpha, rng);
  a.o_ = LoraLinear::create(ps, name + ".o", channels, channels, rank, alpha, rng);
  a.ln_ = nn::LayerNormLayer::create(ps, name + ".ln", channels);
  a.cq_ = LoraLinear::create(ps, name + ".cq", channels, channels, rank, alpha, rng);
  a.ck_ = LoraLinear::create(ps, name + ".ck", token_dim, channels, rank, alpha, rng);
  a.cv_ = LoraLinear::create(ps, name + ".cv", token_dim, channels, rank, alpha, rng);
  a.co_ = LoraLinear::create(ps, name + ".co", channels, channels, rank, alpha, rng);
  return a;
}

Var SpatialAttention::ref_kv_attention(const Var& target, const Var& ref, bool enabled) const {
  require_arg(target->value.ndim() == 2, "ref_kv_attention: target must be [L,d]");
  require_arg(ref->value.ndim() == 2 && ref->value.dim(1) == target->value.dim(1),
              "ref_kv_attention: feature width mismatch");
  const int l = target->value.dim(0);
  const int d = target->value.dim(1);
  const int dh = d / heads_;

  Var q = q_.forward(target);
  Var k = k_.forward(target);
  Var v = v_.forward(target);
  if (enabled) {
    k = nn::concat_axis0(k, k_.forward(ref));
    v = nn::concat_axis0(v, v_.forward(ref));
  }
  const int lk = k->value.dim(0);
  Var qh = nn::split_heads(nn::reshape(q, {1, l, d}), heads_);
  Var kh = nn::split_heads(nn::reshape(k, {1, lk, d}), heads_);
  Var vh = nn::split_heads(nn::reshape(v, {1, lk, d}), heads_);
  Var att = nn::attention(qh, kh, vh, 1.0 / std::sqrt(double(dh)));
  return nn::reshape(nn::merge_heads(att, heads_), {l, d});
}

Var SpatialAttention::self_block(const Var& x) const {
  require_arg(x->value.ndim() == 4, "self_block: input must be [F,C,H,W]");
  const int f = x->value.dim(0), h = x->value.dim(2), w = x->value.dim(3);
  Var tok = nn::nchw_to_tokens(gn_.forward(x));
  Var ref = nn::select_frame(tok, 0);
  std::vector<Var> outs;
  outs.reserve(size_t(f));
  for (int fi = 0; fi < f; ++fi) {
    Var tgt = nn::select_frame(tok, fi);
    outs.push_back(o_.forward(ref_kv_attention(tgt, ref, fi > 0)));
  }
  return nn::add(x, nn::tokens_to_nchw(nn::stack_frames(outs), h, w));
}

Var SpatialAttention::cross_block(const Var& x, const Var& prompt,
                                  const std::vector<Var>& motion_tokens) const {
  require_arg(x->value.ndim() == 4, "cross_block: input must be [F,C,H,W]");
  require_arg(prompt->value.ndim() == 2, "cross_block: prompt must be [T,token_dim]");
  require_arg(motion_tokens.empty() || int(motion_tokens.size()) == x->value.dim(0),
              "cross_block: one motion token slot per frame");
  const int f = x->value.dim(0), d = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  const int l = h * w;
  const int dh = d / heads_;
  Var tok = nn::nchw_to_tokens(x);
  std::vector<Var> outs;
  outs.reserve(size_t(f));
  for (int fi = 0; fi < f; ++fi) {
    Var tgt = ln_.forward(nn::select_frame(tok, fi));
    Var ctx = prompt;
    if (!motion_tokens.empty() && motion_tokens[fi]) ctx = nn::concat_axis0(prompt, motion_tokens[fi]);
    const int lc = ctx->value.dim(0);
    Var qh = nn::split_heads(nn::reshape(cq_.forward(tgt), {1, l, d}), heads_);
    Var kh = nn::split_heads(nn::reshape(ck_.forward(ctx), {1, lc, d}), heads_);
    Var vh = nn::split_heads(nn::reshape(cv_.forward(ctx), {1, lc, d}), heads_);
    Var att = nn::attention(qh, kh, vh, 1.0 / std::sqrt(double(dh)));
    outs.push_back(co_.forward(nn::reshape(nn::merge_heads(att, heads_), {l, d})));
  }
  return nn::add(x, nn::tokens_to_nchw(nn::stack_frames(outs), h, w));
}

// --- TemporalAttention ---------------------------------------------------

TemporalAttention TemporalAttention::create(nn::ParamStore& ps, const std::string& name,
                                            int channels, int heads, int capacity, Rng& rng) {
  require_arg(heads >= 1 && channels % heads == 0, "attention heads must divide channels");
  require_arg(capacity >= 1, "temporal capacity must be positive");
  TemporalAttention t;
  t.heads_ = heads;
  t.capacity_ = capacity;
  t.ln_ = nn::LayerNormLayer::create(ps, name + ".ln", channels);
  t.wq_ = nn::Linear::create(ps, name + ".wq", channels, channels, rng);
  t.wk_ = nn::Linear::create(ps, name + ".wk", channels, channels, rng);
  t.wv_ = nn::Linear::create(ps, name + ".wv", channels, channels, rng);
  t.wo_ = nn::Linear::create(ps, name + ".wo", channels, channels, rng, /*zero_init=*/true);
  return t;
}

Var TemporalAttention::attend(const Var& feats) const {
  require_arg(feats->value.ndim() == 3, "temporal attention: input must be [F,L,d]");
  const int f = feats->value.dim(0), l = feats->value.dim(1), d = feats->value.dim(2);
  require(f <= capacity_, ErrKind::invalid_argument,
          "temporal attention: clip exceeds frame capacity");
  const int dh = d / heads_;

  Var x = nn::permute_102(feats);  // [L,F,d]: locations batch the frame axis
  Var normed = ln_.forward(x);
  Tensor pe({l, f, d});
  for (int fi = 0; fi < f; ++fi) {
    const Tensor code = sinusoidal_embedding(double(fi), d);
    for (int li = 0; li < l; ++li)
      std::copy(code.data(), code.data() + d, pe.data() + (int64_t(li) * f + fi) * d);
  }
  Var att_in = nn::add(normed, nn::constant(std::move(pe)));
  Var qh = nn::split_heads(wq_.forward(att_in), heads_);
  Var kh = nn::split_heads(wk_.forward(att_in), heads_);
  Var vh = nn::split_heads(wv_.forward(att_in), heads_);
  Var att = nn::attention(qh, kh, vh, 1.0 / std::sqrt(double(dh)));
  Var out = wo_.forward(nn::merge_heads(att, heads_));
  return nn::permute_102(nn::add(x, out));
}

Var TemporalAttention::apply(const Var& x) const {
  require_arg(x->value.ndim() == 4, "temporal attention: input must be [F,C,H,W]");
  const int h = x->value.dim(2), w = x->value.dim(3);
  return nn::tokens_to_nchw(attend(nn::nchw_to_tokens(x)), h, w);
}

// --- ResBlock ------------------------------------------------------------

ResBlock ResBlock::create(nn::ParamStore& ps, const std::string& name, int in_ch, int out_ch,
                          int time_dim, Rng& rng) {
  ResBlock r;
  r.gn1_ = nn::GroupNormLayer::create(ps, name + ".gn1", in_ch, norm_groups(in_ch));
  r.conv1_ = nn::Conv2d::create(ps, name + ".conv1", in_ch, out_ch, 3, 1, 1, rng);
  r.time_ = nn::Linear::create(ps, name + ".time", time_dim, out_ch, rng);
  r.gn2_ = nn::GroupNormLayer::create(ps, name + ".gn2", out_ch, norm_groups(out_ch));
  r.conv2_ = nn::Conv2d::create(ps, name + ".conv2", out_ch, out_ch, 3, 1, 1, rng);
  r.has_skip_ = in_ch != out_ch;
  if (r.has_skip_) r.skip_ = nn::Conv2d::create(ps, name + ".skip", in_ch, out_ch, 1, 1, 0, rng);
  return r;
}

Var ResBlock::apply(const Var& x, const Var& temb) const {
  Var h = conv1_.forward(nn::silu(gn1_.forward(x)));
  h = nn::add_frame_channel(h, time_.forward(nn::silu(temb)));
  h = conv2_.forward(nn::silu(gn2_.forward(h)));
  return nn::add(has_skip_ ? skip_.forward(x) : x, h);
}

// --- Denoiser ------------------------------------------------------------

nn::Tensor sinusoidal_embedding(double t, int dim) {
  require_arg(dim >= 2 && dim % 2 == 0, "sinusoidal embedding needs an even width");
  const int half = dim / 2;
  Tensor e({dim});
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    e.data()[i] = std::sin(t * freq);
    e.data()[half + i] = std::cos(t * freq);
  }
  return e;
}

Denoiser::Denoiser(const DenoiserConfig& cfg, nn::ParamStore& ps, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int base = cfg_.base_channels;
  const int tdim = cfg_.time_dim();
  in_ = nn::Conv2d::create(ps, "unet.in", cfg_.in_channels(), base, 3, 1, 1, rng);
  tm1_ = nn::Linear::create(ps, "unet.time.l1", base, tdim, rng);
  tm2_ = nn::Linear::create(ps, "unet.time.l2", tdim, tdim, rng);

  int c_prev = base;
  for (int l = 0; l < cfg_.depth; ++l) {
    const int c = base << l;
    const std::string name = "unet.down" + std::to_string(l);
    DownLevel lv;
    lv.res = ResBlock::create(ps, name + ".res", c_prev, c, tdim, rng);
    lv.attn = SpatialAttention::create(ps, name + ".attn", c, cfg_.num_heads, cfg_.token_dim,
                                       cfg_.lora_rank, cfg_.lora_alpha, rng);
    lv.temporal = TemporalAttention::create(ps, name + ".temporal", c, cfg_.num_heads,
                                            cfg_.frame_capacity, rng);
    if (l < cfg_.depth - 1) {
      lv.down = nn::Conv2d::create(ps, name + ".down", c, c, 3, 2, 1, rng);
      lv.has_down = true;
    }
    down_.push_back(std::move(lv));
    c_prev = c;
  }

  mid_res1_ = ResBlock::create(ps, "unet.mid.res1", c_prev, c_prev, tdim, rng);
  mid_attn_ = SpatialAttention::create(ps, "unet.mid.attn", c_prev, cfg_.num_heads,
                                       cfg_.token_dim, cfg_.lora_rank, cfg_.lora_alpha, rng);
  mid_temporal_ = TemporalAttention::create(ps, "unet.mid.temporal", c_prev, cfg_.num_heads,
                                            cfg_.frame_capacity, rng);
  mid_res2_ = ResBlock::create(ps, "unet.mid.res2", c_prev, c_prev, tdim, rng);

  up_.resize(size_t(cfg_.depth));
  for (int l = cfg_.depth - 1; l >= 0; --l) {
    const int c = base << l;
    const std::string name = "unet.up" + std::to_string(l);
    UpLevel ul;
    ul.res = ResBlock::create(ps, name + ".res", c_prev + c, c, tdim, rng);
    ul.attn = SpatialAttention::create(ps, name + ".attn", c, cfg_.num_heads, cfg_.token_dim,
                                       cfg_.lora_rank, cfg_.lora_alpha, rng);
    ul.temporal = TemporalAttention::create(ps, name + ".temporal", c, cfg_.num_heads,
                                            cfg_.frame_capacity, rng);
    if (l > 0) {
      ul.upconv = nn::Conv2d::create(ps, name + ".upconv", c, c, 3, 1, 1, rng);
      ul.has_up = true;
    }
    up_[size_t(l)] = std::move(ul);
    c_prev = c;
  }

  out_gn_ = nn::GroupNormLayer::create(ps, "unet.out.gn", base, norm_groups(base));
  out_conv_ = nn::Conv2d::create(ps, "unet.out.conv", base, cfg_.cond_channels, 3, 1, 1, rng,
                                 /*zero_init=*/true);

  if (cfg_.prompt_mode == PromptMode::learned_global_16)
    prompt_param_ = ps.create("prompt.global", Tensor::randn({16, cfg_.token_dim}, rng, 0.02));
  else
    prompt_param_ = ps.create("prompt.table",
                              Tensor::randn({cfg_.caption_count, 16, cfg_.token_dim}, rng, 0.02));
}

bool Denoiser::attn_here(int h) const {
  return std::find(cfg_.attn_resolutions.begin(), cfg_.attn_resolutions.end(), h) !=
         cfg_.attn_resolutions.end();
}

Var Denoiser::run_attention(const Var& h, const SpatialAttention& attn,
                            const TemporalAttention& temporal, const Var& prompt,
                            const std::vector<Var>& motion_tokens) const {
  Var y = attn.self_block(h);
  y = attn.cross_block(y, prompt, motion_tokens);
  return temporal.apply(y);
}

Var Denoiser::forward(const Var& x, int t, const Var& prompt,
                      const flowgroup::MotionPayload& motion) const {
  require_arg(x->value.ndim() == 4, "forward: input must be [F,C,H,W]");
  const int f = x->value.dim(0);
  require(x->value.dim(1) == cfg_.in_channels(), ErrKind::invalid_argument,
          "forward: input channel count does not match the config");
  require(f >= 1 && f <= cfg_.frame_capacity, ErrKind::invalid_argument,
          "forward: clip exceeds frame capacity");
  require_arg(t >= 0, "forward: timestep must be non-negative");
  require_arg(prompt->value.ndim() == 2 && prompt->value.dim(1) == cfg_.token_dim,
              "forward: prompt tokens must be [T,token_dim]");

  // Motion conditioning: one embedding shared by the clip, or one per flow.
  std::vector<Var> motion_tokens;
  std::vector<Var> time_adds;
  if (motion.inject == flowgroup::FlowInject::cross_attn_token) {
    const int m = int(motion.tokens.size());
    require_arg(m == 1 || m == f - 1 || m == f, "forward: motion token count mismatch");
    motion_tokens.resize(size_t(f));
    for (int fi = 0; fi < f; ++fi) {
      const Var& tok = motion.tokens[size_t(motion_index(fi, m))];
      require_arg(tok->value.ndim() == 2 && tok->value.dim(1) == cfg_.token_dim,
                  "forward: motion tokens must be [1,token_dim]");
      motion_tokens[size_t(fi)] = tok;
    }
  } else if (motion.inject == flowgroup::FlowInject::time_emb_add) {
    const int m = int(motion.time_add.size());
    require_arg(m == 1 || m == f - 1 || m == f, "forward: motion embedding count mismatch");
    for (const Var& e : motion.time_add)
      require_arg(e->value.numel() == cfg_.time_dim(),
                  "forward: motion time embedding width mismatch");
    time_adds = motion.time_add;
  }

  // Timestep embedding, shifted per frame when motion conditions the schedule.
  Var te = tm2_.forward(nn::silu(
      tm1_.forward(nn::constant(sinusoidal_embedding(double(t), cfg_.base_channels)
                                    .reshaped({1, cfg_.base_channels})))));
  Var te_row = nn::reshape(te, {cfg_.time_dim()});
  std::vector<Var> temb_rows;
  temb_rows.reserve(size_t(f));
  for (int fi = 0; fi < f; ++fi) {
    Var row = te_row;
    if (!time_adds.empty())
      row = nn::add(row, nn::reshape(time_adds[size_t(motion_index(fi, int(time_adds.size())))],
                                     {cfg_.time_dim()}));
    temb_rows.push_back(row);
  }
  Var temb = nn::stack_frames(temb_rows);  // [F,time_dim]

  Var h = in_.forward(x);
  std::vector<Var> skips;
  skips.reserve(size_t(cfg_.depth));
  for (int l = 0; l < cfg_.depth; ++l) {
    const DownLevel& lv = down_[size_t(l)];
    h = lv.res.apply(h, temb);
    if (attn_here(h->value.dim(2)))
      h = run_attention(h, lv.attn, lv.temporal, prompt, motion_tokens);
    skips.push_back(h);
    if (lv.has_down) h = lv.down.forward(h);
  }

  h = mid_res1_.apply(h, temb);
  if (attn_here(h->value.dim(2)))
    h = run_attention(h, mid_attn_, mid_temporal_, prompt, motion_tokens);
  h = mid_res2_.apply(h, temb);

  for (int l = cfg_.depth - 1; l >= 0; --l) {
    const UpLevel& ul = up_[size_t(l)];
    h = nn::concat_channels(h, skips[size_t(l)]);
    h = ul.res.apply(h, temb);
    if (attn_here(h->value.dim(2)))
      h = run_attention(h, ul.attn, ul.temporal, prompt, motion_tokens);
    if (ul.has_up) h = ul.upconv.forward(nn::upsample_nearest2(h));
  }

  return out_conv_.forward(nn::silu(out_gn_.forward(h)));
}

Var Denoiser::prompt_embed(int caption_id) const {
  if (cfg_.prompt_mode == PromptMode::learned_global_16) return prompt_param_;
  require(caption_id >= 0 && caption_id < cfg_.caption_count, ErrKind::invalid_argument,
          "prompt_embed: unknown caption id " + std::to_string(caption_id));
  return nn::select_frame(prompt_param_, caption_id);
}

// --- training scope and checkpoints --------------------------------------

bool is_adapter_param(const std::string& name) {
  return name.find(".lora_") != std::string::npos ||
         name.find(".temporal.") != std::string::npos || name.rfind("flow.", 0) == 0 ||
         name.rfind("prompt.", 0) == 0;
}

void apply_train_scope(nn::ParamStore& ps, TrainScope scope) {
  if (scope == TrainScope::full)
    ps.set_trainable([](const std::string&) { return true; });
  else
    ps.set_trainable(is_adapter_param);
}

json denoiser_config_to_json(const DenoiserConfig& cfg) {
  json j;
  j["base_channels"] = cfg.base_channels;
  j["depth"] = cfg.depth;
  j["attn_resolutions"] = cfg.attn_resolutions;
  j["num_heads"] = cfg.num_heads;
  j["frame_capacity"] = cfg.frame_capacity;
  j["cond_channels"] = cfg.cond_channels;
  j["extra_in_channels"] = cfg.extra_in_channels;
  j["prompt_mode"] = to_string(cfg.prompt_mode);
  j["caption_count"] = cfg.caption_count;
  j["token_dim"] = cfg.token_dim;
  j["lora_rank"] = cfg.lora_rank;
  j["lora_alpha"] = cfg.lora_alpha;
  j["train_scope"] = to_string(cfg.train_scope);
  return j;
}

DenoiserConfig denoiser_config_from_json(const json& j) {
  DenoiserConfig cfg;
  try {
    cfg.base_channels = j.value("base_channels", cfg.base_channels);
    cfg.depth = j.value("depth", cfg.depth);
    cfg.attn_resolutions = j.value("attn_resolutions", cfg.attn_resolutions);
    cfg.num_heads = j.value("num_heads", cfg.num_heads);
    cfg.frame_capacity = j.value("frame_capacity", cfg.frame_capacity);
    cfg.cond_channels = j.value("cond_channels", cfg.cond_channels);
    cfg.extra_in_channels = j.value("extra_in_channels", cfg.extra_in_channels);
    cfg.prompt_mode = prompt_mode_from_string(j.value("prompt_mode", to_string(cfg.prompt_mode)));
    cfg.caption_count = j.value("caption_count", cfg.caption_count);
    cfg.token_dim = j.value("token_dim", cfg.token_dim);
    cfg.lora_rank = j.value("lora_rank", cfg.lora_rank);
    cfg.lora_alpha = j.value("lora_alpha", cfg.lora_alpha);
    cfg.train_scope = train_scope_from_string(j.value("train_scope", to_string(cfg.train_scope)));
  } catch (const json::exception& e) {
    fail(ErrKind::config, std::string("denoiser config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::string& dir, const json& manifest, const nn::ParamStore& ps) {
  fs::create_directories(dir);
  nn::save_tensor_archive((fs::path(dir) / "weights.mvta").string(), ps.snapshot());
  std::ofstream mf((fs::path(dir) / "manifest.json").string(), std::ios::trunc);
  require(mf.good(), ErrKind::io, "cannot write manifest.json in " + dir);
  mf << manifest.dump(2) << "\n";
  require(mf.good(), ErrKind::io, "failed writing manifest.json in " + dir);
}

json load_checkpoint_manifest(const std::string& dir) {
  std::ifstream mf((fs::path(dir) / "manifest.json").string());
  require(mf.good(), ErrKind::io, "not a checkpoint (missing manifest.json): " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    fail(ErrKind::io, std::string("manifest.json parse error: ") + e.what());
  }
  return manifest;
}

void load_checkpoint_weights(const std::string& dir, nn::ParamStore& ps) {
  ps.load(nn::load_tensor_archive((fs::path(dir) / "weights.mvta").string()));
}

}  // namespace mvi::denoise
