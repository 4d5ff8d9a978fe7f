#include "flowgroup/flowgroup.hpp"

#include <cmath>

#include "maskkit/maskkit.hpp"

namespace mvi::flowgroup {

using nn::Var;

namespace {

constexpr int kFlowMaskDilation = 5;

int norm_groups(int channels) {
  for (int g : {8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

// Standard sinusoidal position code over the frame axis.
nn::Tensor temporal_position_code(int frames, int dim) {
  nn::Tensor pe = nn::Tensor::zeros({frames, dim});
  for (int n = 0; n < frames; ++n) {
    for (int i = 0; i < dim; i += 2) {
      const double omega = std::pow(10000.0, -double(i) / double(dim));
      pe.data()[size_t(n) * dim + i] = std::sin(n * omega);
      if (i + 1 < dim) pe.data()[size_t(n) * dim + i + 1] = std::cos(n * omega);
    }
  }
  return pe;
}

}  // namespace

FlowMode flow_mode_from_string(const std::string& s) {
  if (s == "none") return FlowMode::none;
  if (s == "dense") return FlowMode::dense;
  if (s == "slot2d") return FlowMode::slot2d;
  if (s == "slot3d") return FlowMode::slot3d;
  fail(ErrKind::config, "unknown flow mode: " + s);
}

FlowInject flow_inject_from_string(const std::string& s) {
  if (s == "none") return FlowInject::none;
  if (s == "cross_attn_token") return FlowInject::cross_attn_token;
  if (s == "time_emb_add") return FlowInject::time_emb_add;
  fail(ErrKind::config, "unknown flow inject: " + s);
}

std::string to_string(FlowMode m) {
  switch (m) {
    case FlowMode::none: return "none";
    case FlowMode::dense: return "dense";
    case FlowMode::slot2d: return "slot2d";
    case FlowMode::slot3d: return "slot3d";
  }
  fail(ErrKind::config, "unknown flow mode value");
}

std::string to_string(FlowInject i) {
  switch (i) {
    case FlowInject::none: return "none";
    case FlowInject::cross_attn_token: return "cross_attn_token";
    case FlowInject::time_emb_add: return "time_emb_add";
  }
  fail(ErrKind::config, "unknown flow inject value");
}

void FlowGroupConfig::validate() const {
  require(slots >= 1, ErrKind::config, "flow.slots must be at least 1");
  require(dim >= 1 && token_dim >= 1 && time_dim >= 1, ErrKind::config,
          "flow widths must be positive");
  const bool slotted = mode == FlowMode::slot2d || mode == FlowMode::slot3d;
  if (slotted) {
    require(inject != FlowInject::none, ErrKind::config,
            "slot flow modes need an inject method");
  } else {
    require(inject == FlowInject::none, ErrKind::config,
            "flow inject requires a slot mode");
  }
}

FlowGroup::FlowGroup(const FlowGroupConfig& cfg, nn::ParamStore& ps, Rng& rng,
                     const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  require(cfg_.mode != FlowMode::none, ErrKind::config,
          "flow mode none builds no grouping module");

  const int d = cfg_.dim;
  const int g = norm_groups(d);
  conv1_ = nn::Conv2d::create(ps, prefix + "enc.conv1", 2, d, 3, 2, 1, rng);
  gn1_ = nn::GroupNormLayer::create(ps, prefix + "enc.gn1", d, g);
  conv2_ = nn::Conv2d::create(ps, prefix + "enc.conv2", d, d, 3, 2, 1, rng);
  gn2_ = nn::GroupNormLayer::create(ps, prefix + "enc.gn2", d, g);
  conv3_ = nn::Conv2d::create(ps, prefix + "enc.conv3", d, d, 3, 2, 1, rng);
  gn3_ = nn::GroupNormLayer::create(ps, prefix + "enc.gn3", d, g);
  if (cfg_.mode == FlowMode::dense) return;

  queries_ = ps.create(prefix + "slot.queries", nn::Tensor::randn({cfg_.slots, d}, rng, 0.02));
  wq_ = nn::LinearNoBias::create(ps, prefix + "slot.wq", d, d, rng);
  wk_ = nn::LinearNoBias::create(ps, prefix + "slot.wk", d, d, rng);
  wv_ = nn::LinearNoBias::create(ps, prefix + "slot.wv", d, d, rng);
  fuse_ = nn::Linear::create(ps, prefix + "fuse", cfg_.slots * d, d, rng);

  if (cfg_.mode == FlowMode::slot3d) {
    t_wq_ = nn::LinearNoBias::create(ps, prefix + "temporal.wq", d, d, rng);
    t_wk_ = nn::LinearNoBias::create(ps, prefix + "temporal.wk", d, d, rng);
    t_wv_ = nn::LinearNoBias::create(ps, prefix + "temporal.wv", d, d, rng);
    // Zero-init output projection: the temporal residual starts as identity.
    t_wo_ = nn::LinearNoBias::create(ps, prefix + "temporal.wo", d, d, rng, true);
  }
  if (cfg_.inject == FlowInject::cross_attn_token) {
    token_proj_ = nn::LinearNoBias::create(ps, prefix + "inject.token", d, cfg_.token_dim, rng);
  } else {
    time_proj_ = nn::LinearNoBias::create(ps, prefix + "inject.time", d, cfg_.time_dim, rng);
  }
}

Var FlowGroup::encode_flow(const std::vector<FlowField>& flows,
                           const std::vector<Mask>& masks) const {
  require_arg(!flows.empty(), "encode_flow: no flow fields");
  require_arg(flows.size() == masks.size(), "encode_flow: flow/mask count mismatch");
  const int n = int(flows.size());
  const int h = flows[0].h;
  const int w = flows[0].w;
  require_arg(h > 0 && w > 0, "encode_flow: empty flow field");

  nn::Tensor x = nn::Tensor::zeros({n, 2, h, w});
  for (int f = 0; f < n; ++f) {
    const FlowField& flow = flows[size_t(f)];
    const Mask& mask = masks[size_t(f)];
    require_arg(flow.h == h && flow.w == w && mask.h == h && mask.w == w,
                "encode_flow: shape mismatch");
    const Mask dilated = maskkit::dilate(mask, kFlowMaskDilation);
    double* dst = x.data() + size_t(f) * 2 * h * w;
    for (int y = 0; y < h; ++y) {
      for (int px = 0; px < w; ++px) {
        if (dilated.at(y, px)) continue;  // masked region carries no motion
        dst[size_t(y) * w + px] = flow.dx(y, px);
        dst[size_t(h) * w + size_t(y) * w + px] = flow.dy(y, px);
      }
    }
  }

  Var v = nn::constant(std::move(x));
  v = nn::silu(gn1_.forward(conv1_.forward(v)));
  v = nn::silu(gn2_.forward(conv2_.forward(v)));
  v = nn::silu(gn3_.forward(conv3_.forward(v)));
  return v;
}

Var FlowGroup::slot_attention(const nn::Var& feats) const {
  require(cfg_.mode != FlowMode::dense, ErrKind::config,
          "dense flow mode has no slot pipeline");
  const auto& shape = feats->value.shape();
  require_arg(shape.size() == 2 && shape[1] == cfg_.dim, "slot_attention: expected [L, dim]");
  require_arg(shape[0] >= 1, "slot_attention: empty feature set");
  const Var qp = wq_.forward(queries_);
  const Var kp = wk_.forward(feats);
  const Var vp = wv_.forward(feats);
  return nn::query_softmax_attention(qp, kp, vp, 1.0 / std::sqrt(double(cfg_.dim)));
}

Var FlowGroup::fuse_slots(const nn::Var& slots) const {
  require(cfg_.mode != FlowMode::dense, ErrKind::config,
          "dense flow mode has no slot pipeline");
  const auto& shape = slots->value.shape();
  require_arg(shape.size() == 2 && shape[0] == cfg_.slots && shape[1] == cfg_.dim,
              "fuse_slots: expected [slots, dim]");
  Var flat = nn::reshape(slots, {1, cfg_.slots * cfg_.dim});
  return nn::reshape(fuse_.forward(flat), {cfg_.dim});
}

Var FlowGroup::frame_features(const nn::Var& feats, int frame) const {
  const auto& s = feats->value.shape();
  const int l = s[2] * s[3];
  Var f = nn::select_frame(feats, frame);            // [dim, h', w']
  f = nn::reshape(f, {cfg_.dim, l, 1});
  f = nn::permute_102(f);                            // [l, dim, 1]
  return nn::reshape(f, {l, cfg_.dim});
}

std::vector<Var> FlowGroup::group_flow(const nn::Var& feats) const {
  const auto& s = feats->value.shape();
  require_arg(s.size() == 4 && s[1] == cfg_.dim, "group_flow: expected [N, dim, h', w']");
  const int n = s[0];
  const int l = s[2] * s[3];
  require_arg(n >= 1, "group_flow: no frames");

  std::vector<Var> out;
  if (cfg_.mode == FlowMode::slot2d) {
    out.reserve(size_t(n));
    for (int f = 0; f < n; ++f) {
      out.push_back(fuse_slots(slot_attention(frame_features(feats, f))));
    }
    return out;
  }
  require(cfg_.mode == FlowMode::slot3d, ErrKind::config,
          "group_flow needs a slot mode");

  Var all;  // [N*l, dim] feature pool shared by the slots
  if (n == 1) {
    all = frame_features(feats, 0);
  } else {
    std::vector<Var> frames;
    frames.reserve(size_t(n));
    for (int f = 0; f < n; ++f) frames.push_back(frame_features(feats, f));
    Var base = nn::permute_102(nn::stack_frames(frames));  // [l, N, dim]

    Var att_in = base;
    if (cfg_.temporal_pos_enc) {
      nn::Tensor pe = temporal_position_code(n, cfg_.dim);
      nn::Tensor tiled = nn::Tensor::zeros({l, n, cfg_.dim});
      for (int i = 0; i < l; ++i) {
        std::copy(pe.data(), pe.data() + size_t(n) * cfg_.dim,
                  tiled.data() + size_t(i) * n * cfg_.dim);
      }
      att_in = nn::add(base, nn::constant(std::move(tiled)));
    }
    auto proj = [&](const nn::LinearNoBias& lin, const Var& x) {
      return nn::reshape(lin.forward(nn::reshape(x, {l * n, cfg_.dim})), {l, n, cfg_.dim});
    };
    const Var att = nn::attention(proj(t_wq_, att_in), proj(t_wk_, att_in), proj(t_wv_, att_in),
                                  1.0 / std::sqrt(double(cfg_.dim)));
    const Var mixed = nn::add(base, proj(t_wo_, att));     // residual around attention
    all = nn::reshape(nn::permute_102(mixed), {n * l, cfg_.dim});
  }
  out.push_back(fuse_slots(slot_attention(all)));
  return out;
}

MotionPayload FlowGroup::inject_motion(const std::vector<Var>& embeddings) const {
  require(cfg_.mode == FlowMode::slot2d || cfg_.mode == FlowMode::slot3d, ErrKind::config,
          "inject_motion needs a slot mode");
  require_arg(!embeddings.empty(), "inject_motion: no embeddings");

  MotionPayload payload;
  payload.inject = cfg_.inject;
  for (const Var& e : embeddings) {
    require_arg(e->value.shape() == std::vector<int>{cfg_.dim},
                "inject_motion: embedding has wrong shape");
    const Var row = nn::reshape(e, {1, cfg_.dim});
    if (cfg_.inject == FlowInject::cross_attn_token) {
      payload.tokens.push_back(token_proj_.forward(row));
    } else {
      payload.time_add.push_back(nn::reshape(time_proj_.forward(row), {cfg_.time_dim}));
    }
  }
  return payload;
}

Var FlowGroup::dense_features(const nn::Var& feats, int target_h, int target_w) const {
  require(cfg_.mode == FlowMode::dense, ErrKind::config,
          "dense_features requires flow mode dense");
  const auto& s = feats->value.shape();
  require_arg(s.size() == 4, "dense_features: expected [N, dim, h', w']");
  Var v = feats;
  int h = s[2], w = s[3];
  while (h < target_h || w < target_w) {
    v = nn::upsample_nearest2(v);
    h *= 2;
    w *= 2;
  }
  require_arg(h == target_h && w == target_w,
              "dense_features: target size is not a power-of-two multiple");
  return v;
}

}  // namespace mvi::flowgroup
