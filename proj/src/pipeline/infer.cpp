#include <algorithm>
#include <cstring>

#include "pipeline/pipeline.hpp"

namespace mvi::pipeline {

using nn::Var;

namespace {

void require_rgb_like(const std::vector<ImageF>& frames, int h, int w, const char* what) {
  for (size_t i = 0; i < frames.size(); ++i)
    require_arg(frames[i].h == h && frames[i].w == w && frames[i].c == 3,
                std::string(what) + " " + std::to_string(i) + " has the wrong shape");
}

Mask full_mask(int h, int w) {
  Mask m(h, w);
  std::fill(m.v.begin(), m.v.end(), uint8_t(1));
  return m;
}

size_t total_masked(const std::vector<Mask>& masks) {
  size_t n = 0;
  for (const Mask& m : masks) n += m.count();
  return n;
}

}  // namespace

std::vector<ImageF> inpaint_frames(const ModelBundle& mb, const std::vector<ImageF>& frames,
                                   const std::vector<Mask>& masks,
                                   const std::vector<FlowField>& flows, int caption_id,
                                   Rng& rng) {
  const int f = int(frames.size());
  require_arg(f >= 1, "inpaint_frames: empty clip");
  require_arg(int(masks.size()) == f, "inpaint_frames: one mask per frame required");
  require_arg(int(flows.size()) == f - 1, "inpaint_frames: expected one flow per frame pair");
  require_arg(f <= mb.frame_capacity(), "inpaint_frames: clip exceeds the frame capacity");
  const int h = frames[0].h, w = frames[0].w;
  require_rgb_like(frames, h, w, "inpaint_frames: frame");
  for (int i = 0; i < f; ++i)
    require_arg(masks[size_t(i)].h == h && masks[size_t(i)].w == w,
                "inpaint_frames: mask " + std::to_string(i) + " has the wrong shape");
  for (int i = 0; i + 1 < f; ++i)
    require_arg(flows[size_t(i)].h == h && flows[size_t(i)].w == w,
                "inpaint_frames: flow " + std::to_string(i) + " has the wrong shape");
  require_arg(masks[0].empty_mask(),
              "inpaint_frames: the first frame is the clean reference; its mask must be empty");

  if (total_masked(masks) == 0) return frames;  // nothing to generate

  nn::NoGradGuard ng;
  const PipelineConfig& cfg = mb.cfg;

  diffusion::CondChannels conds;
  conds.clean = frames_to_latent(frames);
  conds.masks = masks;

  flowgroup::MotionPayload payload;
  if (mb.flow && f > 1) {
    const std::vector<Mask> flow_masks(masks.begin(), masks.end() - 1);
    const Var feats = mb.flow->encode_flow(flows, flow_masks);
    if (cfg.flow.mode == flowgroup::FlowMode::dense) {
      const Tensor dense = mb.flow->dense_features(feats, h, w)->value;  // [f-1, dim, h, w]
      Tensor extra = Tensor::zeros({f, cfg.flow.dim, h, w});  // frame 0 keeps zero planes
      const int64_t per_frame = int64_t(cfg.flow.dim) * h * w;
      std::memcpy(extra.data() + per_frame, dense.data(),
                  size_t((f - 1) * per_frame) * sizeof(double));
      conds.extra = std::move(extra);
    } else {
      payload = mb.flow->inject_motion(mb.flow->group_flow(feats));
    }
  } else if (mb.flow && cfg.flow.mode == flowgroup::FlowMode::dense) {
    conds.extra = Tensor::zeros({f, cfg.flow.dim, h, w});
  }

  const Var prompt = mb.model->prompt_embed(caption_id);
  const diffusion::NoiseSchedule sched = diffusion::make_schedule(cfg.schedule, cfg.diffusion_T);
  const diffusion::EpsModel model = [&](const Tensor& x, int t) {
    return mb.model->forward(nn::constant(x), t, prompt, payload)->value;
  };
  const Tensor zhat = diffusion::ddim_sample(model, conds, sched, cfg.sample, rng);

  const std::vector<ImageF> gen = latent_to_frames(zhat);
  std::vector<ImageF> out;
  out.reserve(size_t(f));
  for (int i = 0; i < f; ++i)
    out.push_back(diffusion::blend_unmasked(gen[size_t(i)], frames[size_t(i)], masks[size_t(i)]));
  return out;
}

std::vector<ImageF> remove_objects(const std::vector<ImageF>& seq, const std::vector<Mask>& masks,
                                   const std::vector<FlowField>& flows, const ModelBundle& mb,
                                   int caption_id, Rng& rng) {
  require(mb.cfg.train.mode == maskkit::MaskMode::forward_facing, ErrKind::config,
          "removal needs a forward-facing checkpoint; this one was trained object-centric");
  return inpaint_frames(mb, seq, masks, flows, caption_id, rng);
}

namespace {

// Clean up the reference view by inpainting it against itself: a two-frame
// clip of the same image under identity motion, masked only in the copy.
ImageF self_clean_reference(const scene::SceneBundle& bundle, const ModelBundle& mb,
                            const RemoveParams& p, Rng& rng) {
  const int res = bundle.resolution();
  if (bundle.object_masks[0].empty_mask()) return bundle.frames[0];

  const std::vector<ImageF> pair{bundle.frames[0], bundle.frames[0]};
  const std::vector<Mask> masks{Mask(res, res),
                                maskkit::dilate(bundle.object_masks[0], p.dilate_radius)};
  FlowField still(res, res);
  std::fill(still.valid.begin(), still.valid.end(), uint8_t(1));
  const std::vector<ImageF> out = remove_objects(
      pair, masks, {still}, mb, caption_for(bundle, mb.cfg), rng);
  return out[1];
}

}  // namespace

RemoveResult remove_scene_objects(const scene::SceneBundle& bundle, const ModelBundle& mb,
                                  const RemoveParams& p, Rng& rng) {
  const int n = bundle.num_frames();
  const int res = bundle.resolution();
  require_arg(n >= 1, "remove_scene_objects: empty bundle");
  require_arg(p.dilate_radius >= 0, "remove_scene_objects: negative dilation radius");

  std::vector<ImageF> seq = bundle.frames;
  if (p.self_reference) {
    seq[0] = self_clean_reference(bundle, mb, p, rng);
  } else {
    require(!bundle.background.empty(), ErrKind::invalid_argument,
            "bundle carries no clean background reference; use the self-reference fallback");
    seq[0] = bundle.background[0];
  }

  RemoveResult r;
  r.masks.emplace_back(res, res);  // the reference view stays untouched
  for (int i = 1; i < n; ++i)
    r.masks.push_back(maskkit::dilate(bundle.object_masks[size_t(i)], p.dilate_radius));
  r.frames = remove_objects(seq, r.masks, bundle.flows, mb, caption_for(bundle, mb.cfg), rng);
  return r;
}

InsertResult insert_object(const scene::SceneBundle& bundle, const ImageF& ref_edit_frame,
                           const adapt::BoxFootprint& footprint, const ModelBundle* remover,
                           const ModelBundle& inserter, const InsertParams& p, Rng& rng) {
  const int n = bundle.num_frames();
  const int res = bundle.resolution();
  require_arg(n >= 1, "insert_object: empty bundle");
  require_arg(ref_edit_frame.h == res && ref_edit_frame.w == res && ref_edit_frame.c == 3,
              "insert_object: the edited reference must match the bundle resolution");
  require(inserter.cfg.train.mode == maskkit::MaskMode::object_centric, ErrKind::config,
          "insertion needs an object-centric checkpoint");

  std::vector<ImageF> seq;
  if (p.skip_removal) {
    seq = bundle.frames;
  } else {
    require(remover != nullptr, ErrKind::invalid_argument,
            "insert_object: removal stage requested without a forward-facing model");
    seq = remove_scene_objects(bundle, *remover, p.removal, rng).frames;
  }
  seq[0] = ref_edit_frame;

  InsertResult r;
  r.adapted_masks.emplace_back(res, res);  // the reference view is given, not generated
  for (int v = 1; v < n; ++v) {
    try {
      r.adapted_masks.push_back(adapt::adapt_box_mask(footprint, bundle.homographies[size_t(v)],
                                                      res, res, p.adapt, &rng));
    } catch (const Error& e) {
      fail(e.kind(), "view " + std::to_string(v) + ": " + e.what());
    }
  }

  r.frames = inpaint_frames(inserter, seq, r.adapted_masks, bundle.flows,
                            caption_for(bundle, inserter.cfg), rng);
  return r;
}

std::vector<int> default_keyframes(int total) {
  require_arg(total >= 1, "default_keyframes: empty sequence");
  std::vector<int> ks;
  for (int i = 0; i < total; i += 4) ks.push_back(i);
  return ks;
}

std::vector<ImageF> interpolate_frames(const std::vector<ImageF>& keyframe_results,
                                       const std::vector<int>& keyframes,
                                       const scene::SceneBundle& bundle, const ModelBundle& mb,
                                       const InterpParams& p, Rng& rng) {
  const int total = bundle.num_frames();
  const int res = bundle.resolution();
  require_arg(keyframes.size() == keyframe_results.size(),
              "interpolate_frames: one result image per keyframe required");
  require_arg(!keyframes.empty() && keyframes[0] == 0,
              "interpolate_frames: keyframes must start at frame 0");
  for (size_t i = 0; i < keyframes.size(); ++i) {
    require_arg(keyframes[i] >= 0 && keyframes[i] < total,
                "interpolate_frames: keyframe " + std::to_string(keyframes[i]) +
                    " outside the sequence");
    if (i > 0)
      require_arg(keyframes[i] > keyframes[i - 1],
                  "interpolate_frames: keyframes must strictly increase");
  }
  require_rgb_like(keyframe_results, res, res, "interpolate_frames: keyframe result");

  if (int(keyframes.size()) == total) return keyframe_results;  // nothing left to fill

  const int window = p.window == 0 ? mb.frame_capacity() : p.window;
  require_arg(window <= mb.frame_capacity(),
              "interpolate_frames: window exceeds the frame capacity");
  require_arg(window >= 2, "interpolate_frames: window must hold at least two frames");
  require_arg(p.max_fixed >= 1, "interpolate_frames: at least one fixed frame required");

  std::vector<ImageF> out(static_cast<size_t>(total));
  std::vector<char> done(size_t(total), 0);
  for (size_t i = 0; i < keyframes.size(); ++i) {
    out[size_t(keyframes[i])] = keyframe_results[i];
    done[size_t(keyframes[i])] = 1;
  }

  for (;;) {
    int first = -1;
    for (int i = 0; i < total; ++i)
      if (!done[size_t(i)]) {
        first = i;
        break;
      }
    if (first < 0) break;

    // Up to max_fixed finished frames directly left of the gap stay clean.
    std::vector<int> clip;
    const int fixed_budget = std::min(p.max_fixed, window - 1);
    for (int i = first - 1; i >= 0 && int(clip.size()) < fixed_budget; --i)
      if (done[size_t(i)]) clip.push_back(i);
    std::reverse(clip.begin(), clip.end());
    const int n_fixed = int(clip.size());

    std::vector<int> targets;
    for (int i = first; i < total && int(clip.size()) < window && !done[size_t(i)]; ++i) {
      clip.push_back(i);
      targets.push_back(i);
    }

    const scene::SceneBundle sub = slice_bundle(bundle, clip);
    std::vector<ImageF> clip_frames;
    std::vector<Mask> clip_masks;
    for (int k = 0; k < int(clip.size()); ++k) {
      if (k < n_fixed) {
        clip_frames.push_back(out[size_t(clip[size_t(k)])]);
        clip_masks.emplace_back(res, res);
      } else {
        // Targets enter fully masked with blank pixels so nothing can leak
        // around the generator.
        clip_frames.emplace_back(res, res, 3);
        clip_masks.push_back(full_mask(res, res));
      }
    }

    const std::vector<ImageF> gen = inpaint_frames(mb, clip_frames, clip_masks, sub.flows,
                                                   caption_for(bundle, mb.cfg), rng);
    for (size_t k = 0; k < targets.size(); ++k) {
      out[size_t(targets[k])] = gen[size_t(n_fixed) + k];
      done[size_t(targets[k])] = 1;
    }
  }
  return out;
}

}  // namespace mvi::pipeline
