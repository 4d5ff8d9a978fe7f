#include "pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace mvi::pipeline {

namespace fs = std::filesystem;
using nn::Var;

void TrainConfig::validate(int frame_capacity) const {
  require(phase1_frames >= 2 && phase1_frames <= frame_capacity, ErrKind::config,
          "train.phase1_frames must lie in [2, frame capacity]");
  require(phase2_min_frames >= 2 && phase2_min_frames <= phase2_max_frames &&
              phase2_max_frames <= frame_capacity,
          ErrKind::config, "train.phase2_frame_range must lie inside [2, frame capacity]");
  require(batch_size >= 1, ErrKind::config, "train.batch_size must be positive");
  require(lr > 0.0, ErrKind::config, "train.lr must be positive");
  require(steps_phase1 >= 1 && steps_phase2 >= 0, ErrKind::config,
          "train step counts must be nonnegative (phase 1 at least 1)");
  require(min_frame_interval >= 1 && min_frame_interval <= max_frame_interval, ErrKind::config,
          "train.frame_interval_range must satisfy 1 <= min <= max");
}

void PipelineConfig::validate() const {
  model.validate();
  train.validate(model.frame_capacity);
  require(diffusion_T >= 2, ErrKind::config, "diffusion.T must be at least 2");
  require(sample.steps >= 1 && sample.steps <= diffusion_T, ErrKind::config,
          "sample.steps must lie in [1, diffusion.T]");
  require(sample.eta >= 0.0, ErrKind::config, "sample.eta must be nonnegative");

  if (flow.mode == flowgroup::FlowMode::none) {
    require(model.extra_in_channels == 0, ErrKind::config,
            "extra input channels need dense flow guidance");
  } else {
    flow.validate();
    if (flow.mode == flowgroup::FlowMode::dense) {
      require(model.extra_in_channels == flow.dim, ErrKind::config,
              "dense flow planes must match the model's extra input channels");
    } else {
      require(model.extra_in_channels == 0, ErrKind::config,
              "extra input channels need dense flow guidance");
      if (flow.inject == flowgroup::FlowInject::cross_attn_token) {
        require(flow.token_dim == model.token_dim, ErrKind::config,
                "motion token width must match the model's token width");
      } else {
        require(flow.time_dim == model.time_dim(), ErrKind::config,
                "motion time embedding width must match the model's");
      }
    }
  }
  if (model.prompt_mode == denoise::PromptMode::caption_table) {
    require(model.caption_count >= 4, ErrKind::config,
            "the caption table needs one row per trajectory kind");
  }
}

nlohmann::json pipeline_config_to_json(const PipelineConfig& cfg) {
  nlohmann::json j;
  j["train"] = {
      {"phase1_frames", cfg.train.phase1_frames},
      {"phase2_frame_range", {cfg.train.phase2_min_frames, cfg.train.phase2_max_frames}},
      {"batch_size", cfg.train.batch_size},
      {"lr", cfg.train.lr},
      {"steps_phase1", cfg.train.steps_phase1},
      {"steps_phase2", cfg.train.steps_phase2},
      {"mode", maskkit::mode_to_string(cfg.train.mode)},
      {"frame_interval_range", {cfg.train.min_frame_interval, cfg.train.max_frame_interval}},
      {"seed", cfg.train.seed},
  };
  j["model"] = denoise::denoiser_config_to_json(cfg.model);
  j["flow"] = {
      {"mode", flowgroup::to_string(cfg.flow.mode)},
      {"inject", flowgroup::to_string(cfg.flow.inject)},
      {"slots", cfg.flow.slots},
      {"dim", cfg.flow.dim},
      {"token_dim", cfg.flow.token_dim},
      {"time_dim", cfg.flow.time_dim},
      {"temporal_pos_enc", cfg.flow.temporal_pos_enc},
  };
  j["diffusion"] = {{"T", cfg.diffusion_T}, {"schedule", to_string(cfg.schedule)}};
  j["sample"] = {{"steps", cfg.sample.steps}, {"eta", cfg.sample.eta}};
  j["loss"] = {{"masked_only", cfg.masked_only_loss}};
  return j;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig cfg;
  try {
    if (j.contains("train")) {
      const auto& t = j.at("train");
      cfg.train.phase1_frames = t.value("phase1_frames", cfg.train.phase1_frames);
      if (t.contains("phase2_frame_range")) {
        const auto& r = t.at("phase2_frame_range");
        cfg.train.phase2_min_frames = r.at(0).get<int>();
        cfg.train.phase2_max_frames = r.at(1).get<int>();
      }
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.lr = t.value("lr", cfg.train.lr);
      cfg.train.steps_phase1 = t.value("steps_phase1", cfg.train.steps_phase1);
      cfg.train.steps_phase2 =
          t.value("steps_phase2", std::max(1, cfg.train.steps_phase1 / 10));
      if (t.contains("mode")) cfg.train.mode = maskkit::mode_from_string(t.at("mode"));
      if (t.contains("frame_interval_range")) {
        const auto& r = t.at("frame_interval_range");
        cfg.train.min_frame_interval = r.at(0).get<int>();
        cfg.train.max_frame_interval = r.at(1).get<int>();
      }
      cfg.train.seed = t.value("seed", cfg.train.seed);
    }
    if (j.contains("model")) cfg.model = denoise::denoiser_config_from_json(j.at("model"));
    if (j.contains("flow")) {
      const auto& f = j.at("flow");
      if (f.contains("mode")) cfg.flow.mode = flowgroup::flow_mode_from_string(f.at("mode"));
      if (f.contains("inject"))
        cfg.flow.inject = flowgroup::flow_inject_from_string(f.at("inject"));
      cfg.flow.slots = f.value("slots", cfg.flow.slots);
      cfg.flow.dim = f.value("dim", cfg.flow.dim);
      cfg.flow.token_dim = f.value("token_dim", cfg.flow.token_dim);
      cfg.flow.time_dim = f.value("time_dim", cfg.flow.time_dim);
      cfg.flow.temporal_pos_enc = f.value("temporal_pos_enc", cfg.flow.temporal_pos_enc);
      if (cfg.flow.mode == flowgroup::FlowMode::none)
        cfg.flow.inject = flowgroup::FlowInject::none;
    }
    if (j.contains("diffusion")) {
      const auto& d = j.at("diffusion");
      cfg.diffusion_T = d.value("T", cfg.diffusion_T);
      if (d.contains("schedule"))
        cfg.schedule = diffusion::schedule_kind_from_string(d.at("schedule"));
    }
    if (j.contains("sample")) {
      cfg.sample.steps = j.at("sample").value("steps", cfg.sample.steps);
      cfg.sample.eta = j.at("sample").value("eta", cfg.sample.eta);
    }
    if (j.contains("loss")) cfg.masked_only_loss = j.at("loss").value("masked_only", false);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrKind::config, std::string("malformed pipeline config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::unique_ptr<ModelBundle> build_model(const PipelineConfig& cfg, Rng& rng) {
  cfg.validate();
  auto mb = std::make_unique<ModelBundle>();
  mb->cfg = cfg;
  Rng model_rng = rng.split("model");
  mb->model = std::make_unique<denoise::Denoiser>(cfg.model, mb->ps, model_rng);
  if (cfg.flow.mode != flowgroup::FlowMode::none) {
    Rng flow_rng = rng.split("flow");
    mb->flow = std::make_unique<flowgroup::FlowGroup>(cfg.flow, mb->ps, flow_rng, "flow.");
  }
  denoise::apply_train_scope(mb->ps, cfg.model.train_scope);
  return mb;
}

void save_model(const std::string& dir, const ModelBundle& mb) {
  nlohmann::json manifest;
  manifest["pipeline"] = pipeline_config_to_json(mb.cfg);
  manifest["denoiser"] = denoise::denoiser_config_to_json(mb.cfg.model);
  denoise::save_checkpoint(dir, manifest, mb.ps);
}

std::unique_ptr<ModelBundle> load_model(const std::string& dir) {
  nlohmann::json manifest = denoise::load_checkpoint_manifest(dir);
  require(manifest.contains("pipeline"), ErrKind::config,
          "checkpoint manifest carries no pipeline section: " + dir);
  PipelineConfig cfg = pipeline_config_from_json(manifest.at("pipeline"));
  Rng rng(0);  // weights are replaced right below
  auto mb = build_model(cfg, rng);
  denoise::load_checkpoint_weights(dir, mb->ps);
  return mb;
}

Tensor frames_to_latent(const std::vector<ImageF>& frames) {
  require_arg(!frames.empty(), "frames_to_latent: empty sequence");
  const int h = frames[0].h, w = frames[0].w;
  require_arg(h > 0 && w > 0 && frames[0].c == 3, "frames_to_latent: expected RGB frames");
  Tensor z = Tensor::zeros({int(frames.size()), 3, h, w});
  for (int f = 0; f < int(frames.size()); ++f) {
    const ImageF& img = frames[size_t(f)];
    require_arg(img.h == h && img.w == w && img.c == 3,
                "frames_to_latent: frame " + std::to_string(f) + " has a different shape");
    double* dst = z.data() + int64_t(f) * 3 * h * w;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          dst[(int64_t(c) * h + y) * w + x] = 2.0 * img.at(y, x, c) - 1.0;
  }
  return z;
}

std::vector<ImageF> latent_to_frames(const Tensor& z) {
  require_arg(z.ndim() == 4 && z.dim(1) == 3, "latent_to_frames: expected [F,3,H,W]");
  const int f = z.dim(0), h = z.dim(2), w = z.dim(3);
  std::vector<ImageF> out;
  out.reserve(size_t(f));
  for (int fi = 0; fi < f; ++fi) {
    ImageF img(h, w, 3);
    const double* src = z.data() + int64_t(fi) * 3 * h * w;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          img.at(y, x, c) =
              std::clamp((src[(int64_t(c) * h + y) * w + x] + 1.0) / 2.0, 0.0, 1.0);
    out.push_back(std::move(img));
  }
  return out;
}

scene::SceneBundle slice_bundle(const scene::SceneBundle& b, const std::vector<int>& idx) {
  require_arg(!idx.empty(), "slice_bundle: empty index list");
  const int m = b.num_frames();
  for (size_t i = 0; i < idx.size(); ++i) {
    require_arg(idx[i] >= 0 && idx[i] < m,
                "slice_bundle: frame index " + std::to_string(idx[i]) + " outside the bundle");
    if (i > 0)
      require_arg(idx[i] > idx[i - 1], "slice_bundle: indices must strictly increase");
  }

  scene::SceneBundle out;
  out.spec = b.spec;
  out.spec.num_frames = int(idx.size());
  for (int i : idx) {
    out.frames.push_back(b.frames[size_t(i)]);
    if (!b.background.empty()) out.background.push_back(b.background[size_t(i)]);
    out.object_masks.push_back(b.object_masks[size_t(i)]);
    out.plane_masks.push_back(b.plane_masks[size_t(i)]);
    out.homographies.push_back(b.homographies[size_t(i)]);
    if (!b.bottom_landmarks.empty()) out.bottom_landmarks.push_back(b.bottom_landmarks[size_t(i)]);
  }
  for (size_t i = 0; i + 1 < idx.size(); ++i) {
    const int a = idx[i], c = idx[i + 1];
    const Homography h_ac =
        b.homographies[size_t(c)].compose_after(b.homographies[size_t(a)].inverse());
    FlowField fl = scene::analytic_flow(h_ac, b.plane_masks[size_t(a)]);
    scene::restrict_flow_validity(fl, b.plane_masks[size_t(c)]);
    out.flows.push_back(std::move(fl));
  }
  return out;
}

int caption_for(const scene::SceneBundle& bundle, const PipelineConfig& cfg) {
  if (cfg.model.prompt_mode != denoise::PromptMode::caption_table) return -1;
  return int(bundle.spec.trajectory);
}

BatchPlanner::BatchPlanner(const std::vector<scene::SceneBundle>& scenes,
                           const PipelineConfig& cfg)
    : scenes_(&scenes), cfg_(&cfg) {
  require(!scenes.empty(), ErrKind::invalid_argument, "training dataset is empty");
  cfg.validate();
  for (int i = 0; i < int(scenes.size()); ++i) {
    const scene::SceneBundle& s = scenes[size_t(i)];
    require_arg(s.num_frames() >= 2, "scene " + std::to_string(i) + " has fewer than 2 frames");
    by_category_[scene::trajectory_to_string(s.spec.trajectory)].push_back(i);
  }
  for (const auto& [name, members] : by_category_) category_names_.push_back(name);
}

ClipPlan BatchPlanner::plan(bool phase2, Rng& rng) const {
  // Categories first so sparse ones are sampled as often as crowded ones.
  const std::string& cat =
      category_names_[size_t(rng.uniform_int(0, int(category_names_.size()) - 1))];
  const std::vector<int>& members = by_category_.at(cat);
  const int scene_index = members[size_t(rng.uniform_int(0, int(members.size()) - 1))];
  const scene::SceneBundle& s = (*scenes_)[size_t(scene_index)];
  const int available = s.num_frames();

  const TrainConfig& tc = cfg_->train;
  int frames = phase2 ? rng.uniform_int(tc.phase2_min_frames, tc.phase2_max_frames)
                      : tc.phase1_frames;
  frames = std::min(frames, available);

  const int widest = frames > 1 ? (available - 1) / (frames - 1) : 1;
  const int hi = std::clamp(tc.max_frame_interval, 1, widest);
  const int lo = std::min(tc.min_frame_interval, hi);
  const int interval = rng.uniform_int(lo, hi);
  const int start = rng.uniform_int(0, available - 1 - (frames - 1) * interval);

  ClipPlan p;
  p.scene_index = scene_index;
  for (int k = 0; k < frames; ++k) p.frame_indices.push_back(start + k * interval);
  p.caption_id = caption_for(s, *cfg_);
  return p;
}

double TrainResult::tail_mean_loss(int window) const {
  if (log.empty()) return 0.0;
  const int n = std::min<int>(window, int(log.size()));
  double s = 0.0;
  for (int i = int(log.size()) - n; i < int(log.size()); ++i) s += log[size_t(i)].loss;
  return s / double(n);
}

namespace {

// Loss of one clip: assemble the noised input, run the denoiser with motion
// guidance, and score the noise prediction.
Var clip_loss(const PipelineConfig& cfg, const ModelBundle& mb, const scene::SceneBundle& sub,
              const std::vector<Mask>& masks, int caption_id,
              const diffusion::NoiseSchedule& sched, Rng& rng) {
  const Tensor z0 = frames_to_latent(sub.frames);
  const int f = z0.dim(0), h = z0.dim(2), w = z0.dim(3);
  const int t = rng.uniform_int(0, sched.T - 1);
  const Tensor eps = Tensor::randn(z0.shape(), rng);

  flowgroup::MotionPayload payload;
  Var dense;
  if (mb.flow && f > 1) {
    const std::vector<Mask> flow_masks(masks.begin(), masks.end() - 1);
    const Var feats = mb.flow->encode_flow(sub.flows, flow_masks);
    if (cfg.flow.mode == flowgroup::FlowMode::dense) {
      dense = mb.flow->dense_features(feats, h, w);
    } else {
      payload = mb.flow->inject_motion(mb.flow->group_flow(feats));
    }
  }

  const diffusion::AssembledInput ai = diffusion::assemble_input(z0, masks, t, eps, sched);
  Var x = nn::constant(ai.x);
  if (dense) {
    // Frame 0 precedes every flow, so it gets a zero guidance plane.
    std::vector<Var> planes;
    planes.push_back(nn::constant(Tensor::zeros({cfg.flow.dim, h, w})));
    for (int fi = 0; fi + 1 < f; ++fi) planes.push_back(nn::select_frame(dense, fi));
    x = nn::concat_channels(x, nn::stack_frames(planes));
  }

  const Var prompt = mb.model->prompt_embed(caption_id);
  const Var pred = mb.model->forward(x, t, prompt, payload);

  bool any_masked = false;
  for (const Mask& m : masks) any_masked = any_masked || !m.empty_mask();
  if (cfg.masked_only_loss && any_masked)
    return diffusion::epsilon_loss_masked(pred, eps, ai.mask_ds);
  return diffusion::epsilon_loss(pred, eps);
}

}  // namespace

TrainResult train(const PipelineConfig& cfg, const std::vector<scene::SceneBundle>& scenes,
                  ModelBundle& mb) {
  cfg.validate();
  const BatchPlanner planner(scenes, cfg);  // rejects an empty dataset up front
  const diffusion::NoiseSchedule sched =
      diffusion::make_schedule(cfg.schedule, cfg.diffusion_T);

  Rng root(cfg.train.seed);
  Rng plan_rng = root.split("plan");
  Rng mask_rng = root.split("masks");
  Rng noise_rng = root.split("noise");

  denoise::apply_train_scope(mb.ps, cfg.model.train_scope);
  nn::Adam opt(cfg.train.lr);

  TrainResult result;
  const int total = cfg.train.steps_phase1 + cfg.train.steps_phase2;
  for (int step = 0; step < total; ++step) {
    const bool phase2 = step >= cfg.train.steps_phase1;
    mb.ps.zero_grad();

    Var loss;
    int logged_frames = 0;
    for (int b = 0; b < cfg.train.batch_size; ++b) {
      const ClipPlan plan = planner.plan(phase2, plan_rng);
      if (b == 0) logged_frames = int(plan.frame_indices.size());
      const scene::SceneBundle sub =
          slice_bundle(scenes[size_t(plan.scene_index)], plan.frame_indices);
      const maskkit::MaskSet ms = maskkit::sample_training_masks(sub, cfg.train.mode, mask_rng);
      const Var item = clip_loss(cfg, mb, sub, ms.masks, plan.caption_id, sched, noise_rng);
      loss = b == 0 ? item : nn::add(loss, item);
    }
    if (cfg.train.batch_size > 1) loss = nn::scale(loss, 1.0 / double(cfg.train.batch_size));

    nn::backward(loss);
    nn::clip_grad_norm(mb.ps, 1.0);
    opt.step(mb.ps);

    result.log.push_back({step, phase2 ? 2 : 1, logged_frames, loss->value.data()[0]});
  }
  return result;
}

TrainResult train(const PipelineConfig& cfg, const std::string& data_root,
                  const std::string& out_dir) {
  require(fs::is_directory(data_root), ErrKind::io, "data root is not a directory: " + data_root);
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(data_root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json"))
      dirs.push_back(entry.path().string());
  }
  std::sort(dirs.begin(), dirs.end());
  require(!dirs.empty(), ErrKind::invalid_argument,
          "no scene bundles under " + data_root);  // fail before any training work

  std::vector<scene::SceneBundle> scenes;
  scenes.reserve(dirs.size());
  for (const std::string& d : dirs) scenes.push_back(scene::load_bundle(d));

  Rng root(cfg.train.seed);
  Rng init_rng = root.split("init");
  auto mb = build_model(cfg, init_rng);
  TrainResult result = train(cfg, scenes, *mb);

  fs::create_directories(out_dir);
  save_model(out_dir, *mb);
  std::ofstream log(fs::path(out_dir) / "loss_log.csv");
  require(bool(log), ErrKind::io, "cannot write loss log under " + out_dir);
  log << "step,phase,frames,loss\n";
  for (const TrainResult::Step& s : result.log)
    log << s.step << "," << s.phase << "," << s.frames << "," << s.loss << "\n";
  return result;
}

}  // namespace mvi::pipeline
