#include "mvinpainter/mvi.h"

#include <Eigen/Core>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>

#include "pipeline/pipeline.hpp"

namespace fs = std::filesystem;

using namespace mvi;

struct mvi_scene {
  scene::SceneBundle b;
};

struct mvi_model {
  std::unique_ptr<pipeline::ModelBundle> mb;
};

namespace {

thread_local std::string g_last_error;

mvi_status status_of(ErrKind k) {
  switch (k) {
    case ErrKind::invalid_argument: return MVI_ERR_INVALID_ARGUMENT;
    case ErrKind::io: return MVI_ERR_IO;
    case ErrKind::config: return MVI_ERR_CONFIG;
    case ErrKind::numeric: return MVI_ERR_NUMERIC;
    case ErrKind::unsupported: return MVI_ERR_UNSUPPORTED;
  }
  return MVI_ERR_INTERNAL;
}

void apply_runtime_policy() {
  const char* v = std::getenv("MVI_DETERMINISTIC");
  if (v != nullptr && std::strcmp(v, "1") == 0) Eigen::setNbThreads(1);
}

// Exception barrier shared by every entry point.
template <typename Fn>
mvi_status guarded(Fn&& fn) {
  apply_runtime_policy();
  try {
    fn();
    g_last_error.clear();
    return MVI_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("malformed JSON: ") + e.what();
    return MVI_ERR_CONFIG;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MVI_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return MVI_ERR_INTERNAL;
  }
}

void require_out(const void* p, const char* what) {
  require_arg(p != nullptr, std::string(what) + " must not be null");
}

nlohmann::json parse_json(const char* text, const char* what) {
  require_out(text, what);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrKind::config, std::string(what) + ": " + e.what());
  }
}

adapt::BoxFootprint footprint_from_json(const char* landmarks_json) {
  const nlohmann::json j = parse_json(landmarks_json, "landmarks");
  require(j.contains("bottom") && j.at("bottom").is_array() && j.at("bottom").size() == 4,
          ErrKind::config, "landmarks need a \"bottom\" array of 4 [x,y] points");
  adapt::BoxFootprint fp;
  for (size_t i = 0; i < 4; ++i) {
    const auto& p = j.at("bottom").at(i);
    require(p.is_array() && p.size() == 2, ErrKind::config,
            "landmark points must be [x,y] pairs");
    fp.bottom[i] = Vec2(p.at(0).get<double>(), p.at(1).get<double>());
  }
  require(j.contains("height_px"), ErrKind::config, "landmarks need a \"height_px\" value");
  fp.height_px = j.at("height_px").get<double>();
  return fp;
}

void write_frames(const std::string& out_dir, const std::vector<ImageF>& frames) {
  fs::create_directories(fs::path(out_dir) / "frames");
  for (int i = 0; i < int(frames.size()); ++i)
    write_png_rgb((fs::path(out_dir) / "frames" / (scene::frame_name(i) + ".png")).string(),
                  frames[size_t(i)]);
}

void write_masks(const std::string& out_dir, const std::vector<Mask>& masks) {
  fs::create_directories(fs::path(out_dir) / "masks");
  for (int i = 0; i < int(masks.size()); ++i)
    write_png_gray((fs::path(out_dir) / "masks" / (scene::frame_name(i) + ".png")).string(),
                   masks[size_t(i)]);
}

const scene::SceneBundle& bundle_of(const mvi_scene* s) {
  require_out(s, "scene");
  return s->b;
}

const pipeline::ModelBundle& model_of(const mvi_model* m) {
  require_out(m, "model");
  return *m->mb;
}

}  // namespace

extern "C" {

const char* mvi_status_name(mvi_status s) {
  switch (s) {
    case MVI_OK: return "ok";
    case MVI_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case MVI_ERR_CONFIG: return "config";
    case MVI_ERR_IO: return "io";
    case MVI_ERR_NUMERIC: return "numeric";
    case MVI_ERR_UNSUPPORTED: return "unsupported";
    case MVI_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* mvi_last_error(void) { return g_last_error.c_str(); }

void mvi_runtime_init(void) { apply_runtime_policy(); }

mvi_status mvi_scene_generate(const char* spec_json, mvi_scene** out) {
  return guarded([&] {
    require_out(out, "out");
    const scene::SceneSpec spec = scene::spec_from_json(parse_json(spec_json, "scene spec"));
    auto s = std::make_unique<mvi_scene>();
    s->b = scene::render_scene(spec);
    *out = s.release();
  });
}

mvi_status mvi_scene_load(const char* dir, mvi_scene** out) {
  return guarded([&] {
    require_out(out, "out");
    require_out(dir, "dir");
    auto s = std::make_unique<mvi_scene>();
    s->b = scene::load_bundle(dir);
    *out = s.release();
  });
}

mvi_status mvi_scene_save(const mvi_scene* s, const char* dir) {
  return guarded([&] {
    require_out(dir, "dir");
    scene::save_bundle(dir, bundle_of(s));
  });
}

mvi_status mvi_scene_num_frames(const mvi_scene* s, int* out) {
  return guarded([&] {
    require_out(out, "out");
    *out = bundle_of(s).num_frames();
  });
}

mvi_status mvi_scene_resolution(const mvi_scene* s, int* out) {
  return guarded([&] {
    require_out(out, "out");
    *out = bundle_of(s).resolution();
  });
}

void mvi_scene_free(mvi_scene* s) { delete s; }

mvi_status mvi_gen_data(const char* config_json, const char* out_dir, uint64_t seed) {
  return guarded([&] {
    require_out(out_dir, "out_dir");
    const nlohmann::json cfg = parse_json(config_json, "gen-data config");
    require(cfg.contains("scenes") && cfg.at("scenes").is_array() && !cfg.at("scenes").empty(),
            ErrKind::config, "gen-data config needs a non-empty \"scenes\" array");
    int index = 0;
    for (const nlohmann::json& entry : cfg.at("scenes")) {
      scene::SceneSpec spec = scene::spec_from_json(entry);
      if (!entry.contains("rng_seed")) spec.rng_seed = seed + 7919 * uint64_t(index);
      if (!entry.contains("plane_texture_seed"))
        spec.plane_texture_seed = seed + 104729 + uint64_t(index);
      std::string name = entry.value("name", std::string());
      if (name.empty()) name = "scene_" + scene::frame_name(index);
      scene::save_bundle((fs::path(out_dir) / name).string(), scene::render_scene(spec));
      ++index;
    }
  });
}

mvi_status mvi_model_load(const char* checkpoint_dir, mvi_model** out) {
  return guarded([&] {
    require_out(out, "out");
    require_out(checkpoint_dir, "checkpoint_dir");
    auto m = std::make_unique<mvi_model>();
    m->mb = pipeline::load_model(checkpoint_dir);
    *out = m.release();
  });
}

mvi_status mvi_model_mode(const mvi_model* m, char* buf, size_t cap) {
  return guarded([&] {
    require_out(buf, "buf");
    const std::string mode = maskkit::mode_to_string(model_of(m).cfg.train.mode);
    require_arg(cap > mode.size(), "buffer too small for the mode name");
    std::memcpy(buf, mode.c_str(), mode.size() + 1);
  });
}

void mvi_model_free(mvi_model* m) { delete m; }

mvi_status mvi_train(const char* config_json, const char* data_root, const char* out_dir,
                     int has_seed, uint64_t seed, double* tail_loss) {
  return guarded([&] {
    require_out(data_root, "data_root");
    require_out(out_dir, "out_dir");
    pipeline::PipelineConfig cfg =
        pipeline::pipeline_config_from_json(parse_json(config_json, "pipeline config"));
    if (has_seed != 0) cfg.train.seed = seed;
    const pipeline::TrainResult r = pipeline::train(cfg, data_root, out_dir);
    if (tail_loss != nullptr) *tail_loss = r.tail_mean_loss();
  });
}

mvi_status mvi_sample(const mvi_scene* s, const mvi_model* m, uint64_t seed,
                      const char* out_dir) {
  return guarded([&] {
    require_out(out_dir, "out_dir");
    const scene::SceneBundle& b = bundle_of(s);
    const pipeline::ModelBundle& mb = model_of(m);
    Rng root(seed);
    Rng mask_rng = root.split("masks");
    Rng sample_rng = root.split("sample");
    const maskkit::MaskSet ms = maskkit::sample_training_masks(b, mb.cfg.train.mode, mask_rng);
    const std::vector<ImageF> out = pipeline::inpaint_frames(
        mb, b.frames, ms.masks, b.flows, pipeline::caption_for(b, mb.cfg), sample_rng);
    write_frames(out_dir, out);
    write_masks(out_dir, ms.masks);
  });
}

mvi_status mvi_remove(const mvi_scene* s, const mvi_model* m, int dilate_radius,
                      int self_reference, uint64_t seed, const char* out_dir) {
  return guarded([&] {
    require_out(out_dir, "out_dir");
    pipeline::RemoveParams p;
    p.dilate_radius = dilate_radius;
    p.self_reference = self_reference != 0;
    Rng root(seed);
    Rng rng = root.split("remove");
    const pipeline::RemoveResult r =
        pipeline::remove_scene_objects(bundle_of(s), model_of(m), p, rng);
    write_frames(out_dir, r.frames);
    write_masks(out_dir, r.masks);
  });
}

mvi_status mvi_insert(const mvi_scene* s, const char* ref_edit_png, const char* landmarks_json,
                      const mvi_model* remover, const mvi_model* inserter, uint64_t seed,
                      const char* out_dir) {
  return guarded([&] {
    require_out(out_dir, "out_dir");
    const scene::SceneBundle& b = bundle_of(s);
    const adapt::BoxFootprint fp = footprint_from_json(landmarks_json);

    ImageF ref_edit;
    if (ref_edit_png != nullptr) {
      ref_edit = read_png_rgb(ref_edit_png);
    } else {
      require(!b.background.empty(), ErrKind::invalid_argument,
              "scene has no background render; pass an edited reference image");
      ref_edit = b.background[0];
    }

    pipeline::InsertParams p;
    p.skip_removal = remover == nullptr;
    Rng root(seed);
    Rng rng = root.split("insert");
    const pipeline::InsertResult r =
        pipeline::insert_object(b, ref_edit, fp, remover != nullptr ? remover->mb.get() : nullptr,
                                model_of(inserter), p, rng);
    write_frames(out_dir, r.frames);
    write_masks(out_dir, r.adapted_masks);
  });
}

mvi_status mvi_adapt_mask(const mvi_scene* s, const char* landmarks_json, int view_begin,
                          int view_end, const char* out_dir) {
  return guarded([&] {
    require_out(out_dir, "out_dir");
    const scene::SceneBundle& b = bundle_of(s);
    const adapt::BoxFootprint fp = footprint_from_json(landmarks_json);
    require_arg(view_begin >= 0 && view_begin <= view_end && view_end < b.num_frames(),
                "view range must lie inside the scene");
    const int res = b.resolution();
    fs::create_directories(out_dir);
    for (int v = view_begin; v <= view_end; ++v) {
      const Mask mask = adapt::adapt_box_mask(fp, b.homographies[size_t(v)], res, res);
      write_png_gray((fs::path(out_dir) / (scene::frame_name(v) + ".png")).string(), mask);
    }
  });
}

mvi_status mvi_interp(const mvi_scene* s, const mvi_model* m, int keyframe_stride,
                      int dilate_radius, uint64_t seed, const char* out_dir) {
  return guarded([&] {
    require_out(out_dir, "out_dir");
    const scene::SceneBundle& b = bundle_of(s);
    const pipeline::ModelBundle& mb = model_of(m);
    const int stride = keyframe_stride <= 0 ? 4 : keyframe_stride;

    std::vector<int> keys;
    for (int i = 0; i < b.num_frames(); i += stride) keys.push_back(i);

    Rng root(seed);
    Rng key_rng = root.split("keyframes");
    Rng fill_rng = root.split("interp");

    pipeline::RemoveParams rp;
    rp.dilate_radius = dilate_radius;
    const scene::SceneBundle key_bundle = pipeline::slice_bundle(b, keys);
    const pipeline::RemoveResult keyframes =
        pipeline::remove_scene_objects(key_bundle, mb, rp, key_rng);

    const pipeline::InterpParams ip;
    const std::vector<ImageF> full =
        pipeline::interpolate_frames(keyframes.frames, keys, b, mb, ip, fill_rng);
    write_frames(out_dir, full);
  });
}

mvi_status mvi_eval(const mvi_scene* s, const char* gen_dir, const char* masks_dir,
                    int use_background_gt, const char* out_dir) {
  return guarded([&] {
    require_out(out_dir, "out_dir");
    require_out(gen_dir, "gen_dir");
    const scene::SceneBundle& b = bundle_of(s);
    const int n = b.num_frames();

    std::vector<ImageF> gen;
    for (int i = 0; i < n; ++i)
      gen.push_back(read_png_rgb((fs::path(gen_dir) / (scene::frame_name(i) + ".png")).string()));

    std::vector<Mask> masks;
    if (masks_dir != nullptr) {
      for (int i = 0; i < n; ++i)
        masks.push_back(
            read_png_mask((fs::path(masks_dir) / (scene::frame_name(i) + ".png")).string()));
    } else {
      masks = b.object_masks;
    }

    const std::vector<ImageF>* gt = nullptr;
    if (use_background_gt > 0) {
      require(!b.background.empty(), ErrKind::invalid_argument,
              "scene has no background render to score against");
      gt = &b.background;
    } else if (use_background_gt == 0) {
      gt = &b.frames;
    }

    const pipeline::EvalReport rep = pipeline::evaluate(gen, gt, b, masks);
    pipeline::write_eval_report(out_dir, rep, gen, gt, b, masks);
  });
}

}  // extern "C"
