#pragma once

#include <json.hpp>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "adapt/adapt.hpp"
#include "denoiser/denoiser.hpp"
#include "diffusion/diffusion.hpp"
#include "flowgroup/flowgroup.hpp"
#include "maskkit/maskkit.hpp"
#include "scene/scene_io.hpp"

namespace mvi::pipeline {

using nn::Tensor;

// Two-phase training schedule: a fixed clip length first, then dynamic clip
// lengths with randomized frame intervals to stretch temporal generalization.
struct TrainConfig {
  int phase1_frames = 12;
  int phase2_min_frames = 8;
  int phase2_max_frames = 24;
  int batch_size = 1;
  double lr = 1e-3;
  int steps_phase1 = 200;
  int steps_phase2 = 20;  // a tenth of phase 1 when the config omits it
  maskkit::MaskMode mode = maskkit::MaskMode::object_centric;
  int min_frame_interval = 1;
  int max_frame_interval = 3;
  uint64_t seed = 1;

  void validate(int frame_capacity) const;
};

struct PipelineConfig {
  TrainConfig train;
  denoise::DenoiserConfig model;
  flowgroup::FlowGroupConfig flow;  // flow.mode == none disables motion guidance
  int diffusion_T = 1000;
  diffusion::ScheduleKind schedule = diffusion::ScheduleKind::linear;
  diffusion::SampleParams sample;  // 50 DDIM steps, eta 0
  bool masked_only_loss = false;

  void validate() const;
};

nlohmann::json pipeline_config_to_json(const PipelineConfig& cfg);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

// The denoiser plus its optional flow-grouping module over one parameter
// store; what a checkpoint directory serializes.
struct ModelBundle {
  PipelineConfig cfg;
  nn::ParamStore ps;
  std::unique_ptr<denoise::Denoiser> model;
  std::unique_ptr<flowgroup::FlowGroup> flow;  // null when flow mode is none

  int frame_capacity() const { return cfg.model.frame_capacity; }
};

std::unique_ptr<ModelBundle> build_model(const PipelineConfig& cfg, Rng& rng);
void save_model(const std::string& dir, const ModelBundle& mb);
std::unique_ptr<ModelBundle> load_model(const std::string& dir);

// [0,1] images to [-1,1] latents [F,3,H,W] and back (the inverse clamps).
Tensor frames_to_latent(const std::vector<ImageF>& frames);
std::vector<ImageF> latent_to_frames(const Tensor& z);

// Sub-sequence view of a bundle: per-frame data picked at `idx` (strictly
// increasing), flows rebuilt between consecutive picks from the plane
// homographies so skipped frames compose exactly.
scene::SceneBundle slice_bundle(const scene::SceneBundle& b, const std::vector<int>& idx);

// The caption id a scene trains/samples with under the caption-table prompt
// mode (-1 under the learned global prompt).
int caption_for(const scene::SceneBundle& bundle, const PipelineConfig& cfg);

// One training example: which scene, which frames of it, which caption.
struct ClipPlan {
  int scene_index = 0;
  std::vector<int> frame_indices;
  int caption_id = -1;
};

// Draws balanced training clips: a category (trajectory kind) is picked
// uniformly first, then a scene inside it, then a clip with a random frame
// interval. Phase 2 additionally randomizes the clip length.
class BatchPlanner {
 public:
  BatchPlanner(const std::vector<scene::SceneBundle>& scenes, const PipelineConfig& cfg);

  ClipPlan plan(bool phase2, Rng& rng) const;
  int categories() const { return int(by_category_.size()); }

 private:
  const std::vector<scene::SceneBundle>* scenes_;
  const PipelineConfig* cfg_;
  std::map<std::string, std::vector<int>> by_category_;
  std::vector<std::string> category_names_;
};

struct TrainResult {
  struct Step {
    int step = 0;
    int phase = 1;
    int frames = 0;
    double loss = 0.0;
  };
  std::vector<Step> log;

  double tail_mean_loss(int window = 20) const;
};

// Core loop over in-memory scenes; the model must match cfg.
TrainResult train(const PipelineConfig& cfg, const std::vector<scene::SceneBundle>& scenes,
                  ModelBundle& mb);
// Disk-to-disk variant: loads every bundle under data_root, trains a fresh
// model, writes the checkpoint plus loss_log.csv into out_dir.
TrainResult train(const PipelineConfig& cfg, const std::string& data_root,
                  const std::string& out_dir);

// Shared inference core: DDIM-samples the masked regions of `frames` given
// per-clip flows, then blends so pixels outside the masks stay bitwise
// untouched. masks[0] must be empty. Skips sampling when no mask is set.
std::vector<ImageF> inpaint_frames(const ModelBundle& mb, const std::vector<ImageF>& frames,
                                   const std::vector<Mask>& masks,
                                   const std::vector<FlowField>& flows, int caption_id, Rng& rng);

// Removal: the masked objects are replaced by background, conditioned on a
// clean reference in frame 0. Requires a forward-facing checkpoint.
std::vector<ImageF> remove_objects(const std::vector<ImageF>& seq, const std::vector<Mask>& masks,
                                   const std::vector<FlowField>& flows, const ModelBundle& mb,
                                   int caption_id, Rng& rng);

struct RemoveParams {
  int dilate_radius = 2;
  // Inpaint the reference frame from itself instead of taking the bundle's
  // clean background render.
  bool self_reference = false;
};

struct RemoveResult {
  std::vector<ImageF> frames;
  std::vector<Mask> masks;  // the dilated masks actually used
};

RemoveResult remove_scene_objects(const scene::SceneBundle& bundle, const ModelBundle& mb,
                                  const RemoveParams& p, Rng& rng);

struct InsertParams {
  bool skip_removal = false;
  adapt::AdaptParams adapt;     // post-processing of the adapted masks
  RemoveParams removal;         // used unless skip_removal
};

struct InsertResult {
  std::vector<ImageF> frames;
  std::vector<Mask> adapted_masks;  // per view; index 0 is empty
};

// Fig-style edit chain: optional removal, landmark-based mask adaptation per
// view, then object-centric inpainting with the reference edit as frame 0.
// remover may be null when skip_removal is set.
InsertResult insert_object(const scene::SceneBundle& bundle, const ImageF& ref_edit_frame,
                           const adapt::BoxFootprint& footprint, const ModelBundle* remover,
                           const ModelBundle& inserter, const InsertParams& p, Rng& rng);

struct InterpParams {
  int max_fixed = 12;  // clean conditions carried into each window
  int window = 0;      // total clip size; 0 means the model's frame capacity
};

// Every 4th frame starting at 0.
std::vector<int> default_keyframes(int total);

// Expands sparse keyframe results to the full sequence: windows walk left to
// right, each holding up to max_fixed already-finished frames as clean
// conditions and the next unfinished frames as fully masked targets.
// Finished frames are never re-denoised and pass through bitwise.
std::vector<ImageF> interpolate_frames(const std::vector<ImageF>& keyframe_results,
                                       const std::vector<int>& keyframes,
                                       const scene::SceneBundle& bundle, const ModelBundle& mb,
                                       const InterpParams& p, Rng& rng);

// --- evaluation ----------------------------------------------------------

struct EvalReport {
  bool has_gt = false;
  double psnr_full = 0.0;
  double psnr_masked = 0.0;
  double cvc_mean = 1.0;
  double cvc_min = 1.0;

  struct ViewRow {
    int view = 0;
    double psnr = 0.0;
    double psnr_masked = 0.0;
    double cvc = 1.0;
    bool scored_cvc = false;
  };
  std::vector<ViewRow> per_view;
};

// PSNR against dB-capped sentinel 99 for identical content; MAX = 1.
double psnr_from_mse(double mse);

// Full and masked PSNR against gt (when given) plus the cross-view warp
// consistency score: generated view i+1 is warped into view i through the
// bundle's flow and compared over view i's masked pixels, baselined against
// the same warp error of the reference frames so a perfect reproduction
// scores exactly 1.
EvalReport evaluate(const std::vector<ImageF>& gen, const std::vector<ImageF>* gt,
                    const scene::SceneBundle& bundle, const std::vector<Mask>& masks);

// Raw per-view warp errors of the masked regions (the quantity CVC baselines);
// one entry per view that has masked pixels with valid flow.
std::vector<double> masked_warp_errors(const std::vector<ImageF>& gen,
                                       const scene::SceneBundle& bundle,
                                       const std::vector<Mask>& masks);

nlohmann::json eval_report_to_json(const EvalReport& rep);

// report.json plus panels/%03d.png strips (input | mask | output | error).
void write_eval_report(const std::string& out_dir, const EvalReport& rep,
                       const std::vector<ImageF>& gen, const std::vector<ImageF>* gt,
                       const scene::SceneBundle& bundle, const std::vector<Mask>& masks);

}  // namespace mvi::pipeline
