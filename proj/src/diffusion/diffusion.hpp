#pragma once

#include <functional>
#include <string>
#include <vector>

#include "core/autograd.hpp"
#include "core/image.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace mvi::diffusion {

using nn::Tensor;
using nn::Var;

enum class ScheduleKind { linear, cosine };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

// Forward noising schedule. alphas_cumprod[t] is the fraction of signal
// variance retained after step t; it must fall from nearly one (the first
// step barely perturbs the input) to nearly zero (the last step is close
// to pure noise), strictly decreasing in between.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;           // per-step noise variances, each in (0,1)
  std::vector<double> alphas_cumprod;  // running products of (1 - beta)

  // Throws when the endpoint or monotonicity invariants are violated.
  void check() const;
};

// linear: beta ramps 1e-4 -> 2e-2 at the reference length 1000 and scales
// by 1000/T for other lengths, keeping total noise roughly constant.
// cosine: squared-cosine signal decay with offset 0.008. Both clip betas
// at 0.999. T < 2 is rejected outright; a length too short for the
// endpoint invariants fails the post-construction check instead.
NoiseSchedule make_schedule(ScheduleKind kind, int T);

// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, elementwise.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// Inverts q_sample for a known noise estimate:
// x0 = (x_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t).
Tensor predict_x0(const Tensor& xt, int t, const Tensor& eps, const NoiseSchedule& sched);

// Nearest-neighbor resample of a binary mask onto an h x w grid.
Tensor resample_mask_nearest(const Mask& m, int h, int w);

// Conditioning channels that stay fixed while the noised block evolves:
// the clean latents with masked pixels zeroed, the mask plane, and any
// extra guidance planes appended after it.
struct CondChannels {
  Tensor clean;             // [F, C, h, w] clean latents
  std::vector<Mask> masks;  // image-resolution masks; masks[0] must be empty
  Tensor extra;             // optional [F, E, h, w] guidance planes; default-constructed for none
};

struct AssembledInput {
  Tensor x;        // [F, 2C+1+E, h, w]: [noised | clean*(1-m) | m | extra]
  Tensor mask_ds;  // [F, 1, h, w] masks on the latent grid
};

// Builds the denoiser input for timestep t from clean latents: the first C
// channels are q_sample(z0, t, eps), followed by the conditioning block.
// The first frame anchors the scene and is never inpainted, so masks[0]
// must be empty; its clean slice then equals the full clean latent.
AssembledInput assemble_input(const Tensor& z0, const std::vector<Mask>& masks, int t,
                              const Tensor& eps, const NoiseSchedule& sched,
                              const Tensor& extra = Tensor());

// Mean squared error between predicted and true noise over every frame,
// channel, and pixel.
Var epsilon_loss(const Var& pred, const Tensor& eps);

// Same, but averaging only where the latent-grid mask is set (the weight
// broadcasts across channels). Frame 0 has an empty mask, so it never
// contributes here.
Var epsilon_loss_masked(const Var& pred, const Tensor& eps, const Tensor& mask_ds);

// Denoising model: assembled input plus timestep to predicted noise with
// the latent shape [F, C, h, w].
using EpsModel = std::function<Tensor(const Tensor& x, int t)>;

struct SampleParams {
  int steps = 50;
  double eta = 0.0;
};

// DDIM sampler. Walks the timestep subsequence ts[k] = round(k*T/steps)
// from high noise to zero, starting from pure Gaussian noise (or `init`
// when given, which must have the latent shape). The input is reassembled
// every step and the conditioning channels are verified bitwise against
// the fixed block before each model call. eta > 0 injects fresh noise per
// step; eta = 0 makes the result a pure function of the initial noise.
Tensor ddim_sample(const EpsModel& model, const CondChannels& conds, const NoiseSchedule& sched,
                   const SampleParams& params, Rng& rng, const Tensor* init = nullptr);

// out = mask ? generated : original per pixel; pixels outside the mask are
// copied bit for bit from the original, masked pixels from the generated.
Tensor blend_unmasked(const Tensor& generated, const Tensor& original,
                      const std::vector<Mask>& masks);
ImageF blend_unmasked(const ImageF& generated, const ImageF& original, const Mask& mask);

}  // namespace mvi::diffusion
