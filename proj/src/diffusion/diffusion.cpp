#include "diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mvi::diffusion {

namespace {

constexpr double kBetaStart = 1e-4;   // ramp endpoints at the reference length
constexpr double kBetaEnd = 2e-2;
constexpr double kReferenceT = 1000.0;
constexpr double kCosineOffset = 0.008;
constexpr double kBetaClip = 0.999;

double cosine_f(double t, double T) {
  const double u = (t / T + kCosineOffset) / (1.0 + kCosineOffset);
  const double c = std::cos(u * M_PI / 2.0);
  return c * c;
}

void require_latent4(const Tensor& x, const char* who) {
  require_arg(x.ndim() == 4, std::string(who) + ": expected a [frames, channels, h, w] tensor");
}

double abar_at(const NoiseSchedule& sched, int t, const char* who) {
  require(t >= 0 && t < sched.T, ErrKind::invalid_argument,
          std::string(who) + ": timestep " + std::to_string(t) + " outside [0, " +
              std::to_string(sched.T) + ")");
  return sched.alphas_cumprod[size_t(t)];
}

// The fixed conditioning block [F, C+1+E, h, w] and the resampled masks.
struct CondBlock {
  Tensor block;
  Tensor mask_ds;
  int frames = 0, channels = 0, extra = 0, h = 0, w = 0;
};

CondBlock build_cond_block(const Tensor& clean, const std::vector<Mask>& masks,
                           const Tensor& extra, const char* who) {
  require_latent4(clean, who);
  const int f = clean.dim(0), c = clean.dim(1), h = clean.dim(2), w = clean.dim(3);
  require_arg(f >= 1 && c >= 1 && h >= 1 && w >= 1,
              std::string(who) + ": degenerate latent shape " + clean.shape_str());
  require_arg(int(masks.size()) == f,
              std::string(who) + ": got " + std::to_string(masks.size()) + " masks for " +
                  std::to_string(f) + " frames");
  require(masks[0].empty_mask(), ErrKind::invalid_argument,
          std::string(who) + ": the first frame is the clean anchor and its mask must be empty");
  int e = 0;
  if (extra.ndim() != 0) {
    require_latent4(extra, who);
    require_arg(extra.dim(0) == f && extra.dim(2) == h && extra.dim(3) == w,
                std::string(who) + ": extra planes " + extra.shape_str() +
                    " do not match the latent grid");
    e = extra.dim(1);
  }

  CondBlock out;
  out.frames = f;
  out.channels = c;
  out.extra = e;
  out.h = h;
  out.w = w;
  out.mask_ds = Tensor::zeros({f, 1, h, w});
  out.block = Tensor::zeros({f, c + 1 + e, h, w});

  const int64_t plane = int64_t(h) * w;
  for (int fi = 0; fi < f; ++fi) {
    require_arg(masks[size_t(fi)].h > 0 && masks[size_t(fi)].w > 0,
                std::string(who) + ": empty mask raster for frame " + std::to_string(fi));
    Tensor m = resample_mask_nearest(masks[size_t(fi)], h, w);
    std::copy(m.data(), m.data() + plane, out.mask_ds.data() + fi * plane);

    double* dst = out.block.data() + int64_t(fi) * (c + 1 + e) * plane;
    const double* src = clean.data() + int64_t(fi) * c * plane;
    for (int ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < plane; ++i)
        dst[ch * plane + i] = m.data()[i] > 0.0 ? 0.0 : src[ch * plane + i];
    std::copy(m.data(), m.data() + plane, dst + int64_t(c) * plane);
    if (e > 0) {
      const double* es = extra.data() + int64_t(fi) * e * plane;
      std::copy(es, es + int64_t(e) * plane, dst + int64_t(c + 1) * plane);
    }
  }
  return out;
}

// [noised | cond block], both per frame.
Tensor assemble_with_noised(const Tensor& noised, const CondBlock& cond) {
  const int f = cond.frames, c = cond.channels, cc = c + 1 + cond.extra;
  const int64_t plane = int64_t(cond.h) * cond.w;
  Tensor x = Tensor::zeros({f, c + cc, cond.h, cond.w});
  for (int fi = 0; fi < f; ++fi) {
    double* dst = x.data() + int64_t(fi) * (c + cc) * plane;
    std::copy(noised.data() + int64_t(fi) * c * plane,
              noised.data() + int64_t(fi + 1) * c * plane, dst);
    std::copy(cond.block.data() + int64_t(fi) * cc * plane,
              cond.block.data() + int64_t(fi + 1) * cc * plane, dst + int64_t(c) * plane);
  }
  return x;
}

// Confirms the conditioning channels of an assembled input are bitwise
// identical to the fixed block.
void check_cond_fixed(const Tensor& x, const CondBlock& cond) {
  const int c = cond.channels, cc = c + 1 + cond.extra;
  const int64_t plane = int64_t(cond.h) * cond.w;
  for (int fi = 0; fi < cond.frames; ++fi) {
    const double* got = x.data() + (int64_t(fi) * (c + cc) + c) * plane;
    const double* want = cond.block.data() + int64_t(fi) * cc * plane;
    require(std::memcmp(got, want, size_t(cc) * size_t(plane) * sizeof(double)) == 0,
            ErrKind::numeric, "ddim_sample: conditioning channels drifted during sampling");
  }
}

}  // namespace

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  fail(ErrKind::config, "unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::linear ? "linear" : "cosine";
}

void NoiseSchedule::check() const {
  require(T >= 2, ErrKind::invalid_argument, "schedule: T must be at least 2");
  require(int(betas.size()) == T && int(alphas_cumprod.size()) == T, ErrKind::invalid_argument,
          "schedule: array lengths do not match T");
  for (int t = 0; t < T; ++t) {
    require(betas[size_t(t)] > 0.0 && betas[size_t(t)] < 1.0, ErrKind::numeric,
            "schedule: beta outside (0,1) at step " + std::to_string(t));
    if (t > 0)
      require(alphas_cumprod[size_t(t)] < alphas_cumprod[size_t(t) - 1], ErrKind::numeric,
              "schedule: signal retention must strictly decrease (step " + std::to_string(t) + ")");
  }
  require(alphas_cumprod[0] > 0.99, ErrKind::numeric,
          "schedule: first step retains too little signal (abar_0 <= 0.99); T is too short");
  require(alphas_cumprod[size_t(T) - 1] < 0.05, ErrKind::numeric,
          "schedule: last step is not noisy enough (abar_{T-1} >= 0.05)");
}

NoiseSchedule make_schedule(ScheduleKind kind, int T) {
  require(T >= 2, ErrKind::invalid_argument, "make_schedule: T must be at least 2");
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(size_t(T));
  s.alphas_cumprod.resize(size_t(T));
  if (kind == ScheduleKind::linear) {
    const double scale = kReferenceT / double(T);
    const double b0 = kBetaStart * scale, b1 = kBetaEnd * scale;
    for (int t = 0; t < T; ++t)
      s.betas[size_t(t)] = std::min(kBetaClip, b0 + (b1 - b0) * double(t) / double(T - 1));
  } else {
    for (int t = 0; t < T; ++t) {
      const double beta = 1.0 - cosine_f(double(t + 1), double(T)) / cosine_f(double(t), double(T));
      s.betas[size_t(t)] = std::min(kBetaClip, beta);
    }
  }
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    prod *= 1.0 - s.betas[size_t(t)];
    s.alphas_cumprod[size_t(t)] = prod;
  }
  s.check();
  return s;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  require_arg(x0.same_shape(eps), "q_sample: x0 and eps shapes differ");
  const double abar = abar_at(sched, t, "q_sample");
  const double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
  Tensor out = Tensor::zeros(x0.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a * x0.data()[i] + b * eps.data()[i];
  return out;
}

Tensor predict_x0(const Tensor& xt, int t, const Tensor& eps, const NoiseSchedule& sched) {
  require_arg(xt.same_shape(eps), "predict_x0: x_t and eps shapes differ");
  const double abar = abar_at(sched, t, "predict_x0");
  const double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
  Tensor out = Tensor::zeros(xt.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = (xt.data()[i] - b * eps.data()[i]) / a;
  return out;
}

Tensor resample_mask_nearest(const Mask& m, int h, int w) {
  require_arg(m.h > 0 && m.w > 0, "resample_mask_nearest: source mask is empty");
  require_arg(h > 0 && w > 0, "resample_mask_nearest: target grid is empty");
  Tensor out = Tensor::zeros({h, w});
  for (int y = 0; y < h; ++y) {
    const int sy = std::min(m.h - 1, int((double(y) + 0.5) * double(m.h) / double(h)));
    for (int x = 0; x < w; ++x) {
      const int sx = std::min(m.w - 1, int((double(x) + 0.5) * double(m.w) / double(w)));
      out.data()[int64_t(y) * w + x] = m.at(sy, sx) ? 1.0 : 0.0;
    }
  }
  return out;
}

AssembledInput assemble_input(const Tensor& z0, const std::vector<Mask>& masks, int t,
                              const Tensor& eps, const NoiseSchedule& sched, const Tensor& extra) {
  CondBlock cond = build_cond_block(z0, masks, extra, "assemble_input");
  Tensor noised = q_sample(z0, t, eps, sched);
  AssembledInput out;
  out.x = assemble_with_noised(noised, cond);
  out.mask_ds = cond.mask_ds;
  return out;
}

Var epsilon_loss(const Var& pred, const Tensor& eps) {
  return nn::mse_loss(pred, nn::constant(eps));
}

Var epsilon_loss_masked(const Var& pred, const Tensor& eps, const Tensor& mask_ds) {
  require_latent4(pred->value, "epsilon_loss_masked");
  const int f = pred->value.dim(0), c = pred->value.dim(1);
  const int h = pred->value.dim(2), w = pred->value.dim(3);
  require_arg(mask_ds.ndim() == 4 && mask_ds.dim(0) == f && mask_ds.dim(1) == 1 &&
                  mask_ds.dim(2) == h && mask_ds.dim(3) == w,
              "epsilon_loss_masked: mask shape " + mask_ds.shape_str() +
                  " does not broadcast over " + pred->value.shape_str());
  Tensor weight = Tensor::zeros(pred->value.shape());
  const int64_t plane = int64_t(h) * w;
  for (int fi = 0; fi < f; ++fi)
    for (int ch = 0; ch < c; ++ch)
      std::copy(mask_ds.data() + fi * plane, mask_ds.data() + (fi + 1) * plane,
                weight.data() + (int64_t(fi) * c + ch) * plane);
  return nn::weighted_mse_loss(pred, nn::constant(eps), weight);
}

Tensor ddim_sample(const EpsModel& model, const CondChannels& conds, const NoiseSchedule& sched,
                   const SampleParams& params, Rng& rng, const Tensor* init) {
  sched.check();
  require_arg(params.steps >= 1, "ddim_sample: steps must be at least 1");
  require(params.steps <= sched.T, ErrKind::invalid_argument,
          "ddim_sample: " + std::to_string(params.steps) + " steps exceed the schedule length " +
              std::to_string(sched.T));
  require_arg(params.eta >= 0.0, "ddim_sample: eta must be nonnegative");
  require(bool(model), ErrKind::invalid_argument, "ddim_sample: null model");
  CondBlock cond = build_cond_block(conds.clean, conds.masks, conds.extra, "ddim_sample");

  std::vector<int> ts(size_t(params.steps));
  for (int k = 0; k < params.steps; ++k)
    ts[size_t(k)] = int(std::lround(double(k) * double(sched.T) / double(params.steps)));

  Tensor z;
  if (init != nullptr) {
    require_arg(init->same_shape(conds.clean), "ddim_sample: init noise shape " +
                                                   init->shape_str() + " does not match latents");
    z = init->clone();
  } else {
    z = Tensor::randn(conds.clean.shape(), rng);
  }

  for (int k = params.steps - 1; k >= 0; --k) {
    const int t = ts[size_t(k)];
    const double abar_t = sched.alphas_cumprod[size_t(t)];
    const double abar_prev = k > 0 ? sched.alphas_cumprod[size_t(ts[size_t(k) - 1])] : 1.0;

    Tensor x = assemble_with_noised(z, cond);
    check_cond_fixed(x, cond);
    Tensor eps_hat = model(x, t);
    require(eps_hat.same_shape(z), ErrKind::invalid_argument,
            "ddim_sample: model returned " + eps_hat.shape_str() + ", expected " + z.shape_str());

    const double a = std::sqrt(abar_t), b = std::sqrt(1.0 - abar_t);
    double sigma = 0.0;
    if (k > 0 && params.eta > 0.0)
      sigma = params.eta * std::sqrt((1.0 - abar_prev) / (1.0 - abar_t)) *
              std::sqrt(1.0 - abar_t / abar_prev);
    const double ap = std::sqrt(abar_prev);
    const double dir = std::sqrt(std::max(0.0, 1.0 - abar_prev - sigma * sigma));

    Tensor next = Tensor::zeros(z.shape());
    for (int64_t i = 0; i < z.numel(); ++i) {
      const double x0 = (z.data()[i] - b * eps_hat.data()[i]) / a;
      next.data()[i] = ap * x0 + dir * eps_hat.data()[i];
    }
    if (sigma > 0.0)
      for (int64_t i = 0; i < next.numel(); ++i) next.data()[i] += sigma * rng.normal();
    z = std::move(next);
  }
  return z;
}

Tensor blend_unmasked(const Tensor& generated, const Tensor& original,
                      const std::vector<Mask>& masks) {
  require_latent4(generated, "blend_unmasked");
  require_arg(generated.same_shape(original), "blend_unmasked: frame stacks differ in shape");
  const int f = generated.dim(0), c = generated.dim(1);
  const int h = generated.dim(2), w = generated.dim(3);
  require_arg(int(masks.size()) == f, "blend_unmasked: got " + std::to_string(masks.size()) +
                                          " masks for " + std::to_string(f) + " frames");
  Tensor out = Tensor::zeros(generated.shape());
  const int64_t plane = int64_t(h) * w;
  for (int fi = 0; fi < f; ++fi) {
    const Mask& m = masks[size_t(fi)];
    require_arg(m.h == h && m.w == w,
                "blend_unmasked: mask raster does not match frame " + std::to_string(fi));
    for (int ch = 0; ch < c; ++ch) {
      const int64_t base = (int64_t(fi) * c + ch) * plane;
      for (int64_t i = 0; i < plane; ++i)
        out.data()[base + i] = m.v[size_t(i)] ? generated.data()[base + i]
                                              : original.data()[base + i];
    }
  }
  return out;
}

ImageF blend_unmasked(const ImageF& generated, const ImageF& original, const Mask& mask) {
  require_arg(generated.h == original.h && generated.w == original.w &&
                  generated.c == original.c,
              "blend_unmasked: image shapes differ");
  require_arg(mask.h == generated.h && mask.w == generated.w,
              "blend_unmasked: mask raster does not match the image");
  ImageF out = original;
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      if (mask.at(y, x))
        for (int ch = 0; ch < out.c; ++ch) out.at(y, x, ch) = generated.at(y, x, ch);
  return out;
}

}  // namespace mvi::diffusion
