#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "pipeline/pipeline.hpp"

namespace mvi::pipeline {

namespace fs = std::filesystem;

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return 99.0;  // identical content; MAX = 1
  return std::clamp(-10.0 * std::log10(mse), 0.0, 99.0);
}

namespace {

struct MseAcc {
  double sum = 0.0;
  int64_t n = 0;

  void add(const ImageF& a, const ImageF& b, const Mask* region) {
    for (int y = 0; y < a.h; ++y)
      for (int x = 0; x < a.w; ++x) {
        if (region && !region->at(y, x)) continue;
        for (int c = 0; c < a.c; ++c) {
          const double d = a.at(y, x, c) - b.at(y, x, c);
          sum += d * d;
          ++n;
        }
      }
  }
  double mse() const { return n == 0 ? 0.0 : sum / double(n); }
};

// Mean absolute difference between view i and view i+1 warped back through
// the bundle flow, over the masked pixels with valid flow. Returns false when
// that region is empty.
bool warp_error(const ImageF& a, const ImageF& b, const FlowField& fl, const Mask& mask,
                double* out) {
  double sum = 0.0;
  int64_t n = 0;
  for (int y = 0; y < a.h; ++y)
    for (int x = 0; x < a.w; ++x) {
      if (!mask.at(y, x) || !fl.valid[size_t(y) * fl.w + x]) continue;
      const double tx = x + 0.5 + fl.dx(y, x);
      const double ty = y + 0.5 + fl.dy(y, x);
      for (int c = 0; c < a.c; ++c) {
        sum += std::abs(a.at(y, x, c) - sample_bilinear(b, tx, ty, c));
        ++n;
      }
    }
  if (n == 0) return false;
  *out = sum / double(n);
  return true;
}

void check_eval_shapes(const std::vector<ImageF>& gen, const std::vector<ImageF>* gt,
                       const scene::SceneBundle& bundle, const std::vector<Mask>& masks) {
  const int n = bundle.num_frames();
  const int res = bundle.resolution();
  require_arg(int(gen.size()) == n, "evaluate: one generated frame per view required");
  require_arg(int(masks.size()) == n, "evaluate: one mask per view required");
  for (int i = 0; i < n; ++i) {
    require_arg(gen[size_t(i)].h == res && gen[size_t(i)].w == res && gen[size_t(i)].c == 3,
                "evaluate: generated frame " + std::to_string(i) + " has the wrong shape");
    require_arg(masks[size_t(i)].h == res && masks[size_t(i)].w == res,
                "evaluate: mask " + std::to_string(i) + " has the wrong shape");
  }
  if (gt) {
    require_arg(int(gt->size()) == n, "evaluate: one ground-truth frame per view required");
    for (int i = 0; i < n; ++i)
      require_arg((*gt)[size_t(i)].h == res && (*gt)[size_t(i)].w == res &&
                      (*gt)[size_t(i)].c == 3,
                  "evaluate: ground-truth frame " + std::to_string(i) + " has the wrong shape");
  }
}

}  // namespace

EvalReport evaluate(const std::vector<ImageF>& gen, const std::vector<ImageF>* gt,
                    const scene::SceneBundle& bundle, const std::vector<Mask>& masks) {
  check_eval_shapes(gen, gt, bundle, masks);
  const int n = bundle.num_frames();

  EvalReport rep;
  rep.has_gt = gt != nullptr;
  rep.per_view.resize(size_t(n));
  for (int i = 0; i < n; ++i) rep.per_view[size_t(i)].view = i;

  if (gt) {
    MseAcc full, masked;
    for (int i = 0; i < n; ++i) {
      const ImageF& g = gen[size_t(i)];
      const ImageF& r = (*gt)[size_t(i)];
      MseAcc vf, vm;
      vf.add(g, r, nullptr);
      vm.add(g, r, &masks[size_t(i)]);
      rep.per_view[size_t(i)].psnr = psnr_from_mse(vf.mse());
      rep.per_view[size_t(i)].psnr_masked = psnr_from_mse(vm.mse());
      full.sum += vf.sum;
      full.n += vf.n;
      masked.sum += vm.sum;
      masked.n += vm.n;
    }
    rep.psnr_full = psnr_from_mse(full.mse());
    rep.psnr_masked = psnr_from_mse(masked.mse());
  }

  // Cross-view consistency: the warp error of the generated frames, baselined
  // against the same error of the reference frames so scene-induced residue
  // (occlusion boundaries, resampling blur) does not count against the model.
  const std::vector<ImageF>& ref = gt ? *gt : bundle.frames;
  double cvc_sum = 0.0, cvc_min = 1.0;
  int scored = 0;
  for (int i = 0; i + 1 < n; ++i) {
    double e_gen = 0.0, e_ref = 0.0;
    const FlowField& fl = bundle.flows[size_t(i)];
    if (!warp_error(gen[size_t(i)], gen[size_t(i + 1)], fl, masks[size_t(i)], &e_gen)) continue;
    warp_error(ref[size_t(i)], ref[size_t(i + 1)], fl, masks[size_t(i)], &e_ref);
    const double score = 1.0 - std::clamp(e_gen - e_ref, 0.0, 1.0);
    rep.per_view[size_t(i)].cvc = score;
    rep.per_view[size_t(i)].scored_cvc = true;
    cvc_sum += score;
    cvc_min = std::min(cvc_min, score);
    ++scored;
  }
  if (scored > 0) {
    rep.cvc_mean = cvc_sum / double(scored);
    rep.cvc_min = cvc_min;
  }
  return rep;
}

std::vector<double> masked_warp_errors(const std::vector<ImageF>& gen,
                                       const scene::SceneBundle& bundle,
                                       const std::vector<Mask>& masks) {
  check_eval_shapes(gen, nullptr, bundle, masks);
  std::vector<double> errs;
  for (int i = 0; i + 1 < bundle.num_frames(); ++i) {
    double e = 0.0;
    if (warp_error(gen[size_t(i)], gen[size_t(i + 1)], bundle.flows[size_t(i)],
                   masks[size_t(i)], &e))
      errs.push_back(e);
  }
  return errs;
}

nlohmann::json eval_report_to_json(const EvalReport& rep) {
  nlohmann::json j;
  j["has_gt"] = rep.has_gt;
  if (rep.has_gt) {
    j["psnr_full"] = rep.psnr_full;
    j["psnr_masked"] = rep.psnr_masked;
  }
  j["cvc_mean"] = rep.cvc_mean;
  j["cvc_min"] = rep.cvc_min;
  j["per_view"] = nlohmann::json::array();
  for (const EvalReport::ViewRow& row : rep.per_view) {
    nlohmann::json r;
    r["view"] = row.view;
    if (rep.has_gt) {
      r["psnr"] = row.psnr;
      r["psnr_masked"] = row.psnr_masked;
    }
    r["cvc"] = row.cvc;
    r["scored_cvc"] = row.scored_cvc;
    j["per_view"].push_back(std::move(r));
  }
  return j;
}

void write_eval_report(const std::string& out_dir, const EvalReport& rep,
                       const std::vector<ImageF>& gen, const std::vector<ImageF>* gt,
                       const scene::SceneBundle& bundle, const std::vector<Mask>& masks) {
  check_eval_shapes(gen, gt, bundle, masks);
  const int n = bundle.num_frames();
  const int res = bundle.resolution();

  fs::create_directories(fs::path(out_dir) / "panels");
  std::ofstream f(fs::path(out_dir) / "report.json");
  require(bool(f), ErrKind::io, "cannot write report under " + out_dir);
  f << eval_report_to_json(rep).dump(2) << "\n";
  f.close();

  for (int i = 0; i < n; ++i) {
    const ImageF& input = bundle.frames[size_t(i)];
    const ImageF& ref = gt ? (*gt)[size_t(i)] : input;
    const ImageF& g = gen[size_t(i)];
    const Mask& m = masks[size_t(i)];

    // One strip per view: input | mask | output | amplified error vs ref.
    ImageF panel(res, 4 * res, 3);
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x)
        for (int c = 0; c < 3; ++c) {
          panel.at(y, x, c) = input.at(y, x, c);
          panel.at(y, res + x, c) = double(m.at(y, x));
          panel.at(y, 2 * res + x, c) = g.at(y, x, c);
          panel.at(y, 3 * res + x, c) =
              std::min(1.0, 4.0 * std::abs(g.at(y, x, c) - ref.at(y, x, c)));
        }
    char name[32];
    std::snprintf(name, sizeof(name), "%03d.png", i);
    write_png_rgb((fs::path(out_dir) / "panels" / name).string(), panel);
  }
}

}  // namespace mvi::pipeline
