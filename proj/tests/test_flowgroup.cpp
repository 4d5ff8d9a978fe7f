#include <doctest.h>

#include <cmath>
#include <vector>

#include "flowgroup/flowgroup.hpp"
#include "maskkit/maskkit.hpp"
#include "support/gradcheck.hpp"

using namespace mvi;
using namespace mvi::flowgroup;
using nn::Tensor;
using nn::Var;

namespace {

FlowGroupConfig small_cfg(FlowMode mode, FlowInject inject) {
  FlowGroupConfig cfg;
  cfg.mode = mode;
  cfg.inject = inject;
  cfg.slots = 4;
  cfg.dim = 8;
  cfg.token_dim = 8;
  cfg.time_dim = 12;
  return cfg;
}

std::vector<FlowField> random_flows(int n, int h, int w, Rng& rng) {
  std::vector<FlowField> flows;
  for (int f = 0; f < n; ++f) {
    FlowField fl(h, w);
    for (double& v : fl.d) v = rng.uniform(-2.0, 2.0);
    flows.push_back(fl);
  }
  return flows;
}

std::vector<Mask> zero_masks(int n, int h, int w) {
  return std::vector<Mask>(size_t(n), Mask(h, w));
}

// Explicit Eq evaluation: project queries/features, softmax each key column
// over the slot axis, aggregate values.
Tensor slot_attention_oracle(const Tensor& queries, const Tensor& feats, const Tensor& wq,
                             const Tensor& wk, const Tensor& wv) {
  const int k = queries.shape()[0];
  const int d = queries.shape()[1];
  const int l = feats.shape()[0];
  auto proj = [&](const Tensor& x, const Tensor& w, int rows) {
    Tensor out = Tensor::zeros({rows, d});
    for (int r = 0; r < rows; ++r) {
      for (int o = 0; o < d; ++o) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += x.data()[r * d + c] * w.data()[o * d + c];
        out.data()[r * d + o] = acc;
      }
    }
    return out;
  };
  const Tensor qp = proj(queries, wq, k);
  const Tensor kp = proj(feats, wk, l);
  const Tensor vp = proj(feats, wv, l);

  Tensor scores = Tensor::zeros({k, l});
  for (int s = 0; s < k; ++s) {
    for (int j = 0; j < l; ++j) {
      double acc = 0.0;
      for (int c = 0; c < d; ++c) acc += qp.data()[s * d + c] * kp.data()[j * d + c];
      scores.data()[s * l + j] = acc / std::sqrt(double(d));
    }
  }
  Tensor a = Tensor::zeros({k, l});
  for (int j = 0; j < l; ++j) {
    double m = scores.data()[j];
    for (int s = 1; s < k; ++s) m = std::max(m, scores.data()[s * l + j]);
    double z = 0.0;
    for (int s = 0; s < k; ++s) z += std::exp(scores.data()[s * l + j] - m);
    for (int s = 0; s < k; ++s) a.data()[s * l + j] = std::exp(scores.data()[s * l + j] - m) / z;
  }
  for (int j = 0; j < l; ++j) {  // each key hands out exactly one unit
    double col = 0.0;
    for (int s = 0; s < k; ++s) col += a.data()[s * l + j];
    REQUIRE(std::abs(col - 1.0) < 1e-6);
  }
  Tensor out = Tensor::zeros({k, d});
  for (int s = 0; s < k; ++s) {
    for (int c = 0; c < d; ++c) {
      double acc = 0.0;
      for (int j = 0; j < l; ++j) acc += a.data()[s * l + j] * vp.data()[j * d + c];
      out.data()[s * d + c] = acc;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("flowgroup: config combinations map to the supported variants") {
  CHECK(flow_mode_from_string("none") == FlowMode::none);
  CHECK(flow_mode_from_string("dense") == FlowMode::dense);
  CHECK(flow_mode_from_string("slot2d") == FlowMode::slot2d);
  CHECK(flow_mode_from_string("slot3d") == FlowMode::slot3d);
  CHECK_THROWS_AS((void)flow_mode_from_string("slots"), Error);
  CHECK_THROWS_AS((void)flow_inject_from_string("bogus"), Error);
  for (FlowMode m : {FlowMode::none, FlowMode::dense, FlowMode::slot2d, FlowMode::slot3d}) {
    CHECK(flow_mode_from_string(to_string(m)) == m);
  }
  for (FlowInject i :
       {FlowInject::none, FlowInject::cross_attn_token, FlowInject::time_emb_add}) {
    CHECK(flow_inject_from_string(to_string(i)) == i);
  }

  // The ablation grid: none, dense, slot2d+time_emb, slot2d+cross_attn,
  // slot3d+cross_attn all validate; dense plus a slot inject does not.
  CHECK_NOTHROW(small_cfg(FlowMode::none, FlowInject::none).validate());
  CHECK_NOTHROW(small_cfg(FlowMode::dense, FlowInject::none).validate());
  CHECK_NOTHROW(small_cfg(FlowMode::slot2d, FlowInject::time_emb_add).validate());
  CHECK_NOTHROW(small_cfg(FlowMode::slot2d, FlowInject::cross_attn_token).validate());
  CHECK_NOTHROW(small_cfg(FlowMode::slot3d, FlowInject::cross_attn_token).validate());
  CHECK_THROWS_AS(small_cfg(FlowMode::dense, FlowInject::cross_attn_token).validate(), Error);
  CHECK_THROWS_AS(small_cfg(FlowMode::slot3d, FlowInject::none).validate(), Error);
}

TEST_CASE("flowgroup: encoder output shape and full-mask behaviour") {
  nn::ParamStore ps;
  Rng rng(21);
  FlowGroup fg(small_cfg(FlowMode::slot3d, FlowInject::cross_attn_token), ps, rng);

  Rng data_rng(22);
  const auto flows = random_flows(3, 32, 32, data_rng);
  const Var feats = fg.encode_flow(flows, zero_masks(3, 32, 32));
  CHECK(feats->value.shape() == std::vector<int>{3, 8, 4, 4});
  for (int64_t i = 0; i < feats->value.numel(); ++i) {
    CHECK(std::isfinite(feats->value.data()[i]));
  }

  // A full mask hides every flow value: the encoder must see a zero field.
  std::vector<Mask> full(3, Mask(32, 32));
  for (auto& m : full) std::fill(m.v.begin(), m.v.end(), uint8_t(1));
  const Var hidden = fg.encode_flow(flows, full);
  std::vector<FlowField> zeros(3, FlowField(32, 32));
  const Var of_zero = fg.encode_flow(zeros, zero_masks(3, 32, 32));
  CHECK(max_abs_diff(hidden->value, of_zero->value) == 0.0);

  std::vector<Mask> short_masks = zero_masks(2, 32, 32);
  CHECK_THROWS_AS((void)fg.encode_flow(flows, short_masks), Error);
  std::vector<Mask> wrong_size = zero_masks(3, 16, 16);
  CHECK_THROWS_AS((void)fg.encode_flow(flows, wrong_size), Error);
}

TEST_CASE("flowgroup: the mask dilation radius is five pixels") {
  nn::ParamStore ps;
  Rng rng(23);
  FlowGroup fg(small_cfg(FlowMode::slot2d, FlowInject::time_emb_add), ps, rng);

  const int res = 24;
  Mask point(res, res);
  point.at(12, 12) = 1;
  std::vector<Mask> masks = {point};

  Rng data_rng(24);
  auto flows = random_flows(1, res, res, data_rng);
  const Tensor base = fg.encode_flow(flows, masks)->value;

  auto probe = [&](int dx, double bump) {
    auto copy = flows;
    copy[0].dx(12, 12 + dx) += bump;
    return fg.encode_flow(copy, masks)->value;
  };
  CHECK(max_abs_diff(probe(4, 10.0), base) == 0.0);  // still inside the dilated disc
  CHECK(max_abs_diff(probe(6, 10.0), base) > 0.0);   // outside: must be visible
}

TEST_CASE("flowgroup: flow edits inside the dilated mask never leak") {
  nn::ParamStore ps;
  Rng rng(25);
  FlowGroup fg(small_cfg(FlowMode::slot2d, FlowInject::time_emb_add), ps, rng);

  const int res = 16;
  Mask m(res, res);
  for (int y = 6; y < 9; ++y) {
    for (int x = 5; x < 10; ++x) m.at(y, x) = 1;
  }
  std::vector<Mask> masks = {m};
  const Mask dilated = maskkit::dilate(m, 5);

  Rng data_rng(26);
  auto flows = random_flows(1, res, res, data_rng);
  const Tensor base = fg.encode_flow(flows, masks)->value;

  int inside = 0, outside_changed = 0;
  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      auto copy = flows;
      copy[0].dx(y, x) += 7.0;
      copy[0].dy(y, x) -= 3.0;
      const double delta = max_abs_diff(fg.encode_flow(copy, masks)->value, base);
      if (dilated.at(y, x)) {
        ++inside;
        REQUIRE(delta == 0.0);
      } else if (delta > 0.0) {
        ++outside_changed;
      }
    }
  }
  CHECK(inside > 20);
  CHECK(outside_changed > 0);
}

TEST_CASE("flowgroup: slot attention matches the explicit-loop evaluation") {
  FlowGroupConfig cfg = small_cfg(FlowMode::slot2d, FlowInject::time_emb_add);
  cfg.slots = 3;
  cfg.dim = 5;
  nn::ParamStore ps;
  Rng rng(27);
  FlowGroup fg(cfg, ps, rng);

  Rng data_rng(28);
  const Var feats = nn::make_param(Tensor::randn({7, 5}, data_rng));
  const Var got = fg.slot_attention(feats);
  CHECK(got->value.shape() == std::vector<int>{3, 5});

  const Tensor expect = slot_attention_oracle(
      ps.get("flow.slot.queries")->value, feats->value, ps.get("flow.slot.wq.w")->value,
      ps.get("flow.slot.wk.w")->value, ps.get("flow.slot.wv.w")->value);
  CHECK(max_abs_diff(got->value, expect) < 1e-6);

  CHECK_THROWS_AS((void)fg.slot_attention(nn::make_param(Tensor::zeros({0, 5}))), Error);
  CHECK_THROWS_AS((void)fg.slot_attention(nn::make_param(Tensor::zeros({4, 4}))), Error);
}

TEST_CASE("flowgroup: paper-scale slot shapes and the uniform-logit case") {
  FlowGroupConfig cfg = small_cfg(FlowMode::slot2d, FlowInject::time_emb_add);
  cfg.slots = 4;
  cfg.dim = 64;
  cfg.time_dim = 64;
  nn::ParamStore ps;
  Rng rng(29);
  FlowGroup fg(cfg, ps, rng);

  Rng data_rng(30);
  const Var feats = nn::make_param(Tensor::randn({256, 64}, data_rng));
  CHECK(fg.slot_attention(feats)->value.shape() == std::vector<int>{4, 64});

  // Zeroed query projection -> all logits zero -> every key splits evenly
  // across the K slots, so each output row is (1/K) * sum_j V_j.
  Tensor& wq = ps.get("flow.slot.wq.w")->value;
  std::fill(wq.data(), wq.data() + wq.numel(), 0.0);
  const Tensor got = fg.slot_attention(feats)->value;

  const Tensor& wv = ps.get("flow.slot.wv.w")->value;
  std::vector<double> colsum(64, 0.0);
  for (int j = 0; j < 256; ++j) {
    for (int o = 0; o < 64; ++o) {
      double acc = 0.0;
      for (int c = 0; c < 64; ++c) acc += feats->value.data()[j * 64 + c] * wv.data()[o * 64 + c];
      colsum[size_t(o)] += acc;
    }
  }
  for (int s = 0; s < 4; ++s) {
    for (int o = 0; o < 64; ++o) {
      CHECK(got.data()[s * 64 + o] == doctest::Approx(colsum[size_t(o)] / 4.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("flowgroup: key columns always sum to one across shapes") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = rng.uniform_int(1, 6);
    const int l = rng.uniform_int(1, 40);
    const int d = rng.uniform_int(1, 16);
    const Var qp = nn::make_param(Tensor::randn({k, d}, rng, 2.0));
    const Var kp = nn::make_param(Tensor::randn({l, d}, rng, 2.0));
    const Var vp = nn::make_param(Tensor::randn({l, d}, rng));
    const Tensor out = nn::query_softmax_attention(qp, kp, vp, 1.0 / std::sqrt(double(d)))->value;

    // Column-normalized attention conserves value mass: summing the output
    // over slots must reproduce the value columns summed over keys.
    for (int c = 0; c < d; ++c) {
      double out_sum = 0.0, v_sum = 0.0;
      for (int s = 0; s < k; ++s) out_sum += out.data()[s * d + c];
      for (int j = 0; j < l; ++j) v_sum += vp->value.data()[j * d + c];
      CHECK(std::abs(out_sum - v_sum) < 1e-6 * std::max(1.0, std::abs(v_sum)));
    }
  }
}

TEST_CASE("flowgroup: slot attention ignores spatial permutations") {
  FlowGroupConfig cfg = small_cfg(FlowMode::slot2d, FlowInject::time_emb_add);
  nn::ParamStore ps;
  Rng rng(32);
  FlowGroup fg(cfg, ps, rng);

  Rng data_rng(33);
  const int l = 30;
  const Tensor feats = Tensor::randn({l, cfg.dim}, data_rng);
  std::vector<int> perm(static_cast<std::size_t>(l));
  for (int i = 0; i < l; ++i) perm[size_t(i)] = i;
  for (int i = l - 1; i > 0; --i) std::swap(perm[size_t(i)], perm[size_t(data_rng.uniform_int(0, i))]);

  Tensor shuffled = Tensor::zeros({l, cfg.dim});
  for (int i = 0; i < l; ++i) {
    std::copy(feats.data() + size_t(perm[size_t(i)]) * cfg.dim,
              feats.data() + size_t(perm[size_t(i)] + 1) * cfg.dim,
              shuffled.data() + size_t(i) * cfg.dim);
  }
  const Tensor a = fg.slot_attention(nn::make_param(feats))->value;
  const Tensor b = fg.slot_attention(nn::make_param(shuffled))->value;
  CHECK(max_abs_diff(a, b) < 1e-5);
}

TEST_CASE("flowgroup: slot attention and fusion pass gradient checks") {
  FlowGroupConfig cfg = small_cfg(FlowMode::slot2d, FlowInject::time_emb_add);
  cfg.slots = 2;
  cfg.dim = 3;
  nn::ParamStore ps;
  Rng rng(34);
  FlowGroup fg(cfg, ps, rng);

  Rng data_rng(35);
  const Var feats = nn::make_param(Tensor::randn({4, 3}, data_rng));
  std::vector<Var> leaves = {feats, ps.get("flow.slot.queries"), ps.get("flow.slot.wq.w"),
                             ps.get("flow.slot.wk.w"), ps.get("flow.slot.wv.w"),
                             ps.get("flow.fuse.w"), ps.get("flow.fuse.b")};
  const double err = testing::gradcheck(
      [&](const std::vector<Var>& ls) { return nn::mean_all(fg.fuse_slots(fg.slot_attention(ls[0]))); },
      leaves);
  CHECK(err < 1e-4);
}

TEST_CASE("flowgroup: fused embeddings follow the affine contract") {
  FlowGroupConfig cfg = small_cfg(FlowMode::slot2d, FlowInject::time_emb_add);
  nn::ParamStore ps;
  Rng rng(36);
  FlowGroup fg(cfg, ps, rng);

  // Zero slots with the (zero-initialized) bias -> zero embedding.
  const Var zero = fg.fuse_slots(nn::make_param(Tensor::zeros({cfg.slots, cfg.dim})));
  CHECK(zero->value.shape() == std::vector<int>{cfg.dim});
  for (int64_t i = 0; i < zero->value.numel(); ++i) CHECK(zero->value.data()[i] == 0.0);

  // Random slots match an explicit matrix-vector evaluation.
  Rng data_rng(37);
  const Var slots = nn::make_param(Tensor::randn({cfg.slots, cfg.dim}, data_rng));
  const Tensor got = fg.fuse_slots(slots)->value;
  const Tensor& w = ps.get("flow.fuse.w")->value;
  const Tensor& b = ps.get("flow.fuse.b")->value;
  const int in = cfg.slots * cfg.dim;
  for (int o = 0; o < cfg.dim; ++o) {
    double acc = b.data()[o];
    for (int c = 0; c < in; ++c) acc += w.data()[o * in + c] * slots->value.data()[c];
    CHECK(got.data()[o] == doctest::Approx(acc).epsilon(1e-9));
  }

  // A different slot count still lands on a dim-sized embedding.
  FlowGroupConfig cfg2 = cfg;
  cfg2.slots = 2;
  nn::ParamStore ps2;
  Rng rng2(38);
  FlowGroup fg2(cfg2, ps2, rng2, "flowB.");
  const Var out2 = fg2.fuse_slots(nn::make_param(Tensor::zeros({2, cfg.dim})));
  CHECK(out2->value.shape() == std::vector<int>{cfg.dim});
}

TEST_CASE("flowgroup: grouping modes produce the right embedding counts") {
  Rng data_rng(39);
  const auto flows = random_flows(3, 16, 16, data_rng);
  const auto masks = zero_masks(3, 16, 16);

  nn::ParamStore ps2d;
  Rng rng2d(40);
  FlowGroup fg2d(small_cfg(FlowMode::slot2d, FlowInject::time_emb_add), ps2d, rng2d);
  const auto emb2d = fg2d.group_flow(fg2d.encode_flow(flows, masks));
  REQUIRE(emb2d.size() == 3);
  for (const auto& e : emb2d) CHECK(e->value.shape() == std::vector<int>{8});

  nn::ParamStore ps3d;
  Rng rng3d(41);
  FlowGroup fg3d(small_cfg(FlowMode::slot3d, FlowInject::cross_attn_token), ps3d, rng3d);
  const auto emb3d = fg3d.group_flow(fg3d.encode_flow(flows, masks));
  REQUIRE(emb3d.size() == 1);
  CHECK(emb3d[0]->value.shape() == std::vector<int>{8});

  // Single-frame degeneracy: both modes emit one embedding of equal shape.
  const auto one_flow = random_flows(1, 16, 16, data_rng);
  const auto one_mask = zero_masks(1, 16, 16);
  const auto a = fg2d.group_flow(fg2d.encode_flow(one_flow, one_mask));
  const auto b = fg3d.group_flow(fg3d.encode_flow(one_flow, one_mask));
  REQUIRE(a.size() == 1);
  REQUIRE(b.size() == 1);
  CHECK(a[0]->value.shape() == b[0]->value.shape());
}

TEST_CASE("flowgroup: pooled slot3d grouping is frame-order invariant without position codes") {
  FlowGroupConfig cfg = small_cfg(FlowMode::slot3d, FlowInject::cross_attn_token);
  cfg.temporal_pos_enc = false;
  nn::ParamStore ps;
  Rng rng(42);
  FlowGroup fg(cfg, ps, rng);
  // Give the zero-initialized temporal output projection real weights so the
  // temporal layer actually participates in the check.
  Tensor& wo = ps.get("flow.temporal.wo.w")->value;
  Rng wo_rng(43);
  for (int64_t i = 0; i < wo.numel(); ++i) wo.data()[i] = wo_rng.normal(0.0, 0.3);

  Rng data_rng(44);
  const auto flows = random_flows(4, 16, 16, data_rng);
  const auto masks = zero_masks(4, 16, 16);
  auto reversed_flows = flows;
  std::reverse(reversed_flows.begin(), reversed_flows.end());

  const Tensor fwd = fg.group_flow(fg.encode_flow(flows, masks))[0]->value;
  const Tensor rev = fg.group_flow(fg.encode_flow(reversed_flows, masks))[0]->value;
  CHECK(max_abs_diff(fwd, rev) < 1e-9);

  // With position codes enabled the ordering must matter.
  FlowGroupConfig cfg_pe = cfg;
  cfg_pe.temporal_pos_enc = true;
  nn::ParamStore ps_pe;
  Rng rng_pe(42);
  FlowGroup fg_pe(cfg_pe, ps_pe, rng_pe);
  Tensor& wo_pe = ps_pe.get("flow.temporal.wo.w")->value;
  Rng wo_rng_pe(43);
  for (int64_t i = 0; i < wo_pe.numel(); ++i) wo_pe.data()[i] = wo_rng_pe.normal(0.0, 0.3);
  const Tensor fwd_pe = fg_pe.group_flow(fg_pe.encode_flow(flows, masks))[0]->value;
  const Tensor rev_pe = fg_pe.group_flow(fg_pe.encode_flow(reversed_flows, masks))[0]->value;
  CHECK(max_abs_diff(fwd_pe, rev_pe) > 1e-6);
}

TEST_CASE("flowgroup: motion injection payloads match their contracts") {
  Rng data_rng(45);
  const auto flows = random_flows(2, 16, 16, data_rng);
  const auto masks = zero_masks(2, 16, 16);

  nn::ParamStore ps_tok;
  Rng rng_tok(46);
  FlowGroup fg_tok(small_cfg(FlowMode::slot2d, FlowInject::cross_attn_token), ps_tok, rng_tok);
  const auto emb = fg_tok.group_flow(fg_tok.encode_flow(flows, masks));
  const MotionPayload tok = fg_tok.inject_motion(emb);
  CHECK(tok.inject == FlowInject::cross_attn_token);
  REQUIRE(tok.tokens.size() == 2);  // the prompt grows by exactly one token per frame
  CHECK(tok.time_add.empty());
  for (const auto& t : tok.tokens) CHECK(t->value.shape() == std::vector<int>{1, 8});

  nn::ParamStore ps_time;
  Rng rng_time(47);
  FlowGroup fg_time(small_cfg(FlowMode::slot2d, FlowInject::time_emb_add), ps_time, rng_time);
  const auto emb_t = fg_time.group_flow(fg_time.encode_flow(flows, masks));
  const MotionPayload tim = fg_time.inject_motion(emb_t);
  REQUIRE(tim.time_add.size() == 2);
  CHECK(tim.tokens.empty());
  for (const auto& t : tim.time_add) CHECK(t->value.shape() == std::vector<int>{12});

  // Zero embedding -> zero additive term: the timestep embedding is unchanged.
  const MotionPayload zero =
      fg_time.inject_motion({nn::make_param(Tensor::zeros({8}))});
  for (int64_t i = 0; i < zero.time_add[0]->value.numel(); ++i) {
    CHECK(zero.time_add[0]->value.data()[i] == 0.0);
  }

  CHECK_THROWS_AS((void)fg_tok.inject_motion({}), Error);
  CHECK_THROWS_AS((void)fg_tok.inject_motion({nn::make_param(Tensor::zeros({4}))}), Error);
}

TEST_CASE("flowgroup: dense mode forwards upsampled flow features") {
  nn::ParamStore ps;
  Rng rng(48);
  FlowGroup fg(small_cfg(FlowMode::dense, FlowInject::none), ps, rng);

  Rng data_rng(49);
  const auto flows = random_flows(2, 32, 32, data_rng);
  const Var feats = fg.encode_flow(flows, zero_masks(2, 32, 32));
  const Var dense = fg.dense_features(feats, 32, 32);
  // The denoiser input would grow by exactly the feature channel count.
  CHECK(dense->value.shape() == std::vector<int>{2, 8, 32, 32});

  // Nearest upsampling: every 8x8 block repeats its source feature.
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const double got = dense->value.data()[size_t(y) * 32 + x];
      const double src = feats->value.data()[size_t(y / 8) * 4 + (x / 8)];
      REQUIRE(got == src);
    }
  }

  CHECK_THROWS_AS((void)fg.dense_features(feats, 24, 24), Error);
  CHECK_THROWS_AS((void)fg.group_flow(feats), Error);
  CHECK_THROWS_AS((void)fg.slot_attention(nn::make_param(Tensor::zeros({4, 8}))), Error);
  CHECK_THROWS_AS((void)fg.inject_motion({nn::make_param(Tensor::zeros({8}))}), Error);

  // And the slot pipeline refuses to hand out dense features.
  nn::ParamStore ps2;
  Rng rng2(50);
  FlowGroup fg2(small_cfg(FlowMode::slot2d, FlowInject::time_emb_add), ps2, rng2);
  const Var feats2 = fg2.encode_flow(flows, zero_masks(2, 32, 32));
  CHECK_THROWS_AS((void)fg2.dense_features(feats2, 32, 32), Error);

  CHECK_THROWS_AS(FlowGroup(small_cfg(FlowMode::none, FlowInject::none), ps2, rng2, "x."), Error);
}
