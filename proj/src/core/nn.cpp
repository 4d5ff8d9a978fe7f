#include "core/nn.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "core/error.hpp"

static_assert(std::endian::native == std::endian::little, "archive i/o assumes little endian");

namespace mvi::nn {

Var ParamStore::create(const std::string& name, Tensor init, bool trainable) {
  require_arg(!name.empty(), "parameter name must not be empty");
  require(params_.count(name) == 0, ErrKind::invalid_argument,
          "duplicate parameter name: " + name);
  Var v = make_param(std::move(init));
  v->requires_grad = trainable;
  params_[name] = v;
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), ErrKind::invalid_argument, "unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, var] : params_) out.push_back(name);
  return out;
}

std::vector<Var> ParamStore::trainable() const {
  std::vector<Var> out;
  for (const auto& [name, var] : params_)
    if (var->requires_grad) out.push_back(var);
  return out;
}

int64_t ParamStore::numel_total() const {
  int64_t n = 0;
  for (const auto& [name, var] : params_) n += var->value.numel();
  return n;
}

int64_t ParamStore::numel_trainable() const {
  int64_t n = 0;
  for (const auto& [name, var] : params_)
    if (var->requires_grad) n += var->value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, var] : params_) {
    var->grad = Tensor();
    var->grad_alloc = false;
  }
}

std::map<std::string, Tensor> ParamStore::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, var] : params_) out[name] = var->value;
  return out;
}

void ParamStore::load(const std::map<std::string, Tensor>& tensors, bool allow_missing) {
  for (const auto& [name, t] : tensors) {
    auto it = params_.find(name);
    require(it != params_.end(), ErrKind::config, "checkpoint has unknown parameter: " + name);
    require(it->second->value.shape() == t.shape(), ErrKind::config,
            "checkpoint shape mismatch for " + name + ": model " + it->second->value.shape_str() +
                " vs stored " + t.shape_str());
    std::copy(t.data(), t.data() + t.numel(), it->second->value.data());
  }
  if (!allow_missing) {
    for (const auto& [name, var] : params_)
      require(tensors.count(name) != 0, ErrKind::config,
              "checkpoint is missing parameter: " + name);
  }
}

// --- archive -------------------------------------------------------------

namespace {

constexpr char kArchiveMagic[4] = {'M', 'V', 'T', 'A'};

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void write_i32(std::ofstream& f, int32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
int32_t read_i32(std::ifstream& f) {
  int32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace

void save_tensor_archive(const std::string& path, const std::map<std::string, Tensor>& tensors) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), ErrKind::io, "cannot open for writing: " + path);
  f.write(kArchiveMagic, 4);
  write_u32(f, uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_u32(f, uint32_t(name.size()));
    f.write(name.data(), std::streamsize(name.size()));
    write_u32(f, uint32_t(t.ndim()));
    for (int d : t.shape()) write_i32(f, d);
    f.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.numel() * 8));
  }
  require(f.good(), ErrKind::io, "write failed: " + path);
}

std::map<std::string, Tensor> load_tensor_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrKind::io, "cannot open: " + path);
  char magic[4] = {};
  f.read(magic, 4);
  require(f.good() && std::equal(magic, magic + 4, kArchiveMagic), ErrKind::io,
          "not a tensor archive: " + path);
  const uint32_t count = read_u32(f);
  std::map<std::string, Tensor> out;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(f);
    require(f.good() && name_len > 0 && name_len < 4096, ErrKind::io,
            "corrupt archive (name length): " + path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const uint32_t ndim = read_u32(f);
    require(f.good() && ndim >= 1 && ndim <= 8, ErrKind::io, "corrupt archive (rank): " + path);
    std::vector<int> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) {
      shape[d] = read_i32(f);
      require(shape[d] >= 1, ErrKind::io, "corrupt archive (dim): " + path);
    }
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * 8));
    require(f.good(), ErrKind::io, "corrupt archive (payload): " + path);
    require(out.count(name) == 0, ErrKind::io, "duplicate tensor in archive: " + name);
    out[name] = std::move(t);
  }
  return out;
}

// --- optimizer -----------------------------------------------------------

void Adam::step(ParamStore& store) {
  for (const auto& name : store.names()) {
    Var p = store.get(name);
    if (!p->requires_grad || !p->grad_alloc) continue;
    Slot& s = state_[name];
    if (s.t == 0) {
      s.m = Tensor::zeros(p->value.shape());
      s.v = Tensor::zeros(p->value.shape());
    }
    s.t += 1;
    const double bc1 = 1.0 - std::pow(beta1_, double(s.t));
    const double bc2 = 1.0 - std::pow(beta2_, double(s.t));
    const int64_t n = p->value.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double g = p->grad.data()[i];
      s.m.data()[i] = beta1_ * s.m.data()[i] + (1.0 - beta1_) * g;
      s.v.data()[i] = beta2_ * s.v.data()[i] + (1.0 - beta2_) * g * g;
      const double mhat = s.m.data()[i] / bc1;
      const double vhat = s.v.data()[i] / bc2;
      p->value.data()[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double clip_grad_norm(ParamStore& store, double max_norm) {
  require_arg(max_norm > 0.0, "clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (const auto& name : store.names()) {
    Var p = store.get(name);
    if (!p->requires_grad || !p->grad_alloc) continue;
    for (int64_t i = 0; i < p->grad.numel(); ++i) sq += p->grad.data()[i] * p->grad.data()[i];
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (const auto& name : store.names()) {
      Var p = store.get(name);
      if (!p->requires_grad || !p->grad_alloc) continue;
      for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad.data()[i] *= s;
    }
  }
  return norm;
}

// --- init ----------------------------------------------------------------

Tensor kaiming_normal(Rng& rng, const std::vector<int>& shape, int fan_in) {
  require_arg(fan_in >= 1, "kaiming_normal: bad fan_in");
  return Tensor::randn(shape, rng, std::sqrt(2.0 / double(fan_in)));
}

Tensor xavier_normal(Rng& rng, int rows, int cols) {
  return Tensor::randn({rows, cols}, rng, std::sqrt(2.0 / double(rows + cols)));
}

// --- layers --------------------------------------------------------------

Linear Linear::create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                      bool zero_init) {
  Linear l;
  l.w = ps.create(name + ".w",
                  zero_init ? Tensor::zeros({out, in}) : kaiming_normal(rng, {out, in}, in));
  l.b = ps.create(name + ".b", Tensor::zeros({out}));
  return l;
}

LinearNoBias LinearNoBias::create(ParamStore& ps, const std::string& name, int in, int out,
                                  Rng& rng, bool zero_init) {
  LinearNoBias l;
  l.w = ps.create(name + ".w",
                  zero_init ? Tensor::zeros({out, in}) : kaiming_normal(rng, {out, in}, in));
  return l;
}

Conv2d Conv2d::create(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k,
                      int stride, int pad, Rng& rng, bool zero_init) {
  Conv2d c;
  c.stride = stride;
  c.pad = pad;
  const int fan_in = in_ch * k * k;
  c.w = ps.create(name + ".w", zero_init ? Tensor::zeros({out_ch, in_ch, k, k})
                                         : kaiming_normal(rng, {out_ch, in_ch, k, k}, fan_in));
  c.b = ps.create(name + ".b", Tensor::zeros({out_ch}));
  return c;
}

GroupNormLayer GroupNormLayer::create(ParamStore& ps, const std::string& name, int channels,
                                      int groups) {
  GroupNormLayer g;
  g.groups = groups;
  g.gamma = ps.create(name + ".g", Tensor::full({channels}, 1.0));
  g.beta = ps.create(name + ".b", Tensor::zeros({channels}));
  return g;
}

LayerNormLayer LayerNormLayer::create(ParamStore& ps, const std::string& name, int dim) {
  LayerNormLayer l;
  l.gamma = ps.create(name + ".g", Tensor::full({dim}, 1.0));
  l.beta = ps.create(name + ".b", Tensor::zeros({dim}));
  return l;
}

}  // namespace mvi::nn
