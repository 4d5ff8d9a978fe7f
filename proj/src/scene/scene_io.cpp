#include "scene/scene_io.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "flow i/o assumes little endian");

namespace mvi::scene {

namespace {

constexpr char kFlowMagic[4] = {'M', 'V', 'F', 'L'};

json homography_to_json(const Homography& h) {
  json row = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) row.push_back(h.m(r, c));
  return row;
}

Homography homography_from_json(const json& j) {
  require(j.is_array() && j.size() == 9, ErrKind::io, "meta.json: homography needs 9 entries");
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j[size_t(r * 3 + c)].get<double>();
  return Homography::from_matrix(m);
}

}  // namespace

json spec_to_json(const SceneSpec& spec) {
  json j;
  j["num_frames"] = spec.num_frames;
  j["resolution"] = spec.resolution;
  j["trajectory"] = trajectory_to_string(spec.trajectory);
  j["magnitude"] = spec.magnitude;
  j["plane_texture_seed"] = spec.plane_texture_seed;
  j["rng_seed"] = spec.rng_seed;
  if (spec.object) {
    j["object"] = {{"kind", spec.object->kind},   {"cx", spec.object->cx},
                   {"cy", spec.object->cy},       {"width", spec.object->width},
                   {"depth", spec.object->depth}, {"height", spec.object->height}};
  } else {
    j["object"] = nullptr;
  }
  return j;
}

SceneSpec spec_from_json(const json& j) {
  SceneSpec spec;
  try {
    spec.num_frames = j.value("num_frames", spec.num_frames);
    spec.resolution = j.value("resolution", spec.resolution);
    if (j.contains("trajectory"))
      spec.trajectory = trajectory_from_string(j.at("trajectory").get<std::string>());
    spec.magnitude = j.value("magnitude", spec.magnitude);
    spec.plane_texture_seed = j.value("plane_texture_seed", spec.plane_texture_seed);
    spec.rng_seed = j.value("rng_seed", spec.rng_seed);
    if (j.contains("object") && !j.at("object").is_null()) {
      const json& o = j.at("object");
      ObjectSpec os;
      os.kind = o.value("kind", os.kind);
      os.cx = o.value("cx", os.cx);
      os.cy = o.value("cy", os.cy);
      os.width = o.value("width", os.width);
      os.depth = o.value("depth", os.depth);
      os.height = o.value("height", os.height);
      spec.object = os;
    }
  } catch (const json::exception& e) {
    fail(ErrKind::config, std::string("malformed scene spec: ") + e.what());
  }
  return spec;
}

std::string frame_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", index);
  return buf;
}

void write_flow_file(const std::string& path, const FlowField& flow) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), ErrKind::io, "cannot open for writing: " + path);
  f.write(kFlowMagic, 4);
  const uint32_t h = uint32_t(flow.h), w = uint32_t(flow.w);
  f.write(reinterpret_cast<const char*>(&h), 4);
  f.write(reinterpret_cast<const char*>(&w), 4);
  std::vector<float> row(size_t(flow.w) * 2);
  for (int y = 0; y < flow.h; ++y) {
    for (int x = 0; x < flow.w; ++x) {
      row[size_t(x) * 2 + 0] = float(flow.dx(y, x));
      row[size_t(x) * 2 + 1] = float(flow.dy(y, x));
    }
    f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * 4));
  }
  require(f.good(), ErrKind::io, "write failed: " + path);
}

FlowField read_flow_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrKind::io, "cannot open: " + path);
  char magic[4] = {};
  f.read(magic, 4);
  require(f.good() && std::equal(magic, magic + 4, kFlowMagic), ErrKind::io,
          "not a flow file: " + path);
  uint32_t h = 0, w = 0;
  f.read(reinterpret_cast<char*>(&h), 4);
  f.read(reinterpret_cast<char*>(&w), 4);
  require(f.good() && h >= 1 && w >= 1 && h <= 1 << 14 && w <= 1 << 14, ErrKind::io,
          "corrupt flow header: " + path);
  FlowField flow(static_cast<int>(h), static_cast<int>(w));
  std::vector<float> row(size_t(w) * 2);
  for (uint32_t y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * 4));
    require(f.good(), ErrKind::io, "corrupt flow payload: " + path);
    for (uint32_t x = 0; x < w; ++x) {
      flow.dx(int(y), int(x)) = double(row[size_t(x) * 2 + 0]);
      flow.dy(int(y), int(x)) = double(row[size_t(x) * 2 + 1]);
    }
  }
  std::fill(flow.valid.begin(), flow.valid.end(), uint8_t(1));
  return flow;
}

void save_bundle(const std::string& dir, const SceneBundle& bundle) {
  const int n = bundle.num_frames();
  require_arg(n >= 2, "save_bundle: bundle is empty");
  require_arg(int(bundle.flows.size()) == n - 1, "save_bundle: flow count mismatch");
  for (const char* sub : {"frames", "object_masks", "plane_masks", "flows", "background"})
    fs::create_directories(fs::path(dir) / sub);

  for (int i = 0; i < n; ++i) {
    const std::string name = frame_name(i) + ".png";
    write_png_rgb((fs::path(dir) / "frames" / name).string(), bundle.frames[size_t(i)]);
    write_png_rgb((fs::path(dir) / "background" / name).string(), bundle.background[size_t(i)]);
    write_png_gray((fs::path(dir) / "object_masks" / name).string(),
                   bundle.object_masks[size_t(i)]);
    write_png_gray((fs::path(dir) / "plane_masks" / name).string(),
                   bundle.plane_masks[size_t(i)]);
  }
  for (int i = 0; i + 1 < n; ++i)
    write_flow_file((fs::path(dir) / "flows" / (frame_name(i) + ".mvfl")).string(),
                    bundle.flows[size_t(i)]);

  json meta;
  meta["version"] = 1;
  meta["spec"] = spec_to_json(bundle.spec);
  meta["homographies"] = json::array();
  for (const Homography& h : bundle.homographies) meta["homographies"].push_back(homography_to_json(h));
  meta["bottom_landmarks"] = json::array();
  for (const auto& lm : bundle.bottom_landmarks) {
    json pts = json::array();
    for (const Vec2& p : lm) pts.push_back(json::array({p.x(), p.y()}));
    meta["bottom_landmarks"].push_back(pts);
  }
  std::ofstream mf((fs::path(dir) / "meta.json").string(), std::ios::trunc);
  require(mf.good(), ErrKind::io, "cannot write meta.json in " + dir);
  mf << meta.dump(2) << "\n";
  require(mf.good(), ErrKind::io, "failed writing meta.json in " + dir);
}

SceneBundle load_bundle(const std::string& dir) {
  std::ifstream mf((fs::path(dir) / "meta.json").string());
  require(mf.good(), ErrKind::io, "not a scene bundle (missing meta.json): " + dir);
  json meta;
  try {
    mf >> meta;
  } catch (const json::exception& e) {
    fail(ErrKind::io, std::string("meta.json parse error: ") + e.what());
  }

  SceneBundle bundle;
  bundle.spec = spec_from_json(meta.at("spec"));
  const int n = bundle.spec.num_frames;
  for (const json& j : meta.at("homographies")) bundle.homographies.push_back(homography_from_json(j));
  require(int(bundle.homographies.size()) == n, ErrKind::io, "meta.json: homography count mismatch");
  for (const json& pts : meta.at("bottom_landmarks")) {
    require(pts.is_array() && pts.size() == 4, ErrKind::io, "meta.json: landmarks need 4 points");
    std::array<Vec2, 4> lm;
    for (size_t i = 0; i < 4; ++i)
      lm[i] = Vec2(pts[i][0].get<double>(), pts[i][1].get<double>());
    bundle.bottom_landmarks.push_back(lm);
  }
  require(int(bundle.bottom_landmarks.size()) == n, ErrKind::io,
          "meta.json: landmark count mismatch");

  for (int i = 0; i < n; ++i) {
    const std::string name = frame_name(i) + ".png";
    bundle.frames.push_back(read_png_rgb((fs::path(dir) / "frames" / name).string()));
    bundle.object_masks.push_back(read_png_mask((fs::path(dir) / "object_masks" / name).string()));
    bundle.plane_masks.push_back(read_png_mask((fs::path(dir) / "plane_masks" / name).string()));
    const fs::path bg = fs::path(dir) / "background" / name;
    bundle.background.push_back(fs::exists(bg) ? read_png_rgb(bg.string())
                                               : bundle.frames.back());
  }
  for (int i = 0; i + 1 < n; ++i) {
    FlowField flow =
        read_flow_file((fs::path(dir) / "flows" / (frame_name(i) + ".mvfl")).string());
    require(flow.h == bundle.spec.resolution && flow.w == bundle.spec.resolution, ErrKind::io,
            "flow resolution mismatch in " + dir);
    // Validity is not stored: rebuild it from the masks and the exact pair
    // homography, which reproduces the rule used at render time.
    const Homography pair =
        bundle.homographies[size_t(i) + 1].compose_after(bundle.homographies[size_t(i)].inverse());
    FlowField exact = analytic_flow(pair, bundle.plane_masks[size_t(i)]);
    restrict_flow_validity(exact, bundle.plane_masks[size_t(i) + 1]);
    flow.valid = exact.valid;
    for (int y = 0; y < flow.h; ++y)
      for (int x = 0; x < flow.w; ++x)
        if (!flow.valid[size_t(y) * flow.w + x]) {
          flow.dx(y, x) = 0.0;
          flow.dy(y, x) = 0.0;
        }
    bundle.flows.push_back(std::move(flow));
  }
  return bundle;
}

}  // namespace mvi::scene
