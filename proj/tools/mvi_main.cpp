// Command-line front end. Talks to the core exclusively through the C API in
// mvinpainter/mvi.h; all heavy lifting lives behind that boundary.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mvinpainter/mvi.h"

namespace {

int usage() {
  std::fprintf(stderr,
               "usage: mvi <command> [options]\n"
               "\n"
               "commands:\n"
               "  gen-data   --config <json> --out <dir> [--seed <n>]\n"
               "  train      --config <json> --data <dir> --out <dir> [--seed <n>]\n"
               "  sample     --scene <dir> --model <ckpt> --out <dir> [--seed <n>]\n"
               "  remove     --scene <dir> --model <ckpt> --out <dir> [--seed <n>]\n"
               "             [--dilate <px>] [--self-reference]\n"
               "  insert     --scene <dir> --landmarks <json> --model <ckpt> --out <dir>\n"
               "             [--remover <ckpt>] [--ref-edit <png>] [--seed <n>]\n"
               "  adapt-mask --scene <dir> --landmarks <json> --views <a..b> --out <dir>\n"
               "  interp     --scene <dir> --model <ckpt> --out <dir> [--seed <n>]\n"
               "             [--stride <k>] [--dilate <px>]\n"
               "  eval       --scene <dir> --gen <dir> --out <dir> [--masks <dir>]\n"
               "             [--gt background|frames|none]\n");
  return 2;
}

struct Args {
  std::map<std::string, std::string> values;
  std::map<std::string, bool> flags;

  const char* get(const std::string& key) const {
    auto it = values.find(key);
    return it == values.end() ? nullptr : it->second.c_str();
  }
  const char* need(const std::string& key) const {
    const char* v = get(key);
    if (v == nullptr) {
      std::fprintf(stderr, "mvi: missing --%s\n", key.c_str());
      std::exit(usage());
    }
    return v;
  }
  bool has_flag(const std::string& key) const {
    auto it = flags.find(key);
    return it != flags.end() && it->second;
  }
};

Args parse_args(int argc, char** argv) {
  const std::vector<std::string> boolean = {"self-reference"};
  Args a;
  for (int i = 0; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0) {
      std::fprintf(stderr, "mvi: unexpected argument '%s'\n", arg.c_str());
      std::exit(usage());
    }
    arg = arg.substr(2);
    bool is_flag = false;
    for (const std::string& b : boolean) is_flag = is_flag || arg == b;
    if (is_flag) {
      a.flags[arg] = true;
    } else {
      if (i + 1 >= argc) {
        std::fprintf(stderr, "mvi: --%s needs a value\n", arg.c_str());
        std::exit(usage());
      }
      a.values[arg] = argv[++i];
    }
  }
  return a;
}

std::string read_file(const char* path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    std::fprintf(stderr, "mvi: cannot read %s\n", path);
    std::exit(1);
  }
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

uint64_t seed_of(const Args& a) {
  const char* s = a.get("seed");
  return s == nullptr ? 1u : std::strtoull(s, nullptr, 10);
}

int check(mvi_status st) {
  if (st != MVI_OK) {
    std::fprintf(stderr, "mvi: error (%s): %s\n", mvi_status_name(st), mvi_last_error());
    return int(st);
  }
  return 0;
}

// Holders that release their handle on scope exit.
struct SceneHandle {
  mvi_scene* s = nullptr;
  ~SceneHandle() { mvi_scene_free(s); }
};

struct ModelHandle {
  mvi_model* m = nullptr;
  ~ModelHandle() { mvi_model_free(m); }
};

int load_scene(const Args& a, SceneHandle& h) { return check(mvi_scene_load(a.need("scene"), &h.s)); }

int load_model(const char* dir, ModelHandle& h) { return check(mvi_model_load(dir, &h.m)); }

bool parse_views(const char* text, int* begin, int* end) {
  const char* dots = std::strstr(text, "..");
  char* tail = nullptr;
  if (dots == nullptr) {
    *begin = int(std::strtol(text, &tail, 10));
    *end = *begin;
    return tail != text && *tail == '\0';
  }
  *begin = int(std::strtol(text, &tail, 10));
  if (tail != dots) return false;
  const char* rhs = dots + 2;
  *end = int(std::strtol(rhs, &tail, 10));
  return tail != rhs && *tail == '\0';
}

int cmd_gen_data(const Args& a) {
  const std::string cfg = read_file(a.need("config"));
  return check(mvi_gen_data(cfg.c_str(), a.need("out"), seed_of(a)));
}

int cmd_train(const Args& a) {
  const std::string cfg = read_file(a.need("config"));
  double tail_loss = 0.0;
  const int has_seed = a.get("seed") != nullptr;
  const int rc = check(mvi_train(cfg.c_str(), a.need("data"), a.need("out"), has_seed,
                                 seed_of(a), &tail_loss));
  if (rc == 0) std::printf("trained; tail mean loss %.6f\n", tail_loss);
  return rc;
}

int cmd_sample(const Args& a) {
  SceneHandle scene;
  ModelHandle model;
  int rc = load_scene(a, scene);
  if (rc == 0) rc = load_model(a.need("model"), model);
  if (rc == 0) rc = check(mvi_sample(scene.s, model.m, seed_of(a), a.need("out")));
  return rc;
}

int cmd_remove(const Args& a) {
  SceneHandle scene;
  ModelHandle model;
  int rc = load_scene(a, scene);
  if (rc == 0) rc = load_model(a.need("model"), model);
  const char* dilate = a.get("dilate");
  const int radius = dilate == nullptr ? 2 : std::atoi(dilate);
  if (rc == 0)
    rc = check(mvi_remove(scene.s, model.m, radius, a.has_flag("self-reference") ? 1 : 0,
                          seed_of(a), a.need("out")));
  return rc;
}

int cmd_insert(const Args& a) {
  SceneHandle scene;
  ModelHandle inserter;
  ModelHandle remover;
  int rc = load_scene(a, scene);
  if (rc == 0) rc = load_model(a.need("model"), inserter);
  if (rc == 0 && a.get("remover") != nullptr) rc = load_model(a.get("remover"), remover);
  if (rc == 0) {
    const std::string landmarks = read_file(a.need("landmarks"));
    rc = check(mvi_insert(scene.s, a.get("ref-edit"), landmarks.c_str(), remover.m, inserter.m,
                          seed_of(a), a.need("out")));
  }
  return rc;
}

int cmd_adapt_mask(const Args& a) {
  SceneHandle scene;
  int rc = load_scene(a, scene);
  if (rc != 0) return rc;
  int begin = 0, end = 0;
  if (a.get("views") != nullptr) {
    if (!parse_views(a.get("views"), &begin, &end)) {
      std::fprintf(stderr, "mvi: --views expects 'a..b' or a single index\n");
      return usage();
    }
  } else {
    int n = 0;
    rc = check(mvi_scene_num_frames(scene.s, &n));
    if (rc != 0) return rc;
    end = n - 1;
  }
  const std::string landmarks = read_file(a.need("landmarks"));
  return check(mvi_adapt_mask(scene.s, landmarks.c_str(), begin, end, a.need("out")));
}

int cmd_interp(const Args& a) {
  SceneHandle scene;
  ModelHandle model;
  int rc = load_scene(a, scene);
  if (rc == 0) rc = load_model(a.need("model"), model);
  const char* stride = a.get("stride");
  const char* dilate = a.get("dilate");
  if (rc == 0)
    rc = check(mvi_interp(scene.s, model.m, stride == nullptr ? 0 : std::atoi(stride),
                          dilate == nullptr ? 2 : std::atoi(dilate), seed_of(a), a.need("out")));
  return rc;
}

int cmd_eval(const Args& a) {
  SceneHandle scene;
  int rc = load_scene(a, scene);
  if (rc != 0) return rc;
  int gt = 0;  // score against the scene frames by default
  const char* mode = a.get("gt");
  if (mode != nullptr) {
    if (std::strcmp(mode, "background") == 0)
      gt = 1;
    else if (std::strcmp(mode, "frames") == 0)
      gt = 0;
    else if (std::strcmp(mode, "none") == 0)
      gt = -1;
    else {
      std::fprintf(stderr, "mvi: --gt expects background, frames, or none\n");
      return usage();
    }
  }
  return check(mvi_eval(scene.s, a.need("gen"), a.get("masks"), gt, a.need("out")));
}

}  // namespace

int main(int argc, char** argv) {
  mvi_runtime_init();
  if (argc < 2) return usage();
  const std::string cmd = argv[1];
  const Args args = parse_args(argc - 2, argv + 2);

  if (cmd == "gen-data") return cmd_gen_data(args);
  if (cmd == "train") return cmd_train(args);
  if (cmd == "sample") return cmd_sample(args);
  if (cmd == "remove") return cmd_remove(args);
  if (cmd == "insert") return cmd_insert(args);
  if (cmd == "adapt-mask") return cmd_adapt_mask(args);
  if (cmd == "interp") return cmd_interp(args);
  if (cmd == "eval") return cmd_eval(args);

  std::fprintf(stderr, "mvi: unknown command '%s'\n", cmd.c_str());
  return usage();
}
