#pragma once

#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdsa/dataset.hpp"
#include "pdsa/network.hpp"

namespace pdsa {

struct TrainConfig {
  double lr = 0.002;
  double weight_decay = 1e-4;
  int epochs = 60;
  int batch = 16;
  std::uint64_t seed = 1;
  double smoothing = 0.1;
  bool augment = false;
  int threads = 1;
};

struct IoConfig {
  std::string out_dir;  // empty → $PDSA_OUT_DIR or "out"
  std::string checkpoint;
};

struct EvalConfig {
  std::string split = "test";  // "test" or "train"
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DatasetConfig data;
  IoConfig io;
  EvalConfig eval;
  int ablate_seeds = 5;

  std::string out_dir() const {
    if (!io.out_dir.empty()) return io.out_dir;
    if (const char* env = std::getenv("PDSA_OUT_DIR"); env && *env) return env;
    return "out";
  }
};

namespace detail {

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw std::invalid_argument("expected boolean (true/false), got '" + s + "'");
}

inline long long parse_int(const std::string& s) {
  std::size_t pos = 0;
  long long v;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected integer, got '" + s + "'");
  }
  if (pos != s.size()) throw std::invalid_argument("expected integer, got '" + s + "'");
  return v;
}

inline double parse_real(const std::string& s) {
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected number, got '" + s + "'");
  }
  if (pos != s.size()) throw std::invalid_argument("expected number, got '" + s + "'");
  return v;
}

inline std::vector<StageSpec> parse_stages(const std::string& s) {
  std::vector<StageSpec> stages;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    StageSpec st;
    int k;
    char c1, c2;
    std::istringstream fs(item);
    fs >> st.stride >> c1 >> st.radius >> c2 >> k;
    if (fs.fail() || c1 != ':' || c2 != ':' || fs.rdbuf()->in_avail() != 0)
      throw std::invalid_argument("expected stride:radius:k triple, got '" + item + "'");
    st.k = k;
    stages.push_back(st);
  }
  if (stages.empty()) throw std::invalid_argument("stage list is empty");
  return stages;
}

inline std::string render_stages(const std::vector<StageSpec>& stages) {
  std::ostringstream os;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) os << ',';
    os << stages[i].stride << ':' << stages[i].radius << ':' << stages[i].k;
  }
  return os.str();
}

inline std::string render_bool(bool v) { return v ? "true" : "false"; }

inline std::string render_real(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace detail

struct ConfigKey {
  const char* name;
  const char* description;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_schema() {
  using detail::parse_bool;
  using detail::parse_int;
  using detail::parse_real;
  using detail::render_bool;
  using detail::render_real;
  static const std::vector<ConfigKey> schema = {
      {"model.variant", "architecture: 'pdsa' or 'sa_baseline'",
       [](RunConfig& c, const std::string& v) { c.model.variant = v; },
       [](const RunConfig& c) { return c.model.variant; }},
      {"model.channels", "feature width of the first stage (doubles per stage)",
       [](RunConfig& c, const std::string& v) { c.model.channels = static_cast<int>(parse_int(v)); },
       [](const RunConfig& c) { return std::to_string(c.model.channels); }},
      {"model.la_blocks", "stride-1 local-aggregation blocks appended per stage",
       [](RunConfig& c, const std::string& v) { c.model.la_blocks = static_cast<int>(parse_int(v)); },
       [](const RunConfig& c) { return std::to_string(c.model.la_blocks); }},
      {"model.stages", "comma list of stride:radius:k per downsampling stage",
       [](RunConfig& c, const std::string& v) { c.model.stages = detail::parse_stages(v); },
       [](const RunConfig& c) { return detail::render_stages(c.model.stages); }},
      {"model.a_dim", "anchor width of compressed descriptor entries",
       [](RunConfig& c, const std::string& v) { c.model.a_dim = static_cast<int>(parse_int(v)); },
       [](const RunConfig& c) { return std::to_string(c.model.a_dim); }},
      {"model.h", "hidden width of the correction MLPs",
       [](RunConfig& c, const std::string& v) { c.model.h = static_cast<int>(parse_int(v)); },
       [](const RunConfig& c) { return std::to_string(c.model.h); }},
      {"model.rho", "key-point fraction for sparse global attention",
       [](RunConfig& c, const std::string& v) { c.model.rho = parse_real(v); },
       [](const RunConfig& c) { return render_real(c.model.rho); }},
      {"model.cdip", "enable per-neighbor feature correction",
       [](RunConfig& c, const std::string& v) { c.model.cdip = parse_bool(v); },
       [](const RunConfig& c) { return render_bool(c.model.cdip); }},
      {"model.dw", "enable distance weighting inside descriptors",
       [](RunConfig& c, const std::string& v) { c.model.dw = parse_bool(v); },
       [](const RunConfig& c) { return render_bool(c.model.dw); }},
      {"model.cics", "enable global attention over descriptors",
       [](RunConfig& c, const std::string& v) { c.model.cics = parse_bool(v); },
       [](const RunConfig& c) { return render_bool(c.model.cics); }},
      {"model.ph_descriptor", "use the fixed per-octant centroid descriptor",
       [](RunConfig& c, const std::string& v) { c.model.ph_descriptor = parse_bool(v); },
       [](const RunConfig& c) { return render_bool(c.model.ph_descriptor); }},
      {"train.lr", "AdamW learning rate",
       [](RunConfig& c, const std::string& v) { c.train.lr = parse_real(v); },
       [](const RunConfig& c) { return render_real(c.train.lr); }},
      {"train.weight_decay", "AdamW decoupled weight decay",
       [](RunConfig& c, const std::string& v) { c.train.weight_decay = parse_real(v); },
       [](const RunConfig& c) { return render_real(c.train.weight_decay); }},
      {"train.epochs", "training epochs (0 writes an untrained checkpoint)",
       [](RunConfig& c, const std::string& v) { c.train.epochs = static_cast<int>(parse_int(v)); },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {"train.batch", "objects per optimizer step",
       [](RunConfig& c, const std::string& v) { c.train.batch = static_cast<int>(parse_int(v)); },
       [](const RunConfig& c) { return std::to_string(c.train.batch); }},
      {"train.seed", "seed for init, shuffling and augmentation",
       [](RunConfig& c, const std::string& v) { c.train.seed = static_cast<std::uint64_t>(parse_int(v)); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      {"train.smoothing", "label smoothing for cross-entropy",
       [](RunConfig& c, const std::string& v) { c.train.smoothing = parse_real(v); },
       [](const RunConfig& c) { return render_real(c.train.smoothing); }},
      {"train.augment", "random z-rotation + jitter per epoch",
       [](RunConfig& c, const std::string& v) { c.train.augment = parse_bool(v); },
       [](const RunConfig& c) { return render_bool(c.train.augment); }},
      {"train.threads", "worker threads per batch (1 is fully deterministic)",
       [](RunConfig& c, const std::string& v) { c.train.threads = static_cast<int>(parse_int(v)); },
       [](const RunConfig& c) { return std::to_string(c.train.threads); }},
      {"data.n_points", "points per generated object",
       [](RunConfig& c, const std::string& v) { c.data.n_points = static_cast<int>(parse_int(v)); },
       [](const RunConfig& c) { return std::to_string(c.data.n_points); }},
      {"data.train_per_class", "training objects per class",
       [](RunConfig& c, const std::string& v) { c.data.train_per_class = static_cast<int>(parse_int(v)); },
       [](const RunConfig& c) { return std::to_string(c.data.train_per_class); }},
      {"data.test_per_class", "test objects per class",
       [](RunConfig& c, const std::string& v) { c.data.test_per_class = static_cast<int>(parse_int(v)); },
       [](const RunConfig& c) { return std::to_string(c.data.test_per_class); }},
      {"data.noise_sigma", "Gaussian surface noise",
       [](RunConfig& c, const std::string& v) { c.data.noise_sigma = parse_real(v); },
       [](const RunConfig& c) { return render_real(c.data.noise_sigma); }},
      {"data.outlier_fraction", "fraction of points replaced by uniform outliers",
       [](RunConfig& c, const std::string& v) { c.data.outlier_fraction = parse_real(v); },
       [](const RunConfig& c) { return render_real(c.data.outlier_fraction); }},
      {"data.outlier_spread", "half-width of the outlier box",
       [](RunConfig& c, const std::string& v) { c.data.outlier_spread = parse_real(v); },
       [](const RunConfig& c) { return render_real(c.data.outlier_spread); }},
      {"eval.split", "split used by the eval command: 'test' or 'train'",
       [](RunConfig& c, const std::string& v) {
         if (v != "test" && v != "train")
           throw std::invalid_argument("expected 'test' or 'train', got '" + v + "'");
         c.eval.split = v;
       },
       [](const RunConfig& c) { return c.eval.split; }},
      {"io.out_dir", "output directory (default $PDSA_OUT_DIR or 'out')",
       [](RunConfig& c, const std::string& v) { c.io.out_dir = v; },
       [](const RunConfig& c) { return c.io.out_dir; }},
      {"io.checkpoint", "checkpoint path for eval/inspect",
       [](RunConfig& c, const std::string& v) { c.io.checkpoint = v; },
       [](const RunConfig& c) { return c.io.checkpoint; }},
      {"ablate.seeds", "number of seeds per ablation variant",
       [](RunConfig& c, const std::string& v) { c.ablate_seeds = static_cast<int>(parse_int(v)); },
       [](const RunConfig& c) { return std::to_string(c.ablate_seeds); }},
  };
  return schema;
}

inline void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const ConfigKey& k : config_schema()) {
    if (key == k.name) {
      try {
        k.set(cfg, value);
      } catch (const std::exception& e) {
        throw std::invalid_argument("config key '" + key + "': " + e.what());
      }
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Parses `key = value` lines; '#' starts a comment, blank lines are skipped.
inline void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file '" + path + "'");
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (std::size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                  ": expected 'key = value', got '" + body + "'");
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string value = detail::trim(body.substr(eq + 1));
    try {
      apply_config_value(cfg, key, value);
    } catch (const std::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

/// Applies a `KEY=VALUE` override as given on the command line.
inline void apply_config_override(RunConfig& cfg, const std::string& kv) {
  const std::size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override '" + kv + "' is not of the form KEY=VALUE");
  apply_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
}

inline std::string render_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const ConfigKey& k : config_schema()) os << k.name << " = " << k.get(cfg) << '\n';
  return os.str();
}

inline std::string config_help_text() {
  const RunConfig defaults;
  std::ostringstream os;
  os << "Config keys (file lines or --set KEY=VALUE overrides):\n";
  for (const ConfigKey& k : config_schema()) {
    std::string dflt = k.get(defaults);
    if (dflt.empty()) dflt = "<empty>";
    os << "  " << k.name << " (default " << dflt << ")\n      " << k.description << '\n';
  }
  return os.str();
}

}  // namespace pdsa
