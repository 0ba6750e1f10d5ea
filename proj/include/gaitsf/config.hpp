#pragma once

// Run configuration: every tunable of every stage, settable from `key = value`
// files and command-line overrides.

#include "gaitsf/eval.hpp"
#include "gaitsf/pipeline.hpp"
#include "gaitsf/pretrain.hpp"
#include "gaitsf/synth.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace gaitsf {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  std::uint64_t seed = 1;

  // Synthetic splits.
  int train_subjects = 40;
  int pretrain_subjects = 20;
  int test_subjects = 20;
  std::vector<Condition> conditions{Condition::NM, Condition::CL};
  std::vector<int> views{0, 45, 90, 135, 180};
  int seqs_per_cell = 2;
  int test_nm_seqs = 6;
  int pretrain_seqs = 2;
  int frames = 30;
  double coat_delta_lo = 1.5, coat_delta_hi = 3.0;

  int parts = 4;
  int dim = 16;

  PretrainConfig pretrain{};
  double pretrain_lr = 0.5;
  int pretrain_decay_epoch = 20;

  TrainConfig baseline{};
  TrainConfig sf{};
  bool oracle_views = false;
  int checkpoint_every = 10;

  Protocol protocol{};

  SynthSpec split_spec(int n_subjects, int offset, std::uint64_t salt) const {
    SynthSpec s;
    s.n_subjects = n_subjects;
    s.subject_id_offset = offset;
    s.conditions = conditions;
    s.views = views;
    s.seqs_per_cell = seqs_per_cell;
    s.frames = frames;
    s.seed = derive_seed(seed, salt);
    s.coat_delta = {coat_delta_lo, coat_delta_hi};
    return s;
  }
  SynthSpec pretrain_spec() const {
    SynthSpec s = split_spec(pretrain_subjects, 0, 0xd0);
    s.conditions = {Condition::NM};
    s.seqs_per_cell = pretrain_seqs;
    return s;
  }
  SynthSpec train_spec() const { return split_spec(train_subjects, pretrain_subjects, 0xd0); }
  SynthSpec test_spec() const {
    SynthSpec s = split_spec(test_subjects, pretrain_subjects + train_subjects, 0xd0);
    s.nm_seqs_per_cell = test_nm_seqs;
    return s;
  }

  PretrainConfig pretrain_config() const {
    PretrainConfig p = pretrain;
    p.lr_schedule.assign(static_cast<size_t>(std::max(1, p.epochs)), pretrain_lr);
    for (int e = pretrain_decay_epoch; e < p.epochs; ++e) p.lr_schedule[static_cast<size_t>(e)] = pretrain_lr * 0.1;
    p.seed = derive_seed(seed, 0x9e7);
    return p;
  }
  TrainConfig baseline_config() const {
    TrainConfig c = baseline;
    c.seed = derive_seed(seed, 0xba5e);
    return c;
  }
  TrainConfig sf_config() const {
    TrainConfig c = sf;
    c.seed = derive_seed(seed, 0x5f);
    return c;
  }
  std::uint64_t encoder_seed() const { return derive_seed(seed, 0xe4c); }

  void validate() const {
    require(train_subjects >= 1 && test_subjects >= 1, "data.train_subjects and data.test_subjects must be >= 1");
    require(pretrain_subjects >= 2, "data.pretrain_subjects must be >= 2");
    require(test_nm_seqs >= 1, "data.test_nm_seqs must be >= 1");
    require(pretrain_seqs >= 1, "data.pretrain_seqs must be >= 1");
    require(parts >= 1 && kFrameRows % parts == 0, "encoder.parts must divide 64");
    require(dim >= 1, "encoder.dim must be >= 1");
    require(pretrain.epochs >= 0 && pretrain.batch_size >= 1, "pretrain.epochs >= 0 and pretrain.batch_size >= 1");
    require(pretrain_lr >= 0.0, "pretrain.lr must be >= 0");
    require(checkpoint_every >= 1, "train.checkpoint_every must be >= 1");
    require(protocol.gallery_max_index >= 1, "eval.gallery_max_index must be >= 1");
    require(!protocol.ranks.empty(), "eval.ranks must be non-empty");
    for (int k : protocol.ranks) require(k >= 1, "eval.ranks entries must be >= 1");
    train_spec().validate();
    baseline.validate();
    sf.validate();
  }
};

inline RunConfig default_run_config() {
  RunConfig c;
  c.baseline.epochs = 50;
  c.baseline.iterations = 50;
  c.baseline.s_up = 0.7;
  c.sf.epochs = 50;
  c.sf.iterations = 100;
  c.sf.s_up = 0.3;
  return c;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("'" + v + "' is not a valid number");
  return out;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + v + "' is not a boolean (true/false)");
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (const auto& x : v) {
    if (!out.empty()) out += ",";
    if constexpr (std::is_same_v<T, Condition>)
      out += to_string(x);
    else
      out += std::to_string(x);
  }
  return out;
}

/// Registers a key bound to a member reached through `ref`.
template <typename T, typename Ref>
ConfigKey make_key(std::string name, std::string help, Ref ref) {
  ConfigKey k;
  k.name = std::move(name);
  k.help = std::move(help);
  k.set = [ref](RunConfig& c, const std::string& v) {
    T& dst = ref(c);
    if constexpr (std::is_same_v<T, bool>)
      dst = parse_bool(v);
    else if constexpr (std::is_floating_point_v<T>)
      dst = parse_number<double>(v);
    else if constexpr (std::is_integral_v<T>)
      dst = parse_number<T>(v);
    else if constexpr (std::is_same_v<T, std::vector<int>>) {
      dst.clear();
      for (const auto& s : split_list(v)) dst.push_back(parse_number<int>(s));
    } else if constexpr (std::is_same_v<T, std::vector<Condition>>) {
      dst.clear();
      for (const auto& s : split_list(v)) {
        try {
          dst.push_back(parse_condition(s));
        } catch (const Error& e) {
          throw ConfigError(e.what());
        }
      }
    }
  };
  k.get = [ref](const RunConfig& c) -> std::string {
    const T& v = ref(const_cast<RunConfig&>(c));
    if constexpr (std::is_same_v<T, bool>)
      return v ? "true" : "false";
    else if constexpr (std::is_floating_point_v<T>)
      return fmt_double(v);
    else if constexpr (std::is_integral_v<T>)
      return std::to_string(v);
    else
      return join(v);
  };
  return k;
}

inline std::vector<ConfigKey> stage_keys(const std::string& p, TrainConfig RunConfig::*stage) {
  using K = std::vector<ConfigKey>;
  auto s = [stage](RunConfig& c) -> TrainConfig& { return c.*stage; };
  K keys{
      make_key<int>(p + ".epochs", "training epochs", [s](RunConfig& c) -> int& { return s(c).epochs; }),
      make_key<int>(p + ".iterations", "iterations per epoch", [s](RunConfig& c) -> int& { return s(c).iterations; }),
      make_key<double>(p + ".lr", "SGD learning rate", [s](RunConfig& c) -> double& { return s(c).lr; }),
      make_key<double>(p + ".weight_decay", "L2 weight decay", [s](RunConfig& c) -> double& { return s(c).weight_decay; }),
      make_key<std::vector<int>>(p + ".milestones", "iterations at which lr is multiplied by lr_gamma",
                                 [s](RunConfig& c) -> std::vector<int>& { return s(c).milestones; }),
      make_key<double>(p + ".lr_gamma", "lr decay factor at milestones", [s](RunConfig& c) -> double& { return s(c).lr_gamma; }),
      make_key<int>(p + ".batch_clusters", "clusters per batch (B_S)", [s](RunConfig& c) -> int& { return s(c).batch_clusters; }),
      make_key<int>(p + ".batch_seqs", "sequences per cluster (B_T)", [s](RunConfig& c) -> int& { return s(c).batch_seqs; }),
      make_key<int>(p + ".frames", "frames sampled per sequence and epoch", [s](RunConfig& c) -> int& { return s(c).frames; }),
      make_key<int>(p + ".knn", "neighbours per node in the KNN graph", [s](RunConfig& c) -> int& { return s(c).knn; }),
      make_key<bool>(p + ".mutual_knn", "keep only mutual neighbours", [s](RunConfig& c) -> bool& { return s(c).mutual_knn; }),
      make_key<double>(p + ".s_up", "edge pruning threshold", [s](RunConfig& c) -> double& { return s(c).s_up; }),
      make_key<int>(p + ".infomap_trials", "independent InfoMap restarts", [s](RunConfig& c) -> int& { return s(c).infomap.trials; }),
      make_key<double>(p + ".tau", "ClusterNCE temperature", [s](RunConfig& c) -> double& { return s(c).tau; }),
      make_key<double>(p + ".momentum", "fixed momentum, or m_max of the cosine schedule",
                       [s](RunConfig& c) -> double& { return s(c).momentum.m_max; }),
      make_key<double>(p + ".momentum_min", "m_min of the cosine schedule",
                       [s](RunConfig& c) -> double& { return s(c).momentum.m_min; }),
      make_key<bool>(p + ".renormalize_bank", "renormalize centroids after each update",
                     [s](RunConfig& c) -> bool& { return s(c).renormalize_bank; }),
  };
  ConfigKey cosine;
  cosine.name = p + ".momentum_cosine";
  cosine.help = "cosine momentum schedule instead of a fixed value";
  cosine.set = [s](RunConfig& c, const std::string& v) {
    s(c).momentum.mode = parse_bool(v) ? MomentumSchedule::Mode::Cosine : MomentumSchedule::Mode::Fixed;
  };
  cosine.get = [s](const RunConfig& c) -> std::string {
    return s(const_cast<RunConfig&>(c)).momentum.mode == MomentumSchedule::Mode::Cosine ? "true" : "false";
  };
  keys.push_back(std::move(cosine));
  return keys;
}

}  // namespace detail

/// Every configurable key, in help order.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::make_key;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k{
        make_key<std::uint64_t>("seed", "master seed; all stage seeds derive from it",
                                [](RunConfig& c) -> std::uint64_t& { return c.seed; }),
        make_key<int>("data.train_subjects", "subjects in the unlabeled training split",
                      [](RunConfig& c) -> int& { return c.train_subjects; }),
        make_key<int>("data.pretrain_subjects", "subjects in the labeled pre-training split",
                      [](RunConfig& c) -> int& { return c.pretrain_subjects; }),
        make_key<int>("data.test_subjects", "subjects in the evaluation split",
                      [](RunConfig& c) -> int& { return c.test_subjects; }),
        make_key<std::vector<Condition>>("data.conditions", "walking conditions (NM, BG, CL)",
                                         [](RunConfig& c) -> std::vector<Condition>& { return c.conditions; }),
        make_key<std::vector<int>>("data.views", "view angles in degrees",
                                   [](RunConfig& c) -> std::vector<int>& { return c.views; }),
        make_key<int>("data.seqs_per_cell", "sequences per subject/condition/view",
                      [](RunConfig& c) -> int& { return c.seqs_per_cell; }),
        make_key<int>("data.test_nm_seqs", "NM sequences per subject/view in the evaluation split",
                      [](RunConfig& c) -> int& { return c.test_nm_seqs; }),
        make_key<int>("data.pretrain_seqs", "NM sequences per subject/view in the pre-training split",
                      [](RunConfig& c) -> int& { return c.pretrain_seqs; }),
        make_key<int>("data.frames", "frames per sequence", [](RunConfig& c) -> int& { return c.frames; }),
        make_key<double>("data.coat_delta_lo", "smallest coat widening in pixels",
                         [](RunConfig& c) -> double& { return c.coat_delta_lo; }),
        make_key<double>("data.coat_delta_hi", "largest coat widening in pixels",
                         [](RunConfig& c) -> double& { return c.coat_delta_hi; }),
        make_key<int>("encoder.parts", "horizontal strips (must divide 64)", [](RunConfig& c) -> int& { return c.parts; }),
        make_key<int>("encoder.dim", "embedding dims per strip", [](RunConfig& c) -> int& { return c.dim; }),
        make_key<int>("pretrain.epochs", "pre-training epochs", [](RunConfig& c) -> int& { return c.pretrain.epochs; }),
        make_key<int>("pretrain.batch_size", "pre-training batch size",
                      [](RunConfig& c) -> int& { return c.pretrain.batch_size; }),
        make_key<double>("pretrain.lr", "pre-training learning rate", [](RunConfig& c) -> double& { return c.pretrain_lr; }),
        make_key<int>("pretrain.decay_epoch", "epoch from which the pre-training lr is divided by 10",
                      [](RunConfig& c) -> int& { return c.pretrain_decay_epoch; }),
        make_key<double>("pretrain.weight_decay", "pre-training weight decay",
                         [](RunConfig& c) -> double& { return c.pretrain.weight_decay; }),
    };
    for (auto& key : detail::stage_keys("baseline", &RunConfig::baseline)) k.push_back(std::move(key));
    for (auto& key : detail::stage_keys("sf", &RunConfig::sf)) k.push_back(std::move(key));
    std::vector<ConfigKey> sf_only{
        make_key<int>("sf.support_a", "support set size a", [](RunConfig& c) -> int& { return c.sf.support_a; }),
        make_key<double>("sf.c_low", "front/back fraction above which a cluster is dissolved",
                         [](RunConfig& c) -> double& { return c.sf.c_low; }),
        make_key<double>("sf.s_o", "initial re-assignment threshold", [](RunConfig& c) -> double& { return c.sf.s_o; }),
        make_key<double>("sf.lambda_base", "base per-epoch threshold decrement",
                         [](RunConfig& c) -> double& { return c.sf.lambda_base; }),
        make_key<double>("sf.s_min", "floor of the re-assignment threshold", [](RunConfig& c) -> double& { return c.sf.s_min; }),
        make_key<bool>("sf.oracle_views", "use ground-truth views instead of the view classifier",
                       [](RunConfig& c) -> bool& { return c.oracle_views; }),
        make_key<int>("augment.upper_kernel", "upper-body structuring element size",
                      [](RunConfig& c) -> int& { return c.sf.augment.upper_kernel; }),
        make_key<int>("augment.lower_kernel", "lower-body structuring element size",
                      [](RunConfig& c) -> int& { return c.sf.augment.lower_kernel; }),
        make_key<int>("augment.upper_lo", "upper boundary row range, low end",
                      [](RunConfig& c) -> int& { return c.sf.augment.upper_bound_lo; }),
        make_key<int>("augment.upper_hi", "upper boundary row range, high end",
                      [](RunConfig& c) -> int& { return c.sf.augment.upper_bound_hi; }),
        make_key<int>("augment.middle_lo", "middle boundary row range, low end",
                      [](RunConfig& c) -> int& { return c.sf.augment.middle_bound_lo; }),
        make_key<int>("augment.middle_hi", "middle boundary row range, high end",
                      [](RunConfig& c) -> int& { return c.sf.augment.middle_bound_hi; }),
        make_key<int>("augment.bottom_lo", "bottom boundary row range, low end",
                      [](RunConfig& c) -> int& { return c.sf.augment.bottom_bound_lo; }),
        make_key<int>("augment.bottom_hi", "bottom boundary row range, high end",
                      [](RunConfig& c) -> int& { return c.sf.augment.bottom_bound_hi; }),
        make_key<double>("augment.identity_prob", "probability a sequence is left unaugmented",
                         [](RunConfig& c) -> double& { return c.sf.augment.identity_prob; }),
        make_key<int>("train.checkpoint_every", "epochs between checkpoints",
                      [](RunConfig& c) -> int& { return c.checkpoint_every; }),
        make_key<int>("eval.gallery_max_index", "NM sequences 1..N form the gallery",
                      [](RunConfig& c) -> int& { return c.protocol.gallery_max_index; }),
        make_key<bool>("eval.exclude_same_view", "drop gallery entries sharing the probe's view",
                       [](RunConfig& c) -> bool& { return c.protocol.exclude_same_view; }),
        make_key<std::vector<int>>("eval.ranks", "reported ranks",
                                   [](RunConfig& c) -> std::vector<int>& { return c.protocol.ranks; }),
    };
    for (auto& key : sf_only) k.push_back(std::move(key));
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

inline void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const ConfigKey* k = find_key(key);
  if (!k) throw ConfigError("unknown config key '" + key + "'");
  try {
    k->set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

/// Applies `key=value` (surrounding spaces allowed).
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set_value(cfg, detail::trim(std::string_view(assignment).substr(0, eq)),
            detail::trim(std::string_view(assignment).substr(eq + 1)));
}

/// Parses `key = value` lines; `#` starts a comment. Errors name the line.
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    try {
      const auto eq = body.find('=');
      if (eq == std::string::npos) throw ConfigError("expected 'key = value'");
      const std::string key = detail::trim(std::string_view(body).substr(0, eq));
      const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
      if (key.empty() || value.empty()) throw ConfigError("expected 'key = value'");
      set_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

/// One line per key: name, default, description.
inline std::string describe_keys() {
  const RunConfig defaults = default_run_config();
  std::string out;
  for (const auto& k : config_keys()) {
    std::string line = "  " + k.name + " = " + k.get(defaults);
    if (line.size() < 40) line.resize(40, ' ');
    out += line + "  " + k.help + "\n";
  }
  return out;
}

}  // namespace gaitsf
