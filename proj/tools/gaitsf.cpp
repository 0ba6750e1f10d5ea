// gaitsf: generate synthetic gait data, train the three stages, evaluate.
//
// Exit codes: 0 ok, 1 internal error, 2 config error, 3 IO error,
// 4 missing prior stage, 5 evaluation protocol error.

#include "gaitsf/workflow.hpp"

#include <CLI11.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>

namespace fs = std::filesystem;
using namespace gaitsf;

namespace {

enum Exit { kOk = 0, kInternal = 1, kConfig = 2, kIo = 3, kMissingStage = 4, kProtocol = 5 };

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  int threads = 0;
  std::int64_t seed = -1;
  bool verbose = false;
};

RunConfig load_config(const Globals& g) {
  RunConfig cfg = default_run_config();
  if (!g.config_path.empty()) apply_config_file(cfg, g.config_path);
  if (g.seed >= 0) cfg.seed = static_cast<std::uint64_t>(g.seed);
  for (const auto& o : g.overrides) apply_override(cfg, o);
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

/// Accepts either a split directory or a root holding <split>/manifest.jsonl.
Dataset load_split(const fs::path& dir, const std::string& split) {
  if (fs::exists(dir / "manifest.jsonl")) return read_dataset(dir);
  if (fs::exists(dir / split / "manifest.jsonl")) return read_dataset(dir / split);
  throw IoError("no dataset at " + dir.string() + " (expected manifest.jsonl or " + split + "/manifest.jsonl)");
}

class History {
 public:
  History(const fs::path& path, const std::vector<EpochRecord>& existing) : out_(path, std::ios::trunc) {
    if (!out_) throw IoError("cannot write " + path.string());
    for (const auto& r : existing) append(r);
  }
  void append(const EpochRecord& r) { write(r.to_json()); }
  void write(const nlohmann::json& j) {
    out_ << j.dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("history write failed");
  }

 private:
  std::ofstream out_;
};

int cmd_generate(const Globals& g, const fs::path& out) {
  const RunConfig cfg = load_config(g);
  const Splits s = generate_splits(cfg);
  write_splits(out, s);
  std::cout << "generated " << s.pretrain.sequences.size() + s.train.sequences.size() + s.test.sequences.size()
            << " sequences (pretrain " << s.pretrain.sequences.size() << ", train " << s.train.sequences.size()
            << ", test " << s.test.sequences.size() << ") in " << out.string() << "\n";
  return kOk;
}

void train_pretrain(const RunConfig& cfg, const fs::path& data, const fs::path& run) {
  const Dataset ds = load_split(data, "pretrain");
  const PretrainResult r = run_pretrain(cfg, ds.sequences);
  const fs::path dir = run / "pretrain";
  fs::create_directories(dir);
  save_params(dir / "params.bin", r.params);
  History h(dir / "history.jsonl", {});
  const size_t per_epoch = (ds.sequences.size() + static_cast<size_t>(cfg.pretrain.batch_size) - 1) /
                           static_cast<size_t>(cfg.pretrain.batch_size);
  for (size_t e = 0; per_epoch > 0 && (e + 1) * per_epoch <= r.loss_history.size(); ++e) {
    double sum = 0.0;
    for (size_t i = e * per_epoch; i < (e + 1) * per_epoch; ++i) sum += r.loss_history[i];
    h.write({{"epoch", e}, {"mean_loss", sum / static_cast<double>(per_epoch)}});
  }
  std::cout << "pretrain: " << cfg.pretrain.epochs << " epochs, params in " << (dir / "params.bin").string() << "\n";
}

void train_unsupervised(const RunConfig& cfg, Stage stage, const fs::path& data, const fs::path& run, bool resume) {
  const bool sf = stage == Stage::SelectiveFusion;
  const std::string name = sf ? "sf" : "baseline";
  const std::string prior = sf ? "baseline" : "pretrain";
  const fs::path prior_params = run / prior / "params.bin";
  if (!fs::exists(prior_params)) throw MissingStageError(prior, prior_params.string() + " not found");
  const TrainConfig tc = sf ? cfg.sf_config() : cfg.baseline_config();
  const Dataset train = load_split(data, "train");

  std::vector<int> flags;
  const fs::path dir = run / name;
  fs::create_directories(dir);
  if (sf) {
    const fs::path pre = run / "pretrain" / "params.bin";
    if (!fs::exists(pre)) throw MissingStageError("pretrain", pre.string() + " not found");
    const EncoderParams pre_params = load_params(pre);
    const ViewClassifier clf =
        cfg.oracle_views ? oracle_view_classifier() : fit_view_classifier(cfg, pre_params, load_split(data, "pretrain").sequences);
    flags = training_view_flags(clf, pre_params, train.sequences);
    std::ofstream(dir / "view_classifier.json") << view_classifier_json(clf).dump(2) << '\n';
  }

  const fs::path ckpt = dir / "checkpoint";
  TrainState state = resume && fs::exists(ckpt / "state.json") ? load_checkpoint(ckpt)
                                                               : initial_state(load_params(prior_params), tc);
  if (resume) spdlog::info("{}: resuming at epoch {}", name, state.epoch);
  History history(dir / "history.jsonl", state.records);
  const EpochCallback on_epoch = [&](const TrainState& st, const MemoryBank& bank) {
    history.append(st.records.back());
    if (st.epoch % cfg.checkpoint_every == 0 || st.epoch == tc.epochs) save_checkpoint(ckpt, st, &bank);
  };
  state = run_stage(stage, train.sequences, std::move(state), tc, flags, on_epoch);
  save_params(dir / "params.bin", state.params);
  std::cout << name << ": " << state.records.size() << " epochs, params in " << (dir / "params.bin").string() << "\n";
}

int cmd_eval(const Globals& g, const fs::path& checkpoint, const fs::path& data, const fs::path& out,
             const std::string& ranks) {
  RunConfig cfg = load_config(g);
  if (!ranks.empty()) apply_override(cfg, "eval.ranks=" + ranks);
  const fs::path params_path = fs::is_directory(checkpoint) ? checkpoint / "params.bin" : checkpoint;
  if (!fs::exists(params_path)) throw IoError("checkpoint not found: " + params_path.string());
  const EncoderParams params = load_params(params_path);
  const Dataset test = load_split(data, "test");
  const ResultTable t = evaluate_params(params, test.sequences, cfg.protocol);
  write_reports(t, out);
  for (const auto& [cond, cell] : t.by_condition) {
    std::cout << cond << ":";
    for (const auto& [k, acc] : cell.accuracy) std::cout << fmt::format(" rank-{} {:.1f}", k, acc);
    std::cout << " (" << cell.count << " probes)\n";
  }
  if (t.skipped) std::cout << "skipped " << t.skipped << " probes with no cross-view gallery\n";
  return kOk;
}

int cmd_report(const std::vector<std::string>& dirs) {
  std::cout << "run,condition,probes";
  std::vector<std::pair<std::string, ResultTable>> tables;
  for (const auto& d : dirs) {
    const fs::path p = fs::is_directory(d) ? fs::path(d) / "metrics.json" : fs::path(d);
    tables.emplace_back(d, read_metrics(p));
  }
  std::set<int> ranks;
  for (const auto& [d, t] : tables) ranks.insert(t.ranks.begin(), t.ranks.end());
  for (int k : ranks) std::cout << ",rank" << k;
  std::cout << "\n";
  for (const auto& [d, t] : tables)
    for (const auto& [cond, cell] : t.by_condition) {
      std::cout << d << "," << cond << "," << cell.count;
      for (int k : ranks) {
        auto it = cell.accuracy.find(k);
        std::cout << (it == cell.accuracy.end() ? std::string(",") : fmt::format(",{:.1f}", it->second));
      }
      std::cout << "\n";
    }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("gaitsf"));
  spdlog::set_pattern("[%H:%M:%S.%e] [%l] %v");

  CLI::App app{"Unsupervised gait recognition with selective fusion on synthetic silhouettes"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config_path, "config file of 'key = value' lines");
  app.add_option("--set", g.overrides, "override a config key (key=value), repeatable");
  app.add_option("--threads", g.threads, "worker threads (default: $GAITSF_THREADS or 1)");
  app.add_option("--seed", g.seed, "master seed (same as --set seed=N)");
  app.add_flag("-v,--verbose", g.verbose, "debug logging");
  app.footer("Config keys (defaults shown):\n" + describe_keys());

  std::string out_dir;
  auto* gen = app.add_subcommand("generate", "write pretrain/, train/ and test/ synthetic splits");
  gen->add_option("-o,--out", out_dir, "output directory")->required();

  std::string stage, data_dir, run_dir;
  int epochs = -1;
  bool resume = false;
  auto* train = app.add_subcommand("train", "run one training stage");
  train->add_option("--stage", stage, "pretrain | baseline | sf")->required()->check(
      CLI::IsMember({"pretrain", "baseline", "sf"}));
  train->add_option("-d,--data", data_dir, "dataset root written by 'generate'")->required();
  train->add_option("-r,--run", run_dir, "run directory holding one subdirectory per stage")->required();
  train->add_option("--epochs", epochs, "override the stage's epoch count");
  train->add_flag("--resume", resume, "continue from the stage's last checkpoint");

  std::string checkpoint, eval_data, eval_out, ranks;
  auto* ev = app.add_subcommand("eval", "rank-k identification on the test split");
  ev->add_option("--checkpoint", checkpoint, "params.bin or a stage directory")->required();
  ev->add_option("-d,--data", eval_data, "dataset root or test split directory")->required();
  ev->add_option("-o,--out", eval_out, "directory for metrics.json and per_view.csv")->required();
  ev->add_option("--ranks", ranks, "comma-separated ranks, e.g. 1,5");

  std::vector<std::string> report_dirs;
  auto* rep = app.add_subcommand("report", "tabulate metrics.json files as CSV on stdout");
  rep->add_option("metrics", report_dirs, "eval output directories or metrics.json files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  if (g.verbose) spdlog::set_level(spdlog::level::debug);
  if (g.threads > 0) set_num_threads(g.threads);

  try {
    if (*gen) return cmd_generate(g, out_dir);
    if (*train) {
      RunConfig cfg = load_config(g);
      if (epochs >= 0) apply_override(cfg, (stage == "pretrain" ? "pretrain" : stage) + ".epochs=" + std::to_string(epochs));
      if (stage == "pretrain")
        train_pretrain(cfg, data_dir, run_dir);
      else
        train_unsupervised(cfg, stage == "sf" ? Stage::SelectiveFusion : Stage::Baseline, data_dir, run_dir, resume);
      return kOk;
    }
    if (*ev) return cmd_eval(g, checkpoint, eval_data, eval_out, ranks);
    if (*rep) return cmd_report(report_dirs);
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kConfig;
  } catch (const MissingStageError& e) {
    spdlog::error("{}", e.what());
    return kMissingStage;
  } catch (const ProtocolError& e) {
    spdlog::error("protocol: {}", e.what());
    return kProtocol;
  } catch (const IoError& e) {
    spdlog::error("io: {}", e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("io: {}", e.what());
    return kIo;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kInternal;
  }
  return kInternal;
}
