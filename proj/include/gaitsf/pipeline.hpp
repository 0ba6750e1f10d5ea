#pragma once

// Unsupervised training stages: the cluster-contrastive baseline and
// Selective Fusion on top of it.

#include "gaitsf/cluster.hpp"
#include "gaitsf/encoder.hpp"
#include "gaitsf/fusion.hpp"
#include "gaitsf/memory.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <functional>
#include <optional>
#include <sstream>

namespace gaitsf {

enum class Stage { Baseline, SelectiveFusion };

struct TrainConfig {
  int epochs = 50;
  int iterations = 50;
  int batch_clusters = 8;
  int batch_seqs = 16;
  int frames = 30;

  double lr = 0.05;
  double weight_decay = 5e-4;
  std::vector<int> milestones{3500, 8500};
  double lr_gamma = 0.1;

  int knn = 40;
  bool mutual_knn = false;
  double s_up = 0.7;
  InfomapOptions infomap{};

  double tau = 0.05;
  MomentumSchedule momentum = MomentumSchedule::fixed(0.2);
  bool renormalize_bank = true;

  // Selective Fusion only.
  int support_a = 2;
  double c_low = 0.8;
  double s_o = 0.7;
  double lambda_base = 0.005;
  double s_min = 0.0;
  AugmentConfig augment{};

  std::uint64_t seed = 1;

  void validate() const {
    require(epochs >= 0 && iterations >= 0, "epochs and iterations must be >= 0");
    require(batch_clusters >= 1 && batch_seqs >= 1 && frames >= 1, "batch shape and frame count must be >= 1");
    require(lr >= 0.0 && weight_decay >= 0.0 && lr_gamma > 0.0, "lr, weight_decay must be >= 0, lr_gamma > 0");
    require(knn >= 1, "knn must be >= 1");
    require(s_up >= -1.0 && s_up <= 1.0, "s_up must lie in [-1,1]");
    require(tau > 0.0, "tau must be > 0");
    momentum.validate();
    require(support_a >= 1, "support_a must be >= 1");
    require(c_low >= 0.0 && c_low <= 1.0, "c_low must lie in [0,1]");
    require(s_min <= s_o, "s_min must be <= s_o");
    require(lambda_base >= 0.0, "lambda_base must be >= 0");
    augment.validate();
  }

  double lr_at(long global_iter) const {
    double out = lr;
    for (int m : milestones)
      if (global_iter >= m) out *= lr_gamma;
    return out;
  }
};

struct EpochRecord {
  int epoch = 0;
  int num_clusters = 0;
  int outliers = 0;
  double mean_loss = 0.0;
  double s_c = 0.0;
  double lambda = 0.0;
  int fvc_count = 0;
  int support_min = 0;  // smallest |S_k| this epoch
  int support_max = 0;
  double wall_ms = 0.0;
  std::vector<double> losses;  // one per iteration

  /// History line. Wall time is left to the logs so history files stay
  /// reproducible.
  nlohmann::json to_json() const {
    return {{"epoch", epoch},         {"clusters", num_clusters}, {"outliers", outliers},
            {"mean_loss", mean_loss}, {"s_c", s_c},               {"lambda", lambda},
            {"fvc", fvc_count},       {"support_min", support_min}, {"support_max", support_max}};
  }
};

/// Everything needed to continue a stage exactly where it stopped.
struct TrainState {
  EncoderParams params;
  int epoch = 0;
  long global_iter = 0;
  Rng frame_rng, batch_rng, augment_rng;
  CurriculumState curriculum;
  int prev_clusters = 0;
  std::vector<EpochRecord> records;
};

inline TrainState initial_state(const EncoderParams& params, const TrainConfig& cfg) {
  TrainState st;
  st.params = params;
  st.frame_rng.seed(derive_seed(cfg.seed, 0xf4a3e));
  st.batch_rng.seed(derive_seed(cfg.seed, 0xba7c4));
  st.augment_rng.seed(derive_seed(cfg.seed, 0xc107e));
  st.curriculum = make_curriculum(cfg.s_o, cfg.lambda_base, cfg.s_min);
  return st;
}

inline std::string rng_to_string(const Rng& r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

inline Rng rng_from_string(const std::string& s) {
  Rng r;
  std::istringstream is(s);
  is >> r;
  if (!is) throw IoError("corrupt rng state in checkpoint");
  return r;
}

/// Cluster ids chosen uniformly (with replacement only when there are fewer
/// than B_S clusters), then B_T members of each.
inline std::vector<int> sample_batch(const PseudoLabels& labels, int batch_clusters, int batch_seqs, Rng& rng) {
  if (labels.num_clusters < 1) throw ValidationError("sample_batch: no clusters to sample from");
  if (batch_clusters < 1 || batch_seqs < 1) throw ValidationError("sample_batch: batch shape must be positive");
  const auto members = labels.members();
  std::vector<int> clusters;
  if (labels.num_clusters >= batch_clusters) {
    std::vector<int> all(static_cast<size_t>(labels.num_clusters));
    std::iota(all.begin(), all.end(), 0);
    for (int i = 0; i < batch_clusters; ++i)
      std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(uniform_int(rng, i, labels.num_clusters - 1))]);
    clusters.assign(all.begin(), all.begin() + batch_clusters);
  } else {
    for (int i = 0; i < batch_clusters; ++i) clusters.push_back(uniform_int(rng, 0, labels.num_clusters - 1));
  }
  std::vector<int> out;
  out.reserve(static_cast<size_t>(batch_clusters * batch_seqs));
  for (int k : clusters) {
    std::vector<int> m = members[static_cast<size_t>(k)];
    const int n = static_cast<int>(m.size());
    if (n >= batch_seqs) {
      for (int i = 0; i < batch_seqs; ++i) std::swap(m[static_cast<size_t>(i)], m[static_cast<size_t>(uniform_int(rng, i, n - 1))]);
      out.insert(out.end(), m.begin(), m.begin() + batch_seqs);
    } else {
      for (int i = 0; i < batch_seqs; ++i) out.push_back(m[static_cast<size_t>(uniform_int(rng, 0, n - 1))]);
    }
  }
  return out;
}

/// Called after every epoch with the state reached and that epoch's bank.
using EpochCallback = std::function<void(const TrainState&, const MemoryBank&)>;

namespace detail {

inline Mat gather_columns(const Mat& src, const std::vector<int>& idx) {
  Mat out(src.rows(), static_cast<Eigen::Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = src.col(idx[i]);
  return out;
}

inline Mat pool_dataset(const std::vector<GaitSequence>& data, const std::vector<std::vector<int>>& frame_ids,
                        const AugmentOp* ops, int input_size) {
  Mat out(input_size, static_cast<Eigen::Index>(data.size()));
  parallel_for(data.size(), [&](size_t i) {
    if (ops) {
      const GaitSequence aug = apply_augment(data[i], ops[i]);
      out.col(static_cast<Eigen::Index>(i)) = pool_frames(aug, frame_ids[i]);
    } else {
      out.col(static_cast<Eigen::Index>(i)) = pool_frames(data[i], frame_ids[i]);
    }
  });
  return out;
}

inline Mat embed_columns(const EncoderParams& params, const Mat& pooled) {
  Mat out(params.embedding_size(), pooled.cols());
  constexpr Eigen::Index kChunk = 128;
  const size_t chunks = static_cast<size_t>((pooled.cols() + kChunk - 1) / kChunk);
  parallel_for(chunks, [&](size_t c) {
    const Eigen::Index lo = static_cast<Eigen::Index>(c) * kChunk, n = std::min(kChunk, pooled.cols() - lo);
    out.middleCols(lo, n) = forward_batch(params, pooled.middleCols(lo, n)).embedded;
  });
  return out;
}

}  // namespace detail

/// Runs a stage from `state` until cfg.epochs epochs are complete.
/// `view_flags` (one per sequence) are only consulted by Selective Fusion.
inline TrainState run_stage(Stage stage, const std::vector<GaitSequence>& data, TrainState state,
                            const TrainConfig& cfg, const std::vector<int>& view_flags = {},
                            const EpochCallback& on_epoch = {}) {
  cfg.validate();
  state.params.validate();
  const bool sf = stage == Stage::SelectiveFusion;
  if (data.empty()) throw ValidationError("training split is empty");
  for (const auto& s : data) check_geometry(s, state.params);
  if (sf && view_flags.size() != data.size()) throw ValidationError("one view flag per training sequence required");

  MomentumSchedule sched = cfg.momentum;
  if (sched.mode == MomentumSchedule::Mode::Cosine) sched.steps = std::max(1, cfg.iterations);

  while (state.epoch < cfg.epochs) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = state.epoch;

    std::vector<std::vector<int>> frame_ids(data.size());
    for (size_t i = 0; i < data.size(); ++i)
      frame_ids[i] = select_frames(static_cast<int>(data[i].frames.size()), cfg.frames, state.frame_rng);
    std::vector<AugmentOp> ops;
    if (sf) {
      ops.reserve(data.size());
      for (size_t i = 0; i < data.size(); ++i) ops.push_back(sample_augment(state.augment_rng, cfg.augment));
    }
    const Mat pooled = detail::pool_dataset(data, frame_ids, nullptr, state.params.input_size());
    const Mat feats = detail::embed_columns(state.params, pooled);

    const KnnGraph graph = prune(knn_graph(feats, cfg.knn, cfg.mutual_knn), cfg.s_up);
    const std::uint64_t im_seed = derive_seed(cfg.seed, 0x1f0 + static_cast<std::uint64_t>(state.epoch));
    PseudoLabels labels = infomap_partition(graph, im_seed, cfg.infomap).labels;
    const int raw_clusters = labels.num_clusters;

    std::optional<SupportSets> support;
    Mat centroids;
    if (sf) {
      const Mat raw_centroids = compute_centroids(feats, labels);
      const FvcReport fvc = detect_fvc(labels, view_flags, cfg.c_low);
      rec.fvc_count = static_cast<int>(fvc.fvc_ids.size());
      rec.s_c = state.curriculum.s_c;
      labels = reassign_fvc(labels, feats, fvc.fvc_ids, raw_centroids, state.curriculum.s_c).labels;
      state.curriculum =
          curriculum_step(state.curriculum, raw_clusters, state.prev_clusters > 0 ? state.prev_clusters : raw_clusters);
      rec.lambda = state.curriculum.lambda;
      if (labels.num_clusters < 1) throw Error("every sequence became an outlier after front/back-view fusion");

      const Mat aug_pooled = detail::pool_dataset(data, frame_ids, ops.data(), state.params.input_size());
      const Mat aug_feats = detail::embed_columns(state.params, aug_pooled);
      centroids = compute_centroids(feats, labels);
      const Mat aug_centroids = compute_centroids(aug_feats, labels);
      // With fewer clusters than a, every cluster is in every support set.
      support = select_support_sets(aug_centroids, centroids, std::min(cfg.support_a, labels.num_clusters));
      rec.support_min = rec.support_max = static_cast<int>((*support)[0].size());
      for (const auto& s : support->sets) {
        rec.support_min = std::min(rec.support_min, static_cast<int>(s.size()));
        rec.support_max = std::max(rec.support_max, static_cast<int>(s.size()));
      }
    } else {
      centroids = compute_centroids(feats, labels);
      rec.support_min = rec.support_max = 1;
    }
    state.prev_clusters = raw_clusters;
    rec.num_clusters = labels.num_clusters;
    rec.outliers = labels.outlier_count();

    MemoryBank bank = init_bank(centroids, cfg.tau, sched, cfg.renormalize_bank);
    double loss_sum = 0.0;
    for (int it = 0; it < cfg.iterations; ++it) {
      const std::vector<int> batch = sample_batch(labels, cfg.batch_clusters, cfg.batch_seqs, state.batch_rng);
      std::vector<int> y(batch.size());
      for (size_t b = 0; b < batch.size(); ++b) y[b] = labels[static_cast<size_t>(batch[b])];
      const Mat x = detail::gather_columns(pooled, batch);
      const BatchForward f = forward_batch(state.params, x);
      const LossReport lr = cluster_nce(bank, f.embedded, y);
      const ParamGrads g = backward_batch(state.params, x, f, lr.grads);
      state.params = sgd_step(state.params, g, cfg.lr_at(state.global_iter), cfg.weight_decay);
      bank.set_step(it);
      for (size_t b = 0; b < batch.size(); ++b) {
        const Vec q = f.embedded.col(static_cast<Eigen::Index>(b));
        if (sf)
          bank.multi_cluster_update(q, (*support)[y[b]]);
        else
          bank.momentum_update(q, y[b]);
      }
      rec.losses.push_back(lr.loss);
      loss_sum += lr.loss;
      ++state.global_iter;
    }
    rec.mean_loss = cfg.iterations > 0 ? loss_sum / cfg.iterations : 0.0;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("{} epoch {}: clusters={} outliers={} loss={:.4f} s_c={:.4f} fvc={} ({:.0f} ms)",
                 sf ? "sf" : "baseline", rec.epoch, rec.num_clusters, rec.outliers, rec.mean_loss, rec.s_c,
                 rec.fvc_count, rec.wall_ms);
    state.records.push_back(std::move(rec));
    ++state.epoch;
    if (on_epoch) on_epoch(state, bank);
  }
  return state;
}

struct StageResult {
  EncoderParams params;
  std::vector<EpochRecord> records;
};

inline StageResult run_baseline(const std::vector<GaitSequence>& data, const EncoderParams& params,
                                const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  TrainState st = run_stage(Stage::Baseline, data, initial_state(params, cfg), cfg, {}, on_epoch);
  return {std::move(st.params), std::move(st.records)};
}

inline StageResult run_selective_fusion(const std::vector<GaitSequence>& data, const EncoderParams& params,
                                        const TrainConfig& cfg, const std::vector<int>& view_flags,
                                        const EpochCallback& on_epoch = {}) {
  TrainState st = run_stage(Stage::SelectiveFusion, data, initial_state(params, cfg), cfg, view_flags, on_epoch);
  return {std::move(st.params), std::move(st.records)};
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/params.bin, <dir>/bank.bin, <dir>/state.json

inline nlohmann::json state_to_json(const TrainState& st) {
  const auto& c = st.curriculum;
  nlohmann::json j{{"epoch", st.epoch},
                   {"global_iter", st.global_iter},
                   {"frame_rng", rng_to_string(st.frame_rng)},
                   {"batch_rng", rng_to_string(st.batch_rng)},
                   {"augment_rng", rng_to_string(st.augment_rng)},
                   {"prev_clusters", st.prev_clusters},
                   {"curriculum",
                    {{"s_o", c.s_o},
                     {"s_c", c.s_c},
                     {"lambda", c.lambda},
                     {"lambda_base", c.lambda_base},
                     {"s_min", c.s_min},
                     {"epoch", c.epoch},
                     {"c_new", c.c_new},
                     {"c_old", c.c_old}}},
                   {"records", nlohmann::json::array()}};
  for (const auto& r : st.records) {
    auto rj = r.to_json();
    rj["losses"] = r.losses;
    j["records"].push_back(std::move(rj));
  }
  return j;
}

inline TrainState state_from_json(const nlohmann::json& j, EncoderParams params) {
  TrainState st;
  st.params = std::move(params);
  st.epoch = j.at("epoch").get<int>();
  st.global_iter = j.at("global_iter").get<long>();
  st.frame_rng = rng_from_string(j.at("frame_rng").get<std::string>());
  st.batch_rng = rng_from_string(j.at("batch_rng").get<std::string>());
  st.augment_rng = rng_from_string(j.at("augment_rng").get<std::string>());
  st.prev_clusters = j.at("prev_clusters").get<int>();
  const auto& c = j.at("curriculum");
  st.curriculum.s_o = c.at("s_o").get<double>();
  st.curriculum.s_c = c.at("s_c").get<double>();
  st.curriculum.lambda = c.at("lambda").get<double>();
  st.curriculum.lambda_base = c.at("lambda_base").get<double>();
  st.curriculum.s_min = c.at("s_min").get<double>();
  st.curriculum.epoch = c.at("epoch").get<int>();
  st.curriculum.c_new = c.at("c_new").get<int>();
  st.curriculum.c_old = c.at("c_old").get<int>();
  for (const auto& rj : j.at("records")) {
    EpochRecord r;
    r.epoch = rj.at("epoch").get<int>();
    r.num_clusters = rj.at("clusters").get<int>();
    r.outliers = rj.at("outliers").get<int>();
    r.mean_loss = rj.at("mean_loss").get<double>();
    r.s_c = rj.at("s_c").get<double>();
    r.lambda = rj.at("lambda").get<double>();
    r.fvc_count = rj.at("fvc").get<int>();
    r.support_min = rj.at("support_min").get<int>();
    r.support_max = rj.at("support_max").get<int>();
    r.losses = rj.at("losses").get<std::vector<double>>();
    st.records.push_back(std::move(r));
  }
  return st;
}

inline void save_checkpoint(const std::filesystem::path& dir, const TrainState& st, const MemoryBank* bank) {
  std::filesystem::create_directories(dir);
  save_params(dir / "params.bin", st.params);
  if (bank) save_bank(dir / "bank.bin", *bank);
  const auto tmp = dir / "state.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << state_to_json(st).dump(1) << '\n';
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, dir / "state.json");
}

inline TrainState load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "state.json");
  if (!in) throw IoError("cannot read " + (dir / "state.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint state " + (dir / "state.json").string() + ": " + e.what());
  }
  return state_from_json(j, load_params(dir / "params.bin"));
}

}  // namespace gaitsf
