#pragma once

// End-to-end stages shared by the command-line tool and the acceptance suite:
// split generation, the three training stages, and evaluation.

#include "gaitsf/config.hpp"
#include "gaitsf/dataset_io.hpp"
#include "gaitsf/eval.hpp"
#include "gaitsf/fusion.hpp"
#include "gaitsf/pipeline.hpp"
#include "gaitsf/pretrain.hpp"

#include <spdlog/spdlog.h>

namespace gaitsf {

/// A required earlier stage has not been run.
class MissingStageError : public Error {
 public:
  explicit MissingStageError(const std::string& stage, const std::string& detail)
      : Error("missing prior stage '" + stage + "': " + detail), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct Splits {
  Dataset pretrain, train, test;
};

inline Splits generate_splits(const RunConfig& cfg) {
  cfg.validate();
  return {generate_dataset(cfg.pretrain_spec()), generate_dataset(cfg.train_spec()), generate_dataset(cfg.test_spec())};
}

inline void write_splits(const std::filesystem::path& dir, const Splits& s) {
  write_dataset(dir / "pretrain", s.pretrain);
  write_dataset(dir / "train", s.train);
  write_dataset(dir / "test", s.test);
}

inline Mat embed_sequences(const EncoderParams& params, const std::vector<GaitSequence>& seqs) {
  std::vector<Vec> pooled(seqs.size());
  parallel_for(seqs.size(), [&](size_t i) {
    check_geometry(seqs[i], params);
    pooled[i] = pool_all(seqs[i]);
  });
  return embed_all(params, pooled);
}

inline std::vector<EvalItem> eval_items(const EncoderParams& params, const std::vector<GaitSequence>& seqs) {
  const Mat e = embed_sequences(params, seqs);
  std::vector<EvalItem> items;
  items.reserve(seqs.size());
  for (size_t i = 0; i < seqs.size(); ++i)
    items.push_back({e.col(static_cast<Eigen::Index>(i)), seqs[i].seq_id, seqs[i].subject_id, seqs[i].condition,
                     seqs[i].view_deg, seqs[i].seq_index});
  return items;
}

inline ResultTable evaluate_params(const EncoderParams& params, const std::vector<GaitSequence>& test,
                                   const Protocol& proto) {
  return evaluate(eval_items(params, test), proto);
}

inline PretrainResult run_pretrain(const RunConfig& cfg, const std::vector<GaitSequence>& split) {
  const EncoderParams init = init_params(cfg.parts, cfg.dim, cfg.encoder_seed());
  PretrainResult r = pretrain(split, init, cfg.pretrain_config());
  std::vector<int> subjects;
  for (const auto& s : split) subjects.push_back(s.subject_id);
  spdlog::info("pretrain: nearest-centroid accuracy {:.3f}",
               nearest_centroid_accuracy(embed_sequences(r.params, split), subjects));
  return r;
}

inline ViewClassifier fit_view_classifier(const RunConfig& cfg, const EncoderParams& pretrain_params,
                                          const std::vector<GaitSequence>& pretrain_split) {
  if (cfg.oracle_views) return oracle_view_classifier();
  std::vector<int> views, subjects;
  for (const auto& s : pretrain_split) {
    views.push_back(s.view_deg);
    subjects.push_back(s.subject_id);
  }
  ViewClassifier clf = train_view_classifier(embed_sequences(pretrain_params, pretrain_split), views, subjects);
  spdlog::info("view classifier: held-out front/back accuracy {:.3f}", clf.heldout_accuracy);
  return clf;
}

/// Front/back flags for the training split, computed once with the
/// pre-trained encoder the classifier was fitted on.
inline std::vector<int> training_view_flags(const ViewClassifier& clf, const EncoderParams& pretrain_params,
                                            const std::vector<GaitSequence>& train) {
  std::vector<int> views;
  for (const auto& s : train) views.push_back(s.view_deg);
  const Mat e = clf.oracle_mode ? Mat() : embed_sequences(pretrain_params, train);
  return view_flags(clf, e, views);
}

inline nlohmann::json view_classifier_json(const ViewClassifier& clf) {
  nlohmann::json j{{"oracle_mode", clf.oracle_mode}, {"heldout_accuracy", clf.heldout_accuracy}};
  if (!clf.oracle_mode) {
    j["bias"] = clf.bias;
    j["weights"] = std::vector<double>(clf.weights.data(), clf.weights.data() + clf.weights.size());
  }
  return j;
}

/// Everything produced by one in-memory pretrain -> baseline -> SF run.
struct ExperimentResult {
  EncoderParams pretrained, baseline, sf;
  std::vector<EpochRecord> baseline_records, sf_records;
  ResultTable baseline_table, sf_table;
  double view_accuracy = 0.0;
};

inline ExperimentResult run_experiment(const RunConfig& cfg, const Splits& splits) {
  ExperimentResult out;
  out.pretrained = run_pretrain(cfg, splits.pretrain.sequences).params;
  auto b = run_baseline(splits.train.sequences, out.pretrained, cfg.baseline_config());
  out.baseline = std::move(b.params);
  out.baseline_records = std::move(b.records);
  const ViewClassifier clf = fit_view_classifier(cfg, out.pretrained, splits.pretrain.sequences);
  out.view_accuracy = clf.heldout_accuracy;
  const auto flags = training_view_flags(clf, out.pretrained, splits.train.sequences);
  auto s = run_selective_fusion(splits.train.sequences, out.baseline, cfg.sf_config(), flags);
  out.sf = std::move(s.params);
  out.sf_records = std::move(s.records);
  out.baseline_table = evaluate_params(out.baseline, splits.test.sequences, cfg.protocol);
  out.sf_table = evaluate_params(out.sf, splits.test.sequences, cfg.protocol);
  return out;
}

}  // namespace gaitsf
