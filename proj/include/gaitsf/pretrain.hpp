#pragma once

// Supervised pre-training on a labeled split: encoder + linear head trained
// with softmax cross-entropy over subject ids. The head is discarded.

#include "gaitsf/encoder.hpp"

#include <spdlog/spdlog.h>

#include <map>
#include <vector>

namespace gaitsf {

struct PretrainConfig {
  int epochs = 30;
  int batch_size = 32;
  int frames = 30;
  /// Per-epoch learning rate; shorter schedules repeat their last entry.
  std::vector<double> lr_schedule{0.5};
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;

  double lr_at(int epoch) const {
    if (lr_schedule.empty()) return 0.0;
    return lr_schedule[static_cast<size_t>(std::min<int>(epoch, static_cast<int>(lr_schedule.size()) - 1))];
  }
};

struct PretrainResult {
  EncoderParams params;
  std::vector<double> loss_history;  // one entry per step
};

inline PretrainResult pretrain(const std::vector<GaitSequence>& split, const EncoderParams& init,
                               const PretrainConfig& cfg) {
  init.validate();
  if (cfg.batch_size < 1 || cfg.frames < 1 || cfg.epochs < 0) throw ValidationError("pretrain: invalid config");
  std::map<int, int> class_of;
  for (const auto& s : split) {
    check_geometry(s, init);
    class_of.emplace(s.subject_id, 0);
  }
  if (class_of.size() < 2) throw ValidationError("pretrain: labeled split needs at least 2 subjects");
  int next = 0;
  for (auto& [sid, c] : class_of) c = next++;
  const int n_cls = next;
  const Eigen::Index E = init.embedding_size();

  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(E)));
  Mat head(n_cls, E);
  for (Eigen::Index i = 0; i < head.size(); ++i) head.data()[i] = normal(rng);
  Vec bias = Vec::Zero(n_cls);

  PretrainResult out{init, {}};
  std::vector<size_t> order(split.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t lo = 0; lo < order.size(); lo += static_cast<size_t>(cfg.batch_size)) {
      const size_t hi = std::min(order.size(), lo + static_cast<size_t>(cfg.batch_size));
      const Eigen::Index B = static_cast<Eigen::Index>(hi - lo);
      Mat x(init.input_size(), B);
      std::vector<int> y(static_cast<size_t>(B));
      for (size_t i = lo; i < hi; ++i) {
        const auto& s = split[order[i]];
        const auto ids = select_frames(static_cast<int>(s.frames.size()), cfg.frames, rng);
        x.col(static_cast<Eigen::Index>(i - lo)) = pool_frames(s, ids);
        y[i - lo] = class_of.at(s.subject_id);
      }
      const BatchForward f = forward_batch(out.params, x);
      Mat logits = head * f.embedded;
      logits.colwise() += bias;
      Mat dlogits(n_cls, B);
      double loss = 0.0;
      for (Eigen::Index b = 0; b < B; ++b) {
        const double mx = logits.col(b).maxCoeff();
        const Vec ex = (logits.col(b).array() - mx).exp().matrix();
        const double z = ex.sum();
        loss += std::log(z) + mx - logits(y[static_cast<size_t>(b)], b);
        dlogits.col(b) = ex / z;
        dlogits(y[static_cast<size_t>(b)], b) -= 1.0;
      }
      dlogits /= static_cast<double>(B);
      loss /= static_cast<double>(B);
      if (!std::isfinite(loss)) throw ValidationError("pretrain: non-finite loss");
      out.loss_history.push_back(loss);
      if (lr == 0.0) continue;
      const Mat de = head.transpose() * dlogits;
      const ParamGrads g = backward_batch(out.params, x, f, de);
      head -= lr * (dlogits * f.embedded.transpose() + cfg.weight_decay * head);
      bias -= lr * dlogits.rowwise().sum();
      out.params = sgd_step(out.params, g, lr, cfg.weight_decay);
    }
    spdlog::debug("pretrain epoch {} loss {:.4f}", epoch, out.loss_history.empty() ? 0.0 : out.loss_history.back());
  }
  return out;
}

/// Fraction of sequences whose nearest subject centroid (cosine) is their own
/// subject, embeddings given as columns.
inline double nearest_centroid_accuracy(const Mat& embeddings, const std::vector<int>& subject_ids) {
  std::map<int, int> idx;
  for (int s : subject_ids) idx.emplace(s, 0);
  int next = 0;
  for (auto& [s, i] : idx) i = next++;
  Mat cent = Mat::Zero(embeddings.rows(), next);
  for (size_t i = 0; i < subject_ids.size(); ++i)
    cent.col(idx.at(subject_ids[i])) += embeddings.col(static_cast<Eigen::Index>(i));
  for (Eigen::Index k = 0; k < cent.cols(); ++k) cent.col(k).normalize();
  const Mat sim = cent.transpose() * embeddings;
  int hits = 0;
  for (size_t i = 0; i < subject_ids.size(); ++i) {
    Eigen::Index best = 0;
    sim.col(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    hits += best == idx.at(subject_ids[i]) ? 1 : 0;
  }
  return subject_ids.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(subject_ids.size());
}

}  // namespace gaitsf
