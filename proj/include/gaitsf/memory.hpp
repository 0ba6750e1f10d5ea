#pragma once

// Cluster-level memory bank, ClusterNCE loss and momentum updates.

#include "gaitsf/common.hpp"
#include "gaitsf/serialize.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace gaitsf {

struct MomentumSchedule {
  enum class Mode { Fixed, Cosine };
  Mode mode = Mode::Fixed;
  double m_max = 0.2;  // the fixed momentum in Fixed mode
  double m_min = 0.2;
  int steps = 1;       // T, training steps per epoch

  static MomentumSchedule fixed(double m) { return {Mode::Fixed, m, m, 1}; }
  static MomentumSchedule cosine(double m_max, double m_min, int steps) { return {Mode::Cosine, m_max, m_min, steps}; }

  void validate() const {
    if (mode == Mode::Fixed) {
      require(m_max >= 0.0 && m_max <= 1.0, "momentum must lie in [0,1]");
    } else {
      require(0.0 <= m_min && m_min <= m_max && m_max <= 1.0, "momentum schedule needs 0 <= m_min <= m_max <= 1");
    }
    require(steps >= 1, "momentum schedule needs T >= 1");
  }
};

/// m_t = m_min + (m_max - m_min)(1 + cos(t pi / T)) / 2 in cosine mode.
/// Steps past T clamp to m_min.
inline double momentum_at(const MomentumSchedule& s, int t) {
  if (s.mode == MomentumSchedule::Mode::Fixed) return s.m_max;
  if (t < 0) throw ValidationError("momentum step must be >= 0");
  if (t > s.steps) {
    spdlog::warn("momentum step {} beyond T={}, clamping to m_min", t, s.steps);
    return s.m_min;
  }
  return s.m_min + 0.5 * (s.m_max - s.m_min) * (1.0 + std::cos(t * std::numbers::pi / s.steps));
}

class MemoryBank {
 public:
  /// Copies `centroids` (one unit-norm column per cluster).
  MemoryBank(const Mat& centroids, double tau, MomentumSchedule schedule = {}, bool renormalize = true)
      : centroids_(centroids), tau_(tau), schedule_(schedule), renormalize_(renormalize) {
    if (centroids.cols() < 1) throw ValidationError("memory bank needs at least one centroid");
    if (!(tau > 0.0)) throw ValidationError("temperature must be > 0");
    schedule_.validate();
    for (Eigen::Index k = 0; k < centroids.cols(); ++k)
      if (std::abs(centroids.col(k).norm() - 1.0) > 1e-6)
        throw ValidationError("centroid " + std::to_string(k) + " is not unit-norm");
    momentum_ = momentum_at(schedule_, 0);
  }

  int size() const { return static_cast<int>(centroids_.cols()); }
  int dim() const { return static_cast<int>(centroids_.rows()); }
  double tau() const { return tau_; }
  const Mat& centroids() const { return centroids_; }
  Vec centroid(int k) const { return centroids_.col(k); }
  const MomentumSchedule& schedule() const { return schedule_; }
  double momentum() const { return momentum_; }
  bool renormalizes() const { return renormalize_; }

  /// Select the momentum for training step t of the current epoch.
  void set_step(int t) { momentum_ = momentum_at(schedule_, t); }
  void set_momentum(double m) {
    require(m >= 0.0 && m <= 1.0, "momentum must lie in [0,1]");
    momentum_ = m;
  }

  /// C_k <- m C_k + (1 - m) q, then renormalized.
  void momentum_update(const Vec& q, int cluster_id) {
    check_id(cluster_id);
    if (q.size() != centroids_.rows()) throw GeometryError("query length does not match bank dimension");
    if (momentum_ == 1.0) return;
    auto c = centroids_.col(cluster_id);
    c = momentum_ * c + (1.0 - momentum_) * q;
    if (renormalize_) {
      const double n = c.norm();
      if (n > 0.0) c /= n;
    }
  }

  /// Applies momentum_update with the same query to every id in the support set.
  void multi_cluster_update(const Vec& q, std::span<const int> support) {
    if (support.empty()) throw ValidationError("support set is empty");
    for (int k : support) check_id(k);
    for (int k : support) momentum_update(q, k);
  }

 private:
  void check_id(int k) const {
    if (k < 0 || k >= size())
      throw ValidationError("cluster id " + std::to_string(k) + " outside bank of size " + std::to_string(size()));
  }

  Mat centroids_;
  double tau_;
  MomentumSchedule schedule_;
  bool renormalize_;
  double momentum_ = 0.2;
};

inline MemoryBank init_bank(const Mat& centroids, double tau, MomentumSchedule schedule = {},
                            bool renormalize = true) {
  return MemoryBank(centroids, tau, schedule, renormalize);
}

struct LossReport {
  double loss = 0.0;           // mean over queries
  Mat grads;                   // d(mean loss)/d q, one column per query
  std::vector<double> positive_logit;  // q . C_+ / tau
  std::vector<double> per_query_loss;
};

/// ClusterNCE: loss_q = -log softmax_k(q . C_k / tau)[label_q], averaged over
/// the batch. Gradients are returned for the averaged loss.
inline LossReport cluster_nce(const MemoryBank& bank, const Mat& queries, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != queries.cols())
    throw ValidationError("cluster_nce: one label per query required");
  if (queries.rows() != bank.dim()) throw GeometryError("cluster_nce: query length does not match bank");
  const Eigen::Index B = queries.cols();
  if (B == 0) throw ValidationError("cluster_nce: empty batch");
  for (int y : labels)
    if (y < 0 || y >= bank.size())
      throw ValidationError("cluster_nce: label " + std::to_string(y) + " out of range [0," +
                            std::to_string(bank.size()) + ")");
  LossReport r;
  r.grads.resize(queries.rows(), B);
  r.positive_logit.resize(static_cast<size_t>(B));
  r.per_query_loss.resize(static_cast<size_t>(B));
  const Mat logits = (bank.centroids().transpose() * queries) / bank.tau();  // Q x B
  double total = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const int y = labels[static_cast<size_t>(b)];
    const auto l = logits.col(b);
    const double mx = l.maxCoeff();
    const Vec ex = (l.array() - mx).exp().matrix();
    const double z = ex.sum();
    const double loss = std::log(z) + mx - l[y];
    Vec p = ex / z;
    p[y] -= 1.0;
    r.grads.col(b) = bank.centroids() * p / (bank.tau() * static_cast<double>(B));
    r.positive_logit[static_cast<size_t>(b)] = l[y];
    r.per_query_loss[static_cast<size_t>(b)] = loss;
    total += loss;
  }
  r.loss = total / static_cast<double>(B);
  return r;
}

inline void save_bank(const std::filesystem::path& path, const MemoryBank& bank) {
  nlohmann::json header{{"kind", "memory_bank"},
                        {"version", 1},
                        {"tau", bank.tau()},
                        {"momentum", bank.momentum()},
                        {"renormalize", bank.renormalizes()},
                        {"schedule",
                         {{"mode", bank.schedule().mode == MomentumSchedule::Mode::Fixed ? "fixed" : "cosine"},
                          {"m_max", bank.schedule().m_max},
                          {"m_min", bank.schedule().m_min},
                          {"steps", bank.schedule().steps}}}};
  write_tensor_file(path, std::move(header), {{"centroids", bank.centroids()}});
}

inline MemoryBank load_bank(const std::filesystem::path& path) {
  const TensorFile tf = read_tensor_file(path);
  if (tf.header.value("kind", "") != "memory_bank") throw IoError(path.string() + " is not a memory bank file");
  const auto& s = tf.header.at("schedule");
  MomentumSchedule sched;
  sched.mode = s.at("mode").get<std::string>() == "fixed" ? MomentumSchedule::Mode::Fixed : MomentumSchedule::Mode::Cosine;
  sched.m_max = s.at("m_max").get<double>();
  sched.m_min = s.at("m_min").get<double>();
  sched.steps = s.at("steps").get<int>();
  MemoryBank bank(tf.get("centroids"), tf.header.at("tau").get<double>(), sched,
                  tf.header.at("renormalize").get<bool>());
  bank.set_momentum(tf.header.at("momentum").get<double>());
  return bank;
}

}  // namespace gaitsf
