#pragma once

// Selective Cluster Fusion (support sets over cloth-augmented centroids) and
// Selective Sample Fusion (front/back-view cluster dissolution with a
// curriculum re-assignment threshold).

#include "gaitsf/cluster.hpp"
#include "gaitsf/common.hpp"
#include "gaitsf/silhouette.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

namespace gaitsf {

// ---------------------------------------------------------------------------
// Support sets

struct SupportSets {
  int a = 1;
  /// sets[k] = [k, id_1, ..., id_{a-1}]
  std::vector<std::vector<int>> sets;

  const std::vector<int>& operator[](int k) const { return sets[static_cast<size_t>(k)]; }
  int size() const { return static_cast<int>(sets.size()); }

  nlohmann::json to_json() const {
    nlohmann::json j{{"a", a}, {"sets", nlohmann::json::array()}};
    for (const auto& s : sets) j["sets"].push_back(s);
    return j;
  }
};

/// For each cluster k, ranks the other original centroids by cosine
/// similarity to the augmented centroid of k (ties to the lower id) and keeps
/// the top a-1 behind k itself.
inline SupportSets select_support_sets(const Mat& aug_centroids, const Mat& centroids, int a) {
  if (a < 1) throw ValidationError("support set size a must be >= 1");
  if (aug_centroids.cols() != centroids.cols() || aug_centroids.rows() != centroids.rows())
    throw GeometryError("augmented centroids must be index-aligned with the bank");
  const int Q = static_cast<int>(centroids.cols());
  if (a > Q) throw ValidationError("support set size a=" + std::to_string(a) + " exceeds cluster count " + std::to_string(Q));
  const Mat sim = aug_centroids.transpose() * centroids;  // row k: C_ak against every C_j
  SupportSets out;
  out.a = a;
  out.sets.resize(static_cast<size_t>(Q));
  std::vector<int> others;
  for (int k = 0; k < Q; ++k) {
    others.clear();
    for (int j = 0; j < Q; ++j)
      if (j != k) others.push_back(j);
    std::partial_sort(others.begin(), others.begin() + (a - 1), others.end(), [&](int x, int y) {
      if (sim(k, x) != sim(k, y)) return sim(k, x) > sim(k, y);
      return x < y;
    });
    auto& s = out.sets[static_cast<size_t>(k)];
    s.push_back(k);
    s.insert(s.end(), others.begin(), others.begin() + (a - 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// View classifier

/// Training target of the front/back probe.
inline int front_back_label(int view_deg) { return (view_deg == 0 || view_deg == 180) ? 1 : 0; }

/// Logistic probe on embeddings predicting front/back view. In oracle mode
/// the ground-truth view is used instead.
struct ViewClassifier {
  Vec weights;
  double bias = 0.0;
  bool oracle_mode = false;
  double heldout_accuracy = 0.0;
  double threshold = 0.5;

  double probability(const Vec& e) const {
    const double z = weights.dot(e) + bias;
    return 1.0 / (1.0 + std::exp(-z));
  }
  int predict(const Vec& e) const { return probability(e) > threshold ? 1 : 0; }
};

struct ViewTrainOptions {
  int newton_iterations = 30;
  double ridge = 1e-3;
  /// Fraction of subjects kept out of fitting to measure accuracy.
  double heldout_fraction = 0.25;
};

namespace detail {

/// Ridge-penalized logistic regression by damped Newton steps.
inline void fit_logistic(const Mat& X, const std::vector<int>& y, const std::vector<int>& rows, ViewClassifier& clf,
                         const ViewTrainOptions& opt) {
  const Eigen::Index d = X.rows();
  Mat A(d + 1, static_cast<Eigen::Index>(rows.size()));
  Vec t(static_cast<Eigen::Index>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    A.col(static_cast<Eigen::Index>(r)) << X.col(rows[r]), 1.0;
    t[static_cast<Eigen::Index>(r)] = y[static_cast<size_t>(rows[r])];
  }
  Vec penalty = Vec::Constant(d + 1, opt.ridge);
  penalty[d] = 0.0;  // bias is not shrunk
  auto objective = [&](const Vec& th) {
    const Vec z = A.transpose() * th;
    double f = 0.5 * th.dot(penalty.cwiseProduct(th));
    for (Eigen::Index i = 0; i < z.size(); ++i) f += std::max(z[i], 0.0) + std::log1p(std::exp(-std::abs(z[i]))) - t[i] * z[i];
    return f;
  };
  Vec theta = Vec::Zero(d + 1);
  double f = objective(theta);
  for (int it = 0; it < opt.newton_iterations; ++it) {
    const Vec prob = (1.0 / (1.0 + (-(A.transpose() * theta).array()).exp())).matrix();
    const Vec grad = A * (prob - t) + penalty.cwiseProduct(theta);
    const Vec w = (prob.array() * (1.0 - prob.array())).max(1e-10).matrix();
    Mat hess = A * w.asDiagonal() * A.transpose();
    hess.diagonal() += penalty + Vec::Constant(d + 1, 1e-9);
    const Vec step = hess.ldlt().solve(grad);
    double scale = 1.0, f_new = f;
    Vec cand = theta;
    for (int k = 0; k < 40; ++k, scale *= 0.5) {
      cand = theta - scale * step;
      f_new = objective(cand);
      if (f_new <= f) break;
    }
    if (!(f_new <= f)) break;
    theta = cand;
    const double gain = f - f_new;
    f = f_new;
    if (gain < 1e-12) break;
  }
  clf.weights = theta.head(d);
  clf.bias = theta[d];
}

}  // namespace detail

/// Fits the probe on embeddings (columns) of a labeled split. Subjects are
/// split into fit / held-out groups; accuracy on the held-out group is
/// recorded.
inline ViewClassifier train_view_classifier(const Mat& embeddings, const std::vector<int>& view_deg,
                                            const std::vector<int>& subject_ids, const ViewTrainOptions& opt = {}) {
  const size_t n = view_deg.size();
  if (static_cast<size_t>(embeddings.cols()) != n || subject_ids.size() != n)
    throw ValidationError("train_view_classifier: embeddings, views and subjects must align");
  std::vector<int> y(n);
  for (size_t i = 0; i < n; ++i) y[i] = front_back_label(view_deg[i]);
  const int positives = std::accumulate(y.begin(), y.end(), 0);
  if (positives == 0 || positives == static_cast<int>(n))
    throw ValidationError("train_view_classifier: split must contain both front/back and other views");

  std::vector<int> subjects(subject_ids);
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  const size_t n_hold = subjects.size() >= 2
                            ? std::max<size_t>(1, static_cast<size_t>(std::floor(opt.heldout_fraction * subjects.size())))
                            : 0;
  const std::set<int> held(subjects.end() - static_cast<std::ptrdiff_t>(n_hold), subjects.end());
  std::vector<int> fit_rows, hold_rows;
  for (size_t i = 0; i < n; ++i) (held.count(subject_ids[i]) ? hold_rows : fit_rows).push_back(static_cast<int>(i));
  if (hold_rows.empty()) hold_rows = fit_rows;

  ViewClassifier clf;
  detail::fit_logistic(embeddings, y, fit_rows, clf, opt);
  int correct = 0;
  for (int i : hold_rows) correct += clf.predict(embeddings.col(i)) == y[static_cast<size_t>(i)] ? 1 : 0;
  clf.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(hold_rows.size());
  return clf;
}

inline ViewClassifier oracle_view_classifier() {
  ViewClassifier clf;
  clf.oracle_mode = true;
  clf.heldout_accuracy = 1.0;
  return clf;
}

/// Front/back flag per sequence, from the probe or (oracle mode) ground truth.
inline std::vector<int> view_flags(const ViewClassifier& clf, const Mat& embeddings, const std::vector<int>& view_deg) {
  std::vector<int> flags(view_deg.size());
  for (size_t i = 0; i < flags.size(); ++i)
    flags[i] = clf.oracle_mode ? front_back_label(view_deg[i]) : clf.predict(embeddings.col(static_cast<Eigen::Index>(i)));
  return flags;
}

// ---------------------------------------------------------------------------
// FVC detection and re-assignment

struct Reassignment {
  int seq = 0;
  int old_label = 0;
  int new_label = kOutlier;  // in the output label space
  double similarity = 0.0;
};

struct FvcReport {
  std::vector<int> fvc_ids;         // input label space
  std::vector<double> fractions;    // flagged fraction per input cluster
  std::vector<Reassignment> reassignments;

  nlohmann::json to_json() const {
    nlohmann::json j{{"fvc_ids", fvc_ids}, {"fractions", fractions}, {"reassignments", nlohmann::json::array()}};
    for (const auto& r : reassignments)
      j["reassignments"].push_back(
          {{"seq", r.seq}, {"old", r.old_label}, {"new", r.new_label}, {"similarity", r.similarity}});
    return j;
  }
};

/// Cluster k is an FVC iff flagged members / members > c_low (strict).
inline FvcReport detect_fvc(const PseudoLabels& labels, const std::vector<int>& flags, double c_low) {
  if (flags.size() != labels.size()) throw ValidationError("detect_fvc: one view flag per sequence required");
  std::vector<int> total(static_cast<size_t>(labels.num_clusters), 0), flagged(total);
  for (size_t i = 0; i < labels.size(); ++i) {
    const int k = labels[i];
    if (k == kOutlier) continue;
    total[static_cast<size_t>(k)] += 1;
    flagged[static_cast<size_t>(k)] += flags[i] ? 1 : 0;
  }
  FvcReport rep;
  rep.fractions.resize(total.size());
  for (size_t k = 0; k < total.size(); ++k) {
    if (total[k] == 0) throw Error("detect_fvc: cluster " + std::to_string(k) + " is empty");
    rep.fractions[k] = static_cast<double>(flagged[k]) / static_cast<double>(total[k]);
    if (rep.fractions[k] > c_low) rep.fvc_ids.push_back(static_cast<int>(k));
  }
  return rep;
}

struct ReassignResult {
  PseudoLabels labels;
  FvcReport report;
};

/// Dissolves every FVC cluster. Each former member joins the most similar
/// non-FVC centroid (ties to the lower id) when that similarity exceeds s_c
/// and becomes an outlier otherwise. Surviving cluster ids are compacted in
/// their original order, so non-FVC groupings are untouched.
inline ReassignResult reassign_fvc(const PseudoLabels& labels, const Mat& embeddings, const std::vector<int>& fvc_ids,
                                   const Mat& centroids, double s_c) {
  if (static_cast<Eigen::Index>(labels.size()) != embeddings.cols())
    throw ValidationError("reassign_fvc: label count does not match embedding count");
  if (centroids.cols() != labels.num_clusters) throw ValidationError("reassign_fvc: one centroid per cluster required");
  std::vector<char> is_fvc(static_cast<size_t>(labels.num_clusters), 0);
  for (int k : fvc_ids) {
    if (k < 0 || k >= labels.num_clusters) throw ValidationError("reassign_fvc: FVC id out of range");
    is_fvc[static_cast<size_t>(k)] = 1;
  }
  std::vector<int> new_id(static_cast<size_t>(labels.num_clusters), kOutlier);
  std::vector<int> keep;
  for (int k = 0; k < labels.num_clusters; ++k)
    if (!is_fvc[static_cast<size_t>(k)]) {
      new_id[static_cast<size_t>(k)] = static_cast<int>(keep.size());
      keep.push_back(k);
    }

  ReassignResult out;
  out.report.fvc_ids = fvc_ids;
  std::sort(out.report.fvc_ids.begin(), out.report.fvc_ids.end());
  out.labels.num_clusters = static_cast<int>(keep.size());
  out.labels.assignment.assign(labels.size(), kOutlier);
  for (size_t i = 0; i < labels.size(); ++i) {
    const int k = labels[i];
    if (k == kOutlier) continue;
    if (!is_fvc[static_cast<size_t>(k)]) {
      out.labels.assignment[i] = new_id[static_cast<size_t>(k)];
      continue;
    }
    Reassignment r{static_cast<int>(i), k, kOutlier, -std::numeric_limits<double>::infinity()};
    int best = -1;
    for (int c : keep) {
      const double s = embeddings.col(static_cast<Eigen::Index>(i)).dot(centroids.col(c));
      if (s > r.similarity) {
        r.similarity = s;
        best = c;
      }
    }
    if (best >= 0 && r.similarity > s_c) r.new_label = new_id[static_cast<size_t>(best)];
    out.labels.assignment[i] = r.new_label;
    out.report.reassignments.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Curriculum

struct CurriculumState {
  double s_o = 0.7;
  double s_c = 0.7;
  double lambda = 0.0;
  double lambda_base = 0.005;
  double s_min = 0.0;
  int epoch = 0;
  int c_new = 0;
  int c_old = 0;
};

inline CurriculumState make_curriculum(double s_o, double lambda_base, double s_min = 0.0) {
  CurriculumState s;
  s.s_o = s.s_c = s_o;
  s.lambda_base = lambda_base;
  s.lambda = lambda_base;
  s.s_min = s_min;
  return s;
}

/// lambda = lambda_base |C_n / C_o|; s_c <- max(s_min, s_c - lambda).
inline CurriculumState curriculum_step(const CurriculumState& state, int c_new, int c_old) {
  if (c_old < 1) throw ValidationError("curriculum_step: old cluster count must be >= 1");
  CurriculumState next = state;
  next.lambda = state.lambda_base * std::abs(static_cast<double>(c_new) / static_cast<double>(c_old));
  next.s_c = std::max(state.s_min, state.s_c - next.lambda);
  next.epoch = state.epoch + 1;
  next.c_new = c_new;
  next.c_old = c_old;
  return next;
}

}  // namespace gaitsf
