#pragma once

// Part-sliced set-pooling encoder.
//
// A sequence is max-pooled over its frames, the pooled frame is cut into P
// equal horizontal strips, each strip is projected by its own D x (rows/P*cols)
// matrix, and the P projections are concatenated and L2-normalized. Pooling
// sits upstream of every parameter, so gradients with respect to the
// projections never pass through the max.

#include "gaitsf/common.hpp"
#include "gaitsf/parallel.hpp"
#include "gaitsf/serialize.hpp"
#include "gaitsf/silhouette.hpp"

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace gaitsf {

struct EncoderParams {
  int parts = 4;
  int dim = 16;
  int rows = kFrameRows;
  int cols = kFrameCols;
  std::vector<Mat> proj;  // proj[p] is dim x strip_size()

  int strip_rows() const { return rows / parts; }
  int strip_size() const { return strip_rows() * cols; }
  int input_size() const { return rows * cols; }
  int embedding_size() const { return parts * dim; }

  bool operator==(const EncoderParams& o) const {
    if (parts != o.parts || dim != o.dim || rows != o.rows || cols != o.cols || proj.size() != o.proj.size())
      return false;
    for (size_t p = 0; p < proj.size(); ++p)
      if (proj[p] != o.proj[p]) return false;
    return true;
  }

  void validate() const {
    if (parts < 1 || rows % parts != 0)
      throw GeometryError("part count " + std::to_string(parts) + " must divide " + std::to_string(rows) + " rows");
    if (dim < 1) throw GeometryError("embedding dim must be >= 1");
    if (static_cast<int>(proj.size()) != parts) throw GeometryError("projection count != part count");
    for (const auto& w : proj) {
      if (w.rows() != dim || w.cols() != strip_size()) throw GeometryError("projection shape mismatch");
      if (!w.allFinite()) throw ValidationError("encoder parameters contain non-finite entries");
    }
  }
};

/// Gradients shaped like EncoderParams::proj.
struct ParamGrads {
  std::vector<Mat> proj;

  static ParamGrads zeros_like(const EncoderParams& p) {
    ParamGrads g;
    for (const auto& w : p.proj) g.proj.push_back(Mat::Zero(w.rows(), w.cols()));
    return g;
  }
  ParamGrads& operator+=(const ParamGrads& o) {
    for (size_t i = 0; i < proj.size(); ++i) proj[i] += o.proj[i];
    return *this;
  }
};

struct Embedding {
  Vec value;
  std::string seq_id;
  bool augmented = false;
};

inline EncoderParams init_params(int parts, int dim, std::uint64_t seed, int rows = kFrameRows,
                                 int cols = kFrameCols) {
  EncoderParams p;
  p.parts = parts;
  p.dim = dim;
  p.rows = rows;
  p.cols = cols;
  if (parts < 1 || rows % parts != 0)
    throw GeometryError("part count " + std::to_string(parts) + " must divide " + std::to_string(rows) + " rows");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(p.strip_size())));
  for (int k = 0; k < parts; ++k) {
    Mat w(dim, p.strip_size());
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
    p.proj.push_back(std::move(w));
  }
  return p;
}

/// Element-wise max over the chosen frames, flattened row-major.
inline Vec pool_frames(const GaitSequence& seq, std::span<const int> frame_ids) {
  if (seq.frames.empty()) throw ValidationError("sequence '" + seq.seq_id + "' has no frames");
  const int rows = seq.frames.front().rows(), cols = seq.frames.front().cols();
  std::vector<std::uint8_t> acc(static_cast<size_t>(rows * cols), 0);
  for (int idx : frame_ids) {
    if (idx < 0 || idx >= static_cast<int>(seq.frames.size())) throw ValidationError("frame index out of range");
    const auto& f = seq.frames[static_cast<size_t>(idx)];
    if (f.rows() != rows || f.cols() != cols) throw GeometryError("frames of '" + seq.seq_id + "' differ in size");
    const auto& px = f.pixels();
    for (size_t i = 0; i < acc.size(); ++i) acc[i] |= px[i];
  }
  Vec out(static_cast<Eigen::Index>(acc.size()));
  for (size_t i = 0; i < acc.size(); ++i) out[static_cast<Eigen::Index>(i)] = acc[i];
  return out;
}

inline Vec pool_all(const GaitSequence& seq) {
  std::vector<int> ids(seq.frames.size());
  std::iota(ids.begin(), ids.end(), 0);
  return pool_frames(seq, ids);
}

/// `count` frame indices drawn without replacement, or all frames topped up
/// with replacement when the sequence is shorter than `count`.
inline std::vector<int> select_frames(int n_frames, int count, Rng& rng) {
  std::vector<int> ids(static_cast<size_t>(n_frames));
  std::iota(ids.begin(), ids.end(), 0);
  if (n_frames >= count) {
    for (int i = 0; i < count; ++i) std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(uniform_int(rng, i, n_frames - 1))]);
    ids.resize(static_cast<size_t>(count));
  } else {
    while (static_cast<int>(ids.size()) < count) ids.push_back(uniform_int(rng, 0, n_frames - 1));
  }
  return ids;
}

/// Forward activations of a batch of pooled inputs (one column per sample).
struct BatchForward {
  Mat z;         // raw concatenated projections, embedding_size x B
  Vec norms;     // ||z_b||
  Mat embedded;  // z / ||z||
};

inline BatchForward forward_batch(const EncoderParams& params, const Mat& pooled) {
  if (pooled.rows() != params.input_size())
    throw GeometryError("pooled input has " + std::to_string(pooled.rows()) + " entries, encoder expects " +
                        std::to_string(params.input_size()));
  const int s = params.strip_size(), d = params.dim;
  BatchForward f;
  f.z.resize(params.embedding_size(), pooled.cols());
  for (int p = 0; p < params.parts; ++p) f.z.middleRows(p * d, d).noalias() = params.proj[static_cast<size_t>(p)] * pooled.middleRows(p * s, s);
  f.norms = f.z.colwise().norm().transpose();
  for (Eigen::Index b = 0; b < f.norms.size(); ++b)
    if (!(f.norms[b] > 1e-12)) throw ValidationError("encoder produced a zero embedding (empty input?)");
  f.embedded = f.z * f.norms.cwiseInverse().asDiagonal();
  return f;
}

/// Gradient of the normalization: (g - e (e.g)) / ||z||, column-wise.
inline Mat normalize_backward(const BatchForward& f, const Mat& upstream) {
  const Vec eg = (f.embedded.cwiseProduct(upstream)).colwise().sum().transpose();
  Mat dz = upstream - f.embedded * eg.asDiagonal();
  return dz * f.norms.cwiseInverse().asDiagonal();
}

/// Parameter gradients for upstream gradients dL/d(embedding), one column per sample.
inline ParamGrads backward_batch(const EncoderParams& params, const Mat& pooled, const BatchForward& f,
                                 const Mat& upstream) {
  if (upstream.rows() != params.embedding_size() || upstream.cols() != pooled.cols())
    throw GeometryError("upstream gradient shape mismatch");
  const Mat dz = normalize_backward(f, upstream);
  const int s = params.strip_size(), d = params.dim;
  ParamGrads g;
  for (int p = 0; p < params.parts; ++p) g.proj.push_back(dz.middleRows(p * d, d) * pooled.middleRows(p * s, s).transpose());
  return g;
}

inline Vec embed_pooled(const EncoderParams& params, const Vec& pooled) {
  return forward_batch(params, pooled).embedded.col(0);
}

inline void check_geometry(const GaitSequence& seq, const EncoderParams& params) {
  if (seq.frames.empty()) throw ValidationError("sequence '" + seq.seq_id + "' has no frames");
  const auto& f = seq.frames.front();
  if (f.rows() != params.rows || f.cols() != params.cols)
    throw GeometryError("sequence '" + seq.seq_id + "' has " + std::to_string(f.rows()) + "x" +
                        std::to_string(f.cols()) + " frames, encoder expects " + std::to_string(params.rows) + "x" +
                        std::to_string(params.cols));
}

/// Embeds a sequence using all of its frames.
inline Embedding encode(const GaitSequence& seq, const EncoderParams& params, bool augmented = false) {
  check_geometry(seq, params);
  return {embed_pooled(params, pool_all(seq)), seq.seq_id, augmented};
}

inline ParamGrads encode_backward(const GaitSequence& seq, const EncoderParams& params, const Vec& upstream) {
  check_geometry(seq, params);
  if (upstream.size() != params.embedding_size()) throw GeometryError("upstream gradient length mismatch");
  const Vec x = pool_all(seq);
  const BatchForward f = forward_batch(params, x);
  return backward_batch(params, x, f, upstream);
}

/// Embeds many pooled inputs; columns of the result follow input order.
inline Mat embed_all(const EncoderParams& params, const std::vector<Vec>& pooled) {
  Mat out(params.embedding_size(), static_cast<Eigen::Index>(pooled.size()));
  constexpr size_t kChunk = 64;
  const size_t chunks = (pooled.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](size_t c) {
    const size_t lo = c * kChunk, hi = std::min(pooled.size(), lo + kChunk);
    Mat x(params.input_size(), static_cast<Eigen::Index>(hi - lo));
    for (size_t i = lo; i < hi; ++i) x.col(static_cast<Eigen::Index>(i - lo)) = pooled[i];
    out.middleCols(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo)) = forward_batch(params, x).embedded;
  });
  return out;
}

/// w <- w - lr * (g + weight_decay * w). Non-finite gradients reject the update.
inline EncoderParams sgd_step(const EncoderParams& params, const ParamGrads& grads, double lr, double weight_decay) {
  if (grads.proj.size() != params.proj.size()) throw GeometryError("gradient/parameter count mismatch");
  for (size_t p = 0; p < grads.proj.size(); ++p) {
    if (grads.proj[p].rows() != params.proj[p].rows() || grads.proj[p].cols() != params.proj[p].cols())
      throw GeometryError("gradient/parameter shape mismatch");
    if (!grads.proj[p].allFinite()) throw ValidationError("non-finite gradient; update rejected");
  }
  EncoderParams out = params;
  if (lr == 0.0) return out;
  for (size_t p = 0; p < out.proj.size(); ++p) out.proj[p] -= lr * (grads.proj[p] + weight_decay * params.proj[p]);
  return out;
}

inline void save_params(const std::filesystem::path& path, const EncoderParams& params) {
  nlohmann::json header{{"kind", "encoder_params"}, {"version", 1},          {"parts", params.parts},
                        {"dim", params.dim},        {"rows", params.rows}, {"cols", params.cols}};
  std::vector<NamedTensor> t;
  for (int p = 0; p < params.parts; ++p) t.push_back({"proj" + std::to_string(p), params.proj[static_cast<size_t>(p)]});
  write_tensor_file(path, std::move(header), t);
}

inline EncoderParams load_params(const std::filesystem::path& path) {
  const TensorFile tf = read_tensor_file(path);
  if (tf.header.value("kind", "") != "encoder_params") throw IoError(path.string() + " is not an encoder file");
  EncoderParams p;
  p.parts = tf.header.at("parts").get<int>();
  p.dim = tf.header.at("dim").get<int>();
  p.rows = tf.header.at("rows").get<int>();
  p.cols = tf.header.at("cols").get<int>();
  for (int k = 0; k < p.parts; ++k) p.proj.push_back(tf.get("proj" + std::to_string(k)));
  p.validate();
  return p;
}

}  // namespace gaitsf
