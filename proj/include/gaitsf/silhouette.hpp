#pragma once

// Binary silhouette frames, sequences, region-restricted morphology and
// cloth augmentation.

#include "gaitsf/common.hpp"

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace gaitsf {

inline constexpr int kFrameRows = 64;
inline constexpr int kFrameCols = 44;

/// Row-major binary image. Generated silhouettes are always 64x44; other
/// sizes exist only so morphology can be exercised on small frames.
class Silhouette {
 public:
  Silhouette() : Silhouette(kFrameRows, kFrameCols) {}
  Silhouette(int rows, int cols) : rows_(rows), cols_(cols), px_(static_cast<size_t>(rows * cols), 0) {
    if (rows <= 0 || cols <= 0) throw GeometryError("silhouette dimensions must be positive");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  std::uint8_t at(int r, int c) const { return px_[static_cast<size_t>(r * cols_ + c)]; }
  void set(int r, int c, bool on) { px_[static_cast<size_t>(r * cols_ + c)] = on ? 1 : 0; }

  /// Zero outside the frame.
  std::uint8_t get_padded(int r, int c) const {
    if (r < 0 || r >= rows_ || c < 0 || c >= cols_) return 0;
    return at(r, c);
  }

  const std::vector<std::uint8_t>& pixels() const { return px_; }
  std::vector<std::uint8_t>& pixels() { return px_; }

  long on_count() const { return std::count(px_.begin(), px_.end(), std::uint8_t{1}); }

  bool operator==(const Silhouette& o) const = default;

 private:
  int rows_;
  int cols_;
  std::vector<std::uint8_t> px_;
};

enum class Condition { NM, BG, CL };

inline std::string to_string(Condition c) {
  switch (c) {
    case Condition::NM: return "NM";
    case Condition::BG: return "BG";
    case Condition::CL: return "CL";
  }
  return "NM";
}

inline Condition parse_condition(std::string_view s) {
  if (s == "NM") return Condition::NM;
  if (s == "BG") return Condition::BG;
  if (s == "CL") return Condition::CL;
  throw ValidationError("unknown walking condition '" + std::string(s) + "'");
}

struct GaitSequence {
  std::string seq_id;
  int subject_id = 0;
  Condition condition = Condition::NM;
  int view_deg = 90;
  /// 1-based index of the sequence within its (subject, condition, view) cell.
  int seq_index = 1;
  std::vector<Silhouette> frames;

  long on_count() const {
    long n = 0;
    for (const auto& f : frames) n += f.on_count();
    return n;
  }
};

/// Half-open row interval [start, end).
struct RowBounds {
  int start = 0;
  int end = kFrameRows;
  bool operator==(const RowBounds&) const = default;
};

namespace detail {

inline void check_morph_args(const Silhouette& frame, int kernel, RowBounds rows) {
  if (kernel < 1) throw ValidationError("structuring element must be non-empty");
  if (rows.start < 0 || rows.end > frame.rows() || rows.start >= rows.end)
    throw ValidationError("row bounds [" + std::to_string(rows.start) + "," + std::to_string(rows.end) +
                          ") outside frame of " + std::to_string(frame.rows()) + " rows");
}

// Offsets of a k x k square element: [-(k-1)/2, k/2].
inline int kernel_lo(int k) { return -(k - 1) / 2; }
inline int kernel_hi(int k) { return k / 2; }

}  // namespace detail

/// Binary dilation by a k x k square element, written only to rows in `rows`.
/// dilate(X)(p) = OR_{b in B} X(p - b), reading zero outside the frame.
inline Silhouette dilate(const Silhouette& frame, int kernel, RowBounds rows) {
  detail::check_morph_args(frame, kernel, rows);
  Silhouette out = frame;
  const int lo = detail::kernel_lo(kernel), hi = detail::kernel_hi(kernel);
  for (int r = rows.start; r < rows.end; ++r) {
    for (int c = 0; c < frame.cols(); ++c) {
      bool on = false;
      for (int dr = lo; dr <= hi && !on; ++dr)
        for (int dc = lo; dc <= hi && !on; ++dc) on = frame.get_padded(r - dr, c - dc) != 0;
      out.set(r, c, on);
    }
  }
  return out;
}

/// Binary erosion, the dual of dilate: erode(X)(p) = AND_{b in B} X(p + b),
/// reading zero outside the frame so the frame border erodes.
inline Silhouette erode(const Silhouette& frame, int kernel, RowBounds rows) {
  detail::check_morph_args(frame, kernel, rows);
  Silhouette out = frame;
  const int lo = detail::kernel_lo(kernel), hi = detail::kernel_hi(kernel);
  for (int r = rows.start; r < rows.end; ++r) {
    for (int c = 0; c < frame.cols(); ++c) {
      bool on = true;
      for (int dr = lo; dr <= hi && on; ++dr)
        for (int dc = lo; dc <= hi && on; ++dc) on = frame.get_padded(r + dr, c + dc) != 0;
      out.set(r, c, on);
    }
  }
  return out;
}

enum class MorphOp { Dilate, Erode };
enum class BodyRegion { Upper, Bottom, Whole };

inline std::string to_string(MorphOp op) { return op == MorphOp::Dilate ? "dilate" : "erode"; }
inline std::string to_string(BodyRegion r) {
  switch (r) {
    case BodyRegion::Upper: return "upper";
    case BodyRegion::Bottom: return "bottom";
    case BodyRegion::Whole: return "whole";
  }
  return "whole";
}

/// Cloth augmentation knobs. Boundary ranges are inclusive and given in rows
/// of a 64-row frame.
struct AugmentConfig {
  int upper_kernel = 5;
  int lower_kernel = 2;
  int upper_bound_lo = 14, upper_bound_hi = 18;
  int middle_bound_lo = 38, middle_bound_hi = 42;
  int bottom_bound_lo = 60, bottom_bound_hi = 64;
  /// Probability that a sequence is left untouched.
  double identity_prob = 0.0;

  void validate() const {
    require(upper_kernel >= 2 && upper_kernel <= 9, "augment.upper_kernel must be in [2,9]");
    require(lower_kernel >= 2 && lower_kernel <= 9, "augment.lower_kernel must be in [2,9]");
    require(0 <= upper_bound_lo && upper_bound_lo <= upper_bound_hi, "augment.upper_bound range invalid");
    require(upper_bound_hi < middle_bound_lo && middle_bound_lo <= middle_bound_hi,
            "augment.middle_bound range invalid");
    require(middle_bound_hi < bottom_bound_lo && bottom_bound_lo <= bottom_bound_hi &&
                bottom_bound_hi <= kFrameRows,
            "augment.bottom_bound range invalid");
    require(identity_prob >= 0.0 && identity_prob <= 1.0, "augment.identity_prob must be in [0,1]");
  }
};

/// One banded morphology step.
struct MorphBand {
  RowBounds rows;
  int kernel = 3;
  bool operator==(const MorphBand&) const = default;
};

/// A per-sequence augmentation. The upper body spans [upper, middle) and uses
/// the upper kernel, the bottom spans [middle, bottom) with the lower kernel;
/// "whole" applies both bands.
struct AugmentOp {
  bool identity = false;
  MorphOp op = MorphOp::Dilate;
  BodyRegion region = BodyRegion::Whole;
  int upper = 16, middle = 40, bottom = 62;
  AugmentConfig cfg{};

  std::vector<MorphBand> bands() const {
    std::vector<MorphBand> out;
    if (identity) return out;
    if (region != BodyRegion::Bottom) out.push_back({{upper, middle}, cfg.upper_kernel});
    if (region != BodyRegion::Upper) out.push_back({{middle, bottom}, cfg.lower_kernel});
    return out;
  }
};

/// Apply each band to the original frame; bands are disjoint so the result
/// does not depend on their order.
inline Silhouette apply_augment(const Silhouette& frame, const AugmentOp& op) {
  Silhouette out = frame;
  for (const auto& band : op.bands()) {
    Silhouette edited = op.op == MorphOp::Dilate ? dilate(frame, band.kernel, band.rows)
                                                 : erode(frame, band.kernel, band.rows);
    for (int r = band.rows.start; r < band.rows.end; ++r)
      for (int c = 0; c < frame.cols(); ++c) out.set(r, c, edited.at(r, c) != 0);
  }
  return out;
}

inline GaitSequence apply_augment(const GaitSequence& seq, const AugmentOp& op) {
  GaitSequence out;
  out.seq_id = seq.seq_id;
  out.subject_id = seq.subject_id;
  out.condition = seq.condition;
  out.view_deg = seq.view_deg;
  out.seq_index = seq.seq_index;
  out.frames.reserve(seq.frames.size());
  for (const auto& f : seq.frames) out.frames.push_back(apply_augment(f, op));
  return out;
}

/// Draw one of the six dilate/erode x upper/bottom/whole types with boundaries
/// sampled uniformly from the configured ranges.
inline AugmentOp sample_augment(Rng& rng, const AugmentConfig& cfg = {}) {
  AugmentOp op;
  op.cfg = cfg;
  // Fixed draw order keeps the stream aligned whether or not identity fires.
  const double u_identity = uniform(rng, 0.0, 1.0);
  const double u_op = uniform(rng, 0.0, 1.0);
  const int region = uniform_int(rng, 0, 2);
  op.upper = uniform_int(rng, cfg.upper_bound_lo, cfg.upper_bound_hi);
  op.middle = uniform_int(rng, cfg.middle_bound_lo, cfg.middle_bound_hi);
  op.bottom = uniform_int(rng, cfg.bottom_bound_lo, cfg.bottom_bound_hi);
  op.identity = u_identity < cfg.identity_prob;
  op.op = u_op < 0.5 ? MorphOp::Dilate : MorphOp::Erode;
  op.region = static_cast<BodyRegion>(region);
  return op;
}

/// One augmentation is drawn per sequence and applied to every frame.
inline GaitSequence cloth_augment(const GaitSequence& seq, Rng& rng, const AugmentConfig& cfg = {}) {
  if (seq.frames.empty()) throw ValidationError("cloth_augment: sequence '" + seq.seq_id + "' has no frames");
  if (seq.frames.front().rows() != kFrameRows)
    throw GeometryError("cloth_augment expects " + std::to_string(kFrameRows) + "-row frames");
  return apply_augment(seq, sample_augment(rng, cfg));
}

}  // namespace gaitsf
