#pragma once

// Procedural walker used to synthesize silhouette datasets.
//
// The body is a head ellipse, a trapezoidal torso, and four tapered limb
// segments that swing sinusoidally. A view angle of 90 degrees shows the full
// lateral stride; at 0/180 degrees the stride axis points at the camera, so
// limbs only foreshorten and the frame is a near-static frontal blob. Views
// above 90 degrees are mirror images of their supplement. Coats (CL) widen the
// torso and arms by a per-subject delta and extend a hem over the thighs; bags
// (BG) add a blob at the hip.

#include "gaitsf/common.hpp"
#include "gaitsf/silhouette.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

namespace gaitsf {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double sample(Rng& rng) const { return lo == hi ? lo : uniform(rng, lo, hi); }
};

struct SynthSpec {
  int n_subjects = 40;
  /// Added to the subject index so that splits carry disjoint ids.
  int subject_id_offset = 0;
  std::vector<Condition> conditions{Condition::NM, Condition::CL};
  std::vector<int> views{0, 45, 90, 135, 180};
  int seqs_per_cell = 2;
  /// NM sequences per cell when > 0 (evaluation splits need a larger NM gallery).
  int nm_seqs_per_cell = 0;
  int frames = 30;
  std::uint64_t seed = 1;

  Range torso_width{6.0, 9.0};   // frontal half-width at the shoulders
  Range hip_width{4.5, 7.0};     // frontal half-width at the hips
  Range torso_depth{3.0, 5.0};   // lateral half-depth
  Range limb_width{1.5, 2.6};    // thigh half-width
  Range arm_width{1.0, 1.7};
  Range stride_amplitude{0.28, 0.55};  // radians
  Range arm_swing{0.12, 0.45};
  Range head_size{3.2, 4.6};
  Range hip_row{36.0, 41.0};
  Range coat_delta{1.5, 3.0};
  Range coat_hem{4.0, 9.0};
  Range bag_size{3.0, 5.0};

  void validate() const {
    require(n_subjects >= 1, "n_subjects must be >= 1");
    require(subject_id_offset >= 0, "subject_id_offset must be >= 0");
    require(!conditions.empty(), "conditions must be non-empty");
    require(!views.empty(), "views must be non-empty");
    for (int v : views) require(v >= 0 && v <= 180, "views must lie in [0,180]");
    require(seqs_per_cell >= 1, "seqs_per_cell must be >= 1");
    require(nm_seqs_per_cell >= 0, "nm_seqs_per_cell must be >= 0");
    require(frames >= 1, "frames must be >= 1");
    auto check = [](const Range& r, const char* name, double min_lo) {
      require(r.lo <= r.hi && r.lo >= min_lo, std::string(name) + " range invalid");
    };
    check(torso_width, "torso_width", 1.0);
    check(hip_width, "hip_width", 1.0);
    check(torso_depth, "torso_depth", 1.0);
    check(limb_width, "limb_width", 0.5);
    check(arm_width, "arm_width", 0.5);
    check(stride_amplitude, "stride_amplitude", 0.0);
    check(arm_swing, "arm_swing", 0.0);
    check(head_size, "head_size", 1.0);
    check(hip_row, "hip_row", 20.0);
    require(hip_row.hi <= 50.0, "hip_row range invalid");
    require(coat_delta.lo > 0.0 && coat_delta.lo <= coat_delta.hi, "coat_delta must be > 0");
    check(coat_hem, "coat_hem", 0.0);
    check(bag_size, "bag_size", 0.5);
  }
};

/// Identity-defining body shape of one synthetic subject.
struct WalkerBody {
  double head_r, top, shoulder_w, hip_w, depth, leg_w, arm_w;
  double stride, swing, hip_row, lean;
  double coat_delta, coat_hem, bag_r;
  int bag_side;
};

/// Per-sequence nuisance factors.
struct WalkerTake {
  double phase0, period, stride_scale, shift, looseness;
};

struct ManifestEntry {
  std::string seq_id;
  int subject_id = 0;
  Condition condition = Condition::NM;
  int view_deg = 0;
  int seq_index = 1;
  int n_frames = 0;
  std::string path;
};

struct Dataset {
  std::vector<GaitSequence> sequences;
  std::vector<ManifestEntry> manifest;
};

inline std::string make_seq_id(int subject, Condition c, int seq_index, int view) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%03d-%s-%02d-%03d", subject, to_string(c).c_str(), seq_index, view);
  return buf;
}

inline WalkerBody sample_body(const SynthSpec& spec, int subject_id) {
  Rng rng(derive_seed(spec.seed, 0x5b0d1e5ULL + static_cast<std::uint64_t>(subject_id)));
  WalkerBody b{};
  b.head_r = spec.head_size.sample(rng);
  b.top = uniform(rng, 1.0, 3.0);
  b.shoulder_w = spec.torso_width.sample(rng);
  b.hip_w = spec.hip_width.sample(rng);
  b.depth = spec.torso_depth.sample(rng);
  b.leg_w = spec.limb_width.sample(rng);
  b.arm_w = spec.arm_width.sample(rng);
  b.stride = spec.stride_amplitude.sample(rng);
  b.swing = spec.arm_swing.sample(rng);
  b.hip_row = spec.hip_row.sample(rng);
  b.lean = uniform(rng, -1.0, 2.0);
  b.coat_delta = spec.coat_delta.sample(rng);
  b.coat_hem = spec.coat_hem.sample(rng);
  b.bag_r = spec.bag_size.sample(rng);
  b.bag_side = uniform(rng, 0.0, 1.0) < 0.5 ? -1 : 1;
  return b;
}

namespace detail {

struct Canvas {
  Silhouette& img;

  void ellipse(double cr, double cc, double ry, double rx) {
    const int r0 = std::max(0, static_cast<int>(std::floor(cr - ry)));
    const int r1 = std::min(img.rows() - 1, static_cast<int>(std::ceil(cr + ry)));
    const int c0 = std::max(0, static_cast<int>(std::floor(cc - rx)));
    const int c1 = std::min(img.cols() - 1, static_cast<int>(std::ceil(cc + rx)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double y = (r - cr) / ry, x = (c - cc) / rx;
        if (x * x + y * y <= 1.0) img.set(r, c, true);
      }
  }

  // Tapered thick segment from (r0,c0) with half-width w0 to (r1,c1) with w1.
  void limb(double ra, double ca, double rb, double cb, double wa, double wb) {
    const double wmax = std::max(wa, wb);
    const int rlo = std::max(0, static_cast<int>(std::floor(std::min(ra, rb) - wmax)));
    const int rhi = std::min(img.rows() - 1, static_cast<int>(std::ceil(std::max(ra, rb) + wmax)));
    const int clo = std::max(0, static_cast<int>(std::floor(std::min(ca, cb) - wmax)));
    const int chi = std::min(img.cols() - 1, static_cast<int>(std::ceil(std::max(ca, cb) + wmax)));
    const double dr = rb - ra, dc = cb - ca;
    const double len2 = dr * dr + dc * dc;
    for (int r = rlo; r <= rhi; ++r)
      for (int c = clo; c <= chi; ++c) {
        double t = len2 > 0 ? ((r - ra) * dr + (c - ca) * dc) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double pr = ra + t * dr - r, pc = ca + t * dc - c;
        const double w = wa + t * (wb - wa);
        if (pr * pr + pc * pc <= w * w) img.set(r, c, true);
      }
  }

  // Rows [r_top, r_bot] filled within |c - center(r)| <= half(r), linear in r.
  void trapezoid(double r_top, double r_bot, double c_top, double c_bot, double w_top, double w_bot) {
    const int rlo = std::max(0, static_cast<int>(std::ceil(r_top)));
    const int rhi = std::min(img.rows() - 1, static_cast<int>(std::floor(r_bot)));
    for (int r = rlo; r <= rhi; ++r) {
      const double t = r_bot > r_top ? (r - r_top) / (r_bot - r_top) : 0.0;
      const double cc = c_top + t * (c_bot - c_top);
      const double w = w_top + t * (w_bot - w_top);
      const int clo = std::max(0, static_cast<int>(std::ceil(cc - w)));
      const int chi = std::min(img.cols() - 1, static_cast<int>(std::floor(cc + w)));
      for (int c = clo; c <= chi; ++c) img.set(r, c, true);
    }
  }
};

}  // namespace detail

/// Render one frame of a walker at gait phase `phase` (radians).
inline Silhouette render_frame(const WalkerBody& b, const WalkerTake& take, Condition cond, int view_deg,
                               double phase) {
  Silhouette img(kFrameRows, kFrameCols);
  detail::Canvas cv{img};
  const double deg = view_deg <= 90 ? view_deg : 180 - view_deg;
  const double rad = deg * std::numbers::pi / 180.0;
  const double sv = std::sin(rad), cvw = std::cos(rad);
  const double cx = (kFrameCols - 1) / 2.0 + take.shift;
  const double bottom = kFrameRows - 1.0;

  auto apparent = [&](double frontal, double lateral) {
    return std::sqrt(frontal * frontal * cvw * cvw + lateral * lateral * sv * sv);
  };

  const bool coat = cond == Condition::CL;
  const double coat_w = coat ? b.coat_delta : 0.0;
  const double loose = take.looseness;

  // Head.
  const double head_c = cx + b.lean * sv;
  cv.ellipse(b.top + b.head_r, head_c, b.head_r, b.head_r * 0.85);
  const double neck = b.top + 2.0 * b.head_r - 0.5;
  const double shoulder = neck + 1.5;

  // Legs swing about the hip joint along the walking direction.
  const double stride = b.stride * take.stride_scale;
  const double leg_len = bottom - b.hip_row;
  const double hip_sep = b.hip_w * 0.5 * cvw;
  for (int side = -1; side <= 1; side += 2) {
    const double a = side * stride * std::sin(phase);
    const double hip_c = cx + side * hip_sep;
    const double foot_r = b.hip_row + leg_len * std::cos(a);
    const double foot_c = hip_c + leg_len * std::sin(a) * sv;
    cv.limb(b.hip_row, hip_c, foot_r, foot_c, b.leg_w, b.leg_w * 0.65);
  }

  // Torso, optionally with a coat hem covering the thighs.
  const double torso_top_w = apparent(b.shoulder_w, b.depth) + coat_w + loose;
  const double torso_bot_w = apparent(b.hip_w, b.depth * 0.9) + coat_w + loose;
  cv.trapezoid(shoulder, b.hip_row, cx + b.lean * sv * 0.6, cx, torso_top_w, torso_bot_w);
  if (coat) cv.trapezoid(b.hip_row, b.hip_row + b.coat_hem, cx, cx, torso_bot_w, torso_bot_w + 0.5);

  // Arms swing opposite to the legs.
  const double arm_len = (b.hip_row - shoulder) + 4.0;
  const double arm_w = b.arm_w + (coat ? 0.6 * b.coat_delta : 0.0);
  const double sh_sep = std::max(0.0, b.shoulder_w * cvw - b.arm_w * 0.5);
  for (int side = -1; side <= 1; side += 2) {
    const double a = -side * b.swing * std::sin(phase);
    const double sh_c = cx + b.lean * sv * 0.6 + side * sh_sep;
    const double hand_r = shoulder + 1.0 + arm_len * std::cos(a);
    const double hand_c = sh_c + arm_len * std::sin(a) * sv;
    cv.limb(shoulder + 1.0, sh_c, hand_r, hand_c, arm_w, arm_w * 0.8);
  }

  if (cond == Condition::BG) {
    const double bag_c = cx + b.bag_side * (apparent(b.hip_w, b.depth) + b.bag_r * 0.8);
    cv.ellipse(b.hip_row - 1.0, bag_c, b.bag_r * 1.2, b.bag_r);
  }

  if (view_deg > 90) {
    Silhouette mirrored(kFrameRows, kFrameCols);
    for (int r = 0; r < kFrameRows; ++r)
      for (int c = 0; c < kFrameCols; ++c) mirrored.set(r, c, img.at(r, kFrameCols - 1 - c) != 0);
    return mirrored;
  }
  return img;
}

inline GaitSequence render_sequence(const SynthSpec& spec, const WalkerBody& body, int subject_id, Condition cond,
                                    int view, int seq_index) {
  const std::uint64_t salt = (static_cast<std::uint64_t>(subject_id) << 32) ^
                             (static_cast<std::uint64_t>(cond) << 24) ^
                             (static_cast<std::uint64_t>(view) << 8) ^ static_cast<std::uint64_t>(seq_index);
  Rng rng(derive_seed(spec.seed, salt));
  WalkerTake take{};
  take.phase0 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  take.period = uniform(rng, 24.0, 32.0);
  take.stride_scale = uniform(rng, 0.95, 1.05);
  take.shift = uniform(rng, -0.5, 0.5);
  take.looseness = uniform(rng, -0.3, 0.3);

  GaitSequence seq;
  seq.seq_id = make_seq_id(subject_id, cond, seq_index, view);
  seq.subject_id = subject_id;
  seq.condition = cond;
  seq.view_deg = view;
  seq.seq_index = seq_index;
  seq.frames.reserve(static_cast<size_t>(spec.frames));
  for (int t = 0; t < spec.frames; ++t) {
    const double phase = take.phase0 + 2.0 * std::numbers::pi * t / take.period;
    seq.frames.push_back(render_frame(body, take, cond, view, phase));
  }
  return seq;
}

/// Deterministic for a fixed spec. Sequences are ordered subject-major, then
/// condition, view and sequence index.
inline Dataset generate_dataset(const SynthSpec& spec) {
  spec.validate();
  Dataset ds;
  auto cell_count = [&](Condition c) {
    return c == Condition::NM && spec.nm_seqs_per_cell > 0 ? spec.nm_seqs_per_cell : spec.seqs_per_cell;
  };
  for (int s = 0; s < spec.n_subjects; ++s) {
    const int subject = spec.subject_id_offset + s;
    const WalkerBody body = sample_body(spec, subject);
    for (Condition cond : spec.conditions)
      for (int view : spec.views)
        for (int k = 1; k <= cell_count(cond); ++k) {
          GaitSequence seq = render_sequence(spec, body, subject, cond, view, k);
          ManifestEntry e{seq.seq_id, subject, cond, view, k, static_cast<int>(seq.frames.size()),
                          "seqs/" + seq.seq_id};
          ds.manifest.push_back(std::move(e));
          ds.sequences.push_back(std::move(seq));
        }
  }
  return ds;
}

}  // namespace gaitsf
