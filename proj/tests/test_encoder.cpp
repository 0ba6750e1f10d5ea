#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace gaitsf;

namespace {

GaitSequence walker(std::uint64_t seed, int view = 90, int frames = 8) {
  SynthSpec spec;
  spec.n_subjects = 1;
  spec.conditions = {Condition::NM};
  spec.views = {view};
  spec.seqs_per_cell = 1;
  spec.frames = frames;
  spec.seed = seed;
  return generate_dataset(spec).sequences.front();
}

// Flattens every projection into one vector and back.
Vec flatten(const EncoderParams& p) {
  Eigen::Index n = 0;
  for (const auto& w : p.proj) n += w.size();
  Vec v(n);
  Eigen::Index o = 0;
  for (const auto& w : p.proj)
    for (Eigen::Index i = 0; i < w.size(); ++i) v[o++] = w.data()[i];
  return v;
}

EncoderParams unflatten(EncoderParams p, const Vec& v) {
  Eigen::Index o = 0;
  for (auto& w : p.proj)
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = v[o++];
  return p;
}

Vec flatten(const ParamGrads& g) {
  EncoderParams p;
  p.proj = g.proj;
  return flatten(p);
}

}  // namespace

TEST(Encoder, EmbeddingHasUnitNorm) {
  const EncoderParams p = init_params(4, 16, 3);
  for (std::uint64_t s = 1; s <= 10; ++s) {
    const Embedding e = encode(walker(s, static_cast<int>(s * 17 % 181)), p);
    EXPECT_NEAR(e.value.norm(), 1.0, 1e-6);
    EXPECT_EQ(e.value.size(), 64);
  }
}

TEST(Encoder, FrameOrderAndDuplicationDoNotMatter) {
  const EncoderParams p = init_params(4, 16, 5);
  const GaitSequence seq = walker(2);
  GaitSequence rev = seq, dup = seq;
  std::reverse(rev.frames.begin(), rev.frames.end());
  dup.frames.insert(dup.frames.end(), seq.frames.begin(), seq.frames.end());
  const Vec a = encode(seq, p).value;
  EXPECT_EQ(encode(rev, p).value, a);
  EXPECT_EQ(encode(dup, p).value, a);
}

TEST(Encoder, GeometryMismatchIsRejected) {
  const EncoderParams p = init_params(4, 16, 5, 32, 44);
  EXPECT_THROW(encode(walker(1), p), GeometryError);
  EXPECT_THROW(init_params(3, 16, 1), GeometryError);
  EXPECT_THROW(encode_backward(walker(1), init_params(4, 16, 1), Vec::Ones(10)), GeometryError);
}

TEST(Encoder, AnalyticGradientMatchesFiniteDifferences) {
  // Small geometry so that every entry of every projection can be perturbed.
  Rng rng(99);
  for (int draw = 0; draw < 20; ++draw) {
    const int parts = uniform_int(rng, 1, 4), dim = uniform_int(rng, 1, 5);
    const int rows = parts * uniform_int(rng, 1, 3), cols = uniform_int(rng, 2, 5);
    const EncoderParams p = init_params(parts, dim, 1000 + draw, rows, cols);
    Mat x(rows * cols, 1);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = uniform(rng, 0.0, 1.0) < 0.6 ? 1.0 : 0.0;
    x(0) = 1.0;
    Vec g(p.embedding_size());
    for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = uniform(rng, -1.0, 1.0);

    const auto loss = [&](const Vec& w) { return g.dot(forward_batch(unflatten(p, w), x).embedded.col(0)); };
    const BatchForward f = forward_batch(p, x);
    const Vec analytic = flatten(backward_batch(p, x, f, g));
    const Vec numeric = oracle::numeric_gradient(loss, flatten(p), 1e-5);
    EXPECT_LT(oracle::max_rel_error(analytic, numeric), 1e-4) << "draw " << draw;
  }
}

TEST(Encoder, SequenceGradientMatchesFiniteDifferencesOnSampledEntries) {
  const GaitSequence seq = walker(4);
  const EncoderParams p = init_params(4, 4, 8);
  Rng rng(5);
  Vec g(p.embedding_size());
  for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = uniform(rng, -1.0, 1.0);
  const ParamGrads grads = encode_backward(seq, p, g);
  const double eps = 1e-5;
  for (int t = 0; t < 200; ++t) {
    const int part = uniform_int(rng, 0, 3);
    const int r = uniform_int(rng, 0, 3), c = uniform_int(rng, 0, p.strip_size() - 1);
    EncoderParams up = p, down = p;
    up.proj[static_cast<size_t>(part)](r, c) += eps;
    down.proj[static_cast<size_t>(part)](r, c) -= eps;
    const double num = (g.dot(encode(seq, up).value) - g.dot(encode(seq, down).value)) / (2 * eps);
    const double ana = grads.proj[static_cast<size_t>(part)](r, c);
    EXPECT_LE(std::abs(num - ana), 1e-4 * std::max({std::abs(num), std::abs(ana), 1e-6}));
  }
}

TEST(Encoder, ZeroUpstreamGivesZeroGradient) {
  const ParamGrads g = encode_backward(walker(1), init_params(4, 16, 2), Vec::Zero(64));
  for (const auto& m : g.proj) EXPECT_EQ(m.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Encoder, ZeroStripInputGivesZeroColumns) {
  const EncoderParams p = init_params(4, 16, 2);
  const GaitSequence seq = walker(3);
  const Vec x = pool_all(seq);
  Rng rng(1);
  Vec g(64);
  for (Eigen::Index i = 0; i < 64; ++i) g[i] = uniform(rng, -1, 1);
  const ParamGrads grads = encode_backward(seq, p, g);
  int zero_inputs = 0;
  for (int part = 0; part < 4; ++part)
    for (int c = 0; c < p.strip_size(); ++c)
      if (x[part * p.strip_size() + c] == 0.0) {
        ++zero_inputs;
        ASSERT_EQ(grads.proj[static_cast<size_t>(part)].col(c).cwiseAbs().maxCoeff(), 0.0);
      }
  EXPECT_GT(zero_inputs, 0);
}

TEST(Encoder, NormalizationGradientIsOrthogonalToEmbedding) {
  Rng rng(7);
  const EncoderParams p = init_params(4, 16, 11);
  for (int t = 0; t < 50; ++t) {
    Mat x(p.input_size(), 1);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = uniform(rng, 0.0, 1.0) < 0.3 ? 1.0 : 0.0;
    Mat g(64, 1);
    for (Eigen::Index i = 0; i < 64; ++i) g(i) = uniform(rng, -5, 5);
    const BatchForward f = forward_batch(p, x);
    const Mat dz = normalize_backward(f, g);
    EXPECT_NEAR(f.embedded.col(0).dot(dz.col(0)), 0.0, 1e-8);
  }
}

TEST(Encoder, SgdScalarExamples) {
  EncoderParams p = init_params(1, 1, 1, 1, 1);
  p.proj[0](0, 0) = 1.0;
  ParamGrads g = ParamGrads::zeros_like(p);
  g.proj[0](0, 0) = 1.0;
  EXPECT_DOUBLE_EQ(sgd_step(p, g, 0.1, 0.0).proj[0](0, 0), 0.9);
  g.proj[0](0, 0) = 0.0;
  EXPECT_DOUBLE_EQ(sgd_step(p, g, 0.1, 5e-4).proj[0](0, 0), 0.99995);
}

TEST(Encoder, SgdZeroLrAndNonFiniteGradients) {
  const EncoderParams p = init_params(4, 16, 2);
  ParamGrads g = ParamGrads::zeros_like(p);
  g.proj[1].setConstant(3.0);
  EXPECT_EQ(sgd_step(p, g, 0.0, 5e-4), p);
  g.proj[2](0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(sgd_step(p, g, 0.1, 0.0), ValidationError);
  g.proj[2](0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(sgd_step(p, g, 0.1, 0.0), ValidationError);
}

TEST(Encoder, ParamsRoundTripExactly) {
  const EncoderParams p = init_params(4, 16, 21);
  const auto path = std::filesystem::temp_directory_path() / "gaitsf_test_params.bin";
  save_params(path, p);
  EXPECT_EQ(load_params(path), p);
  std::filesystem::remove(path);
  EXPECT_THROW(load_params(path), IoError);
}

TEST(Encoder, FrameSelectionWithoutReplacementWhenLongEnough) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    auto ids = select_frames(40, 30, rng);
    ASSERT_EQ(ids.size(), 30u);
    std::set<int> uniq(ids.begin(), ids.end());
    EXPECT_EQ(uniq.size(), 30u);
    auto short_ids = select_frames(5, 30, rng);
    ASSERT_EQ(short_ids.size(), 30u);
    for (int i = 0; i < 5; ++i) EXPECT_EQ(short_ids[static_cast<size_t>(i)], i);
  }
}

TEST(Pretrain, ZeroScheduleLeavesParamsUnchanged) {
  SynthSpec spec;
  spec.n_subjects = 3;
  spec.conditions = {Condition::NM};
  spec.views = {0, 90};
  spec.seqs_per_cell = 1;
  spec.frames = 6;
  const Dataset ds = generate_dataset(spec);
  const EncoderParams init = init_params(4, 8, 1);
  PretrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.lr_schedule = {0.0};
  const PretrainResult r = pretrain(ds.sequences, init, cfg);
  EXPECT_EQ(r.params, init);
  EXPECT_EQ(r.loss_history.size(), 6u);
}

TEST(Pretrain, LossFiniteAndTrainingAccuracyHigh) {
  SynthSpec spec;
  spec.n_subjects = 20;
  spec.conditions = {Condition::NM};
  spec.seqs_per_cell = 2;
  spec.frames = 20;
  spec.seed = 4;
  const Dataset ds = generate_dataset(spec);
  PretrainConfig cfg;
  cfg.epochs = 20;
  const PretrainResult r = pretrain(ds.sequences, init_params(4, 16, 9), cfg);
  for (double l : r.loss_history) ASSERT_TRUE(std::isfinite(l));
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
  std::vector<Vec> pooled;
  std::vector<int> subjects;
  for (const auto& s : ds.sequences) {
    pooled.push_back(pool_all(s));
    subjects.push_back(s.subject_id);
  }
  EXPECT_GT(nearest_centroid_accuracy(embed_all(r.params, pooled), subjects), 0.9);
}

TEST(Pretrain, SingleSubjectIsRejected) {
  SynthSpec spec;
  spec.n_subjects = 1;
  spec.conditions = {Condition::NM};
  spec.views = {90};
  spec.frames = 4;
  EXPECT_THROW(pretrain(generate_dataset(spec).sequences, init_params(4, 8, 1), PretrainConfig{}), ValidationError);
}
