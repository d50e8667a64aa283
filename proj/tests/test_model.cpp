#include <gtest/gtest.h>

#include "mipg/verify.hpp"
#include "oracles.hpp"

using namespace mipg;

namespace {

MipgModel toy_model(std::uint64_t seed, double lambda = 0.5) {
  auto cfg = toy_config();
  cfg.lambda = lambda;
  Rng rng(seed);
  return init_params(cfg, rng);
}

}  // namespace

TEST(Config, DefaultsAreThePublishedSizes) {
  const MipgConfig c;
  EXPECT_EQ(c.vocab_size, 6000u);
  EXPECT_EQ(c.hidden_dim, 512u);
  EXPECT_EQ(c.memory_dim, 512u);
  EXPECT_EQ(c.lambda, 0.5);
  EXPECT_EQ(c.visual_count, 196u);
  EXPECT_EQ(c.visual_dim, 512u);
  EXPECT_EQ(c.lines_per_poem, 4u);
  EXPECT_EQ(c.chars_per_line, 7u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, RejectsInconsistentSettings) {
  auto bad = toy_config();
  bad.memory_dim = 6;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = toy_config();
  bad.lambda = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = toy_config();
  bad.hidden_dim = bad.memory_dim = 7;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = toy_config();
  bad.vocab_size = 2;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = toy_config();
  bad.chars_per_line = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Params, CountMatchesClosedFormAcrossConfigs) {
  Rng pick(1);
  for (int trial = 0; trial < 20; ++trial) {
    MipgConfig c;
    c.vocab_size = 3 + pick.below(30);
    c.hidden_dim = c.memory_dim = 2 * (1 + pick.below(6));
    c.visual_count = 1 + pick.below(5);
    c.visual_dim = 1 + pick.below(7);
    c.chars_per_line = 1 + pick.below(7);
    Rng rng(trial);
    const auto m = init_params(c, rng);
    EXPECT_EQ(m.parameter_count(), parameter_count(c));
  }
}

TEST(Params, NamesAreUniqueAndAlignedWithTensors) {
  const auto m = toy_model(1);
  auto names = m.parameter_names();
  EXPECT_EQ(names.size(), m.parameters().size());
  std::sort(names.begin(), names.end());
  EXPECT_EQ(std::adjacent_find(names.begin(), names.end()), names.end());
}

TEST(Params, InitialisationIsSeededAndBounded) {
  const auto a = toy_model(9), b = toy_model(9), c = toy_model(10);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(*pa[i], *pb[i]);
    differs |= !(*pa[i] == *pc[i]);
    for (double v : pa[i]->values()) ASSERT_LE(std::abs(v), kInitScale);
  }
  EXPECT_TRUE(differs);
}

TEST(Decoder, LineLossMatchesScalarOracle) {
  Rng rng(2);
  for (double lambda : {0.0, 0.5, 1.0}) {
    const auto m = toy_model(3, lambda);
    for (int trial = 0; trial < 20; ++trial) {
      const auto s = random_sample(m.config, rng, rng.below(4), rng.below(4));
      Tape tape;
      Decoder dec(tape, m);
      const double got = dec.line_nll(dec.prepare(s.visual, s.keywords, s.preceding), s.target).value()[0];
      EXPECT_NEAR(got, oracle::sample_nll(m, s), 1e-10) << "lambda " << lambda;
    }
  }
}

TEST(Decoder, InitialStateUsesMeanOfContext) {
  const auto m = toy_model(4);
  Rng rng(5);
  const auto s = random_sample(m.config, rng, 1, 2);
  Tape tape;
  Decoder dec(tape, m);
  const auto ctx = dec.prepare(s.visual, s.keywords, s.preceding);
  const auto got = dec.initial_state(ctx).value();
  std::vector<oracle::Vec> xs;
  for (CharId c : s.preceding) xs.push_back(oracle::embedding(m, c));
  const auto H = oracle::bigru_encode(m.params.encoder_fw, m.params.encoder_bw, xs);
  oracle::Vec mean(H[0].size(), 0.0);
  for (const auto& h : H)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += h[i] / static_cast<double>(H.size());
  const auto pre = oracle::matvec(m.params.init_W, mean);
  for (std::size_t i = 0; i < pre.size(); ++i) EXPECT_NEAR(got[i], std::tanh(pre[i] + m.params.init_b[i]), 1e-12);
}

TEST(Decoder, FirstLineReadsTheBeginOfPoemMarker) {
  const auto m = toy_model(6);
  Tape tape;
  Decoder dec(tape, m);
  const auto H = dec.encode_context({}).value();
  EXPECT_EQ(H.shape(), (Shape{1, 2 * m.config.hidden_dim}));
  const auto want = oracle::bigru_encode(m.params.encoder_fw, m.params.encoder_bw, {oracle::embedding(m, kBeginPoem)});
  for (std::size_t i = 0; i < want[0].size(); ++i) EXPECT_NEAR(H.at(0, i), want[0][i], 1e-12);
}

TEST(Decoder, MixtureIsGenericWithoutTopicVocabulary) {
  const auto m = toy_model(7);
  Rng rng(8);
  const auto s = random_sample(m.config, rng, 0, 1);
  Tape tape;
  Decoder dec(tape, m);
  const auto ctx = dec.prepare(s.visual, s.keywords, s.preceding);
  const auto st = dec.step(ctx, dec.initial_state(ctx), kBeginLine);
  const auto p = dec.output(ctx, st);
  EXPECT_EQ(p.mixed.id(), p.generic.id());
  EXPECT_FALSE(p.topic.valid());
  EXPECT_EQ(st.topic_state.id(), st.state.id());
}

TEST(Decoder, MixtureFormula) {
  const auto m = toy_model(9, 0.5);
  Rng rng(10);
  const auto s = random_sample(m.config, rng, 3, 1);
  Tape tape;
  Decoder dec(tape, m);
  const auto ctx = dec.prepare(s.visual, s.keywords, s.preceding);
  const auto p = dec.output(ctx, dec.step(ctx, dec.initial_state(ctx), kBeginLine));
  for (std::size_t w = 0; w < m.config.vocab_size; ++w)
    EXPECT_NEAR(p.mixed.value()[w], (0.5 * p.topic.value()[w] + p.generic.value()[w]) / 1.5, 1e-15);
}

TEST(Decoder, TopicVocabularyIsSortedDistinctAndChecked) {
  const std::vector<Keyword> kws{{7, 3}, {3}, {12, 7}};
  EXPECT_EQ(Decoder::topic_vocabulary(kws, 20), (std::vector<std::size_t>{3, 7, 12}));
  EXPECT_THROW(Decoder::topic_vocabulary(kws, 10), VocabularyError);
}

TEST(Decoder, VisualShapeIsChecked) {
  const auto m = toy_model(11);
  Tape tape;
  Decoder dec(tape, m);
  const Tensor wrong({m.config.visual_count + 1, m.config.visual_dim});
  EXPECT_THROW(dec.prepare(wrong, {}, {}), DimensionError);
}

TEST(Decoder, OutOfVocabularyTargetIsRejected) {
  const auto m = toy_model(12);
  Rng rng(13);
  auto s = random_sample(m.config, rng, 1, 0);
  s.target[0] = static_cast<CharId>(m.config.vocab_size);
  Tape tape;
  Decoder dec(tape, m);
  EXPECT_THROW(dec.line_nll(dec.prepare(s.visual, s.keywords, s.preceding), s.target), VocabularyError);
}

TEST(Decoder, ZeroVisualAblationGivesZeroVisualContext) {
  const auto m = toy_model(14);
  Rng rng(15);
  const auto s = random_sample(m.config, rng, 2, 1);
  Tape tape;
  Decoder dec(tape, m);
  Ablation ab;
  ab.zero_visual = true;
  const auto ctx = dec.prepare(s.visual, s.keywords, s.preceding, ab);
  const auto st = dec.step(ctx, dec.initial_state(ctx), kBeginLine);
  for (double v : st.visual_context.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Generation, LineIsEmittedInvertedAndReturnedInReadingOrder) {
  const auto m = toy_model(16);
  Rng rng(17);
  const auto s = random_sample(m.config, rng, 2, 1);
  Tape tape;
  Decoder dec(tape, m);
  const auto emitted = dec.emit_line(dec.prepare(s.visual, s.keywords, s.preceding));
  const auto line = generate_line(m, s.visual, s.keywords, s.preceding);
  ASSERT_EQ(line.size(), m.config.chars_per_line);
  EXPECT_EQ(line, reversed(emitted));
}

TEST(Generation, GreedyStepPicksTheArgmax) {
  const auto m = toy_model(18);
  Rng rng(19);
  const auto s = random_sample(m.config, rng, 2, 0);
  Tape tape;
  Decoder dec(tape, m);
  const auto ctx = dec.prepare(s.visual, s.keywords, s.preceding);
  const auto p = dec.output(ctx, dec.step(ctx, dec.initial_state(ctx), kBeginLine)).mixed.value();
  const auto emitted = dec.emit_line(ctx);
  for (std::size_t w = 0; w < p.numel(); ++w) EXPECT_LE(p[w], p[static_cast<std::size_t>(emitted[0])]);
}

TEST(Generation, PoemHasConfiguredShapeAndIsDeterministic) {
  const auto m = toy_model(20);
  Rng rng(21);
  const auto s = random_sample(m.config, rng, 2, 0);
  const auto a = generate_poem(m, s.visual, s.keywords);
  const auto b = generate_poem(m, s.visual, s.keywords);
  ASSERT_EQ(a.size(), m.config.lines_per_poem);
  for (const auto& line : a) EXPECT_EQ(line.size(), m.config.chars_per_line);
  EXPECT_EQ(a, b);
}

TEST(Generation, LaterLinesConditionOnEarlierOnes) {
  const auto m = toy_model(22);
  Rng rng(23);
  const auto s = random_sample(m.config, rng, 2, 0);
  const auto poem = generate_poem(m, s.visual, s.keywords);
  const auto second = generate_line(m, s.visual, s.keywords, poem[0]);
  EXPECT_EQ(second, poem[1]);
}

TEST(Invariants, DistributionsOnRandomSteps) {
  const auto m = toy_model(24);
  Rng rng(25);
  const auto r = check_distributions(m, rng, 200);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Invariants, Ablations) {
  const auto m = toy_model(26);
  Rng rng(27);
  const auto r = check_ablations(m, rng, 10);
  EXPECT_TRUE(r.passed) << r.detail;
}
