// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "mipg/checkpoint.hpp"
#include "mipg/synthetic.hpp"
#include "mipg/verify.hpp"
#include "oracles.hpp"
#include "poetics_cases.hpp"

using namespace mipg;

namespace {

// Tolerances and budgets.
constexpr double kGradTol = 1e-5;
constexpr double kGradStep = 1e-5;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kDecodeSteps = 1000;
constexpr double kProbTol = 1e-9;
constexpr double kMixTol = 1e-15;
constexpr std::size_t kAblationSamples = 50;
constexpr std::size_t kOverfitSamples = 10;
constexpr std::size_t kOverfitEpochs = 500;
constexpr double kOverfitLoss = 0.05;
constexpr double kOverfitSeconds = 600.0;
constexpr std::uint64_t kOverfitSeeds = 5;
constexpr std::uint64_t kRecallSeeds = 5;
constexpr std::size_t kRecallEpochs = 5;
constexpr std::size_t kRecallBatch = 8;
constexpr std::size_t kOracleInstances = 100;
constexpr double kOracleTol = 1e-10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Verdict {
  bool pass;
  std::string detail;
};

MipgModel toy_model(std::uint64_t seed, double lambda = 0.5) {
  auto c = toy_config();
  c.lambda = lambda;
  Rng rng(seed);
  return init_params(c, rng);
}

Verdict gradient_check() {
  const auto t0 = Clock::now();
  const auto model = toy_model(11);
  Rng rng(12);
  std::vector<TrainSample> batch{random_sample(model.config, rng, 2, 0), random_sample(model.config, rng, 2, 2)};
  const auto r = check_gradients(model, batch, kGradStep);
  const double t = seconds_since(t0);
  return {r.max_relative_error < kGradTol && t < kGradSeconds,
          fmt("max rel err %.2e over %zu entries (worst %s), %.1f s", r.max_relative_error, r.checked,
              r.worst_parameter.c_str(), t)};
}

Verdict distributions() {
  Rng rng(21);
  const auto r = check_distributions(toy_model(20), rng, kDecodeSteps, kProbTol);
  return {r.passed, r.detail};
}

Verdict ablations() {
  Rng rng(31);
  const auto r = check_ablations(toy_model(30), rng, kAblationSamples, kMixTol);
  return {r.passed, r.detail + " over " + std::to_string(kAblationSamples) + " samples x 3 variants"};
}

// Ten random toy samples, λ = 0, batch size 1. A positive λ bounds the
// probability of any target outside E_T by 1/(1+λ), which puts the loss
// floor above the threshold whenever targets contain non-keyword characters.
Verdict overfit() {
  bool all = true;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= kOverfitSeeds; ++seed) {
    const auto t0 = Clock::now();
    auto model = toy_model(seed, 0.0);
    Rng data(seed + 100);
    std::vector<TrainSample> ten;
    for (std::size_t i = 0; i < kOverfitSamples; ++i)
      ten.push_back(random_sample(model.config, data, 2, data.below(4)));
    TrainConfig tc;
    tc.batch_size = 1;
    tc.max_epochs = kOverfitEpochs;
    tc.validate_every = 10;
    tc.seed = seed;
    std::size_t exact = 0, epoch = 0;
    double loss = 0.0;
    train(model, ten, ten, tc, nullptr, [&](const EpochRecord& e, const MipgModel& m) {
      epoch = e.epoch;
      loss = e.valid_loss;
      exact = 0;
      for (const auto& s : ten) exact += generate_line(m, s.visual, s.keywords, s.preceding) == s.target;
      return loss < kOverfitLoss && exact == ten.size();
    });
    const double t = seconds_since(t0);
    const bool ok = loss < kOverfitLoss && exact == ten.size() && t < kOverfitSeconds;
    all = all && ok;
    detail += fmt("%sseed %llu: loss %.4f, %zu/10 exact, epoch %zu, %.0f s", detail.empty() ? "" : "; ",
                  static_cast<unsigned long long>(seed), loss, exact, epoch, t);
  }
  return {all, detail};
}

double mean_recall(const SyntheticCorpus& sc, std::span<const TrainSample> pool, double lambda, std::uint64_t seed) {
  MipgConfig c = toy_config();
  c.vocab_size = sc.spec.vocab_size;
  c.lambda = lambda;
  Rng rng(seed);
  auto model = init_params(c, rng);
  TrainConfig tc;
  tc.batch_size = kRecallBatch;
  tc.max_epochs = kRecallEpochs;
  tc.seed = seed;
  tc.threads = default_threads();
  train(model, pool, pool, tc);
  double total = 0.0;
  for (std::size_t i = 0; i < sc.corpus.images.size(); ++i) {
    const auto& im = sc.corpus.images[i];
    const auto poem = generate_poem(model, sc.features[i], image_keywords(im, sc.lexicon));
    total += keyword_recall(poem, im.concepts, sc.lexicon);
  }
  return total / static_cast<double>(sc.corpus.images.size());
}

Verdict topic_bias() {
  double biased = 0.0, plain = 0.0;
  bool shaped = true;
  for (std::uint64_t seed = 1; seed <= kRecallSeeds; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    const auto sc = make_synthetic_corpus(spec);
    const auto pool = planted_samples(sc);
    shaped = shaped && pool.size() == 200;
    for (const auto& s : pool) {
      std::size_t keyword_chars = 0;
      for (CharId ch : s.target)
        for (const auto& kw : s.keywords) keyword_chars += std::count(kw.begin(), kw.end(), ch) > 0;
      shaped = shaped && keyword_chars >= 2;
    }
    biased += mean_recall(sc, pool, 0.5, seed);
    plain += mean_recall(sc, pool, 0.0, seed);
  }
  biased /= kRecallSeeds;
  plain /= kRecallSeeds;
  return {shaped && biased >= plain,
          fmt("mean recall lambda 0.5: %.4f, lambda 0: %.4f over %llu seeds", biased, plain,
              static_cast<unsigned long long>(kRecallSeeds))};
}

oracle::Vec random_vec(std::size_t n, Rng& rng) {
  oracle::Vec v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

std::vector<oracle::Vec> random_rows(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<oracle::Vec> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_vec(d, rng));
  return out;
}

std::vector<Var> constants(Tape& tape, const std::vector<oracle::Vec>& rows) {
  std::vector<Var> out;
  for (const auto& r : rows) out.push_back(tape.constant(Tensor::vector(r)));
  return out;
}

double max_diff(std::span<const double> a, const oracle::Vec& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

Verdict oracle_equivalence() {
  Rng rng(61);
  double gru = 0.0, bigru = 0.0, att = 0.0, mem = 0.0, loss = 0.0;
  for (std::size_t k = 0; k < kOracleInstances; ++k) {
    const std::size_t in = 1 + rng.below(6), hid = 1 + rng.below(6);
    const auto cell = make_gru(in, hid, rng, 0.8);
    const auto x = random_vec(in, rng), h = random_vec(hid, rng);
    Tape tape;
    const auto got = gru_step(bind(tape, cell), tape.constant(Tensor::vector(h)), tape.constant(Tensor::vector(x)));
    gru = std::max(gru, max_diff(got.value().values(), oracle::gru_step(cell, h, x)));
  }
  for (std::size_t k = 0; k < kOracleInstances; ++k) {
    const std::size_t in = 1 + rng.below(5), hid = 1 + rng.below(4), len = 1 + rng.below(7);
    const auto fw = make_gru(in, hid, rng, 0.5), bw = make_gru(in, hid, rng, 0.5);
    const auto xs = random_rows(len, in, rng);
    Tape tape;
    const auto got = bigru_encode(bind(tape, fw), bind(tape, bw), constants(tape, xs));
    const auto want = oracle::bigru_encode(fw, bw, xs);
    for (std::size_t j = 0; j < len; ++j) bigru = std::max(bigru, max_diff(got[j].value().values(), want[j]));
  }
  for (std::size_t k = 0; k < kOracleInstances; ++k) {
    const std::size_t qd = 1 + rng.below(5), kd = 1 + rng.below(5), pd = 1 + rng.below(5), n = 1 + rng.below(6);
    const auto p = make_attention(qd, kd, pd, rng, 1.0);
    const auto q = random_vec(qd, rng);
    const auto keys = random_rows(n, kd, rng);
    Tape tape;
    const auto got = attend(bind(tape, p), tape.constant(Tensor::vector(q)), constants(tape, keys));
    const auto want = oracle::attend(p, q, keys);
    att = std::max({att, max_diff(got.weights.value().values(), want.weights),
                    max_diff(got.context.value().values(), want.context)});
  }
  for (std::size_t k = 0; k < kOracleInstances; ++k) {
    const std::size_t n = 1 + rng.below(5), dq = 1 + rng.below(6), dm = 1 + rng.below(6);
    const auto q = random_rows(n, dq, rng), m = random_rows(n, dm, rng);
    const auto s = random_vec(dq, rng);
    Tape tape;
    const auto bank = MemoryBank::from(constants(tape, q), constants(tape, m));
    const Var z = address(bank, tape.constant(Tensor::vector(s)));
    const Var d = read(bank, z);
    const auto zw = oracle::address(q, s);
    mem = std::max({mem, max_diff(z.value().values(), zw), max_diff(d.value().values(), oracle::read(m, zw))});
  }
  for (std::size_t k = 0; k < kOracleInstances; ++k) {
    const auto model = toy_model(1000 + k, rng.uniform(0.0, 1.0));
    std::vector<TrainSample> batch;
    const auto n = 1 + rng.below(4);
    for (std::size_t i = 0; i < n; ++i) batch.push_back(random_sample(model.config, rng, rng.below(4), rng.below(4)));
    loss = std::max(loss, std::abs(evaluate_batch(model, batch, false).loss - oracle::batch_loss(model, batch)));
  }
  const double worst = std::max({gru, bigru, att, mem, loss});
  return {worst <= kOracleTol, fmt("max abs diff gru %.1e, bigru %.1e, attend %.1e, address/read %.1e, loss %.1e "
                                   "(%zu instances each)",
                                   gru, bigru, att, mem, loss, kOracleInstances)};
}

Verdict truth_table() {
  std::istringstream in(poetics_cases::kLexicon);
  const auto lex = parse_poetic_lexicon(in);
  const auto cases = poetics_cases::all();
  std::size_t ok = 0;
  std::string first_bad;
  for (const auto& c : cases) {
    const auto pattern = TonalPattern::parse(c.pattern.empty() ? std::string(poetics_cases::kPattern) : c.pattern);
    const auto r = validate_form(c.poem, 4, 5, pattern, lex, c.first_line_optional);
    const bool match = r.structure_ok == c.structure_ok && r.tone_ok == c.tone_ok && r.rhyme_ok == c.rhyme_ok &&
                       r.violations == c.violations;
    ok += match;
    if (!match && first_bad.empty()) first_bad = c.name;
  }
  return {ok == cases.size() && cases.size() == 30,
          std::to_string(ok) + "/" + std::to_string(cases.size()) + " cases" +
              (first_bad.empty() ? "" : ", first mismatch: " + first_bad)};
}

Verdict determinism() {
  Rng data(81);
  std::vector<TrainSample> pool;
  for (int i = 0; i < 8; ++i) pool.push_back(random_sample(toy_config(), data, 2, data.below(3)));
  TrainConfig tc;
  tc.batch_size = 3;
  tc.max_epochs = 3;
  tc.seed = 82;
  auto run = [&](unsigned threads) {
    auto m = toy_model(83);
    tc.threads = threads;
    return train(m, pool, pool, tc).best;
  };
  const auto a = run(1), b = run(4);
  const auto bytes_a = encode_checkpoint(a), bytes_b = encode_checkpoint(b);
  const auto path = std::filesystem::temp_directory_path() / ("mipg_acceptance_" + std::to_string(::getpid()) + ".ckpt");
  save_checkpoint(a, path);
  const auto loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  bool bitwise = loaded.config == a.config;
  const auto pa = a.parameters(), pl = loaded.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i]->numel(); ++j)
      bitwise = bitwise && std::bit_cast<std::uint64_t>((*pa[i])[j]) == std::bit_cast<std::uint64_t>((*pl[i])[j]);
  bitwise = bitwise && encode_checkpoint(loaded) == bytes_a;
  bool poems = true;
  for (const auto& s : pool)
    poems = poems && generate_poem(a, s.visual, s.keywords) == generate_poem(b, s.visual, s.keywords) &&
            generate_poem(a, s.visual, s.keywords) == generate_poem(loaded, s.visual, s.keywords);
  return {bytes_a == bytes_b && bitwise && poems,
          fmt("checkpoints %s (%zu bytes), round-trip %s, poems %s", bytes_a == bytes_b ? "identical" : "differ",
              bytes_a.size(), bitwise ? "bitwise" : "inexact", poems ? "identical" : "differ")};
}

// Written out term by term from the architecture, independent of the library's count.
std::size_t closed_form_count(std::size_t v, std::size_t h, std::size_t dv) {
  const std::size_t e = h, hk = h / 2, ctx = 2 * h;
  const std::size_t encoder = 2 * 3 * (h * e + h * h + h);
  const std::size_t keyword = 2 * 3 * (hk * e + hk * hk + hk);
  const std::size_t init = h * ctx + h;
  const std::size_t dec_in = e + ctx + dv;
  const std::size_t decoder = 3 * (h * dec_in + h * h + h);
  const std::size_t text_att = h * h + h * ctx + h;
  const std::size_t vis_att = h * h + h * dv + h;
  const std::size_t head_in = h + dv + ctx;
  const std::size_t heads = 2 * (h * head_in + h + v * h + v);
  return v * e + encoder + keyword + init + decoder + text_att + vis_att + heads;
}

Verdict full_scale() {
  MipgConfig c;
  c.vocab_size = 6000;
  c.hidden_dim = c.memory_dim = 512;
  c.visual_count = 196;
  c.visual_dim = 512;
  c.lambda = 0.5;
  Rng rng(91);
  const auto model = init_params(c, rng);
  const Tensor visual = Tensor::uniform({196, 512}, rng, -1.0, 1.0);
  const std::vector<Keyword> keywords{{17, 42}, {1234}};
  Tape tape;
  Decoder dec(tape, model);
  const auto ctx = dec.prepare(visual, keywords, {});
  const auto st = dec.step(ctx, dec.initial_state(ctx), kBeginLine);
  const auto p = dec.output(ctx, st);
  const bool step_ok = p.mixed.value().numel() == 6000 && is_probability_vector(p.mixed.value().values(), kProbTol) &&
                       st.state.value().numel() == 512;
  const std::size_t expected = closed_form_count(6000, 512, 512);
  return {step_ok && model.parameter_count() == expected && parameter_count(c) == expected,
          fmt("%zu parameters (closed form %zu), decode step %s", model.parameter_count(), expected,
              step_ok ? "ok" : "malformed")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient check", gradient_check},   {"distribution invariants", distributions},
      {"ablation identities", ablations},   {"overfit memorization", overfit},
      {"topic-bias efficacy", topic_bias},  {"oracle equivalence", oracle_equivalence},
      {"poetics truth table", truth_table}, {"determinism and persistence", determinism},
      {"full-size shapes", full_scale},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v{false, ""};
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << i + 1 << " " << criteria[i].first << ": " << v.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
