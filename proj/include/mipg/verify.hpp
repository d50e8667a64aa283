#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mipg/training.hpp"

namespace mipg {

/// Toy dimensions used by the self-checks: hidden 8, vocab 20, B 4, D_v 6, G 5.
inline MipgConfig toy_config() {
  MipgConfig c;
  c.vocab_size = 20;
  c.hidden_dim = 8;
  c.memory_dim = 8;
  c.visual_count = 4;
  c.visual_dim = 6;
  c.lines_per_poem = 4;
  c.chars_per_line = 5;
  return c;
}

inline CharId random_char(const MipgConfig& c, Rng& rng) {
  return static_cast<CharId>(2 + rng.below(c.vocab_size - 2));
}

/// Random sample: features in [-1,1], `keywords` keywords of 1–3 chars, `lines_before` preceding lines.
inline TrainSample random_sample(const MipgConfig& c, Rng& rng, std::size_t keywords, std::size_t lines_before) {
  TrainSample s;
  s.image_id = "random";
  s.visual = Tensor::uniform({c.visual_count, c.visual_dim}, rng, -1.0, 1.0);
  for (std::size_t k = 0; k < keywords; ++k) {
    Keyword kw(1 + rng.below(3));
    for (auto& ch : kw) ch = random_char(c, rng);
    s.keywords.push_back(std::move(kw));
  }
  for (std::size_t i = 0; i < lines_before * c.chars_per_line; ++i) s.preceding.push_back(random_char(c, rng));
  for (std::size_t i = 0; i < c.chars_per_line; ++i) s.target.push_back(random_char(c, rng));
  return s;
}

inline bool is_probability_vector(std::span<const double> p, double tol) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) return false;
    total += v;
  }
  return std::abs(total - 1.0) <= tol;
}

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

/**
 * Randomized decode steps: both attention streams, memory addressing and the
 * mixed output must be probability vectors, and p_T must vanish off E_T.
 */
inline CheckOutcome check_distributions(const MipgModel& model, Rng& rng, std::size_t steps, double tol = 1e-9) {
  std::size_t done = 0, failures = 0;
  while (done < steps) {
    const auto s = random_sample(model.config, rng, 1 + rng.below(4), rng.below(4));
    Tape tape;
    Decoder dec(tape, model);
    const auto ctx = dec.prepare(s.visual, s.keywords, s.preceding);
    Var state = dec.initial_state(ctx);
    CharId prev = kBeginLine;
    for (std::size_t t = 0; t < model.config.chars_per_line && done < steps; ++t, ++done) {
      const auto st = dec.step(ctx, state, prev);
      const auto p = dec.output(ctx, st);
      bool ok = is_probability_vector(st.text_weights.value().values(), tol) &&
                is_probability_vector(st.visual_weights.value().values(), tol) &&
                is_probability_vector(st.memory_weights.value().values(), tol) &&
                is_probability_vector(p.mixed.value().values(), tol) &&
                is_probability_vector(p.generic.value().values(), tol);
      const auto pt = p.topic.value().values();
      for (std::size_t w = 0; w < pt.size(); ++w)
        if (!std::binary_search(ctx.topic_vocab.begin(), ctx.topic_vocab.end(), w) && pt[w] != 0.0) ok = false;
      if (!ok) ++failures;
      state = st.state;
      prev = random_char(model.config, rng);
    }
  }
  return {"distribution invariants", failures == 0,
          std::to_string(steps - failures) + "/" + std::to_string(steps) + " steps valid"};
}

/// Zeroed memory ⇒ o_t = s_t; zeroed V ⇒ v̂_t = 0; λ = 0 ⇒ p = p_G.
inline CheckOutcome check_ablations(MipgModel model, Rng& rng, std::size_t samples, double mix_tol = 1e-15) {
  std::size_t bad = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const auto s = random_sample(model.config, rng, 2, rng.below(4));
    for (int variant = 0; variant < 3; ++variant) {
      MipgModel m = model;
      Ablation ab;
      if (variant == 0) ab.zero_keywords = true;
      if (variant == 1) ab.zero_visual = true;
      if (variant == 2) m.config.lambda = 0.0;
      Tape tape;
      Decoder dec(tape, m);
      const auto ctx = dec.prepare(s.visual, s.keywords, s.preceding, ab);
      Var state = dec.initial_state(ctx);
      CharId prev = kBeginLine;
      for (std::size_t t = 0; t < m.config.chars_per_line; ++t) {
        const auto st = dec.step(ctx, state, prev);
        if (variant == 0 && st.topic_state.value() != st.state.value()) ++bad;
        if (variant == 1)
          for (double v : st.visual_context.value().values())
            if (v != 0.0) ++bad;
        if (variant == 2) {
          const auto p = dec.output(ctx, st);
          const auto a = p.mixed.value().values(), g = p.generic.value().values();
          for (std::size_t w = 0; w < a.size(); ++w)
            if (std::abs(a[w] - g[w]) > mix_tol) ++bad;
        }
        state = st.state;
        prev = s.target[t];
      }
    }
  }
  return {"ablation identities", bad == 0, std::to_string(bad) + " mismatches"};
}

}  // namespace mipg
