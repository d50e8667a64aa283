#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mipg/layers.hpp"
#include "mipg/topic_memory.hpp"

namespace mipg {

/// Reserved ids at the bottom of the generic vocabulary.
inline constexpr CharId kBeginPoem = 0;  // sole context token before the first line
inline constexpr CharId kBeginLine = 1;  // y_0 of every decoded line

/// Uniform initialisation support.
inline constexpr double kInitScale = 0.08;

struct MipgConfig {
  std::size_t vocab_size = 6000;   // |E_G|, including the two reserved ids
  std::size_t hidden_dim = 512;    // encoder and decoder GRU width
  std::size_t memory_dim = 512;    // |q_j| = |m_j| = embedding width; must equal hidden_dim
  double lambda = 0.5;             // topic-bias weight
  std::size_t visual_count = 196;  // B
  std::size_t visual_dim = 512;    // D_v
  std::size_t lines_per_poem = 4;  // L
  std::size_t chars_per_line = 7;  // G

  void validate() const {
    if (vocab_size < 3) throw ConfigError("vocab_size must leave room beyond the two reserved ids");
    if (hidden_dim == 0 || memory_dim == 0 || visual_count == 0 || visual_dim == 0 || lines_per_poem == 0 ||
        chars_per_line == 0)
      throw ConfigError("all dimensions must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (memory_dim != hidden_dim) throw ConfigError("memory_dim must equal hidden_dim (o_t = d_t + s_t)");
    if (hidden_dim % 2 != 0) throw ConfigError("hidden_dim must be even (keyword Bi-GRU splits it per direction)");
  }

  std::size_t embedding_dim() const { return memory_dim; }
  std::size_t context_dim() const { return 2 * hidden_dim; }
  std::size_t decoder_input_dim() const { return embedding_dim() + context_dim() + visual_dim; }
  std::size_t head_input_dim() const { return hidden_dim + visual_dim + context_dim(); }

  friend bool operator==(const MipgConfig&, const MipgConfig&) = default;
};

/// Every learned parameter of the generator.
template <class T>
struct ModelParams {
  T embedding;                  // vocab × embedding_dim
  GruParams<T> encoder_fw;      // preceding-lines Bi-GRU
  GruParams<T> encoder_bw;
  GruParams<T> keyword_fw;      // keyword Bi-GRU, hidden/2 per direction
  GruParams<T> keyword_bw;
  T init_W, init_b;             // s_0 = tanh(init_W · mean(H) + init_b)
  GruParams<T> decoder;
  AttentionParams<T> text_attention;
  AttentionParams<T> visual_attention;
  HeadParams<T> generic_head;   // g_G
  HeadParams<T> topic_head;     // g_T

  template <class Self, class F>
  static void each(Self& self, F&& f) {
    auto nested = [&f](const std::string& prefix) {
      return [&f, prefix](const char* name, auto& t) { f((prefix + "." + name).c_str(), t); };
    };
    f("embedding", self.embedding);
    GruParams<T>::each(self.encoder_fw, nested("encoder.forward"));
    GruParams<T>::each(self.encoder_bw, nested("encoder.backward"));
    GruParams<T>::each(self.keyword_fw, nested("keyword.forward"));
    GruParams<T>::each(self.keyword_bw, nested("keyword.backward"));
    f("init.W", self.init_W);
    f("init.b", self.init_b);
    GruParams<T>::each(self.decoder, nested("decoder"));
    AttentionParams<T>::each(self.text_attention, nested("attention.text"));
    AttentionParams<T>::each(self.visual_attention, nested("attention.visual"));
    HeadParams<T>::each(self.generic_head, nested("head.generic"));
    HeadParams<T>::each(self.topic_head, nested("head.topic"));
  }
};

using ModelVars = ModelParams<Var>;

struct MipgModel {
  MipgConfig config;
  ModelParams<Tensor> params;

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    ModelParams<Tensor>::each(params, [&](const char*, Tensor& t) { out.push_back(&t); });
    return out;
  }

  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    ModelParams<Tensor>::each(params, [&](const char*, const Tensor& t) { out.push_back(&t); });
    return out;
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    ModelParams<Tensor>::each(params, [&](const char* name, const Tensor&) { out.emplace_back(name); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Tensor* t : parameters()) n += t->numel();
    return n;
  }
};

/// Closed-form parameter count for a configuration.
inline std::size_t parameter_count(const MipgConfig& c) {
  const std::size_t h = c.hidden_dim, e = c.embedding_dim(), v = c.vocab_size, dv = c.visual_dim;
  const auto gru = [](std::size_t in, std::size_t hid) { return 3 * (hid * in + hid * hid + hid); };
  const std::size_t head_in = c.head_input_dim();
  return v * e                                    // embedding
         + 2 * gru(e, h)                          // encoder
         + 2 * gru(e, h / 2)                      // keyword encoder
         + h * 2 * h + h                          // initial state map
         + gru(c.decoder_input_dim(), h)          // decoder
         + (h + h * h + h * 2 * h)                // text attention
         + (h + h * h + h * dv)                   // visual attention
         + 2 * (h * head_in + h + v * h + v);     // two output heads
}

/// Every learned value drawn uniformly from [-0.08, 0.08].
inline MipgModel init_params(const MipgConfig& config, Rng& rng) {
  config.validate();
  const std::size_t h = config.hidden_dim, e = config.embedding_dim(), v = config.vocab_size;
  const double s = kInitScale;
  MipgModel m;
  m.config = config;
  auto& p = m.params;
  p.embedding = Tensor::uniform({v, e}, rng, -s, s);
  p.encoder_fw = make_gru(e, h, rng, s);
  p.encoder_bw = make_gru(e, h, rng, s);
  p.keyword_fw = make_gru(e, h / 2, rng, s);
  p.keyword_bw = make_gru(e, h / 2, rng, s);
  p.init_W = Tensor::uniform({h, 2 * h}, rng, -s, s);
  p.init_b = Tensor::uniform({h}, rng, -s, s);
  p.decoder = make_gru(config.decoder_input_dim(), h, rng, s);
  p.text_attention = make_attention(h, config.context_dim(), h, rng, s);
  p.visual_attention = make_attention(h, config.visual_dim, h, rng, s);
  p.generic_head = make_head(config.head_input_dim(), h, v, rng, s);
  p.topic_head = make_head(config.head_input_dim(), h, v, rng, s);
  return m;
}

/// Model-variant switches: the w/o-keywords and w/o-visual ablations.
struct Ablation {
  bool zero_keywords = false;  // q_j = m_j = 0
  bool zero_visual = false;    // V = 0
};

/// Per-line decoding inputs, recorded on a tape.
struct GenerationContext {
  Var visual;          // V, B × D_v
  Var visual_proj;     // U_b v_n rows
  Var context;         // H, C × 2·hidden
  Var context_proj;    // U_a h_n rows
  MemoryBank bank;
  std::vector<std::size_t> topic_vocab;  // E_T, sorted ids
};

struct DecodeStep {
  Var state;           // s_t
  Var topic_state;     // o_t
  Var text_context;    // ĥ_t
  Var visual_context;  // v̂_t
  Var text_weights;    // α_t
  Var visual_weights;  // β_t
  Var memory_weights;  // z_t; invalid for an empty bank
};

struct OutputDistribution {
  Var generic;  // p_G over E_G
  Var topic;    // p_T, zero outside E_T; invalid when E_T is empty
  Var mixed;    // (λ p_T + p_G) / (1 + λ)
};

inline std::size_t argmax(std::span<const double> p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline std::vector<CharId> reversed(std::span<const CharId> line) { return {line.rbegin(), line.rend()}; }

/**
 * Binds a model's parameters onto a tape and builds the encoder/decoder
 * graph. Every operation here is differentiable through the tape; after
 * tape.backward(loss), gradients() returns the parameter adjoints.
 */
class Decoder {
 public:
  Decoder(Tape& tape, const MipgModel& model) : tape_(tape), model_(model) {
    std::vector<Var*> slots;
    ModelVars::each(vars_, [&](const char*, Var& v) { slots.push_back(&v); });
    std::size_t i = 0;
    ModelParams<Tensor>::each(model.params, [&](const char*, const Tensor& t) { *slots[i++] = tape.leaf(t); });
  }

  Tape& tape() const { return tape_; }
  const MipgModel& model() const { return model_; }
  const MipgConfig& config() const { return model_.config; }
  const ModelVars& vars() const { return vars_; }

  Var embed_char(CharId id) const { return embed(vars_.embedding, id); }

  /// H for the preceding lines; the begin-of-poem marker stands in for an empty context.
  Var encode_context(std::span<const CharId> preceding) const {
    std::vector<Var> xs;
    if (preceding.empty()) {
      xs.push_back(embed_char(kBeginPoem));
    } else {
      xs.reserve(preceding.size());
      for (CharId c : preceding) xs.push_back(embed_char(c));
    }
    return stack_rows(bigru_encode(vars_.encoder_fw, vars_.encoder_bw, xs));
  }

  MemoryBank encode_keywords(std::span<const Keyword> keywords) const {
    return mipg::encode_keywords(vars_.embedding, vars_.keyword_fw, vars_.keyword_bw, keywords);
  }

  /// V must be B × D_v (a shared reference; it has to outlive the tape).
  GenerationContext prepare(const Tensor& visual, std::span<const Keyword> keywords, std::span<const CharId> preceding,
                            Ablation ablation = {}) const {
    const auto& c = config();
    if (visual.rank() != 2 || visual.shape()[0] != c.visual_count || visual.shape()[1] != c.visual_dim)
      throw DimensionError("visual features " + shape_string(visual.shape()) + " do not match configured " +
                           shape_string({c.visual_count, c.visual_dim}));
    GenerationContext ctx;
    ctx.visual = ablation.zero_visual ? tape_.constant(Tensor(visual.shape())) : tape_.input(visual);
    ctx.visual_proj = project_keys(vars_.visual_attention, ctx.visual);
    ctx.context = encode_context(preceding);
    ctx.context_proj = project_keys(vars_.text_attention, ctx.context);
    ctx.bank = encode_keywords(keywords);
    if (ablation.zero_keywords) ctx.bank = ctx.bank.zeroed();
    ctx.topic_vocab = topic_vocabulary(keywords, c.vocab_size);
    return ctx;
  }

  /// E_T: every distinct character of K, sorted.
  static std::vector<std::size_t> topic_vocabulary(std::span<const Keyword> keywords, std::size_t vocab_size) {
    std::vector<std::size_t> ids;
    for (const auto& kw : keywords)
      for (CharId ch : kw) {
        if (ch < 0 || static_cast<std::size_t>(ch) >= vocab_size)
          throw VocabularyError("keyword character " + std::to_string(ch) + " outside vocabulary");
        ids.push_back(static_cast<std::size_t>(ch));
      }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  }

  Var initial_state(const GenerationContext& ctx) const {
    return tanh(add(matvec(vars_.init_W, mean_rows(ctx.context)), vars_.init_b));
  }

  /// Attention reads use s_{t-1}; the memory is addressed with the updated s_t.
  DecodeStep step(const GenerationContext& ctx, Var state_prev, CharId y_prev) const {
    if (state_prev.numel() != config().hidden_dim)
      throw DimensionError("decode step: state width " + std::to_string(state_prev.numel()) + " vs hidden " +
                           std::to_string(config().hidden_dim));
    DecodeStep out;
    const auto text = attend(vars_.text_attention, state_prev, ctx.context, ctx.context_proj);
    const auto vis = attend(vars_.visual_attention, state_prev, ctx.visual, ctx.visual_proj);
    out.text_context = text.context;
    out.text_weights = text.weights;
    out.visual_context = vis.context;
    out.visual_weights = vis.weights;
    Var input = concat({embed_char(y_prev), text.context, vis.context});
    out.state = gru_step(vars_.decoder, state_prev, input);
    const auto topic = topic_state(ctx.bank, out.state);
    out.topic_state = topic.state;
    out.memory_weights = topic.weights;
    return out;
  }

  OutputDistribution output(const GenerationContext& ctx, const DecodeStep& s) const {
    Var features = concat({s.topic_state, s.visual_context, s.text_context});
    OutputDistribution out;
    out.generic = softmax(head_logits(vars_.generic_head, features));
    out.mixed = out.generic;
    if (ctx.topic_vocab.empty()) return out;
    out.topic = masked_softmax(head_logits(vars_.topic_head, features), ctx.topic_vocab);
    const double lambda = config().lambda;
    if (lambda > 0.0) out.mixed = scale(add(scale(out.topic, lambda), out.generic), 1.0 / (1.0 + lambda));
    return out;
  }

  /// Σ_t −log p(y_t) with teacher forcing over the inverted target line.
  Var line_nll(const GenerationContext& ctx, std::span<const CharId> target) const {
    if (target.empty()) throw DomainError("line_nll: empty target");
    const auto inverted = reversed(target);
    Var s = initial_state(ctx);
    CharId prev = kBeginLine;
    std::vector<Var> terms;
    terms.reserve(inverted.size());
    for (CharId y : inverted) {
      if (y < 0 || static_cast<std::size_t>(y) >= config().vocab_size)
        throw VocabularyError("target character " + std::to_string(y) + " outside vocabulary");
      const auto st = step(ctx, s, prev);
      const auto p = output(ctx, st);
      terms.push_back(pick(p.mixed, static_cast<std::size_t>(y)));
      s = st.state;
      prev = y;
    }
    return scale(sum(log(concat(terms))), -1.0);
  }

  /// Greedy decode of G characters in emission (inverted) order.
  std::vector<CharId> emit_line(const GenerationContext& ctx) const {
    std::vector<CharId> out;
    Var s = initial_state(ctx);
    CharId prev = kBeginLine;
    for (std::size_t t = 0; t < config().chars_per_line; ++t) {
      const auto st = step(ctx, s, prev);
      const auto p = output(ctx, st);
      prev = static_cast<CharId>(argmax(p.mixed.value().values()));
      out.push_back(prev);
      s = st.state;
    }
    return out;
  }

  /// Parameter adjoints in declaration order, after tape().backward(loss).
  std::vector<std::vector<double>> gradients() const {
    std::vector<std::vector<double>> out;
    ModelVars::each(vars_, [&](const char*, const Var& v) {
      const auto g = v.grad();
      if (g.empty())
        out.emplace_back(v.numel(), 0.0);
      else
        out.emplace_back(g.begin(), g.end());
    });
    return out;
  }

 private:
  Tape& tape_;
  const MipgModel& model_;
  ModelVars vars_;
};

/// One line in natural reading order, given the preceding lines.
inline std::vector<CharId> generate_line(const MipgModel& model, const Tensor& visual, std::span<const Keyword> keywords,
                                         std::span<const CharId> preceding, Ablation ablation = {}) {
  Tape tape;
  Decoder dec(tape, model);
  const auto ctx = dec.prepare(visual, keywords, preceding, ablation);
  return reversed(dec.emit_line(ctx));
}

/// L lines; H is re-encoded from all previously generated lines before each one.
inline std::vector<std::vector<CharId>> generate_poem(const MipgModel& model, const Tensor& visual,
                                                     std::span<const Keyword> keywords, Ablation ablation = {}) {
  std::vector<std::vector<CharId>> poem;
  std::vector<CharId> preceding;
  for (std::size_t i = 0; i < model.config.lines_per_poem; ++i) {
    auto line = generate_line(model, visual, keywords, preceding, ablation);
    preceding.insert(preceding.end(), line.begin(), line.end());
    poem.push_back(std::move(line));
  }
  return poem;
}

}  // namespace mipg
