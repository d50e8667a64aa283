#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mipg/autodiff.hpp"
#include "mipg/rng.hpp"

namespace mipg {

using CharId = std::int32_t;

/**
 * Gated recurrent unit with the update convention
 *   z  = σ(Wz x + Uz h + bz)
 *   r  = σ(Wr x + Ur h + br)
 *   h̃  = tanh(Wn x + Un (r ⊙ h) + bn)
 *   h' = (1 − z) ⊙ h + z ⊙ h̃
 * Instantiated over Tensor (stored parameters) and Var (parameters bound to a tape).
 */
template <class T>
struct GruParams {
  T Wz, Wr, Wn;  // hidden × input
  T Uz, Ur, Un;  // hidden × hidden
  T bz, br, bn;  // hidden

  template <class Self, class F>
  static void each(Self& self, F&& f) {
    f("Wz", self.Wz), f("Wr", self.Wr), f("Wn", self.Wn);
    f("Uz", self.Uz), f("Ur", self.Ur), f("Un", self.Un);
    f("bz", self.bz), f("br", self.br), f("bn", self.bn);
  }
};

/// Additive attention: score_n = uᵀ tanh(W q + U k_n).
template <class T>
struct AttentionParams {
  T u;  // proj
  T W;  // proj × query
  T U;  // proj × key

  template <class Self, class F>
  static void each(Self& self, F&& f) {
    f("u", self.u), f("W", self.W), f("U", self.U);
  }
};

/// One tanh hidden layer followed by a linear map to logits.
template <class T>
struct HeadParams {
  T W1, b1;  // hidden × input, hidden
  T W2, b2;  // out × hidden, out

  template <class Self, class F>
  static void each(Self& self, F&& f) {
    f("W1", self.W1), f("b1", self.b1), f("W2", self.W2), f("b2", self.b2);
  }
};

using GruCell = GruParams<Tensor>;
using GruVars = GruParams<Var>;
using Attention = AttentionParams<Tensor>;
using AttentionVars = AttentionParams<Var>;
using OutputHead = HeadParams<Tensor>;
using HeadVars = HeadParams<Var>;

/// Binds every tensor of a parameter block as a tracked leaf on `tape`.
template <template <class> class P>
P<Var> bind(Tape& tape, const P<Tensor>& params) {
  P<Var> out;
  std::vector<Var*> slots;
  P<Var>::each(out, [&](const char*, Var& v) { slots.push_back(&v); });
  std::size_t i = 0;
  P<Tensor>::each(params, [&](const char*, const Tensor& t) { *slots[i++] = tape.leaf(t); });
  return out;
}

inline GruCell make_gru(std::size_t input_dim, std::size_t hidden_dim, Rng& rng, double scale) {
  auto w = [&](std::size_t r, std::size_t c) { return Tensor::uniform({r, c}, rng, -scale, scale); };
  auto b = [&](std::size_t n) { return Tensor::uniform({n}, rng, -scale, scale); };
  GruCell cell;
  cell.Wz = w(hidden_dim, input_dim);
  cell.Wr = w(hidden_dim, input_dim);
  cell.Wn = w(hidden_dim, input_dim);
  cell.Uz = w(hidden_dim, hidden_dim);
  cell.Ur = w(hidden_dim, hidden_dim);
  cell.Un = w(hidden_dim, hidden_dim);
  cell.bz = b(hidden_dim);
  cell.br = b(hidden_dim);
  cell.bn = b(hidden_dim);
  return cell;
}

inline Attention make_attention(std::size_t query_dim, std::size_t key_dim, std::size_t proj_dim, Rng& rng,
                                double scale) {
  Attention a;
  a.u = Tensor::uniform({proj_dim}, rng, -scale, scale);
  a.W = Tensor::uniform({proj_dim, query_dim}, rng, -scale, scale);
  a.U = Tensor::uniform({proj_dim, key_dim}, rng, -scale, scale);
  return a;
}

inline OutputHead make_head(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim, Rng& rng,
                            double scale) {
  OutputHead h;
  h.W1 = Tensor::uniform({hidden_dim, input_dim}, rng, -scale, scale);
  h.b1 = Tensor::uniform({hidden_dim}, rng, -scale, scale);
  h.W2 = Tensor::uniform({output_dim, hidden_dim}, rng, -scale, scale);
  h.b2 = Tensor::uniform({output_dim}, rng, -scale, scale);
  return h;
}

inline std::size_t gru_hidden_dim(const GruVars& cell) { return cell.Uz.shape()[0]; }
inline std::size_t gru_input_dim(const GruVars& cell) { return cell.Wz.shape()[1]; }

inline Var gru_step(const GruVars& cell, Var h_prev, Var x) {
  if (h_prev.value().rank() != 1 || h_prev.numel() != gru_hidden_dim(cell))
    throw DimensionError("gru_step: state " + shape_string(h_prev.shape()) + " vs hidden " +
                         std::to_string(gru_hidden_dim(cell)));
  if (x.value().rank() != 1 || x.numel() != gru_input_dim(cell))
    throw DimensionError("gru_step: input " + shape_string(x.shape()) + " vs input dim " +
                         std::to_string(gru_input_dim(cell)));
  Var z = sigmoid(add(add(matvec(cell.Wz, x), matvec(cell.Uz, h_prev)), cell.bz));
  Var r = sigmoid(add(add(matvec(cell.Wr, x), matvec(cell.Ur, h_prev)), cell.br));
  Var n = tanh(add(add(matvec(cell.Wn, x), matvec(cell.Un, mul(r, h_prev))), cell.bn));
  // (1 − z) ⊙ h + z ⊙ h̃
  return add(mul(affine(z, -1.0, 1.0), h_prev), mul(z, n));
}

struct BiGruStates {
  std::vector<Var> forward;   // forward[j] has consumed x_0..x_j
  std::vector<Var> backward;  // backward[j] has consumed x_{C-1}..x_j
};

/// Both directions of a Bi-GRU, each started from the zero state.
inline BiGruStates bigru_states(const GruVars& fw, const GruVars& bw, std::span<const Var> xs) {
  if (xs.empty()) throw DomainError("bigru: empty input sequence");
  Tape& tape = xs.front().tape();
  BiGruStates out;
  out.forward.reserve(xs.size());
  out.backward.resize(xs.size());
  Var h = tape.constant(Tensor({gru_hidden_dim(fw)}));
  for (const Var& x : xs) out.forward.push_back(h = gru_step(fw, h, x));
  h = tape.constant(Tensor({gru_hidden_dim(bw)}));
  for (std::size_t j = xs.size(); j-- > 0;) out.backward[j] = h = gru_step(bw, h, xs[j]);
  return out;
}

/// h_j = [→h_j ; ←h_j] for every position.
inline std::vector<Var> bigru_encode(const GruVars& fw, const GruVars& bw, std::span<const Var> xs) {
  const auto states = bigru_states(fw, bw, xs);
  std::vector<Var> out;
  out.reserve(xs.size());
  for (std::size_t j = 0; j < xs.size(); ++j) out.push_back(concat({states.forward[j], states.backward[j]}));
  return out;
}

struct Attended {
  Var context;  // Σ α_n k_n
  Var weights;  // α, a probability vector over keys
};

/// U k_n for every key row; independent of the query, so it can be computed once per line.
inline Var project_keys(const AttentionVars& att, Var keys) {
  if (keys.value().rank() != 2) throw DimensionError("attend: keys must be a matrix, got " + shape_string(keys.shape()));
  return matmul_t(keys, att.U);
}

inline Attended attend(const AttentionVars& att, Var query, Var keys, Var projected_keys) {
  if (keys.value().rank() != 2 || keys.shape()[0] == 0) throw DomainError("attend: no keys");
  Var scores = matvec(tanh(add_rowwise(projected_keys, matvec(att.W, query))), att.u);
  Var weights = softmax(scores);
  return {tmatvec(keys, weights), weights};
}

/// Additive attention of `query` over the rows of `keys` (n × key_dim).
inline Attended attend(const AttentionVars& att, Var query, Var keys) {
  return attend(att, query, keys, project_keys(att, keys));
}

inline Attended attend(const AttentionVars& att, Var query, const std::vector<Var>& keys) {
  if (keys.empty()) throw DomainError("attend: no keys");
  return attend(att, query, stack_rows(keys));
}

inline Var embed(Var table, CharId id) {
  const std::size_t vocab = table.shape()[0];
  if (id < 0 || static_cast<std::size_t>(id) >= vocab)
    throw VocabularyError("character id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
  return row(table, static_cast<std::size_t>(id));
}

inline Var head_logits(const HeadVars& head, Var input) {
  return add(matvec(head.W2, tanh(add(matvec(head.W1, input), head.b1))), head.b2);
}

}  // namespace mipg
