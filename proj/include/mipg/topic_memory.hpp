#pragma once

#include <span>
#include <vector>

#include "mipg/layers.hpp"

namespace mipg {

/// A keyword as a sequence of character ids.
using Keyword = std::vector<CharId>;

/**
 * Per-sample keyword memory. input_memory[j] (q_j) is the addressing key
 * compared against the decoder state; output_memory[j] (m_j) is the content
 * read back. The stacked matrices hold the same vectors as rows.
 */
struct MemoryBank {
  std::vector<Var> input_memory;
  std::vector<Var> output_memory;
  Var keys;    // N × |q|
  Var values;  // N × |m|

  std::size_t size() const { return input_memory.size(); }
  bool empty() const { return input_memory.empty(); }

  static MemoryBank from(std::vector<Var> input, std::vector<Var> output) {
    if (input.size() != output.size()) throw DimensionError("memory bank: input/output memory counts differ");
    MemoryBank bank;
    bank.input_memory = std::move(input);
    bank.output_memory = std::move(output);
    if (!bank.empty()) {
      bank.keys = stack_rows(bank.input_memory);
      bank.values = stack_rows(bank.output_memory);
    }
    return bank;
  }

  /// Same slot count with every memory vector replaced by zeros (keyword ablation).
  MemoryBank zeroed() const {
    if (empty()) return *this;
    Tape& tape = input_memory.front().tape();
    std::vector<Var> in, out;
    for (const auto& q : input_memory) in.push_back(tape.constant(Tensor(q.shape())));
    for (const auto& m : output_memory) out.push_back(tape.constant(Tensor(m.shape())));
    return from(std::move(in), std::move(out));
  }
};

/**
 * q_j = [→q_{C_j} ; ←q_1] from the keyword Bi-GRU; m_j is the mean of the
 * keyword's character embeddings.
 */
inline MemoryBank encode_keywords(Var embedding, const GruVars& fw, const GruVars& bw,
                                  std::span<const Keyword> keywords) {
  std::vector<Var> in, out;
  in.reserve(keywords.size());
  out.reserve(keywords.size());
  for (const auto& kw : keywords) {
    if (kw.empty()) throw DomainError("encode_keywords: keyword with zero characters");
    std::vector<Var> chars;
    chars.reserve(kw.size());
    for (CharId c : kw) chars.push_back(embed(embedding, c));
    const auto states = bigru_states(fw, bw, chars);
    in.push_back(concat({states.forward.back(), states.backward.front()}));
    out.push_back(kw.size() == 1 ? chars.front() : mean_rows(stack_rows(chars)));
  }
  return MemoryBank::from(std::move(in), std::move(out));
}

/// z = softmax(Q s), one weight per keyword.
inline Var address(const MemoryBank& bank, Var state) {
  if (bank.empty()) throw DomainError("address: empty memory");
  return softmax(matvec(bank.keys, state));
}

/// d = Σ z_j m_j
inline Var read(const MemoryBank& bank, Var weights) {
  if (bank.empty()) throw DomainError("read: empty memory");
  if (weights.value().rank() != 1 || weights.numel() != bank.size())
    throw DimensionError("read: " + std::to_string(weights.numel()) + " weights for " + std::to_string(bank.size()) +
                         " memories");
  return tmatvec(bank.values, weights);
}

/// o = d + s
inline Var fuse(Var topic, Var state) { return add(topic, state); }

struct TopicRead {
  Var state;    // o_t
  Var weights;  // z; invalid when the bank is empty
  Var topic;    // d_t; invalid when the bank is empty
};

/// Topic-aware state. An empty bank contributes d = 0, so o = s.
inline TopicRead topic_state(const MemoryBank& bank, Var state) {
  if (bank.empty()) return {state, {}, {}};
  Var z = address(bank, state);
  Var d = read(bank, z);
  return {fuse(d, state), z, d};
}

}  // namespace mipg
