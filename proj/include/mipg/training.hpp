#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mipg/gradcheck.hpp"
#include "mipg/model.hpp"

namespace mipg {

/// One supervised instance: image features, keywords, preceding lines, next line.
struct TrainSample {
  std::string image_id;      // provenance only
  std::string feature_path;  // provenance only
  Tensor visual;             // B × D_v
  std::vector<Keyword> keywords;
  std::vector<CharId> preceding;
  std::vector<CharId> target;  // natural order, length G
};

using Gradients = std::vector<std::vector<double>>;

/// Worker threads from MIPG_THREADS, at least 1.
inline unsigned default_threads() {
  if (const char* env = std::getenv("MIPG_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return 1;
}

/// Mean per-character NLL of a batch on one tape (teacher forcing, inverted targets).
inline Var batch_loss(const Decoder& dec, std::span<const TrainSample> batch) {
  if (batch.empty()) throw DomainError("batch_loss: empty batch");
  std::vector<Var> terms;
  std::size_t chars = 0;
  for (const auto& s : batch) {
    const auto ctx = dec.prepare(s.visual, s.keywords, s.preceding);
    terms.push_back(dec.line_nll(ctx, s.target));
    chars += s.target.size();
  }
  return scale(sum(concat(terms)), 1.0 / static_cast<double>(chars));
}

/// Value of the mean per-character cross entropy.
inline double cross_entropy_loss(const MipgModel& model, std::span<const TrainSample> batch) {
  Tape tape;
  Decoder dec(tape, model);
  return batch_loss(dec, batch).value()[0];
}

struct BatchResult {
  double loss = 0.0;     // mean per-character NLL
  Gradients grads;       // d loss / d parameter, declaration order
  std::size_t chars = 0;
};

/**
 * Loss and gradient with one tape per sample. Samples run concurrently in
 * waves of `threads`; per-sample gradients are reduced in sample-index order,
 * so the result is bitwise independent of the thread count.
 */
inline BatchResult evaluate_batch(const MipgModel& model, std::span<const TrainSample> batch, bool with_grads,
                                  unsigned threads = 1) {
  if (batch.empty()) throw DomainError("evaluate_batch: empty batch");
  threads = std::max(1u, threads);
  BatchResult out;
  double nll = 0.0;
  struct PerSample {
    double nll = 0.0;
    Gradients grads;
  };
  std::vector<PerSample> wave;
  auto run = [&](std::size_t index, PerSample& slot) {
    Tape tape;
    Decoder dec(tape, model);
    const auto& s = batch[index];
    const auto ctx = dec.prepare(s.visual, s.keywords, s.preceding);
    Var loss = dec.line_nll(ctx, s.target);
    slot.nll = loss.value()[0];
    if (with_grads) {
      tape.backward(loss);
      slot.grads = dec.gradients();
    }
  };
  for (std::size_t begin = 0; begin < batch.size(); begin += threads) {
    const std::size_t n = std::min<std::size_t>(threads, batch.size() - begin);
    wave.assign(n, {});
    if (n == 1) {
      run(begin, wave[0]);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(n);
      for (std::size_t k = 0; k < n; ++k)
        pool.emplace_back([&, k] {
          try {
            run(begin + k, wave[k]);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        });
      for (auto& th : pool) th.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    for (std::size_t k = 0; k < n; ++k) {
      nll += wave[k].nll;
      out.chars += batch[begin + k].target.size();
      if (!with_grads) continue;
      if (out.grads.empty()) {
        out.grads = std::move(wave[k].grads);
        continue;
      }
      for (std::size_t p = 0; p < out.grads.size(); ++p)
        for (std::size_t i = 0; i < out.grads[p].size(); ++i) out.grads[p][i] += wave[k].grads[p][i];
    }
  }
  const double inv = 1.0 / static_cast<double>(out.chars);
  out.loss = nll * inv;
  for (auto& g : out.grads)
    for (double& v : g) v *= inv;
  return out;
}

/// Rescales all gradients so their joint L2 norm is at most max_norm. Returns the norm before clipping.
inline double clip_global_norm(Gradients& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g) v *= f;
  }
  return norm;
}

/// AdaDelta accumulators E[g²] and E[Δx²], one buffer per parameter.
struct AdaDeltaState {
  double rho = 0.95;
  double eps = 1e-6;
  std::vector<std::vector<double>> mean_sq_grad;
  std::vector<std::vector<double>> mean_sq_update;
};

/**
 *   E[g²]  ← ρ E[g²] + (1−ρ) g²
 *   Δx     = −√(E[Δx²] + ε) / √(E[g²] + ε) · g
 *   E[Δx²] ← ρ E[Δx²] + (1−ρ) Δx²
 *   x      ← x + Δx
 */
inline void adadelta_update(AdaDeltaState& state, std::span<Tensor* const> params, const Gradients& grads) {
  if (grads.size() != params.size()) throw DimensionError("adadelta: gradient count does not match parameters");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != params[p]->numel()) throw DimensionError("adadelta: gradient shape mismatch");
    for (std::size_t i = 0; i < grads[p].size(); ++i)
      if (!std::isfinite(grads[p][i]))
        throw NumericalError("adadelta: non-finite gradient at parameter " + std::to_string(p) + " entry " +
                             std::to_string(i));
  }
  if (state.mean_sq_grad.empty()) {
    for (const Tensor* t : params) {
      state.mean_sq_grad.emplace_back(t->numel(), 0.0);
      state.mean_sq_update.emplace_back(t->numel(), 0.0);
    }
  }
  const double rho = state.rho, eps = state.eps;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto x = params[p]->values();
    auto& eg = state.mean_sq_grad[p];
    auto& ex = state.mean_sq_update[p];
    const auto& g = grads[p];
    for (std::size_t i = 0; i < g.size(); ++i) {
      eg[i] = rho * eg[i] + (1.0 - rho) * g[i] * g[i];
      const double dx = -std::sqrt(ex[i] + eps) / std::sqrt(eg[i] + eps) * g[i];
      ex[i] = rho * ex[i] + (1.0 - rho) * dx * dx;
      x[i] += dx;
    }
  }
}

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t max_epochs = 10;
  std::size_t validate_every = 1;  // epochs between validation passes
  double rho = 0.95;
  double eps = 1e-6;
  double clip_norm = 5.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;
  unsigned threads = 1;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (validate_every < 1) throw ConfigError("validate_every must be at least 1");
    if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("rho must lie in (0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // character-weighted mean of the epoch's batch losses
  double valid_loss = 0.0;
};

struct TrainResult {
  MipgModel best;  // parameters at the lowest validation loss
  double best_valid_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;  // one entry per validation pass
};

/**
 * Sample indices grouped by (preceding length, target length) so no batch
 * needs padding, each group shuffled and cut into batches, then the batch
 * order shuffled.
 */
inline std::vector<std::vector<std::size_t>> make_batches(std::span<const TrainSample> pool, std::size_t batch_size,
                                                          Rng& rng) {
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < pool.size(); ++i)
    groups[{pool[i].preceding.size(), pool[i].target.size()}].push_back(i);
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [key, idx] : groups) {
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t b = 0; b < idx.size(); b += batch_size)
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b),
                           idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), b + batch_size)));
  }
  rng.shuffle(std::span<std::vector<std::size_t>>(batches));
  return batches;
}

inline std::vector<TrainSample> gather(std::span<const TrainSample> pool, std::span<const std::size_t> idx) {
  std::vector<TrainSample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(pool[i]);
  return out;
}

/// Mean per-character loss over a whole pool, evaluated in batches.
inline double pool_loss(const MipgModel& model, std::span<const TrainSample> pool, unsigned threads = 1) {
  if (pool.empty()) throw DomainError("pool_loss: empty pool");
  return evaluate_batch(model, pool, false, threads).loss;
}

/// Called after every validation pass; returning true stops training early.
using EpochHook = std::function<bool(const EpochRecord&, const MipgModel&)>;

/**
 * Trains in place with AdaDelta and returns the validation-selected
 * checkpoint. Writes "epoch <n> train <x> valid <y>" to `log` after every
 * validation pass.
 */
inline TrainResult train(MipgModel& model, std::span<const TrainSample> train_pool,
                         std::span<const TrainSample> valid_pool, const TrainConfig& cfg, std::ostream* log = nullptr,
                         const EpochHook& on_epoch = {}) {
  cfg.validate();
  if (train_pool.empty()) throw ConfigError("training pool is empty");
  if (valid_pool.empty()) throw ConfigError("validation pool is empty");
  Rng rng(cfg.seed);
  AdaDeltaState opt{cfg.rho, cfg.eps, {}, {}};
  auto params = model.parameters();
  TrainResult result;
  result.best = model;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double weighted = 0.0;
    std::size_t chars = 0;
    for (const auto& idx : make_batches(train_pool, cfg.batch_size, rng)) {
      const auto batch = gather(train_pool, idx);
      auto r = evaluate_batch(model, batch, true, cfg.threads);
      if (!std::isfinite(r.loss)) throw NumericalError("training loss is not finite at epoch " + std::to_string(epoch));
      weighted += r.loss * static_cast<double>(r.chars);
      chars += r.chars;
      if (cfg.clip_norm > 0.0) clip_global_norm(r.grads, cfg.clip_norm);
      adadelta_update(opt, params, r.grads);
    }
    if (epoch % cfg.validate_every != 0 && epoch != cfg.max_epochs) continue;
    EpochRecord rec{epoch, weighted / static_cast<double>(chars), pool_loss(model, valid_pool, cfg.threads)};
    if (!std::isfinite(rec.valid_loss)) throw NumericalError("validation loss is not finite");
    result.history.push_back(rec);
    if (log) *log << "epoch " << rec.epoch << " train " << rec.train_loss << " valid " << rec.valid_loss << '\n';
    if (rec.valid_loss < result.best_valid_loss) {
      result.best_valid_loss = rec.valid_loss;
      result.best_epoch = epoch;
      result.best = model;
    }
    if (on_epoch && on_epoch(rec, model)) break;
  }
  return result;
}

struct GradientReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
};

/**
 * Central-difference check of the batch loss against the tape gradient for
 * every parameter entry. `corrupt` perturbs one analytic entry and exists
 * only as a negative control.
 */
inline GradientReport check_gradients(MipgModel model, std::span<const TrainSample> batch, double h = 1e-5,
                                      bool corrupt = false) {
  auto analytic = evaluate_batch(model, batch, true).grads;
  if (corrupt && !analytic.empty() && !analytic.back().empty()) analytic.back().front() += 0.1;
  const auto names = model.parameter_names();
  auto params = model.parameters();
  GradientReport report;
  auto eval = [&] { return evaluate_batch(model, batch, false).loss; };
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto numeric = central_differences(eval, params[p]->values(), h);
    const double err = max_relative_error(analytic[p], numeric);
    report.checked += numeric.size();
    if (err >= report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_parameter = names[p];
    }
  }
  return report;
}

}  // namespace mipg
