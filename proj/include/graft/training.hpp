#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "graft/errors.hpp"
#include "graft/model.hpp"
#include "graft/rng.hpp"
#include "graft/schema.hpp"

namespace graft {

enum class Variant { structured, flattened };

struct TrainConfig {
  long steps = 2000;
  int batch_size = 8;
  double peak_lr = 3e-4;
  long warmup_steps = -1;  // -1: 10% of steps
  std::uint64_t seed = 1;
  double clip_norm = 1.0;
  long eval_interval = 100;
  Variant variant = Variant::structured;
  std::string init = "scratch";
  std::string precision = "float";  // float | double
  bool collapse_relations = false;

  long resolved_warmup() const { return warmup_steps < 0 ? steps / 10 : warmup_steps; }

  void check() const {
    if (steps <= 0) throw config_error("train: steps must be positive");
    if (batch_size <= 0) throw config_error("train: batch_size must be positive");
    if (resolved_warmup() > steps) throw config_error("train: warmup exceeds steps");
    if (peak_lr <= 0) throw config_error("train: peak_lr must be positive");
    if (init != "scratch")
      throw config_error("train: init '" + init + "' unsupported; this build trains from scratch");
    if (precision != "float" && precision != "double")
      throw config_error("train: precision must be 'float' or 'double'");
  }
};

// Linear warmup to peak_lr, then linear decay, hitting zero one step past the
// end so every scheduled step still moves the parameters.
inline double lr_at(long step, const TrainConfig& cfg) {
  const long warmup = cfg.resolved_warmup();
  if (warmup > 0 && step <= warmup)
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  return cfg.peak_lr * static_cast<double>(cfg.steps + 1 - step) /
         static_cast<double>(cfg.steps + 1 - warmup);
}

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> m, v;  // aligned with Parameters::visit order
  long step = 0;

  static OptimizerState init(Parameters<T>& params) {
    OptimizerState s;
    params.visit([&](const std::string&, Tensor<T>& t) {
      s.m.emplace_back(t.data().size(), T(0));
      s.v.emplace_back(t.data().size(), T(0));
    });
    return s;
  }
};

// Deterministic batch composition: a fresh seeded permutation per epoch,
// consumed in order; batches never straddle epoch boundaries, so the batch
// for a step is a pure function of (seed, step, dataset size).
inline std::vector<std::size_t> batch_indices(long step, std::size_t dataset_size,
                                              int batch_size, std::uint64_t seed) {
  if (dataset_size == 0) throw data_error("batch_indices: empty dataset");
  const long per_epoch =
      static_cast<long>((dataset_size + batch_size - 1) / static_cast<std::size_t>(batch_size));
  const long epoch = (step - 1) / per_epoch;
  const std::size_t pos =
      static_cast<std::size_t>((step - 1) % per_epoch) * static_cast<std::size_t>(batch_size);
  auto perm = Rng::from(seed, static_cast<std::uint64_t>(epoch), 0xEB0C).permutation(dataset_size);
  std::vector<std::size_t> out;
  for (std::size_t i = pos; i < std::min(pos + batch_size, dataset_size); ++i)
    out.push_back(perm[i]);
  return out;
}

struct StepStats {
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
};

// The Adam kernel for one parameter array, gradients already clip-scaled.
// step is the 1-based update count for bias correction.
template <typename T>
void adam_apply(std::vector<T>& value, const std::vector<T>& grad, std::vector<T>& m,
                std::vector<T>& v, long step, double lr, T clip_scale = T(1)) {
  const T beta1 = static_cast<T>(kAdamBeta1), beta2 = static_cast<T>(kAdamBeta2);
  const T bias1 = T(1) - static_cast<T>(std::pow(kAdamBeta1, static_cast<double>(step)));
  const T bias2 = T(1) - static_cast<T>(std::pow(kAdamBeta2, static_cast<double>(step)));
  const T eps = static_cast<T>(kAdamEps);
  const T lr_t = static_cast<T>(lr);
  for (std::size_t i = 0; i < value.size(); ++i) {
    const T g = grad[i] * clip_scale;
    m[i] = beta1 * m[i] + (T(1) - beta1) * g;
    v[i] = beta2 * v[i] + (T(1) - beta2) * g * g;
    const T m_hat = m[i] / bias1;
    const T v_hat = v[i] / bias2;
    value[i] -= lr_t * m_hat / (std::sqrt(v_hat) + eps);
  }
}

// One optimizer step: mean loss over the batch, reverse-mode gradients,
// global-norm clipping, Adam with bias correction at the scheduled rate.
template <typename T>
StepStats train_step(const std::vector<const EncodedExample*>& batch, Parameters<T>& params,
                     OptimizerState<T>& opt, const TrainConfig& cfg) {
  if (batch.empty()) throw data_error("train_step: empty batch");
  const long step = opt.step + 1;

  params.zero_grad();
  double batch_loss = 0;
  Rng dropout_rng = Rng::from(cfg.seed, static_cast<std::uint64_t>(step), 0xD0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const EncodedExample& ex = *batch[i];
    Tensor<T> loss = target_loss(forward(params, ex, true, &dropout_rng).logits, ex.gold_ids);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      std::string ids;
      for (const auto* e : batch) ids += (ids.empty() ? "" : ",") + e->id;
      throw data_error("non-finite loss at step " + std::to_string(step) + " (examples: " +
                       ids + ")");
    }
    batch_loss += value;
    scale(loss, T(1) / static_cast<T>(batch.size())).backward();
  }
  batch_loss /= static_cast<double>(batch.size());

  double norm_sq = 0;
  params.visit([&](const std::string&, Tensor<T>& t) {
    for (T g : t.grad()) norm_sq += static_cast<double>(g) * static_cast<double>(g);
  });
  const double norm = std::sqrt(norm_sq);
  const T clip_scale =
      norm > cfg.clip_norm ? static_cast<T>(cfg.clip_norm / norm) : T(1);

  const double lr = lr_at(step, cfg);
  std::size_t slot = 0;
  params.visit([&](const std::string&, Tensor<T>& t) {
    adam_apply(t.data(), t.grad(), opt.m[slot], opt.v[slot], step, lr, clip_scale);
    ++slot;
  });
  opt.step = step;
  return {batch_loss, lr, norm};
}

struct TrainLogLine {
  long step = 0;
  double loss = 0;
  double lr = 0;
  double seconds = 0;  // since the loop started
};

template <typename T>
void train_loop(Parameters<T>& params, OptimizerState<T>& opt,
                const std::vector<EncodedExample>& dataset, const TrainConfig& cfg,
                long end_step,
                const std::function<void(const TrainLogLine&)>& on_log = nullptr) {
  cfg.check();
  const auto start = std::chrono::steady_clock::now();
  while (opt.step < end_step) {
    auto idx = batch_indices(opt.step + 1, dataset.size(), cfg.batch_size, cfg.seed);
    std::vector<const EncodedExample*> batch;
    for (auto i : idx) batch.push_back(&dataset[i]);
    StepStats stats = train_step(batch, params, opt, cfg);
    if (on_log && (opt.step % cfg.eval_interval == 0 || opt.step == end_step)) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      on_log({opt.step, stats.loss, stats.lr, secs});
    }
  }
}

// Evaluation-mode token-level corpus loss: total NLL / total target tokens.
template <typename T>
double corpus_token_loss(const Parameters<T>& params, const std::vector<EncodedExample>& data) {
  NoGradGuard no_grad;
  double total = 0;
  std::size_t tokens = 0;
  for (const auto& ex : data) {
    Tensor<T> loss = target_loss(forward(params, ex, false).logits, ex.gold_ids);
    total += static_cast<double>(loss.item()) * static_cast<double>(ex.gold_ids.size());
    tokens += ex.gold_ids.size();
  }
  return tokens == 0 ? 0.0 : total / static_cast<double>(tokens);
}

// ---- optimizer state <-> checkpoint extras ----------------------------------

template <typename T>
std::vector<std::pair<std::string, const std::vector<T>*>> optimizer_arrays(
    Parameters<T>& params, const OptimizerState<T>& opt) {
  std::vector<std::pair<std::string, const std::vector<T>*>> out;
  std::size_t slot = 0;
  params.visit([&](const std::string& name, Tensor<T>&) {
    out.push_back({"opt.m." + name, &opt.m[slot]});
    out.push_back({"opt.v." + name, &opt.v[slot]});
    ++slot;
  });
  return out;
}

template <typename T>
OptimizerState<T> optimizer_from_extras(Parameters<T>& params,
                                        const std::map<std::string, std::vector<T>>& extras,
                                        long step) {
  OptimizerState<T> opt = OptimizerState<T>::init(params);
  opt.step = step;
  std::size_t slot = 0;
  bool complete = true;
  params.visit([&](const std::string& name, Tensor<T>&) {
    auto m = extras.find("opt.m." + name);
    auto v = extras.find("opt.v." + name);
    if (m == extras.end() || v == extras.end() ||
        m->second.size() != opt.m[slot].size() || v->second.size() != opt.v[slot].size()) {
      complete = false;
    } else {
      opt.m[slot] = m->second;
      opt.v[slot] = v->second;
    }
    ++slot;
  });
  if (!complete) throw data_error("checkpoint is missing optimizer moment arrays");
  return opt;
}

// ---- few-shot subsampling ----------------------------------------------------

struct SampleSpec {
  enum class Kind { count, percent } kind = Kind::count;
  double value = 0;
};

// "500" -> 500 examples; "1%" / "0.1%" -> percent of the dataset.
inline SampleSpec parse_sample_spec(const std::string& text) {
  if (text.empty()) throw config_error("subsample: empty spec");
  SampleSpec spec;
  std::string number = text;
  if (text.back() == '%') {
    spec.kind = SampleSpec::Kind::percent;
    number = text.substr(0, text.size() - 1);
  }
  try {
    std::size_t used = 0;
    spec.value = std::stod(number, &used);
    if (used != number.size()) throw std::invalid_argument(number);
  } catch (const std::exception&) {
    throw config_error("subsample: cannot parse spec '" + text + "'");
  }
  if (spec.value <= 0) throw config_error("subsample: spec must be positive");
  if (spec.kind == SampleSpec::Kind::count &&
      spec.value != std::floor(spec.value))
    throw config_error("subsample: count spec must be an integer");
  return spec;
}

inline std::size_t resolve_sample_count(const SampleSpec& spec, std::size_t dataset_size) {
  std::size_t k;
  if (spec.kind == SampleSpec::Kind::count) {
    k = static_cast<std::size_t>(spec.value);
  } else {
    k = static_cast<std::size_t>(std::llround(spec.value / 100.0 * dataset_size));
    if (k == 0) k = 1;  // round tiny percentages up to one example
  }
  if (k > dataset_size)
    throw data_error("subsample: requested " + std::to_string(k) + " of " +
                     std::to_string(dataset_size) + " examples");
  return k;
}

// Uniform sample without replacement; the same seed yields nested subsets for
// decreasing sizes (each example carries a fixed random key, subsets are key
// prefixes). Returned indices keep the original dataset order.
inline std::vector<std::size_t> subsample_few_shot(std::size_t dataset_size,
                                                   const SampleSpec& spec, std::uint64_t seed) {
  const std::size_t k = resolve_sample_count(spec, dataset_size);
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed(dataset_size);
  for (std::size_t i = 0; i < dataset_size; ++i)
    keyed[i] = {mix_seed(seed, i, 0x5A3), i};
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < k; ++i) chosen.push_back(keyed[i].second);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

// "(number of samples / percent of training data)" line for reports.
inline std::string sample_report_line(std::size_t k, std::size_t dataset_size) {
  const double percent = 100.0 * static_cast<double>(k) / static_cast<double>(dataset_size);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "(%zu / %.4g%%)", k, percent);
  return buf;
}

// ---- synthetic diagnostic ----------------------------------------------------

// Two node segments with random distinct names; the direction lives only in
// the relation matrix (precedes one way, follows the other), never in the
// text. The target verbalizes it, so the task is unsolvable without reading
// the segment-wise relations.
std::vector<DataSchema> make_synthetic_direction_dataset(std::size_t n, std::uint64_t seed);

}  // namespace graft
