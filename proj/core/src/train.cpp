#include "drrnet/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "drrnet/loss.hpp"
#include "drrnet/ops.hpp"
#include "drrnet/optimizer.hpp"

namespace drr {

const char* to_string(Regime regime) {
  switch (regime) {
    case Regime::conventional:
      return "conventional";
    case Regime::frozen:
      return "frozen";
    case Regime::rev_scratch:
      return "rev-scratch";
    case Regime::hard:
      return "hard";
    case Regime::dr2_vanilla:
      return "dr2-vanilla";
    case Regime::dr2_dynamic:
      return "dr2-dynamic";
  }
  return "?";
}

const std::vector<Regime>& all_regimes() {
  static const std::vector<Regime> regimes = {Regime::conventional, Regime::frozen,
                                              Regime::rev_scratch,  Regime::hard,
                                              Regime::dr2_vanilla,  Regime::dr2_dynamic};
  return regimes;
}

Regime parse_regime(const std::string& text) {
  for (Regime r : all_regimes()) {
    if (text == to_string(r)) return r;
  }
  throw ConfigError("regime must be one of conventional, frozen, rev-scratch, hard, dr2-vanilla, "
                    "dr2-dynamic; got '" + text + "'");
}

bool is_reversible(Regime regime) {
  return regime != Regime::conventional && regime != Regime::frozen;
}

bool needs_checkpoint(Regime regime) { return regime != Regime::rev_scratch; }

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["alpha"] = r.alpha;
  j["beta"] = r.beta;
  j["train_loss"] = r.train_loss;
  j["eval_accuracy"] = r.eval_accuracy;
  j["peak_activation_bytes"] = r.peak_activation_bytes;
  j["step_time_ms"] = r.step_time_ms;
  return j.dump();
}

MetricsRecord parse_json_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    MetricsRecord r;
    r.epoch = j.at("epoch").get<std::int64_t>();
    r.step = j.at("step").get<std::int64_t>();
    r.alpha = j.at("alpha").get<double>();
    r.beta = j.at("beta").get<double>();
    r.train_loss = j.at("train_loss").get<double>();
    r.eval_accuracy = j.at("eval_accuracy").get<double>();
    r.peak_activation_bytes = j.at("peak_activation_bytes").get<std::size_t>();
    r.step_time_ms = j.at("step_time_ms").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad metrics line: ") + e.what());
  }
}

SyntheticTask make_task(const TrainConfig& cfg) {
  return SyntheticTask::make(cfg.model, cfg.seed, cfg.task_sigma, cfg.eval_size, cfg.teacher_depth);
}

template <Scalar T>
std::size_t plain_cache_bytes(const PlainCache<T>& cache) {
  std::size_t total = cache.pooled.bytes();
  for (const auto& stage : cache.block_inputs) {
    for (const auto& t : stage) total += t.bytes();
  }
  for (const auto& stage : cache.traces) {
    for (const auto& t : stage) total += t.bytes();
  }
  for (const auto& t : cache.stage_outputs) total += t.bytes();
  return total;
}

namespace {

constexpr std::size_t kEvalChunk = 250;

using Clock = std::chrono::steady_clock;

std::vector<std::size_t> batch_indices(const Prng& root, std::int64_t step, std::size_t batch) {
  Prng rng = root.child(static_cast<std::uint64_t>(step));
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.next_u64() % kTaskPoolSize);
  return idx;
}

[[noreturn]] void diverged(const TrainConfig& cfg, const char* what, std::int64_t step,
                           const std::string& detail) {
  throw NumericError(std::string(what) + " diverged at step " + std::to_string(step) + ": " +
                     detail + "\nconfig:\n" + cfg.describe());
}

bool should_record(std::int64_t step, std::int64_t total) {
  return step % kRecordEvery == 0 || step == total - 1;
}

// One optimization step as seen by the loop: returns the batch loss and the
// activation peak of the step.
struct StepStats {
  double loss = 0.0;
  std::size_t peak_bytes = 0;
};

template <Scalar T>
struct Learner {
  std::function<StepStats(const Tensor<T>&, std::span<const int>)> step;
  std::function<Tensor<T>(const Tensor<T>&)> logits;
  std::function<Coefficients()> coefficients;
};

template <Scalar T>
std::vector<MetricsRecord> run_loop(const TrainConfig& cfg, const char* what, std::int64_t steps,
                                    const Prng& batch_root, TaskVariant variant,
                                    const SyntheticTask& task, Learner<T>& learner,
                                    const std::function<void(std::int64_t)>& before_step,
                                    const RunOptions& options) {
  std::vector<MetricsRecord> records;
  for (std::int64_t step = 0; step < steps; ++step) {
    if (before_step) before_step(step);
    const auto idx = batch_indices(batch_root, step, cfg.batch);
    const Tensor<T> x = task.gather_inputs<T>(Split::train, idx);
    const auto labels = task.gather_labels(Split::train, variant, idx);

    const auto t0 = Clock::now();
    StepStats stats;
    try {
      stats = learner.step(x, labels);
    } catch (const NumericError& e) {
      diverged(cfg, what, step, e.what());
    }
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    if (!std::isfinite(stats.loss)) diverged(cfg, what, step, "loss is not finite");

    if (should_record(step, steps)) {
      MetricsRecord r;
      r.epoch = step / kStepsPerEpoch;
      r.step = step;
      const Coefficients c = learner.coefficients();
      r.alpha = c.alpha;
      r.beta = c.beta;
      r.train_loss = stats.loss;
      r.eval_accuracy = evaluate<T>(learner.logits, task, variant, cfg.eval_size);
      r.peak_activation_bytes = stats.peak_bytes;
      r.step_time_ms = options.timing ? ms : 0.0;
      if (options.on_record) options.on_record(r);
      records.push_back(r);
    }
  }
  return records;
}

template <Scalar T>
std::vector<const Tensor<T>*> const_view(const std::vector<Tensor<T>*>& params) {
  return {params.begin(), params.end()};
}

template <Scalar T>
Learner<T> plain_learner(const TrainConfig& cfg, PlainResidualNetwork<T>& net, AdamState<T>& state,
                         bool head_only) {
  Learner<T> l;
  l.step = [&cfg, &net, &state, head_only](const Tensor<T>& x, std::span<const int> labels) {
    auto fwd = net.forward(x);
    auto loss = cross_entropy(fwd.logits, labels);
    StepStats stats{loss.loss, plain_cache_bytes(fwd.cache)};
    if (head_only) {
      Tensor<T>* head = &net.backbone().head;
      const Tensor<T> g_head = matmul_tn(fwd.cache.pooled, loss.grad);
      adam_step<T>(cfg.optimizer, std::span<Tensor<T>* const>(&head, 1),
                   std::span<const Tensor<T>>(&g_head, 1), state);
    } else {
      auto grads = net.backprop(fwd.cache, loss.grad);
      auto params = net.backbone().parameters();
      adam_step<T>(cfg.optimizer, params, grads.params, state);
    }
    return stats;
  };
  l.logits = [&net](const Tensor<T>& x) { return net.logits(x); };
  l.coefficients = [] { return Coefficients{1.0, 0.0}; };
  return l;
}

template <Scalar T>
Learner<T> drr_learner(const TrainConfig& cfg, DrrNetwork<T>& net, AdamState<T>& state) {
  Learner<T> l;
  l.step = [&cfg, &net, &state](const Tensor<T>& x, std::span<const int> labels) {
    double loss_value = 0.0;
    auto out = net.forward_backward(x, [&](const Tensor<T>& logits) {
      auto loss = cross_entropy(logits, labels);
      loss_value = loss.loss;
      return loss.grad;
    });
    auto params = net.backbone().parameters();
    adam_step<T>(cfg.optimizer, params, out.grads.params, state);
    return StepStats{loss_value, net.ledger_report().peak_bytes};
  };
  l.logits = [&net](const Tensor<T>& x) { return net.logits(x); };
  l.coefficients = [&net] { return net.coefficients(); };
  return l;
}

}  // namespace

template <Scalar T>
double evaluate(const std::function<Tensor<T>(const Tensor<T>&)>& logits, const SyntheticTask& task,
                TaskVariant variant, std::size_t n) {
  if (n == 0) throw ConfigError("evaluate: n must be at least 1");
  if (n > task.size(Split::eval)) {
    throw ConfigError("evaluate: asked for " + std::to_string(n) + " inputs, eval split has " +
                      std::to_string(task.size(Split::eval)));
  }
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    std::vector<std::size_t> idx(std::min(kEvalChunk, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto pred = argmax_rows(logits(task.gather_inputs<T>(Split::eval, idx)));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (pred[i] == task.label(Split::eval, variant, idx[i])) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

template <Scalar T>
double evaluate(const PlainResidualNetwork<T>& net, const SyntheticTask& task, TaskVariant variant,
                std::size_t n) {
  return evaluate<T>([&net](const Tensor<T>& x) { return net.logits(x); }, task, variant, n);
}

template <Scalar T>
double evaluate(const DrrNetwork<T>& net, const SyntheticTask& task, TaskVariant variant, std::size_t n) {
  return evaluate<T>([&net](const Tensor<T>& x) { return net.logits(x); }, task, variant, n);
}

template <Scalar T>
PretrainResult pretrain(const TrainConfig& cfg, const SyntheticTask& task, const RunOptions& options) {
  cfg.validate();
  if (!(task.dims() == cfg.model)) throw ConfigError("pretrain: task was built for another topology");
  const Prng root(cfg.seed);
  Prng init_rng = root.child("student");
  PlainResidualNetwork<T> net(Backbone<T>::random(cfg.model, init_rng));
  auto state = AdamState<T>::zeros_like(const_view(net.backbone().parameters()));
  auto learner = plain_learner(cfg, net, state, false);

  PretrainResult result;
  result.records = run_loop<T>(cfg, "pretraining", cfg.pretrain_steps, root.child("pretrain-batches"),
                               TaskVariant::a, task, learner, nullptr, options);
  result.accuracy = evaluate(net, task, TaskVariant::a, cfg.eval_size);
  result.checkpoint = make_checkpoint(net.backbone());
  return result;
}

template <Scalar T>
FinetuneResult finetune(const TrainConfig& cfg, Regime regime, const Checkpoint* init,
                        const SyntheticTask& task, const RunOptions& options) {
  cfg.validate();
  if (!(task.dims() == cfg.model)) throw ConfigError("finetune: task was built for another topology");
  if (needs_checkpoint(regime) && init == nullptr) {
    throw ConfigError(std::string("regime ") + to_string(regime) + " needs a pretrained checkpoint (--init)");
  }
  const Prng root(cfg.seed);
  const Prng batches = root.child("finetune-batches");
  FinetuneResult result;

  if (!is_reversible(regime)) {
    PlainResidualNetwork<T> net(backbone_from_checkpoint<T>(*init, cfg.model));
    const bool head_only = regime == Regime::frozen;
    std::vector<const Tensor<T>*> trained =
        head_only ? std::vector<const Tensor<T>*>{&net.backbone().head} : const_view(net.backbone().parameters());
    auto state = AdamState<T>::zeros_like(trained);
    auto learner = plain_learner(cfg, net, state, head_only);
    result.records = run_loop<T>(cfg, "finetuning", cfg.steps, batches, TaskVariant::b, task, learner,
                                 nullptr, options);
    result.final_accuracy = evaluate(net, task, TaskVariant::b, cfg.eval_size);
    result.checkpoint = make_checkpoint(net.backbone());
    return result;
  }

  Backbone<T> theta;
  Coefficients start;
  switch (regime) {
    case Regime::rev_scratch: {
      Prng rng = root.child("scratch");
      theta = Backbone<T>::random(cfg.model, rng);
      start = kHardInitCoefficients;
      break;
    }
    case Regime::hard:
      theta = backbone_from_checkpoint<T>(*init, cfg.model);
      start = kHardInitCoefficients;
      break;
    case Regime::dr2_vanilla:
      theta = backbone_from_checkpoint<T>(*init, cfg.model);
      start = kDr2InitCoefficients;
      break;
    case Regime::dr2_dynamic:
      theta = backbone_from_checkpoint<T>(*init, cfg.model);
      start = coefficients_at(cfg.schedule, 0);
      break;
    default:
      throw InvariantError("unreachable regime");
  }
  DrrNetwork<T> net(std::move(theta), start, ExecutionMode::reversible);
  auto state = AdamState<T>::zeros_like(const_view(net.backbone().parameters()));
  auto learner = drr_learner(cfg, net, state);
  std::function<void(std::int64_t)> before;
  if (regime == Regime::dr2_dynamic) {
    before = [&net, &cfg](std::int64_t step) { net.set_coefficients(coefficients_at(cfg.schedule, step)); };
  }
  result.records = run_loop<T>(cfg, "finetuning", cfg.steps, batches, TaskVariant::b, task, learner,
                               before, options);
  result.final_accuracy = evaluate(net, task, TaskVariant::b, cfg.eval_size);
  result.checkpoint = make_checkpoint(net.backbone());
  return result;
}

#define DRR_INSTANTIATE(T)                                                                          \
  template std::size_t plain_cache_bytes(const PlainCache<T>&);                                     \
  template double evaluate(const std::function<Tensor<T>(const Tensor<T>&)>&, const SyntheticTask&, \
                           TaskVariant, std::size_t);                                               \
  template double evaluate(const PlainResidualNetwork<T>&, const SyntheticTask&, TaskVariant,       \
                           std::size_t);                                                            \
  template double evaluate(const DrrNetwork<T>&, const SyntheticTask&, TaskVariant, std::size_t);   \
  template PretrainResult pretrain<T>(const TrainConfig&, const SyntheticTask&, const RunOptions&); \
  template FinetuneResult finetune<T>(const TrainConfig&, Regime, const Checkpoint*,                \
                                      const SyntheticTask&, const RunOptions&);

DRR_INSTANTIATE(float)
DRR_INSTANTIATE(double)

#undef DRR_INSTANTIATE

}  // namespace drr
