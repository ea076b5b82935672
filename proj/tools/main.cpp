#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "drrnet/analysis.hpp"
#include "drrnet/bench.hpp"
#include "drrnet/train.hpp"

namespace {

using namespace drr;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitInvariant = 3;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  return out;
}

RunOptions log_options(std::ostream* log, bool timing) {
  RunOptions o;
  o.timing = timing;
  if (log != nullptr) {
    o.on_record = [log](const MetricsRecord& r) { *log << to_json_line(r) << '\n' << std::flush; };
  }
  return o;
}

template <Scalar T>
int run_pretrain(const TrainConfig& cfg, const std::string& out_path, const std::string& log_path,
                 bool timing) {
  const SyntheticTask task = make_task(cfg);
  std::ofstream log;
  if (!log_path.empty()) log = open_out(log_path);
  const auto result = pretrain<T>(cfg, task, log_options(log_path.empty() ? nullptr : &log, timing));
  save_checkpoint(out_path, result.checkpoint);
  std::printf("pretrained %lld steps, task A accuracy %.4f, checkpoint %s\n",
              static_cast<long long>(cfg.pretrain_steps), result.accuracy, out_path.c_str());
  return kExitOk;
}

template <Scalar T>
int run_finetune(const TrainConfig& cfg, Regime regime, const std::string& init_path,
                 const std::string& log_path, const std::string& out_path, bool timing) {
  if (needs_checkpoint(regime) && init_path.empty()) {
    throw ConfigError(std::string("regime ") + to_string(regime) + " needs --init CKPT");
  }
  Checkpoint init;
  if (needs_checkpoint(regime)) init = load_checkpoint(init_path);
  const SyntheticTask task = make_task(cfg);
  std::ofstream log = open_out(log_path);
  const auto result = finetune<T>(cfg, regime, needs_checkpoint(regime) ? &init : nullptr, task,
                                  log_options(&log, timing));
  if (!out_path.empty()) save_checkpoint(out_path, result.checkpoint);
  std::printf("%s: %lld steps, task B accuracy %.4f\n", to_string(regime),
              static_cast<long long>(cfg.steps), result.final_accuracy);
  return kExitOk;
}

template <Scalar T>
int run_error_map(const TrainConfig& cfg, const std::string& alpha_grid, const std::string& beta_grid,
                  double rtol, const std::string& out_path, const std::string& heatmap_path) {
  const auto alphas = parse_grid(alpha_grid);
  const auto betas = parse_grid(beta_grid);
  ErrorMapOptions options;
  options.rtol = rtol;
  options.seed = cfg.seed;
  const ErrorMap map = gradient_error_map<T>(cfg.model, alphas, betas, options);
  {
    std::ofstream out = open_out(out_path);
    write_error_map_csv(out, map);
  }
  if (!heatmap_path.empty()) {
    std::ofstream out = open_out(heatmap_path);
    write_error_map_pgm(out, map);
  }
  std::size_t flagged = 0;
  for (const auto& c : map.cells) flagged += c.finite ? 0 : 1;
  std::printf("error map %zux%zu (%s), %zu non-finite cells, written to %s\n", alphas.size(),
              betas.size(), to_string(precision_of<T>()), flagged, out_path.c_str());
  return kExitOk;
}

template <Scalar T>
int run_reverse_check(const TrainConfig& cfg, std::size_t trials, Coefficients c, double tol) {
  Prng theta_rng = Prng(cfg.seed).child("theta");
  DrrNetwork<T> net(Backbone<T>::random(cfg.model, theta_rng), c);
  Prng input_rng = Prng(cfg.seed).child("reverse-check");
  const double err = reconstruction_error(net, input_rng, trials, cfg.batch);
  const bool ok = err <= tol;
  std::printf("reverse-check alpha=%g beta=%g %s: max abs reconstruction error %.3e (tolerance %.1e) %s\n",
              c.alpha, c.beta, to_string(precision_of<T>()), err, tol, ok ? "ok" : "EXCEEDED");
  if (!ok) {
    throw InvariantError("reconstruction error " + std::to_string(err) + " exceeds " + std::to_string(tol));
  }
  return kExitOk;
}

template <Scalar T>
int run_mem_bench(const TrainConfig& cfg, const std::vector<std::size_t>& depths) {
  const auto rows = mem_bench<T>(cfg.model, depths, cfg.batch, cfg.seed);
  std::printf("%-8s %-11s %14s\n", "depth", "mode", "peak_bytes");
  for (const auto& r : rows) {
    std::printf("%-8zu %-11s %14zu\n", r.depth, to_string(r.mode), r.peak_bytes);
  }
  if (depths.size() > 1) {
    std::printf("ratio depth %zu/%zu: cached %.3f, reversible %.3f\n", depths.back(), depths.front(),
                mem_ratio(rows, ExecutionMode::cached), mem_ratio(rows, ExecutionMode::reversible));
  }
  return kExitOk;
}

template <Scalar T>
int run_time_bench(const TrainConfig& cfg, std::size_t trials) {
  const auto r = time_bench<T>(cfg.model, trials, cfg.batch, cfg.seed);
  std::printf("cached_step_ms %.3f\nreversible_step_ms %.3f\nratio %.3f\n", r.cached_ms, r.reversible_ms,
              r.ratio);
  return kExitOk;
}

template <class Fn>
int dispatch(Precision p, Fn&& fn) {
  return p == Precision::f32 ? fn(float{}) : fn(double{});
}

std::vector<std::size_t> parse_depths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("--depths must be a comma separated list of integers, got '" + text + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-residual reversible training engine"};
  app.require_subcommand(1);

  std::string config_path, out_path, log_path, init_path, regime_name, heatmap_path;
  std::string alpha_grid = "0:1:0.1", beta_grid = "0.1:1:0.1", depths_text = "4,8,16";
  std::size_t trials = 10;
  double rtol = 1e-5;
  double alpha = -1.0, beta = -1.0, tol = -1.0;
  bool no_timing = false;

  auto* pre = app.add_subcommand("pretrain", "train the plain residual network on task A");
  pre->add_option("--config", config_path, "config file")->required();
  pre->add_option("--out", out_path, "checkpoint to write")->required();
  pre->add_option("--log", log_path, "metrics log (JSON lines)");
  pre->add_flag("--no-timing", no_timing, "log step_time_ms as 0");

  auto* fine = app.add_subcommand("finetune", "finetune on task B under one regime");
  fine->add_option("--config", config_path, "config file")->required();
  fine->add_option("--regime", regime_name, "conventional|frozen|rev-scratch|hard|dr2-vanilla|dr2-dynamic")
      ->required();
  fine->add_option("--init", init_path, "pretrained checkpoint");
  fine->add_option("--log", log_path, "metrics log (JSON lines)")->required();
  fine->add_option("--out", out_path, "checkpoint to write after training");
  fine->add_flag("--no-timing", no_timing, "log step_time_ms as 0");

  auto* emap = app.add_subcommand("error-map", "gradient error map over an (alpha, beta) grid");
  emap->add_option("--config", config_path, "config file")->required();
  emap->add_option("--alpha-grid", alpha_grid, "A0:A1:STEP")->capture_default_str();
  emap->add_option("--beta-grid", beta_grid, "B0:B1:STEP")->capture_default_str();
  emap->add_option("--rtol", rtol, "relative tolerance")->capture_default_str();
  emap->add_option("--out", out_path, "CSV to write")->required();
  emap->add_option("--heatmap", heatmap_path, "PGM heatmap to write");

  auto* rev = app.add_subcommand("reverse-check", "measure activation reconstruction error");
  rev->add_option("--config", config_path, "config file")->required();
  rev->add_option("--trials", trials, "random inputs")->capture_default_str();
  rev->add_option("--alpha", alpha, "alpha (default: schedule.alpha_end)");
  rev->add_option("--beta", beta, "beta (default: schedule.beta_end)");
  rev->add_option("--tol", tol, "allowed max abs error (default 1e-7 for f64, 1e-3 for f32)");

  auto* mem = app.add_subcommand("mem-bench", "ledger peak per depth and mode");
  mem->add_option("--config", config_path, "config file")->required();
  mem->add_option("--depths", depths_text, "comma separated modules per stage")->capture_default_str();

  auto* tb = app.add_subcommand("time-bench", "median cached vs reversible step time");
  tb->add_option("--config", config_path, "config file")->required();
  tb->add_option("--trials", trials, "timed trials after 3 warmups")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const TrainConfig cfg = load_config(config_path);
    const bool timing = !no_timing;
    if (*pre) {
      return dispatch(cfg.precision, [&](auto tag) {
        return run_pretrain<decltype(tag)>(cfg, out_path, log_path, timing);
      });
    }
    if (*fine) {
      const Regime regime = parse_regime(regime_name);
      return dispatch(cfg.precision, [&](auto tag) {
        return run_finetune<decltype(tag)>(cfg, regime, init_path, log_path, out_path, timing);
      });
    }
    if (*emap) {
      return dispatch(cfg.precision, [&](auto tag) {
        return run_error_map<decltype(tag)>(cfg, alpha_grid, beta_grid, rtol, out_path, heatmap_path);
      });
    }
    if (*rev) {
      const Coefficients c{alpha < 0 ? cfg.schedule.end.alpha : alpha, beta < 0 ? cfg.schedule.end.beta : beta};
      const double t = tol > 0 ? tol : (cfg.precision == Precision::f64 ? 1e-7 : 1e-3);
      return dispatch(cfg.precision, [&](auto tag) {
        return run_reverse_check<decltype(tag)>(cfg, trials, c, t);
      });
    }
    if (*mem) {
      const auto depths = parse_depths(depths_text);
      return dispatch(cfg.precision, [&](auto tag) { return run_mem_bench<decltype(tag)>(cfg, depths); });
    }
    if (*tb) {
      return dispatch(cfg.precision, [&](auto tag) { return run_time_bench<decltype(tag)>(cfg, trials); });
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const Error& e) {
    std::fprintf(stderr, "invariant violation: %s\n", e.what());
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvariant;
  }
  return kExitConfig;
}
