#include "drrnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "drrnet/ops.hpp"

namespace drr {

std::vector<double> atol_ladder() {
  std::vector<double> ladder;
  for (int e = kAtolLadderLowExp; e <= kAtolLadderHighExp; ++e) ladder.push_back(std::pow(10.0, e));
  return ladder;
}

namespace {

template <Scalar T>
void require_matching(std::span<const Tensor<T>> a, std::span<const Tensor<T>> b) {
  if (a.size() != b.size()) {
    throw ShapeError("gradient sets differ in length: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    require_same_shape(a[i].shape(), b[i].shape(), "gradient comparison");
  }
}

// Smallest atol that passes, ignoring the ladder: max over elements of
// |a - b| - rtol |b|. NaN anywhere makes every atol fail.
template <Scalar T>
double required_atol(std::span<const Tensor<T>> a, std::span<const Tensor<T>> b, double rtol) {
  double need = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t e = 0; e < a[i].size(); ++e) {
      const double av = a[i][e], bv = b[i][e];
      const double excess = std::abs(av - bv) - rtol * std::abs(bv);
      if (std::isnan(excess)) return kAboveLadder;
      need = std::max(need, excess);
    }
  }
  return need;
}

}  // namespace

template <Scalar T>
bool all_close(std::span<const Tensor<T>> a, std::span<const Tensor<T>> b, double rtol,
               double atol) {
  require_matching(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t e = 0; e < a[i].size(); ++e) {
      const double av = a[i][e], bv = b[i][e];
      if (!(std::abs(av - bv) <= atol + rtol * std::abs(bv))) return false;
    }
  }
  return true;
}

template <Scalar T>
double min_atol(std::span<const Tensor<T>> a, std::span<const Tensor<T>> b, double rtol) {
  require_matching(a, b);
  for (double atol : atol_ladder()) {
    if (all_close(a, b, rtol, atol)) return atol;
  }
  return kAboveLadder;
}

template <Scalar T>
ErrorStats error_stats(std::span<const Tensor<T>> a, std::span<const Tensor<T>> b) {
  require_matching(a, b);
  ErrorStats stats;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t e = 0; e < a[i].size(); ++e) {
      const double av = a[i][e], bv = b[i][e];
      const double diff = std::abs(av - bv);
      stats.max_abs_err = std::max(stats.max_abs_err, diff);
      if (bv != 0.0) stats.max_rel_err = std::max(stats.max_rel_err, diff / std::abs(bv));
    }
  }
  return stats;
}

const ErrorCell& ErrorMap::find(double alpha, double beta) const {
  for (const auto& c : cells) {
    if (std::abs(c.alpha - alpha) < 1e-9 && std::abs(c.beta - beta) < 1e-9) return c;
  }
  throw ShapeError("error map has no cell at alpha=" + std::to_string(alpha) +
                   " beta=" + std::to_string(beta));
}

std::uint64_t config_digest(const NetworkConfig& config) {
  return fnv1a64(config.describe());
}

namespace {

template <Scalar T>
std::vector<Tensor<T>> flatten(Gradients<T> g) {
  std::vector<Tensor<T>> out = std::move(g.params);
  out.push_back(std::move(g.input));
  return out;
}

template <Scalar T>
ErrorCell evaluate_cell(const Backbone<T>& theta, double alpha, double beta,
                        const Tensor<T>& input, double rtol) {
  ErrorCell cell;
  cell.alpha = alpha;
  cell.beta = beta;
  DrrNetwork<T> net(theta, {alpha, beta}, ExecutionMode::cached);
  auto ones = [](const Tensor<T>& logits) { return Tensor<T>::full(logits.shape(), T{1}); };

  std::vector<Tensor<T>> reference;
  {
    CachedForward<T> fwd = net.forward_cached(input);
    reference = flatten(net.backprop_cached(fwd, ones(fwd.logits)));
  }
  std::vector<Tensor<T>> reconstructed;
  try {
    ReversibleForward<T> fwd = net.forward_reversible(input);
    reconstructed = flatten(net.backprop_reversible(fwd, ones(fwd.logits)));
  } catch (const NumericError&) {
    cell.finite = false;
    cell.max_abs_err = kAboveLadder;
    cell.max_rel_err = kAboveLadder;
    return cell;
  }

  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (!reference[i].all_finite() || !reconstructed[i].all_finite()) cell.finite = false;
  }
  const std::span<const Tensor<T>> a(reconstructed), b(reference);
  const ErrorStats stats = error_stats(a, b);
  cell.max_abs_err = stats.max_abs_err;
  cell.max_rel_err = stats.max_rel_err;
  cell.min_atol = cell.finite ? min_atol(a, b, rtol) : kAboveLadder;
  return cell;
}

}  // namespace

template <Scalar T>
ErrorMap gradient_error_map(const NetworkConfig& config, std::span<const double> alpha_grid,
                            std::span<const double> beta_grid, const ErrorMapOptions& options) {
  if (alpha_grid.empty() || beta_grid.empty()) throw ConfigError("error map grids must be non-empty");
  for (double b : beta_grid) {
    if (b == 0.0) throw ReversibilityError("error map beta grid must exclude 0");
  }
  ErrorMap map;
  map.alpha_grid.assign(alpha_grid.begin(), alpha_grid.end());
  map.beta_grid.assign(beta_grid.begin(), beta_grid.end());
  map.meta = {options.seed, precision_of<T>(), config_digest(config)};

  const Prng root(options.seed);
  Prng theta_rng = root.child("theta");
  const Backbone<T> theta = Backbone<T>::random(config, theta_rng);
  const Prng cell_root = root.child("cell");

  const std::size_t total = alpha_grid.size() * beta_grid.size();
  std::vector<std::size_t> order = options.evaluation_order;
  if (order.empty()) {
    for (std::size_t i = 0; i < total; ++i) order.push_back(i);
  }
  map.cells.resize(total);
  for (std::size_t idx : order) {
    if (idx >= total) throw ConfigError("error map evaluation order names a missing cell");
    Prng input_rng = cell_root.child(static_cast<std::uint64_t>(idx));
    const Tensor<T> input =
        normal_tensor<T>(input_rng, {options.batch, config.seq_len, config.width});
    map.cells[idx] = evaluate_cell(theta, alpha_grid[idx / beta_grid.size()],
                                   beta_grid[idx % beta_grid.size()], input, options.rtol);
  }
  return map;
}

std::vector<double> make_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw ConfigError("grid needs step > 0 and hi >= lo");
  std::vector<double> grid;
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-3));
  for (std::size_t i = 0; i <= n; ++i) {
    // Round to 12 decimals so 0.1 * 3 prints and compares as 0.3.
    const double v = lo + static_cast<double>(i) * step;
    grid.push_back(std::round(v * 1e12) / 1e12);
  }
  return grid;
}

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ':')) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (item.empty() || end != item.c_str() + item.size()) {
      throw ConfigError("grid '" + spec + "' must look like LO:HI:STEP");
    }
    parts.push_back(v);
  }
  if (parts.size() != 3) throw ConfigError("grid '" + spec + "' must look like LO:HI:STEP");
  return make_grid(parts[0], parts[1], parts[2]);
}

namespace {

std::string format_g17(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_error_map_csv(std::ostream& out, const ErrorMap& map) {
  out << "alpha,beta,min_atol,max_abs_err,max_rel_err\n";
  for (const auto& c : map.cells) {
    out << format_g17(c.alpha) << ',' << format_g17(c.beta) << ',' << format_g17(c.min_atol) << ','
        << format_g17(c.max_abs_err) << ',' << format_g17(c.max_rel_err) << '\n';
  }
}

void write_error_map_pgm(std::ostream& out, const ErrorMap& map) {
  const std::size_t w = map.alpha_grid.size(), h = map.beta_grid.size();
  out << "P5\n" << w << ' ' << h << "\n255\n";
  const double lo = kAtolLadderLowExp, hi = kAtolLadderHighExp + 1;
  for (std::size_t bi = 0; bi < h; ++bi) {
    for (std::size_t ai = 0; ai < w; ++ai) {
      const ErrorCell& c = map.at(ai, bi);
      unsigned char level = 255;
      if (c.finite && std::isfinite(c.min_atol)) {
        const double t = (std::log10(c.min_atol) - lo) / (hi - lo);
        level = static_cast<unsigned char>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
      }
      out.put(static_cast<char>(level));
    }
  }
}

template <Scalar T>
double reconstruction_error(const DrrNetwork<T>& net, std::span<const Tensor<T>> inputs) {
  double worst = 0.0;
  for (const auto& x0 : inputs) {
    const auto forward = net.activations(x0);
    for (std::size_t s = 0; s < forward.size(); ++s) {
      const auto& fw = forward[s];
      const auto rebuilt = net.reverse_stage(s, fw.x.back(), fw.y.back());
      for (std::size_t i = 0; i < fw.x.size(); ++i) {
        for (std::size_t e = 0; e < fw.x[i].size(); ++e) {
          const double dx = std::abs(static_cast<double>(rebuilt.x[i][e]) - fw.x[i][e]);
          const double dy = std::abs(static_cast<double>(rebuilt.y[i][e]) - fw.y[i][e]);
          if (std::isnan(dx) || std::isnan(dy)) return kAboveLadder;
          worst = std::max({worst, dx, dy});
        }
      }
    }
  }
  return worst;
}

template <Scalar T>
double reconstruction_error(const DrrNetwork<T>& net, Prng& rng, std::size_t trials,
                            std::size_t batch) {
  std::vector<Tensor<T>> inputs;
  for (std::size_t t = 0; t < trials; ++t) {
    inputs.push_back(normal_tensor<T>(rng, {batch, net.config().seq_len, net.config().width}));
  }
  return reconstruction_error(net, std::span<const Tensor<T>>(inputs));
}

double JacobianDetResult::relative_error() const {
  return std::abs(numeric - analytic) / std::abs(analytic);
}

double determinant(std::vector<double> a, std::size_t n) {
  if (a.size() != n * n) throw ShapeError("determinant: matrix is not n x n");
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
    }
    if (a[pivot * n + col] == 0.0) return 0.0;
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a[pivot * n + c], a[col * n + c]);
      det = -det;
    }
    const double p = a[col * n + col];
    det *= p;
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / p;
      for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
    }
  }
  return det;
}

JacobianDetResult jacobian_det_check(const FBlock<double>& block, double alpha, double beta,
                                     const Tensor<double>& x) {
  constexpr double kStep = 1e-6;
  constexpr std::size_t kMaxDimension = 64;
  const std::size_t d = x.size();
  if (d > kMaxDimension) {
    throw ShapeError("jacobian_det_check: dimension " + std::to_string(d) + " is too large");
  }
  const std::size_t n = 2 * d;

  // z = (x_{i-1}, y_{i-1}) -> (y_i, x_i) = (beta x, G(x) + y)
  auto module_map = [&](const std::vector<double>& z) {
    Tensor<double> xin(x.shape(), std::vector<double>(z.begin(), z.begin() + d));
    Tensor<double> yin(x.shape(), std::vector<double>(z.begin() + d, z.end()));
    Tensor<double> x_out = add(g_apply(block, alpha, xin), yin);
    Tensor<double> y_out = scaled(xin, beta);
    std::vector<double> out(y_out.values().begin(), y_out.values().end());
    out.insert(out.end(), x_out.values().begin(), x_out.values().end());
    return out;
  };

  std::vector<double> z(x.values().begin(), x.values().end());
  z.insert(z.end(), x.values().begin(), x.values().end());
  std::vector<double> jac(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> zp = z, zm = z;
    zp[j] += kStep;
    zm[j] -= kStep;
    const auto fp = module_map(zp);
    const auto fm = module_map(zm);
    for (std::size_t i = 0; i < n; ++i) jac[i * n + j] = (fp[i] - fm[i]) / (2.0 * kStep);
  }

  JacobianDetResult result;
  result.dimension = d;
  result.analytic = std::pow(beta, static_cast<double>(d));
  result.numeric = determinant(std::move(jac), n);
  if (beta != 0.0 && std::abs(result.numeric) <= 1e-12 * std::abs(result.analytic)) {
    throw InvariantError("numeric Jacobian is singular although beta != 0");
  }
  return result;
}

template bool all_close(std::span<const Tensor<float>>, std::span<const Tensor<float>>, double, double);
template bool all_close(std::span<const Tensor<double>>, std::span<const Tensor<double>>, double, double);
template double min_atol(std::span<const Tensor<float>>, std::span<const Tensor<float>>, double);
template double min_atol(std::span<const Tensor<double>>, std::span<const Tensor<double>>, double);
template ErrorStats error_stats(std::span<const Tensor<float>>, std::span<const Tensor<float>>);
template ErrorStats error_stats(std::span<const Tensor<double>>, std::span<const Tensor<double>>);
template ErrorMap gradient_error_map<float>(const NetworkConfig&, std::span<const double>,
                                            std::span<const double>, const ErrorMapOptions&);
template ErrorMap gradient_error_map<double>(const NetworkConfig&, std::span<const double>,
                                             std::span<const double>, const ErrorMapOptions&);
template double reconstruction_error(const DrrNetwork<float>&, std::span<const Tensor<float>>);
template double reconstruction_error(const DrrNetwork<double>&, std::span<const Tensor<double>>);
template double reconstruction_error(const DrrNetwork<float>&, Prng&, std::size_t, std::size_t);
template double reconstruction_error(const DrrNetwork<double>&, Prng&, std::size_t, std::size_t);

}  // namespace drr
