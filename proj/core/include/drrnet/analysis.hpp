#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "drrnet/drr_network.hpp"

namespace drr {

/// Decade ladder 1e-12 .. 1e-1 for the absolute tolerance search.
inline constexpr int kAtolLadderLowExp = -12;
inline constexpr int kAtolLadderHighExp = -1;
/// Returned when no ladder value makes the two gradient sets close.
inline constexpr double kAboveLadder = std::numeric_limits<double>::infinity();

std::vector<double> atol_ladder();

/// Elementwise |a - b| <= atol + rtol * |b| over every tensor pair, b being
/// the reference. Comparison is carried out in double.
template <Scalar T>
bool all_close(std::span<const Tensor<T>> a, std::span<const Tensor<T>> b, double rtol, double atol);

/// Smallest ladder atol for which all_close holds, or kAboveLadder.
template <Scalar T>
double min_atol(std::span<const Tensor<T>> a, std::span<const Tensor<T>> b, double rtol = 1e-5);

struct ErrorStats {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;  // |a - b| / |b| over elements with b != 0
};

template <Scalar T>
ErrorStats error_stats(std::span<const Tensor<T>> a, std::span<const Tensor<T>> b);

struct ErrorCell {
  double alpha = 0.0;
  double beta = 0.0;
  double min_atol = kAboveLadder;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  bool finite = true;  // false when either backprop produced NaN/Inf

  friend bool operator==(const ErrorCell&, const ErrorCell&) = default;
};

struct ErrorMapMeta {
  std::uint64_t seed = 0;
  Precision precision = Precision::f64;
  std::uint64_t config_digest = 0;
};

/// Minimal gradient tolerances over an (alpha, beta) grid. cells are
/// alpha-major: cells[ai * beta_grid.size() + bi].
struct ErrorMap {
  std::vector<double> alpha_grid;
  std::vector<double> beta_grid;
  std::vector<ErrorCell> cells;
  ErrorMapMeta meta;

  const ErrorCell& at(std::size_t alpha_index, std::size_t beta_index) const {
    return cells[alpha_index * beta_grid.size() + beta_index];
  }
  /// Cell whose coefficients equal (alpha, beta) up to 1e-9.
  const ErrorCell& find(double alpha, double beta) const;
};

struct ErrorMapOptions {
  double rtol = 1e-5;
  std::uint64_t seed = 0;
  std::size_t batch = 1;  // one random input per cell
  /// Cells to evaluate, by alpha-major index; empty means all, in order.
  std::vector<std::size_t> evaluation_order;
};

/// For each cell: theta fixed by the seed, one N(0, 1) input from a per-cell
/// child generator, loss = sum of logits; gradients from reconstruction-based
/// backprop are compared against cached backprop.
template <Scalar T>
ErrorMap gradient_error_map(const NetworkConfig& config, std::span<const double> alpha_grid,
                            std::span<const double> beta_grid, const ErrorMapOptions& options);

/// Evenly spaced grid lo, lo+step, ..., up to hi (inclusive within step/1000).
std::vector<double> make_grid(double lo, double hi, double step);
/// Parses "A0:A1:STEP".
std::vector<double> parse_grid(const std::string& spec);

std::uint64_t config_digest(const NetworkConfig& config);

void write_error_map_csv(std::ostream& out, const ErrorMap& map);
/// Binary PGM, alpha along x, beta along y; log10(min_atol) mapped linearly
/// from the ladder floor (0) to one decade above its top (255, also used for
/// the above-ladder sentinel).
void write_error_map_pgm(std::ostream& out, const ErrorMap& map);

/// Largest |reconstructed - forward| over every x_i, y_i of every stage and input.
template <Scalar T>
double reconstruction_error(const DrrNetwork<T>& net, std::span<const Tensor<T>> inputs);

/// `trials` inputs drawn N(0, 1) of shape [batch, L, d].
template <Scalar T>
double reconstruction_error(const DrrNetwork<T>& net, Prng& rng, std::size_t trials,
                            std::size_t batch = 1);

struct JacobianDetResult {
  double numeric = 0.0;
  double analytic = 0.0;  // beta^d
  std::size_t dimension = 0;

  double relative_error() const;
};

/// Determinant of the module map (x_{i-1}, y_{i-1}) -> (y_i, x_i), assembled
/// densely by central differences (step 1e-6) around (x, y = x).
JacobianDetResult jacobian_det_check(const FBlock<double>& block, double alpha, double beta,
                                     const Tensor<double>& x);

/// Determinant by Gaussian elimination with partial pivoting.
double determinant(std::vector<double> matrix, std::size_t n);

}  // namespace drr
