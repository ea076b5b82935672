#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "drrnet/analysis.hpp"
#include "drrnet/drr_network.hpp"
#include "oracles/oracles.hpp"

using namespace drr;

namespace {

NetworkConfig small_config(std::size_t width = 8, std::size_t depth = 2) {
  NetworkConfig c;
  c.width = width;
  c.hidden = 2 * width;
  c.seq_len = 4;
  c.classes = 5;
  c.stages = 2;
  c.depth_per_stage = depth;
  return c;
}

std::vector<Tensor64> one_tensor(std::vector<double> v) {
  const std::size_t n = v.size();
  return {Tensor64({n}, std::move(v))};
}

double lib_min_atol(const std::vector<Tensor64>& a, const std::vector<Tensor64>& b, double rtol) {
  return min_atol(std::span<const Tensor64>(a), std::span<const Tensor64>(b), rtol);
}

template <Scalar T>
std::vector<Tensor<T>> flat(Gradients<T> g) {
  std::vector<Tensor<T>> out = std::move(g.params);
  out.push_back(std::move(g.input));
  return out;
}

}  // namespace

TEST_CASE("min_atol of identical sets is the ladder floor") {
  Prng rng(4);
  const std::vector<Tensor64> a{normal_tensor<double>(rng, {3, 5}), normal_tensor<double>(rng, {7})};
  CHECK(lib_min_atol(a, a, 1e-5) == 1e-12);
  CHECK(lib_min_atol(a, a, 0.0) == 1e-12);
}

TEST_CASE("min_atol picks the decade above an absolute offset on a zero gradient") {
  const auto b = one_tensor({0.0, 0.0, 0.0});
  const auto a = one_tensor({0.0, 5e-9, 0.0});
  CHECK(lib_min_atol(a, b, 1e-5) == doctest::Approx(1e-8).epsilon(1e-12));
  CHECK(lib_min_atol(a, b, 1e-5) == doctest::Approx(oracle::min_atol(a, b, 1e-5)).epsilon(1e-12));
}

TEST_CASE("min_atol is the smallest passing ladder value") {
  Prng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<Tensor64> b{normal_tensor<double>(rng, {16})};
    std::vector<Tensor64> a = b;
    const double scale = std::pow(10.0, -3 - trial % 8);
    const Tensor64 noise = normal_tensor<double>(rng, {16});
    for (std::size_t i = 0; i < 16; ++i) a[0][i] += scale * noise[i];
    const double m = lib_min_atol(a, b, 1e-5);
    REQUIRE(std::isfinite(m));
    const std::span<const Tensor64> sa(a), sb(b);
    CHECK(all_close(sa, sb, 1e-5, m));
    if (m > 1e-12) CHECK_FALSE(all_close(sa, sb, 1e-5, m / 10.0));
    CHECK(m == doctest::Approx(oracle::min_atol(a, b, 1e-5)).epsilon(1e-12));
  }
}

TEST_CASE("min_atol reports the sentinel above the ladder and for NaN") {
  CHECK(lib_min_atol(one_tensor({1.0}), one_tensor({0.0}), 1e-5) == kAboveLadder);
  CHECK(lib_min_atol(one_tensor({std::nan("")}), one_tensor({0.0}), 1e-5) == kAboveLadder);
  CHECK(std::isinf(kAboveLadder));
}

TEST_CASE("min_atol rejects mismatched gradient sets") {
  CHECK_THROWS_AS(lib_min_atol(one_tensor({1.0, 2.0}), one_tensor({1.0}), 1e-5), ShapeError);
  const std::vector<Tensor64> two{Tensor64({1}), Tensor64({1})};
  CHECK_THROWS_AS(lib_min_atol(two, one_tensor({1.0}), 1e-5), ShapeError);
}

TEST_CASE("error_stats reports absolute and relative maxima") {
  const auto a = one_tensor({1.5, 2.0, 0.25});
  const auto b = one_tensor({1.0, 2.0, 0.0});
  const ErrorStats s = error_stats(std::span<const Tensor64>(a), std::span<const Tensor64>(b));
  CHECK(s.max_abs_err == 0.5);
  CHECK(s.max_rel_err == 0.5);
}

TEST_CASE("an f32 cell matches an independent replication") {
  const NetworkConfig cfg = small_config();
  const std::vector<double> alphas{0.5}, betas{0.5};
  ErrorMapOptions opt;
  opt.seed = 11;
  const ErrorMap map = gradient_error_map<float>(cfg, alphas, betas, opt);
  REQUIRE(map.cells.size() == 1);

  Prng theta_rng = Prng(11).child("theta");
  const auto theta = Backbone<float>::random(cfg, theta_rng);
  Prng input_rng = Prng(11).child("cell").child(0);
  const auto x0 = normal_tensor<float>(input_rng, {1, cfg.seq_len, cfg.width});

  DrrNetwork<float> cached(theta, {0.5, 0.5}, ExecutionMode::cached);
  const auto cf = cached.forward_cached(x0);
  const auto reference = flat(cached.backprop_cached(cf, Tensor32::full(cf.logits.shape(), 1.0f)));
  DrrNetwork<float> rev(theta, {0.5, 0.5}, ExecutionMode::reversible);
  const auto rf = rev.forward_reversible(x0);
  const auto rebuilt = flat(rev.backprop_reversible(rf, Tensor32::full(rf.logits.shape(), 1.0f)));

  const ErrorCell& cell = map.find(0.5, 0.5);
  CHECK(cell.finite);
  CHECK(cell.min_atol == doctest::Approx(oracle::min_atol(rebuilt, reference, 1e-5)).epsilon(1e-12));
  double worst = 0.0;
  for (std::size_t t = 0; t < reference.size(); ++t)
    worst = std::max(worst, oracle::max_abs_diff(rebuilt[t].values(), reference[t].values()));
  CHECK(cell.max_abs_err == worst);
  CHECK(map.meta.precision == Precision::f32);
  CHECK(map.meta.seed == 11);
  CHECK(map.meta.config_digest == config_digest(cfg));
}

TEST_CASE("cells are independent of evaluation order") {
  const NetworkConfig cfg = small_config();
  const std::vector<double> alphas{0.0, 0.5, 1.0}, betas{0.3, 1.0};
  ErrorMapOptions forward_order;
  forward_order.seed = 3;
  ErrorMapOptions permuted = forward_order;
  permuted.evaluation_order = {5, 2, 0, 4, 1, 3};
  const ErrorMap a = gradient_error_map<float>(cfg, alphas, betas, forward_order);
  const ErrorMap b = gradient_error_map<float>(cfg, alphas, betas, permuted);
  CHECK(a.cells == b.cells);
  for (std::size_t ai = 0; ai < alphas.size(); ++ai)
    for (std::size_t bi = 0; bi < betas.size(); ++bi) {
      CHECK(a.at(ai, bi).alpha == alphas[ai]);
      CHECK(a.at(ai, bi).beta == betas[bi]);
    }
}

TEST_CASE("error map rejects beta 0, empty grids and stray indices") {
  const NetworkConfig cfg = small_config();
  const std::vector<double> alphas{0.5}, with_zero{0.0, 0.5}, empty;
  CHECK_THROWS_AS(gradient_error_map<double>(cfg, alphas, with_zero, {}), ReversibilityError);
  CHECK_THROWS_AS(gradient_error_map<double>(cfg, empty, alphas, {}), ConfigError);
  ErrorMapOptions bad;
  bad.evaluation_order = {1};
  CHECK_THROWS_AS(gradient_error_map<double>(cfg, alphas, alphas, bad), ConfigError);
  const ErrorMap ok = gradient_error_map<double>(cfg, alphas, alphas, {});
  CHECK_THROWS_AS(ok.find(0.4, 0.5), ShapeError);
}

TEST_CASE("f64 map at alpha 0, beta 1 is tight") {
  const std::vector<double> alphas{0.0}, betas{1.0};
  const ErrorMap map = gradient_error_map<double>(small_config(), alphas, betas, {});
  CHECK(map.cells[0].min_atol <= 1e-10);
}

TEST_CASE("reconstruction error is exactly zero for F = 0 at alpha 0, beta 1") {
  const NetworkConfig cfg = small_config();
  DrrNetwork<double> net(Backbone<double>::zeros(cfg), {0.0, 1.0});
  Prng rng(8);
  CHECK(reconstruction_error(net, rng, 5, 2) == 0.0);
}

TEST_CASE("reconstruction error stays below 1e-7 in f64 on moderate coefficients") {
  const NetworkConfig cfg = small_config(8, 4);
  Prng theta_rng(21);
  const auto theta = Backbone<double>::random(cfg, theta_rng);
  for (auto [a, b] : std::vector<std::pair<double, double>>{{0.3, 0.7}, {0.0, 1.0}, {1.0, 0.1}, {0.5, 0.5}}) {
    DrrNetwork<double> net(theta, {a, b});
    Prng rng(22);
    CHECK(reconstruction_error(net, rng, 10) <= 1e-7);
  }
}

TEST_CASE("f32 reconstruction is looser than f64 on the same weights") {
  const NetworkConfig cfg = small_config(8, 4);
  Prng r64(31), r32(31);
  const auto t64 = Backbone<double>::random(cfg, r64);
  const auto t32 = Backbone<float>::random(cfg, r32);
  DrrNetwork<double> n64(t64, {0.5, 0.5});
  DrrNetwork<float> n32(t32, {0.5, 0.5});
  Prng i64(32), i32(32);
  const double e64 = reconstruction_error(n64, i64, 5);
  const double e32 = reconstruction_error(n32, i32, 5);
  CHECK(e32 > e64);
  CHECK(e32 < 1e-2);
}

TEST_CASE("determinant of known matrices") {
  CHECK(determinant({2.0}, 1) == 2.0);
  CHECK(determinant({1, 2, 3, 4}, 2) == doctest::Approx(-2.0).epsilon(1e-15));
  CHECK(determinant({0, 1, 1, 0}, 2) == -1.0);
  CHECK(determinant({2, 0, 0, 0, 3, 0, 0, 0, 4}, 3) == 24.0);
  CHECK(determinant({1, 2, 2, 4}, 2) == 0.0);
  CHECK(determinant({6, 1, 1, 4, -2, 5, 2, 8, 7}, 3) == doctest::Approx(-306.0).epsilon(1e-13));
  CHECK_THROWS_AS(determinant({1, 2, 3}, 2), ShapeError);
}

TEST_CASE("module Jacobian determinant is beta to the d") {
  SUBCASE("d = 1, beta 0.5") {
    const auto block = FBlock<double>::zeros(BlockKind::mlp, 1, 2);
    const auto r = jacobian_det_check(block, 0.7, 0.5, Tensor64({1, 1}, {0.3}));
    CHECK(r.dimension == 1);
    CHECK(r.numeric == doctest::Approx(0.5).epsilon(1e-8));
  }
  SUBCASE("d = 3, beta 0.5") {
    const auto block = FBlock<double>::zeros(BlockKind::mlp, 3, 6);
    const auto r = jacobian_det_check(block, 1.0, 0.5, Tensor64({1, 3}, {0.3, -1.0, 2.0}));
    CHECK(r.numeric == doctest::Approx(0.125).epsilon(1e-8));
  }
  Prng rng(41);
  for (std::size_t d = 1; d <= 4; ++d) {
    for (double beta : {0.1, 0.5, 1.0}) {
      for (BlockKind kind : {BlockKind::mlp, BlockKind::attention}) {
        const auto zero = FBlock<double>::zeros(kind, d, 2 * d);
        const auto random = FBlock<double>::random(kind, d, 2 * d, rng);
        const auto x = normal_tensor<double>(rng, {1, d});
        for (const auto* block : {&zero, &random}) {
          for (double alpha : {0.0, 0.3, 1.0}) {
            const auto r = jacobian_det_check(*block, alpha, beta, x);
            REQUIRE(r.dimension == d);
            REQUIRE(r.analytic == doctest::Approx(std::pow(beta, static_cast<double>(d))));
            REQUIRE(r.relative_error() <= 1e-4);
          }
        }
      }
    }
  }
}

TEST_CASE("jacobian check refuses oversized inputs") {
  const auto block = FBlock<double>::zeros(BlockKind::mlp, 8, 16);
  CHECK_THROWS_AS(jacobian_det_check(block, 1.0, 0.5, Tensor64({9, 8})), ShapeError);
}

TEST_CASE("grids") {
  const auto g = make_grid(0.0, 1.0, 0.1);
  REQUIRE(g.size() == 11);
  CHECK(g[3] == 0.3);
  CHECK(g[10] == 1.0);
  CHECK(parse_grid("0.1:1:0.1") == make_grid(0.1, 1.0, 0.1));
  CHECK(parse_grid("0.5:0.5:0.1") == std::vector<double>{0.5});
  CHECK_THROWS_AS(parse_grid("0:1"), ConfigError);
  CHECK_THROWS_AS(parse_grid("0:x:0.1"), ConfigError);
  CHECK_THROWS_AS(make_grid(0.0, 1.0, 0.0), ConfigError);
  CHECK_THROWS_AS(make_grid(1.0, 0.0, 0.1), ConfigError);
}

TEST_CASE("csv output round trips every cell") {
  ErrorMap map;
  map.alpha_grid = {0.0, 1.0};
  map.beta_grid = {0.1};
  map.cells = {{0.0, 0.1, 1e-9, 3.25e-10, 0.1}, {1.0, 0.1, kAboveLadder, 0.5, 2.0 / 3.0, false}};
  std::ostringstream out;
  write_error_map_csv(out, map);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "alpha,beta,min_atol,max_abs_err,max_rel_err");
  for (const auto& c : map.cells) {
    REQUIRE(std::getline(in, line));
    std::istringstream row(line);
    std::string field;
    std::vector<double> v;
    while (std::getline(row, field, ',')) v.push_back(std::stod(field));
    REQUIRE(v.size() == 5);
    CHECK(v[0] == c.alpha);
    CHECK(v[1] == c.beta);
    CHECK(v[2] == c.min_atol);
    CHECK(v[3] == c.max_abs_err);
    CHECK(v[4] == c.max_rel_err);
  }
  CHECK_FALSE(std::getline(in, line));
}

TEST_CASE("pgm output has a binary header and one byte per cell") {
  ErrorMap map;
  map.alpha_grid = {0.0, 0.5, 1.0};
  map.beta_grid = {0.5, 1.0};
  for (double a : map.alpha_grid)
    for (double b : map.beta_grid) map.cells.push_back({a, b, 1e-12});
  map.cells[1].min_atol = kAboveLadder;
  std::ostringstream out;
  write_error_map_pgm(out, map);
  const std::string s = out.str();
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(s.substr(0, header.size()) == header);
  REQUIRE(s.size() == header.size() + 6);
  // Row-major over beta: pixel (ai = 0, bi = 1) is the sentinel.
  CHECK(static_cast<unsigned char>(s[header.size()]) == 0);
  CHECK(static_cast<unsigned char>(s[header.size() + 3]) == 255);
}

TEST_CASE("config digest tracks the description") {
  NetworkConfig a = small_config(), b = small_config();
  CHECK(config_digest(a) == config_digest(b));
  b.depth_per_stage = 3;
  CHECK(config_digest(a) != config_digest(b));
}
