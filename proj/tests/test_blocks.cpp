#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "drrnet/checkpoint.hpp"
#include "drrnet/ops.hpp"
#include "oracles/gradcheck.hpp"

using namespace drr;

namespace {

double weighted_sum(const Tensor64& y, const Tensor64& w) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
  return s;
}

NetworkConfig small_config(std::size_t stages, std::size_t depth) {
  NetworkConfig c;
  c.width = 6;
  c.hidden = 10;
  c.seq_len = 3;
  c.classes = 4;
  c.stages = stages;
  c.depth_per_stage = depth;
  return c;
}

std::string to_text(const Checkpoint& ckpt) {
  std::ostringstream out;
  write_checkpoint(out, ckpt);
  return out.str();
}

}  // namespace

TEST_CASE("zero-parameter blocks map everything to zero") {
  Prng rng(1);
  const auto x = normal_tensor<double>(rng, {2, 5, 8});
  for (BlockKind kind : {BlockKind::mlp, BlockKind::attention}) {
    const auto block = FBlock<double>::zeros(kind, 8, 12);
    const Tensor64 y = block.forward(x);
    CHECK(y.shape() == x.shape());
    for (double v : y.values()) REQUIRE(v == 0.0);
  }
}

TEST_CASE("attention with Wq = Wk = 0 and Wv = Wo = I averages tokens") {
  const std::size_t d = 4, L = 5;
  FBlock<double> block(BlockKind::attention,
                       {Tensor64({d, d}), Tensor64({d, d}), Tensor64::identity(d), Tensor64::identity(d)});
  Prng rng(2);
  const auto x = normal_tensor<double>(rng, {L, d});
  const Tensor64 y = block.forward(x);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0;
    for (std::size_t l = 0; l < L; ++l) mean += x.at(l, j) / L;
    for (std::size_t l = 0; l < L; ++l) CHECK(y.at(l, j) == doctest::Approx(mean).epsilon(1e-14));
  }
}

TEST_CASE("fixed-seed blocks match a step-by-step long double evaluation") {
  const std::size_t d = 5, h = 7, L = 3;
  Prng rng(3);
  for (BlockKind kind : {BlockKind::mlp, BlockKind::attention}) {
    auto block = FBlock<double>::random(kind, d, h, rng);
    if (kind == BlockKind::mlp) {
      block.params()[1] = normal_tensor<double>(rng, {h});
      block.params()[3] = normal_tensor<double>(rng, {d});
    }
    Tensor64 e1({L, d});
    e1.at(0, 0) = 1.0;
    e1.at(1, 1) = 1.0;
    e1.at(2, 2) = -2.0;
    const auto ref = oracle::block_forward(block, oracle::widen(e1), L);
    CHECK(oracle::rel_error(block.forward(e1).values(), ref) < 1e-14);
    const auto x = normal_tensor<double>(rng, {L, d});
    CHECK(oracle::rel_error(block.forward(x).values(), oracle::block_forward(block, oracle::widen(x), L)) < 1e-14);
  }
}

TEST_CASE("batched input gives the same rows as one grid at a time") {
  Prng rng(4);
  for (BlockKind kind : {BlockKind::mlp, BlockKind::attention}) {
    const auto block = FBlock<double>::random(kind, 6, 9, rng);
    const auto x = normal_tensor<double>(rng, {3, 4, 6});
    const Tensor64 y = block.forward(x);
    for (std::size_t b = 0; b < 3; ++b) {
      Tensor64 grid({4, 6});
      std::copy_n(x.data() + b * 24, 24, grid.data());
      const Tensor64 yb = block.forward(grid);
      for (std::size_t i = 0; i < 24; ++i) REQUIRE(yb[i] == y[b * 24 + i]);
    }
  }
}

TEST_CASE("block output shape equals input shape over random configurations") {
  Prng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t d = 1 + rng.next_u64() % 12;
    const std::size_t h = 1 + rng.next_u64() % 20;
    const std::size_t L = 1 + rng.next_u64() % 6;
    const std::size_t B = 1 + rng.next_u64() % 3;
    const BlockKind kind = rng.next_u64() % 2 ? BlockKind::mlp : BlockKind::attention;
    const auto block = FBlock<double>::random(kind, d, h, rng);
    const auto x = normal_tensor<double>(rng, {B, L, d});
    REQUIRE(block.forward(x).shape() == x.shape());
    REQUIRE(block.vjp(x, x).input.shape() == x.shape());
  }
}

TEST_CASE("blocks reject inputs of the wrong width") {
  const auto mlp = FBlock<double>::zeros(BlockKind::mlp, 4, 8);
  CHECK_THROWS_AS(mlp.forward(Tensor64({2, 5})), ShapeError);
  const auto attn = FBlock<double>::zeros(BlockKind::attention, 4, 8);
  CHECK_THROWS_AS(attn.forward(Tensor64({4})), ShapeError);
  CHECK_THROWS_AS(attn.vjp(Tensor64({2, 4}), Tensor64({3, 4})), ShapeError);
  CHECK_THROWS_AS(FBlock<double>(BlockKind::mlp, {Tensor64({4, 8})}), ShapeError);
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  Prng rng(6);
  for (BlockKind kind : {BlockKind::mlp, BlockKind::attention}) {
    const auto block = FBlock<double>::random(kind, 6, 9, rng);
    const auto x = normal_tensor<double>(rng, {2, 4, 6});
    const BlockGrad<double> g = block.vjp(x, Tensor64(x.shape()));
    for (double v : g.input.values()) REQUIRE(v == 0.0);
    for (const auto& p : g.params)
      for (double v : p.values()) REQUIRE(v == 0.0);
  }
}

TEST_CASE("zero-weight mlp: no input path, bias-driven weight gradient") {
  const std::size_t d = 3, h = 4, L = 2;
  auto block = FBlock<double>::zeros(BlockKind::mlp, d, h);
  block.params()[1] = Tensor64({h}, {0.5, -1.0, 2.0, 0.0});
  Prng rng(7);
  const auto x = normal_tensor<double>(rng, {L, d});
  const auto g = normal_tensor<double>(rng, {L, d});
  const BlockGrad<double> bg = block.vjp(x, g);
  for (double v : bg.input.values()) CHECK(v == 0.0);
  for (double v : bg.params[0].values()) CHECK(v == 0.0);  // W2 = 0 blocks the path to W1
  for (double v : bg.params[1].values()) CHECK(v == 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    const double a = static_cast<double>(oracle::gelu(static_cast<oracle::ld>(block.params()[1][i])));
    for (std::size_t j = 0; j < d; ++j) {
      double expected = 0;
      for (std::size_t t = 0; t < L; ++t) expected += a * g.at(t, j);
      CHECK(bg.params[2].at(i, j) == doctest::Approx(expected).epsilon(1e-14));
    }
  }
  for (std::size_t j = 0; j < d; ++j) CHECK(bg.params[3][j] == doctest::Approx(g.at(0, j) + g.at(1, j)));
}

TEST_CASE("block vjp matches finite differences") {
  Prng rng(8);
  for (BlockKind kind : {BlockKind::mlp, BlockKind::attention}) {
    auto block = FBlock<double>::random(kind, 5, 8, rng);
    if (kind == BlockKind::mlp) block.params()[1] = normal_tensor<double>(rng, {8}, 0.3);
    const auto x = normal_tensor<double>(rng, {2, 4, 5});
    const auto w = normal_tensor<double>(rng, x.shape());
    const BlockGrad<double> bg = block.vjp(x, w);

    const auto fd_x = finite_difference_grad([&](const Tensor64& xx) { return weighted_sum(block.forward(xx), w); }, x, 1e-5);
    CHECK(oracle::rel_error(bg.input.values(), fd_x.values()) < 1e-7);

    Tensor64 x_copy = x;
    std::vector<Tensor64*> params;
    for (auto& p : block.params()) params.push_back(&p);
    const double err = oracle::worst_param_fd_error([&] { return weighted_sum(block.forward(x_copy), w); },
                                                    params, bg.params);
    CHECK(err < 1e-7);
  }
}

TEST_CASE("block vjp is linear in the upstream gradient") {
  Prng rng(9);
  for (BlockKind kind : {BlockKind::mlp, BlockKind::attention}) {
    const auto block = FBlock<double>::random(kind, 6, 10, rng);
    const auto x = normal_tensor<double>(rng, {3, 5, 6});
    const auto g1 = normal_tensor<double>(rng, x.shape());
    const auto g2 = normal_tensor<double>(rng, x.shape());
    const double a = 0.7, b = -1.3;
    const auto combined = block.vjp(x, add(scaled(g1, a), scaled(g2, b)));
    const auto r1 = block.vjp(x, g1);
    const auto r2 = block.vjp(x, g2);
    CHECK(oracle::max_abs_diff(combined.input.values(), add(scaled(r1.input, a), scaled(r2.input, b)).values()) <= 1e-12);
    for (std::size_t k = 0; k < 4; ++k) {
      const auto expect = add(scaled(r1.params[k], a), scaled(r2.params[k], b));
      CHECK(oracle::max_abs_diff(combined.params[k].values(), expect.values()) <= 1e-12);
    }
  }
}

TEST_CASE("traced vjp equals re-evaluated vjp") {
  Prng rng(10);
  const auto block = FBlock<double>::random(BlockKind::attention, 6, 10, rng);
  const auto x = normal_tensor<double>(rng, {2, 4, 6});
  const auto g = normal_tensor<double>(rng, x.shape());
  BlockTrace<double> trace;
  block.forward(x, trace);
  CHECK(trace.internals.size() == 5);
  const auto a = block.vjp(x, trace, g);
  const auto b = block.vjp(x, g);
  CHECK(a.input == b.input);
  CHECK(a.params == b.params);
}

TEST_CASE("G wrapper") {
  Prng rng(11);
  const auto v = normal_tensor<double>(rng, {4, 6});
  const auto zero = FBlock<double>::zeros(BlockKind::mlp, 6, 8);
  const Tensor64 half = g_apply(zero, 0.5, v);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(half[i] == 0.5 * v[i]);

  const auto block = FBlock<double>::random(BlockKind::attention, 6, 8, rng);
  CHECK(g_apply(block, 0.0, v) == block.forward(v));

  const Tensor64 g1 = g_apply(block, 1.0, v);
  const auto ref = oracle::block_forward(block, oracle::widen(v), 4);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(g1[i] == doctest::Approx(static_cast<double>(ref[i]) + v[i]).epsilon(1e-14));
  const Tensor64 f = block.forward(v);
  for (std::size_t i = 0; i < v.size(); ++i) REQUIRE(g1[i] == f[i] + v[i]);
}

TEST_CASE("interleaved stages start with attention") {
  NetworkConfig c;
  CHECK(c.kind_at(0) == BlockKind::attention);
  CHECK(c.kind_at(1) == BlockKind::mlp);
  CHECK(c.kind_at(4) == BlockKind::attention);
  c.pattern = BlockPattern::mlp;
  CHECK(c.kind_at(0) == BlockKind::mlp);
  c.pattern = BlockPattern::attention;
  CHECK(c.kind_at(1) == BlockKind::attention);
  CHECK(parse_block_pattern("interleaved") == BlockPattern::interleaved);
  CHECK_THROWS_AS(parse_block_pattern("conv"), ConfigError);

  Prng rng(12);
  const auto bb = Backbone<double>::random(small_config(2, 4), rng);
  for (const auto& stage : bb.stages)
    for (std::size_t i = 0; i < stage.size(); ++i) CHECK(stage[i].kind() == (i % 2 ? BlockKind::mlp : BlockKind::attention));
  CHECK(bb.transitions.size() == 1);
}

TEST_CASE("skip-only network reduces to the head on mean tokens") {
  auto bb = Backbone<double>::zeros(small_config(2, 3));
  Prng rng(13);
  bb.head = normal_tensor<double>(rng, {6, 4});
  PlainResidualNetwork<double> net(bb);
  const auto x = normal_tensor<double>(rng, {2, 3, 6});
  const Tensor64 expected = linear(mean_tokens(x), bb.head);
  CHECK(net.logits(x) == expected);
  CHECK(net.forward(x).logits == expected);
}

TEST_CASE("a zero block adds nothing: depth 1 equals depth 0") {
  Prng rng(14);
  auto deep = Backbone<double>::zeros(small_config(1, 1));
  auto shallow = Backbone<double>::zeros(small_config(1, 0));
  deep.head = shallow.head = normal_tensor<double>(rng, {6, 4});
  const auto x = normal_tensor<double>(rng, {3, 6});
  CHECK(PlainResidualNetwork<double>(deep).logits(x) == PlainResidualNetwork<double>(shallow).logits(x));
}

TEST_CASE("plain forward is reproducible bit for bit") {
  auto run = [] {
    Prng rng(15);
    const auto bb = Backbone<double>::random(small_config(1, 4), rng);
    const auto x = normal_tensor<double>(rng, {2, 3, 6});
    return PlainResidualNetwork<double>(bb).forward(x).logits;
  };
  CHECK(run() == run());
}

TEST_CASE("plain network checks its input") {
  const PlainResidualNetwork<double> net(Backbone<double>::zeros(small_config(1, 2)));
  CHECK_THROWS_AS(net.logits(Tensor64({2, 3, 5})), ShapeError);
  CHECK_THROWS_AS(net.logits(Tensor64({2, 4, 6})), ShapeError);
  CHECK_NOTHROW(net.logits(Tensor64({3, 6})));
}

TEST_CASE("plain backprop: zero upstream, skip path, stale cache") {
  Prng rng(16);
  const auto bb = Backbone<double>::random(small_config(2, 2), rng);
  PlainResidualNetwork<double> net(bb);
  const auto x = normal_tensor<double>(rng, {2, 3, 6});
  const auto fwd = net.forward(x);
  const auto g0 = net.backprop(fwd.cache, Tensor64({2, 4}));
  for (const auto& p : g0.params)
    for (double v : p.values()) REQUIRE(v == 0.0);
  for (double v : g0.input.values()) REQUIRE(v == 0.0);

  // F = 0, identity transition and head: sum of logits = sum of mean tokens.
  NetworkConfig sq = small_config(2, 3);
  sq.classes = sq.width;
  auto skip = Backbone<double>::zeros(sq);
  skip.head = Tensor64::identity(sq.width);
  PlainResidualNetwork<double> linear_net(skip);
  const auto f2 = linear_net.forward(x);
  const auto g = linear_net.backprop(f2.cache, Tensor64::full({2, sq.width}, 1.0));
  for (double v : g.input.values()) CHECK(v == doctest::Approx(1.0 / sq.seq_len).epsilon(1e-15));

  PlainResidualNetwork<double> other(Backbone<double>::random(small_config(1, 2), rng));
  CHECK_THROWS_AS(other.backprop(fwd.cache, Tensor64({2, 4})), ShapeError);
  CHECK_THROWS_AS(net.backprop(fwd.cache, Tensor64({2, 5})), ShapeError);
}

TEST_CASE("plain backprop matches finite differences") {
  Prng rng(17);
  auto bb = Backbone<double>::random(small_config(2, 2), rng);
  for (auto& stage : bb.stages)
    for (auto& block : stage)
      if (block.kind() == BlockKind::mlp) block.params()[1] = normal_tensor<double>(rng, {block.hidden()}, 0.2);
  PlainResidualNetwork<double> net(bb);
  const auto x = normal_tensor<double>(rng, {2, 3, 6});
  const auto fwd = net.forward(x);
  const auto grads = net.backprop(fwd.cache, Tensor64::full(fwd.logits.shape(), 1.0));

  const auto fd_x = finite_difference_grad([&](const Tensor64& xx) { return oracle::logit_sum(net.logits(xx)); }, x, 1e-5);
  CHECK(oracle::rel_error(grads.input.values(), fd_x.values()) < 1e-5);
  const double err = oracle::worst_param_fd_error([&] { return oracle::logit_sum(net.logits(x)); },
                                                  net.backbone().parameters(), grads.params);
  CHECK(err < 1e-5);
}

TEST_CASE("checkpoint round trip is byte identical") {
  Prng rng(18);
  const auto bb = Backbone<double>::random(small_config(2, 3), rng);
  const Checkpoint ckpt = make_checkpoint(bb);
  const std::string first = to_text(ckpt);
  CHECK(first.rfind(std::string(kCheckpointHeader) + "\n", 0) == 0);
  CHECK(first.find("stage0.block0.Wq dims 6 6 :") != std::string::npos);

  std::istringstream in(first);
  const Checkpoint back = read_checkpoint(in);
  CHECK(back == ckpt);
  CHECK(to_text(back) == first);

  const auto rebuilt = backbone_from_checkpoint<double>(back, bb.config);
  const auto orig = bb.parameters();
  const auto copy = rebuilt.parameters();
  for (std::size_t i = 0; i < orig.size(); ++i) REQUIRE(*orig[i] == *copy[i]);

  const std::string path = "blocks_roundtrip.ckpt";
  save_checkpoint(path, ckpt);
  CHECK(to_text(load_checkpoint(path)) == first);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects mismatched topology with a detailed diff") {
  Prng rng(19);
  const Checkpoint ckpt = make_checkpoint(Backbone<double>::random(small_config(2, 3), rng));
  NetworkConfig other = small_config(2, 4);
  other.width = 8;
  try {
    backbone_from_checkpoint<double>(ckpt, other);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("model.width") != std::string::npos);
    CHECK(msg.find("model.depth_per_stage") != std::string::npos);
  }
  std::istringstream bad("not a checkpoint\n");
  CHECK_THROWS_AS(read_checkpoint(bad), ConfigError);
  std::string text = to_text(ckpt);
  std::istringstream truncated(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(read_checkpoint(truncated), ConfigError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.ckpt"), ConfigError);
}

TEST_CASE("f32 backbones round trip through the f64 checkpoint") {
  Prng rng(20);
  const auto bb = Backbone<float>::random(small_config(1, 2), rng);
  const auto back = backbone_from_checkpoint<float>(make_checkpoint(bb));
  const auto a = bb.parameters();
  const auto b = back.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(*a[i] == *b[i]);
}
