#include <doctest.h>

#include <cmath>
#include <sstream>

#include "transtailor/nn/model.hpp"
#include "transtailor/nn/serialize.hpp"
#include "transtailor/ops.hpp"
#include "transtailor/rng.hpp"
#include "transtailor/verify.hpp"

using namespace transtailor;
using nn::LayerSpec;

namespace {

Tensor random_batch(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

nn::ModelGraph two_conv(std::uint64_t seed, int f1 = 4, int f2 = 5) {
  return nn::build_model({3, 8, 8},
                         {LayerSpec::conv(f1, 3), LayerSpec::relu(), LayerSpec::maxpool(),
                          LayerSpec::conv(f2, 3), LayerSpec::relu(), LayerSpec::global_avg_pool(),
                          LayerSpec::linear(3)},
                         seed);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

double max_diff(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    worst = std::max(worst, double(std::abs(a.data()[i] - b.data()[i])));
  }
  return worst;
}

}  // namespace

TEST_CASE("vgg-mini layout") {
  const auto m = nn::vgg_mini({3, 16, 16}, 10, 1);
  CHECK(m.filter_counts() == std::vector<int>{32, 64, 128, 128});
  CHECK(m.total_filters() == 352);
  CHECK(m.class_count() == 10);
  CHECK(m.head().weight.shape() == Shape{10, 128});
  CHECK_FALSE(m.any_trainable());
}

TEST_CASE("validate rejects malformed graphs") {
  CHECK_THROWS_AS(nn::build_model({3, 8, 8}, {LayerSpec::conv(4, 3), LayerSpec::linear(2)}, 1),
                  ShapeError);
  CHECK_THROWS_AS(nn::build_model({3, 8, 8}, {LayerSpec::conv(0, 3), LayerSpec::global_avg_pool(),
                                              LayerSpec::linear(2)},
                                  1),
                  ShapeError);
  auto m = two_conv(1);
  m.layers()[3].weight = Tensor({5, 3, 3, 3});
  CHECK_THROWS_AS(m.validate(), ShapeError);
}

TEST_CASE("forward with all-ones factors is bit-identical") {
  const auto m = two_conv(2);
  const auto x = random_batch({2, 3, 8, 8}, 3);
  CHECK(bit_equal(nn::forward(m, x), nn::forward(m, x, nn::ScalingFactors::filled(m, 1.0f, false))));
}

TEST_CASE("zero factor equals a zeroed filter") {
  const auto m = two_conv(4);
  const auto x = random_batch({2, 3, 8, 8}, 5);
  auto factors = nn::ScalingFactors::filled(m, 1.0f, false);
  factors.layers[1].data()[2] = 0.0f;
  nn::ModelGraph dead = m;
  auto& conv = dead.layers()[3];
  const auto per = conv.weight.numel() / conv.weight.dim(0);
  for (std::int64_t j = 0; j < per; ++j) conv.weight.data()[2 * per + j] = 0.0f;
  conv.bias.data()[2] = 0.0f;
  CHECK(max_diff(nn::forward(m, x, factors), nn::forward(dead, x)) == 0.0);
}

TEST_CASE("random factors match weights with factors baked in") {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = two_conv(100 + trial);
    const auto x = random_batch({2, 3, 8, 8}, 200 + trial);
    auto factors = nn::ScalingFactors::filled(m, 1.0f, false);
    nn::ModelGraph baked = m;
    const auto convs = m.conv_layers();
    for (std::size_t c = 0; c < convs.size(); ++c) {
      auto f = factors.layers[c].data();
      auto& layer = baked.layers()[convs[c]];
      const auto per = layer.weight.numel() / layer.weight.dim(0);
      for (std::size_t o = 0; o < f.size(); ++o) {
        f[o] = rng.uniform(-2.0f, 2.0f);
        for (std::int64_t j = 0; j < per; ++j) layer.weight.data()[o * per + j] *= f[o];
        layer.bias.data()[o] *= f[o];
      }
    }
    CHECK(max_diff(nn::forward(m, x, factors), nn::forward(baked, x)) < 1e-5);
  }
}

TEST_CASE("factor length mismatch is rejected") {
  const auto m = two_conv(7);
  auto f = nn::ScalingFactors::filled(two_conv(7, 4, 6), 1.0f, false);
  CHECK_THROWS_AS(nn::forward(m, random_batch({1, 3, 8, 8}, 1), f), ShapeError);
  CHECK_THROWS_AS(nn::forward(m, random_batch({1, 3, 9, 9}, 1)), ShapeError);
}

TEST_CASE("replace_head keeps the trunk and re-initializes the head") {
  const auto m = two_conv(8);
  const auto r = nn::replace_head(m, 7, 9);
  CHECK(r.class_count() == 7);
  CHECK(r.head().weight.shape() == Shape{7, 5});
  for (int i : m.conv_layers()) {
    CHECK(bit_equal(m.layers()[i].weight, r.layers()[i].weight));
    CHECK(bit_equal(m.layers()[i].bias, r.layers()[i].bias));
  }
  const auto same = nn::replace_head(m, 3, 9);
  CHECK_FALSE(bit_equal(same.head().weight, m.head().weight));
  const float bound = 1.0f / std::sqrt(5.0f);
  for (float v : r.head().weight.data()) CHECK(std::abs(v) <= bound);
  CHECK_THROWS_AS(nn::replace_head(m, 1, 9), ContractError);
}

TEST_CASE("flops hand counts") {
  const auto single = nn::build_model({1, 4, 4},
                                      {LayerSpec::conv(1, 1, 1, 0), LayerSpec::global_avg_pool(),
                                       LayerSpec::linear(2)},
                                      1);
  // 2*1*1*1*1*4*4 for the conv plus 2*1*2 for the head.
  CHECK(nn::flops(single) == 32 + 4);

  const auto iso = nn::build_model({2, 5, 5},
                                   {LayerSpec::conv(6, 3), LayerSpec::global_avg_pool(),
                                    LayerSpec::linear(2)},
                                   1);
  const auto conv_flops = [](std::uint64_t cout) { return 2 * cout * 2 * 9 * 25; };
  CHECK(nn::flops(iso) == conv_flops(6) + 2 * 6 * 2);
  const auto pruned = nn::flops_with_filters(iso, {5});
  CHECK(nn::flops(iso) - pruned == conv_flops(6) / 6 + 2 * 2);
}

TEST_CASE("flops recount after pruning the first of two convs") {
  const auto m = two_conv(10);
  // conv1: 3->4 on 8x8, pool to 4x4, conv2: 4->5, head 5->3.
  auto count = [](std::uint64_t f1, std::uint64_t f2) {
    return 2 * f1 * 3 * 9 * 64 + 2 * f2 * f1 * 9 * 16 + 2 * f2 * 3;
  };
  CHECK(nn::flops(m) == count(4, 5));
  CHECK(nn::flops_with_filters(m, {3, 5}) == count(3, 5));
  CHECK(nn::flops_with_filters(m, {3, 5}) < nn::flops(m));
  CHECK(nn::flops_with_filters(m, {4, 4}) == count(4, 4));
}

TEST_CASE("fold_importance") {
  const auto m = two_conv(11);
  const auto x = random_batch({3, 3, 8, 8}, 12);
  SUBCASE("ones leave the model unchanged") {
    const auto folded = nn::fold_importance(m, nn::ImportanceVector::ones(m));
    CHECK(nn::checksum(folded) == nn::checksum(m));
  }
  SUBCASE("zero entry equals masked forward") {
    auto beta = nn::ImportanceVector::ones(m);
    beta.layers[0].data()[1] = 0.0f;
    CHECK(max_diff(nn::forward(nn::fold_importance(m, beta), x), nn::forward(m, x, beta)) == 0.0);
  }
  SUBCASE("random beta") {
    const auto r = verify::fold_equivalence(50, 13);
    CHECK(r.trials == 50);
    CHECK(r.max_abs_diff < 1e-5);
  }
  SUBCASE("negative or mismatched beta is rejected") {
    auto beta = nn::ImportanceVector::ones(m);
    beta.layers[1].data()[0] = -1.0f;
    CHECK_THROWS_AS(nn::fold_importance(m, beta), ContractError);
    CHECK_THROWS_AS(nn::fold_importance(m, nn::ImportanceVector::ones(two_conv(1, 2, 2))),
                    ShapeError);
  }
}

TEST_CASE("checkpoint round trip and manifest") {
  const auto m = nn::vgg_mini({3, 16, 16}, 10, 14);
  std::stringstream buf;
  nn::write_model(m, buf);
  const auto back = nn::read_model(buf);
  CHECK(nn::checksum(back) == nn::checksum(m));
  CHECK(back.filter_counts() == m.filter_counts());

  const auto j = nn::manifest(m);
  CHECK(j.at("conv_layers").get<int>() == 4);
  CHECK(j.at("filters_per_conv_layer").get<std::vector<int>>() == m.filter_counts());
  CHECK(j.at("flops").get<std::uint64_t>() == nn::flops(m));
}

TEST_CASE("corrupted checkpoints are rejected") {
  const auto m = two_conv(15);
  std::stringstream buf;
  nn::write_model(m, buf);
  const std::string bytes = buf.str();

  std::stringstream bad_magic("XXXX" + bytes.substr(4));
  CHECK_THROWS_AS(nn::read_model(bad_magic), DataError);
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(nn::read_model(truncated), DataError);
  std::stringstream empty;
  CHECK_THROWS_AS(nn::read_model(empty), DataError);
}
