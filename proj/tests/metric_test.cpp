#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "grad_check.hpp"
#include "test_util.hpp"
#include "xview/metric.hpp"

namespace xview {
namespace {

DistanceMatrix matrix(std::size_t n, std::vector<double> v) { return DistanceMatrix(n, n, std::move(v)); }

TEST(PairwiseDistance, ExactCropsGiveZeroDiagonal) {
  std::mt19937_64 rng(1);
  std::vector<FeatureMap<float>> aerial, ground;
  for (std::size_t i = 0; i < 4; ++i) {
    aerial.push_back(testing::random_tensor(4, 32, 8, rng));
    ground.push_back(circular_column_crop(aerial.back(), 3 * i, 12));
  }
  const auto d = pairwise_distance_matrix<float>(ground, aerial);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_LT(d(i, i), 1e-6);
    EXPECT_EQ(d.shifts[i * 4 + i], 3 * i);
  }
}

TEST(PairwiseDistance, MatchesElementwiseOracle) {
  std::mt19937_64 rng(2);
  std::vector<FeatureMap<double>> aerial, ground;
  for (int i = 0; i < 3; ++i) {
    aerial.push_back(testing::random_tensor<double>(2, 16, 4, rng));
    ground.push_back(testing::random_tensor<double>(2, 6, 4, rng));
  }
  const auto d = pairwise_distance_matrix<double>(ground, aerial);
  for (std::size_t q = 0; q < 3; ++q)
    for (std::size_t g = 0; g < 3; ++g) {
      const auto naive = correlate_naive(aerial[g], ground[q]);
      const auto shift = estimate_orientation(naive).best_shift;
      EXPECT_NEAR(d(q, g), aligned_distance(aerial[g], ground[q], shift), 1e-12);
    }
  std::vector<FeatureMap<double>> one_a{aerial[0]}, one_g{ground[0]};
  const auto single = pairwise_distance_matrix<double>(one_g, one_a);
  EXPECT_EQ(single.rows, 1u);
  EXPECT_NEAR(single(0, 0), match_pair(aerial[0], ground[0]).distance, 0.0);
  EXPECT_THROW(pairwise_distance_matrix<double>({}, one_a), ShapeError);
}

TEST(TripletLoss, EqualEntriesGiveLog2) {
  EXPECT_NEAR(soft_margin_triplet_loss(matrix(3, std::vector<double>(9, 0.7)), 10.0), std::log(2.0), 1e-15);
}

TEST(TripletLoss, MarginOfOne) {
  // diagonal 0.2, off-diagonal 1.2: every term is log(1 + e^-10)
  std::vector<double> v(16, 1.2);
  for (int i = 0; i < 4; ++i) v[i * 4 + i] = 0.2;
  const double expected = std::log1p(std::exp(-10.0));
  EXPECT_NEAR(soft_margin_triplet_loss(matrix(4, v), 10.0), expected, 1e-15);
  EXPECT_NEAR(expected, 4.5399e-5, 1e-9);
}

TEST(TripletLoss, VanishingGammaTendsToLog2) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 2);
  std::vector<double> v(25);
  for (auto& x : v) x = u(rng);
  EXPECT_NEAR(soft_margin_triplet_loss(matrix(5, v), 1e-9), std::log(2.0), 1e-8);
}

TEST(TripletLoss, PositiveMonotoneAndPermutationInvariant) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial % 5;
    std::vector<double> v(n * n);
    for (auto& x : v) x = u(rng);
    const auto d = matrix(n, v);
    const double loss = soft_margin_triplet_loss(d, 10.0);
    EXPECT_GT(loss, 0.0);

    auto pushed = d;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) pushed(i, j) += 0.1;
    EXPECT_LT(soft_margin_triplet_loss(pushed, 10.0), loss);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    DistanceMatrix p(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) p(i, j) = d(perm[i], perm[j]);
    EXPECT_NEAR(soft_margin_triplet_loss(p, 10.0), loss, 1e-12);
  }
}

TEST(TripletLoss, Errors) {
  EXPECT_THROW(soft_margin_triplet_loss(DistanceMatrix(2, 3), 10.0), ShapeError);
  EXPECT_THROW(soft_margin_triplet_loss(DistanceMatrix(1, 1), 10.0), ShapeError);
  EXPECT_THROW(soft_margin_triplet_loss(DistanceMatrix(2, 2), 0.0), ConfigError);
}

TEST(TripletLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 2);
  std::vector<double> v(16);
  for (auto& x : v) x = u(rng);
  auto d = matrix(4, v);
  const auto g = soft_margin_triplet_loss_gradient(d, 10.0);
  for (std::size_t k = 0; k < 16; ++k) {
    const double saved = d.values[k];
    d.values[k] = saved + 1e-6;
    const double up = soft_margin_triplet_loss(d, 10.0);
    d.values[k] = saved - 1e-6;
    const double down = soft_margin_triplet_loss(d, 10.0);
    d.values[k] = saved;
    EXPECT_NEAR(g[k], (up - down) / 2e-6, 1e-7);
  }
}

TEST(AlignedDistanceBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const auto fs = testing::random_tensor<double>(2, 10, 3, rng);
  const auto fg = testing::random_tensor<double>(2, 4, 3, rng);
  const std::size_t shift = 8;  // wraps around
  FeatureMap<double> ga(2, 10, 3), gg(2, 4, 3);
  aligned_distance_backward(fs, fg, shift, 1.0, ga, gg);
  auto a = fs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double s = a.storage()[i];
    a.storage()[i] = s + 1e-6;
    const double up = aligned_distance(a, fg, shift);
    a.storage()[i] = s - 1e-6;
    const double down = aligned_distance(a, fg, shift);
    a.storage()[i] = s;
    EXPECT_NEAR(ga.storage()[i], (up - down) / 2e-6, 1e-7);
  }
  auto g = fg;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double s = g.storage()[i];
    g.storage()[i] = s + 1e-6;
    const double up = aligned_distance(fs, g, shift);
    g.storage()[i] = s - 1e-6;
    const double down = aligned_distance(fs, g, shift);
    g.storage()[i] = s;
    EXPECT_NEAR(gg.storage()[i], (up - down) / 2e-6, 1e-7);
  }
}

TEST(LossGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  const auto cfg = reduced_network_config(4, 2);
  MatchingNetwork<double> net(cfg, random_network_weights(cfg, 7));
  const auto batch = testing::random_batch(3, 8, 16, 12, rng);
  const auto check = testing::check_gradients(net, batch, 10.0);
  EXPECT_EQ(check.relative_error.size(), 12u);
  EXPECT_TRUE(check.shifts_agree);
  EXPECT_LT(check.loss_difference, 1e-12);
  for (const auto& [name, err] : check.relative_error) EXPECT_LT(err, 1e-4) << name;
}

TEST(LossGradients, FrozenTensorsAbsent) {
  std::mt19937_64 rng(8);
  auto cfg = reduced_network_config(4, 2);
  for (auto* b : {&cfg.ground, &cfg.aerial, &cfg.mask}) b->frozen_convs = 1;
  MatchingNetwork<double> net(cfg, random_network_weights(cfg, 8));
  const auto batch = testing::random_batch(3, 8, 16, 16, rng);
  const auto g = loss_gradients<double>(net, batch, 10.0);
  for (const auto& name : net.frozen_tensor_names()) EXPECT_FALSE(g.gradients.contains(name)) << name;
  EXPECT_TRUE(g.gradients.contains("ground.conv2.weight"));
  EXPECT_EQ(g.gradients.size(), 6u);
}

TEST(Adam, ZeroLearningRateLeavesWeightsUnchanged) {
  std::mt19937_64 rng(9);
  const auto cfg = reduced_network_config(4, 2);
  MatchingNetwork<double> net(cfg, random_network_weights(cfg, 9));
  const auto before = net.export_weights();
  const auto batch = testing::random_batch(2, 8, 16, 16, rng);
  AdamState state;
  adam_step(net, loss_gradients<double>(net, batch, 10.0).gradients, state, 0.0);
  EXPECT_EQ(net.export_weights(), before);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  const auto cfg = reduced_network_config(2, 1);
  MatchingNetwork<double> net(cfg, random_network_weights(cfg, 1));
  GradientBundle<double> g;
  g["ground.conv2.bias"] = {3.0, -0.5};
  const double before0 = net.ground().convs()[1].bias[0];
  AdamState state;
  adam_step(net, g, state, 0.01);
  // m_hat = g, v_hat = g^2 on the first step: update = lr * sign(g) (up to epsilon)
  EXPECT_NEAR(net.ground().convs()[1].bias[0], before0 - 0.01, 1e-9);
  EXPECT_NEAR(net.ground().convs()[1].bias[1], 0.01, 1e-8);
}

std::vector<TrainingSample<float>> toy_samples(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainingSample<float>> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto aerial = testing::random_tensor(8, 32, 3, rng);
    out.push_back({"s" + std::to_string(i), roll_columns(aerial, i), aerial, testing::random_tensor(8, 32, 3, rng)});
  }
  return out;
}

TEST(Train, RejectsBadConfigAndEmptyData) {
  const auto cfg = reduced_network_config(4, 2);
  MatchingNetwork<float> net(cfg, random_network_weights(cfg, 0));
  TrainConfig tc;
  tc.epochs = 0;
  const auto data = toy_samples(4, 0);
  EXPECT_THROW(train<float>(net, data, tc), ConfigError);
  tc.epochs = 1;
  EXPECT_THROW(train<float>(net, std::span<const TrainingSample<float>>{}, tc), ConfigError);
  tc.learning_rate = 0.0;
  EXPECT_THROW(train<float>(net, data, tc), ConfigError);
}

TEST(Train, DeterministicPerSeed) {
  const auto cfg = reduced_network_config(4, 2);
  const auto data = toy_samples(6, 1);
  TrainConfig tc;
  tc.epochs = 3;
  tc.learning_rate = 1e-3;
  tc.batch_size = 4;
  tc.fov_deg = 180;
  auto run = [&](std::uint64_t seed) {
    tc.seed = seed;
    MatchingNetwork<float> net(cfg, random_network_weights(cfg, 3));
    auto r = train<float>(net, data, tc);
    return std::pair{r.epoch_losses, net.export_weights()};
  };
  const auto a = run(5), b = run(5), c = run(6);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_NE(a.first, c.first);
  EXPECT_EQ(a.first.size(), 3u);
}

TEST(Train, FrozenPrefixIsBitwiseUnchanged) {
  auto cfg = default_network_config(16, 32);
  MatchingNetwork<float> net(cfg, random_network_weights(cfg, 2));
  const auto frozen = net.frozen_tensor_names();
  ASSERT_EQ(frozen.size(), 3u * 7u * 2u);
  const auto before = bundle_checksum(net.export_weights(), frozen);
  std::mt19937_64 rng(2);
  std::vector<TrainingSample<float>> data;
  for (int i = 0; i < 3; ++i) {
    data.push_back({"s" + std::to_string(i), testing::random_tensor(32, 64, 3, rng), testing::random_tensor(32, 64, 3, rng),
                    testing::random_tensor(32, 64, 3, rng)});
  }
  TrainConfig tc;
  tc.epochs = 2;
  tc.learning_rate = 1e-2;
  tc.batch_size = 3;
  const auto trainable_before = net.export_weights().at("ground.conv5_3.weight");
  train<float>(net, data, tc);
  EXPECT_EQ(bundle_checksum(net.export_weights(), frozen), before);
  EXPECT_NE(net.export_weights().at("ground.conv5_3.weight"), trainable_before);
}

TEST(Checkpoint, RoundTripsWeightsAndOptimizerState) {
  const auto dir = std::filesystem::temp_directory_path() / "xview_checkpoint_test";
  std::filesystem::remove_all(dir);
  const auto cfg = reduced_network_config(4, 2);
  MatchingNetwork<float> net(cfg, random_network_weights(cfg, 4));
  TrainConfig tc;
  tc.epochs = 1;
  tc.learning_rate = 1e-3;
  tc.batch_size = 2;
  const auto data = toy_samples(4, 4);
  const auto r = train<float>(net, data, tc);
  save_checkpoint(net, r.optimizer, dir / "ckpt.sanw");
  EXPECT_EQ(load_bundle(dir / "ckpt.sanw"), net.export_weights());
  const auto state = load_optimizer_state(dir / "ckpt.sanw");
  EXPECT_EQ(state.step, r.optimizer.step);
  EXPECT_EQ(state.first_moment.size(), r.optimizer.first_moment.size());
  const auto& m = r.optimizer.first_moment.at("ground.conv1.weight");
  const auto& m2 = state.first_moment.at("ground.conv1.weight");
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m2[i], static_cast<double>(static_cast<float>(m[i])));

  write_loss_history(dir / "loss.csv", r.epoch_losses);
  EXPECT_EQ(read_loss_history(dir / "loss.csv"), r.epoch_losses);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace xview
