#include "fedobp/decouple.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fedobp {
namespace {

LayoutPtr one_layer(std::size_t n) {
  return std::make_shared<const LayerLayout>(
      std::vector<LayerInfo>{{"classifier", 0, n, LayerKind::kFc, true}});
}

ScoreVector scores(std::vector<double> v) {
  const std::size_t n = v.size();
  return {std::move(v), one_layer(n)};
}

ScoreVector distinct_random(std::size_t n, unsigned seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ScoreVector s{std::vector<double>(n), one_layer(n)};
  for (double& v : s.values) v = u(eng);
  return s;
}

// Sort-based oracle: k-th smallest with k = ceil(q n) evaluated in exact decimal.
std::size_t oracle_rank(long long q_millionths, std::size_t n) {
  const long long num = q_millionths * static_cast<long long>(n);
  long long k = (num + 999999) / 1000000;
  return static_cast<std::size_t>(std::clamp<long long>(k, 1, static_cast<long long>(n)));
}

TEST(Quantile, DomainIsHalfOpen) {
  EXPECT_THROW(Quantile{0.0}, std::invalid_argument);
  EXPECT_THROW(Quantile{-0.1}, std::invalid_argument);
  EXPECT_THROW(Quantile{1.0000001}, std::invalid_argument);
  EXPECT_NO_THROW(Quantile{1.0});
  EXPECT_NO_THROW(Quantile{1e-12});
}

TEST(QuantileRank, DecimalLevelsDoNotRoundUp) {
  EXPECT_EQ(quantile_rank(Quantile{0.7}, 10), 7u);
  EXPECT_EQ(quantile_rank(Quantile{0.3}, 10), 3u);
  EXPECT_EQ(quantile_rank(Quantile{0.9}, 100), 90u);
  EXPECT_EQ(quantile_rank(Quantile{0.01}, 1), 1u);
  EXPECT_EQ(quantile_rank(Quantile{1.0}, 17), 17u);
  EXPECT_THROW(quantile_rank(Quantile{0.5}, 0), std::invalid_argument);
}

TEST(QuantileThreshold, Examples) {
  EXPECT_EQ(quantile_threshold(scores({1, 2, 3, 4}), Quantile{0.5}), 2.0);
  EXPECT_EQ(quantile_threshold(scores({3, 1, 4, 2}), Quantile{1.0}), 4.0);
  EXPECT_EQ(quantile_threshold(scores({0, 0, 0, 5}), Quantile{0.75}), 0.0);
  EXPECT_THROW(quantile_threshold(scores({}), Quantile{0.5}), std::invalid_argument);
}

TEST(Partition, StrictGreaterRule) {
  const MaskPartition m = partition(scores({0.1, 0.9, 0.5}), 0.5);
  EXPECT_EQ(m.personalized, (std::vector<std::size_t>{1}));
  EXPECT_EQ(m.shared, (std::vector<std::size_t>{0, 2}));
  EXPECT_TRUE(partition(scores({2, 2, 2}), 2.0).personalized.empty());
  EXPECT_EQ(partition(scores({2, 3, 4}), 1.0).personalized.size(), 3u);
}

TEST(SelectMask, CountLawAgainstSortOracle) {
  for (std::size_t n : {1u, 2u, 7u, 100u, 1000u, 100000u}) {
    const ScoreVector s = distinct_random(n, static_cast<unsigned>(n));
    std::vector<double> sorted = s.values;
    std::sort(sorted.begin(), sorted.end());
    for (long long qm : {1LL, 100000LL, 300000LL, 500000LL, 700000LL, 900000LL, 990000LL,
                         999000LL, 999900LL, 1000000LL}) {
      const double q = static_cast<double>(qm) / 1e6;
      const std::size_t k = oracle_rank(qm, n);
      EXPECT_EQ(quantile_threshold(s, Quantile{q}), sorted[k - 1]) << "n=" << n << " q=" << q;
      const MaskPartition m = select_mask(s, Quantile{q});
      EXPECT_EQ(m.personalized.size(), n - k) << "n=" << n << " q=" << q;
    }
  }
}

TEST(SelectMask, LargeVectorCounts) {
  const ScoreVector s = distinct_random(878538, 1);
  EXPECT_EQ(select_mask(s, Quantile{0.9999}).personalized.size(), 87u);
  EXPECT_EQ(select_mask(s, Quantile{0.7}).personalized.size(), 263561u);
  EXPECT_EQ(select_mask(s, Quantile{0.1}).personalized.size(), 790684u);
}

TEST(SelectMask, CompleteDisjointAndMonotone) {
  const ScoreVector s = distinct_random(500, 4);
  MaskPartition prev = select_mask(s, Quantile{0.05});
  for (double q : {0.1, 0.2, 0.5, 0.8, 0.95, 1.0}) {
    const MaskPartition m = select_mask(s, Quantile{q});
    std::vector<std::size_t> all = m.personalized;
    all.insert(all.end(), m.shared.begin(), m.shared.end());
    std::sort(all.begin(), all.end());
    ASSERT_EQ(all.size(), 500u);
    for (std::size_t k = 0; k < 500; ++k) EXPECT_EQ(all[k], k);
    EXPECT_TRUE(std::includes(prev.personalized.begin(), prev.personalized.end(),
                              m.personalized.begin(), m.personalized.end()));
    prev = m;
  }
  EXPECT_TRUE(prev.personalized.empty());
}

TEST(SelectMask, TiesMayShrinkPersonalizedSet) {
  const MaskPartition m = select_mask(scores({1, 1, 1, 1, 2}), Quantile{0.2});
  EXPECT_EQ(m.personalized, (std::vector<std::size_t>{4}));
}

TEST(Merge, Examples) {
  const LayoutPtr l = one_layer(3);
  const ParamVector local(l, {1, 2, 3});
  const ParamVector global(l, {9, 9, 9});
  EXPECT_EQ(merge(local, global, MaskPartition::from_flags({false, true, false})),
            ParamVector(l, {9, 2, 9}));
  EXPECT_EQ(merge(local, global, MaskPartition::all_shared(3)), global);
  EXPECT_EQ(merge(local, global, MaskPartition::all_personalized(3)), local);
  EXPECT_THROW(merge(local, global, MaskPartition::all_shared(4)), std::invalid_argument);
  EXPECT_THROW(merge(local, ParamVector(one_layer(4), {0, 0, 0, 0}), MaskPartition::all_shared(3)),
               std::invalid_argument);
}

TEST(FixedLayerMask, FedPerAndLgStyle) {
  const LayerLayout layout({{"conv1", 0, 3, LayerKind::kConv, false},
                            {"conv2", 3, 5, LayerKind::kConv, false},
                            {"fc1", 5, 8, LayerKind::kFc, false},
                            {"classifier", 8, 10, LayerKind::kFc, true}});
  EXPECT_EQ(fixed_layer_mask(layout, {"classifier"}).personalized,
            (std::vector<std::size_t>{8, 9}));
  EXPECT_EQ(fixed_layer_mask(layout, {"conv1", "conv2", "fc1"}).shared,
            (std::vector<std::size_t>{8, 9}));
  EXPECT_TRUE(fixed_layer_mask(layout, {}).personalized.empty());
  EXPECT_THROW(fixed_layer_mask(layout, {"fc9"}), std::invalid_argument);
}

TEST(MaskExport, RowsPerPersonalizedIndex) {
  std::ostringstream os;
  write_mask_header(os);
  write_mask_rows(os, 3, 1, MaskPartition::from_flags({true, false, true}));
  EXPECT_EQ(os.str(), "round,client_id,index\n3,1,0\n3,1,2\n");
}

}  // namespace
}  // namespace fedobp
