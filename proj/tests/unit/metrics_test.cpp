#include "fedobp/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "test_util.hpp"

namespace fedobp {
namespace {

using testing::logistic;

// Logistic model whose classifier bias makes class 0 win every sample.
ParamVector always_class_zero(const ModelSpec& spec) {
  ParamVector p(spec.make_layout());
  const LayerInfo& cls = p.layout()->classifier();
  p[cls.end - spec.num_classes] = 1.0;
  return p;
}

TEST(EvaluateClient, ConstantPredictor) {
  const ModelSpec spec = logistic(4, 3);
  Dataset d = synth_dataset(3, 5, 1, 1, 4, 0.1, 1);
  const ClientDataset zeros{0, {}, {0, 1, 2, 3, 4}};
  const ClientDataset others{0, {}, {5, 6, 10, 14}};
  EXPECT_EQ(evaluate_client(always_class_zero(spec), spec, d, zeros), 1.0);
  EXPECT_EQ(evaluate_client(always_class_zero(spec), spec, d, others), 0.0);
}

TEST(EvaluateClient, TiesGoToLowestClass) {
  const ModelSpec spec = logistic(4, 3);
  const Dataset d = synth_dataset(3, 5, 1, 1, 4, 0.1, 1);
  const ParamVector zero(spec.make_layout());
  EXPECT_EQ(evaluate_client(zero, spec, d, {0, {}, {0, 1, 2}}), 1.0);
  EXPECT_EQ(evaluate_client(zero, spec, d, {0, {}, {5, 6}}), 0.0);
}

TEST(EvaluateClient, RandomLabelsNearChance) {
  const ModelSpec spec = testing::tiny_cnn();
  Dataset d = synth_dataset(3, 400, 1, 6, 6, 0.5, 2);
  d.labels = testing::random_labels(d.size(), 3, 9);
  const ClientDataset all{0, {}, testing::iota_indices(0, d.size())};
  const double acc = evaluate_client(init_params(spec, 4), spec, d, all);
  const double sigma = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / 1200.0);
  EXPECT_NEAR(acc, 1.0 / 3.0, 3 * sigma);
}

TEST(EvaluateClient, RejectsEmptyTestSplit) {
  const ModelSpec spec = logistic(4, 3);
  const Dataset d = synth_dataset(3, 5, 1, 1, 4, 0.1, 1);
  EXPECT_THROW(evaluate_client(ParamVector(spec.make_layout()), spec, d, {0, {0}, {}}),
               std::invalid_argument);
}

TEST(LayerDistribution, Cases) {
  const LayerLayout layout({{"fc1", 0, 4, LayerKind::kFc, false},
                            {"classifier", 4, 8, LayerKind::kFc, true}});
  const auto cls = layer_distribution(MaskPartition::from_flags({0, 0, 0, 0, 1, 1, 0, 1}), layout);
  EXPECT_EQ(cls, (std::vector<std::pair<std::string, double>>{{"fc1", 0.0}, {"classifier", 1.0}}));
  const auto none = layer_distribution(MaskPartition::all_shared(8), layout);
  EXPECT_EQ(none, (std::vector<std::pair<std::string, double>>{{"fc1", 0.0}, {"classifier", 0.0}}));
  const auto half = layer_distribution(MaskPartition::from_flags({0, 1, 0, 0, 0, 0, 1, 0}), layout);
  EXPECT_EQ(half, (std::vector<std::pair<std::string, double>>{{"fc1", 0.5}, {"classifier", 0.5}}));
  EXPECT_THROW(layer_distribution(MaskPartition::all_shared(7), layout), std::invalid_argument);
}

TEST(LayerDistribution, PoolsMasks) {
  const LayerLayout layout({{"fc1", 0, 2, LayerKind::kFc, false},
                            {"classifier", 2, 4, LayerKind::kFc, true}});
  const std::vector<MaskPartition> masks{MaskPartition::from_flags({1, 0, 0, 0}),
                                         MaskPartition::from_flags({0, 0, 1, 1}),
                                         MaskPartition::all_shared(4)};
  const auto d = layer_distribution(masks, layout);
  EXPECT_DOUBLE_EQ(d[0].second, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(d[1].second, 2.0 / 3.0);
}

RunRecord run_with_final(RngSeed seed, double acc) {
  RunRecord r;
  r.seed = seed;
  RoundMetrics m;
  m.round = 1;
  m.mean_acc = acc;
  r.rounds.push_back(m);
  return r;
}

TEST(SummarizeRuns, Cases) {
  const RunSummary one = summarize_runs({run_with_final(1, 0.7)});
  EXPECT_EQ(one.final_mean, 0.7);
  EXPECT_EQ(one.final_std, 0.0);
  const RunSummary two = summarize_runs({run_with_final(1, 0.8), run_with_final(2, 0.9)});
  EXPECT_NEAR(two.final_mean, 0.85, 1e-15);
  EXPECT_NEAR(two.final_std, 0.0707106781186548, 1e-12);
  const RunSummary swapped = summarize_runs({run_with_final(2, 0.9), run_with_final(1, 0.8)});
  EXPECT_EQ(two, swapped);
  EXPECT_THROW(summarize_runs({}), std::invalid_argument);
}

std::vector<RoundMetrics> random_rounds(unsigned seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RoundMetrics> rounds;
  for (int t = 1; t <= 5; ++t) {
    RoundMetrics m;
    m.round = t;
    m.mean_acc = u(eng);
    m.std_acc = u(eng) / 3.0;
    m.downlink_ratio = u(eng);
    m.train_loss_mean = u(eng) * 2.3;
    for (int c = 0; c < 4; ++c) m.per_client_acc.push_back(u(eng));
    m.personalized_fraction_by_layer = {{"conv1", u(eng)}, {"classifier", u(eng)}};
    rounds.push_back(m);
  }
  return rounds;
}

TEST(MetricsCsv, RoundTripsExactly) {
  for (unsigned seed = 0; seed < 10; ++seed) {
    const std::vector<RoundMetrics> rounds = random_rounds(seed);
    std::stringstream metrics, per_client;
    write_metrics_csv(metrics, rounds);
    write_per_client_csv(per_client, rounds);
    std::vector<RoundMetrics> back = read_metrics_csv(metrics);
    read_per_client_csv(per_client, back);
    EXPECT_EQ(back, rounds);
  }
}

TEST(MetricsCsv, HeaderAndErrors) {
  std::stringstream ss;
  write_metrics_csv(ss, random_rounds(1));
  std::string header;
  std::getline(ss, header);
  EXPECT_EQ(header, "round,mean_acc,std_acc,downlink_ratio,train_loss_mean,frac_conv1,frac_classifier");
  std::stringstream bad_header("round,acc\n");
  EXPECT_THROW(read_metrics_csv(bad_header), std::runtime_error);
  std::stringstream ragged("round,mean_acc,std_acc,downlink_ratio,train_loss_mean\n1,0.5\n");
  EXPECT_THROW(read_metrics_csv(ragged), std::runtime_error);
  std::stringstream bad_number("round,mean_acc,std_acc,downlink_ratio,train_loss_mean\n1,x,0,0,0\n");
  EXPECT_THROW(read_metrics_csv(bad_number), std::runtime_error);
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1.0), "1");
  const double x = 0.1 + 0.2;
  EXPECT_EQ(std::stod(format_double(x)), x);
}

}  // namespace
}  // namespace fedobp
