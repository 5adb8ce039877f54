#include "fedobp/federation.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "fedobp/training.hpp"
#include "test_util.hpp"

namespace fedobp {
namespace {

using testing::logistic;
using testing::tiny_cnn;

struct World {
  ModelSpec spec = tiny_cnn();
  Dataset data = synth_dataset(3, 40, 1, 6, 6, 0.3, 2);
  PartitionPlan plan;

  explicit World(std::size_t clients, double alpha = 0.5, RngSeed seed = 1) {
    plan = split_train_test(dirichlet_partition(data, clients, alpha, seed, 2), data, 0.25, seed);
  }

  RoundConfig config(const MethodSpec& method, double gamma, RngSeed seed = 3) const {
    RoundConfig rc;
    rc.spec = spec;
    rc.method = method;
    rc.hyper = {0.1, 1, 8};
    rc.gamma = gamma;
    rc.seed = seed;
    return rc;
  }
};

LayoutPtr flat(std::size_t n) {
  return std::make_shared<const LayerLayout>(
      std::vector<LayerInfo>{{"classifier", 0, n, LayerKind::kFc, true}});
}

TEST(SampleClients, SizesAndDeterminism) {
  EXPECT_EQ(sample_clients(7, 1.0, 3, 1), (std::vector<int>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(sample_clients(100, 0.1, 1, 1).size(), 10u);
  EXPECT_EQ(sample_clients(3, 0.01, 1, 1).size(), 1u);
  EXPECT_EQ(sample_clients(100, 0.1, 5, 9), sample_clients(100, 0.1, 5, 9));
  EXPECT_NE(sample_clients(100, 0.1, 5, 9), sample_clients(100, 0.1, 6, 9));
  const auto s = sample_clients(50, 0.3, 2, 4);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
  EXPECT_THROW(sample_clients(5, 0.0, 1, 1), std::invalid_argument);
  EXPECT_THROW(sample_clients(5, 1.5, 1, 1), std::invalid_argument);
}

TEST(SampleClients, RoughlyUniform) {
  std::vector<int> hits(20, 0);
  for (int r = 1; r <= 2000; ++r) {
    for (int c : sample_clients(20, 0.25, r, 7)) ++hits[static_cast<std::size_t>(c)];
  }
  // Expected 500 per client; binomial sd ~19.
  for (int h : hits) EXPECT_NEAR(h, 500, 100);
}

TEST(Aggregate, Examples) {
  const LayoutPtr l = flat(2);
  const std::vector<ParamVector> two{ParamVector(l, {0, 0}), ParamVector(l, {4, 8})};
  const std::vector<std::size_t> w13{1, 3};
  EXPECT_EQ(aggregate(two, w13), ParamVector(l, {3, 6}));
  const std::vector<std::size_t> equal{5, 5};
  EXPECT_EQ(aggregate(two, equal), ParamVector(l, {2, 4}));
  const std::vector<ParamVector> one{ParamVector(l, {0.1, -7.3})};
  const std::vector<std::size_t> w{9};
  EXPECT_EQ(aggregate(one, w), one[0]);
}

TEST(Aggregate, Rejects) {
  const LayoutPtr l = flat(2);
  const std::vector<ParamVector> none;
  const std::vector<std::size_t> no_counts;
  EXPECT_THROW(aggregate(none, no_counts), std::invalid_argument);
  const std::vector<ParamVector> mixed{ParamVector(l, {0, 0}), ParamVector(flat(3), {0, 0, 0})};
  const std::vector<std::size_t> c2{1, 1};
  EXPECT_THROW(aggregate(mixed, c2), std::invalid_argument);
  const std::vector<ParamVector> ok{ParamVector(l, {0, 0})};
  EXPECT_THROW(aggregate(ok, c2), std::invalid_argument);
}

TEST(Aggregate, StaysInsideBox) {
  const LayoutPtr l = flat(200);
  std::mt19937_64 eng(2);
  std::normal_distribution<double> n(0.0, 1e3);
  std::uniform_int_distribution<std::size_t> cnt(1, 1000);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ParamVector> models;
    std::vector<std::size_t> counts;
    for (int i = 0; i < 7; ++i) {
      ParamVector p(l);
      for (double& v : p.values()) v = n(eng);
      models.push_back(p);
      counts.push_back(cnt(eng));
    }
    const ParamVector g = aggregate(models, counts);
    for (std::size_t k = 0; k < 200; ++k) {
      double lo = models[0][k], hi = lo;
      for (const ParamVector& m : models) {
        lo = std::min(lo, m[k]);
        hi = std::max(hi, m[k]);
      }
      EXPECT_GE(g[k], lo);
      EXPECT_LE(g[k], hi);
    }
  }
}

TEST(ServerDecouple, DownlinkSizes) {
  World w(4);
  const ParamVector init = init_params(w.spec, 1);
  auto [server, clients] = init_federation(init, w.plan, MethodSpec::fedavg());
  const std::size_t total = init.size();
  EXPECT_EQ(server_decouple(server, 0, MethodSpec::fedavg()).values.size(), total);
  EXPECT_TRUE(server_decouple(server, 0, MethodSpec::local_only()).values.empty());
  const Downlink fixed = server_decouple(server, 0, MethodSpec::fixed_layer({"classifier"}));
  EXPECT_EQ(fixed.values.size(), total - init.layout()->classifier().size());
  const Downlink sd =
      server_decouple(server, 0, MethodSpec::score_decouple(ScoreKind::kFisher, 0.5));
  EXPECT_TRUE(sd.client_side_mask);
  EXPECT_EQ(sd.values.size(), total);
  // Stored locals equal the global model at start: zero scores, nothing personalized.
  const Downlink obp = server_decouple(server, 0, MethodSpec::fedobp(0.5));
  EXPECT_TRUE(obp.mask.personalized.empty());
  EXPECT_THROW(server_decouple(server, 99, MethodSpec::fedavg()), std::invalid_argument);
}

TEST(ServerDecouple, ObpMaskFollowsCountLaw) {
  World w(3);
  const ParamVector init = init_params(w.spec, 1);
  auto [server, clients] = init_federation(init, w.plan, MethodSpec::fedobp(0.9));
  server.stored_locals[1] = testing::random_params(w.spec, 5);
  const Downlink d = server_decouple(server, 1, MethodSpec::fedobp(0.9));
  const std::size_t n = init.size();
  EXPECT_EQ(d.mask.personalized.size(), n - quantile_rank(Quantile{0.9}, n));
  EXPECT_EQ(apply_downlink(server.stored_locals[1], d),
            merge(server.stored_locals[1], server.global_model, d.mask));
}

TEST(InitFederation, RejectsEmptyClients) {
  World w(3);
  w.plan.clients[1].train_indices.clear();
  EXPECT_THROW(init_federation(init_params(w.spec, 1), w.plan, MethodSpec::fedavg()),
               std::invalid_argument);
}

TEST(RunRound, QOneMatchesFedAvgBitwise) {
  World w(6);
  const ParamVector init = init_params(w.spec, 4);
  auto [s_avg, c_avg] = init_federation(init, w.plan, MethodSpec::fedavg());
  auto [s_obp, c_obp] = init_federation(init, w.plan, MethodSpec::fedobp(1.0));
  for (int t = 0; t < 6; ++t) {
    const RoundReport a = run_round(s_avg, c_avg, w.data, w.config(MethodSpec::fedavg(), 0.5));
    const RoundReport b = run_round(s_obp, c_obp, w.data, w.config(MethodSpec::fedobp(1.0), 0.5));
    ASSERT_EQ(s_avg.global_model, s_obp.global_model) << "round " << t + 1;
    EXPECT_EQ(a.metrics.mean_acc, b.metrics.mean_acc);
    EXPECT_EQ(a.selected, b.selected);
  }
}

TEST(RunRound, FirstObpRoundEqualsFedAvg) {
  World w(5);
  const ParamVector init = init_params(w.spec, 4);
  auto [s_avg, c_avg] = init_federation(init, w.plan, MethodSpec::fedavg());
  auto [s_obp, c_obp] = init_federation(init, w.plan, MethodSpec::fedobp(0.5));
  run_round(s_avg, c_avg, w.data, w.config(MethodSpec::fedavg(), 1.0));
  const RoundReport r = run_round(s_obp, c_obp, w.data, w.config(MethodSpec::fedobp(0.5), 1.0));
  EXPECT_EQ(s_avg.global_model, s_obp.global_model);
  for (const MaskPartition& m : r.masks) EXPECT_TRUE(m.personalized.empty());
}

TEST(RunRound, SingleClientFullParticipationIsIdentity) {
  World w(1);
  auto [server, clients] = init_federation(init_params(w.spec, 1), w.plan, MethodSpec::fedavg());
  run_round(server, clients, w.data, w.config(MethodSpec::fedavg(), 1.0));
  EXPECT_EQ(server.global_model, clients[0].local_model);
}

TEST(RunRound, LocalOnlyEqualsIsolatedTraining) {
  World w(4);
  const ParamVector init = init_params(w.spec, 1);
  auto [server, clients] = init_federation(init, w.plan, MethodSpec::local_only());
  const RoundConfig rc = w.config(MethodSpec::local_only(), 0.5);
  std::vector<ParamVector> isolated(4, init);
  for (int t = 1; t <= 5; ++t) {
    const RoundReport r = run_round(server, clients, w.data, rc);
    for (int id : r.selected) {
      const auto i = static_cast<std::size_t>(id);
      isolated[i] = local_train(isolated[i], rc.spec, w.data, w.plan.clients[i], rc.hyper.eta,
                                rc.hyper.epochs, rc.hyper.batch_size,
                                derive_seed(rc.seed, StreamTag::kTraining, i, static_cast<std::uint64_t>(t)));
    }
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(clients[i].local_model, isolated[i]);
    EXPECT_EQ(r.metrics.downlink_ratio, 0.0);
  }
}

TEST(RunRound, StoredLocalsChangeOnlyForParticipants) {
  World w(6);
  auto [server, clients] = init_federation(init_params(w.spec, 1), w.plan, MethodSpec::fedobp(0.9));
  const RoundConfig rc = w.config(MethodSpec::fedobp(0.9), 0.34);
  for (int t = 0; t < 5; ++t) {
    const auto before = server.stored_locals;
    const RoundReport r = run_round(server, clients, w.data, rc);
    for (const auto& [id, model] : before) {
      const bool selected = std::binary_search(r.selected.begin(), r.selected.end(), id);
      if (!selected) EXPECT_EQ(server.stored_locals.at(id), model);
      if (selected) EXPECT_EQ(server.stored_locals.at(id), clients[static_cast<std::size_t>(id)].local_model);
    }
  }
  EXPECT_EQ(server.round, 5);
}

TEST(RunRound, CommLedgerAndDownlinkRatio) {
  World w(5);
  const MethodSpec obp = MethodSpec::fedobp(0.9);
  auto [server, clients] = init_federation(init_params(w.spec, 1), w.plan, obp);
  for (int t = 0; t < 4; ++t) {
    const RoundReport r = run_round(server, clients, w.data, w.config(obp, 0.6));
    ASSERT_EQ(r.comm.size(), r.selected.size());
    std::size_t shared = 0, total = 0;
    for (std::size_t j = 0; j < r.comm.size(); ++j) {
      const CommRecord& c = r.comm[j];
      EXPECT_EQ(c.round, t + 1);
      EXPECT_EQ(c.client_id, r.selected[j]);
      EXPECT_EQ(c.uplink_params, c.total_params);
      EXPECT_EQ(c.downlink_params, r.masks[j].shared.size());
      shared += c.downlink_params;
      total += c.total_params;
    }
    EXPECT_EQ(r.metrics.downlink_ratio, static_cast<double>(shared) / static_cast<double>(total));
    if (t > 0) EXPECT_GE(r.metrics.downlink_ratio, 0.9 - 1e-12);
  }
}

TEST(RunRound, ScoreMethodsRun) {
  World w(4);
  for (ScoreKind k : {ScoreKind::kFisher, ScoreKind::kGradient}) {
    const MethodSpec m = MethodSpec::score_decouple(k, 0.8);
    auto [server, clients] = init_federation(init_params(w.spec, 1), w.plan, m);
    for (int t = 0; t < 3; ++t) {
      const RoundReport r = run_round(server, clients, w.data, w.config(m, 1.0));
      for (std::size_t j = 0; j < r.masks.size(); ++j) {
        const std::size_t n = r.masks[j].total;
        if (k == ScoreKind::kGradient && t == 0) {
          EXPECT_TRUE(r.masks[j].personalized.empty());  // no history yet
        } else {
          EXPECT_LE(r.masks[j].personalized.size(), n - quantile_rank(Quantile{0.8}, n));
          EXPECT_GT(r.masks[j].personalized.size(), 0u);
        }
      }
      EXPECT_EQ(r.metrics.downlink_ratio, 1.0);
    }
  }
}

TEST(RunRound, ThreadCountDoesNotChangeResults) {
  World w(6);
  const MethodSpec m = MethodSpec::score_decouple(ScoreKind::kFisher, 0.9);
  auto run = [&](int threads) {
    auto [server, clients] = init_federation(init_params(w.spec, 1), w.plan, m);
    RoundConfig rc = w.config(m, 0.5);
    rc.threads = threads;
    std::vector<RoundMetrics> out;
    for (int t = 0; t < 3; ++t) out.push_back(run_round(server, clients, w.data, rc).metrics);
    return std::make_pair(server.global_model, out);
  };
  const auto one = run(1);
  const auto four = run(4);
  EXPECT_EQ(one.first, four.first);
  EXPECT_EQ(one.second, four.second);
}

TEST(RunRound, MetricsAreWellFormed) {
  World w(5);
  const MethodSpec m = MethodSpec::fedobp(0.7);
  auto [server, clients] = init_federation(init_params(w.spec, 1), w.plan, m);
  for (int t = 0; t < 3; ++t) {
    const RoundMetrics r = run_round(server, clients, w.data, w.config(m, 0.6)).metrics;
    EXPECT_EQ(r.per_client_acc.size(), 5u);
    EXPECT_GE(r.mean_acc, 0.0);
    EXPECT_LE(r.mean_acc, 1.0);
    double sum = 0.0;
    for (const auto& [name, f] : r.personalized_fraction_by_layer) sum += f;
    EXPECT_TRUE(sum == 0.0 || std::abs(sum - 1.0) < 1e-12);
  }
}

TEST(VerifyGradientStep, SingleClientOneStepIsExact) {
  const ModelSpec spec = logistic(16, 3);
  const Dataset data = synth_dataset(3, 30, 1, 4, 4, 0.3, 1);
  EXPECT_LE(verify_gradient_step_approx(spec, data, 1, 0.05, 1, 2), 1e-12);
}

TEST(VerifyGradientStep, ScalesQuadraticallyInEta) {
  const ModelSpec spec = logistic(16, 3);
  const Dataset data = synth_dataset(3, 40, 1, 4, 4, 0.3, 1);
  const double a = verify_gradient_step_approx(spec, data, 5, 0.05, 4, 3);
  const double b = verify_gradient_step_approx(spec, data, 5, 0.025, 4, 3);
  EXPECT_GT(a, 0.0);
  EXPECT_GE(a / b, 3.0);
  EXPECT_LE(a / b, 5.0);
}

TEST(VerifyGradientStep, ScalesInLocalSteps) {
  // Leading term grows like E(E-1)/2: from E=4 to E=8 that is 28/6 ~ 4.7.
  const ModelSpec spec = logistic(16, 3);
  const Dataset data = synth_dataset(3, 40, 1, 4, 4, 0.3, 1);
  const double a = verify_gradient_step_approx(spec, data, 5, 0.01, 8, 3);
  const double b = verify_gradient_step_approx(spec, data, 5, 0.01, 4, 3);
  EXPECT_GE(a / b, 3.0);
  EXPECT_LE(a / b, 5.0);
}

TEST(CommCsv, RoundTrips) {
  const std::vector<CommRecord> recs{{1, 0, 10, 12, 12}, {1, 3, 12, 12, 12}, {2, 1, 0, 12, 12}};
  std::stringstream ss;
  write_comm_csv(ss, recs);
  EXPECT_EQ(read_comm_csv(ss), recs);
  std::stringstream bad("round,client_id,downlink_params,uplink_params,total_params\n1;2;3\n");
  EXPECT_THROW(read_comm_csv(bad), std::runtime_error);
}

TEST(ParallelFor, VisitsAllAndRethrows) {
  std::vector<int> seen(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { seen[i] += 1; });
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_THROW(parallel_for(10, 3,
                            [](std::size_t i) {
                              if (i == 7) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}

TEST(MethodSpec, LabelsAndValidation) {
  EXPECT_EQ(MethodSpec::fedobp(0.99).label(), "fedobp(q=0.99,norm=none)");
  EXPECT_EQ(MethodSpec::fedavg().label(), "fedavg");
  EXPECT_EQ(MethodSpec::local_only().label(), "local");
  EXPECT_EQ(MethodSpec::fixed_layer({"classifier"}).label(), "fixed(classifier)");
  EXPECT_EQ(MethodSpec::score_decouple(ScoreKind::kGradient, 0.5).label(),
            "score(gradient,q=0.5,norm=none)");
  EXPECT_THROW(MethodSpec::fedobp(0.0).validate(), std::invalid_argument);
  EXPECT_THROW(MethodSpec::fedobp(0.5, {NormKind::kLayer, true}).validate(), std::invalid_argument);
  EXPECT_FALSE(MethodSpec::fedavg().effective_score().has_value());
  EXPECT_EQ(MethodSpec::fedobp(0.5).effective_score(), ScoreKind::kFedObp);
}

}  // namespace
}  // namespace fedobp
