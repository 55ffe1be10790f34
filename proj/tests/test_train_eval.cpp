#include <gtest/gtest.h>

#include <set>

#include "test_support.hpp"

using namespace dag;
using namespace dag::testing;

namespace {

DatasetBundle small_bundle(std::uint64_t seed = 0, std::size_t length = 400) {
  SyntheticSpec s;
  s.n_exo = 2;
  s.length = length;
  s.seed = seed;
  return DatasetBundle(std::make_shared<const RawDataset>(gen_synthetic(s)), SplitRatios{}, 16, 4);
}

TrainConfig quick_train(std::size_t epochs = 2) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 32;
  t.optimizer.lr = 3e-3;
  return t;
}

std::set<std::string> names_with_grad(const Parameters& ps) {
  std::set<std::string> out;
  for (const auto& p : ps) {
    if (p.tensor.has_grad()) out.insert(p.name);
  }
  return out;
}

std::set<std::string> names_of(const Parameters& ps) {
  std::set<std::string> out;
  for (const auto& p : ps) out.insert(p.name);
  return out;
}

}  // namespace

TEST(Metrics, Examples) {
  const Tensor t = Tensor::zeros({1, 1, 2});
  const EvalReport perfect = evaluate_predictions(t, t);
  EXPECT_EQ(perfect.mse, 0.0);
  EXPECT_EQ(perfect.mae, 0.0);
  const EvalReport r = evaluate_predictions(Tensor({1, 1, 2}, {1, 2}), t);
  EXPECT_DOUBLE_EQ(r.mse, 2.5);
  EXPECT_DOUBLE_EQ(r.mae, 1.5);
  EXPECT_EQ(r.mse_per_step, (std::vector<double>{1.0, 4.0}));
  EXPECT_EQ(r.mae_per_step, (std::vector<double>{1.0, 2.0}));
  EXPECT_THROW(evaluate_predictions(Tensor::zeros({1, 1, 2}), Tensor::zeros({1, 1, 3})), DimensionError);
}

TEST(Evaluate, InvariantToBatchPartition) {
  const DatasetBundle data = small_bundle();
  const DagModel m(tiny_config());
  const WindowSet te = data.test();
  const EvalReport all = evaluate(m, te, 1000);
  EXPECT_EQ(all.windows, te.size());
  for (std::size_t bs : {1, 7, 33}) {
    const EvalReport r = evaluate(m, te, bs);
    EXPECT_EQ(r.windows, te.size());
    EXPECT_NEAR(r.mse, all.mse, 1e-12 * all.mse);
    EXPECT_NEAR(r.mae, all.mae, 1e-12 * all.mae);
  }
}

TEST(Evaluate, EmptySetsAreContractErrors) {
  DagModel m(tiny_config());
  const WindowSet none;
  EXPECT_THROW(evaluate(m, none), ContractError);
  EXPECT_THROW(train(m, none, nullptr, quick_train()), ContractError);
}

TEST(Train, DeterministicUnderSeed) {
  const DatasetBundle data = small_bundle();
  auto run = [&] {
    DagModel m(tiny_config());
    const TrainResult r = train(m, data, quick_train());
    return std::pair{r, m.named_parameters()};
  };
  const auto [a, pa] = run();
  const auto [b, pb] = run();
  EXPECT_EQ(a.step_losses, b.step_losses);
  EXPECT_EQ(*a.best_val, *b.best_val);
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].tensor.vec(), pb[i].tensor.vec());
}

TEST(Train, RestoresBestValidationParameters) {
  const DatasetBundle data = small_bundle(1);
  DagModel m(tiny_config());
  TrainConfig tc = quick_train(4);
  tc.optimizer.lr = 0.05;
  const TrainResult r = train(m, data, tc);
  ASSERT_TRUE(r.best_val);
  EXPECT_EQ(mean_loss(m, data.val(), tc.eval_batch_size).forecast, *r.best_val);
  EXPECT_LE(r.epochs.size(), 4u);
  for (const auto& e : r.epochs) EXPECT_TRUE(e.val_forecast);
}

TEST(Train, EarlyStoppingHonoursPatience) {
  const DatasetBundle data = small_bundle(2);
  DagModel m(tiny_config());
  TrainConfig tc = quick_train(50);
  tc.optimizer.lr = 0.5;  // diverges, so validation stops improving quickly
  tc.patience = 2;
  const TrainResult r = train(m, data, tc);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.epochs.size(), r.best_epoch + tc.patience);
}

TEST(Train, OverfitsEightWindows) {
  SyntheticSpec s;
  s.n_exo = 2;
  s.length = 16 + 4 + 7;
  const auto ds = std::make_shared<const RawDataset>(gen_synthetic(s));
  const WindowSet eight = window(ds, {0, ds->length}, 16, 4);
  ASSERT_EQ(eight.size(), 8u);
  DagModel m(tiny_config());
  TrainConfig tc;
  tc.epochs = 500;
  tc.batch_size = 8;
  tc.optimizer.lr = 3e-3;
  const TrainResult r = train(m, eight, nullptr, tc);
  const double final_lf = mean_loss(m, eight).forecast;
  EXPECT_LT(final_lf, 0.05 * r.initial.forecast);
}

TEST(Ablation, FingerprintsDifferOnlyByVariant) {
  const DagConfig base = tiny_config();
  const TrainConfig tc = quick_train();
  std::set<std::string> prints;
  for (auto v : kAllVariants) {
    ConfigEntries e = entries(base);
    const auto t = entries(tc);
    e.insert(e.end(), t.begin(), t.end());
    e.emplace_back("variant", variant_name(v));
    EXPECT_EQ(ablation_fingerprint(base, tc, v), run_fingerprint(e));
    prints.insert(ablation_fingerprint(base, tc, v));
  }
  EXPECT_EQ(prints.size(), 6u);
}

TEST(Ablation, VariantNamesRoundTrip) {
  for (auto v : kAllVariants) {
    EXPECT_EQ(parse_variant(variant_name(v)), v);
    EXPECT_EQ(variant_of(variant_config(tiny_config(), v)), v);
  }
  EXPECT_THROW(parse_variant("G3_only"), ConfigError);
  EXPECT_EQ(variant_of(tiny_config()), AblationVariant::full);
}

TEST(Ablation, WiringAudit) {
  std::mt19937_64 rng(3);
  const DagConfig base = tiny_config();
  const TinyBatch b = tiny_batch(base, 2, rng);
  const Batch batch{b.x_endo, b.x_exo, b.y_exo, b.y_endo};
  for (auto v : kAllVariants) {
    const DagModel m(variant_config(base, v));
    const LossTerms l = m.loss(batch);
    const bool want_t = v == AblationVariant::F1_G2_temporal || v == AblationVariant::full;
    const bool want_c = v == AblationVariant::F3_G4_channel || v == AblationVariant::full;
    EXPECT_EQ(l.temporal.has_value(), want_t) << variant_name(v);
    EXPECT_EQ(l.channel.has_value(), want_c) << variant_name(v);
    if (!want_t && !want_c) {
      EXPECT_EQ(l.total.item(), l.forecast.item());
    }

    backward(l.total);
    const auto graded = names_with_grad(m.named_parameters());
    EXPECT_EQ(graded, names_of(m.active_parameters())) << variant_name(v);
    if (v == AblationVariant::F1_G2_temporal) {
      for (const auto& n : graded) EXPECT_EQ(n.rfind("channel.", 0), std::string::npos) << n;
    }
    if (v == AblationVariant::F3_G4_channel) {
      for (const auto& n : graded) EXPECT_EQ(n.rfind("temporal.", 0), std::string::npos) << n;
    }
  }
}

TEST(Ablation, UnpairedInjectionRunsAtAlphaOne) {
  std::mt19937_64 rng(4);
  const DagConfig c = variant_config(tiny_config(), AblationVariant::G2_plus_G4);
  const DagModel m(c);
  const TinyBatch b = tiny_batch(c, 2, rng);
  const auto out = m.forward(b.x_endo, b.x_exo, b.y_exo);
  for (double a : out.temporal_alphas.vec()) EXPECT_EQ(a, 1.0);
  for (double a : out.channel_alpha.vec()) EXPECT_EQ(a, 1.0);
}

TEST(Ablation, RunsSixRows) {
  const DatasetBundle data = small_bundle(5);
  TrainConfig tc = quick_train(1);
  const auto rows = run_ablation(data, tiny_config(), tc);
  ASSERT_EQ(rows.size(), 6u);
  std::set<std::string> prints;
  for (const auto& r : rows) {
    EXPECT_TRUE(std::isfinite(r.report.mse));
    EXPECT_EQ(r.report.windows, data.test().size());
    prints.insert(r.report.fingerprint);
  }
  EXPECT_EQ(prints.size(), 6u);
}

TEST(Baseline, ConsumesFutureExogenous) {
  const DatasetBundle data = small_bundle(6);
  const MlpFusionBaseline m(BaselineConfig::like(tiny_config()));
  Batch b = data.test().batch(0, 4);
  const Tensor with = m.predict(b);
  b.y_exo = Tensor::zeros(b.y_exo.shape());
  EXPECT_GT(max_abs_diff(with, m.predict(b)), 1e-9);
}

TEST(Baseline, GradientsMatchFiniteDifferences) {
  const DatasetBundle data = small_bundle(7);
  const MlpFusionBaseline m(BaselineConfig::like(tiny_config()));
  const Batch b = data.train().batch(0, 3);
  std::vector<Tensor> inputs;
  for (const auto& p : m.named_parameters()) inputs.push_back(p.tensor);
  std::mt19937_64 rng(8);
  EXPECT_LT(check_grads([&] { return m.loss(b).total; }, inputs, rng, 8).max_rel_error, 1e-4);
}

TEST(Baseline, TrainsAndEvaluates) {
  const DatasetBundle data = small_bundle(9);
  const BaselineRun r = run_baseline_mlp_fusion(data, BaselineConfig::like(tiny_config()), quick_train());
  EXPECT_TRUE(std::isfinite(r.report.mse));
  EXPECT_FALSE(r.report.fingerprint.empty());
}

TEST(Sweep, SkipsLookbacksWithoutWindows) {
  SyntheticSpec s;
  s.n_exo = 2;
  s.length = 400;
  const auto ds = std::make_shared<const RawDataset>(gen_synthetic(s));
  const std::size_t lookbacks[] = {16, 4, 64};  // 4 < patch_len; val split holds only 40 steps
  const auto rows = lookback_sweep(ds, SplitRatios{}, lookbacks, tiny_config(), quick_train(1));
  ASSERT_EQ(rows.size(), 3u);
  ASSERT_TRUE(rows[0].report);
  EXPECT_TRUE(std::isfinite(rows[0].report->mse));
  EXPECT_FALSE(rows[1].report);
  EXPECT_NE(rows[1].skip_reason.find("patch"), std::string::npos) << rows[1].skip_reason;
  EXPECT_FALSE(rows[2].report);
  EXPECT_NE(rows[2].skip_reason.find("without windows"), std::string::npos) << rows[2].skip_reason;
}

TEST(SignTest, ExactBinomialTail) {
  EXPECT_NEAR(sign_test_pvalue(15, 20), 21700.0 / 1048576.0, 1e-12);
  EXPECT_NEAR(sign_test_pvalue(14, 20), 60460.0 / 1048576.0, 1e-12);
  EXPECT_DOUBLE_EQ(sign_test_pvalue(0, 20), 1.0);
  EXPECT_THROW(sign_test_pvalue(3, 2), ContractError);
  const std::vector<double> a{1, 2, 3, 4}, b{2, 2, 4, 5};
  const SignTest t = paired_sign_test(a, b);
  EXPECT_EQ(t.trials, 3u);
  EXPECT_EQ(t.wins, 3u);
  EXPECT_NEAR(t.p_value, 0.125, 1e-12);
  EXPECT_DOUBLE_EQ(mean_of(a), 2.5);
}
