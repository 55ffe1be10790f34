#include <gtest/gtest.h>

#include <map>
#include <set>

#include "test_support.hpp"

using namespace dag;
using namespace dag::testing;

namespace {

LossTerms loss_of(const DagModel& m, const TinyBatch& b) {
  return *m.forward(b.x_endo, b.x_exo, b.y_exo, b.y_endo).losses;
}

std::size_t count_values(const Parameters& ps) {
  std::size_t n = 0;
  for (const auto& p : ps) n += p.tensor.numel();
  return n;
}

}  // namespace

TEST(DagModel, FusionEndpointsAreExact) {
  std::mt19937_64 rng(1);
  DagConfig c = tiny_config();
  const TinyBatch b = tiny_batch(c, 3, rng);
  for (double l1 : {0.0, 1.0}) {
    c.lambda1 = l1;
    const DagModel m(c);
    const auto out = m.forward(b.x_endo, b.x_exo, b.y_exo);
    EXPECT_TRUE(bitwise_equal(out.y_endo_hat, l1 == 1.0 ? out.y_endo_ddot : out.y_endo_dot)) << l1;
  }
}

TEST(DagModel, FusionIsConvex) {
  std::mt19937_64 rng(2);
  DagConfig c = tiny_config();
  c.lambda1 = 0.3;
  const DagModel m(c);
  const TinyBatch b = tiny_batch(c, 2, rng);
  const auto out = m.forward(b.x_endo, b.x_exo, b.y_exo);
  for (std::size_t i = 0; i < out.y_endo_hat.numel(); ++i) {
    EXPECT_NEAR(out.y_endo_hat[i], 0.3 * out.y_endo_ddot[i] + 0.7 * out.y_endo_dot[i], 1e-14);
  }
}

TEST(DagModel, LossDecomposition) {
  std::mt19937_64 rng(3);
  for (double l2 : {0.0, 0.25, 0.5, 2.0}) {
    DagConfig c = tiny_config();
    c.lambda2 = l2;
    const DagModel m(c);
    const LossTerms l = loss_of(m, tiny_batch(c, 4, rng));
    ASSERT_TRUE(l.temporal && l.channel);
    const double aux = l.temporal->item() + l.channel->item();
    EXPECT_NEAR(l.total.item() - l.forecast.item(), l2 * aux, 1e-12);
    if (l2 == 0.0) {
      EXPECT_EQ(l.total.item(), l.forecast.item());
    }
  }
}

TEST(DagModel, MissingFutureExoIsAContractError) {
  const DagModel m(tiny_config());
  std::mt19937_64 rng(4);
  const TinyBatch b = tiny_batch(m.config(), 1, rng);
  EXPECT_THROW(m.forward(b.x_endo, b.x_exo, Tensor()), ContractError);
}

TEST(DagModel, EndToEndGradientsMatchFiniteDifferences) {
  DagConfig c = tiny_config();
  c.lambda1 = 0.4;
  c.lambda2 = 0.7;
  const DagModel m(c);
  std::mt19937_64 rng(5);
  const TinyBatch b = tiny_batch(c, 2, rng);
  std::vector<Tensor> inputs;
  for (const auto& p : m.named_parameters()) inputs.push_back(p.tensor);
  const auto g = check_grads([&] { return loss_of(m, b).total; }, inputs, rng, 2);
  EXPECT_GE(g.probes, 100u);
  EXPECT_LT(g.max_rel_error, 1e-4);
}

TEST(DagModel, EveryParameterReceivesGradient) {
  const DagModel m(tiny_config());
  std::mt19937_64 rng(6);
  backward(loss_of(m, tiny_batch(m.config(), 3, rng)).total);
  for (const auto& p : m.named_parameters()) {
    ASSERT_TRUE(p.tensor.has_grad()) << p.name;
    double norm = 0.0;
    for (double v : p.tensor.grad()) norm += std::abs(v);
    EXPECT_GT(norm, 0.0) << p.name;
  }
}

TEST(DagModel, SharedProjectionsCoTrain) {
  const DagModel m(tiny_config());
  std::mt19937_64 rng(7);
  const TinyBatch b = tiny_batch(m.config(), 2, rng);
  const auto out = m.forward(b.x_endo, b.x_exo, b.y_exo);
  for (double a : out.temporal_alphas.vec()) ASSERT_TRUE(a > 0.0 && a < 1.0);
  for (double a : out.channel_alpha.vec()) ASSERT_TRUE(a > 0.0 && a < 1.0);
  const std::vector<Tensor> shared{m.temporal_discovery.blocks[0].w_q, m.temporal_discovery.blocks[0].w_k,
                                   m.channel_discovery.blocks[0].w_q, m.channel_discovery.blocks[0].w_k};
  const auto g = check_grads([&] { return loss_of(m, b).total; }, shared, rng, 30);
  EXPECT_LT(g.max_rel_error, 1e-4);
  for (const auto& t : shared) {
    double norm = 0.0;
    for (double v : t.grad()) norm += std::abs(v);
    EXPECT_GT(norm, 0.0);
  }
}

TEST(DagModel, NamedParametersListEachTensorOnce) {
  const DagModel m(tiny_config());
  const Parameters ps = m.named_parameters();
  std::map<std::string, int> names;
  std::set<const Tensor::Node*> nodes;
  for (const auto& p : ps) {
    ++names[p.name];
    EXPECT_TRUE(nodes.insert(&p.tensor.node()).second) << p.name << " shares storage with another entry";
  }
  for (const auto& [n, k] : names) EXPECT_EQ(k, 1) << n;
  EXPECT_EQ(names.count("temporal.discovery.w_q_prime"), 1u);
  EXPECT_EQ(names.count("temporal.discovery.w_k_prime"), 1u);
  EXPECT_EQ(names.count("channel.discovery.w_q_prime"), 1u);
  EXPECT_EQ(names.count("channel.discovery.w_k_prime"), 1u);
  for (const auto& [n, k] : names) EXPECT_EQ(n.find("injection.w_q_prime"), std::string::npos) << n;
  EXPECT_TRUE(m.temporal_injection.blocks[0].injected_q.same_storage(m.temporal_discovery.blocks[0].w_q));
  EXPECT_TRUE(m.channel_injection.blocks[0].injected_k.same_storage(m.channel_discovery.blocks[0].w_k));
}

TEST(DagModel, ParameterCountDependsOnChannelsOnlyThroughMixAndGate) {
  // Everything except the two N x D mixing matrices and the channel gate's
  // first layers (D*T and D*F inputs) is shared across channels.
  std::set<std::size_t> residual;
  for (std::size_t n : {1, 2, 3}) {
    for (std::size_t d : {1, 2, 5}) {
      DagConfig c = tiny_config();
      c.n_endo = n;
      c.n_exo = d;
      const DagModel m(c);
      const std::size_t g = c.dims().gate_width;
      const std::size_t channel_terms = 2 * n * d + g * d * (c.lookback + c.horizon);
      residual.insert(count_values(m.named_parameters()) - channel_terms);
    }
  }
  EXPECT_EQ(residual.size(), 1u);
}

TEST(DagModel, NoFutureExoSubstitutionIdentity) {
  const DagModel m(tiny_config(9));
  std::mt19937_64 rng(10);
  const TinyBatch b = tiny_batch(m.config(), 5, rng);
  const Tensor y_exo_hat = m.forecast_exo(b.x_exo);
  EXPECT_EQ(y_exo_hat.shape(), b.y_exo.shape());
  EXPECT_TRUE(bitwise_equal(m.predict_without_future_exo(b.x_endo, b.x_exo), m.predict(b.x_endo, b.x_exo, y_exo_hat)));
  const Tensor single = m.predict_without_future_exo(reshape(slice(b.x_endo, 0, 0, 1), {1, 16}),
                                                     reshape(slice(b.x_exo, 0, 0, 1), {2, 16}));
  EXPECT_EQ(single.shape(), (Shape{1, 4}));
}

TEST(DagModel, NoFutureExoNeedsTemporalDiscovery) {
  DagConfig c = tiny_config();
  c.wiring.temporal_discovery = false;
  const DagModel m(c);
  std::mt19937_64 rng(11);
  const TinyBatch b = tiny_batch(c, 1, rng);
  EXPECT_THROW(m.predict_without_future_exo(b.x_endo, b.x_exo), ContractError);
}

TEST(DagModel, PredictIsInOriginalScale) {
  DagConfig c = tiny_config();
  const DagModel m(c);
  std::mt19937_64 rng(12);
  TinyBatch b = tiny_batch(c, 2, rng);
  const Tensor base = m.predict(b.x_endo, b.x_exo, b.y_exo);
  // Instance normalization makes the forecast shift- and scale-equivariant in the endogenous input.
  const Tensor moved = m.predict(add_scalar(scale(b.x_endo, 3.0), 5.0), b.x_exo, b.y_exo);
  for (std::size_t i = 0; i < base.numel(); ++i) EXPECT_NEAR(moved[i], 3.0 * base[i] + 5.0, 1e-9);
}

TEST(DagModel, DeterministicConstruction) {
  const DagModel a(tiny_config(4)), b(tiny_config(4)), c(tiny_config(5));
  const auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].tensor.vec(), pb[i].tensor.vec());
    differs = differs || pa[i].tensor.vec() != pc[i].tensor.vec();
  }
  EXPECT_TRUE(differs);
}

TEST(DagModel, ConfigValidation) {
  DagConfig c = tiny_config();
  c.lambda1 = 1.5;
  EXPECT_THROW(DagModel{c}, ConfigError);
  c = tiny_config();
  c.patch_len = 32;
  EXPECT_THROW(DagModel{c}, ConfigError);
  c = tiny_config();
  c.wiring.temporal_injection = c.wiring.channel_injection = false;
  EXPECT_THROW(DagModel{c}, ConfigError);
  c = tiny_config();
  c.heads = 3;
  EXPECT_THROW(DagModel{c}, ConfigError);
}

TEST(DagModel, MultiLayerMultiHeadGradients) {
  DagConfig c = tiny_config();
  c.layers = 2;
  c.heads = 2;
  c.n_endo = 2;
  const DagModel m(c);
  std::mt19937_64 rng(13);
  const TinyBatch b = tiny_batch(c, 2, rng);
  std::vector<Tensor> inputs;
  for (const auto& p : m.named_parameters()) inputs.push_back(p.tensor);
  EXPECT_LT(check_grads([&] { return loss_of(m, b).total; }, inputs, rng, 1).max_rel_error, 1e-4);
  const auto names = m.named_parameters();
  EXPECT_TRUE(std::any_of(names.begin(), names.end(),
                          [](const Parameter& p) { return p.name == "temporal.discovery.layer1.w_q_prime"; }));
}
