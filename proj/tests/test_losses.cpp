#include <doctest.h>

#include <cmath>

#include "ligr/losses.hpp"
#include "ligr/rng.hpp"

using namespace ligr;

TEST_SUITE("losses") {

TEST_CASE("bce at logit zero with positive label is ln 2") {
  Tensor logits = Tensor::zeros({1, static_cast<int64_t>(kNumTasks)});
  Tensor labels = Tensor::zeros({1, static_cast<int64_t>(ActionVocabulary::kCount)});
  labels.at(0, ActionVocabulary::kClick) = 1.0;
  LossConfig config;
  config.task_weights.assign(kNumTasks, 0.0);
  config.task_weights[ActionVocabulary::kClick] = 1.0;
  double loss = multitask_bce(logits, labels, {1}, config);
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("perfect logits give near-zero loss") {
  Tensor logits = Tensor::zeros({2, static_cast<int64_t>(kNumTasks)});
  Tensor labels = Tensor::zeros({2, static_cast<int64_t>(ActionVocabulary::kCount)});
  for (int t = 0; t < kNumTasks; ++t) {
    logits.at(0, t) = -20.0;
    logits.at(1, t) = t < ActionVocabulary::kCount ? 20.0 : 20.0;
  }
  for (int a = 0; a < ActionVocabulary::kCount; ++a) labels.at(1, a) = 1.0;
  double loss = multitask_bce(logits, labels, {1, 1}, {});
  CHECK(loss < 1e-6);
}

TEST_CASE("contribution label is the OR of like/comment/share/vote") {
  Tensor labels = Tensor::zeros({3, static_cast<int64_t>(ActionVocabulary::kCount)});
  labels.at(0, ActionVocabulary::index_of("like")) = 1.0;
  labels.at(1, ActionVocabulary::kClick) = 1.0;  // click alone is not a contribution
  Tensor tasks = derive_task_labels(labels);
  CHECK(tasks.at(0, kContributionTask) == 1.0);
  CHECK(tasks.at(1, kContributionTask) == 0.0);
  CHECK(tasks.at(2, kContributionTask) == 0.0);
}

TEST_CASE("all-masked bce is zero with zero gradients") {
  Graph g(Precision::F64);
  NodeId logits = g.param("logits", Tensor::full({2, static_cast<int64_t>(kNumTasks)}, 0.3));
  Tensor labels = Tensor::zeros({2, static_cast<int64_t>(ActionVocabulary::kCount)});
  NodeId loss = multitask_bce_node(g, logits, labels, {0, 0}, {});
  CHECK(g.value(loss).data[0] == 0.0);
  GradMap grads = g.backward(loss);
  for (double v : grads.at("logits").data) CHECK(v == 0.0);
}

TEST_CASE("multitask bce passes finite differences") {
  Rng rng(17);
  Graph g(Precision::F64);
  Tensor init = Tensor::zeros({4, static_cast<int64_t>(kNumTasks)});
  for (double& v : init.data) v = rng.uniform(-2, 2);
  NodeId logits = g.param("logits", init);
  Tensor labels = Tensor::zeros({4, static_cast<int64_t>(ActionVocabulary::kCount)});
  for (double& v : labels.data) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  LossConfig config;
  config.task_weights = {1.0, 0.5, 2.0, 1.0, 0.0, 1.0, 3.0};
  NodeId loss = multitask_bce_node(g, logits, labels, {1, 0, 1, 1}, config);
  FdReport report = finite_difference_check_all(g, loss, 1e-4);
  CHECK(report.pass);
}

TEST_CASE("attention rank: equal scores vs one-hot relevance is ln(session size)") {
  double loss = attention_rank_loss({1.0, 1.0, 1.0, 1.0}, {0, 0, 1, 0}, {5, 5, 5, 5});
  CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("attention rank at a == b equals the entropy of b") {
  // choose scores whose softmax is exactly b = [0.5, 0.25, 0.25]
  double s0 = std::log(2.0);
  std::vector<double> scores = {s0, 0.0, 0.0};
  std::vector<double> relevance = {0.5, 0.25, 0.25};
  double expected = -(0.5 * std::log(0.5) + 0.25 * std::log(0.25) + 0.25 * std::log(0.25));
  CHECK(attention_rank_loss(scores, relevance, {0, 0, 0}) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("attention rank averages independent sessions") {
  // session A: scores [1,2], relevance one-hot on the first item
  // session B: scores [0,0,1], relevance [0,2,2]
  std::vector<double> scores = {1.0, 2.0, 0.0, 0.0, 1.0};
  std::vector<double> relevance = {1.0, 0.0, 0.0, 2.0, 2.0};
  std::vector<int64_t> sessions = {0, 0, 1, 1, 1};

  double za = std::exp(1.0) + std::exp(2.0);
  double loss_a = -std::log(std::exp(1.0) / za);
  double zb = std::exp(0.0) + std::exp(0.0) + std::exp(1.0);
  double loss_b = -(0.5 * std::log(std::exp(0.0) / zb) + 0.5 * std::log(std::exp(1.0) / zb));
  CHECK(attention_rank_loss(scores, relevance, sessions) ==
        doctest::Approx(0.5 * (loss_a + loss_b)).epsilon(1e-12));
}

TEST_CASE("sessions with fewer than 2 items are skipped") {
  CHECK(attention_rank_loss({3.0}, {1.0}, {0}) == 0.0);
  // singleton session plus a pair: only the pair counts
  double only_pair = attention_rank_loss({5.0, 1.0, 1.0}, {1.0, 1.0, 0.0}, {0, 1, 1});
  double pair = attention_rank_loss({1.0, 1.0}, {1.0, 0.0}, {1, 1});
  CHECK(only_pair == doctest::Approx(pair));
}

TEST_CASE("attention rank loss is minimized when softmax(scores) equals b") {
  std::vector<double> relevance = {3.0, 1.0, 1.0};
  std::vector<int64_t> sessions = {0, 0, 0};
  Tensor scores = Tensor::vec({0.0, 0.0, 0.0});
  for (int step = 0; step < 4000; ++step) {
    Graph g(Precision::F64);
    NodeId s = g.param("s", scores);
    NodeId loss = attention_rank_loss_node(g, s, relevance, sessions);
    GradMap grads = g.backward(loss);
    for (int i = 0; i < 3; ++i) scores.data[i] -= 0.1 * grads.at("s").data[i];
  }
  double z = 0;
  for (double s : scores.data) z += std::exp(s);
  CHECK(std::exp(scores.data[0]) / z == doctest::Approx(0.6).epsilon(1e-3));
  CHECK(std::exp(scores.data[1]) / z == doctest::Approx(0.2).epsilon(1e-3));
}

TEST_CASE("attention rank gradient passes finite differences") {
  Rng rng(29);
  Graph g(Precision::F64);
  Tensor init = Tensor::zeros({6});
  for (double& v : init.data) v = rng.uniform(-1, 1);
  NodeId s = g.param("s", init);
  NodeId loss = attention_rank_loss_node(g, s, {1, 0, 0, 2, 1, 0}, {0, 0, 0, 1, 1, 1});
  FdReport report = finite_difference_check_all(g, loss, 1e-4);
  CHECK(report.pass);
}

TEST_CASE("roc auc basics") {
  CHECK(*roc_auc({0.9, 0.1}, {1, 0}) == 1.0);
  CHECK(*roc_auc({0.1, 0.9}, {1, 0}) == 0.0);
  CHECK(*roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);
  CHECK(!roc_auc({0.3, 0.7}, {1, 1}).has_value());
  CHECK(!roc_auc({0.3, 0.7}, {0, 0}).has_value());
}

TEST_CASE("roc auc equals pair-counting oracle with ties") {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = 2 + static_cast<int>(rng.uniform_int(12));
    std::vector<double> scores(n);
    std::vector<uint8_t> labels(n);
    for (int i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.uniform_int(5));  // coarse grid forces ties
      labels[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    auto fast = roc_auc(scores, labels);
    // brute force over all positive-negative pairs
    double wins = 0, pairs = 0;
    for (int i = 0; i < n; ++i) {
      if (!labels[i]) continue;
      for (int j = 0; j < n; ++j) {
        if (labels[j]) continue;
        pairs += 1;
        if (scores[i] > scores[j])
          wins += 1;
        else if (scores[i] == scores[j])
          wins += 0.5;
      }
    }
    if (pairs == 0) {
      CHECK(!fast.has_value());
    } else {
      REQUIRE(fast.has_value());
      CHECK(*fast == doctest::Approx(wins / pairs).epsilon(1e-12));
    }
  }
}

TEST_CASE("roc auc is invariant under strictly monotone transforms") {
  Rng rng(37);
  std::vector<double> scores(50);
  std::vector<uint8_t> labels(50);
  for (size_t i = 0; i < scores.size(); ++i) {
    scores[i] = rng.uniform(-3, 3);
    labels[i] = rng.bernoulli(0.3) ? 1 : 0;
  }
  auto base = roc_auc(scores, labels);
  std::vector<double> warped = scores;
  for (double& v : warped) v = std::exp(2.0 * v) + 5.0;
  CHECK(*roc_auc(warped, labels) == doctest::Approx(*base).epsilon(1e-12));
}

TEST_CASE("normalized entropy of the base-rate predictor is 1") {
  std::vector<uint8_t> labels;
  for (int i = 0; i < 400; ++i) labels.push_back(i % 4 == 0 ? 1 : 0);
  double p = 0.25;
  double logit = std::log(p / (1 - p));
  std::vector<double> logits(labels.size(), logit);
  auto ne = normalized_entropy(logits, labels);
  REQUIRE(ne.has_value());
  CHECK(*ne == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("perfect predictor drives normalized entropy to zero") {
  std::vector<uint8_t> labels = {1, 0, 1, 0, 0, 1};
  std::vector<double> logits;
  for (uint8_t y : labels) logits.push_back(y ? 30.0 : -30.0);
  CHECK(*normalized_entropy(logits, labels) < 1e-6);
}

TEST_CASE("random logits on a balanced task exceed NE of 1") {
  Rng rng(41);
  std::vector<uint8_t> labels;
  std::vector<double> logits;
  for (int i = 0; i < 2000; ++i) {
    labels.push_back(i % 2 == 0 ? 1 : 0);
    logits.push_back(rng.uniform(-4, 4));
  }
  CHECK(*normalized_entropy(logits, labels) > 1.0);
}

TEST_CASE("normalized entropy is undefined for single-class input") {
  CHECK(!normalized_entropy({0.5, 0.5}, {1, 1}).has_value());
}

TEST_CASE("flops estimate is linear in parameters and tokens") {
  double base = estimate_training_flops(1000, 500);
  CHECK(estimate_training_flops(2000, 500) == doctest::Approx(2 * base));
  CHECK(estimate_training_flops(1000, 1000) == doctest::Approx(2 * base));
  CHECK(base == doctest::Approx(2.0 * 1000 * 500));
}

TEST_CASE("combine task probabilities defaults to uniform weights") {
  CHECK(combine_task_probabilities({0.2, 0.4}, {}) == doctest::Approx(0.3));
  CHECK(combine_task_probabilities({0.2, 0.4}, {1.0, 3.0}) == doctest::Approx(0.35));
}

}  // TEST_SUITE
