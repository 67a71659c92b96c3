// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Every threshold is a named constant.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "memory_probe.hpp"
#include "random_messages.hpp"
#include "reference_mlp.hpp"
#include "tinyreptile/harness/accounting.hpp"
#include "tinyreptile/harness/experiment.hpp"
#include "tinyreptile/protocol/codec.hpp"
#include "tinyreptile/seed.hpp"

using namespace tinyreptile;
using harness::Algorithm;
using harness::ExperimentConfig;

namespace {

constexpr std::uint64_t kSeeds[] = {0, 1, 2};

// Criterion 1
constexpr int kNetsPerPair = 20;
constexpr double kMaxGradientRelError = 1e-4;
constexpr double kGradientBudgetSeconds = 10.0;
constexpr double kFiniteDifferenceStep = 1e-5;
constexpr double kRelErrorFloor = 1e-3;
constexpr double kKinkClearance = 1e-3;
// Criterion 2
constexpr std::size_t kSineParams = 1153;
// Criterion 3
constexpr int kWeightPairs = 1000;
// Criterion 4
constexpr double kMinAdaptationRatio = 5.0;
constexpr double kAdaptationBudgetSeconds = 300.0;
// Criterion 5
constexpr double kMaxTinyOverReptile = 1.5;
// Criterion 6
constexpr double kMaxMeanAbsPrediction = 0.5;
constexpr int kGridPoints = 1001;
// Criterion 7
constexpr double kMinMemoryFactor = 2.0;
constexpr double kMaxMemoryDeviation = 0.25;
// Criterion 8
constexpr double kMinTimeFactor = 2.0;
constexpr std::size_t kTimingRounds = 300;
// Criterion 9
constexpr int kRoundTrips = 10'000;
constexpr int kFuzzBuffers = 100'000;
constexpr std::size_t kWireRounds = 500;
// Criterion 10
constexpr double kDropoutRate = 0.1;
constexpr double kMaxDropoutLossRatio = 2.0;
// Criterion 11
constexpr double kEarlyCheckpointFraction = 0.1;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double mean_query_loss(const nn::ModelWeights& phi, const std::vector<meta::ClientHandle>& testing, std::size_t k,
                       meta::FinetuneMode mode, float beta = 0.01f) {
  return meta::evaluate_meta(phi, testing, meta::EvalConfig{k, beta, mode}).mean_query_loss;
}

// 1. Gradient correctness against a double-precision finite-difference oracle.
Verdict gradient_correctness() {
  using nn::Activation;
  using nn::Loss;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  int nets = 0;
  auto normal = [&](std::size_t n, float scale) {
    std::normal_distribution<float> d(0.0f, scale);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
  };
  for (Activation hidden : {Activation::Tanh, Activation::ReLU, Activation::Identity})
    for (Loss loss : {Loss::MeanSquaredError, Loss::CrossEntropy})
      for (int trial = 0; trial < kNetsPerPair; ++trial) {
        std::uniform_int_distribution<std::size_t> width(1, 6), depth(1, 3);
        std::vector<std::size_t> dims{width(rng)};
        for (std::size_t d = depth(rng); d > 0; --d) dims.push_back(width(rng));
        const std::size_t out = loss == Loss::CrossEntropy ? width(rng) + 1 : width(rng);
        dims.push_back(out);
        auto shape = std::make_shared<const nn::ModelConfig>(nn::ModelConfig::mlp(dims, hidden, loss));
        std::vector<nn::Sample> batch(std::uniform_int_distribution<int>(1, 4)(rng));
        for (auto& s : batch) {
          s.input = normal(shape->input_dim(), 1.0f);
          if (loss == Loss::CrossEntropy) {
            s.target.assign(out, 0.0f);
            s.target[rng() % out] = 1.0f;
          } else {
            s.target = normal(out, 1.0f);
          }
        }
        nn::ModelWeights w{shape, {}};
        do w.values = normal(shape->param_count(), 0.5f);
        while (testing::ref_min_abs_hidden_preactivation(*shape, w.values, batch) < kKinkClearance);
        const auto analytic = nn::batch_backward(w, batch);
        const auto numeric = testing::ref_numeric_gradient(*shape, w.values, batch, kFiniteDifferenceStep);
        worst = std::max(worst, testing::max_relative_error(analytic.gradient.values, numeric, kRelErrorFloor));
        ++nets;
      }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < kMaxGradientRelError && secs < kGradientBudgetSeconds,
          std::to_string(nets) + " nets, max relative error " + fmt(worst) + " (< " + fmt(kMaxGradientRelError) +
              "), " + fmt(secs) + " s (< " + fmt(kGradientBudgetSeconds) + " s)"};
}

// 2. Parameter count of the sine regressor.
Verdict parameter_count() {
  const auto n = nn::ModelConfig::sine_regressor().param_count();
  return {n == kSineParams, "1-32-32-1 reports " + std::to_string(n) + " (expected " + std::to_string(kSineParams) + ")"};
}

// 3. meta_update identities, checked bit for bit against an oracle that
// rounds phi + alpha (phi_hat - phi) from exact double arithmetic once.
Verdict meta_update_algebra() {
  auto shape = std::make_shared<const nn::ModelConfig>(nn::ModelConfig::sine_regressor());
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<float> value(0.0f, 1.0f);
  int broken = 0;
  double worst_linearity = 0.0;
  for (int pair = 0; pair < kWeightPairs; ++pair) {
    nn::ModelWeights phi{shape, std::vector<float>(kSineParams)}, hat{shape, std::vector<float>(kSineParams)};
    for (auto& v : phi.values) v = value(rng);
    for (auto& v : hat.values) v = value(rng);
    const double a = unit(rng), b = unit(rng) * (1.0 - a);
    if (meta::meta_update(phi, hat, 0.0).values != phi.values) ++broken;
    if (meta::meta_update(phi, hat, 1.0).values != hat.values) ++broken;
    const auto ua = meta::meta_update(phi, hat, a);
    const auto ub = meta::meta_update(phi, hat, b);
    const auto uab = meta::meta_update(phi, hat, a + b);
    for (std::size_t i = 0; i < kSineParams; ++i) {
      const double p = phi.values[i], q = hat.values[i];
      if (ua.values[i] != static_cast<float>(p + a * (q - p))) {
        ++broken;
        break;
      }
      // Displacements add up: (u(a) - phi) + (u(b) - phi) = u(a + b) - phi,
      // up to the three final roundings.
      const double lhs = (ua.values[i] - p) + (ub.values[i] - p);
      const double rhs = uab.values[i] - p;
      const double ulp = std::nextafter(std::abs(static_cast<float>(std::max({std::abs(p), std::abs(q)}))),
                                        std::numeric_limits<float>::infinity()) -
                         std::abs(static_cast<float>(std::max({std::abs(p), std::abs(q)})));
      worst_linearity = std::max(worst_linearity, std::abs(lhs - rhs) / ulp);
    }
  }
  const bool ok = broken == 0 && worst_linearity <= 3.0;
  return {ok, std::to_string(kWeightPairs) + " pairs: alpha=0 and alpha=1 exact, interpolation matches the oracle bit for "
                                             "bit (" + std::to_string(broken) + " mismatches), additivity within " +
                  fmt(worst_linearity) + " ulp (<= 3)"};
}

// 4. Fine-tuning after TinyReptile training beats zero-shot by a wide margin.
Verdict sine_adaptation() {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg;
  std::string detail;
  bool ok = true;
  for (std::uint64_t seed : kSeeds) {
    const auto run = harness::run_once(cfg, seed);
    const auto testing = harness::make_testing_clients(cfg, seed);
    const double zero = mean_query_loss(run.final_weights, testing, 0, meta::FinetuneMode::Streaming);
    const double tuned = mean_query_loss(run.final_weights, testing, 8, meta::FinetuneMode::Streaming);
    const double ratio = zero / tuned;
    ok = ok && ratio >= kMinAdaptationRatio;
    detail += "seed " + std::to_string(seed) + ": " + fmt(zero) + "/" + fmt(tuned) + " = " + fmt(ratio) + "x; ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ok = ok && secs < kAdaptationBudgetSeconds;
  return {ok, "zero-shot/k=8 query MSE, " + detail + "need >= " + fmt(kMinAdaptationRatio) + "x on every seed, " +
                  fmt(secs) + " s (< " + fmt(kAdaptationBudgetSeconds) + " s)"};
}

// 5. Under heterogeneous clients the meta-learners beat the single-model
// federated baselines.
Verdict heterogeneity_failure() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    double loss[4];
    const Algorithm algos[] = {Algorithm::TinyReptile, Algorithm::ReptileSerial, Algorithm::FedAvg, Algorithm::FedSgd};
    for (int i = 0; i < 4; ++i) {
      ExperimentConfig cfg;
      cfg.algorithm = algos[i];
      cfg.clients_per_round = 1;
      cfg.eval_mode = harness::EvalMode::Streaming;
      loss[i] = harness::run_once(cfg, seed).final_eval_loss();
    }
    const bool seed_ok = loss[0] <= kMaxTinyOverReptile * loss[1] && loss[0] < loss[2] && loss[0] < loss[3] &&
                         loss[1] < loss[2] && loss[1] < loss[3];
    ok = ok && seed_ok;
    detail += "seed " + std::to_string(seed) + ": tiny " + fmt(loss[0]) + " reptile " + fmt(loss[1]) + " fedavg " +
              fmt(loss[2]) + " fedsgd " + fmt(loss[3]) + "; ";
  }
  return {ok, "k=8 streaming fine-tune query MSE after 2000 one-client rounds, " + detail + "need tiny <= " + fmt(kMaxTinyOverReptile) +
                  " x reptile and both below fedavg and fedsgd"};
}

// 6. One model fit to every sine task collapses toward zero.
Verdict joint_flatness() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    ExperimentConfig cfg;
    cfg.algorithm = Algorithm::Joint;
    const auto run = harness::run_once(cfg, seed);
    double total = 0.0;
    for (int i = 0; i < kGridPoints; ++i) {
      const float x = static_cast<float>(-5.0 + 10.0 * i / (kGridPoints - 1));
      total += std::abs(nn::forward(run.final_weights, std::vector<float>{x})[0]);
    }
    const double mean_abs = total / kGridPoints;
    ok = ok && mean_abs < kMaxMeanAbsPrediction;
    detail += "seed " + std::to_string(seed) + ": " + fmt(mean_abs) + "; ";
  }
  return {ok, "mean |prediction| over x in [-5, 5], " + detail + "need < " + fmt(kMaxMeanAbsPrediction)};
}

// 7. Client memory: analytic factor and agreement with measured heap peaks.
Verdict memory_factor() {
  ExperimentConfig cfg;
  auto shape = std::make_shared<const nn::ModelConfig>(cfg.model());
  const auto rows = harness::memory_model(cfg, *shape);
  const double tiny_est = harness::estimate_for(rows, Algorithm::TinyReptile).total_bytes;
  const double rep_est = harness::estimate_for(rows, Algorithm::ReptileSerial).total_bytes;

  const auto phi = nn::init_weights(shape, 1);
  meta::ClientHandle client;
  client.data = tasks::realize_sine_data(tasks::sample_sine_task(3), cfg.s_training, 1, 4);
  client.stream_seed = 5;
  const double tiny = testing::streaming_client_peak(phi, client, 0.01f);
  const double rep = testing::batched_client_peak(phi, client, 0.01f, cfg.epochs);
  const double dev_tiny = std::abs(tiny - tiny_est) / tiny_est;
  const double dev_rep = std::abs(rep - rep_est) / rep_est;
  const double factor = rep_est / tiny_est;
  const bool ok = factor >= kMinMemoryFactor && dev_tiny <= kMaxMemoryDeviation && dev_rep <= kMaxMemoryDeviation;
  return {ok, "S=32 estimate reptile " + fmt(rep_est) + " B / tinyreptile " + fmt(tiny_est) + " B = " + fmt(factor) +
                  "x (>= " + fmt(kMinMemoryFactor) + "x); measured " + fmt(rep) + " B and " + fmt(tiny) +
                  " B, deviation " + fmt(100 * dev_rep) + "% and " + fmt(100 * dev_tiny) + "% (<= " +
                  fmt(100 * kMaxMemoryDeviation) + "%)"};
}

// 8. Local training time per round.
Verdict time_factor() {
  ExperimentConfig cfg;
  cfg.rounds = kTimingRounds;
  cfg.eval_every = kTimingRounds;
  cfg.epochs = 8;
  cfg.s_training = 32;
  cfg.algorithm = Algorithm::TinyReptile;
  const auto tiny = harness::time_accounting(harness::executed_rounds(harness::run_once(cfg, 0)));
  cfg.algorithm = Algorithm::ReptileSerial;
  const auto rep = harness::time_accounting(harness::executed_rounds(harness::run_once(cfg, 0)));
  const double factor = rep.mean_local_train_seconds / tiny.mean_local_train_seconds;
  return {factor >= kMinTimeFactor, "mean local training per round, reptile(E=8) " +
                                        fmt(1e3 * rep.mean_local_train_seconds) + " ms / tinyreptile " +
                                        fmt(1e3 * tiny.mean_local_train_seconds) + " ms = " + fmt(factor) +
                                        "x (>= " + fmt(kMinTimeFactor) + "x)"};
}

// 9. Codec identity, fuzz robustness and transport equivalence.
Verdict protocol_soundness() {
  std::mt19937_64 rng(9);
  int mismatches = 0;
  std::vector<std::vector<std::uint8_t>> corpus;
  for (int i = 0; i < kRoundTrips; ++i) {
    const protocol::Message m = testing::random_message(rng);
    auto bytes = protocol::encode(m);
    if (!(protocol::decode(bytes) == m)) ++mismatches;
    if (i < 256) corpus.push_back(std::move(bytes));
  }

  // Half pure noise, half mutated valid frames.
  int accepted_garbage = 0, unexpected = 0;
  std::uniform_int_distribution<std::size_t> len(0, 96);
  for (int i = 0; i < kFuzzBuffers; ++i) {
    std::vector<std::uint8_t> buf;
    bool mutated = false;
    if (i % 2 == 0) {
      buf.resize(len(rng));
      for (auto& b : buf) b = static_cast<std::uint8_t>(rng());
    } else {
      buf = corpus[rng() % corpus.size()];
      const int flips = 1 + static_cast<int>(rng() % 4);
      for (int f = 0; f < flips && !buf.empty(); ++f) buf[rng() % buf.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
      if (rng() % 4 == 0) buf.resize(rng() % (buf.size() + 1));
      mutated = true;
    }
    try {
      protocol::decode(buf);
      if (!mutated) ++accepted_garbage;
    } catch (const protocol::ProtocolError&) {
    } catch (...) {
      ++unexpected;
    }
  }

  ExperimentConfig cfg;
  cfg.rounds = kWireRounds;
  const auto local = harness::run_once(cfg, 0);
  cfg.transport = harness::TransportKind::Tcp;
  const auto tcp = harness::run_once(cfg, 0);
  const bool same = local.final_weights.values == tcp.final_weights.values;

  const bool ok = mismatches == 0 && unexpected == 0 && accepted_garbage == 0 && same;
  return {ok, std::to_string(kRoundTrips) + " round trips with " + std::to_string(mismatches) + " mismatches; " +
                  std::to_string(kFuzzBuffers) + " fuzz buffers, no crash, " + std::to_string(unexpected) +
                  " non-protocol exceptions, " + std::to_string(accepted_garbage) + " noise frames accepted; " +
                  std::to_string(kWireRounds) + "-round TCP run " + (same ? "bitwise identical" : "DIFFERS") +
                  " to in-process"};
}

// 10. Clients vanishing mid-round.
Verdict dropout_robustness() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    ExperimentConfig cfg;
    cfg.dropout_rate = kDropoutRate;
    std::size_t aborted = 0, moved_on_abort = 0;
    const auto dropped = harness::run_once(
        cfg, seed, [&](const harness::RoundRecord& r, const nn::ModelWeights& before, const nn::ModelWeights& after) {
          if (!r.aborted) return;
          ++aborted;
          if (before.values != after.values) ++moved_on_abort;
        });
    ExperimentConfig clean;
    clean.rounds = dropped.completed_rounds;
    const auto reference = harness::run_once(clean, seed);
    const auto testing = harness::make_testing_clients(cfg, seed);
    const double with_drop = mean_query_loss(dropped.final_weights, testing, 8, meta::FinetuneMode::Streaming);
    const double without = mean_query_loss(reference.final_weights, testing, 8, meta::FinetuneMode::Streaming);
    ok = ok && aborted > 0 && moved_on_abort == 0 && with_drop <= kMaxDropoutLossRatio * without;
    detail += "seed " + std::to_string(seed) + ": " + std::to_string(aborted) + " aborted, phi moved on " +
              std::to_string(moved_on_abort) + ", loss " + fmt(with_drop) + " vs " + fmt(without) + " at " +
              std::to_string(dropped.completed_rounds) + " completed rounds; ";
  }
  return {ok, detail + "need phi fixed on aborts and loss within " + fmt(kMaxDropoutLossRatio) + "x"};
}

// 11. Hyperparameter trends.
Verdict hyperparameter_trends() {
  ExperimentConfig base;
  std::string detail;
  bool ok = true;

  int testing_ok = 0, training_ok = 0, beta_ok = 0;
  std::string testing_detail, training_detail, beta_detail;
  for (std::uint64_t seed : kSeeds) {
    base.master_seed = seed;
    const auto st = harness::sweep(base, "s_testing", {0, 1, 2, 4, 8, 16, 32});
    std::vector<double> curve;
    for (const auto& p : st.points) curve.push_back(p.result.repeats[0].final_eval_loss());
    const bool max_at_zero = *std::max_element(curve.begin(), curve.end()) == curve[0];
    testing_ok += max_at_zero && curve[1] < curve[0];
    testing_detail += fmt(curve[0]) + ">" + fmt(curve[1]) + (max_at_zero ? " max@0" : " NOT max@0") + "; ";

    const auto sr = harness::sweep(base, "s_training", {8, 32});
    const double l8 = sr.points[0].result.repeats[0].final_eval_loss();
    const double l32 = sr.points[1].result.repeats[0].final_eval_loss();
    training_ok += l32 < l8;
    training_detail += fmt(l32) + " vs " + fmt(l8) + "; ";

    const auto sb = harness::sweep(base, "beta", {0.001, 0.01});
    const auto checkpoint = static_cast<std::size_t>(kEarlyCheckpointFraction * base.rounds);
    const double slow = sb.points[0].result.repeats[0].eval_loss_at(checkpoint);
    const double fast = sb.points[1].result.repeats[0].eval_loss_at(checkpoint);
    beta_ok += fast < slow;
    beta_detail += fmt(fast) + " vs " + fmt(slow) + "; ";
  }
  const int seeds = static_cast<int>(std::size(kSeeds));
  ok = testing_ok == seeds && training_ok == seeds && 2 * beta_ok > seeds;
  detail = "S_testing=0 vs 1 (all seeds): " + testing_detail + "S_training 32 vs 8 (all seeds): " + training_detail +
           "beta 0.01 vs 0.001 at round " + std::to_string(static_cast<std::size_t>(kEarlyCheckpointFraction * base.rounds)) +
           " (majority, " + std::to_string(beta_ok) + "/" + std::to_string(seeds) + "): " + beta_detail;
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"parameter count", parameter_count},
      {"meta-update algebra", meta_update_algebra},
      {"sine adaptation", sine_adaptation},
      {"heterogeneity failure of single-model FL", heterogeneity_failure},
      {"joint-baseline flatness", joint_flatness},
      {"memory factor", memory_factor},
      {"local-train time factor", time_factor},
      {"protocol soundness", protocol_soundness},
      {"dropout robustness", dropout_robustness},
      {"hyperparameter trends", hyperparameter_trends},
  };
  // Optional argument: run a single criterion by number.
  const int only = argc > 1 ? std::atoi(argv[1]) : 0;
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i + 1) != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s  %2zu  %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str(),
                secs);
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
