// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tinyreptile/harness/config.hpp"

namespace tinyreptile::harness {

struct RoundRecord {
  std::size_t round = 0;
  std::optional<double> eval_loss;
  std::optional<double> eval_accuracy;
  double local_train_seconds = 0.0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
  std::uint64_t comm_bytes = 0;  ///< bytes_down + bytes_up
  bool aborted = false;
};

struct RunResult {
  std::vector<RoundRecord> records;  ///< round 0 (initialization) first
  nn::ModelWeights final_weights;
  std::size_t completed_rounds = 0;
  std::size_t aborted_rounds = 0;

  /// Loss of the last evaluated record.
  double final_eval_loss() const;
  /// Loss at the evaluated record closest to (and not after) `round`.
  double eval_loss_at(std::size_t round) const;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<RunResult> repeats;
};

/// Seed streams derived from master_seed (repeat r uses master_seed + r).
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kTestTask = 2;
inline constexpr std::uint64_t kTestData = 3;
inline constexpr std::uint64_t kTrainTask = 4;
inline constexpr std::uint64_t kRoundData = 5;
inline constexpr std::uint64_t kStreamOrder = 6;
inline constexpr std::uint64_t kClientPick = 7;
inline constexpr std::uint64_t kDropout = 8;
inline constexpr std::uint64_t kUniverse = 9;
inline constexpr std::uint64_t kJoint = 10;
}  // namespace streams

/// The testing clients a run with this config and seed evaluates on.
std::vector<meta::ClientHandle> make_testing_clients(const ExperimentConfig& cfg, std::uint64_t seed);

/// Sees every executed round: its record, phi before the round and phi after.
using RoundObserver =
    std::function<void(const RoundRecord&, const nn::ModelWeights& before, const nn::ModelWeights& after)>;

/// One repeat. Validates `cfg` first.
RunResult run_once(const ExperimentConfig& cfg, std::uint64_t seed, const RoundObserver& observer = {});

/// All repeats, repeat r seeded with master_seed + r.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Metrics CSV. One repeat: round,eval_loss[,eval_accuracy],comm_bytes,aborted.
/// Several: round,eval_loss_mean,eval_loss_std[,eval_accuracy_mean,eval_accuracy_std],
/// comm_bytes_mean,aborted_count. Standard deviation is the population one.
void write_metrics_csv(std::ostream& out, const ExperimentResult& result);
void write_run_csv(std::ostream& out, const ExperimentConfig& cfg, const RunResult& run);

/// Wall-clock sidecar: algorithm,repeat,round,local_train_seconds,bytes_down,bytes_up,comm_bytes,aborted
void write_timing_csv(std::ostream& out, const ExperimentResult& result);

struct SweepPoint {
  double value = 0.0;
  ExperimentResult result;
};

struct SweepResult {
  std::string axis;
  std::vector<SweepPoint> points;
};

SweepResult sweep(const ExperimentConfig& base, const std::string& axis, const std::vector<double>& values);

/// Long format: axis,value followed by the metrics columns.
void write_sweep_csv(std::ostream& out, const SweepResult& result);

/// Shortest round-trip decimal form.
std::string format_number(double v);

}  // namespace tinyreptile::harness
