// SPDX-License-Identifier: Apache-2.0
//
// Analytic client memory model and per-round time/traffic summaries.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tinyreptile/harness/experiment.hpp"

namespace tinyreptile::harness {

/// Peak client-side buffer bytes during one round of local training
/// (float32 everywhere).
struct MemoryEstimate {
  Algorithm algorithm = Algorithm::TinyReptile;
  std::uint64_t weights_bytes = 0;
  std::uint64_t gradient_bytes = 0;
  std::uint64_t sample_buffer_bytes = 0;
  std::uint64_t activation_bytes = 0;
  std::uint64_t total_bytes = 0;
};

/// Rows for tinyreptile, reptile_serial, reptile_batched, fedavg and fedsgd.
/// Streaming keeps one sample and batch-1 activations; the batched client
/// algorithms keep cfg.s_training samples and activations for all of them.
std::vector<MemoryEstimate> memory_model(const ExperimentConfig& cfg, const nn::ModelConfig& model);

const MemoryEstimate& estimate_for(const std::vector<MemoryEstimate>& rows, Algorithm a);

void write_memory_csv(std::ostream& out, const std::vector<MemoryEstimate>& rows);

struct TimeSummary {
  std::size_t rounds = 0;
  std::size_t aborted_rounds = 0;
  double mean_local_train_seconds = 0.0;
  double mean_bytes_down = 0.0;
  double mean_bytes_up = 0.0;
  double mean_comm_bytes = 0.0;
};

/// Throws std::invalid_argument on an empty span.
TimeSummary time_accounting(std::span<const RoundRecord> records);

/// Every record except the round-0 evaluation of the initialization.
std::span<const RoundRecord> executed_rounds(const RunResult& run);

struct AlgorithmTime {
  std::string algorithm;
  TimeSummary summary;
};

/// Groups a timing CSV (see write_timing_csv) by algorithm, in order of
/// first appearance.
std::vector<AlgorithmTime> time_accounting_csv(std::istream& in);

void write_time_table(std::ostream& out, const std::vector<AlgorithmTime>& rows);

}  // namespace tinyreptile::harness
