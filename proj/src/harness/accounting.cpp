// SPDX-License-Identifier: Apache-2.0

#include "tinyreptile/harness/accounting.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace tinyreptile::harness {
namespace {

constexpr std::uint64_t kFloat = sizeof(float);

// Per-sample floats a backward pass keeps: pre- and post-activations of
// every layer, plus the two delta buffers alive while one layer hands its
// error to the layer below.
std::uint64_t activation_floats_per_sample(const nn::ModelConfig& model) {
  std::uint64_t stored = 0;
  std::uint64_t delta = model.output_dim();
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const auto& spec = model.layers()[l];
    stored += 2 * spec.output_dim;
    if (l > 0) delta = std::max<std::uint64_t>(delta, spec.output_dim + spec.input_dim);
  }
  return stored + delta;
}

MemoryEstimate estimate(Algorithm a, const nn::ModelConfig& model, std::uint64_t resident) {
  MemoryEstimate e;
  e.algorithm = a;
  e.weights_bytes = kFloat * model.param_count();
  e.gradient_bytes = kFloat * model.param_count();
  e.sample_buffer_bytes = kFloat * resident * (model.input_dim() + model.output_dim());
  e.activation_bytes = kFloat * resident * activation_floats_per_sample(model);
  e.total_bytes = e.weights_bytes + e.gradient_bytes + e.sample_buffer_bytes + e.activation_bytes;
  return e;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

std::vector<MemoryEstimate> memory_model(const ExperimentConfig& cfg, const nn::ModelConfig& model) {
  const std::uint64_t s = cfg.s_training;
  return {estimate(Algorithm::TinyReptile, model, 1), estimate(Algorithm::ReptileSerial, model, s),
          estimate(Algorithm::ReptileBatched, model, s), estimate(Algorithm::FedAvg, model, s),
          estimate(Algorithm::FedSgd, model, s)};
}

const MemoryEstimate& estimate_for(const std::vector<MemoryEstimate>& rows, Algorithm a) {
  for (const auto& r : rows)
    if (r.algorithm == a) return r;
  throw std::invalid_argument(std::string("no memory estimate for ") + to_string(a));
}

void write_memory_csv(std::ostream& out, const std::vector<MemoryEstimate>& rows) {
  out << "algorithm,weights_bytes,gradient_bytes,sample_buffer_bytes,activation_bytes,total_bytes\n";
  for (const auto& r : rows)
    out << to_string(r.algorithm) << ',' << r.weights_bytes << ',' << r.gradient_bytes << ','
        << r.sample_buffer_bytes << ',' << r.activation_bytes << ',' << r.total_bytes << '\n';
}

TimeSummary time_accounting(std::span<const RoundRecord> records) {
  if (records.empty()) throw std::invalid_argument("time_accounting needs at least one record");
  TimeSummary t;
  t.rounds = records.size();
  for (const auto& r : records) {
    t.aborted_rounds += r.aborted ? 1 : 0;
    t.mean_local_train_seconds += r.local_train_seconds;
    t.mean_bytes_down += static_cast<double>(r.bytes_down);
    t.mean_bytes_up += static_cast<double>(r.bytes_up);
    t.mean_comm_bytes += static_cast<double>(r.comm_bytes);
  }
  const double n = static_cast<double>(records.size());
  t.mean_local_train_seconds /= n;
  t.mean_bytes_down /= n;
  t.mean_bytes_up /= n;
  t.mean_comm_bytes /= n;
  return t;
}

std::span<const RoundRecord> executed_rounds(const RunResult& run) {
  std::span<const RoundRecord> all(run.records);
  if (!all.empty() && all.front().round == 0) return all.subspan(1);
  return all;
}

std::vector<AlgorithmTime> time_accounting_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("timing CSV is empty");
  const auto header = split_csv_line(line);
  auto column = [&](const char* name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::invalid_argument(std::string("timing CSV lacks column ") + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_alg = column("algorithm"), c_round = column("round"), c_sec = column("local_train_seconds"),
                    c_down = column("bytes_down"), c_up = column("bytes_up"), c_comm = column("comm_bytes"),
                    c_abort = column("aborted");

  std::vector<std::string> order;
  std::vector<std::vector<RoundRecord>> groups;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw std::invalid_argument("timing CSV row has the wrong number of cells");
    RoundRecord r;
    try {
      r.round = std::stoull(cells[c_round]);
      r.local_train_seconds = std::stod(cells[c_sec]);
      r.bytes_down = std::stoull(cells[c_down]);
      r.bytes_up = std::stoull(cells[c_up]);
      r.comm_bytes = std::stoull(cells[c_comm]);
    } catch (const std::logic_error&) {
      throw std::invalid_argument("timing CSV row holds a non-numeric value: " + line);
    }
    r.aborted = cells[c_abort] == "1";
    auto it = std::find(order.begin(), order.end(), cells[c_alg]);
    if (it == order.end()) {
      order.push_back(cells[c_alg]);
      groups.emplace_back();
      it = order.end() - 1;
    }
    groups[static_cast<std::size_t>(it - order.begin())].push_back(r);
  }
  std::vector<AlgorithmTime> out;
  for (std::size_t i = 0; i < order.size(); ++i) out.push_back({order[i], time_accounting(groups[i])});
  return out;
}

void write_time_table(std::ostream& out, const std::vector<AlgorithmTime>& rows) {
  out << "algorithm,rounds,aborted_rounds,mean_local_train_seconds,mean_bytes_down,mean_bytes_up,mean_comm_bytes\n";
  for (const auto& r : rows)
    out << r.algorithm << ',' << r.summary.rounds << ',' << r.summary.aborted_rounds << ','
        << format_number(r.summary.mean_local_train_seconds) << ',' << format_number(r.summary.mean_bytes_down)
        << ',' << format_number(r.summary.mean_bytes_up) << ',' << format_number(r.summary.mean_comm_bytes) << '\n';
}

}  // namespace tinyreptile::harness
