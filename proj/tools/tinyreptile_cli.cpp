// SPDX-License-Identifier: Apache-2.0
//
// tinyreptile {run,sweep,memmodel,report}
//
// Every experiment key is a top-level option and may also come from a
// key=value file passed with --config; command-line values win.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "tinyreptile/harness/accounting.hpp"
#include "tinyreptile/harness/experiment.hpp"
#include "tinyreptile/protocol/transport.hpp"

namespace fs = std::filesystem;
using namespace tinyreptile;
using namespace tinyreptile::harness;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kTransport = 3, kNumeric = 4 };

struct RawOptions {
  std::string algorithm = "tinyreptile";
  std::string task = "sine";
  std::string transport = "inprocess";
  std::string eval_mode = "auto";
  std::string sampling = "uniform";
  std::vector<double> amplitude, frequency, phase, x_range;
};

void add_experiment_options(CLI::App& app, ExperimentConfig& c, RawOptions& raw) {
  app.add_option("--algorithm", raw.algorithm, "tinyreptile|reptile_serial|reptile_batched|fedavg|fedsgd|joint");
  app.add_option("--task", raw.task, "sine|fewshot");
  app.add_option("--rounds", c.rounds);
  app.add_option("--s_training", c.s_training, "support size of training clients (shots per class for fewshot)");
  app.add_option("--s_testing", c.s_testing);
  app.add_option("--q", c.q, "query size of testing clients");
  app.add_option("--alpha", c.alpha);
  app.add_option("--alpha_decay", c.alpha_decay);
  app.add_option("--beta", c.beta);
  app.add_option("--k", c.k, "fine-tune steps at evaluation");
  app.add_option("--epochs", c.epochs);
  app.add_option("--clients_per_round", c.clients_per_round);
  app.add_option("--master_seed", c.master_seed);
  app.add_option("--eval_every", c.eval_every);
  app.add_option("--testing_clients", c.testing_clients);
  app.add_option("--training_clients", c.training_clients);
  app.add_option("--transport", raw.transport, "inprocess|tcp");
  app.add_option("--tcp_host", c.tcp_host);
  app.add_option("--tcp_port", c.tcp_port, "0 picks a free port");
  app.add_option("--repeats", c.repeats);
  app.add_option("--eval_mode", raw.eval_mode, "auto|streaming|batched");
  app.add_option("--sampling", raw.sampling, "uniform|round_robin");
  app.add_option("--dropout_rate", c.dropout_rate);
  app.add_option("--timeout_ms", c.timeout_ms);
  app.add_option("--hidden", c.hidden, "hidden widths, e.g. 32,32")->delimiter(',');
  app.add_option("--sine_amplitude", raw.amplitude, "lo,hi")->delimiter(',')->expected(2);
  app.add_option("--sine_frequency", raw.frequency, "lo,hi")->delimiter(',')->expected(2);
  app.add_option("--sine_phase", raw.phase, "lo,hi")->delimiter(',')->expected(2);
  app.add_option("--sine_x", raw.x_range, "lo,hi")->delimiter(',')->expected(2);
  app.add_option("--ways", c.ways);
  app.add_option("--universe", c.universe);
  app.add_option("--feature_dim", c.feature_dim);
  app.add_option("--noise", c.noise);
}

void finalize(ExperimentConfig& c, const RawOptions& raw) {
  c.algorithm = parse_algorithm(raw.algorithm);
  c.task = parse_task(raw.task);
  c.transport = parse_transport(raw.transport);
  c.eval_mode = parse_eval_mode(raw.eval_mode);
  c.sampling = parse_sampling(raw.sampling);
  auto range = [](const std::vector<double>& v, tasks::Range& r) {
    if (v.size() == 2) r = tasks::Range{v[0], v[1]};
  };
  range(raw.amplitude, c.sine.amplitude);
  range(raw.frequency, c.sine.frequency);
  range(raw.phase, c.sine.phase);
  range(raw.x_range, c.sine.x);
  c.validate();
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + p.string() + " for writing");
  return f;
}

fs::path with_suffix(const fs::path& p, const std::string& tag) {
  fs::path out = p;
  out.replace_filename(p.stem().string() + "." + tag + p.extension().string());
  return out;
}

void write_weights(const fs::path& p, const nn::ModelWeights& w) {
  const auto bytes = nn::serialize_weights(w.values);
  auto f = open_out(p);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void log_run(const ExperimentConfig& c, const ExperimentResult& r) {
  for (std::size_t i = 0; i < r.repeats.size(); ++i) {
    const RunResult& run = r.repeats[i];
    std::cerr << to_string(c.algorithm) << " seed " << c.master_seed + i << ": " << run.completed_rounds
              << " rounds completed, " << run.aborted_rounds << " aborted, final eval loss "
              << format_number(run.final_eval_loss()) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial streaming federated meta-learning experiments"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value experiment file");

  ExperimentConfig cfg;
  RawOptions raw;
  add_experiment_options(app, cfg, raw);

  auto* run = app.add_subcommand("run", "train, evaluate every eval_every rounds, write metrics CSV and weights");
  run->fallthrough();
  fs::path out = "metrics.csv", weights_out = "weights.bin", timing_out;
  run->add_option("--out", out, "metrics CSV");
  run->add_option("--weights_out", weights_out, "final weights (little-endian flat format)");
  run->add_option("--timing_out", timing_out, "per-round wall-clock CSV (default: <out stem>.timing.csv)");

  auto* sw = app.add_subcommand("sweep", "run once per value of one hyperparameter");
  sw->fallthrough();
  std::string axis;
  std::vector<double> values;
  fs::path sweep_out = "sweep.csv";
  sw->add_option("--axis", axis, "beta|s_training|s_testing|k")->required();
  sw->add_option("--values", values, "comma separated")->delimiter(',')->required();
  sw->add_option("--out", sweep_out);

  auto* mem = app.add_subcommand("memmodel", "print the analytic client memory estimate per algorithm");
  mem->fallthrough();

  auto* report = app.add_subcommand("report", "summarise timing CSVs per algorithm");
  std::vector<fs::path> timing_files;
  report->add_option("timing", timing_files, "timing CSV files")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*report) {
      std::vector<AlgorithmTime> rows;
      for (const auto& p : timing_files) {
        std::ifstream f(p);
        auto part = time_accounting_csv(f);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      write_time_table(std::cout, rows);
      return kOk;
    }

    finalize(cfg, raw);

    if (*mem) {
      write_memory_csv(std::cout, memory_model(cfg, cfg.model()));
      return kOk;
    }

    if (*sw) {
      const SweepResult result = sweep(cfg, axis, values);
      auto f = open_out(sweep_out);
      write_sweep_csv(f, result);
      for (const auto& p : result.points) {
        std::cerr << axis << " = " << format_number(p.value) << '\n';
        log_run(p.result.config, p.result);
      }
      return kOk;
    }

    const ExperimentResult result = run_experiment(cfg);
    {
      auto f = open_out(out);
      write_metrics_csv(f, result);
    }
    {
      auto f = open_out(timing_out.empty() ? with_suffix(out, "timing") : timing_out);
      write_timing_csv(f, result);
    }
    write_weights(weights_out, result.repeats.front().final_weights);
    if (result.repeats.size() > 1) {
      for (std::size_t i = 0; i < result.repeats.size(); ++i) {
        auto f = open_out(with_suffix(out, "repeat" + std::to_string(i)));
        write_run_csv(f, cfg, result.repeats[i]);
        if (i > 0) write_weights(with_suffix(weights_out, "repeat" + std::to_string(i)), result.repeats[i].final_weights);
      }
    }
    log_run(cfg, result);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const protocol::TransportError& e) {
    std::cerr << "transport error: " << e.what() << '\n';
    return kTransport;
  } catch (const nn::NumericalError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}
