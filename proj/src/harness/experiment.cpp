// SPDX-License-Identifier: Apache-2.0

#include "tinyreptile/harness/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <memory>
#include <ostream>
#include <random>
#include <thread>
#include <utility>

#include "tinyreptile/protocol/session.hpp"
#include "tinyreptile/seed.hpp"

namespace tinyreptile::harness {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Clients, data and the model for one repeat.
class World {
 public:
  World(const ExperimentConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed), shape_(std::make_shared<const nn::ModelConfig>(cfg.model())) {
    if (cfg.task == TaskKind::SyntheticFewShot)
      universe_.emplace(cfg.universe, cfg.feature_dim, derive_seed(seed, streams::kUniverse));
    testing_.reserve(cfg.testing_clients);
    for (std::size_t i = 0; i < cfg.testing_clients; ++i) {
      meta::ClientHandle c;
      c.id = i;
      c.role = meta::ClientRole::Testing;
      c.data = realize(derive_seed(seed, streams::kTestTask, i), cfg.s_testing, cfg.q,
                       derive_seed(seed, streams::kTestData, i));
      testing_.push_back(std::move(c));
    }
    pool_.resize(cfg.training_clients);
  }

  const nn::ShapePtr& shape() const { return shape_; }
  const std::vector<meta::ClientHandle>& testing() const { return testing_; }
  std::vector<meta::ClientHandle> take_testing() { return std::move(testing_); }

  const tasks::SupportQuerySplit& training_data(std::size_t j) {
    if (!pool_[j])
      pool_[j] = realize(derive_seed(seed_, streams::kTrainTask, j), cfg_.s_training, 1,
                         derive_seed(seed_, streams::kRoundData, j));
    return *pool_[j];
  }

 private:
  tasks::SupportQuerySplit realize(std::uint64_t task_seed, std::size_t support, std::size_t query,
                                   std::uint64_t data_seed) const {
    if (cfg_.task == TaskKind::Sine)
      return tasks::realize_sine_data(tasks::sample_sine_task(task_seed, cfg_.sine), support, query, data_seed,
                                      cfg_.sine);
    const auto task = tasks::sample_fewshot_task(cfg_.ways, cfg_.universe, task_seed);
    return tasks::realize_fewshot_data(task, *universe_, support, query, data_seed, cfg_.noise);
  }

  const ExperimentConfig& cfg_;
  std::uint64_t seed_;
  nn::ShapePtr shape_;
  std::optional<tasks::PrototypeUniverse> universe_;
  std::vector<meta::ClientHandle> testing_;
  std::vector<std::optional<tasks::SupportQuerySplit>> pool_;
};

struct StepOutcome {
  nn::ModelWeights weights;
  bool aborted = false;
  double local_seconds = 0.0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
};

/// Frame bytes a client session costs when it runs to completion or drops
/// right after receiving the weights.
void account_session(StepOutcome& out, std::size_t params, bool dropped) {
  using protocol::MessageType;
  out.bytes_up += protocol::control_frame_size(MessageType::Hello);
  out.bytes_down += protocol::weights_down_frame_size(params);
  if (dropped) return;
  out.bytes_up += protocol::weights_up_frame_size(params);
  out.bytes_down += protocol::control_frame_size(MessageType::Bye);
}

/// TinyReptile rounds travel through the real protocol: a client thread per
/// round talks to the server over the in-process channel or loopback TCP.
class WireRunner {
 public:
  WireRunner(const ExperimentConfig& cfg, nn::ShapePtr shape)
      : cfg_(cfg), server_(shape, protocol::ServerOptions{protocol::Millis(cfg.timeout_ms)}) {
    if (cfg.transport == TransportKind::Tcp) listener_ = std::make_unique<protocol::TcpListener>(cfg.tcp_host, cfg.tcp_port);
  }

  StepOutcome round(const nn::ModelWeights& phi, double alpha, const meta::ClientHandle& client, bool drop) {
    StepOutcome out{phi};
    protocol::ClientConfig ccfg;
    ccfg.client_id = client.id;
    ccfg.beta = static_cast<float>(cfg_.beta);
    ccfg.stream_seed = client.stream_seed;
    ccfg.timeout = protocol::Millis(cfg_.timeout_ms);
    ccfg.drop_on_weights = drop;

    protocol::ClientStats stats;
    std::unique_ptr<protocol::Transport> server_end;
    std::thread worker;
    const nn::ShapePtr& shape = server_.shape();
    if (!listener_) {
      auto [a, b] = protocol::make_inprocess_pair();
      server_end = std::move(a);
      worker = std::thread([&, end = std::move(b)] { stats = protocol::client_loop(*end, shape, client.data, ccfg); });
    } else {
      const std::uint16_t port = listener_->port();
      worker = std::thread([&, port] {
        try {
          auto end = protocol::tcp_connect(cfg_.tcp_host, port, ccfg.timeout);
          stats = protocol::client_loop(*end, shape, client.data, ccfg);
        } catch (const protocol::TransportError&) {
          stats.ended_by = protocol::AbortReason::Disconnect;
        }
      });
      try {
        server_end = listener_->accept(ccfg.timeout);
      } catch (const protocol::TransportError&) {
      }
    }

    if (server_end) {
      protocol::OpenResult open = server_.open_session(std::move(server_end));
      if (open.session) {
        protocol::RoundOutcome r = open.session->serve_round(phi, alpha);
        open.session->close();
        out.bytes_down = open.session->transport().bytes_sent();
        out.bytes_up = open.session->transport().bytes_received();
        out.aborted = !r.updated;
        out.weights = std::move(r.weights);
      } else {
        out.aborted = true;
      }
    } else {
      out.aborted = true;
    }
    worker.join();
    out.local_seconds = stats.local_train_seconds;
    return out;
  }

 private:
  const ExperimentConfig& cfg_;
  protocol::Server server_;
  std::unique_ptr<protocol::TcpListener> listener_;
};

class ClientPicker {
 public:
  ClientPicker(const ExperimentConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), rng_(derive_seed(seed, streams::kClientPick)) {}

  std::vector<std::size_t> pick(std::size_t round, std::size_t count) {
    std::vector<std::size_t> ids;
    ids.reserve(count);
    if (cfg_.sampling == ClientSampling::RoundRobin) {
      for (std::size_t s = 0; s < count; ++s) ids.push_back(((round - 1) * count + s) % cfg_.training_clients);
      return ids;
    }
    std::uniform_int_distribution<std::size_t> dist(0, cfg_.training_clients - 1);
    while (ids.size() < count) {
      const std::size_t j = dist(rng_);
      if (std::find(ids.begin(), ids.end(), j) == ids.end()) ids.push_back(j);
    }
    return ids;
  }

 private:
  const ExperimentConfig& cfg_;
  std::mt19937_64 rng_;
};

RoundRecord evaluate(const nn::ModelWeights& phi, const World& world, const ExperimentConfig& cfg, std::size_t round) {
  RoundRecord rec;
  rec.round = round;
  const meta::EvalReport report =
      meta::evaluate_meta(phi, world.testing(), meta::EvalConfig{cfg.k, static_cast<float>(cfg.beta), cfg.finetune_mode()});
  rec.eval_loss = report.mean_query_loss;
  rec.eval_accuracy = report.mean_query_accuracy;
  return rec;
}

std::string opt(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.stddev = std::sqrt(ss / static_cast<double>(xs.size()));
  return m;
}

bool has_accuracy(const ExperimentConfig& cfg) { return cfg.task == TaskKind::SyntheticFewShot; }

std::vector<std::string> metrics_header(const ExperimentConfig& cfg, std::size_t repeats) {
  std::vector<std::string> h{"round"};
  if (repeats == 1) {
    h.push_back("eval_loss");
    if (has_accuracy(cfg)) h.push_back("eval_accuracy");
    h.insert(h.end(), {"comm_bytes", "aborted"});
  } else {
    h.insert(h.end(), {"eval_loss_mean", "eval_loss_std"});
    if (has_accuracy(cfg)) h.insert(h.end(), {"eval_accuracy_mean", "eval_accuracy_std"});
    h.insert(h.end(), {"comm_bytes_mean", "aborted_count"});
  }
  return h;
}

/// Metric cells for record `i` of every repeat (without the round column).
std::vector<std::string> metrics_cells(const ExperimentResult& result, std::size_t i) {
  const ExperimentConfig& cfg = result.config;
  std::vector<std::string> cells;
  if (result.repeats.size() == 1) {
    const RoundRecord& r = result.repeats.front().records[i];
    cells.push_back(opt(r.eval_loss));
    if (has_accuracy(cfg)) cells.push_back(opt(r.eval_accuracy));
    cells.push_back(std::to_string(r.comm_bytes));
    cells.push_back(r.aborted ? "1" : "0");
    return cells;
  }
  std::vector<double> loss, acc, bytes;
  std::size_t aborted = 0;
  for (const RunResult& run : result.repeats) {
    const RoundRecord& r = run.records[i];
    if (r.eval_loss) loss.push_back(*r.eval_loss);
    if (r.eval_accuracy) acc.push_back(*r.eval_accuracy);
    bytes.push_back(static_cast<double>(r.comm_bytes));
    aborted += r.aborted ? 1 : 0;
  }
  auto pair = [&](const std::vector<double>& xs) {
    if (xs.empty()) {
      cells.push_back("");
      cells.push_back("");
      return;
    }
    const Moments m = moments(xs);
    cells.push_back(format_number(m.mean));
    cells.push_back(format_number(m.stddev));
  };
  pair(loss);
  if (has_accuracy(cfg)) pair(acc);
  cells.push_back(format_number(moments(bytes).mean));
  cells.push_back(std::to_string(aborted));
  return cells;
}

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
  out << '\n';
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double RunResult::final_eval_loss() const {
  for (auto it = records.rbegin(); it != records.rend(); ++it)
    if (it->eval_loss) return *it->eval_loss;
  throw std::logic_error("run has no evaluated round");
}

double RunResult::eval_loss_at(std::size_t round) const {
  std::optional<double> best;
  for (const RoundRecord& r : records) {
    if (r.round > round) break;
    if (r.eval_loss) best = r.eval_loss;
  }
  if (!best) throw std::logic_error("run has no evaluated round at or before the requested one");
  return *best;
}

std::vector<meta::ClientHandle> make_testing_clients(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ExperimentConfig no_pool = cfg;
  no_pool.training_clients = 0;
  return World(no_pool, seed).take_testing();
}

RunResult run_once(const ExperimentConfig& cfg, std::uint64_t seed, const RoundObserver& observer) {
  cfg.validate();
  World world(cfg, seed);
  ClientPicker picker(cfg, seed);
  std::mt19937_64 dropout_rng(derive_seed(seed, streams::kDropout));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::unique_ptr<WireRunner> wire;
  if (cfg.algorithm == Algorithm::TinyReptile) wire = std::make_unique<WireRunner>(cfg, world.shape());

  RunResult run;
  run.final_weights = nn::init_weights(world.shape(), derive_seed(seed, streams::kInit));
  run.records.reserve(cfg.rounds + 1);
  run.records.push_back(evaluate(run.final_weights, world, cfg, 0));
  const std::size_t params = world.shape()->param_count();

  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    const double alpha = meta::scheduled_alpha(cfg.alpha, cfg.alpha_decay, r - 1, cfg.rounds);
    const meta::AlgoConfig acfg = cfg.algo(alpha);
    const std::size_t count = is_serial(cfg.algorithm) ? 1 : cfg.clients_per_round;

    std::vector<meta::ClientHandle> clients;
    clients.reserve(count);
    for (std::size_t slot = 0; slot < count; ++slot) clients.emplace_back();
    const std::vector<std::size_t> ids = picker.pick(r, count);
    for (std::size_t slot = 0; slot < count; ++slot) {
      meta::ClientHandle& c = clients[slot];
      c.id = ids[slot];
      c.data = world.training_data(ids[slot]);
      c.stream_seed = derive_seed(seed, streams::kStreamOrder, (r - 1) * count + slot);
      if (unit(dropout_rng) < cfg.dropout_rate) c.drop_after = c.data.support.size() / 2;
    }

    StepOutcome step;
    const auto t0 = Clock::now();
    switch (cfg.algorithm) {
      case Algorithm::TinyReptile:
        step = wire->round(run.final_weights, alpha, clients.front(), clients.front().drop_after.has_value());
        break;
      case Algorithm::ReptileSerial: {
        meta::RoundResult res = meta::reptile_serial_round(run.final_weights, clients.front(), acfg);
        step.local_seconds = seconds_since(t0);
        step.aborted = res.aborted();
        step.weights = std::move(res.weights);
        break;
      }
      case Algorithm::ReptileBatched:
      case Algorithm::FedAvg:
      case Algorithm::FedSgd: {
        meta::RoundResult res = cfg.algorithm == Algorithm::FedAvg ? meta::fedavg_round(run.final_weights, clients, acfg)
                                : cfg.algorithm == Algorithm::FedSgd
                                    ? meta::fedsgd_round(run.final_weights, clients, acfg)
                                    : meta::reptile_batched_round(run.final_weights, clients, acfg);
        step.local_seconds = seconds_since(t0);
        step.aborted = res.aborted();
        step.weights = std::move(res.weights);
        break;
      }
      case Algorithm::Joint: {
        const bool all_dropped = std::all_of(clients.begin(), clients.end(),
                                             [](const meta::ClientHandle& c) { return c.drop_after.has_value(); });
        step.weights = all_dropped ? run.final_weights
                                   : meta::joint_training_baseline(run.final_weights, clients, acfg, 1,
                                                                   derive_seed(seed, streams::kJoint, r),
                                                                   cfg.s_training);
        step.local_seconds = seconds_since(t0);
        step.aborted = all_dropped;
        break;
      }
    }
    if (cfg.algorithm != Algorithm::TinyReptile && cfg.algorithm != Algorithm::Joint)
      for (const auto& c : clients) account_session(step, params, c.drop_after.has_value());

    const nn::ModelWeights before = std::exchange(run.final_weights, std::move(step.weights));
    RoundRecord rec = r % cfg.eval_every == 0 ? evaluate(run.final_weights, world, cfg, r) : RoundRecord{};
    rec.round = r;
    rec.local_train_seconds = step.local_seconds;
    rec.bytes_down = step.bytes_down;
    rec.bytes_up = step.bytes_up;
    rec.comm_bytes = step.bytes_down + step.bytes_up;
    rec.aborted = step.aborted;
    if (observer) observer(rec, before, run.final_weights);
    run.records.push_back(rec);
    (step.aborted ? run.aborted_rounds : run.completed_rounds) += 1;
  }
  return run;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result{cfg, {}};
  result.repeats.reserve(cfg.repeats);
  for (std::size_t i = 0; i < cfg.repeats; ++i) result.repeats.push_back(run_once(cfg, cfg.master_seed + i));
  return result;
}

void write_run_csv(std::ostream& out, const ExperimentConfig& cfg, const RunResult& run) {
  ExperimentConfig single = cfg;
  single.repeats = 1;
  write_metrics_csv(out, ExperimentResult{single, {run}});
}

void write_metrics_csv(std::ostream& out, const ExperimentResult& result) {
  write_row(out, metrics_header(result.config, result.repeats.size()));
  const std::size_t rows = result.repeats.front().records.size();
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<std::string> cells{std::to_string(result.repeats.front().records[i].round)};
    auto rest = metrics_cells(result, i);
    cells.insert(cells.end(), rest.begin(), rest.end());
    write_row(out, cells);
  }
}

void write_timing_csv(std::ostream& out, const ExperimentResult& result) {
  write_row(out, {"algorithm", "repeat", "round", "local_train_seconds", "bytes_down", "bytes_up", "comm_bytes",
                       "aborted"});
  for (std::size_t rep = 0; rep < result.repeats.size(); ++rep)
    for (const RoundRecord& r : result.repeats[rep].records) {
      if (r.round == 0) continue;
      write_row(out, {to_string(result.config.algorithm), std::to_string(rep), std::to_string(r.round),
                           format_number(r.local_train_seconds), std::to_string(r.bytes_down),
                           std::to_string(r.bytes_up), std::to_string(r.comm_bytes), r.aborted ? "1" : "0"});
    }
}

SweepResult sweep(const ExperimentConfig& base, const std::string& axis, const std::vector<double>& values) {
  if (!is_sweep_axis(axis)) throw ConfigError("axis", "'" + axis + "' is not sweepable (beta, s_training, s_testing, k)");
  if (values.empty()) throw ConfigError("values", "sweep needs at least one value");
  SweepResult out{axis, {}};
  for (double v : values) {
    ExperimentConfig cfg = base;
    apply_axis(cfg, axis, v);
    out.points.push_back(SweepPoint{v, run_experiment(cfg)});
  }
  return out;
}

void write_sweep_csv(std::ostream& out, const SweepResult& result) {
  if (result.points.empty()) return;
  const ExperimentResult& first = result.points.front().result;
  std::vector<std::string> header{"axis", "value"};
  const auto metrics = metrics_header(first.config, first.repeats.size());
  header.insert(header.end(), metrics.begin(), metrics.end());
  write_row(out, header);
  for (const SweepPoint& p : result.points) {
    const std::size_t rows = p.result.repeats.front().records.size();
    for (std::size_t i = 0; i < rows; ++i) {
      std::vector<std::string> cells{result.axis, format_number(p.value),
                                     std::to_string(p.result.repeats.front().records[i].round)};
      auto rest = metrics_cells(p.result, i);
      cells.insert(cells.end(), rest.begin(), rest.end());
      write_row(out, cells);
    }
  }
}

}  // namespace tinyreptile::harness
