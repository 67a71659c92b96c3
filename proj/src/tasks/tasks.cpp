// SPDX-License-Identifier: Apache-2.0

#include "tinyreptile/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "tinyreptile/seed.hpp"

namespace tinyreptile::tasks {
namespace {

constexpr std::uint64_t kSupportStream = 0x5;
constexpr std::uint64_t kQueryStream = 0x9;

double uniform(std::mt19937_64& rng, const Range& r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

std::vector<Sample> sine_samples(const SineTask& task, std::size_t n, std::uint64_t seed,
                                 const SineRanges& ranges) {
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = static_cast<float>(uniform(rng, ranges.x));
    out.push_back({{x}, {static_cast<float>(task(x))}});
  }
  return out;
}

std::vector<Sample> fewshot_samples(const FewShotClassTask& task, const PrototypeUniverse& universe,
                                    const std::vector<std::uint32_t>& labels, std::uint64_t seed,
                                    double noise) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Sample> out;
  out.reserve(labels.size());
  for (std::uint32_t label : labels) {
    auto proto = universe.prototype(task.class_ids[label]);
    Sample s;
    s.input.resize(proto.size());
    for (std::size_t j = 0; j < proto.size(); ++j)
      s.input[j] = noise == 0.0 ? proto[j] : static_cast<float>(proto[j] + noise * gauss(rng));
    s.target.assign(task.ways(), 0.0f);
    s.target[label] = 1.0f;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

double SineTask::operator()(double x) const noexcept { return amplitude * std::sin(frequency * x + phase); }

SineTask sample_sine_task(std::uint64_t seed, const SineRanges& ranges) {
  std::mt19937_64 rng(seed);
  SineTask t;
  t.amplitude = uniform(rng, ranges.amplitude);
  t.frequency = uniform(rng, ranges.frequency);
  t.phase = uniform(rng, ranges.phase);
  return t;
}

SupportQuerySplit realize_sine_data(const SineTask& task, std::size_t support_size, std::size_t query_size,
                                    std::uint64_t seed, const SineRanges& ranges) {
  if (query_size == 0) throw std::invalid_argument("query set must hold at least one sample");
  return {sine_samples(task, support_size, derive_seed(seed, kSupportStream), ranges),
          sine_samples(task, query_size, derive_seed(seed, kQueryStream), ranges)};
}

PrototypeUniverse::PrototypeUniverse(std::size_t classes, std::size_t dim, std::uint64_t seed)
    : classes_(classes), dim_(dim), data_(classes * dim) {
  if (classes == 0 || dim == 0) throw std::invalid_argument("prototype universe must be non-empty");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& v : data_) v = static_cast<float>(gauss(rng));
}

std::span<const float> PrototypeUniverse::prototype(std::size_t id) const {
  if (id >= classes_) throw std::out_of_range("prototype id " + std::to_string(id));
  return {data_.data() + id * dim_, dim_};
}

FewShotClassTask sample_fewshot_task(std::size_t ways, std::size_t universe_size, std::uint64_t seed) {
  if (ways == 0 || ways > universe_size)
    throw std::invalid_argument("need 1 <= M <= C, got M=" + std::to_string(ways) +
                                " C=" + std::to_string(universe_size));
  std::vector<std::uint32_t> ids(universe_size);
  std::iota(ids.begin(), ids.end(), 0u);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first `ways` slots are a uniform M-subset in random order.
  for (std::size_t i = 0; i < ways; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, universe_size - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(ways);
  return {std::move(ids)};
}

SupportQuerySplit realize_fewshot_data(const FewShotClassTask& task, const PrototypeUniverse& universe,
                                       std::size_t shots, std::size_t query_size, std::uint64_t seed,
                                       double noise) {
  if (query_size == 0) throw std::invalid_argument("query set must hold at least one sample");
  const std::size_t ways = task.ways();
  std::vector<std::uint32_t> support_labels;
  support_labels.reserve(shots * ways);
  for (std::size_t s = 0; s < shots; ++s)
    for (std::uint32_t c = 0; c < ways; ++c) support_labels.push_back(c);
  std::vector<std::uint32_t> query_labels(query_size);
  for (std::size_t q = 0; q < query_size; ++q) query_labels[q] = static_cast<std::uint32_t>(q % ways);
  return {fewshot_samples(task, universe, support_labels, derive_seed(seed, kSupportStream), noise),
          fewshot_samples(task, universe, query_labels, derive_seed(seed, kQueryStream), noise)};
}

SampleStream::SampleStream(std::span<const Sample> source, std::uint64_t seed)
    : source_(source), order_(source.size()) {
  std::iota(order_.begin(), order_.end(), 0u);
  std::mt19937_64 rng(seed);
  std::shuffle(order_.begin(), order_.end(), rng);
}

std::optional<Sample> SampleStream::next() {
  if (cursor_ == order_.size()) return std::nullopt;
  return source_[order_[cursor_++]];
}

SampleStream stream(const SupportQuerySplit& split, std::uint64_t seed) {
  return SampleStream(split.support, seed);
}

void write_split_csv(std::ostream& out, const SupportQuerySplit& split) {
  if (split.query.empty() && split.support.empty()) return;
  const Sample& first = split.support.empty() ? split.query.front() : split.support.front();
  out << "set";
  for (std::size_t i = 0; i < first.input.size(); ++i) out << ",x" << i;
  for (std::size_t i = 0; i < first.target.size(); ++i) out << ",y" << i;
  out << '\n';
  auto rows = [&](const char* name, const std::vector<Sample>& samples) {
    for (const auto& s : samples) {
      out << name;
      for (float v : s.input) out << ',' << v;
      for (float v : s.target) out << ',' << v;
      out << '\n';
    }
  };
  rows("support", split.support);
  rows("query", split.query);
}

}  // namespace tinyreptile::tasks
