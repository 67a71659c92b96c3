// SPDX-License-Identifier: Apache-2.0
//
// Task distributions for the federated clients: sine-wave regression and a
// synthetic few-shot classification problem, plus the one-pass sample
// stream each client trains from.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "tinyreptile/nn.hpp"

namespace tinyreptile::tasks {

using nn::Sample;

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

struct SineRanges {
  Range amplitude{0.1, 5.0};
  Range frequency{0.8, 1.2};
  Range phase{0.0, 2.0 * std::numbers::pi};
  Range x{-5.0, 5.0};
};

/// f(x) = amplitude * sin(frequency * x + phase)
struct SineTask {
  double amplitude = 1.0;
  double frequency = 1.0;
  double phase = 0.0;

  double operator()(double x) const noexcept;
  bool operator==(const SineTask&) const = default;
};

struct SupportQuerySplit {
  std::vector<Sample> support;
  std::vector<Sample> query;
};

SineTask sample_sine_task(std::uint64_t seed, const SineRanges& ranges = {});

/// Support and query are drawn from independent generators. Q must be >= 1.
SupportQuerySplit realize_sine_data(const SineTask& task, std::size_t support_size,
                                    std::size_t query_size, std::uint64_t seed,
                                    const SineRanges& ranges = {});

/// C prototype vectors with i.i.d. standard normal entries.
class PrototypeUniverse {
 public:
  PrototypeUniverse(std::size_t classes, std::size_t dim, std::uint64_t seed);

  std::size_t classes() const noexcept { return classes_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const float> prototype(std::size_t id) const;

 private:
  std::size_t classes_;
  std::size_t dim_;
  std::vector<float> data_;
};

struct FewShotClassTask {
  /// Global prototype ids; the model sees position i as label i.
  std::vector<std::uint32_t> class_ids;

  std::size_t ways() const noexcept { return class_ids.size(); }
};

/// Throws std::invalid_argument unless 1 <= ways <= universe_size.
FewShotClassTask sample_fewshot_task(std::size_t ways, std::size_t universe_size, std::uint64_t seed);

/// shots * M support samples and `query_size` query samples, each a
/// prototype plus N(0, noise^2) per feature with a one-hot target.
SupportQuerySplit realize_fewshot_data(const FewShotClassTask& task, const PrototypeUniverse& universe,
                                       std::size_t shots, std::size_t query_size, std::uint64_t seed,
                                       double noise = 0.1);

/// One-pass cursor over a support set in a seed-shuffled order. Only the
/// sample most recently returned by next() is materialised; there is no
/// rewind.
class SampleStream {
 public:
  SampleStream(std::span<const Sample> source, std::uint64_t seed);

  std::optional<Sample> next();
  std::size_t remaining() const noexcept { return order_.size() - cursor_; }
  bool exhausted() const noexcept { return remaining() == 0; }

 private:
  std::span<const Sample> source_;
  std::vector<std::uint32_t> order_;
  std::size_t cursor_ = 0;
};

SampleStream stream(const SupportQuerySplit& split, std::uint64_t seed);

/// CSV export of a split: `set,` then input columns then target columns.
void write_split_csv(std::ostream& out, const SupportQuerySplit& split);

}  // namespace tinyreptile::tasks
