// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>

#include "tinyreptile/protocol/codec.hpp"

namespace tinyreptile::testing {

/// A random well-formed message of any type, finite floats only.
inline protocol::Message random_message(std::mt19937_64& rng) {
  using namespace protocol;
  std::uniform_int_distribution<int> type(1, 7);
  std::uniform_int_distribution<std::size_t> len(0, 300);
  std::normal_distribution<float> value(0.0f, 10.0f);
  auto weights = [&] {
    std::vector<float> w(len(rng));
    for (auto& x : w) x = value(rng);
    return w;
  };
  auto real = [&] { return std::uniform_real_distribution<double>(-1e6, 1e6)(rng); };
  switch (type(rng)) {
    case 1: return Hello{rng(), rng() % 2 ? PeerRole::Training : PeerRole::Testing, kProtocolVersion};
    case 2: return WeightsDown{rng(), weights()};
    case 3: return WeightsUp{rng(), weights(), real()};
    case 4: return EvalRequest{rng(), static_cast<std::uint32_t>(rng()), weights()};
    case 5: {
      EvalReport r{rng(), real(), std::nullopt};
      if (rng() % 2) r.query_accuracy = std::uniform_real_distribution<double>(0, 1)(rng);
      return r;
    }
    case 6: return Abort{rng(), static_cast<AbortReason>(rng() % 8)};
    default: return Bye{};
  }
}

}  // namespace tinyreptile::testing
