#pragma once

#include <span>

#include "dflshield/model/params.hpp"

namespace dflshield {

/// theta <- (theta + sum_j RP_j) / (|N| + 1).
///
/// Each coordinate is summed in sorted order so the result does not depend on
/// the order of `received`; nodes that see the same multiset of models end up
/// bit-identical. An empty `received` returns `own` unchanged.
ModelParams aggregate_fedavg(const ModelParams& own, std::span<const ModelParams> received);

}  // namespace dflshield
