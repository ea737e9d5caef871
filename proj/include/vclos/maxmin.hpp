#pragma once

#include <limits>
#include <span>
#include <vector>

namespace vclos {

/// Progressive-filling max-min fair rates. paths[f] lists the link indices
/// flow f crosses; demand[f] (optional, default unbounded) caps its rate.
/// A flow with an empty path gets its demand.
std::vector<double> max_min_share(const std::vector<std::vector<int>>& paths,
                                  std::span<const double> capacity,
                                  std::span<const double> demand = {});

}  // namespace vclos
