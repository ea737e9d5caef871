#include "vclos/maxmin.hpp"

#include <algorithm>
#include <stdexcept>

namespace vclos {

std::vector<double> max_min_share(const std::vector<std::vector<int>>& paths,
                                  std::span<const double> capacity, std::span<const double> demand) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const size_t nf = paths.size();
  std::vector<double> rate(nf, 0.0), cap(nf, inf);
  if (!demand.empty()) {
    if (demand.size() != nf) throw std::invalid_argument("max_min_share: demand size mismatch");
    std::copy(demand.begin(), demand.end(), cap.begin());
  }
  std::vector<double> left(capacity.begin(), capacity.end());
  std::vector<int> active(left.size(), 0);
  std::vector<char> frozen(nf, 0);
  size_t unfrozen = 0;
  for (size_t f = 0; f < nf; ++f) {
    if (paths[f].empty()) {
      rate[f] = cap[f];
      frozen[f] = 1;
      continue;
    }
    for (int l : paths[f]) {
      if (l < 0 || static_cast<size_t>(l) >= left.size())
        throw std::invalid_argument("max_min_share: link index out of range");
      ++active[l];
    }
    ++unfrozen;
  }

  while (unfrozen > 0) {
    double delta = inf;
    for (size_t l = 0; l < left.size(); ++l)
      if (active[l] > 0) delta = std::min(delta, left[l] / active[l]);
    for (size_t f = 0; f < nf; ++f)
      if (!frozen[f]) delta = std::min(delta, cap[f] - rate[f]);
    if (delta == inf) throw std::invalid_argument("max_min_share: unbounded flow");
    delta = std::max(delta, 0.0);

    for (size_t f = 0; f < nf; ++f)
      if (!frozen[f]) rate[f] += delta;
    for (size_t l = 0; l < left.size(); ++l)
      if (active[l] > 0) left[l] -= delta * active[l];

    // freeze everything sitting on a saturated link or at its cap
    constexpr double eps = 1e-9;
    std::vector<char> full(left.size(), 0);
    for (size_t l = 0; l < left.size(); ++l)
      full[l] = active[l] > 0 && left[l] <= eps * std::max(1.0, capacity[l]);
    for (size_t f = 0; f < nf; ++f) {
      if (frozen[f]) continue;
      bool stop = rate[f] >= cap[f] - eps * std::max(1.0, cap[f]);
      for (int l : paths[f]) stop = stop || full[l];
      if (!stop) continue;
      frozen[f] = 1;
      --unfrozen;
      for (int l : paths[f]) --active[l];
    }
  }
  return rate;
}

}  // namespace vclos
