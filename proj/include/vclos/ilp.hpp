#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vclos {

enum class Sense : std::uint8_t { Le, Eq, Ge };

struct IlpTerm {
  int var = 0;
  std::int64_t coef = 0;
};

struct IlpConstraint {
  std::vector<IlpTerm> terms;
  Sense sense = Sense::Le;
  std::int64_t rhs = 0;
  std::string name;
};

struct IlpVar {
  std::string name;
  std::int64_t lb = 0;
  std::int64_t ub = 1;
  std::int64_t cost = 0;
  bool prefer_high = false;  // branch on ub first
};

/// Minimise sum(cost * x) subject to linear rows over bounded integers.
/// Variables are branched in declaration order, so callers put the
/// decisions that drive the objective first.
class IntegerProgram {
 public:
  int add_var(std::string name, std::int64_t lb, std::int64_t ub, std::int64_t cost = 0,
              bool prefer_high = false);
  void add_constraint(std::vector<IlpTerm> terms, Sense sense, std::int64_t rhs, std::string name = {});

  const std::vector<IlpVar>& vars() const { return vars_; }
  const std::vector<IlpConstraint>& constraints() const { return rows_; }
  int num_vars() const { return static_cast<int>(vars_.size()); }

  std::int64_t objective(const std::vector<std::int64_t>& x) const;
  /// True when x respects every bound and row.
  bool feasible(const std::vector<std::int64_t>& x) const;

  /// Plain-text dump:
  ///   var <name> <lb> <ub> <cost>
  ///   row <name> <le|eq|ge> <rhs> : <coef> <var> ...
  std::string dump() const;

 private:
  std::vector<IlpVar> vars_;
  std::vector<IlpConstraint> rows_;
};

enum class IlpStatus : std::uint8_t { Optimal, Infeasible, Timeout };

struct IlpResult {
  IlpStatus status = IlpStatus::Infeasible;
  std::vector<std::int64_t> x;
  std::int64_t objective = 0;
  long nodes = 0;
};

/// Depth-first branch and bound with bound propagation. Proven optimal when
/// status is Optimal; Timeout discards any incumbent.
IlpResult ilp_solve(const IntegerProgram& p, double time_budget_s = 10.0);

}  // namespace vclos
