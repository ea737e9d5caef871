#include "vclos/ilp.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <map>
#include <stdexcept>

#include <fmt/format.h>

namespace vclos {

int IntegerProgram::add_var(std::string name, std::int64_t lb, std::int64_t ub, std::int64_t cost,
                            bool prefer_high) {
  if (lb > ub) throw std::invalid_argument(fmt::format("variable {}: lb {} > ub {}", name, lb, ub));
  vars_.push_back(IlpVar{std::move(name), lb, ub, cost, prefer_high});
  return static_cast<int>(vars_.size()) - 1;
}

void IntegerProgram::add_constraint(std::vector<IlpTerm> terms, Sense sense, std::int64_t rhs,
                                    std::string name) {
  for (const IlpTerm& t : terms)
    if (t.var < 0 || t.var >= num_vars())
      throw std::invalid_argument(fmt::format("constraint {}: unknown variable {}", name, t.var));
  rows_.push_back(IlpConstraint{std::move(terms), sense, rhs, std::move(name)});
}

std::int64_t IntegerProgram::objective(const std::vector<std::int64_t>& x) const {
  std::int64_t z = 0;
  for (size_t j = 0; j < vars_.size(); ++j) z += vars_[j].cost * x[j];
  return z;
}

bool IntegerProgram::feasible(const std::vector<std::int64_t>& x) const {
  if (x.size() != vars_.size()) return false;
  for (size_t j = 0; j < vars_.size(); ++j)
    if (x[j] < vars_[j].lb || x[j] > vars_[j].ub) return false;
  for (const IlpConstraint& r : rows_) {
    std::int64_t a = 0;
    for (const IlpTerm& t : r.terms) a += t.coef * x[t.var];
    if ((r.sense == Sense::Le && a > r.rhs) || (r.sense == Sense::Ge && a < r.rhs) ||
        (r.sense == Sense::Eq && a != r.rhs))
      return false;
  }
  return true;
}

std::string IntegerProgram::dump() const {
  std::string out = fmt::format("# {} vars, {} rows, minimise sum(cost*x)\n", vars_.size(), rows_.size());
  for (const IlpVar& v : vars_) out += fmt::format("var {} {} {} {}\n", v.name, v.lb, v.ub, v.cost);
  for (size_t i = 0; i < rows_.size(); ++i) {
    const IlpConstraint& r = rows_[i];
    const char* sense = r.sense == Sense::Le ? "le" : r.sense == Sense::Eq ? "eq" : "ge";
    out += fmt::format("row {} {} {} :", r.name.empty() ? fmt::format("r{}", i) : r.name, sense, r.rhs);
    for (const IlpTerm& t : r.terms) out += fmt::format(" {} {}", t.coef, vars_[t.var].name);
    out += '\n';
  }
  return out;
}

namespace {

using i64 = std::int64_t;

i64 floor_div(i64 a, i64 b) {  // b > 0
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

struct Row {
  std::vector<IlpTerm> terms;  // sum <= rhs
  i64 rhs = 0;
  i64 min_act = 0;
  i64 max_act = 0;
};

class Solver {
 public:
  Solver(const IntegerProgram& p, double budget) : p_(p), budget_(budget) {
    const int n = p.num_vars();
    lb_.resize(n);
    ub_.resize(n);
    occurs_.resize(n);
    for (int j = 0; j < n; ++j) lb_[j] = p.vars()[j].lb, ub_[j] = p.vars()[j].ub;
    for (const IlpConstraint& c : p.constraints()) {
      if (c.sense != Sense::Ge) add_row(c.terms, c.rhs, 1);
      if (c.sense != Sense::Le) add_row(c.terms, c.rhs, -1);
    }
    std::vector<IlpTerm> obj;
    for (int j = 0; j < n; ++j)
      if (p.vars()[j].cost != 0) obj.push_back({j, p.vars()[j].cost});
    obj_row_ = static_cast<int>(rows_.size());
    add_row(obj, std::numeric_limits<i64>::max() / 4, 1);
    for (Row& r : rows_) recompute(r);
    pick_groups();
    queued_.assign(rows_.size(), 0);
  }

  IlpResult run() {
    start_ = std::chrono::steady_clock::now();
    IlpResult res;
    for (int r = 0; r < static_cast<int>(rows_.size()); ++r) enqueue(r);
    if (propagate()) dfs();
    res.nodes = nodes_;
    if (timed_out_) {
      res.status = IlpStatus::Timeout;
    } else if (found_) {
      res.status = IlpStatus::Optimal;
      res.x = best_;
      res.objective = best_obj_;
    }
    return res;
  }

 private:
  struct Part {
    int z = -1;  // count variable, or -1
    std::vector<int> vars;
  };
  struct Group {
    i64 k = 0;
    bool flat = false;
    std::vector<Part> parts;
  };

  struct Trail {
    int var;
    i64 lb, ub;
  };

  void add_row(const std::vector<IlpTerm>& terms, i64 rhs, int sign) {
    Row r;
    for (const IlpTerm& t : terms)
      if (t.coef != 0) r.terms.push_back({t.var, sign * t.coef});
    r.rhs = sign * rhs;
    const int idx = static_cast<int>(rows_.size());
    for (const IlpTerm& t : r.terms) occurs_[t.var].push_back({idx, t.coef});
    rows_.push_back(std::move(r));
  }

  void recompute(Row& r) const {
    r.min_act = r.max_act = 0;
    for (const IlpTerm& t : r.terms) {
      r.min_act += t.coef > 0 ? t.coef * lb_[t.var] : t.coef * ub_[t.var];
      r.max_act += t.coef > 0 ? t.coef * ub_[t.var] : t.coef * lb_[t.var];
    }
  }

  void shift(int v, i64 nl, i64 nu) {
    const i64 dl = nl - lb_[v], du = nu - ub_[v];
    for (const IlpTerm& o : occurs_[v]) {
      Row& r = rows_[o.var];
      if (o.coef > 0) {
        r.min_act += o.coef * dl;
        r.max_act += o.coef * du;
      } else {
        r.min_act += o.coef * du;
        r.max_act += o.coef * dl;
      }
    }
    lb_[v] = nl;
    ub_[v] = nu;
  }

  void set_bounds(int v, i64 nl, i64 nu) {
    trail_.push_back({v, lb_[v], ub_[v]});
    shift(v, nl, nu);
    for (const IlpTerm& o : occurs_[v]) enqueue(o.var);
  }

  void undo(size_t mark) {
    while (trail_.size() > mark) {
      const Trail t = trail_.back();
      trail_.pop_back();
      shift(t.var, t.lb, t.ub);
    }
  }

  void enqueue(int r) {
    if (!queued_[r]) queued_[r] = 1, queue_.push_back(r);
  }

  void clear_queue() {
    for (int r : queue_) queued_[r] = 0;
    queue_.clear();
  }

  bool propagate() {
    while (!queue_.empty()) {
      const int ri = queue_.back();
      queue_.pop_back();
      queued_[ri] = 0;
      const Row& r = rows_[ri];
      if (r.min_act > r.rhs) {
        clear_queue();
        return false;
      }
      if (r.max_act <= r.rhs) continue;
      const i64 slack = r.rhs - r.min_act;
      for (const IlpTerm& t : r.terms) {
        const int v = t.var;
        if (lb_[v] == ub_[v]) continue;
        if (t.coef > 0) {
          const i64 cap = lb_[v] + floor_div(slack, t.coef);
          if (cap < ub_[v]) set_bounds(v, lb_[v], cap);
        } else {
          const i64 floor_v = ub_[v] - floor_div(slack, -t.coef);
          if (floor_v > lb_[v]) set_bounds(v, floor_v, ub_[v]);
        }
        if (lb_[v] > ub_[v]) {
          clear_queue();
          return false;
        }
        if (rows_[ri].min_act > rows_[ri].rhs) {
          clear_queue();
          return false;
        }
      }
    }
    return true;
  }

  bool plain_binary(int j) const {
    const IlpVar& v = p_.vars()[j];
    return v.lb == 0 && v.ub <= 1 && v.cost >= 0;
  }

  // Cardinality structure used for bounding, found in the rows:
  //   group:   sum of binaries = k
  //   nested:  sum_k z_k + sum of binaries = k, where each z_k is defined by
  //            sum of binaries - z_k = 0
  // Costs are nonnegative, so each group pays at least for its cheapest
  // members; nested groups are filled greedily, which is exact for them.
  void pick_groups() {
    const int n = p_.num_vars();
    std::vector<char> taken(n, 0);
    std::map<int, std::vector<int>> defined;  // z -> members
    for (const IlpConstraint& c : p_.constraints()) {
      if (c.sense != Sense::Eq || c.rhs != 0) continue;
      int z = -1;
      bool ok = true;
      for (const IlpTerm& t : c.terms) {
        if (t.coef == -1 && z < 0 && p_.vars()[t.var].cost == 0 && p_.vars()[t.var].lb >= 0) z = t.var;
        else ok = ok && t.coef == 1 && plain_binary(t.var);
      }
      if (!ok || z < 0 || defined.count(z)) continue;
      std::vector<int> members;
      for (const IlpTerm& t : c.terms)
        if (t.var != z) members.push_back(t.var);
      defined[z] = std::move(members);
    }
    auto by_cost = [&](std::vector<int>& v) {
      std::stable_sort(v.begin(), v.end(), [&](int a, int b) { return p_.vars()[a].cost < p_.vars()[b].cost; });
    };
    // nested rows first so they claim their members before a plain group does
    for (int pass = 0; pass < 2; ++pass)
    for (const IlpConstraint& c : p_.constraints()) {
      if (c.sense != Sense::Eq || c.terms.empty()) continue;
      bool nested = false, ok = true;
      std::vector<int> seen;
      for (const IlpTerm& t : c.terms) {
        if (t.coef != 1) ok = false;
        else if (defined.count(t.var)) {
          nested = true;
          for (int m : defined[t.var]) seen.push_back(m);
        } else if (!plain_binary(t.var)) ok = false;
        else seen.push_back(t.var);
      }
      for (int j : seen) ok = ok && !taken[j];
      std::sort(seen.begin(), seen.end());
      ok = ok && std::adjacent_find(seen.begin(), seen.end()) == seen.end();
      if (!ok || nested != (pass == 0)) continue;
      Group g;
      g.k = c.rhs;
      for (const IlpTerm& t : c.terms) {
        Part part;
        if (defined.count(t.var)) {
          part.z = t.var;
          part.vars = defined[t.var];
        } else {
          part.vars = {t.var};
        }
        by_cost(part.vars);
        for (int j : part.vars) taken[j] = 1;
        g.parts.push_back(std::move(part));
      }
      if (!nested) {
        // flatten a plain group into one part
        Part all;
        for (Part& pt : g.parts) all.vars.push_back(pt.vars[0]);
        by_cost(all.vars);
        g.parts = {std::move(all)};
        g.flat = true;
      }
      groups_.push_back(std::move(g));
    }
    for (int j = 0; j < n; ++j)
      if (!taken[j] && p_.vars()[j].cost != 0) loose_.push_back(j);
  }

  static constexpr i64 kInfeasible = std::numeric_limits<i64>::max() / 2;

  i64 group_bound(const Group& g) const {
    i64 z = 0, need = g.k;
    std::vector<i64> extra;
    for (const Part& pt : g.parts) {
      i64 fixed = 0;
      std::vector<i64> open;
      for (int j : pt.vars) {
        if (lb_[j] == 1) z += p_.vars()[j].cost, ++fixed;
        else if (ub_[j] == 1) open.push_back(p_.vars()[j].cost);
      }
      i64 lo = fixed, hi = fixed + static_cast<i64>(open.size());
      if (g.flat) {
        lo = fixed;
      } else if (pt.z >= 0) {
        lo = std::max(lo, lb_[pt.z]);
        hi = std::min(hi, ub_[pt.z]);
      }
      if (lo > hi) return kInfeasible;
      size_t i = 0;
      for (; static_cast<i64>(i) < lo - fixed; ++i) z += open[i];
      for (; static_cast<i64>(i) < hi - fixed; ++i) extra.push_back(open[i]);
      need -= lo;
    }
    if (need < 0 || need > static_cast<i64>(extra.size())) return kInfeasible;
    std::partial_sort(extra.begin(), extra.begin() + need, extra.end());
    for (i64 i = 0; i < need; ++i) z += extra[i];
    return z;
  }

  i64 lower_bound() const {
    i64 z = 0;
    for (int j : loose_) {
      const i64 c = p_.vars()[j].cost;
      z += c > 0 ? c * lb_[j] : c * ub_[j];
    }
    for (const Group& g : groups_) {
      const i64 b = group_bound(g);
      if (b >= kInfeasible) return kInfeasible;
      z += b;
    }
    return z;
  }

  bool out_of_time() {
    if (timed_out_) return true;
    if ((++nodes_ & 1023) == 0) {
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      if (elapsed > budget_) timed_out_ = true;
    }
    return timed_out_;
  }

  void dfs() {
    if (out_of_time()) return;
    const i64 bound = lower_bound();
    if (bound >= kInfeasible || (found_ && bound >= best_obj_)) return;
    int v = -1;
    for (int j = 0; j < p_.num_vars(); ++j)
      if (lb_[j] < ub_[j]) {
        v = j;
        break;
      }
    if (v < 0) {
      best_ = lb_;
      found_ = true;
      best_obj_ = p_.objective(best_);
      // later solutions must be strictly better
      Row& obj = rows_[obj_row_];
      obj.rhs = best_obj_ - 1;
      return;
    }
    const i64 lo = lb_[v], hi = ub_[v];
    const bool high = p_.vars()[v].prefer_high;
    for (i64 k = 0; k <= hi - lo; ++k) {
      const i64 val = high ? hi - k : lo + k;
      const size_t mark = trail_.size();
      set_bounds(v, val, val);
      enqueue(obj_row_);
      if (propagate()) dfs();
      undo(mark);
      if (timed_out_) return;
    }
  }


  const IntegerProgram& p_;
  double budget_;
  std::vector<i64> lb_, ub_;
  std::vector<Row> rows_;
  std::vector<std::vector<IlpTerm>> occurs_;  // var -> (row, coef)
  int obj_row_ = -1;
  std::vector<Group> groups_;
  std::vector<int> loose_;
  std::vector<Trail> trail_;
  std::vector<int> queue_;
  std::vector<char> queued_;
  std::vector<i64> best_;
  i64 best_obj_ = 0;
  bool found_ = false;
  long nodes_ = 0;
  bool timed_out_ = false;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

IlpResult ilp_solve(const IntegerProgram& p, double time_budget_s) {
  Solver s(p, time_budget_s);
  return s.run();
}

}  // namespace vclos
