#include "comracer/oracle.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <unordered_map>

#include <boost/container_hash/hash.hpp>

namespace comracer {

std::string to_string(const AbstractOp& op) {
  using K = AbstractOp::Kind;
  switch (op.kind) {
    case K::load: return "load " + op.field + " " + op.local;
    case K::store: return "store " + op.field + " " + op.local;
    case K::alloc_into: return "alloc " + op.local;
    case K::free_val: return "free " + op.local;
    case K::use_val: return "use " + op.local;
    case K::guard: return "guard " + op.local;
  }
  return "?";
}

AbstractOp parse_op(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  auto fail = [&] { return std::invalid_argument("bad op '" + std::string(text) + "'"); };
  if (words.empty()) throw fail();
  const auto& m = words[0];
  if (m == "load" || m == "store") {
    if (words.size() != 3) throw fail();
    return m == "load" ? AbstractOp::load(words[1], words[2]) : AbstractOp::store(words[1], words[2]);
  }
  if (words.size() != 2) throw fail();
  if (m == "alloc") return AbstractOp::alloc(words[1]);
  if (m == "free") return AbstractOp::free(words[1]);
  if (m == "use") return AbstractOp::use(words[1]);
  if (m == "guard") return AbstractOp::guard(words[1]);
  throw fail();
}

namespace {

using Cell = std::int16_t;

struct Op {
  AbstractOp::Kind kind;
  int field = -1;
  int local = -1;
};

/// Scenario with fields and locals interned.
struct Compiled {
  std::vector<std::vector<Op>> threads;
  std::vector<int> locals_per_thread;
  std::size_t fields = 0;
  std::vector<Cell> init_fields;
  std::vector<std::vector<std::pair<int, Cell>>> init_locals;  // thread inputs
  Cell next_id = 1;
};

Compiled compile(const Scenario& sc) {
  if (sc.threads.size() > kMaxThreads) {
    throw OracleRefusal("oracle bound: " + std::to_string(sc.threads.size()) + " threads > " +
                        std::to_string(kMaxThreads));
  }
  std::size_t total = 0;
  for (const auto& t : sc.threads) {
    if (t.ops.size() > kMaxOpsPerThread) {
      throw OracleRefusal("oracle bound: thread with " + std::to_string(t.ops.size()) +
                          " ops > " + std::to_string(kMaxOpsPerThread));
    }
    total += t.ops.size();
  }
  if (total > kMaxTotalOps) {
    throw OracleRefusal("oracle bound: " + std::to_string(total) + " ops in total > " +
                        std::to_string(kMaxTotalOps));
  }

  Compiled c;
  std::map<std::string, int> fields;
  auto field_id = [&](const std::string& f) {
    return fields.try_emplace(f, static_cast<int>(fields.size())).first->second;
  };
  for (const auto& [f, label] : sc.init) field_id(f);

  for (const auto& t : sc.threads) {
    std::map<std::string, int> locals;
    auto local_id = [&](const std::string& l) {
      return locals.try_emplace(l, static_cast<int>(locals.size())).first->second;
    };
    std::set<std::string> defined(t.inputs.begin(), t.inputs.end());
    for (const auto& in : t.inputs) local_id(in);
    std::vector<Op> ops;
    for (const auto& op : t.ops) {
      using K = AbstractOp::Kind;
      const bool defines = op.kind == K::load || op.kind == K::alloc_into;
      if (!defines && !defined.count(op.local)) {
        throw std::invalid_argument("local '" + op.local + "' used before definition in '" +
                                    to_string(op) + "'");
      }
      defined.insert(op.local);
      Op o{op.kind, -1, local_id(op.local)};
      if (op.kind == K::load || op.kind == K::store) o.field = field_id(op.field);
      ops.push_back(o);
    }
    c.threads.push_back(std::move(ops));
    c.locals_per_thread.push_back(static_cast<int>(locals.size()));
  }
  c.fields = fields.size();

  c.init_fields.assign(c.fields, 0);
  std::map<int, Cell> label_ids;
  for (const auto& [f, label] : sc.init) label_ids.emplace(label, 0);
  for (auto& [label, id] : label_ids) id = c.next_id++;
  for (const auto& [f, label] : sc.init) c.init_fields[fields.at(f)] = label_ids.at(label);
  for (std::size_t t = 0; t < sc.threads.size(); ++t) {
    std::vector<std::pair<int, Cell>> bound;
    for (std::size_t i = 0; i < sc.threads[t].inputs.size(); ++i) {
      bound.emplace_back(static_cast<int>(i), c.next_id++);
    }
    c.init_locals.push_back(std::move(bound));
  }
  return c;
}

enum class Outcome : std::uint8_t { ok, uaf, df, pruned };

/// Resource touched by a step, for the dependence relation.
struct Footprint {
  std::vector<std::pair<int, Cell>> reads;
  std::vector<std::pair<int, Cell>> writes;
};
constexpr int kFieldRes = 0;
constexpr int kAllocRes = 1;
constexpr int kCounterRes = 2;

struct Machine {
  const Compiled* c;
  std::vector<Cell> pos;
  std::vector<Cell> fields;
  std::vector<std::vector<Cell>> locals;
  std::vector<Cell> freed;  // by id; 1 = freed
  Cell next_id;

  explicit Machine(const Compiled& comp) : c(&comp), next_id(comp.next_id) {
    pos.assign(comp.threads.size(), 0);
    fields = comp.init_fields;
    for (std::size_t t = 0; t < comp.threads.size(); ++t) {
      locals.emplace_back(comp.locals_per_thread[t], 0);
      for (auto [l, id] : comp.init_locals[t]) locals[t][l] = id;
    }
    freed.assign(static_cast<std::size_t>(next_id) + kMaxTotalOps + 1, 0);
  }

  bool runnable(std::size_t t) const {
    return t < pos.size() && static_cast<std::size_t>(pos[t]) < c->threads[t].size();
  }
  bool done() const {
    for (std::size_t t = 0; t < pos.size(); ++t) {
      if (runnable(t)) return false;
    }
    return true;
  }

  Outcome step(std::size_t t, Footprint* fp = nullptr) {
    const Op& op = c->threads[t][pos[t]++];
    Cell& local = locals[t][op.local];
    using K = AbstractOp::Kind;
    switch (op.kind) {
      case K::load:
        local = fields[op.field];
        if (fp) fp->reads.emplace_back(kFieldRes, op.field);
        return Outcome::ok;
      case K::store:
        fields[op.field] = local;
        if (fp) fp->writes.emplace_back(kFieldRes, op.field);
        return Outcome::ok;
      case K::alloc_into:
        local = next_id++;
        if (fp) {
          fp->writes.emplace_back(kCounterRes, 0);
          fp->writes.emplace_back(kAllocRes, local);
        }
        return Outcome::ok;
      case K::free_val:
        if (local == 0) return Outcome::ok;
        if (fp) fp->writes.emplace_back(kAllocRes, local);
        if (freed[local]) return Outcome::df;
        freed[local] = 1;
        return Outcome::ok;
      case K::use_val:
        if (local == 0) return Outcome::ok;
        if (fp) fp->reads.emplace_back(kAllocRes, local);
        return freed[local] ? Outcome::uaf : Outcome::ok;
      case K::guard:
        return local == 0 ? Outcome::pruned : Outcome::ok;
    }
    return Outcome::ok;
  }

  std::vector<Cell> key() const {
    std::vector<Cell> k(pos);
    k.insert(k.end(), fields.begin(), fields.end());
    for (const auto& l : locals) k.insert(k.end(), l.begin(), l.end());
    k.insert(k.end(), freed.begin(), freed.begin() + next_id);
    k.push_back(next_id);
    return k;
  }
};

struct Memo {
  std::optional<Schedule> uaf;
  std::optional<Schedule> df;
  std::uint64_t schedules = 0;
};

struct KeyHash {
  std::size_t operator()(const std::vector<Cell>& k) const { return boost::hash_range(k.begin(), k.end()); }
};

class Search {
 public:
  explicit Search(const Compiled& c) : c_(c) {}

  Memo run() { return visit(Machine(c_)); }
  std::size_t explored() const { return memo_.size(); }

 private:
  Memo visit(const Machine& m) {
    if (m.done()) return Memo{std::nullopt, std::nullopt, 1};
    auto key = m.key();
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;

    Memo out;
    for (std::size_t t = 0; t < m.pos.size(); ++t) {
      if (!m.runnable(t)) continue;
      Machine next = m;
      Outcome o = next.step(t);
      auto adopt = [&](std::optional<Schedule>& slot, const std::optional<Schedule>& suffix) {
        if (slot || !suffix) return;
        Schedule s{t};
        s.insert(s.end(), suffix->begin(), suffix->end());
        slot = std::move(s);
      };
      switch (o) {
        case Outcome::uaf:
          out.schedules += 1;
          adopt(out.uaf, Schedule{});
          break;
        case Outcome::df:
          out.schedules += 1;
          adopt(out.df, Schedule{});
          break;
        case Outcome::pruned:
          out.schedules += 1;
          break;
        case Outcome::ok: {
          Memo child = visit(next);
          out.schedules += child.schedules;
          adopt(out.uaf, child.uaf);
          adopt(out.df, child.df);
          break;
        }
      }
    }
    memo_.emplace(std::move(key), out);
    return out;
  }

  const Compiled& c_;
  std::unordered_map<std::vector<Cell>, Memo, KeyHash> memo_;
};

bool conflicts(const Footprint& a, const Footprint& b) {
  auto meets = [](const auto& x, const auto& y) {
    for (const auto& r : x) {
      if (std::find(y.begin(), y.end(), r) != y.end()) return true;
    }
    return false;
  };
  return meets(a.writes, b.writes) || meets(a.writes, b.reads) || meets(a.reads, b.writes);
}

}  // namespace

Verdict enumerate(const Scenario& scenario) {
  Compiled c = compile(scenario);
  Search search(c);
  Memo m = search.run();
  Verdict v;
  v.uaf = m.uaf.has_value();
  v.df = m.df.has_value();
  v.uaf_raw = m.uaf;
  v.df_raw = m.df;
  if (m.uaf) v.uaf_witness = foata_normalize(scenario, *m.uaf);
  if (m.df) v.df_witness = foata_normalize(scenario, *m.df);
  v.explored = search.explored();
  v.schedules = m.schedules;
  return v;
}

ReplayResult replay(const Scenario& scenario, const Schedule& schedule) {
  Compiled c = compile(scenario);
  Machine m(c);
  ReplayResult r;
  for (std::size_t t : schedule) {
    if (!m.runnable(t)) throw std::invalid_argument("schedule names a finished or missing thread");
    Outcome o = m.step(t);
    ++r.steps;
    if (o == Outcome::uaf) r.fault = Fault::uaf;
    if (o == Outcome::df) r.fault = Fault::df;
    if (o == Outcome::pruned) r.pruned = true;
    if (o != Outcome::ok) break;
  }
  return r;
}

Schedule foata_normalize(const Scenario& scenario, const Schedule& schedule) {
  if (schedule.empty()) return schedule;
  Compiled c = compile(scenario);
  Machine m(c);
  std::vector<Footprint> fps(schedule.size());
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!m.runnable(schedule[i])) throw std::invalid_argument("schedule names a finished or missing thread");
    m.step(schedule[i], &fps[i]);
  }
  auto dependent = [&](std::size_t i, std::size_t j) {
    return schedule[i] == schedule[j] || conflicts(fps[i], fps[j]);
  };

  const std::size_t n = schedule.size();
  std::vector<bool> past(n, false);
  past[n - 1] = true;
  for (std::size_t j = n; j-- > 0;) {
    if (!past[j]) continue;
    for (std::size_t i = 0; i < j; ++i) {
      if (!past[i] && dependent(i, j)) past[i] = true;
    }
  }
  std::vector<std::size_t> level(n, 0);
  std::vector<std::pair<std::size_t, std::size_t>> order;  // (level, thread)
  for (std::size_t j = 0; j < n; ++j) {
    if (!past[j]) continue;
    for (std::size_t i = 0; i < j; ++i) {
      if (past[i] && dependent(i, j)) level[j] = std::max(level[j], level[i] + 1);
    }
    order.emplace_back(level[j], schedule[j]);
  }
  std::stable_sort(order.begin(), order.end());
  Schedule out;
  for (auto [lvl, t] : order) out.push_back(t);
  return out;
}

std::string render_schedule(const Scenario& scenario, const Schedule& schedule) {
  std::vector<std::size_t> pos(scenario.threads.size(), 0);
  std::string out;
  for (std::size_t t : schedule) {
    if (t >= scenario.threads.size() || pos[t] >= scenario.threads[t].ops.size()) {
      throw std::invalid_argument("schedule names a finished or missing thread");
    }
    if (!out.empty()) out += ", ";
    out += "T" + std::to_string(t + 1) + ":" + to_string(scenario.threads[t].ops[pos[t]++]);
  }
  return out;
}

ThreadProgram summary_to_program(const MethodSummary& summary, const FieldPath& field) {
  struct Event {
    Address site;
    int order;  // accesses before uses at one site
    const FieldAccess* access;
    const ValueUse* use;
  };
  std::vector<Event> events;
  for (const auto& a : summary.accesses) {
    if (a.path == field) events.push_back({a.site, 0, &a, nullptr});
  }
  if (events.empty()) {
    throw std::invalid_argument(summary.method + " has no access on " + field.str());
  }
  for (const auto& u : summary.uses) events.push_back({u.site, 1, nullptr, &u});
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& x, const Event& y) { return std::tie(x.site, x.order) < std::tie(y.site, y.order); });

  const std::string f = field.str();
  ThreadProgram prog;
  std::optional<std::string> loaded;
  std::map<Address, std::string> allocs;
  int v = 0, a = 0;
  auto load = [&] {
    loaded = "v" + std::to_string(v++);
    prog.ops.push_back(AbstractOp::load(f, *loaded));
  };
  for (const auto& e : events) {
    if (e.access) {
      switch (e.access->kind) {
        case AccessKind::read:
          load();
          break;
        case AccessKind::free:
          if (!loaded) load();
          if (e.access->null_guarded) prog.ops.push_back(AbstractOp::guard(*loaded));
          prog.ops.push_back(AbstractOp::free(*loaded));
          break;
        case AccessKind::write:
          if (e.access->stored_alloc) {
            std::string local = "a" + std::to_string(a++);
            prog.ops.push_back(AbstractOp::alloc(local));
            prog.ops.push_back(AbstractOp::store(f, local));
            allocs[*e.access->stored_alloc] = local;
          } else {
            std::string local = "in" + std::to_string(prog.inputs.size());
            prog.inputs.push_back(local);
            prog.ops.push_back(AbstractOp::store(f, local));
          }
          break;
      }
      continue;
    }
    if (const auto* p = std::get_if<FieldPath>(&e.use->value)) {
      if (*p != field) continue;
      if (!loaded) load();
      prog.ops.push_back(AbstractOp::use(*loaded));
    } else if (auto it = allocs.find(std::get<Address>(e.use->value)); it != allocs.end()) {
      prog.ops.push_back(AbstractOp::use(it->second));
    }
  }
  return prog;
}

}  // namespace comracer
