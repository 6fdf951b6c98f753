#include "comracer/race.hpp"

#include <algorithm>
#include <map>

namespace comracer {

std::string_view class_name(ConflictClass c) {
  switch (c) {
    case ConflictClass::read_free: return "read/free";
    case ConflictClass::write_free: return "write/free";
    case ConflictClass::free_free: return "free/free";
    case ConflictClass::read_write: return "read/write";
    case ConflictClass::write_write: return "write/write";
    case ConflictClass::read_read: return "read/read";
  }
  return "?";
}

std::optional<ConflictClass> classify(AccessKind a, AccessKind b) {
  if (a > b) std::swap(a, b);
  using K = AccessKind;
  if (a == K::read && b == K::read) return ConflictClass::read_read;
  if (a == K::read && b == K::write) return ConflictClass::read_write;
  if (a == K::read && b == K::free) return ConflictClass::read_free;
  if (a == K::write && b == K::free) return ConflictClass::write_free;
  if (a == K::free && b == K::free) return ConflictClass::free_free;
  return std::nullopt;
}

namespace {

bool disjoint(const Lockset& x, const Lockset& y) {
  auto i = x.begin();
  auto j = y.begin();
  while (i != x.end() && j != y.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      return false;
    }
  }
  return true;
}

auto identity(const FieldAccess& a) { return std::tie(a.method, a.site, a.kind); }

}  // namespace

std::vector<RaceReport> detect_races(const std::vector<MethodSummary>& summaries,
                                     const AnalysisOpts& opts) {
  std::map<FieldPath, std::vector<FieldAccess>> by_path;
  for (const auto& s : summaries) {
    for (const auto& a : s.accesses) by_path[a.path].push_back(a);
  }

  std::set<RaceReport> out;
  for (auto& [path, accesses] : by_path) {
    std::sort(accesses.begin(), accesses.end(),
              [](const auto& x, const auto& y) { return identity(x) < identity(y); });
    std::vector<bool> paired(accesses.size(), false);
    for (std::size_t i = 0; i < accesses.size(); ++i) {
      for (std::size_t j = i; j < accesses.size(); ++j) {
        const auto& a = accesses[i];
        const auto& b = accesses[j];
        if (!disjoint(a.lockset, b.lockset)) continue;
        auto cls = classify(a.kind, b.kind);
        if (!cls) continue;
        if (opts.rr_filter && *cls == ConflictClass::read_read) continue;
        out.insert(RaceReport{path, a, b, *cls, a.method == b.method});
        paired[i] = paired[j] = true;
      }
    }
    if (!opts.ww_self) continue;
    for (std::size_t i = 0; i < accesses.size(); ++i) {
      const auto& a = accesses[i];
      if (a.kind == AccessKind::write && a.lockset.empty() && !paired[i]) {
        out.insert(RaceReport{path, a, a, ConflictClass::write_write, true});
      }
    }
  }
  return {out.begin(), out.end()};
}

std::vector<RaceReport> filter_rr(std::vector<RaceReport> reports) {
  std::erase_if(reports, [](const RaceReport& r) { return r.cls == ConflictClass::read_read; });
  return reports;
}

std::set<std::string> vulnerable_functions(const std::vector<RaceReport>& reports) {
  std::set<std::string> out;
  for (const auto& r : reports) {
    out.insert(r.a.method);
    out.insert(r.b.method);
  }
  return out;
}

}  // namespace comracer
