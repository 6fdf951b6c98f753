#pragma once

// Lockset race detection over entry-method summaries.

#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "comracer/taint.hpp"

namespace comracer {

enum class ConflictClass : std::uint8_t {
  read_free,
  write_free,
  free_free,
  read_write,
  write_write,  // self-race on a lone unguarded write only
  read_read,    // formed in base mode, dropped by filter_rr
};

std::string_view class_name(ConflictClass c);

/// Class of an unordered kind pair; empty for write/write.
std::optional<ConflictClass> classify(AccessKind a, AccessKind b);

struct RaceReport {
  FieldPath path;
  FieldAccess a;
  FieldAccess b;
  ConflictClass cls = ConflictClass::read_write;
  bool self_race = false;

  auto key() const {
    return std::tie(path, a.method, a.site, a.kind, b.method, b.site, b.kind, cls);
  }
  bool operator==(const RaceReport& o) const { return key() == o.key(); }
  bool operator<(const RaceReport& o) const { return key() < o.key(); }
};

/// All racing pairs, canonically ordered. Pairs include (x, x): two invocations
/// of one method run the same instruction.
std::vector<RaceReport> detect_races(const std::vector<MethodSummary>& summaries,
                                     const AnalysisOpts& opts);

std::vector<RaceReport> filter_rr(std::vector<RaceReport> reports);

std::set<std::string> vulnerable_functions(const std::vector<RaceReport>& reports);

}  // namespace comracer
