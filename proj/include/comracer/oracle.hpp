#pragma once

// Exhaustive interleaving search over small per-thread field-access programs
// with an allocation-state heap. Reports use-after-free and double-free.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "comracer/taint.hpp"

namespace comracer {

struct AbstractOp {
  enum class Kind : std::uint8_t { load, store, alloc_into, free_val, use_val, guard };
  Kind kind = Kind::load;
  std::string field;  // load/store only
  std::string local;

  auto operator<=>(const AbstractOp&) const = default;

  static AbstractOp load(std::string f, std::string l) { return {Kind::load, std::move(f), std::move(l)}; }
  static AbstractOp store(std::string f, std::string l) { return {Kind::store, std::move(f), std::move(l)}; }
  static AbstractOp alloc(std::string l) { return {Kind::alloc_into, "", std::move(l)}; }
  static AbstractOp free(std::string l) { return {Kind::free_val, "", std::move(l)}; }
  static AbstractOp use(std::string l) { return {Kind::use_val, "", std::move(l)}; }
  static AbstractOp guard(std::string l) { return {Kind::guard, "", std::move(l)}; }
};

/// "load f p", "store f q", "alloc q", "free p", "use q", "guard p".
std::string to_string(const AbstractOp& op);
AbstractOp parse_op(std::string_view text);

struct ThreadProgram {
  /// Locals bound to distinct live objects when the thread starts.
  std::vector<std::string> inputs;
  std::vector<AbstractOp> ops;

  auto operator<=>(const ThreadProgram&) const = default;
};

struct Scenario {
  std::vector<ThreadProgram> threads;
  /// Field -> object label; equal labels share an object, absent fields are null.
  std::map<std::string, int> init;
};

/// Thread indices in global execution order.
using Schedule = std::vector<std::size_t>;

enum class Fault : std::uint8_t { none, uaf, df };

struct Verdict {
  bool uaf = false;
  bool df = false;
  /// Causal past of the fault in layered (Foata) order.
  std::optional<Schedule> uaf_witness;
  std::optional<Schedule> df_witness;
  /// Lexicographically smallest faulting schedule.
  std::optional<Schedule> uaf_raw;
  std::optional<Schedule> df_raw;
  /// Distinct states expanded.
  std::size_t explored = 0;
  /// Maximal executions: completed, faulted or pruned by a failed guard.
  std::uint64_t schedules = 0;
};

class OracleRefusal : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kMaxThreads = 3;
inline constexpr std::size_t kMaxOpsPerThread = 12;
inline constexpr std::size_t kMaxTotalOps = 18;

/// Throws OracleRefusal past the size bounds, std::invalid_argument on a local
/// used before it is defined.
Verdict enumerate(const Scenario& scenario);

struct ReplayResult {
  Fault fault = Fault::none;
  bool pruned = false;
  /// Steps executed, including the faulting one.
  std::size_t steps = 0;
};

/// Executes `schedule` step by step; stops at the first fault or failed guard.
/// Throws std::invalid_argument if it names a finished or missing thread.
ReplayResult replay(const Scenario& scenario, const Schedule& schedule);

/// Keeps the causal past of the last step and sorts it into Foata layers
/// (ties by thread index).
Schedule foata_normalize(const Scenario& scenario, const Schedule& schedule);

/// "T1:load f p, T2:load f p, ...".
std::string render_schedule(const Scenario& scenario, const Schedule& schedule);

/// Site-ordered lift of the accesses on `field` (and of the uses of values
/// loaded from it or stored into it) to an oracle thread.
ThreadProgram summary_to_program(const MethodSummary& summary, const FieldPath& field);

}  // namespace comracer
