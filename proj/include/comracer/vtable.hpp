#pragma once

// Virtual call resolution: which vtables can an object reaching an indirect
// call carry, and what does the called slot hold.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "comracer/engine.hpp"

namespace comracer {

struct RecoveryOptions {
  bool track_stack_slots = true;
};

struct FunctionFacts {
  std::vector<VtableStoreFact> stores;
  /// rax at the merged ret states.
  AbstractValue returns = Unknown{};
  /// State reaching each call instruction.
  std::map<Address, MachineState> call_states;
  std::vector<std::string> diagnostics;
};

struct FactBase {
  std::map<std::string, FunctionFacts, std::less<>> functions;

  const FunctionFacts* find(std::string_view name) const;
  std::vector<VtableStoreFact> all_stores() const;
};

/// Per-function store facts. A direct call to an in-image function that stores
/// a vtable into its own this re-emits that store on the caller's rcx object
/// (constructor summary); a callee returning this forwards rcx to rax; a
/// callee returning a fresh object makes rax a fresh object of the call site.
FactBase collect_facts(const BinaryImage& image, const RecoveryOptions& opts = {});

std::vector<const Instruction*> collect_calls(const Function& fn);

/// Indirect call whose target register is a word loaded from offset 0 of an object.
bool is_virtual_call(const Instruction& call, const MachineState& state);

/// Object the dispatching vtable pointer was loaded from; empty if the chain broke.
std::optional<ObjectValue> trace_object(const Instruction& call, const MachineState& state);

/// Candidate vtables for `object` as seen in `function`: offset-0 stores on the
/// same object in that function, else those of the factory that produced it.
std::set<Address> follow_object_chain(const BinaryImage& image, std::string_view function,
                                      const ObjectValue& object, const FactBase& facts);

std::int64_t parse_method_offset(const Instruction& call);

std::optional<Address> lookup_vtable(const BinaryImage& image, Address vtable, std::int64_t offset);

struct CallTarget {
  Address vtable = 0;
  Address target = 0;
  std::string name;

  auto operator<=>(const CallTarget&) const = default;
};

struct ResolvedCall {
  Address call_site = 0;
  std::string function;
  std::int64_t method_offset = 0;
  std::set<CallTarget> candidates;
};

struct UnresolvedCall {
  Address call_site = 0;
  std::string function;
  std::string reason;
};

struct Resolution {
  std::map<Address, ResolvedCall> resolved;
  std::vector<UnresolvedCall> unresolved;
  std::size_t virtual_calls = 0;
  /// Nonzero-offset vtable stores (secondary interfaces), recorded only.
  std::vector<VtableStoreFact> secondary;
};

Resolution recover_virtual_calls(const BinaryImage& image, const RecoveryOptions& opts = {});

}  // namespace comracer
