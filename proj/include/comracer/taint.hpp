#pragma once

// Field usage analysis of entry methods: this-relative accesses with the
// lockset held at each, following member calls.

#include <string>
#include <vector>

#include "comracer/engine.hpp"
#include "comracer/vtable.hpp"

namespace comracer {

struct MethodSummary {
  std::string method;
  /// Deduplicated by (path, kind, site); ordered by site.
  std::vector<FieldAccess> accesses;
  std::vector<ValueUse> uses;
  std::vector<std::string> diagnostics;
  /// Largest number of in-state changes of one block during any fixpoint run.
  std::size_t max_block_updates = 0;
  /// Every lock identity acquired anywhere in the analyzed call tree.
  Lockset acquired;
};

/// One instruction of the taint semantics, member calls included.
void transfer(MachineState& state, const Instruction& insn, const BinaryImage& image,
              const Resolution& resolved, const AnalysisOpts& opts, Effects* fx);

MethodSummary analyze_method(const BinaryImage& image, std::string_view method,
                             const Resolution& resolved, const AnalysisOpts& opts);

}  // namespace comracer
