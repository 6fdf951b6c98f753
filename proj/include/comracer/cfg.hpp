#pragma once

// Per-function control-flow graphs. Calls do not end a block.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "comracer/isa.hpp"

namespace comracer {

using BlockId = std::size_t;

struct Terminator {
  enum class Kind { fall_through, jump, branch, ret };
  Kind kind = Kind::fall_through;
  /// jump/branch target. Empty when the target left the function (edge dropped)
  /// or the jump was indirect.
  std::optional<BlockId> taken;
  /// fall_through/branch successor. Empty when the function ends without ret.
  std::optional<BlockId> next;

  bool operator==(const Terminator&) const = default;
};

struct BasicBlock {
  BlockId id = 0;
  std::size_t first = 0;  // index into the function's instruction list
  std::size_t count = 0;
  Terminator terminator;
  bool reachable = true;
  /// Set when an outgoing edge had to be dropped.
  bool flagged = false;

  Address start_address(const Function& fn) const { return fn.instructions[first].address; }
  Address last_address(const Function& fn) const {
    return fn.instructions[first + count - 1].address;
  }
  std::span<const Instruction> instructions(const Function& fn) const {
    return std::span<const Instruction>(fn.instructions).subspan(first, count);
  }
};

struct Cfg {
  std::vector<BasicBlock> blocks;
  BlockId entry = 0;
  std::vector<std::vector<BlockId>> successors;
  std::vector<std::vector<BlockId>> predecessors;
  std::vector<std::string> diagnostics;

  BlockId block_of(std::size_t instruction_index) const;
  std::optional<BlockId> block_at(const Function& fn, Address addr) const;
};

Cfg build_cfg(const Function& fn);

/// Breadth-first order of reachable blocks from the entry, ties by ascending id.
std::vector<BlockId> bfs_order(const Cfg& cfg);

/// Edges (u, v) whose target does not come after the source in bfs order.
std::vector<std::pair<BlockId, BlockId>> back_edges(const Cfg& cfg);

/// `to` is reachable from `from` without passing through `avoid`.
bool reaches(const Cfg& cfg, BlockId from, BlockId to, std::optional<BlockId> avoid = std::nullopt);

/// `a` dominates `b`: b is unreachable from the entry once `a` is removed.
bool dominates(const Cfg& cfg, BlockId a, BlockId b);

/// DOT cluster for one function; node label = block id + address range.
std::string to_dot(const Cfg& cfg, const Function& fn);

}  // namespace comracer
