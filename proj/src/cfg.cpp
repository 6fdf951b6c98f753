#include "comracer/cfg.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <set>
#include <sstream>

namespace comracer {

BlockId Cfg::block_of(std::size_t instruction_index) const {
  for (const auto& b : blocks) {
    if (instruction_index >= b.first && instruction_index < b.first + b.count) return b.id;
  }
  return blocks.size();
}

std::optional<BlockId> Cfg::block_at(const Function& fn, Address addr) const {
  for (std::size_t i = 0; i < fn.instructions.size(); ++i) {
    if (fn.instructions[i].address == addr) return block_of(i);
  }
  return std::nullopt;
}

Cfg build_cfg(const Function& fn) {
  Cfg cfg;
  const auto& insns = fn.instructions;
  if (insns.empty()) return cfg;

  std::map<Address, std::size_t> index_of;
  for (std::size_t i = 0; i < insns.size(); ++i) index_of[insns[i].address] = i;

  std::set<std::size_t> leaders{0};
  for (std::size_t i = 0; i < insns.size(); ++i) {
    const auto& insn = insns[i];
    if (insn.is_branch()) {
      if (auto t = insn.direct_target(); t && index_of.count(*t)) leaders.insert(index_of[*t]);
    }
    if ((insn.is_branch() || insn.op == Mnemonic::ret) && i + 1 < insns.size()) {
      leaders.insert(i + 1);
    }
  }

  std::vector<std::size_t> starts(leaders.begin(), leaders.end());
  for (std::size_t b = 0; b < starts.size(); ++b) {
    std::size_t end = b + 1 < starts.size() ? starts[b + 1] : insns.size();
    cfg.blocks.push_back(BasicBlock{b, starts[b], end - starts[b], {}, true, false});
  }
  auto block_starting = [&](std::size_t idx) -> BlockId {
    return static_cast<BlockId>(std::lower_bound(starts.begin(), starts.end(), idx) -
                                starts.begin());
  };

  cfg.successors.assign(cfg.blocks.size(), {});
  cfg.predecessors.assign(cfg.blocks.size(), {});
  for (auto& b : cfg.blocks) {
    const auto& last = insns[b.first + b.count - 1];
    std::size_t after = b.first + b.count;
    std::optional<BlockId> next;
    if (after < insns.size()) next = block_starting(after);

    auto resolve_target = [&]() -> std::optional<BlockId> {
      auto t = last.direct_target();
      if (!t) {
        cfg.diagnostics.push_back("indirect jump at " + hex(last.address) + " has no static target");
        b.flagged = true;
        return std::nullopt;
      }
      auto it = index_of.find(*t);
      if (it == index_of.end()) {
        cfg.diagnostics.push_back("jump target " + hex(*t) + " at " + hex(last.address) +
                                  " lies outside " + fn.name + "; edge dropped");
        b.flagged = true;
        return std::nullopt;
      }
      return block_starting(it->second);
    };

    switch (last.op) {
      case Mnemonic::ret:
        b.terminator = {Terminator::Kind::ret, std::nullopt, std::nullopt};
        break;
      case Mnemonic::jmp:
        b.terminator = {Terminator::Kind::jump, resolve_target(), std::nullopt};
        break;
      case Mnemonic::jcc:
        b.terminator = {Terminator::Kind::branch, resolve_target(), next};
        if (!next) {
          cfg.diagnostics.push_back("conditional branch at " + hex(last.address) +
                                    " falls off the end of " + fn.name);
          b.flagged = true;
        }
        break;
      default:
        b.terminator = {Terminator::Kind::fall_through, std::nullopt, next};
        if (!next) {
          cfg.diagnostics.push_back(fn.name + " ends without ret at " + hex(last.address));
          b.flagged = true;
        }
        break;
    }
    auto add_edge = [&](std::optional<BlockId> to) {
      if (!to) return;
      auto& succ = cfg.successors[b.id];
      if (std::find(succ.begin(), succ.end(), *to) != succ.end()) return;
      succ.push_back(*to);
      cfg.predecessors[*to].push_back(b.id);
    };
    add_edge(b.terminator.taken);
    add_edge(b.terminator.next);
  }
  for (auto& preds : cfg.predecessors) std::sort(preds.begin(), preds.end());

  std::vector<bool> seen(cfg.blocks.size(), false);
  for (BlockId id : bfs_order(cfg)) seen[id] = true;
  for (auto& b : cfg.blocks) b.reachable = seen[b.id];
  return cfg;
}

std::vector<BlockId> bfs_order(const Cfg& cfg) {
  std::vector<BlockId> order;
  if (cfg.blocks.empty()) return order;
  std::vector<bool> seen(cfg.blocks.size(), false);
  std::deque<BlockId> queue{cfg.entry};
  seen[cfg.entry] = true;
  while (!queue.empty()) {
    BlockId b = queue.front();
    queue.pop_front();
    order.push_back(b);
    auto succ = cfg.successors[b];
    std::sort(succ.begin(), succ.end());
    for (BlockId s : succ) {
      if (!seen[s]) {
        seen[s] = true;
        queue.push_back(s);
      }
    }
  }
  return order;
}

std::vector<std::pair<BlockId, BlockId>> back_edges(const Cfg& cfg) {
  auto order = bfs_order(cfg);
  std::vector<std::size_t> rank(cfg.blocks.size(), cfg.blocks.size());
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;
  std::vector<std::pair<BlockId, BlockId>> out;
  for (BlockId u : order) {
    for (BlockId v : cfg.successors[u]) {
      if (rank[v] <= rank[u]) out.emplace_back(u, v);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool reaches(const Cfg& cfg, BlockId from, BlockId to, std::optional<BlockId> avoid) {
  if (avoid && (from == *avoid || to == *avoid)) return false;
  std::vector<bool> seen(cfg.blocks.size(), false);
  std::deque<BlockId> queue{from};
  seen[from] = true;
  while (!queue.empty()) {
    BlockId b = queue.front();
    queue.pop_front();
    if (b == to) return true;
    for (BlockId s : cfg.successors[b]) {
      if (seen[s] || (avoid && s == *avoid)) continue;
      seen[s] = true;
      queue.push_back(s);
    }
  }
  return false;
}

bool dominates(const Cfg& cfg, BlockId a, BlockId b) {
  if (a == b) return true;
  if (!cfg.blocks[b].reachable) return false;
  return !reaches(cfg, cfg.entry, b, a);
}

std::string to_dot(const Cfg& cfg, const Function& fn) {
  std::ostringstream os;
  std::string prefix = "n" + hex(fn.entry) + "_";
  os << "  subgraph \"cluster_" << fn.name << "\" {\n";
  os << "    label=\"" << fn.name << "\";\n";
  for (const auto& b : cfg.blocks) {
    os << "    " << prefix << b.id << " [label=\"" << b.id << ": " << hex(b.start_address(fn))
       << "-" << hex(b.last_address(fn)) << "\"" << (b.reachable ? "" : ", style=dashed")
       << (b.flagged ? ", color=red" : "") << "];\n";
  }
  for (const auto& b : cfg.blocks) {
    for (BlockId s : cfg.successors[b.id]) {
      os << "    " << prefix << b.id << " -> " << prefix << s << ";\n";
    }
  }
  os << "  }\n";
  return os.str();
}

}  // namespace comracer
