#pragma once

// x86-64 subset instruction model and the textual fixture format that stands
// in for a loaded binary image.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace comracer {

using Address = std::uint64_t;

enum class Reg : std::uint8_t {
  rax, rbx, rcx, rdx, rsi, rdi, rbp, rsp,
  r8, r9, r10, r11, r12, r13, r14, r15,
};
inline constexpr std::size_t kRegCount = 16;

std::string_view reg_name(Reg r);
std::optional<Reg> parse_reg(std::string_view name);

/// Volatile under the Windows x64 calling convention.
bool is_volatile(Reg r);

struct Imm {
  std::int64_t value = 0;
  auto operator<=>(const Imm&) const = default;
};

struct Mem {
  Reg base = Reg::rax;
  std::optional<Reg> index;
  std::uint8_t scale = 1;
  std::int32_t disp = 0;
  auto operator<=>(const Mem&) const = default;
};

/// `[rip+X]` with the target already resolved to an absolute address.
struct RipRel {
  Address target = 0;
  auto operator<=>(const RipRel&) const = default;
};

using Operand = std::variant<Reg, Imm, Mem, RipRel>;

enum class Mnemonic : std::uint8_t {
  mov, lea, call, ret, jmp, jcc, cmp, test, add, sub, xor_, and_, neg, sbb, nop,
};

std::string_view mnemonic_name(Mnemonic m);

struct Instruction {
  Address address = 0;
  Mnemonic op = Mnemonic::nop;
  std::vector<Operand> operands;

  bool operator==(const Instruction&) const = default;

  bool is_branch() const { return op == Mnemonic::jmp || op == Mnemonic::jcc; }
  /// Direct target of call/jmp/jcc, if the operand is an immediate address.
  std::optional<Address> direct_target() const;
};

struct Function {
  std::string name;
  Address entry = 0;
  std::vector<Instruction> instructions;

  bool operator==(const Function&) const = default;

  /// One past the last instruction address; the function occupies [entry, end).
  Address end() const;
  const Instruction* at(Address addr) const;
};

enum class SymbolTag : std::uint8_t { plain, lock_acquire, lock_release, free, alloc };

std::string_view tag_name(SymbolTag t);
std::optional<SymbolTag> parse_tag(std::string_view name);

struct SymbolEntry {
  Address address = 0;
  std::string name;
  SymbolTag tag = SymbolTag::plain;
  /// The fixture spelled the tag out; bundled name defaults never override it.
  bool explicit_tag = false;

  bool operator==(const SymbolEntry&) const = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& message);
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Immutable once built by parse_fixture.
class BinaryImage {
 public:
  const std::vector<Function>& functions() const { return functions_; }
  const std::map<Address, std::uint64_t>& data() const { return data_; }
  const std::vector<SymbolEntry>& symbols() const { return symbols_; }
  const std::vector<std::string>& entries() const { return entries_; }

  const Function* function(std::string_view name) const;
  const Function* function_at_entry(Address addr) const;
  const Function* function_containing(Address addr) const;
  bool is_function_entry(Address addr) const { return function_at_entry(addr) != nullptr; }
  bool is_data(Address addr) const { return data_.count(addr) != 0; }

  /// Instruction at `addr` in any function.
  const Instruction* instruction_at(Address addr) const;

  bool operator==(const BinaryImage&) const = default;

  /// Tag untagged symbols from a name table (explicit fixture tags win).
  void apply_symbol_defaults(const std::map<std::string, SymbolTag, std::less<>>& table);

 private:
  friend BinaryImage parse_fixture(std::string_view text);

  std::vector<Function> functions_;  // sorted by entry address
  std::map<Address, std::uint64_t> data_;
  std::vector<SymbolEntry> symbols_;  // sorted by address
  std::vector<std::string> entries_;
};

BinaryImage parse_fixture(std::string_view text);
std::string serialize_fixture(const BinaryImage& image);

std::uint64_t read_data_word(const BinaryImage& image, Address addr);
std::optional<SymbolEntry> symbol_at(const BinaryImage& image, Address addr);

std::string format_operand(const Operand& op, Address insn_address);
std::string format_instruction(const Instruction& insn);
std::string hex(std::uint64_t v);
std::string signed_hex(std::int64_t v);

}  // namespace comracer
