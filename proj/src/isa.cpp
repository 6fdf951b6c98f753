#include "comracer/isa.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cctype>
#include <set>
#include <sstream>

namespace comracer {

namespace {

constexpr std::array<std::string_view, kRegCount> kRegNames = {
    "rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp",
    "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15",
};

constexpr std::array<std::string_view, 15> kMnemonicNames = {
    "mov", "lea", "call", "ret", "jmp", "jcc", "cmp", "test",
    "add", "sub", "xor", "and", "neg", "sbb", "nop",
};

constexpr std::array<std::string_view, 5> kTagNames = {
    "plain", "lock_acquire", "lock_release", "free", "alloc",
};

// Condition-code spellings folded into the generic conditional branch.
constexpr std::array<std::string_view, 20> kJccAliases = {
    "je", "jne", "jz", "jnz", "jl", "jle", "jg", "jge", "jb", "jbe",
    "ja", "jae", "js", "jns", "jo", "jno", "jp", "jnp", "jc", "jnc",
};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

/// Cursor over one line of fixture text with 1-based column tracking.
class LineCursor {
 public:
  LineCursor(std::string_view text, std::size_t line) : text_(text), line_(line) {}

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t')) ++pos_;
  }
  bool at_end() {
    skip_ws();
    return pos_ >= text_.size();
  }
  std::size_t column() const { return pos_ + 1; }
  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }
  bool consume(char c) {
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!consume(c)) fail(std::string("expected '") + c + "'");
  }

  /// Run of characters up to whitespace or one of `stops`.
  std::string_view word(std::string_view stops = "") {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != ' ' && text_[pos_] != '\t' &&
           stops.find(text_[pos_]) == std::string_view::npos) {
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  std::string_view rest() {
    skip_ws();
    auto r = text_.substr(pos_);
    while (!r.empty() && (r.back() == ' ' || r.back() == '\t')) r.remove_suffix(1);
    pos_ = text_.size();
    return r;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line_, column(), msg); }
  [[noreturn]] void fail_at(std::size_t col, const std::string& msg) const {
    throw ParseError(line_, col, msg);
  }

  /// Signed integer literal: optional '-', then 0x-hex or decimal.
  std::int64_t integer(std::string_view stops) {
    skip_ws();
    std::size_t col = column();
    bool negative = consume('-');
    auto tok = word(stops);
    auto magnitude = parse_unsigned(tok);
    if (!magnitude) fail_at(col, "invalid integer literal '" + std::string(tok) + "'");
    auto v = static_cast<std::int64_t>(*magnitude);
    return negative ? -v : v;
  }

  std::uint64_t hex_literal(std::string_view stops = "") {
    skip_ws();
    std::size_t col = column();
    auto tok = word(stops);
    if (tok.size() < 3 || tok[0] != '0' || (tok[1] != 'x' && tok[1] != 'X')) {
      fail_at(col, "expected hex literal, got '" + std::string(tok) + "'");
    }
    auto v = parse_unsigned(tok);
    if (!v) fail_at(col, "invalid hex literal '" + std::string(tok) + "'");
    return *v;
  }

  static std::optional<std::uint64_t> parse_unsigned(std::string_view tok) {
    if (tok.empty()) return std::nullopt;
    int base = 10;
    if (tok.size() > 2 && tok[0] == '0' && (tok[1] == 'x' || tok[1] == 'X')) {
      tok.remove_prefix(2);
      base = 16;
    }
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v, base);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) return std::nullopt;
    return v;
  }

 private:
  std::string_view text_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

Reg reg_or_fail(LineCursor& cur, std::string_view stops) {
  cur.skip_ws();
  std::size_t col = cur.column();
  auto tok = cur.word(stops);
  auto r = parse_reg(lower(tok));
  if (!r) cur.fail_at(col, "unknown register '" + std::string(tok) + "'");
  return *r;
}

Operand parse_memory(LineCursor& cur, Address insn_address) {
  std::size_t open_col = cur.column();
  cur.expect('[');
  std::optional<Reg> base;
  std::optional<Reg> index;
  std::uint8_t scale = 1;
  std::int64_t disp = 0;
  bool rip = false;
  bool first = true;
  while (true) {
    if (cur.consume(']')) break;
    bool negative = false;
    if (!first) {
      if (cur.consume('-')) {
        negative = true;
      } else if (!cur.consume('+')) {
        cur.fail("expected '+', '-' or ']' in memory operand");
      }
    }
    first = false;
    char c = cur.peek();
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '-') {
      auto v = cur.integer("+-]*");
      disp += negative ? -v : v;
      continue;
    }
    std::size_t col = cur.column();
    auto tok = lower(cur.word("+-]*"));
    if (negative) cur.fail_at(col, "register terms cannot be subtracted");
    if (tok == "rip") {
      if (base || rip) cur.fail_at(col, "rip must be the only base");
      rip = true;
      continue;
    }
    auto r = parse_reg(tok);
    if (!r) cur.fail_at(col, "unknown register '" + tok + "'");
    if (cur.consume('*')) {
      std::size_t scol = cur.column();
      auto s = cur.integer("+-]");
      if (s != 1 && s != 2 && s != 4 && s != 8) cur.fail_at(scol, "scale must be 1, 2, 4 or 8");
      if (index) cur.fail_at(col, "duplicate index register");
      index = *r;
      scale = static_cast<std::uint8_t>(s);
    } else if (!base && !rip) {
      base = *r;
    } else if (!index) {
      index = *r;
    } else {
      cur.fail_at(col, "too many registers in memory operand");
    }
  }
  if (rip) {
    if (base || index) cur.fail_at(open_col, "rip-relative operand cannot have other registers");
    return RipRel{static_cast<Address>(static_cast<std::int64_t>(insn_address) + disp)};
  }
  if (!base) cur.fail_at(open_col, "memory operand needs a base register");
  if (disp < INT32_MIN || disp > INT32_MAX) cur.fail_at(open_col, "displacement out of 32-bit range");
  return Mem{*base, index, scale, static_cast<std::int32_t>(disp)};
}

Operand parse_operand(LineCursor& cur, Address insn_address) {
  // Tolerate size prefixes like "qword ptr [rcx]".
  if (cur.peek() == 'q' || cur.peek() == 'Q') {
    LineCursor probe = cur;
    auto w = lower(probe.word(",["));
    if (w == "qword") {
      cur = probe;
      LineCursor probe2 = cur;
      if (lower(probe2.word(",[")) == "ptr") cur = probe2;
    }
  }
  char c = cur.peek();
  if (c == '[') return parse_memory(cur, insn_address);
  if (std::isdigit(static_cast<unsigned char>(c)) || c == '-') return Imm{cur.integer(",")};
  return reg_or_fail(cur, ",");
}

bool is_memory(const Operand& op) {
  return std::holds_alternative<Mem>(op) || std::holds_alternative<RipRel>(op);
}

void check_shape(const LineCursor& cur, std::size_t col, Mnemonic m,
                 const std::vector<Operand>& ops) {
  auto want = [&](std::size_t n) {
    if (ops.size() != n) {
      cur.fail_at(col, std::string(mnemonic_name(m)) + " takes " + std::to_string(n) +
                           " operand(s), got " + std::to_string(ops.size()));
    }
  };
  switch (m) {
    case Mnemonic::ret:
    case Mnemonic::nop:
      want(0);
      break;
    case Mnemonic::call:
    case Mnemonic::jmp:
    case Mnemonic::jcc:
    case Mnemonic::neg:
      want(1);
      if (m == Mnemonic::neg && std::holds_alternative<Imm>(ops[0])) {
        cur.fail_at(col, "neg needs a register or memory operand");
      }
      break;
    case Mnemonic::lea:
      want(2);
      if (!std::holds_alternative<Reg>(ops[0]) || !is_memory(ops[1])) {
        cur.fail_at(col, "lea needs a register destination and a memory source");
      }
      break;
    default:
      want(2);
      if (std::holds_alternative<Imm>(ops[0])) cur.fail_at(col, "destination cannot be an immediate");
      if (is_memory(ops[0]) && is_memory(ops[1])) {
        cur.fail_at(col, "at most one memory operand");
      }
      break;
  }
}

std::optional<Mnemonic> parse_mnemonic(std::string_view name) {
  for (std::size_t i = 0; i < kMnemonicNames.size(); ++i) {
    if (kMnemonicNames[i] == name) return static_cast<Mnemonic>(i);
  }
  if (std::find(kJccAliases.begin(), kJccAliases.end(), name) != kJccAliases.end()) {
    return Mnemonic::jcc;
  }
  return std::nullopt;
}

}  // namespace

std::string_view reg_name(Reg r) { return kRegNames[static_cast<std::size_t>(r)]; }

std::optional<Reg> parse_reg(std::string_view name) {
  for (std::size_t i = 0; i < kRegNames.size(); ++i) {
    if (kRegNames[i] == name) return static_cast<Reg>(i);
  }
  return std::nullopt;
}

bool is_volatile(Reg r) {
  switch (r) {
    case Reg::rax: case Reg::rcx: case Reg::rdx:
    case Reg::r8: case Reg::r9: case Reg::r10: case Reg::r11:
      return true;
    default:
      return false;
  }
}

std::string_view mnemonic_name(Mnemonic m) { return kMnemonicNames[static_cast<std::size_t>(m)]; }

std::string_view tag_name(SymbolTag t) { return kTagNames[static_cast<std::size_t>(t)]; }

std::optional<SymbolTag> parse_tag(std::string_view name) {
  for (std::size_t i = 0; i < kTagNames.size(); ++i) {
    if (kTagNames[i] == name) return static_cast<SymbolTag>(i);
  }
  return std::nullopt;
}

ParseError::ParseError(std::size_t line, std::size_t column, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) +
                         ": " + message),
      line_(line),
      column_(column) {}

std::optional<Address> Instruction::direct_target() const {
  if (op != Mnemonic::call && op != Mnemonic::jmp && op != Mnemonic::jcc) return std::nullopt;
  if (operands.size() != 1) return std::nullopt;
  if (const auto* imm = std::get_if<Imm>(&operands[0])) return static_cast<Address>(imm->value);
  return std::nullopt;
}

Address Function::end() const {
  return instructions.empty() ? entry : instructions.back().address + 1;
}

const Instruction* Function::at(Address addr) const {
  auto it = std::lower_bound(instructions.begin(), instructions.end(), addr,
                             [](const Instruction& i, Address a) { return i.address < a; });
  if (it == instructions.end() || it->address != addr) return nullptr;
  return &*it;
}

const Function* BinaryImage::function(std::string_view name) const {
  for (const auto& f : functions_) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

const Function* BinaryImage::function_at_entry(Address addr) const {
  for (const auto& f : functions_) {
    if (f.entry == addr) return &f;
  }
  return nullptr;
}

const Function* BinaryImage::function_containing(Address addr) const {
  for (const auto& f : functions_) {
    if (addr >= f.entry && addr < f.end()) return &f;
  }
  return nullptr;
}

const Instruction* BinaryImage::instruction_at(Address addr) const {
  const Function* f = function_containing(addr);
  return f ? f->at(addr) : nullptr;
}

void BinaryImage::apply_symbol_defaults(
    const std::map<std::string, SymbolTag, std::less<>>& table) {
  for (auto& s : symbols_) {
    if (s.explicit_tag) continue;
    auto it = table.find(s.name);
    s.tag = it == table.end() ? SymbolTag::plain : it->second;
  }
}

BinaryImage parse_fixture(std::string_view text) {
  BinaryImage image;
  Function* current = nullptr;
  std::optional<Address> data_cursor;
  std::set<std::string> names;
  // Remember where things were declared for post-parse validation messages.
  std::map<std::string, std::size_t> func_line;
  std::vector<std::pair<std::string, std::size_t>> entry_lines;
  std::map<Address, std::size_t> sym_line;

  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    std::string_view raw = text.substr(start, nl == std::string_view::npos ? text.size() - start
                                                                            : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (auto semi = raw.find(';'); semi != std::string_view::npos) raw = raw.substr(0, semi);

    LineCursor cur(raw, line_no);
    if (cur.at_end()) continue;

    if (cur.peek() == '.') {
      std::size_t col = cur.column();
      auto directive = cur.word();
      if (directive == ".func") {
        std::size_t ncol = cur.column() + 1;
        auto name = std::string(cur.word());
        if (name.empty()) cur.fail("expected function name");
        if (!cur.consume('@')) cur.fail("expected '@<hex>' after function name");
        Address entry = cur.hex_literal();
        if (!cur.at_end()) cur.fail("unexpected trailing text");
        if (!names.insert(name).second) cur.fail_at(ncol, "duplicate function name '" + name + "'");
        if (image.function_at_entry(entry)) {
          cur.fail_at(ncol, "duplicate function address " + hex(entry));
        }
        image.functions_.push_back(Function{name, entry, {}});
        current = &image.functions_.back();
        func_line[name] = line_no;
        data_cursor.reset();
      } else if (directive == ".data") {
        if (!cur.consume('@')) cur.fail("expected '@<hex>'");
        Address at = cur.hex_literal();
        if (at % 8 != 0) cur.fail("data address " + hex(at) + " is not 8-aligned");
        if (!cur.at_end()) cur.fail("unexpected trailing text");
        data_cursor = at;
        current = nullptr;
      } else if (directive == ".sym") {
        Address at = cur.hex_literal();
        auto name = std::string(cur.word());
        if (name.empty()) cur.fail("expected symbol name");
        SymbolEntry sym{at, name, SymbolTag::plain, false};
        if (!cur.at_end()) {
          std::size_t tcol = cur.column();
          auto tag_tok = cur.word();
          auto tag = parse_tag(lower(tag_tok));
          if (!tag) cur.fail_at(tcol, "unknown symbol tag '" + std::string(tag_tok) + "'");
          sym.tag = *tag;
          sym.explicit_tag = true;
        }
        if (!cur.at_end()) cur.fail("unexpected trailing text");
        if (sym_line.count(at)) cur.fail("duplicate symbol address " + hex(at));
        sym_line[at] = line_no;
        image.symbols_.push_back(std::move(sym));
        current = nullptr;
        data_cursor.reset();
      } else if (directive == ".entry") {
        auto name = std::string(cur.word());
        if (name.empty()) cur.fail("expected function name");
        if (!cur.at_end()) cur.fail("unexpected trailing text");
        if (std::find(image.entries_.begin(), image.entries_.end(), name) !=
            image.entries_.end()) {
          cur.fail("duplicate entry '" + name + "'");
        }
        image.entries_.push_back(name);
        entry_lines.emplace_back(name, line_no);
        current = nullptr;
        data_cursor.reset();
      } else {
        cur.fail_at(col, "unknown directive '" + std::string(directive) + "'");
      }
      continue;
    }

    std::size_t first_col = cur.column();
    auto first = cur.word(":");
    if (lower(first) == "dq") {
      if (!data_cursor) cur.fail_at(first_col, "dq outside of a .data run");
      do {
        std::size_t vcol = cur.column();
        Address addr = *data_cursor;
        if (image.data_.count(addr)) cur.fail_at(vcol, "data word " + hex(addr) + " defined twice");
        image.data_[addr] = cur.hex_literal(",");
        *data_cursor += 8;
      } while (cur.consume(','));
      if (!cur.at_end()) cur.fail("unexpected trailing text in dq");
      continue;
    }

    // Instruction line: <hex>: <mnemonic> <operands>
    auto addr = LineCursor::parse_unsigned(first);
    if (!addr || first.size() < 3 || first[0] != '0' || (first[1] != 'x' && first[1] != 'X')) {
      cur.fail_at(first_col, "expected instruction address, directive, or dq");
    }
    cur.expect(':');
    if (!current) cur.fail_at(first_col, "instruction outside of a .func block");
    if (current->instructions.empty()) {
      if (*addr != current->entry) {
        cur.fail_at(first_col, "first instruction must sit at the function entry " +
                                   hex(current->entry));
      }
    } else if (*addr <= current->instructions.back().address) {
      cur.fail_at(first_col, "instruction addresses must strictly increase");
    }
    std::size_t mcol = cur.column() + 1;
    auto mn_tok = cur.word();
    auto mn = parse_mnemonic(lower(mn_tok));
    if (!mn) cur.fail_at(mcol, "unknown mnemonic '" + std::string(mn_tok) + "'");
    Instruction insn{*addr, *mn, {}};
    if (!cur.at_end()) {
      do {
        insn.operands.push_back(parse_operand(cur, *addr));
      } while (cur.consume(','));
    }
    if (!cur.at_end()) cur.fail("unexpected trailing text after operands");
    check_shape(cur, mcol, *mn, insn.operands);
    current->instructions.push_back(std::move(insn));
  }

  for (const auto& f : image.functions_) {
    if (f.instructions.empty()) {
      throw ParseError(func_line[f.name], 1, "function '" + f.name + "' has no instructions");
    }
  }
  std::sort(image.functions_.begin(), image.functions_.end(),
            [](const Function& a, const Function& b) { return a.entry < b.entry; });
  for (std::size_t i = 1; i < image.functions_.size(); ++i) {
    const auto& prev = image.functions_[i - 1];
    const auto& f = image.functions_[i];
    if (f.entry < prev.end()) {
      throw ParseError(func_line[f.name], 1,
                       "function '" + f.name + "' overlaps '" + prev.name + "'");
    }
  }
  for (const auto& [name, line] : entry_lines) {
    if (!image.function(name)) {
      throw ParseError(line, 1, "entry references missing function '" + name + "'");
    }
  }
  std::sort(image.symbols_.begin(), image.symbols_.end(),
            [](const SymbolEntry& a, const SymbolEntry& b) { return a.address < b.address; });
  return image;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

std::string signed_hex(std::int64_t v) {
  if (v < 0) return "-" + hex(static_cast<std::uint64_t>(-v));
  return hex(static_cast<std::uint64_t>(v));
}

std::string format_operand(const Operand& op, Address insn_address) {
  return std::visit(
      [&](const auto& o) -> std::string {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, Reg>) {
          return std::string(reg_name(o));
        } else if constexpr (std::is_same_v<T, Imm>) {
          return signed_hex(o.value);
        } else if constexpr (std::is_same_v<T, Mem>) {
          std::string s = "[" + std::string(reg_name(o.base));
          if (o.index) {
            s += "+" + std::string(reg_name(*o.index));
            if (o.scale != 1) s += "*" + std::to_string(o.scale);
          }
          if (o.disp > 0) s += "+" + hex(static_cast<std::uint64_t>(o.disp));
          if (o.disp < 0) s += signed_hex(o.disp);
          return s + "]";
        } else {
          auto rel = static_cast<std::int64_t>(o.target - insn_address);
          if (rel == 0) return "[rip]";
          return "[rip" + std::string(rel > 0 ? "+" : "") + signed_hex(rel) + "]";
        }
      },
      op);
}

std::string format_instruction(const Instruction& insn) {
  std::string s = hex(insn.address) + ": " + std::string(mnemonic_name(insn.op));
  for (std::size_t i = 0; i < insn.operands.size(); ++i) {
    s += i == 0 ? " " : ", ";
    s += format_operand(insn.operands[i], insn.address);
  }
  return s;
}

std::string serialize_fixture(const BinaryImage& image) {
  std::ostringstream os;
  for (const auto& f : image.functions()) {
    os << ".func " << f.name << " @" << hex(f.entry) << '\n';
    for (const auto& insn : f.instructions) os << format_instruction(insn) << '\n';
  }
  std::optional<Address> next;
  for (const auto& [addr, word] : image.data()) {
    if (next && *next == addr) {
      os << ", " << hex(word);
    } else {
      if (next) os << '\n';
      os << ".data @" << hex(addr) << '\n' << "dq " << hex(word);
    }
    next = addr + 8;
  }
  if (next) os << '\n';
  for (const auto& s : image.symbols()) {
    os << ".sym " << hex(s.address) << ' ' << s.name;
    if (s.explicit_tag) os << ' ' << tag_name(s.tag);
    os << '\n';
  }
  for (const auto& e : image.entries()) os << ".entry " << e << '\n';
  return os.str();
}

std::uint64_t read_data_word(const BinaryImage& image, Address addr) {
  auto it = image.data().find(addr);
  if (it == image.data().end()) throw LookupError("address not mapped: " + hex(addr));
  return it->second;
}

std::optional<SymbolEntry> symbol_at(const BinaryImage& image, Address addr) {
  const auto& syms = image.symbols();
  auto it = std::lower_bound(syms.begin(), syms.end(), addr,
                             [](const SymbolEntry& s, Address a) { return s.address < a; });
  if (it == syms.end() || it->address != addr) return std::nullopt;
  return *it;
}

}  // namespace comracer
