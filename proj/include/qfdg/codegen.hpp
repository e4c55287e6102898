#pragma once

// Lowering of tensor contractions to fully unrolled scalar kernels.
//
// A ContractionSpec is a sum of terms
//     out[o] += prefactor * sum_{b} T[fixed..., o, b...] * f1[b1] * f2[b2] ...
// where o runs over the free (output) indices and b over the indices bound to
// input fields. Three evaluators consume the same spec:
//   lower() + interpret()  unrolled IR with literal tensor entries
//   emit_source()          the same IR printed as a C function
//   Contraction            grouped dense loops, used by the solver

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qfdg/tensors.hpp"

namespace qfdg::codegen {

enum class Symbol : int {
  detB,
  sqrtDetB,
  B11,
  B12,
  B21,
  B22,
  len,
  nx,
  ny,
  detB_nb,
  sqrtDetB_nb,
  g,
  lambda,
};
inline constexpr int kSymbolCount = 13;

inline std::string_view symbol_name(Symbol s) {
  static constexpr std::array<std::string_view, kSymbolCount> names{
      "detB", "sqrtDetB", "B11", "B12", "B21", "B22", "len",
      "nx",   "ny",       "detB_nb", "sqrtDetB_nb", "g", "lambda"};
  return names[static_cast<std::size_t>(s)];
}

/// Coefficient arrays a kernel may read. `_nb` is the neighbour across an
/// interior edge, `_ext` the Legendre coefficients of Dirichlet data on a
/// boundary edge.
enum class Field : int {
  xi,
  U,
  V,
  u,
  v,
  hb,
  H,
  xi_nb,
  U_nb,
  V_nb,
  u_nb,
  v_nb,
  hb_nb,
  xi_ext,
  U_ext,
  V_ext,
  u_ext,
  v_ext,
  hb_ext,
};
inline constexpr int kFieldCount = 19;

inline std::string_view field_name(Field f) {
  static constexpr std::array<std::string_view, kFieldCount> names{
      "xi",    "U",    "V",    "u",    "v",    "hb",     "H",      "xi_nb", "U_nb", "V_nb",
      "u_nb",  "v_nb", "hb_nb", "xi_ext", "U_ext", "V_ext", "u_ext", "v_ext", "hb_ext"};
  return names[static_cast<std::size_t>(f)];
}

/// Immutable scalar expression over geometry symbols and constants.
class Scalar {
 public:
  enum class Op { Const, Sym, Add, Sub, Mul, Div };

  Scalar(double c) : node_(std::make_shared<Node>(Node{Op::Const, c, Symbol::detB, {}, {}})) {}  // NOLINT
  Scalar(Symbol s) : node_(std::make_shared<Node>(Node{Op::Sym, 0.0, s, {}, {}})) {}  // NOLINT

  Op op() const { return node_->op; }
  double value() const { return node_->value; }
  Symbol symbol() const { return node_->symbol; }
  Scalar lhs() const { return Scalar(node_->lhs); }
  Scalar rhs() const { return Scalar(node_->rhs); }

  double evaluate(std::span<const double, kSymbolCount> symbols) const {
    return eval(*node_, symbols);
  }

  friend Scalar operator+(const Scalar& a, const Scalar& b) { return binary(Op::Add, a, b); }
  friend Scalar operator-(const Scalar& a, const Scalar& b) { return binary(Op::Sub, a, b); }
  friend Scalar operator*(const Scalar& a, const Scalar& b) { return binary(Op::Mul, a, b); }
  friend Scalar operator/(const Scalar& a, const Scalar& b) { return binary(Op::Div, a, b); }
  friend Scalar operator-(const Scalar& a) { return binary(Op::Mul, Scalar(-1.0), a); }

 private:
  struct Node {
    Op op;
    double value;
    Symbol symbol;
    std::shared_ptr<const Node> lhs;
    std::shared_ptr<const Node> rhs;
  };
  explicit Scalar(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

  static Scalar binary(Op op, const Scalar& a, const Scalar& b) {
    return Scalar(std::make_shared<Node>(Node{op, 0.0, Symbol::detB, a.node_, b.node_}));
  }
  static double eval(const Node& n, std::span<const double, kSymbolCount> s) {
    switch (n.op) {
      case Op::Const: return n.value;
      case Op::Sym: return s[static_cast<std::size_t>(n.symbol)];
      case Op::Add: return eval(*n.lhs, s) + eval(*n.rhs, s);
      case Op::Sub: return eval(*n.lhs, s) - eval(*n.rhs, s);
      case Op::Mul: return eval(*n.lhs, s) * eval(*n.rhs, s);
      case Op::Div: return eval(*n.lhs, s) / eval(*n.rhs, s);
    }
    return 0.0;
  }

  std::shared_ptr<const Node> node_;
};

struct TensorRef {
  TensorId id = TensorId::Mass;
  std::vector<int> fixed;  // leading block indices (l, e, en)
};

struct ContractionTerm {
  TensorRef tensor;
  std::vector<Field> factors;
  Scalar prefactor = 1.0;
};

struct ContractionSpec {
  std::string name;
  int free_indices = 1;
  std::vector<ContractionTerm> terms;
};

/// Inputs of one kernel invocation.
struct KernelArgs {
  std::array<std::span<const double>, kFieldCount> fields{};
  std::array<double, kSymbolCount> symbols{};

  std::span<const double>& operator[](Field f) { return fields[static_cast<std::size_t>(f)]; }
  std::span<const double> operator[](Field f) const {
    return fields[static_cast<std::size_t>(f)];
  }
  double& operator[](Symbol s) { return symbols[static_cast<std::size_t>(s)]; }
  double operator[](Symbol s) const { return symbols[static_cast<std::size_t>(s)]; }
};

struct InputSlot {
  Field field;
  int size;
};

/// Shape information of a spec checked against a tensor set.
struct SpecLayout {
  std::vector<int> output_extents;
  std::vector<InputSlot> inputs;  // sorted by field id
  std::vector<Symbol> symbols;    // sorted by symbol id
  int output_size() const {
    int n = 1;
    for (int e : output_extents) n *= e;
    return n;
  }
};

namespace detail {

inline void collect_symbols(const Scalar& s, std::array<bool, kSymbolCount>& used) {
  switch (s.op()) {
    case Scalar::Op::Const: return;
    case Scalar::Op::Sym: used[static_cast<std::size_t>(s.symbol())] = true; return;
    default:
      collect_symbols(s.lhs(), used);
      collect_symbols(s.rhs(), used);
  }
}

}  // namespace detail

inline SpecLayout validate(const ContractionSpec& spec, const RefTensors& t) {
  SpecLayout layout;
  std::array<int, kFieldCount> sizes{};
  std::array<bool, kSymbolCount> used{};
  bool first = true;
  for (const auto& term : spec.terms) {
    const auto info = tensor_info(term.tensor.id);
    const auto& tensor = t.get(term.tensor.id);
    const auto& ext = tensor.extents();
    if (static_cast<int>(term.tensor.fixed.size()) != info.fixed) {
      throw IndexOutOfRange(spec.name + ": tensor " + std::string(info.name) + " needs " +
                            std::to_string(info.fixed) + " fixed indices");
    }
    for (std::size_t d = 0; d < term.tensor.fixed.size(); ++d) {
      int i = term.tensor.fixed[d];
      if (i < 0 || i >= ext[d]) {
        throw IndexOutOfRange(spec.name + ": fixed index " + std::to_string(i) +
                              " out of range for " + std::string(info.name));
      }
    }
    auto bound = static_cast<std::size_t>(info.fixed + spec.free_indices);
    if (bound + term.factors.size() != ext.size()) {
      throw IndexOutOfRange(spec.name + ": " + std::string(info.name) +
                            " rank does not match free indices plus factors");
    }
    std::vector<int> out_ext(ext.begin() + info.fixed, ext.begin() + static_cast<long>(bound));
    if (first) {
      layout.output_extents = out_ext;
      first = false;
    } else if (out_ext != layout.output_extents) {
      throw IndexOutOfRange(spec.name + ": terms disagree on output extents");
    }
    for (std::size_t f = 0; f < term.factors.size(); ++f) {
      int n = ext[bound + f];
      auto& sz = sizes[static_cast<std::size_t>(term.factors[f])];
      if (sz != 0 && sz != n) {
        throw IndexOutOfRange(spec.name + ": field " +
                              std::string(field_name(term.factors[f])) +
                              " bound to indices of different extents");
      }
      sz = n;
    }
    detail::collect_symbols(term.prefactor, used);
  }
  for (int f = 0; f < kFieldCount; ++f) {
    if (sizes[static_cast<std::size_t>(f)] != 0) {
      layout.inputs.push_back({static_cast<Field>(f), sizes[static_cast<std::size_t>(f)]});
    }
  }
  for (int s = 0; s < kSymbolCount; ++s) {
    if (used[static_cast<std::size_t>(s)]) layout.symbols.push_back(static_cast<Symbol>(s));
  }
  return layout;
}

inline void check_args(const std::string& name, const std::vector<InputSlot>& inputs,
                       const KernelArgs& args) {
  for (const auto& in : inputs) {
    if (static_cast<int>(args[in.field].size()) != in.size) {
      throw SizeMismatch(name + ": input " + std::string(field_name(in.field)) + " has " +
                         std::to_string(args[in.field].size()) + " entries, expected " +
                         std::to_string(in.size));
    }
  }
}

// ---------------------------------------------------------------------------
// Kernel IR: three-address code, one assignment per temporary.

enum class OpCode : std::uint8_t { Add, Sub, Mul, Div };

struct Operand {
  enum class Kind : std::uint8_t { Temp, Input, Symbol, Const };
  Kind kind = Kind::Const;
  int index = 0;  // temp number, field id or symbol id
  int slot = 0;   // coefficient index for inputs
  double value = 0.0;

  static Operand temp(int n) { return {Kind::Temp, n, 0, 0.0}; }
  static Operand input(Field f, int i) { return {Kind::Input, static_cast<int>(f), i, 0.0}; }
  static Operand symbol(Symbol s) { return {Kind::Symbol, static_cast<int>(s), 0, 0.0}; }
  static Operand constant(double v) { return {Kind::Const, 0, 0, v}; }

  friend bool operator==(const Operand& a, const Operand& b) {
    return a.kind == b.kind && a.index == b.index && a.slot == b.slot &&
           std::bit_cast<std::uint64_t>(a.value) == std::bit_cast<std::uint64_t>(b.value);
  }
};

struct Instr {
  OpCode op;
  Operand lhs;
  Operand rhs;
};

struct KernelIR {
  std::string name;
  std::vector<int> output_extents;
  std::vector<InputSlot> inputs;
  std::vector<Symbol> symbols;
  std::vector<Instr> code;                     // t_n = code[n]
  std::vector<std::optional<Operand>> outputs;  // empty: output is zero
  std::size_t term_count = 0;                  // multiply terms before CSE
  std::vector<std::size_t> terms_per_output;

  std::size_t count(OpCode op) const {
    std::size_t n = 0;
    for (const auto& in : code) n += (in.op == op);
    return n;
  }
};

struct LowerOptions {
  bool cse = true;
};

namespace detail {

class IrBuilder {
 public:
  explicit IrBuilder(bool cse) : cse_(cse) {}

  Operand emit(OpCode op, Operand a, Operand b) {
    if (!cse_) return push(op, a, b);
    Key key{op, a, b};
    auto it = memo_.find(key);
    if (it != memo_.end()) return Operand::temp(it->second);
    Operand t = push(op, a, b);
    memo_.emplace(key, t.index);
    return t;
  }

  Operand lower(const Scalar& s) {
    switch (s.op()) {
      case Scalar::Op::Const: return Operand::constant(s.value());
      case Scalar::Op::Sym: return Operand::symbol(s.symbol());
      case Scalar::Op::Add: return emit(OpCode::Add, lower(s.lhs()), lower(s.rhs()));
      case Scalar::Op::Sub: return emit(OpCode::Sub, lower(s.lhs()), lower(s.rhs()));
      case Scalar::Op::Mul: return emit(OpCode::Mul, lower(s.lhs()), lower(s.rhs()));
      case Scalar::Op::Div: return emit(OpCode::Div, lower(s.lhs()), lower(s.rhs()));
    }
    return Operand::constant(0.0);
  }

  std::vector<Instr> take() { return std::move(code_); }

 private:
  struct Key {
    OpCode op;
    Operand a;
    Operand b;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      auto mix = [](std::size_t h, std::uint64_t v) {
        return h ^ (std::hash<std::uint64_t>{}(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
      };
      std::size_t h = static_cast<std::size_t>(k.op);
      for (const Operand* o : {&k.a, &k.b}) {
        h = mix(h, static_cast<std::uint64_t>(o->kind));
        h = mix(h, static_cast<std::uint64_t>(o->index));
        h = mix(h, static_cast<std::uint64_t>(o->slot));
        h = mix(h, std::bit_cast<std::uint64_t>(o->value));
      }
      return h;
    }
  };

  Operand push(OpCode op, Operand a, Operand b) {
    code_.push_back({op, a, b});
    return Operand::temp(static_cast<int>(code_.size()) - 1);
  }

  bool cse_;
  std::vector<Instr> code_;
  std::unordered_map<Key, int, KeyHash> memo_;
};

/// Drops assignments not reachable from an output and renumbers temporaries.
inline void eliminate_dead_code(KernelIR& ir) {
  std::vector<char> live(ir.code.size(), 0);
  auto mark = [&](const Operand& o) {
    if (o.kind == Operand::Kind::Temp) live[static_cast<std::size_t>(o.index)] = 1;
  };
  for (const auto& out : ir.outputs) {
    if (out) mark(*out);
  }
  for (std::size_t n = ir.code.size(); n-- > 0;) {
    if (!live[n]) continue;
    mark(ir.code[n].lhs);
    mark(ir.code[n].rhs);
  }
  std::vector<int> renumber(ir.code.size(), -1);
  std::vector<Instr> code;
  auto remap = [&](Operand o) {
    if (o.kind == Operand::Kind::Temp) o.index = renumber[static_cast<std::size_t>(o.index)];
    return o;
  };
  for (std::size_t n = 0; n < ir.code.size(); ++n) {
    if (!live[n]) continue;
    renumber[n] = static_cast<int>(code.size());
    code.push_back({ir.code[n].op, remap(ir.code[n].lhs), remap(ir.code[n].rhs)});
  }
  for (auto& out : ir.outputs) {
    if (out) out = remap(*out);
  }
  ir.code = std::move(code);
}

}  // namespace detail

/// Unrolls the contraction with tensor entries inlined as literals. Zero
/// entries produce no terms. Sums are accumulated left to right in
/// (term, bound index) order.
inline KernelIR lower(const ContractionSpec& spec, const RefTensors& t, LowerOptions opt = {}) {
  SpecLayout layout = validate(spec, t);
  KernelIR ir;
  ir.name = spec.name;
  ir.output_extents = layout.output_extents;
  ir.inputs = layout.inputs;
  ir.symbols = layout.symbols;
  const int n_out = layout.output_size();
  ir.outputs.assign(static_cast<std::size_t>(n_out), std::nullopt);
  ir.terms_per_output.assign(static_cast<std::size_t>(n_out), 0);

  detail::IrBuilder b(opt.cse);
  // Prefactors are lowered lazily, at most once per term when CSE is on.
  std::vector<std::optional<Operand>> prefactor(spec.terms.size());

  for (int o = 0; o < n_out; ++o) {
    std::optional<Operand> sum;
    for (std::size_t ti = 0; ti < spec.terms.size(); ++ti) {
      const auto& term = spec.terms[ti];
      const auto& tensor = t.get(term.tensor.id);
      auto block = tensor.slice(term.tensor.fixed);
      const auto& ext = tensor.extents();
      const std::size_t first_bound = term.tensor.fixed.size() + ir.output_extents.size();
      std::size_t bound_size = 1;
      for (std::size_t d = first_bound; d < ext.size(); ++d) bound_size *= ext[d];
      for (std::size_t flat = 0; flat < bound_size; ++flat) {
        double entry = block[static_cast<std::size_t>(o) * bound_size + flat];
        if (entry == 0.0) continue;
        Operand pf;
        if (opt.cse) {
          if (!prefactor[ti]) prefactor[ti] = b.lower(term.prefactor);
          pf = *prefactor[ti];
        } else {
          pf = b.lower(term.prefactor);
        }
        Operand prod = b.emit(OpCode::Mul, Operand::constant(entry), pf);
        // decode bound indices, row-major
        std::size_t rem = flat;
        std::vector<int> idx(term.factors.size());
        for (std::size_t f = term.factors.size(); f-- > 0;) {
          auto e = static_cast<std::size_t>(ext[first_bound + f]);
          idx[f] = static_cast<int>(rem % e);
          rem /= e;
        }
        for (std::size_t f = 0; f < term.factors.size(); ++f) {
          prod = b.emit(OpCode::Mul, prod, Operand::input(term.factors[f], idx[f]));
        }
        sum = sum ? b.emit(OpCode::Add, *sum, prod) : prod;
        ++ir.term_count;
        ++ir.terms_per_output[static_cast<std::size_t>(o)];
      }
    }
    ir.outputs[static_cast<std::size_t>(o)] = sum;
  }
  ir.code = b.take();
  detail::eliminate_dead_code(ir);
  return ir;
}

/// Evaluates the IR in double precision in program order.
inline std::vector<double> interpret(const KernelIR& ir, const KernelArgs& args) {
  check_args(ir.name, ir.inputs, args);
  std::vector<double> temps(ir.code.size());
  auto value = [&](const Operand& o) -> double {
    switch (o.kind) {
      case Operand::Kind::Temp: return temps[static_cast<std::size_t>(o.index)];
      case Operand::Kind::Input:
        return args.fields[static_cast<std::size_t>(o.index)][static_cast<std::size_t>(o.slot)];
      case Operand::Kind::Symbol: return args.symbols[static_cast<std::size_t>(o.index)];
      case Operand::Kind::Const: return o.value;
    }
    return 0.0;
  };
  for (std::size_t n = 0; n < ir.code.size(); ++n) {
    const Instr& in = ir.code[n];
    double a = value(in.lhs);
    double b = value(in.rhs);
    switch (in.op) {
      case OpCode::Add: temps[n] = a + b; break;
      case OpCode::Sub: temps[n] = a - b; break;
      case OpCode::Mul: temps[n] = a * b; break;
      case OpCode::Div: temps[n] = a / b; break;
    }
  }
  std::vector<double> out(ir.outputs.size(), 0.0);
  for (std::size_t o = 0; o < out.size(); ++o) {
    if (ir.outputs[o]) out[o] = value(*ir.outputs[o]);
  }
  return out;
}

namespace detail {

/// Shortest representation that parses back to the same double, always
/// spelled as a floating literal.
inline std::string c_literal(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  std::string s(buf);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  if (v < 0) s = "(" + s + ")";
  return s;
}

}  // namespace detail

/// Self-contained C function:
///   void name(const double* <field>..., double <symbol>..., double* out)
inline std::string emit_source(const KernelIR& ir, const std::string& name) {
  std::ostringstream os;
  auto operand = [&](const Operand& o) -> std::string {
    switch (o.kind) {
      case Operand::Kind::Temp: return "t" + std::to_string(o.index);
      case Operand::Kind::Input:
        return std::string(field_name(static_cast<Field>(o.index))) + "[" +
               std::to_string(o.slot) + "]";
      case Operand::Kind::Symbol: return std::string(symbol_name(static_cast<Symbol>(o.index)));
      case Operand::Kind::Const: return detail::c_literal(o.value);
    }
    return "0.0";
  };
  os << "/* " << name << ": " << ir.outputs.size() << " outputs, " << ir.term_count
     << " terms, " << ir.code.size() << " assignments */\n";
  os << "void " << name << "(";
  bool first = true;
  auto sep = [&] {
    if (!first) os << ", ";
    first = false;
  };
  for (const auto& in : ir.inputs) {
    sep();
    os << "const double* " << field_name(in.field);
  }
  for (Symbol s : ir.symbols) {
    sep();
    os << "double " << symbol_name(s);
  }
  sep();
  os << "double* out)\n{\n";
  static constexpr std::array<const char*, 4> ops{" + ", " - ", " * ", " / "};
  for (std::size_t n = 0; n < ir.code.size(); ++n) {
    const Instr& in = ir.code[n];
    os << "  const double t" << n << " = " << operand(in.lhs) << ops[static_cast<std::size_t>(in.op)]
       << operand(in.rhs) << ";\n";
  }
  for (std::size_t o = 0; o < ir.outputs.size(); ++o) {
    os << "  out[" << o << "] = " << (ir.outputs[o] ? operand(*ir.outputs[o]) : "0.0") << ";\n";
  }
  os << "}\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Grouped dense evaluation. Terms sharing a tensor block and factor rank are
// combined first (w = sum pref * f, or P = sum pref * f (x) g), so every block
// is contracted once per call.

class Contraction {
 public:
  static constexpr int kMaxBound = 16;

  Contraction() = default;
  Contraction(const ContractionSpec& spec, const RefTensors& t)
      : name_(spec.name), layout_(validate(spec, t)) {
    for (const auto& term : spec.terms) {
      if (term.factors.size() > 2) {
        throw IndexOutOfRange(spec.name + ": grouped evaluation supports at most two factors");
      }
      const auto& tensor = t.get(term.tensor.id);
      auto block = tensor.slice(term.tensor.fixed);
      Group* g = nullptr;
      for (auto& cand : groups_) {
        if (cand.block.data() == block.data() && cand.rank == term.factors.size()) g = &cand;
      }
      if (!g) {
        Group ng;
        ng.block = block;
        ng.rank = term.factors.size();
        const auto& ext = tensor.extents();
        std::size_t first_bound = term.tensor.fixed.size() + layout_.output_extents.size();
        for (std::size_t f = 0; f < ng.rank; ++f) ng.extent[f] = ext[first_bound + f];
        for (int e : ng.extent) {
          if (e > kMaxBound) throw IndexOutOfRange(spec.name + ": bound extent too large");
        }
        groups_.push_back(std::move(ng));
        g = &groups_.back();
      }
      g->terms.push_back({term.prefactor, term.factors});
    }
    for (auto& g : groups_) pack_if_symmetric(g);
  }

  const std::string& name() const { return name_; }
  const SpecLayout& layout() const { return layout_; }
  int output_size() const { return layout_.output_size(); }

  /// Overwrites out.
  void evaluate(const KernelArgs& args, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    const std::size_t n_out = out.size();
    std::span<const double, kSymbolCount> sym(args.symbols);
    for (const auto& g : groups_) {
      if (g.rank == 0) {
        double w = 0.0;
        for (const auto& tm : g.terms) w += tm.prefactor.evaluate(sym);
        for (std::size_t o = 0; o < n_out; ++o) out[o] += g.block[o] * w;
      } else if (g.rank == 1) {
        const auto n0 = static_cast<std::size_t>(g.extent[0]);
        std::array<double, kMaxBound> w{};
        for (const auto& tm : g.terms) {
          double pf = tm.prefactor.evaluate(sym);
          const double* a = args[tm.factors[0]].data();
          for (std::size_t i = 0; i < n0; ++i) w[i] += pf * a[i];
        }
        const double* blk = g.block.data();
        for (std::size_t o = 0; o < n_out; ++o) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n0; ++i) acc += blk[o * n0 + i] * w[i];
          out[o] += acc;
        }
      } else if (!g.packed.empty()) {
        // P[i][m] + P[m][i] over i <= m
        const auto n = static_cast<std::size_t>(g.extent[0]);
        const std::size_t np = n * (n + 1) / 2;
        std::array<double, kMaxBound*(kMaxBound + 1) / 2> P{};
        for (const auto& tm : g.terms) {
          double pf = tm.prefactor.evaluate(sym);
          const double* a = args[tm.factors[0]].data();
          const double* b = args[tm.factors[1]].data();
          std::size_t q = 0;
          for (std::size_t i = 0; i < n; ++i) {
            double ai = pf * a[i];
            double bi = pf * b[i];
            P[q++] += ai * b[i];
            for (std::size_t m = i + 1; m < n; ++m) P[q++] += ai * b[m] + bi * a[m];
          }
        }
        const double* blk = g.packed.data();
        for (std::size_t o = 0; o < n_out; ++o) {
          double acc = 0.0;
          const double* row = blk + o * np;
          for (std::size_t q = 0; q < np; ++q) acc += row[q] * P[q];
          out[o] += acc;
        }
      } else {
        const auto n0 = static_cast<std::size_t>(g.extent[0]);
        const auto n1 = static_cast<std::size_t>(g.extent[1]);
        std::array<double, kMaxBound * kMaxBound> P{};
        for (const auto& tm : g.terms) {
          double pf = tm.prefactor.evaluate(sym);
          const double* a = args[tm.factors[0]].data();
          const double* b = args[tm.factors[1]].data();
          for (std::size_t i = 0; i < n0; ++i) {
            double ai = pf * a[i];
            for (std::size_t m = 0; m < n1; ++m) P[i * n1 + m] += ai * b[m];
          }
        }
        const std::size_t nb = n0 * n1;
        const double* blk = g.block.data();
        for (std::size_t o = 0; o < n_out; ++o) {
          double acc = 0.0;
          const double* row = blk + o * nb;
          for (std::size_t q = 0; q < nb; ++q) acc += row[q] * P[q];
          out[o] += acc;
        }
      }
    }
  }

 private:
  struct GroupTerm {
    Scalar prefactor;
    std::vector<Field> factors;
  };
  struct Group {
    std::span<const double> block;
    std::size_t rank = 0;
    std::array<int, 2> extent{1, 1};
    std::vector<GroupTerm> terms;
    std::vector<double> packed;  // upper triangle when symmetric in the bound pair
  };

  void pack_if_symmetric(Group& g) const {
    if (g.rank != 2 || g.extent[0] != g.extent[1]) return;
    const auto n = static_cast<std::size_t>(g.extent[0]);
    const std::size_t n_out = g.block.size() / (n * n);
    for (std::size_t o = 0; o < n_out; ++o) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m = i + 1; m < n; ++m) {
          if (g.block[(o * n + i) * n + m] != g.block[(o * n + m) * n + i]) return;
        }
      }
    }
    for (std::size_t o = 0; o < n_out; ++o) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m = i; m < n; ++m) g.packed.push_back(g.block[(o * n + i) * n + m]);
      }
    }
  }

  std::string name_;
  SpecLayout layout_;
  std::vector<Group> groups_;
};

}  // namespace qfdg::codegen
