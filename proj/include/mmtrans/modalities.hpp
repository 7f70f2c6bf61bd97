#ifndef MMTRANS_MODALITIES_HPP_
#define MMTRANS_MODALITIES_HPP_

#include <cctype>
#include <string>
#include <utility>
#include <vector>

#include "mmtrans/errors.hpp"
#include "mmtrans/solidity.hpp"
#include "mmtrans/tensor.hpp"

namespace mmtrans {

inline constexpr int kSbtCap = 600;
inline constexpr int kGraphCap = 200;
inline constexpr const char* kStartTok = "<START>";
inline constexpr const char* kEndTok = "<END>";
inline constexpr const char* kNumTok = "<NUM>";
inline constexpr const char* kStrTok = "<STR>";
inline constexpr const char* kAddrTok = "<ADDR>";

struct SbtSequence {
  std::vector<std::string> tokens;
};

/// Pre-order node labels plus undirected edges stored as (i, j) with i < j.
/// Self-loops are not stored; adjacency() adds them (Ã = A + I).
struct GraphRep {
  std::vector<std::string> node_labels;
  std::vector<std::pair<int, int>> edges;
};

// ---------------------------------------------------------------------------
// Subtokenization
// ---------------------------------------------------------------------------

/// Split an identifier at camelCase boundaries and at underscore runs between
/// alphanumerics (the runs are dropped). A leading underscore run stays
/// attached to the first subtoken; a trailing run stays attached to the last.
/// Never yields empty tokens.
inline std::vector<std::string> subtokenize(const std::string& ident) {
  if (ident.empty()) return {};
  std::size_t p = 0;
  while (p < ident.size() && ident[p] == '_') ++p;
  if (p == ident.size()) return {ident};  // all underscores
  const std::string lead = ident.substr(0, p);
  const std::string core = ident.substr(p);

  auto upper = [](char c) { return std::isupper(static_cast<unsigned char>(c)); };
  auto lower_digit = [](char c) {
    return std::islower(static_cast<unsigned char>(c)) ||
           std::isdigit(static_cast<unsigned char>(c));
  };
  auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)); };

  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < core.size(); ++i) {
    const char c = core[i];
    if (c == '_') {
      // split only when alphanumerics flank the underscore run
      std::size_t j = i;
      while (j < core.size() && core[j] == '_') ++j;
      if (!cur.empty() && j < core.size() && alnum(core[j])) {
        out.push_back(cur);
        cur.clear();
        i = j - 1;
        continue;
      }
      cur += c;
      continue;
    }
    if (!cur.empty() && upper(c)) {
      const char prev = cur.back();
      const bool camel = lower_digit(prev);
      const bool acronym_end =
          upper(prev) && i + 1 < core.size() &&
          std::islower(static_cast<unsigned char>(core[i + 1]));
      if (camel || acronym_end) {
        out.push_back(cur);
        cur.clear();
      }
    }
    cur += c;
  }
  if (!cur.empty()) out.push_back(cur);
  out.front() = lead + out.front();
  return out;
}

// ---------------------------------------------------------------------------
// Literal normalization
// ---------------------------------------------------------------------------

/// Replace literal leaf values: numbers -> <NUM>, strings -> <STR>,
/// addresses -> <ADDR>. Structure and all other nodes are unchanged.
inline AstNode normalize_literals(const AstNode& ast) {
  AstNode out = ast;
  if (out.type_label == "NumberLiteral")
    out.value = kNumTok;
  else if (out.type_label == "StringLiteral")
    out.value = kStrTok;
  else if (out.type_label == "AddressLiteral")
    out.value = kAddrTok;
  for (AstNode& c : out.children) c = normalize_literals(c);
  return out;
}

// ---------------------------------------------------------------------------
// Leaf value tokenization (shared by SBT, graph, and code channels)
// ---------------------------------------------------------------------------

namespace detail {

/// Labels whose values are raw token text joined by single spaces, not
/// identifiers: their value tokens are the space-separated pieces verbatim.
inline bool raw_text_label(const std::string& label) {
  return label == "Statement" || label == "PragmaDirective" ||
         label == "ImportDirective" || label == "UsingForDirective";
}

inline std::vector<std::string> split_spaces(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::vector<std::string> value_tokens(const AstNode& leaf) {
  if (leaf.value.empty()) return {};
  if (raw_text_label(leaf.type_label)) return split_spaces(leaf.value);
  return subtokenize(leaf.value);
}

/// Inverse of value_tokens up to removed interior underscores.
inline std::string rejoin_value(const std::string& label,
                                const std::vector<std::string>& toks) {
  std::string v;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i && raw_text_label(label)) v += ' ';
    v += toks[i];
  }
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SBT
// ---------------------------------------------------------------------------

/// Bracketed global traversal: `( label [value subtokens | children] ) label`,
/// wrapped in <START>/<END> and truncated to 600 tokens. Value tokens that
/// collide with the structural brackets are escaped as <LP>/<RP>.
inline SbtSequence sbt_serialize(const AstNode& ast) {
  SbtSequence seq;
  seq.tokens.push_back(kStartTok);
  std::vector<std::pair<const AstNode*, bool>> stack{{&ast, false}};
  while (!stack.empty()) {
    auto [node, closing] = stack.back();
    stack.pop_back();
    if (closing) {
      seq.tokens.push_back(")");
      seq.tokens.push_back(node->type_label);
      continue;
    }
    seq.tokens.push_back("(");
    seq.tokens.push_back(node->type_label);
    stack.push_back({node, true});
    if (node->is_leaf()) {
      for (const std::string& v : detail::value_tokens(*node)) {
        if (v == "(")
          seq.tokens.push_back("<LP>");
        else if (v == ")")
          seq.tokens.push_back("<RP>");
        else
          seq.tokens.push_back(v);
      }
    } else {
      for (auto it = node->children.rbegin(); it != node->children.rend(); ++it)
        stack.push_back({&*it, false});
    }
  }
  seq.tokens.push_back(kEndTok);
  if (seq.tokens.size() > kSbtCap) seq.tokens.resize(kSbtCap);
  return seq;
}

namespace detail {

class SbtParser {
 public:
  explicit SbtParser(const std::vector<std::string>& toks) : toks_(toks) {}

  AstNode run() {
    if (toks_.empty()) throw SbtFormatError("empty SBT sequence");
    if (toks_.front() != kStartTok || toks_.back() != kEndTok)
      throw SbtFormatError("missing <START>/<END> sentinels");
    p_ = 1;
    AstNode root = node();
    if (p_ != toks_.size() - 1)
      throw SbtFormatError("trailing tokens after root");
    return root;
  }

 private:
  const std::string& peek() const {
    if (p_ >= toks_.size()) throw SbtFormatError("unbalanced brackets");
    return toks_[p_];
  }
  const std::string& take() {
    if (p_ >= toks_.size()) throw SbtFormatError("unbalanced brackets");
    return toks_[p_++];
  }

  AstNode node() {
    if (take() != "(") throw SbtFormatError("expected '('");
    AstNode n;
    n.id = next_id_++;
    n.type_label = take();
    if (n.type_label == "(" || n.type_label == ")")
      throw SbtFormatError("bracket in label position");
    std::vector<std::string> values;
    while (peek() != "(" && peek() != ")") {
      std::string v = take();
      if (v == "<LP>") v = "(";
      if (v == "<RP>") v = ")";
      values.push_back(std::move(v));
    }
    while (peek() == "(") n.children.push_back(node());
    if (!values.empty() && !n.children.empty())
      throw SbtFormatError("node " + n.type_label + " has value and children");
    take();  // ')'
    const std::string& close = take();
    if (close != n.type_label)
      throw SbtFormatError("closing label '" + close + "' does not match '" +
                           n.type_label + "'");
    n.value = rejoin_value(n.type_label, values);
    return n;
  }

  const std::vector<std::string>& toks_;
  std::size_t p_ = 0;
  int next_id_ = 0;
};

}  // namespace detail

/// Reconstruct the tree from an untruncated serialized sequence. Node ids are
/// assigned afresh in pre-order; compare with same_tree, which ignores ids.
inline AstNode sbt_parse(const SbtSequence& seq) {
  return detail::SbtParser(seq.tokens).run();
}

/// Structural equality: labels, values, and child order (ids and spans are
/// bookkeeping, not content).
inline bool same_tree(const AstNode& a, const AstNode& b) {
  if (a.type_label != b.type_label || a.value != b.value) return false;
  if (a.children.size() != b.children.size()) return false;
  for (std::size_t i = 0; i < a.children.size(); ++i)
    if (!same_tree(a.children[i], b.children[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

/// Pre-order node sequence with parent<->child edges; each leaf value
/// subtoken becomes its own node linked to the leaf's type node. Traversal
/// stops once 200 nodes are retained.
inline GraphRep graph_extract(const AstNode& ast) {
  GraphRep g;
  struct Frame {
    const AstNode* node;
    int parent;
  };
  // explicit stack to keep pre-order with a hard node cap
  std::vector<Frame> stack{{&ast, -1}};
  while (!stack.empty()) {
    Frame f = stack.back();
    stack.pop_back();
    if (static_cast<int>(g.node_labels.size()) >= kGraphCap) break;
    const int idx = static_cast<int>(g.node_labels.size());
    g.node_labels.push_back(f.node->type_label);
    if (f.parent >= 0) g.edges.emplace_back(f.parent, idx);
    if (f.node->is_leaf()) {
      for (const std::string& v : detail::value_tokens(*f.node)) {
        if (static_cast<int>(g.node_labels.size()) >= kGraphCap) break;
        const int vidx = static_cast<int>(g.node_labels.size());
        g.node_labels.push_back(v);
        g.edges.emplace_back(idx, vidx);
      }
    } else {
      for (auto it = f.node->children.rbegin(); it != f.node->children.rend();
           ++it)
        stack.push_back({&*it, idx});
    }
  }
  return g;
}

/// Dense Ã = A + I over the retained nodes.
inline Tensor graph_adjacency(const GraphRep& g) {
  const int64_t n = static_cast<int64_t>(g.node_labels.size());
  Tensor a({n, n});
  for (int64_t i = 0; i < n; ++i) a.at({i, i}) = 1.0;
  for (auto [i, j] : g.edges) {
    a.at({i, j}) = 1.0;
    a.at({j, i}) = 1.0;
  }
  return a;
}

// ---------------------------------------------------------------------------
// Code token rendering (for the code-only and i-MMTrans ablations)
// ---------------------------------------------------------------------------

namespace detail {

inline void render(const AstNode& n, std::vector<std::string>& out);

inline void render_children(const AstNode& n, std::vector<std::string>& out,
                            std::size_t from = 0) {
  for (std::size_t i = from; i < n.children.size(); ++i)
    render(n.children[i], out);
}

inline void render_comma_list(const AstNode& n, std::vector<std::string>& out) {
  for (std::size_t i = 0; i < n.children.size(); ++i) {
    if (i) out.push_back(",");
    render(n.children[i], out);
  }
}

inline void render(const AstNode& n, std::vector<std::string>& out) {
  const std::string& l = n.type_label;
  auto kw = [&](const char* w) { out.push_back(w); };
  if (n.is_leaf() && !n.value.empty()) {
    for (const std::string& v : value_tokens(n)) out.push_back(v);
    return;
  }
  if (l == "FunctionDefinition" || l == "ModifierDefinition") {
    kw(l == "FunctionDefinition" ? "function" : "modifier");
    for (const AstNode& c : n.children) {
      if (c.type_label == "ParameterList") {
        kw("(");
        render_comma_list(c, out);
        kw(")");
      } else if (c.type_label == "ReturnParameters") {
        kw("returns");
        kw("(");
        render_comma_list(c, out);
        kw(")");
      } else {
        render(c, out);
      }
    }
    return;
  }
  if (l == "ParameterList" || l == "ReturnParameters" ||
      l == "TupleExpression") {
    kw("(");
    render_comma_list(n, out);
    kw(")");
    return;
  }
  if (l == "Mapping") {
    kw("mapping");
    kw("(");
    render(n.children[0], out);
    kw("=>");
    render(n.children[1], out);
    kw(")");
    return;
  }
  if (l == "ArrayTypeName") {
    render(n.children[0], out);
    kw("[");
    render_children(n, out, 1);
    kw("]");
    return;
  }
  if (l == "Block") {
    kw("{");
    render_children(n, out);
    kw("}");
    return;
  }
  if (l == "IfStatement") {
    kw("if");
    kw("(");
    render(n.children[0], out);
    kw(")");
    render(n.children[1], out);
    if (n.children.size() > 2) {
      kw("else");
      render(n.children[2], out);
    }
    return;
  }
  if (l == "WhileStatement") {
    kw("while");
    kw("(");
    render(n.children[0], out);
    kw(")");
    render(n.children[1], out);
    return;
  }
  if (l == "DoWhileStatement") {
    kw("do");
    render(n.children[0], out);
    kw("while");
    kw("(");
    render(n.children[1], out);
    kw(")");
    kw(";");
    return;
  }
  if (l == "ForStatement") {
    // children: [init?, cond?, update?, body] — render tolerantly
    kw("for");
    kw("(");
    render_children(n, out);
    kw(")");
    return;
  }
  if (l == "ReturnStatement") {
    kw("return");
    render_children(n, out);
    kw(";");
    return;
  }
  if (l == "EmitStatement") {
    kw("emit");
    render_children(n, out);
    kw(";");
    return;
  }
  if (l == "BreakStatement" || l == "ContinueStatement" ||
      l == "ThrowStatement") {
    kw(l == "BreakStatement" ? "break"
       : l == "ContinueStatement" ? "continue"
                                  : "throw");
    kw(";");
    return;
  }
  if (l == "PlaceholderStatement") {
    kw("_");
    kw(";");
    return;
  }
  if (l == "ExpressionStatement" || l == "VariableDeclarationStatement" ||
      l == "StateVariableDeclaration") {
    render_children(n, out);
    kw(";");
    return;
  }
  if (l == "FunctionCall") {
    render(n.children[0], out);
    kw("(");
    for (std::size_t i = 1; i < n.children.size(); ++i) {
      if (i > 1) out.push_back(",");
      render(n.children[i], out);
    }
    kw(")");
    return;
  }
  if (l == "MemberAccess") {
    render(n.children[0], out);
    kw(".");
    render(n.children[1], out);
    return;
  }
  if (l == "IndexAccess") {
    render(n.children[0], out);
    kw("[");
    render_children(n, out, 1);
    kw("]");
    return;
  }
  if (l == "NewExpression") {
    kw("new");
    render_children(n, out);
    return;
  }
  // BinaryOperation, UnaryOperation, Conditional, ModifierInvocation,
  // Parameter, NumberLiteralWithUnit, and anything unlisted: children in
  // order (operators are leaves carrying their own text).
  if (l == "Conditional") {
    render(n.children[0], out);
    kw("?");
    render(n.children[1], out);
    kw(":");
    render(n.children[2], out);
    return;
  }
  render_children(n, out);
}

}  // namespace detail

/// Flat code-like token sequence for the single-modality ablations:
/// leaf value subtokens plus structural punctuation, in source order,
/// wrapped in <START>/<END> and truncated to 600 tokens.
inline std::vector<std::string> code_tokens(const AstNode& ast) {
  std::vector<std::string> out;
  out.push_back(kStartTok);
  detail::render(ast, out);
  out.push_back(kEndTok);
  if (out.size() > kSbtCap) out.resize(kSbtCap);
  return out;
}

}  // namespace mmtrans

#endif  // MMTRANS_MODALITIES_HPP_
