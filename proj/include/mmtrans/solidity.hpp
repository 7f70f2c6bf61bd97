#ifndef MMTRANS_SOLIDITY_HPP_
#define MMTRANS_SOLIDITY_HPP_

#include <cctype>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "mmtrans/errors.hpp"

namespace mmtrans {

// ---------------------------------------------------------------------------
// Tokens
// ---------------------------------------------------------------------------

enum class TokKind {
  Keyword,
  Identifier,
  Number,
  String,
  Address,
  Punct,
  DocComment,
  LineComment,
  BlockComment,
};

struct Token {
  TokKind kind;
  std::string lexeme;
  int64_t begin = 0;
  int64_t end = 0;
};

inline bool is_comment(TokKind k) {
  return k == TokKind::DocComment || k == TokKind::LineComment ||
         k == TokKind::BlockComment;
}

namespace detail {

inline bool ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}
inline bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}
inline bool hex_digit(char c) {
  return std::isxdigit(static_cast<unsigned char>(c));
}

inline const std::unordered_set<std::string>& keyword_set() {
  static const std::unordered_set<std::string> kws{
      "pragma",   "solidity", "import",   "contract", "interface",
      "library",  "is",       "function", "modifier", "constructor",
      "fallback", "receive",  "event",    "struct",   "enum",
      "mapping",  "using",    "for",      "returns",  "return",
      "if",       "else",     "while",    "do",       "break",
      "continue", "throw",    "emit",     "new",      "delete",
      "public",   "private",  "internal", "external", "pure",
      "view",     "payable",  "constant", "anonymous", "indexed",
      "memory",   "storage",  "calldata", "virtual",  "override",
      "immutable", "abstract", "address",  "bool",     "string",
      "bytes",    "byte",     "var",      "true",     "false",
      "wei",      "gwei",     "ether",    "seconds",  "minutes",
      "hours",    "days",     "weeks",    "assembly", "unchecked",
      "try",      "catch",    "revert",   "type",
  };
  return kws;
}

/// Sized elementary types: uint8..uint256, int…, bytes1..bytes32, fixed/ufixed.
inline bool sized_type(const std::string& s) {
  auto digits_after = [&](std::size_t off) {
    if (off >= s.size()) return false;
    for (std::size_t i = off; i < s.size(); ++i)
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
  };
  if (s.rfind("uint", 0) == 0) return s.size() == 4 || digits_after(4);
  if (s.rfind("int", 0) == 0) return s.size() == 3 || digits_after(3);
  if (s.rfind("bytes", 0) == 0 && s.size() > 5) return digits_after(5);
  if (s.rfind("ufixed", 0) == 0 || s.rfind("fixed", 0) == 0) return true;
  return false;
}

}  // namespace detail

inline bool is_keyword_word(const std::string& s) {
  return detail::keyword_set().count(s) > 0 || detail::sized_type(s);
}

/// Lex Solidity source. Comments are kept as tokens; whitespace is skipped
/// but recoverable from the gaps between spans, so that lexemes plus gaps
/// reconstruct the input byte-for-byte.
inline std::vector<Token> tokenize(const std::string& src) {
  std::vector<Token> out;
  const int64_t n = static_cast<int64_t>(src.size());
  int64_t i = 0;
  auto push = [&](TokKind k, int64_t b, int64_t e) {
    out.push_back(Token{k, src.substr(static_cast<std::size_t>(b),
                                      static_cast<std::size_t>(e - b)),
                        b, e});
  };
  while (i < n) {
    const char c = src[static_cast<std::size_t>(i)];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const int64_t b = i;
    if (c == '/' && i + 1 < n) {
      const char d = src[static_cast<std::size_t>(i + 1)];
      if (d == '/') {
        while (i < n && src[static_cast<std::size_t>(i)] != '\n') ++i;
        const std::string lex = src.substr(static_cast<std::size_t>(b),
                                           static_cast<std::size_t>(i - b));
        push(lex.rfind("///", 0) == 0 ? TokKind::DocComment
                                      : TokKind::LineComment,
             b, i);
        continue;
      }
      if (d == '*') {
        int64_t j = i + 2;
        while (j + 1 < n && !(src[static_cast<std::size_t>(j)] == '*' &&
                              src[static_cast<std::size_t>(j + 1)] == '/'))
          ++j;
        if (j + 1 >= n)
          throw LexError("unterminated block comment", b);
        i = j + 2;
        const std::string lex = src.substr(static_cast<std::size_t>(b),
                                           static_cast<std::size_t>(i - b));
        const bool doc = lex.rfind("/**", 0) == 0 && lex.size() > 4;
        push(doc ? TokKind::DocComment : TokKind::BlockComment, b, i);
        continue;
      }
    }
    if (c == '"' || c == '\'') {
      ++i;
      while (i < n) {
        const char s = src[static_cast<std::size_t>(i)];
        if (s == '\\' && i + 1 < n) {
          i += 2;
          continue;
        }
        if (s == c) break;
        if (s == '\n') throw LexError("unterminated string", b);
        ++i;
      }
      if (i >= n) throw LexError("unterminated string", b);
      ++i;
      push(TokKind::String, b, i);
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      if (c == '0' && i + 1 < n &&
          (src[static_cast<std::size_t>(i + 1)] == 'x' ||
           src[static_cast<std::size_t>(i + 1)] == 'X')) {
        int64_t j = i + 2, hex = 0;
        while (j < n && (detail::hex_digit(src[static_cast<std::size_t>(j)]) ||
                         src[static_cast<std::size_t>(j)] == '_')) {
          if (src[static_cast<std::size_t>(j)] != '_') ++hex;
          ++j;
        }
        const bool addr = hex == 40 && (j - (i + 2)) == 40 &&
                          (j >= n || !detail::ident_char(
                                         src[static_cast<std::size_t>(j)]));
        i = j;
        push(addr ? TokKind::Address : TokKind::Number, b, i);
        continue;
      }
      while (i < n && (std::isdigit(static_cast<unsigned char>(
                           src[static_cast<std::size_t>(i)])) ||
                       src[static_cast<std::size_t>(i)] == '_'))
        ++i;
      if (i < n && src[static_cast<std::size_t>(i)] == '.' && i + 1 < n &&
          std::isdigit(
              static_cast<unsigned char>(src[static_cast<std::size_t>(i + 1)]))) {
        ++i;
        while (i < n && std::isdigit(static_cast<unsigned char>(
                            src[static_cast<std::size_t>(i)])))
          ++i;
      }
      if (i < n && (src[static_cast<std::size_t>(i)] == 'e' ||
                    src[static_cast<std::size_t>(i)] == 'E')) {
        int64_t j = i + 1;
        if (j < n && (src[static_cast<std::size_t>(j)] == '+' ||
                      src[static_cast<std::size_t>(j)] == '-'))
          ++j;
        if (j < n && std::isdigit(static_cast<unsigned char>(
                         src[static_cast<std::size_t>(j)]))) {
          i = j;
          while (i < n && std::isdigit(static_cast<unsigned char>(
                              src[static_cast<std::size_t>(i)])))
            ++i;
        }
      }
      push(TokKind::Number, b, i);
      continue;
    }
    if (detail::ident_start(c)) {
      while (i < n && detail::ident_char(src[static_cast<std::size_t>(i)])) ++i;
      const std::string word = src.substr(static_cast<std::size_t>(b),
                                          static_cast<std::size_t>(i - b));
      push(is_keyword_word(word) ? TokKind::Keyword : TokKind::Identifier, b,
           i);
      continue;
    }
    static const char* two[] = {"**", "++", "--", "&&", "||", "==", "!=",
                                "<=", ">=", "+=", "-=", "*=", "/=", "%=",
                                "|=", "&=", "^=", "=>", "->", "<<", ">>"};
    static const char* three[] = {">>=", "<<=", "**="};
    bool matched = false;
    for (const char* t : three) {
      if (i + 3 <= n && src.compare(static_cast<std::size_t>(i), 3, t) == 0) {
        i += 3;
        matched = true;
        break;
      }
    }
    if (!matched) {
      for (const char* t : two) {
        if (i + 2 <= n && src.compare(static_cast<std::size_t>(i), 2, t) == 0) {
          i += 2;
          matched = true;
          break;
        }
      }
    }
    if (!matched) ++i;
    push(TokKind::Punct, b, i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

/// Typed/valued ordered tree node. An empty value means "absent"; a value is
/// only ever present on leaves. `begin`/`end` carry the source byte span for
/// definition nodes (0,0 elsewhere) so methods can be tied back to the text.
struct AstNode {
  int id = 0;
  std::string type_label;
  std::string value;
  std::vector<AstNode> children;
  int64_t begin = 0;
  int64_t end = 0;

  bool is_leaf() const { return children.empty(); }
};

enum class MethodKind { Function, Modifier, Constructor, Fallback, Receive };

inline const char* method_kind_name(MethodKind k) {
  switch (k) {
    case MethodKind::Function: return "function";
    case MethodKind::Modifier: return "modifier";
    case MethodKind::Constructor: return "constructor";
    case MethodKind::Fallback: return "fallback";
    case MethodKind::Receive: return "receive";
  }
  return "function";
}

struct MethodRecord {
  MethodKind kind = MethodKind::Function;
  std::string name;
  std::string contract;
  AstNode ast;
  std::string doc;  // empty = absent
  int64_t begin = 0;
  int64_t end = 0;
};

/// Checks the AstNode invariants: unique ids and value-implies-leaf.
/// Throws ParseError naming the offending node on violation.
inline void validate_tree(const AstNode& root) {
  std::unordered_set<int> seen;
  std::vector<const AstNode*> stack{&root};
  while (!stack.empty()) {
    const AstNode* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n->id).second)
      throw ParseError("duplicate node id " + std::to_string(n->id), n->begin,
                       n->end);
    if (!n->value.empty() && !n->children.empty())
      throw ParseError("valued node " + n->type_label + " has children",
                       n->begin, n->end);
    for (const AstNode& c : n->children) stack.push_back(&c);
  }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace detail {

/// Recursive-descent parser over the documented Solidity subset. Statement
/// and expression errors degrade to `Statement` leaves carrying raw token
/// text; contract-level malformation throws ParseError.
class Parser {
 public:
  explicit Parser(const std::vector<Token>& all) {
    for (const Token& t : all)
      if (!is_comment(t.kind)) toks_.push_back(t);
  }

  AstNode parse_unit() {
    if (toks_.empty()) throw ParseError("empty token list", 0, 0);
    AstNode unit = mk("SourceUnit");
    while (!at_end()) {
      if (is_kw("pragma")) {
        unit.children.push_back(raw_to_semi("PragmaDirective"));
      } else if (is_kw("import")) {
        unit.children.push_back(raw_to_semi("ImportDirective"));
      } else if (is_kw("abstract") || is_kw("contract") || is_kw("interface") ||
                 is_kw("library")) {
        if (is_kw("abstract")) advance();
        unit.children.push_back(contract_definition());
      } else if (is_kw("function") || is_kw("constructor") ||
                 is_kw("fallback") || is_kw("receive")) {
        unit.children.push_back(function_definition());
      } else if (is_kw("modifier")) {
        unit.children.push_back(modifier_definition());
      } else {
        throw ParseError("unexpected top-level token '" + peek().lexeme + "'",
                         peek().begin, peek().end);
      }
    }
    return unit;
  }

 private:
  // -- token plumbing -------------------------------------------------------
  bool at_end() const { return p_ >= toks_.size(); }
  const Token& peek(std::size_t k = 0) const {
    static const Token eof{TokKind::Punct, "", 0, 0};
    return p_ + k < toks_.size() ? toks_[p_ + k] : eof;
  }
  const Token& advance() { return toks_[p_++]; }
  bool is_kw(const char* w, std::size_t k = 0) const {
    return peek(k).kind == TokKind::Keyword && peek(k).lexeme == w;
  }
  bool is_punct(const char* w, std::size_t k = 0) const {
    return peek(k).kind == TokKind::Punct && peek(k).lexeme == w;
  }
  bool eat_punct(const char* w) {
    if (!is_punct(w)) return false;
    advance();
    return true;
  }
  void expect_punct(const char* w, const char* where) {
    if (!eat_punct(w))
      throw ParseError(std::string("expected '") + w + "' in " + where +
                           ", got '" + peek().lexeme + "'",
                       peek().begin, peek().end);
  }

  AstNode mk(const std::string& label, std::string value = "") {
    AstNode n;
    n.id = next_id_++;
    n.type_label = label;
    n.value = std::move(value);
    return n;
  }

  /// Statement-level recovery: consume to the terminating ';' (balancing
  /// nesting) or stop before an unmatched '}', and keep the raw text.
  AstNode raw_statement() {
    std::string text;
    int depth = 0;
    bool entered_brace = false;
    const int64_t b = peek().begin;
    int64_t e = b;
    while (!at_end()) {
      const Token& t = peek();
      if (depth == 0 && t.kind == TokKind::Punct && t.lexeme == "}") break;
      advance();
      if (!text.empty()) text += ' ';
      text += t.lexeme;
      e = t.end;
      if (t.kind == TokKind::Punct) {
        if (t.lexeme == "{") entered_brace = true;
        if (t.lexeme == "{" || t.lexeme == "(" || t.lexeme == "[") ++depth;
        if (t.lexeme == "}" || t.lexeme == ")" || t.lexeme == "]") --depth;
        if (t.lexeme == ";" && depth <= 0) break;
        // a brace-terminated construct (assembly, unchecked, …) ends at its
        // own closing brace; no ';' follows
        if (t.lexeme == "}" && depth == 0 && entered_brace) break;
      }
    }
    AstNode n = mk("Statement", text);
    n.begin = b;
    n.end = e;
    return n;
  }

  AstNode raw_to_semi(const std::string& label) {
    const int64_t b = peek().begin;
    advance();  // the introducing keyword
    std::string text;
    int64_t e = b;
    while (!at_end() && !is_punct(";")) {
      const Token& t = advance();
      if (!text.empty()) text += ' ';
      text += t.lexeme;
      e = t.end;
    }
    if (!at_end()) e = advance().end;  // ';'
    AstNode n = mk(label, text);
    n.begin = b;
    n.end = e;
    return n;
  }

  // -- declarations ---------------------------------------------------------
  AstNode contract_definition() {
    const int64_t b = peek().begin;
    advance();  // contract | interface | library
    if (peek().kind != TokKind::Identifier)
      throw ParseError("expected contract name, got '" + peek().lexeme + "'",
                       peek().begin, peek().end);
    AstNode node = mk("ContractDefinition");
    node.begin = b;
    node.children.push_back(mk("SimpleName", advance().lexeme));
    if (is_kw("is")) {
      advance();
      while (!at_end() && !is_punct("{")) {
        if (peek().kind == TokKind::Identifier)
          node.children.push_back(mk("InheritanceSpecifier", peek().lexeme));
        advance();
      }
    }
    expect_punct("{", "contract definition");
    while (!at_end() && !is_punct("}")) node.children.push_back(member());
    if (at_end())
      throw ParseError("unterminated contract body", b, peek().end);
    node.end = advance().end;  // '}'
    return node;
  }

  AstNode member() {
    if (is_kw("function") || is_kw("constructor") || is_kw("fallback") ||
        is_kw("receive"))
      return function_definition();
    if (is_kw("modifier")) return modifier_definition();
    const std::size_t mark = p_;
    try {
      if (is_kw("event")) return event_definition();
      if (is_kw("struct")) return struct_definition();
      if (is_kw("enum")) return enum_definition();
      if (is_kw("using")) return raw_to_semi("UsingForDirective");
      if (type_ahead()) return state_variable();
    } catch (const Recover&) {
      p_ = mark;
    } catch (const ParseError&) {
      p_ = mark;
    }
    return raw_statement();
  }

  bool elementary_ahead(std::size_t k = 0) const {
    const Token& t = peek(k);
    if (t.kind != TokKind::Keyword) return false;
    return t.lexeme == "address" || t.lexeme == "bool" || t.lexeme == "string" ||
           t.lexeme == "bytes" || t.lexeme == "byte" || t.lexeme == "var" ||
           sized_type(t.lexeme);
  }

  bool type_ahead() const {
    if (elementary_ahead() || is_kw("mapping")) return true;
    if (peek().kind == TokKind::Identifier) {
      // user type followed by a declarator or data location
      const Token& nx = peek(1);
      if (nx.kind == TokKind::Identifier) return true;
      if (nx.kind == TokKind::Keyword &&
          (nx.lexeme == "memory" || nx.lexeme == "storage" ||
           nx.lexeme == "calldata" || nx.lexeme == "public" ||
           nx.lexeme == "private" || nx.lexeme == "internal" ||
           nx.lexeme == "constant"))
        return true;
      if (nx.kind == TokKind::Punct && nx.lexeme == "[") return true;
    }
    return false;
  }

  AstNode type_name() {
    if (is_kw("mapping")) {
      AstNode m = mk("Mapping");
      advance();
      expect_punct("(", "mapping type");
      m.children.push_back(type_name());
      expect_punct("=>", "mapping type");
      m.children.push_back(type_name());
      expect_punct(")", "mapping type");
      return array_suffix(std::move(m));
    }
    if (elementary_ahead()) {
      AstNode t = mk("ElementaryTypeName", advance().lexeme);
      if (is_kw("payable")) advance();  // `address payable`
      return array_suffix(std::move(t));
    }
    if (peek().kind == TokKind::Identifier) {
      std::string name = advance().lexeme;
      while (is_punct(".") && peek(1).kind == TokKind::Identifier) {
        advance();
        name += "." + advance().lexeme;
      }
      return array_suffix(mk("UserDefinedTypeName", name));
    }
    throw ParseError("expected type, got '" + peek().lexeme + "'",
                     peek().begin, peek().end);
  }

  AstNode array_suffix(AstNode base) {
    while (is_punct("[")) {
      advance();
      AstNode arr = mk("ArrayTypeName");
      arr.children.push_back(std::move(base));
      if (!is_punct("]")) {
        try {
          arr.children.push_back(expression());
        } catch (const Recover&) {
          throw ParseError("malformed array length", peek().begin, peek().end);
        }
      }
      expect_punct("]", "array type");
      base = std::move(arr);
    }
    return base;
  }

  AstNode parameter() {
    AstNode p = mk("Parameter");
    p.children.push_back(type_name());
    if (is_kw("indexed")) advance();
    if (is_kw("memory") || is_kw("storage") || is_kw("calldata"))
      p.children.push_back(mk("StorageLocation", advance().lexeme));
    if (peek().kind == TokKind::Identifier)
      p.children.push_back(mk("SimpleName", advance().lexeme));
    return p;
  }

  AstNode parameter_list(const std::string& label) {
    AstNode list = mk(label);
    expect_punct("(", "parameter list");
    while (!at_end() && !is_punct(")")) {
      list.children.push_back(parameter());
      if (!eat_punct(",")) break;
    }
    expect_punct(")", "parameter list");
    return list;
  }

  AstNode function_definition() {
    const int64_t b = peek().begin;
    const std::string intro = advance().lexeme;
    AstNode fn = mk("FunctionDefinition");
    fn.begin = b;
    std::string name;
    if (intro == "function") {
      if (peek().kind == TokKind::Identifier || peek().kind == TokKind::Keyword) {
        if (!is_punct("(")) name = advance().lexeme;
      }
    } else {
      name = intro;  // constructor | fallback | receive
    }
    if (!name.empty()) fn.children.push_back(mk("SimpleName", name));
    if (is_punct("(")) {
      AstNode params = parameter_list("ParameterList");
      if (!params.children.empty()) fn.children.push_back(std::move(params));
    }
    header_items(fn);
    if (is_punct("{")) {
      fn.children.push_back(block());
    } else {
      expect_punct(";", "function definition");
    }
    fn.end = p_ > 0 ? toks_[p_ - 1].end : b;
    return fn;
  }

  void header_items(AstNode& fn) {
    while (!at_end() && !is_punct("{") && !is_punct(";")) {
      if (is_kw("public") || is_kw("private") || is_kw("internal") ||
          is_kw("external")) {
        fn.children.push_back(mk("Visibility", advance().lexeme));
      } else if (is_kw("pure") || is_kw("view") || is_kw("payable") ||
                 is_kw("constant")) {
        fn.children.push_back(mk("StateMutability", advance().lexeme));
      } else if (is_kw("virtual")) {
        advance();
      } else if (is_kw("override")) {
        advance();
        if (is_punct("(")) skip_balanced("(", ")");
      } else if (is_kw("returns")) {
        advance();
        fn.children.push_back(parameter_list("ReturnParameters"));
      } else if (peek().kind == TokKind::Identifier) {
        AstNode inv = mk("ModifierInvocation");
        inv.children.push_back(mk("SimpleName", advance().lexeme));
        if (is_punct("(")) {
          advance();
          try {
            while (!at_end() && !is_punct(")")) {
              inv.children.push_back(expression());
              if (!eat_punct(",")) break;
            }
          } catch (const Recover&) {
            throw ParseError("malformed modifier arguments", peek().begin,
                             peek().end);
          }
          expect_punct(")", "modifier arguments");
        }
        fn.children.push_back(std::move(inv));
      } else {
        throw ParseError("unexpected token '" + peek().lexeme +
                             "' in function header",
                         peek().begin, peek().end);
      }
    }
    if (at_end())
      throw ParseError("unterminated function header", 0,
                       toks_.empty() ? 0 : toks_.back().end);
  }

  void skip_balanced(const char* open, const char* close) {
    expect_punct(open, "specifier");
    int depth = 1;
    while (!at_end() && depth > 0) {
      if (is_punct(open)) ++depth;
      if (is_punct(close)) --depth;
      advance();
    }
  }

  AstNode modifier_definition() {
    const int64_t b = peek().begin;
    advance();  // modifier
    AstNode md = mk("ModifierDefinition");
    md.begin = b;
    if (peek().kind != TokKind::Identifier)
      throw ParseError("expected modifier name, got '" + peek().lexeme + "'",
                       peek().begin, peek().end);
    md.children.push_back(mk("SimpleName", advance().lexeme));
    if (is_punct("(")) {
      AstNode params = parameter_list("ParameterList");
      if (!params.children.empty()) md.children.push_back(std::move(params));
    }
    while (is_kw("virtual") || is_kw("override")) advance();
    if (is_punct("{")) {
      md.children.push_back(block());
    } else {
      expect_punct(";", "modifier definition");
    }
    md.end = p_ > 0 ? toks_[p_ - 1].end : b;
    return md;
  }

  AstNode event_definition() {
    advance();  // event
    AstNode ev = mk("EventDefinition");
    if (peek().kind == TokKind::Identifier)
      ev.children.push_back(mk("SimpleName", advance().lexeme));
    if (is_punct("(")) {
      AstNode params = parameter_list("ParameterList");
      if (!params.children.empty()) ev.children.push_back(std::move(params));
    }
    if (is_kw("anonymous")) advance();
    eat_punct(";");
    return ev;
  }

  AstNode struct_definition() {
    advance();  // struct
    AstNode st = mk("StructDefinition");
    if (peek().kind == TokKind::Identifier)
      st.children.push_back(mk("SimpleName", advance().lexeme));
    expect_punct("{", "struct definition");
    while (!at_end() && !is_punct("}")) {
      AstNode field = mk("Parameter");
      field.children.push_back(type_name());
      if (peek().kind == TokKind::Identifier)
        field.children.push_back(mk("SimpleName", advance().lexeme));
      st.children.push_back(std::move(field));
      eat_punct(";");
    }
    expect_punct("}", "struct definition");
    return st;
  }

  AstNode enum_definition() {
    advance();  // enum
    AstNode en = mk("EnumDefinition");
    if (peek().kind == TokKind::Identifier)
      en.children.push_back(mk("SimpleName", advance().lexeme));
    expect_punct("{", "enum definition");
    while (!at_end() && !is_punct("}")) {
      if (peek().kind == TokKind::Identifier)
        en.children.push_back(mk("SimpleName", advance().lexeme));
      else
        advance();
      eat_punct(",");
    }
    expect_punct("}", "enum definition");
    return en;
  }

  AstNode state_variable() {
    AstNode sv = mk("StateVariableDeclaration");
    sv.children.push_back(type_name());
    while (is_kw("public") || is_kw("private") || is_kw("internal"))
      sv.children.push_back(mk("Visibility", advance().lexeme));
    while (is_kw("constant") || is_kw("immutable") || is_kw("override"))
      advance();
    if (peek().kind == TokKind::Identifier)
      sv.children.push_back(mk("SimpleName", advance().lexeme));
    if (eat_punct("=")) sv.children.push_back(expression());
    eat_punct(";");
    return sv;
  }

  // -- statements -----------------------------------------------------------
  AstNode block() {
    AstNode b = mk("Block");
    expect_punct("{", "block");
    while (!at_end() && !is_punct("}")) b.children.push_back(statement());
    expect_punct("}", "block");
    return b;
  }

  struct Recover {};  // thrown by expression-level failures inside bodies

  AstNode statement() {
    const std::size_t mark = p_;
    try {
      return statement_inner();
    } catch (const Recover&) {
      p_ = mark;
      return raw_statement();
    } catch (const ParseError&) {
      p_ = mark;
      return raw_statement();
    }
  }

  AstNode statement_inner() {
    if (is_punct("{")) return block();
    if (is_kw("if")) {
      advance();
      AstNode s = mk("IfStatement");
      expect_punct("(", "if statement");
      s.children.push_back(expression());
      expect_punct(")", "if statement");
      s.children.push_back(statement());
      if (is_kw("else")) {
        advance();
        s.children.push_back(statement());
      }
      return s;
    }
    if (is_kw("while")) {
      advance();
      AstNode s = mk("WhileStatement");
      expect_punct("(", "while statement");
      s.children.push_back(expression());
      expect_punct(")", "while statement");
      s.children.push_back(statement());
      return s;
    }
    if (is_kw("do")) {
      advance();
      AstNode s = mk("DoWhileStatement");
      s.children.push_back(statement());
      if (!is_kw("while")) throw Recover{};
      advance();
      expect_punct("(", "do-while statement");
      s.children.push_back(expression());
      expect_punct(")", "do-while statement");
      eat_punct(";");
      return s;
    }
    if (is_kw("for")) {
      advance();
      AstNode s = mk("ForStatement");
      expect_punct("(", "for statement");
      if (!is_punct(";"))
        s.children.push_back(simple_statement());
      else
        advance();
      if (!is_punct(";")) s.children.push_back(expression());
      expect_punct(";", "for statement");
      if (!is_punct(")")) s.children.push_back(expression());
      expect_punct(")", "for statement");
      s.children.push_back(statement());
      return s;
    }
    if (is_kw("return")) {
      advance();
      AstNode s = mk("ReturnStatement");
      if (!is_punct(";")) s.children.push_back(expression());
      expect_punct(";", "return statement");
      return s;
    }
    if (is_kw("emit")) {
      advance();
      AstNode s = mk("EmitStatement");
      s.children.push_back(expression());
      expect_punct(";", "emit statement");
      return s;
    }
    if (is_kw("break") || is_kw("continue") || is_kw("throw")) {
      AstNode s = mk(peek().lexeme == "break"      ? "BreakStatement"
                     : peek().lexeme == "continue" ? "ContinueStatement"
                                                   : "ThrowStatement");
      advance();
      expect_punct(";", "jump statement");
      return s;
    }
    if (peek().kind == TokKind::Identifier && peek().lexeme == "_" &&
        is_punct(";", 1)) {
      advance();
      advance();
      return mk("PlaceholderStatement", "_");
    }
    if (is_kw("assembly") || is_kw("unchecked")) throw Recover{};
    AstNode s = simple_statement();
    return s;
  }

  /// Variable declaration or expression statement, consuming the ';'.
  AstNode simple_statement() {
    if (type_ahead()) {
      AstNode s = mk("VariableDeclarationStatement");
      s.children.push_back(type_name());
      if (is_kw("memory") || is_kw("storage") || is_kw("calldata"))
        s.children.push_back(mk("StorageLocation", advance().lexeme));
      if (peek().kind != TokKind::Identifier) throw Recover{};
      s.children.push_back(mk("SimpleName", advance().lexeme));
      if (eat_punct("=")) s.children.push_back(expression());
      expect_punct(";", "variable declaration");
      return s;
    }
    AstNode s = mk("ExpressionStatement");
    s.children.push_back(expression());
    expect_punct(";", "expression statement");
    return s;
  }

  // -- expressions (precedence climbing) ------------------------------------
  int binary_prec(const std::string& op) const {
    if (op == "**") return 11;
    if (op == "*" || op == "/" || op == "%") return 10;
    if (op == "+" || op == "-") return 9;
    if (op == "<<" || op == ">>") return 8;
    if (op == "&") return 7;
    if (op == "^") return 6;
    if (op == "|") return 5;
    if (op == "<" || op == ">" || op == "<=" || op == ">=") return 4;
    if (op == "==" || op == "!=") return 3;
    if (op == "&&") return 2;
    if (op == "||") return 1;
    return 0;
  }

  bool assign_op(const std::string& op) const {
    return op == "=" || op == "+=" || op == "-=" || op == "*=" ||
           op == "/=" || op == "%=" || op == "|=" || op == "&=" ||
           op == "^=" || op == "<<=" || op == ">>=" || op == "**=";
  }

  AstNode expression() { return assignment(); }

  AstNode assignment() {
    AstNode lhs = conditional();
    if (peek().kind == TokKind::Punct && assign_op(peek().lexeme)) {
      const std::string op = advance().lexeme;
      AstNode node = mk("BinaryOperation");
      node.children.push_back(std::move(lhs));
      node.children.push_back(mk("Operator", op));
      node.children.push_back(assignment());
      return node;
    }
    return lhs;
  }

  AstNode conditional() {
    AstNode cond = binary(1);
    if (is_punct("?")) {
      advance();
      AstNode node = mk("Conditional");
      node.children.push_back(std::move(cond));
      node.children.push_back(expression());
      expect_punct(":", "conditional expression");
      node.children.push_back(expression());
      return node;
    }
    return cond;
  }

  AstNode binary(int min_prec) {
    AstNode lhs = unary();
    while (peek().kind == TokKind::Punct) {
      const int prec = binary_prec(peek().lexeme);
      if (prec < min_prec || prec == 0) break;
      const std::string op = advance().lexeme;
      AstNode rhs = binary(op == "**" ? prec : prec + 1);
      AstNode node = mk("BinaryOperation");
      node.children.push_back(std::move(lhs));
      node.children.push_back(mk("Operator", op));
      node.children.push_back(std::move(rhs));
      lhs = std::move(node);
    }
    return lhs;
  }

  AstNode unary() {
    if (peek().kind == TokKind::Punct &&
        (peek().lexeme == "!" || peek().lexeme == "~" || peek().lexeme == "-" ||
         peek().lexeme == "+" || peek().lexeme == "++" ||
         peek().lexeme == "--")) {
      AstNode node = mk("UnaryOperation");
      node.children.push_back(mk("Operator", advance().lexeme));
      node.children.push_back(unary());
      return node;
    }
    if (is_kw("delete") || is_kw("new")) {
      AstNode node = mk(peek().lexeme == "delete" ? "UnaryOperation"
                                                  : "NewExpression");
      if (peek().lexeme == "delete") {
        node.children.push_back(mk("Operator", advance().lexeme));
        node.children.push_back(unary());
      } else {
        advance();
        node.children.push_back(type_name());
      }
      return postfix(std::move(node));
    }
    return postfix(primary());
  }

  AstNode postfix(AstNode base) {
    for (;;) {
      if (is_punct(".")) {
        advance();
        if (peek().kind != TokKind::Identifier && peek().kind != TokKind::Keyword)
          throw Recover{};
        AstNode node = mk("MemberAccess");
        node.children.push_back(std::move(base));
        node.children.push_back(mk("SimpleName", advance().lexeme));
        base = std::move(node);
      } else if (is_punct("(")) {
        advance();
        AstNode node = mk("FunctionCall");
        node.children.push_back(std::move(base));
        while (!at_end() && !is_punct(")")) {
          if (is_punct("{")) throw Recover{};  // named-argument call
          node.children.push_back(expression());
          if (!eat_punct(",")) break;
        }
        expect_punct(")", "call arguments");
        base = std::move(node);
      } else if (is_punct("[")) {
        advance();
        AstNode node = mk("IndexAccess");
        node.children.push_back(std::move(base));
        if (!is_punct("]")) node.children.push_back(expression());
        expect_punct("]", "index access");
        base = std::move(node);
      } else if (is_punct("++") || is_punct("--")) {
        AstNode node = mk("UnaryOperation");
        node.children.push_back(mk("Operator", advance().lexeme));
        node.children.push_back(std::move(base));
        base = std::move(node);
      } else {
        return base;
      }
    }
  }

  AstNode primary() {
    const Token& t = peek();
    switch (t.kind) {
      case TokKind::Number: {
        AstNode n = mk("NumberLiteral", advance().lexeme);
        // number units: `3 days`, `1 ether`, …
        if (is_kw("wei") || is_kw("gwei") || is_kw("ether") ||
            is_kw("seconds") || is_kw("minutes") || is_kw("hours") ||
            is_kw("days") || is_kw("weeks")) {
          AstNode unit = mk("NumberUnit", advance().lexeme);
          AstNode wrap = mk("NumberLiteralWithUnit");
          wrap.children.push_back(std::move(n));
          wrap.children.push_back(std::move(unit));
          return wrap;
        }
        return n;
      }
      case TokKind::String:
        return mk("StringLiteral", advance().lexeme);
      case TokKind::Address:
        return mk("AddressLiteral", advance().lexeme);
      case TokKind::Identifier:
        return mk("SimpleName", advance().lexeme);
      case TokKind::Keyword: {
        if (t.lexeme == "true" || t.lexeme == "false")
          return mk("BooleanLiteral", advance().lexeme);
        if (elementary_ahead() || t.lexeme == "mapping") {
          AstNode ty = type_name();
          return ty;
        }
        if (t.lexeme == "payable" || t.lexeme == "revert" ||
            t.lexeme == "type")
          return mk("SimpleName", advance().lexeme);
        throw Recover{};
      }
      case TokKind::Punct: {
        if (t.lexeme == "(") {
          advance();
          AstNode first = expression();
          if (is_punct(",")) {
            AstNode tup = mk("TupleExpression");
            tup.children.push_back(std::move(first));
            while (eat_punct(",")) {
              if (is_punct(")")) break;
              tup.children.push_back(expression());
            }
            expect_punct(")", "tuple expression");
            return tup;
          }
          expect_punct(")", "parenthesized expression");
          return first;
        }
        if (t.lexeme == "[") {
          advance();
          AstNode arr = mk("TupleExpression");
          while (!at_end() && !is_punct("]")) {
            arr.children.push_back(expression());
            if (!eat_punct(",")) break;
          }
          expect_punct("]", "array literal");
          return arr;
        }
        throw Recover{};
      }
      default:
        throw Recover{};
    }
  }

  std::vector<Token> toks_;
  std::size_t p_ = 0;
  int next_id_ = 0;
};

}  // namespace detail

/// Parse a lexed token stream into a SourceUnit AST. Comment tokens are
/// ignored here (extract_methods re-reads them for doc attachment).
inline AstNode parse(const std::vector<Token>& tokens) {
  detail::Parser parser(tokens);
  AstNode unit = parser.parse_unit();
  validate_tree(unit);
  return unit;
}

namespace detail {

inline bool whitespace_only(const std::string& src, int64_t from, int64_t to) {
  for (int64_t i = from; i < to; ++i)
    if (!std::isspace(static_cast<unsigned char>(src[static_cast<std::size_t>(i)])))
      return false;
  return true;
}

/// Doc block ending immediately (whitespace-only gap) before `begin`:
/// a `/** … */` block, a maximal run of `///` lines, or a run of `//` lines.
inline std::string doc_before(const std::vector<Token>& toks,
                              const std::string& src, int64_t begin) {
  int last = -1;
  for (std::size_t i = 0; i < toks.size(); ++i)
    if (toks[i].end <= begin) last = static_cast<int>(i);
  if (last < 0) return "";
  const Token& t = toks[static_cast<std::size_t>(last)];
  if (!is_comment(t.kind) || !whitespace_only(src, t.end, begin)) return "";
  if (t.kind == TokKind::BlockComment) return "";  // plain /* */ does not attach
  if (t.lexeme.rfind("/*", 0) == 0) return t.lexeme;  // /** … */ block
  // Line-style: walk the run of same-style // or /// lines upward.
  int first = last;
  while (first > 0) {
    const Token& prev = toks[static_cast<std::size_t>(first - 1)];
    const Token& cur = toks[static_cast<std::size_t>(first)];
    if (prev.kind != t.kind || prev.lexeme.rfind("//", 0) != 0) break;
    if (!whitespace_only(src, prev.end, cur.begin)) break;
    --first;
  }
  std::string doc;
  for (int i = first; i <= last; ++i) {
    if (!doc.empty()) doc += '\n';
    doc += toks[static_cast<std::size_t>(i)].lexeme;
  }
  return doc;
}

}  // namespace detail

/// Walk a parsed SourceUnit and return one MethodRecord per function or
/// modifier definition, with attached doc blocks and classified kinds.
inline std::vector<MethodRecord> extract_methods(const AstNode& unit_ast,
                                                 const std::string& source) {
  const std::vector<Token> toks = tokenize(source);
  std::vector<MethodRecord> out;
  auto scan = [&](const AstNode& scope, const std::string& contract) {
    for (const AstNode& m : scope.children) {
      const bool is_fn = m.type_label == "FunctionDefinition";
      const bool is_mod = m.type_label == "ModifierDefinition";
      if (!is_fn && !is_mod) continue;
      MethodRecord rec;
      rec.contract = contract;
      for (const AstNode& c : m.children)
        if (c.type_label == "SimpleName") {
          rec.name = c.value;
          break;
        }
      if (is_mod) {
        rec.kind = MethodKind::Modifier;
      } else if (rec.name == "constructor" ||
                 (!rec.name.empty() && rec.name == contract)) {
        rec.kind = MethodKind::Constructor;
      } else if (rec.name == "fallback" || rec.name.empty()) {
        rec.kind = MethodKind::Fallback;
      } else if (rec.name == "receive") {
        rec.kind = MethodKind::Receive;
      } else {
        rec.kind = MethodKind::Function;
      }
      rec.ast = m;
      rec.begin = m.begin;
      rec.end = m.end;
      rec.doc = detail::doc_before(toks, source, m.begin);
      out.push_back(std::move(rec));
    }
  };
  scan(unit_ast, "");
  for (const AstNode& top : unit_ast.children) {
    if (top.type_label != "ContractDefinition") continue;
    std::string contract;
    for (const AstNode& c : top.children)
      if (c.type_label == "SimpleName") {
        contract = c.value;
        break;
      }
    scan(top, contract);
  }
  return out;
}

}  // namespace mmtrans

#endif  // MMTRANS_SOLIDITY_HPP_
