#include "skillplan/pddl.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "skillplan/common.hpp"

namespace skillplan::pddl {

namespace {

struct Sexpr {
  bool is_list = false;
  std::string token;
  std::vector<Sexpr> items;
  int line = 1;
  int column = 1;
};

class Reader {
 public:
  explicit Reader(std::string_view text) : text_(text) {}

  Sexpr read_document() {
    skip_space();
    if (at_end()) throw ParseError(line_, column_, "empty input");
    Sexpr root = read();
    skip_space();
    if (!at_end()) throw ParseError(line_, column_, "trailing content after top-level form");
    return root;
  }

 private:
  bool at_end() const { return pos_ >= text_.size(); }

  char peek() const { return text_[pos_]; }

  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      column_ = 1;
    } else {
      ++column_;
    }
    ++pos_;
  }

  void skip_space() {
    while (!at_end()) {
      const char c = peek();
      if (c == ';') {
        while (!at_end() && peek() != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }

  Sexpr read() {
    skip_space();
    if (at_end()) throw ParseError(line_, column_, "unexpected end of input");
    Sexpr node;
    node.line = line_;
    node.column = column_;
    if (peek() == ')') throw ParseError(line_, column_, "unexpected ')'");
    if (peek() == '(') {
      node.is_list = true;
      advance();
      while (true) {
        skip_space();
        if (at_end()) {
          std::ostringstream msg;
          msg << "unclosed '(' opened at line " << node.line << ", column " << node.column;
          throw ParseError(line_, column_, msg.str());
        }
        if (peek() == ')') {
          advance();
          break;
        }
        node.items.push_back(read());
      }
      return node;
    }
    while (!at_end()) {
      const char c = peek();
      if (c == '(' || c == ')' || c == ';' || std::isspace(static_cast<unsigned char>(c))) break;
      node.token.push_back(c);
      advance();
    }
    return node;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int column_ = 1;
};

[[noreturn]] void fail(const Sexpr& at, const std::string& what) {
  throw ParseError(at.line, at.column, what);
}

bool is_token(const Sexpr& node, std::string_view token) {
  return !node.is_list && normalize_identifier(node.token) == token;
}

std::string expect_token(const Sexpr& node, const char* what) {
  if (node.is_list || node.token.empty()) fail(node, std::string("expected ") + what);
  return normalize_identifier(node.token);
}

bool is_variable(const std::string& s) { return !s.empty() && s.front() == '?'; }

struct AtomAt {
  Atom atom;
  const Sexpr* source;
};

AtomAt read_atom(const Sexpr& node) {
  if (!node.is_list || node.items.empty()) fail(node, "expected predicate atom");
  AtomAt out;
  out.source = &node;
  out.atom.predicate = expect_token(node.items[0], "predicate name");
  for (std::size_t i = 1; i < node.items.size(); ++i) {
    out.atom.args.push_back(expect_token(node.items[i], "argument"));
  }
  return out;
}

// `(and a b ...)`, a single atom, or `()`.
std::vector<const Sexpr*> conjuncts(const Sexpr& node) {
  if (!node.is_list) fail(node, "expected formula");
  std::vector<const Sexpr*> out;
  if (node.items.empty()) return out;
  if (is_token(node.items[0], "and")) {
    for (std::size_t i = 1; i < node.items.size(); ++i) out.push_back(&node.items[i]);
  } else {
    out.push_back(&node);
  }
  return out;
}

void check_atom(const DomainDef& domain, const AtomAt& a) {
  const PredicateSchema* p = domain.find_predicate(a.atom.predicate);
  if (p == nullptr) fail(*a.source, "undeclared predicate '" + a.atom.predicate + "'");
  if (p->arity() != a.atom.args.size()) {
    std::ostringstream msg;
    msg << "predicate '" << p->name << "' expects " << p->arity() << " arguments, got "
        << a.atom.args.size();
    fail(*a.source, msg.str());
  }
}

void check_bound(const ActionSchema& action, const AtomAt& a) {
  for (const auto& arg : a.atom.args) {
    if (!is_variable(arg)) continue;
    if (std::find(action.params.begin(), action.params.end(), arg) == action.params.end()) {
      fail(*a.source, "unbound variable " + arg + " in action '" + action.name + "'");
    }
  }
}

ActionSchema read_action(const Sexpr& node, const DomainDef& domain) {
  ActionSchema action;
  if (node.items.size() < 2) fail(node, "action without name");
  action.name = expect_token(node.items[1], "action name");
  bool have_params = false;
  for (std::size_t i = 2; i < node.items.size(); i += 2) {
    const Sexpr& key = node.items[i];
    if (i + 1 >= node.items.size()) fail(key, "missing value after keyword");
    const Sexpr& value = node.items[i + 1];
    const std::string k = expect_token(key, "action keyword");
    if (k == ":parameters") {
      if (!value.is_list) fail(value, "expected parameter list");
      for (const auto& p : value.items) {
        std::string name = expect_token(p, "parameter");
        if (!is_variable(name)) fail(p, "parameter must start with '?'");
        if (std::find(action.params.begin(), action.params.end(), name) != action.params.end()) {
          fail(p, "duplicate parameter " + name);
        }
        action.params.push_back(std::move(name));
      }
      have_params = true;
    } else if (k == ":precondition") {
      for (const Sexpr* c : conjuncts(value)) {
        if (c->is_list && !c->items.empty() && is_token(c->items[0], "not")) {
          fail(*c, "negative preconditions are not supported");
        }
        if (c->is_list && !c->items.empty() &&
            (is_token(c->items[0], "or") || is_token(c->items[0], "imply") ||
             is_token(c->items[0], "forall") || is_token(c->items[0], "exists"))) {
          fail(*c, "only conjunctive preconditions are supported");
        }
        AtomAt a = read_atom(*c);
        check_atom(domain, a);
        check_bound(action, a);
        action.precondition.push_back(std::move(a.atom));
      }
    } else if (k == ":effect") {
      int around_count = 0;
      for (const Sexpr* c : conjuncts(value)) {
        bool negative = false;
        const Sexpr* target = c;
        if (c->is_list && !c->items.empty() && is_token(c->items[0], "not")) {
          if (c->items.size() != 2) fail(*c, "malformed (not ...)");
          negative = true;
          target = &c->items[1];
        }
        if (target->is_list && !target->items.empty() &&
            (is_token(target->items[0], "when") || is_token(target->items[0], "forall"))) {
          fail(*target, "conditional effects are not supported");
        }
        AtomAt a = read_atom(*target);
        check_atom(domain, a);
        check_bound(action, a);
        if (negative) {
          action.del.push_back(std::move(a.atom));
        } else {
          if (a.atom.predicate == kAroundPredicate) ++around_count;
          action.add.push_back(std::move(a.atom));
        }
      }
      if (around_count > 1) fail(value, "probabilistic action must have exactly one 'around' effect");
      action.probabilistic = around_count == 1;
    } else {
      fail(key, "unsupported action keyword '" + k + "'");
    }
  }
  if (!have_params) fail(node, "action '" + action.name + "' has no :parameters");
  for (const auto& d : action.del) {
    if (std::find(action.add.begin(), action.add.end(), d) != action.add.end()) {
      fail(node, "action '" + action.name + "' adds and deletes " + to_string(d));
    }
  }
  return action;
}

const Sexpr& expect_define(const Sexpr& root, const char* kind, std::string& name) {
  if (!root.is_list || root.items.size() < 2 || !is_token(root.items[0], "define")) {
    fail(root, "expected (define ...)");
  }
  const Sexpr& header = root.items[1];
  if (!header.is_list || header.items.size() != 2 || !is_token(header.items[0], kind)) {
    fail(header, std::string("expected (") + kind + " <name>)");
  }
  name = expect_token(header.items[1], "name");
  return root;
}

void print_atom(std::ostringstream& out, const Atom& a) { out << to_string(a); }

void print_conjunction(std::ostringstream& out, const std::vector<Atom>& atoms) {
  out << "(and";
  for (const auto& a : atoms) {
    out << ' ';
    print_atom(out, a);
  }
  out << ')';
}

}  // namespace

std::string normalize_identifier(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string to_string(const Atom& atom) {
  std::string out = "(" + atom.predicate;
  for (const auto& a : atom.args) out += " " + a;
  out += ")";
  return out;
}

const PredicateSchema* DomainDef::find_predicate(std::string_view n) const {
  for (const auto& p : predicates) {
    if (p.name == n) return &p;
  }
  return nullptr;
}

const ActionSchema* DomainDef::find_action(std::string_view n) const {
  const std::string key = normalize_identifier(n);
  for (const auto& a : actions) {
    if (a.name == key) return &a;
  }
  return nullptr;
}

std::set<std::string> DomainDef::fluent_predicates() const {
  std::set<std::string> out;
  for (const auto& a : actions) {
    for (const auto& e : a.add) out.insert(e.predicate);
    for (const auto& e : a.del) out.insert(e.predicate);
  }
  return out;
}

DomainDef parse_domain(std::string_view text) {
  const Sexpr root = Reader(text).read_document();
  DomainDef domain;
  expect_define(root, "domain", domain.name);

  // Predicates first so actions can be checked regardless of section order.
  for (std::size_t i = 2; i < root.items.size(); ++i) {
    const Sexpr& section = root.items[i];
    if (!section.is_list || section.items.empty()) fail(section, "expected domain section");
    const std::string key = expect_token(section.items[0], "section keyword");
    if (key != ":predicates") continue;
    for (std::size_t j = 1; j < section.items.size(); ++j) {
      AtomAt decl = read_atom(section.items[j]);
      if (domain.find_predicate(decl.atom.predicate) != nullptr) {
        fail(section.items[j], "duplicate predicate '" + decl.atom.predicate + "'");
      }
      for (const auto& p : decl.atom.args) {
        if (!is_variable(p)) fail(section.items[j], "predicate parameter must start with '?'");
      }
      domain.predicates.push_back({decl.atom.predicate, decl.atom.args});
    }
  }
  for (std::size_t i = 2; i < root.items.size(); ++i) {
    const Sexpr& section = root.items[i];
    const std::string key = expect_token(section.items[0], "section keyword");
    if (key == ":predicates" || key == ":requirements") continue;
    if (key == ":action") {
      ActionSchema action = read_action(section, domain);
      if (domain.find_action(action.name) != nullptr) {
        fail(section, "duplicate action '" + action.name + "'");
      }
      domain.actions.push_back(std::move(action));
    } else {
      fail(section, "unsupported domain section '" + key + "'");
    }
  }
  return domain;
}

ProblemDef parse_problem(std::string_view text, const DomainDef& domain) {
  const Sexpr root = Reader(text).read_document();
  ProblemDef problem;
  expect_define(root, "problem", problem.name);
  bool have_goal = false;
  std::vector<AtomAt> pending_init;
  std::vector<AtomAt> pending_goal;
  for (std::size_t i = 2; i < root.items.size(); ++i) {
    const Sexpr& section = root.items[i];
    if (!section.is_list || section.items.empty()) fail(section, "expected problem section");
    const std::string key = expect_token(section.items[0], "section keyword");
    if (key == ":domain") {
      if (section.items.size() != 2) fail(section, "malformed (:domain ...)");
      problem.domain_name = expect_token(section.items[1], "domain name");
      if (problem.domain_name != domain.name) {
        fail(section, "problem targets domain '" + problem.domain_name + "', not '" + domain.name + "'");
      }
    } else if (key == ":objects") {
      for (std::size_t j = 1; j < section.items.size(); ++j) {
        std::string obj = expect_token(section.items[j], "object name");
        if (is_variable(obj)) fail(section.items[j], "object names must not start with '?'");
        if (std::find(problem.objects.begin(), problem.objects.end(), obj) != problem.objects.end()) {
          fail(section.items[j], "duplicate object '" + obj + "'");
        }
        problem.objects.push_back(std::move(obj));
      }
    } else if (key == ":init") {
      for (std::size_t j = 1; j < section.items.size(); ++j) {
        pending_init.push_back(read_atom(section.items[j]));
      }
    } else if (key == ":goal") {
      if (section.items.size() != 2) fail(section, "malformed goal");
      for (const Sexpr* c : conjuncts(section.items[1])) {
        if (c->is_list && !c->items.empty() && is_token(c->items[0], "not")) {
          fail(*c, "negative goals are not supported");
        }
        pending_goal.push_back(read_atom(*c));
      }
      have_goal = true;
    } else {
      fail(section, "unsupported problem section '" + key + "'");
    }
  }
  if (!have_goal) fail(root, "problem has no :goal");
  auto check_ground = [&](const AtomAt& a) {
    check_atom(domain, a);
    for (const auto& arg : a.atom.args) {
      if (std::find(problem.objects.begin(), problem.objects.end(), arg) == problem.objects.end()) {
        fail(*a.source, "undeclared object '" + arg + "'");
      }
    }
  };
  for (auto& a : pending_init) {
    check_ground(a);
    if (std::find(problem.init.begin(), problem.init.end(), a.atom) == problem.init.end()) {
      problem.init.push_back(a.atom);
    }
  }
  for (auto& a : pending_goal) {
    check_ground(a);
    problem.goal.push_back(a.atom);
  }
  return problem;
}

std::string print_domain(const DomainDef& domain) {
  std::ostringstream out;
  out << "(define (domain " << domain.name << ")\n";
  out << "  (:requirements :strips)\n";
  out << "  (:predicates";
  for (const auto& p : domain.predicates) {
    out << "\n    ";
    print_atom(out, Atom{p.name, p.params});
  }
  out << ")";
  for (const auto& a : domain.actions) {
    out << "\n  (:action " << a.name << "\n    :parameters (";
    for (std::size_t i = 0; i < a.params.size(); ++i) out << (i ? " " : "") << a.params[i];
    out << ")\n    :precondition ";
    print_conjunction(out, a.precondition);
    out << "\n    :effect (and";
    for (const auto& d : a.del) {
      out << " (not ";
      print_atom(out, d);
      out << ')';
    }
    for (const auto& e : a.add) {
      out << ' ';
      print_atom(out, e);
    }
    out << "))";
  }
  out << ")\n";
  return out.str();
}

std::string print_problem(const ProblemDef& problem) {
  std::ostringstream out;
  out << "(define (problem " << problem.name << ")\n";
  out << "  (:domain " << problem.domain_name << ")\n";
  out << "  (:objects";
  for (const auto& o : problem.objects) out << ' ' << o;
  out << ")\n  (:init";
  for (const auto& a : problem.init) {
    out << "\n    ";
    print_atom(out, a);
  }
  out << ")\n  (:goal ";
  print_conjunction(out, problem.goal);
  out << "))\n";
  return out.str();
}

GroundAction ground(const ActionSchema& schema, std::span<const std::string> args) {
  if (args.size() != schema.params.size()) {
    throw Error(ErrorCode::InvalidArgument,
                "action '" + schema.name + "' expects " + std::to_string(schema.params.size()) +
                    " arguments");
  }
  std::map<std::string, std::string> binding;
  for (std::size_t i = 0; i < args.size(); ++i) binding[schema.params[i]] = args[i];
  auto subst = [&](const std::vector<Atom>& atoms) {
    std::vector<Atom> out;
    out.reserve(atoms.size());
    for (const auto& a : atoms) {
      Atom g{a.predicate, {}};
      for (const auto& arg : a.args) {
        auto it = binding.find(arg);
        g.args.push_back(it != binding.end() ? it->second : arg);
      }
      out.push_back(std::move(g));
    }
    return out;
  };
  GroundAction g;
  g.name = schema.name;
  g.args.assign(args.begin(), args.end());
  g.precondition = subst(schema.precondition);
  g.add = subst(schema.add);
  g.del = subst(schema.del);
  g.probabilistic = schema.probabilistic;
  return g;
}

bool holds(const SymbolicState& state, std::span<const Atom> atoms) {
  return std::all_of(atoms.begin(), atoms.end(),
                     [&](const Atom& a) { return state.count(a) != 0; });
}

bool applicable(const SymbolicState& state, const GroundAction& action) {
  return holds(state, action.precondition);
}

SymbolicState apply(const SymbolicState& state, const GroundAction& action) {
  if (!applicable(state, action)) {
    std::string missing;
    for (const auto& p : action.precondition) {
      if (state.count(p) == 0) {
        missing = to_string(p);
        break;
      }
    }
    throw Error(ErrorCode::PreconditionViolation,
                "action '" + action.name + "' not applicable: missing " + missing);
  }
  SymbolicState out = state;
  for (const auto& d : action.del) out.erase(d);
  for (const auto& a : action.add) out.insert(a);
  return out;
}

}  // namespace skillplan::pddl
