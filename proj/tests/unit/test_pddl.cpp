#include <doctest.h>

#include <string>
#include <vector>

#include "skillplan/common.hpp"
#include "skillplan/data.hpp"
#include "skillplan/pddl.hpp"

using namespace skillplan;
using namespace skillplan::pddl;

namespace {

Atom atom(std::string p, std::vector<std::string> args) { return {std::move(p), std::move(args)}; }

const char* kObserveAsPrinted = R"(
  (:action Observe
    :parameters (?o ?x_g ?p)
    :precondition (and (Around ?o ?x_g)
                       (Pose ?o ?p)
    :effect (AtPose ?o ?p))
)";

}  // namespace

TEST_CASE("skill listing parses into two five-parameter actions") {
  const DomainDef d = parse_domain(data::pddl_text("listing1_skills.pddl"));
  REQUIRE(d.actions.size() == 2);
  for (const auto& a : d.actions) {
    CHECK(a.params.size() == 5);
    CHECK(a.probabilistic);
  }
  const ActionSchema* retrieve = d.find_action("retrieve");
  REQUIRE(retrieve != nullptr);
  CHECK(retrieve->del == std::vector<Atom>{atom("atpose", {"?o", "?p"})});
  CHECK(retrieve->add == std::vector<Atom>{atom("around", {"?o", "?x_g"})});
  CHECK(retrieve->precondition.size() == 6);
}

TEST_CASE("observe listing parses with three parameters") {
  const DomainDef d = parse_domain(data::pddl_text("listing2_observe.pddl"));
  REQUIRE(d.actions.size() == 1);
  const ActionSchema& obs = d.actions[0];
  CHECK(obs.name == "observe");
  CHECK(obs.params.size() == 3);
  CHECK(obs.precondition ==
        std::vector<Atom>{atom("around", {"?o", "?x_g"}), atom("pose", {"?o", "?p"})});
  CHECK(obs.add == std::vector<Atom>{atom("atpose", {"?o", "?p"})});
  CHECK(obs.del.empty());
  CHECK_FALSE(obs.probabilistic);
}

TEST_CASE("observe text as printed has an unbalanced conjunction") {
  const std::string text = std::string("(define (domain d) (:predicates (Around ?o ?x) "
                                       "(Pose ?o ?p) (AtPose ?o ?p))") +
                           kObserveAsPrinted + ")";
  try {
    parse_domain(text);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.code() == ErrorCode::Parse);
    CHECK(e.line() >= 1);
    CHECK(e.column() >= 1);
  }
}

TEST_CASE("domain with zero actions") {
  const DomainDef d = parse_domain(data::pddl_text("empty.pddl"));
  CHECK(d.actions.empty());
}

TEST_CASE("parse errors carry positions") {
  SUBCASE("unclosed paren") {
    try {
      parse_domain("(define (domain x)\n  (:predicates (p ?a)");
      FAIL("expected error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("line") != std::string::npos);
    }
  }
  SUBCASE("stray close paren") {
    try {
      parse_domain("(define (domain x)))");
      FAIL("expected error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 1);
      CHECK(e.column() == 20);
    }
  }
  SUBCASE("undeclared predicate") {
    const char* text =
        "(define (domain x) (:predicates (p ?a))\n"
        " (:action a :parameters (?a) :precondition (and (q ?a)) :effect (p ?a)))";
    try {
      parse_domain(text);
      FAIL("expected error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("undeclared") != std::string::npos);
    }
  }
  SUBCASE("unbound variable") {
    const char* text =
        "(define (domain x) (:predicates (p ?a))\n"
        " (:action a :parameters (?a) :precondition (p ?b) :effect (p ?a)))";
    CHECK_THROWS_AS(parse_domain(text), ParseError);
  }
  SUBCASE("add and delete overlap") {
    const char* text =
        "(define (domain x) (:predicates (p ?a))\n"
        " (:action a :parameters (?a) :precondition (p ?a) :effect (and (p ?a) (not (p ?a)))))";
    CHECK_THROWS_AS(parse_domain(text), ParseError);
  }
  SUBCASE("two uncertain effects") {
    const char* text =
        "(define (domain x) (:predicates (around ?a ?b))\n"
        " (:action a :parameters (?a ?b ?c) :precondition (and)"
        " :effect (and (around ?a ?b) (around ?a ?c))))";
    CHECK_THROWS_AS(parse_domain(text), ParseError);
  }
}

TEST_CASE("identifiers are case-insensitive") {
  const DomainDef a = parse_domain(
      "(define (domain X) (:predicates (P ?A)) (:action Go :parameters (?A) :precondition (P ?A) "
      ":effect (not (P ?A))))");
  const DomainDef b = parse_domain(
      "(define (domain x) (:predicates (p ?a)) (:action go :parameters (?a) :precondition (p ?a) "
      ":effect (not (p ?a))))");
  CHECK(a == b);
}

TEST_CASE("problem parsing") {
  const DomainDef d = parse_domain(data::pddl_text("tabletop.pddl"));

  SUBCASE("single goal atom") {
    const ProblemDef p = parse_problem(data::pddl_text("retrieval.pddl"), d);
    REQUIRE(p.goal.size() == 1);
    CHECK(p.goal[0] == atom("atpose", {"cup", "pg_cup"}));
    const auto has = [&](const char* o) {
      return std::find(p.objects.begin(), p.objects.end(), o) != p.objects.end();
    };
    CHECK(has("cup"));
    CHECK(has("bar"));
    CHECK(has("table_a"));
    CHECK(has("table_b"));
  }
  SUBCASE("undeclared object") {
    const char* text =
        "(define (problem q) (:domain tabletop) (:objects arm)"
        " (:init (Arm arm)) (:goal (HandEmpty ghost)))";
    CHECK_THROWS_AS(parse_problem(text, d), ParseError);
  }
  SUBCASE("undeclared predicate") {
    const char* text =
        "(define (problem q) (:domain tabletop) (:objects arm)"
        " (:init (Flying arm)) (:goal (HandEmpty arm)))";
    CHECK_THROWS_AS(parse_problem(text, d), ParseError);
  }
  SUBCASE("malformed goal") {
    const char* text =
        "(define (problem q) (:domain tabletop) (:objects arm)"
        " (:init (Arm arm)) (:goal (not (HandEmpty arm))))";
    CHECK_THROWS_AS(parse_problem(text, d), ParseError);
  }
}

TEST_CASE("round trip over every fixture") {
  const DomainDef scenario_domain = parse_domain(data::pddl_text("tabletop.pddl"));
  int domains = 0;
  int problems = 0;
  for (const auto& [name, text] : data::embedded_pddl()) {
    CAPTURE(name);
    if (text.find("(problem") != std::string::npos) {
      const ProblemDef once = parse_problem(text, scenario_domain);
      const ProblemDef twice = parse_problem(print_problem(once), scenario_domain);
      CHECK(once == twice);
      CHECK(print_problem(twice) == print_problem(once));
      ++problems;
    } else {
      const DomainDef once = parse_domain(text);
      const DomainDef twice = parse_domain(print_domain(once));
      CHECK(once == twice);
      CHECK(print_domain(twice) == print_domain(once));
      ++domains;
    }
  }
  CHECK(domains == 5);
  CHECK(problems == 4);
}

TEST_CASE("uncertain effects mark skills; deterministic schemas carry none") {
  const DomainDef d = parse_domain(data::pddl_text("tabletop.pddl"));
  for (const auto& a : d.actions) {
    int around = 0;
    for (const auto& e : a.add) around += e.predicate == kAroundPredicate ? 1 : 0;
    CAPTURE(a.name);
    CHECK(around == (a.probabilistic ? 1 : 0));
  }
  CHECK(d.find_action("retrieve")->probabilistic);
  CHECK(d.find_action("edgepush")->probabilistic);
  CHECK_FALSE(d.find_action("pick")->probabilistic);
  CHECK_FALSE(d.find_action("place")->probabilistic);
}

TEST_CASE("applicability and application") {
  const DomainDef skills = parse_domain(data::pddl_text("listing1_skills.pddl"));
  const DomainDef obs = parse_domain(data::pddl_text("listing2_observe.pddl"));
  const std::vector<std::string> args{"arm", "cup", "p0", "x0", "xg"};
  const GroundAction retrieve = ground(*skills.find_action("retrieve"), args);

  SymbolicState full{atom("arm", {"arm"}),
                     atom("pose", {"cup", "p0"}),
                     atom("handempty", {"arm"}),
                     atom("atpose", {"cup", "p0"}),
                     atom("canretrievefrom", {"x0"}),
                     atom("canretrieveto", {"x0", "xg"})};

  CHECK(applicable(full, retrieve));
  CHECK_FALSE(applicable({}, retrieve));
  SymbolicState no_hand = full;
  no_hand.erase(atom("handempty", {"arm"}));
  CHECK_FALSE(applicable(no_hand, retrieve));
  CHECK_THROWS_AS(pddl::apply(no_hand, retrieve), Error);

  const SymbolicState after = pddl::apply(full, retrieve);
  CHECK(after.count(atom("atpose", {"cup", "p0"})) == 0);
  CHECK(after.count(atom("around", {"cup", "xg"})) == 1);
  CHECK(after.size() <= full.size() + retrieve.add.size());

  SymbolicState with_pose = after;
  with_pose.insert(atom("pose", {"cup", "xg"}));
  const std::vector<std::string> oargs{"cup", "xg", "xg"};
  const GroundAction observe = ground(*obs.find_action("observe"), oargs);
  const SymbolicState observed = pddl::apply(with_pose, observe);
  CHECK(observed.count(atom("atpose", {"cup", "xg"})) == 1);

  GroundAction noop;
  CHECK(pddl::apply(full, noop) == full);
}

TEST_CASE("ground rejects arity mismatch") {
  const DomainDef skills = parse_domain(data::pddl_text("listing1_skills.pddl"));
  const std::vector<std::string> args{"arm"};
  CHECK_THROWS_AS(ground(*skills.find_action("retrieve"), args), Error);
}
