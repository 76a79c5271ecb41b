// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "skillplan/bench.hpp"
#include "skillplan/data.hpp"
#include "skillplan/pddl.hpp"

using namespace skillplan;
namespace fs = std::filesystem;
using connectors::Vector;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("failed: " + what);
    }
  }
  void note(const std::string& what) { notes.push_back(what); }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

const char* kScenarioNames[] = {"retrieval", "multi-retrieving", "edge-pushing", "serving"};

// Shared between the benchmark-level criteria.
struct Context {
  std::string artifacts;
  int trials = 50;
  std::uint64_t seed = 0;
  planner::SkillSet skills;
  std::optional<bench::BenchReport> report;

  bench::BenchConfig config() const {
    bench::BenchConfig c;
    c.trials = trials;
    c.seed = seed;
    return c;
  }
  const planner::SkillSet& loaded() {
    if (skills.empty()) skills = bench::load_skills(artifacts, bench::method_domain("ours"));
    return skills;
  }
  const bench::BenchReport& benchmark() {
    if (!report) report = bench::run_benchmark(config(), loaded());
    return *report;
  }
};

double metric(const bench::BenchReport& r, const std::string& method, const std::string& scenario,
              const std::string& name) {
  const auto* row = bench::find_row(r, method, scenario, name);
  return row != nullptr ? row->value : std::nan("");
}

// --------------------------------------------------------------------- 1

Outcome qualitative(Context& ctx) {
  Outcome out;
  const auto& r = ctx.benchmark();
  for (const char* s : {"retrieval", "multi-retrieving", "serving"}) {
    bool all_unsolvable = true;
    for (const auto& t : r.trials) {
      if (t.method == "hb" && t.scenario == s) {
        all_unsolvable = all_unsolvable && !t.planned && t.status.find("no heuristic") != std::string::npos;
      }
    }
    out.require(all_unsolvable, std::string("HB reports unsolvable on ") + s);
  }
  const double hb3 = metric(r, "hb", "edge-pushing", "planning_success");
  out.require(hb3 >= 0.9, "HB solves edge-pushing (" + fmt(hb3) + ")");

  for (const char* s : kScenarioNames) {
    const double plan = metric(r, "ours", s, "planning_success");
    const double exec = metric(r, "ours", s, "execution_success");
    const double bar = std::string(s) == "serving" ? 0.7 : 0.8;
    out.require(plan >= 0.9, std::string("OURS planning on ") + s + " = " + fmt(plan));
    out.require(exec >= bar, std::string("OURS execution on ") + s + " = " + fmt(exec));
    out.note(std::string(s) + ": ours plan " + fmt(plan) + " exec " + fmt(exec));

    const double t_ours = metric(r, "ours", s, "planning_time");
    const double t_srl = metric(r, "srl", s, "planning_time");
    if (!std::isnan(t_ours) && !std::isnan(t_srl)) {
      out.require(t_ours < t_srl, std::string("OURS faster than SRL on ") + s + " (" + fmt(t_ours) +
                                      " s vs " + fmt(t_srl) + " s)");
      out.note(std::string(s) + ": planning time ours " + fmt(t_ours) + " s, srl " + fmt(t_srl) + " s");
    }
  }
  const double sb_plan = metric(r, "sb", "edge-pushing", "planning_success");
  const double sb_exec = metric(r, "sb", "edge-pushing", "execution_success");
  out.require(sb_exec < sb_plan, "SB execution " + fmt(sb_exec) + " < planning " + fmt(sb_plan));
  out.note("SB edge-pushing plan " + fmt(sb_plan) + " exec " + fmt(sb_exec));
  return out;
}

// --------------------------------------------------------------------- 2

Outcome formulas(Context&) {
  Outcome out;
  using connectors::Substitution;
  const auto positive = [](const Vector& e) { return e[0] > 0.5; };

  int exhaustive = 0;
  for (int n = 1; n <= 8; ++n) {
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      Substitution k{{0.0, 0.0}, {}, 0};
      int count = 0;
      for (int i = 0; i < n; ++i) {
        const bool bit = (mask >> i) & 1u;
        count += bit ? 1 : 0;
        k.effects.push_back({bit ? 1.0 : 0.0});
      }
      ++exhaustive;
      if (connectors::optimism(k, positive) != static_cast<double>(count) / n) {
        out.require(false, "optimism n=" + std::to_string(n) + " mask=" + std::to_string(mask));
      }
    }
  }

  // Brute force over dyadic goals so every tie is exact. Order: higher
  // success fraction, then smaller distance to the position, then lower
  // record number.
  Rng rng(2024);
  std::uniform_int_distribution<int> size(0, 8), effects(1, 8), coord(-4, 4);
  std::bernoulli_distribution coin(0.5);
  int mismatches = 0;
  for (int instance = 0; instance < 10000; ++instance) {
    const int m = size(rng);
    std::vector<int> records(static_cast<std::size_t>(m));
    std::iota(records.begin(), records.end(), 0);
    std::shuffle(records.begin(), records.end(), rng);
    std::vector<Substitution> cands;
    std::vector<std::array<int, 4>> keys;  // count, n, squared distance, record
    const int px = coord(rng), py = coord(rng);
    for (int i = 0; i < m; ++i) {
      const int gx = coord(rng), gy = coord(rng), n = effects(rng);
      Substitution k{{gx / 8.0, gy / 8.0}, {}, static_cast<std::size_t>(records[i])};
      int count = 0;
      for (int j = 0; j < n; ++j) {
        const bool ok = coin(rng);
        count += ok ? 1 : 0;
        k.effects.push_back({ok ? 1.0 : 0.0});
      }
      cands.push_back(k);
      keys.push_back({count, n, (gx - px) * (gx - px) + (gy - py) * (gy - py), records[i]});
    }
    int oracle = -1;
    for (int i = 0; i < m; ++i) {
      if (keys[i][0] == 0) continue;
      if (oracle < 0) {
        oracle = i;
        continue;
      }
      const auto& a = keys[i];
      const auto& b = keys[oracle];
      const long lhs = static_cast<long>(a[0]) * b[1], rhs = static_cast<long>(b[0]) * a[1];
      if (lhs != rhs) {
        if (lhs > rhs) oracle = i;
      } else if (a[2] != b[2]) {
        if (a[2] < b[2]) oracle = i;
      } else if (a[3] < b[3]) {
        oracle = i;
      }
    }
    const auto got = connectors::best_substitution(cands, positive, Vec2{px / 8.0, py / 8.0});
    const bool same = oracle < 0 ? !got.has_value() : (got && got->record == cands[oracle].record);
    if (!same) ++mismatches;
  }
  out.require(mismatches == 0, std::to_string(mismatches) + " best-substitution mismatches");
  out.note(std::to_string(exhaustive) + " optimism patterns, 10000 argmax instances");
  return out;
}

// --------------------------------------------------------------------- 3

Outcome knn(Context&) {
  Outcome out;
  Rng rng(77);
  std::uniform_int_distribution<int> size(1, 512), dim(2, 8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int mismatches = 0, queries = 0;
  for (int dataset = 0; dataset < 1000; ++dataset) {
    const auto n = static_cast<std::size_t>(size(rng));
    const auto d = static_cast<std::size_t>(dim(rng));
    // A third of the datasets sit on a coarse grid to force duplicate distances.
    const bool grid = dataset % 3 == 0;
    std::vector<Vector> pts(n, Vector(d));
    for (auto& p : pts) {
      for (double& v : p) v = grid ? std::round(u(rng) * 2.0) / 2.0 : u(rng);
    }
    const connectors::KdTree tree(pts);
    for (int q = 0; q < 5; ++q) {
      Vector query(d);
      for (double& v : query) v = grid ? std::round(u(rng) * 2.0) / 2.0 : u(rng);
      std::uniform_int_distribution<std::size_t> kd(1, n + 2);
      const std::size_t k = kd(rng);
      // Linear scan: sort all indices by squared distance, then index.
      std::vector<std::pair<double, std::size_t>> all;
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (pts[i][j] - query[j]) * (pts[i][j] - query[j]);
        all.emplace_back(s, i);
      }
      std::sort(all.begin(), all.end());
      std::vector<std::size_t> expect;
      for (std::size_t i = 0; i < std::min(k, n); ++i) expect.push_back(all[i].second);
      ++queries;
      if (tree.nearest(query, k) != expect) ++mismatches;
    }
  }
  out.require(mismatches == 0, std::to_string(mismatches) + " k-NN mismatches");
  out.note(std::to_string(queries) + " queries over 1000 datasets");
  return out;
}

// --------------------------------------------------------------------- 4

Outcome bce(Context&) {
  Outcome out;
  const auto close = [](double a, double b) { return std::fabs(a - b) <= 1e-9; };
  const std::vector<double> half{0.5}, batch{0.9, 0.1};
  const std::vector<int> one{1}, labels{1, 0};
  out.require(close(connectors::bce_loss(half, one), std::log(2.0)), "BCE(0.5, 1) = ln 2");
  out.require(close(connectors::bce_loss(batch, labels), 0.10536051565782628),
              "BCE([0.9, 0.1], [1, 0]) = -ln 0.9");
  out.require(connectors::bce_loss(std::vector<double>{1.0 - 1e-9}, one) < 1e-8,
              "BCE near a confident correct prediction");

  Rng rng(99);
  std::uniform_int_distribution<int> inputs(2, 4), width(2, 5), depth(1, 2), batch_size(2, 8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int model = 0; model < 100; ++model) {
    nn::Architecture a;
    a.vector_inputs = inputs(rng);
    for (int l = depth(rng); l > 0; --l) a.hidden.push_back(width(rng));
    nn::Network net(a);
    net.init_random(rng);
    std::vector<Vector> x;
    std::vector<int> y;
    for (int i = batch_size(rng); i > 0; --i) {
      Vector v(static_cast<std::size_t>(a.vector_inputs));
      for (double& e : v) e = u(rng);
      x.push_back(v);
      y.push_back(u(rng) > 0.0 ? 1 : 0);
    }
    std::vector<double> grad(net.parameter_count(), 0.0), scratch(grad.size());
    connectors::bce_loss_and_gradient(net, x, y, grad);
    const std::vector<double> base(net.parameters().begin(), net.parameters().end());
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto p = base;
      const double h = 1e-6;
      p[i] += h;
      net.set_parameters(p);
      const double up = connectors::bce_loss_and_gradient(net, x, y, scratch);
      p[i] -= 2 * h;
      net.set_parameters(p);
      const double down = connectors::bce_loss_and_gradient(net, x, y, scratch);
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({std::fabs(numeric), std::fabs(grad[i]), 1e-6});
      worst = std::max(worst, std::fabs(numeric - grad[i]) / denom);
    }
  }
  out.require(worst <= 1e-4, "gradient relative error " + fmt(worst));
  out.note("worst relative gradient error " + fmt(worst) + " over 100 models");
  return out;
}

// --------------------------------------------------------------------- 5

Outcome discriminator(Context&) {
  Outcome out;
  const sim::ArmModel arm;
  std::vector<std::string> accs;
  for (int run = 0; run < 5; ++run) {
    Rng rng(derive_seed(500, static_cast<std::uint64_t>(run)));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Vector> x;
    std::vector<int> y;
    for (int i = 0; i < 3000; ++i) {
      const Vector p{u(rng), u(rng)};
      x.push_back(p);
      y.push_back(sim::in_workspace(arm, Vec2{p[0], p[1]}) ? 1 : 0);
    }
    const std::vector<Vector> train_x(x.begin(), x.begin() + 2000);
    const std::vector<int> train_y(y.begin(), y.begin() + 2000);
    const auto fit = connectors::train_discriminator(train_x, train_y, connectors::FeatureKind::Vector,
                                                     {}, derive_seed(600, static_cast<std::uint64_t>(run)));
    int correct = 0;
    for (std::size_t i = 2000; i < x.size(); ++i) {
      correct += fit.model.discriminate(x[i]) == (y[i] == 1) ? 1 : 0;
    }
    const double acc = correct / 1000.0;
    accs.push_back(fmt(acc));
    out.require(acc >= 0.9, "run " + std::to_string(run) + " accuracy " + fmt(acc));
  }
  std::string joined;
  for (const auto& a : accs) joined += (joined.empty() ? "" : " ") + a;
  out.note("held-out accuracy " + joined);
  return out;
}

// --------------------------------------------------------------------- 6

Outcome training(Context&) {
  Outcome out;
  const fs::path dir = fs::temp_directory_path() / "skillplan_acceptance_training";
  fs::remove_all(dir);
  const bench::ArtifactConfig config;
  for (auto kind : {rl::SkillKind::Retrieve, rl::SkillKind::EdgePush}) {
    const std::string name = rl::skill_name(kind);
    const auto r = bench::train_skill(dir.string(), kind, config);
    const auto eval = rl::evaluate_policy(r.policy, rl::SkillConfig::defaults(kind), 100,
                                          derive_seed(config.seed, 0xacce, static_cast<std::uint64_t>(kind)));
    const double bar = kind == rl::SkillKind::Retrieve ? 0.7 : 0.6;
    out.require(r.final.mean_return > r.initial.mean_return,
                name + " return " + fmt(r.initial.mean_return) + " -> " + fmt(r.final.mean_return));
    out.require(eval.success_rate >= bar, name + " success " + fmt(eval.success_rate));
    out.note(name + ": return " + fmt(r.initial.mean_return) + " -> " + fmt(r.final.mean_return) +
             ", success " + fmt(eval.success_rate));
  }
  fs::remove_all(dir);
  return out;
}

// --------------------------------------------------------------------- 7

Outcome plan_structure(Context& ctx) {
  Outcome out;
  int planned = 0, invalid = 0;
  for (const auto& t : ctx.benchmark().trials) {
    if (t.method != "ours" || !t.planned) continue;
    ++planned;
    if (!t.valid) ++invalid;
  }
  // Plans outside the benchmark's seeds, validated directly.
  bench::BenchConfig config = ctx.config();
  for (const char* s : kScenarioNames) {
    for (std::uint64_t seed = 1000; seed < 1025; ++seed) {
      const auto p = bench::plan_scenario("ours", s, seed, config, ctx.loaded());
      if (!p.result.solved()) continue;
      ++planned;
      if (!planner::validate_plan(*p.result.plan, p.scenario.task.domain).valid) ++invalid;
    }
  }
  out.require(planned > 0 && invalid == 0, std::to_string(invalid) + " of " + std::to_string(planned) +
                                               " plans invalid");

  config.scenarios = {"retrieval"};
  config.methods = {"ours"};
  const auto with = bench::run_benchmark(config, ctx.loaded());
  config.execution.refine = false;
  const auto without = bench::run_benchmark(config, ctx.loaded());
  const double a = metric(with, "ours", "retrieval", "execution_success");
  const double b = metric(without, "ours", "retrieval", "execution_success");
  out.require(b < a, "ablation " + fmt(b) + " < " + fmt(a));
  out.note(std::to_string(planned) + " plans valid; retrieval execution " + fmt(a) +
           " with refinement, " + fmt(b) + " without");
  return out;
}

// --------------------------------------------------------------------- 8

Outcome determinism(Context& ctx) {
  Outcome out;
  const auto config = ctx.config();
  int compared = 0;
  for (const char* method : bench::kMethods) {
    for (const char* s : kScenarioNames) {
      for (int trial = 0; trial < 3; ++trial) {
        executor::ExecutionTrace ta, tb;
        planner::PlanResult pa, pb;
        bench::run_trial(method, s, trial, config, ctx.loaded(), &ta, &pa);
        bench::run_trial(method, s, trial, config, ctx.loaded(), &tb, &pb);
        ++compared;
        const std::string where = std::string(method) + "/" + s + "/" + std::to_string(trial);
        out.require(pa.plan == pb.plan, "plan differs for " + where);
        out.require(executor::equivalent(ta, tb), "trace differs for " + where);
        if (pa.plan) {
          out.require(planner::plan_to_jsonl(*pa.plan) == planner::plan_to_jsonl(*pb.plan),
                      "plan file differs for " + where);
        }
        if (!ta.steps.empty()) {
          out.require(executor::replay(ta) == ta.final, "replay differs for " + where);
        }
      }
    }
  }
  const auto again = bench::run_benchmark(config, ctx.loaded());
  out.require(bench::same_outcomes(ctx.benchmark(), again), "benchmark reports differ");
  out.note(std::to_string(compared) + " trials rerun; benchmark rerun with " +
           std::to_string(again.trials.size()) + " trials");
  return out;
}

// --------------------------------------------------------------------- 9

Outcome round_trip(Context&) {
  Outcome out;
  const auto domain = pddl::parse_domain(data::pddl_text("tabletop.pddl"));
  int files = 0;
  for (const auto& [name, text] : data::embedded_pddl()) {
    ++files;
    if (text.find("(problem") != std::string::npos) {
      const auto once = pddl::parse_problem(text, domain);
      out.require(pddl::parse_problem(pddl::print_problem(once), domain) == once, name);
    } else {
      const auto once = pddl::parse_domain(text);
      out.require(pddl::parse_domain(pddl::print_domain(once)) == once, name);
    }
  }
  out.require(data::embedded_pddl().count("listing1_skills.pddl") == 1, "skill listing present");
  out.require(data::embedded_pddl().count("listing2_observe.pddl") == 1, "observe listing present");
  out.note(std::to_string(files) + " fixture files");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  Context ctx;
  std::vector<int> only;
  app.add_option("artifacts", ctx.artifacts, "Trained skill directory")->required();
  app.add_option("--trials", ctx.trials, "Benchmark trials per method and scenario");
  app.add_option("--seed", ctx.seed, "Benchmark master seed");
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  set_warning_handler([](const std::string&) {});
  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
      {"qualitative benchmark reproduction", qualitative},
      {"optimism and best substitution exactness", formulas},
      {"k-NN equals a linear scan", knn},
      {"BCE values and gradients", bce},
      {"discriminator learns the reach annulus", discriminator},
      {"policy training improves both skills", training},
      {"plans validate; refinement ablation hurts", plan_structure},
      {"determinism of plans, traces and reports", determinism},
      {"PDDL parse-print-parse", round_trip},
  };

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o.require(false, e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << criteria[i].first << " ("
              << fmt(secs) << " s)";
    for (const auto& n : o.notes) std::cout << "; " << n;
    std::cout << std::endl;
  }
  return all ? 0 : 1;
}
