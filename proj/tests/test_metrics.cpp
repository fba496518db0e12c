#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sla/metrics.hpp"
#include "sla/rng.hpp"
#include "sla/tasks.hpp"

#include "support.hpp"

using namespace sla;
using test_support::micro_config;

namespace {

std::vector<MatchOutcome> outcomes_of(int wins, int ties, int losses) {
  std::vector<MatchOutcome> out;
  for (int i = 0; i < wins; ++i) out.push_back({1.0, 0.0, Verdict::win, ""});
  for (int i = 0; i < ties; ++i) out.push_back({0.5, 0.5, Verdict::tie, ""});
  for (int i = 0; i < losses; ++i) out.push_back({0.0, 1.0, Verdict::loss, ""});
  return out;
}

// Rewards with an exact quarter-step grid so monotone transforms with exact
// float arithmetic preserve every comparison, ties included.
std::vector<double> grid_rewards(Rng& rng, size_t n) {
  std::vector<double> r(n);
  for (double& x : r) x = 0.25 * static_cast<double>(rng.uniform_int(0, 8));
  return r;
}

}  // namespace

TEST_CASE("win rate counts ties as half") {
  CHECK(win_rate(outcomes_of(1, 1, 2)) == 37.5);
  CHECK(win_rate(outcomes_of(750, 19, 231)) == doctest::Approx(75.95).epsilon(1e-12));
  CHECK(win_rate(outcomes_of(0, 5, 0)) == 50.0);
  CHECK_THROWS_AS(win_rate({}), ContractError);
}

TEST_CASE("swapping sides makes win rates sum to 100") {
  Rng rng(derive_seed(3, "win-rate-inversion"));
  for (int trial = 0; trial < 20; ++trial) {
    const int w = static_cast<int>(rng.uniform_int(0, 30));
    const int t = static_cast<int>(rng.uniform_int(0, 30));
    const int l = static_cast<int>(rng.uniform_int(1, 30));
    const double direct = win_rate(outcomes_of(w, t, l));
    const double swapped = win_rate(outcomes_of(l, t, w));
    CHECK(direct + swapped == doctest::Approx(100.0).epsilon(1e-12));
  }
}

TEST_CASE("reward curve fixture with hand-computed area") {
  // Pair A: chosen reward 1 everywhere, rejected 0: agreement 1 at every x.
  // Pair B: chosen reward 0 for the first 100 of 200 positions, then 1;
  //         rejected 0 everywhere. Prefix means tie (0.5) up to x = 0.5,
  //         then the chosen side leads. Combined curve: 0.75 on [0, 0.5],
  //         1.0 after; trapezoids give 50*0.0075 + 0.00875 + 49*0.01.
  PreferencePair a, b;
  a.prompt = b.prompt = {0};
  a.chosen.assign(200, 2);
  a.rejected.assign(200, 3);
  a.chosen_oracle = b.chosen_oracle = 1.0;
  a.rejected_oracle = b.rejected_oracle = 0.0;
  b.chosen.assign(200, 2);
  b.rejected.assign(200, 3);

  RewardSeqScorer scorer = [](const std::vector<int>&, const std::vector<int>& resp) {
    std::vector<double> r(resp.size(), 0.0);
    if (resp[0] == 2) {
      for (size_t i = 0; i < resp.size(); ++i) r[i] = 1.0;
    }
    return r;
  };
  RewardSeqScorer scorer_b = [&scorer](const std::vector<int>& p,
                                       const std::vector<int>& resp) {
    std::vector<double> r = scorer(p, resp);
    if (resp[0] == 2) {
      for (size_t i = 0; i < 100 && i < r.size(); ++i) r[i] = 0.0;
    }
    return r;
  };

  // Dispatch per pair through one scorer: pair A marks its chosen response
  // with a leading token the scorer keys on.
  a.chosen.front() = 4;
  RewardSeqScorer combined = [&](const std::vector<int>& p, const std::vector<int>& resp) {
    if (resp[0] == 4) {
      return std::vector<double>(resp.size(), 1.0);
    }
    return scorer_b(p, resp);
  };

  TRCurve curve = autrc(combined, {a, b});
  REQUIRE(curve.x.size() == 101);
  REQUIRE(curve.agreement.size() == 101);
  CHECK(curve.x.front() == 0.0);
  CHECK(curve.x.back() == 1.0);
  CHECK(curve.agreement[0] == 0.75);
  CHECK(curve.agreement[50] == 0.75);
  CHECK(curve.agreement[51] == 1.0);
  CHECK(curve.agreement[100] == 1.0);
  CHECK(curve.area == doctest::Approx(0.87375).epsilon(1e-12));
}

TEST_CASE("a perfect scorer tops out and validation bites") {
  PreferencePair p;
  p.prompt = {0};
  p.chosen = {2, 2};
  p.rejected = {3, 3};
  p.chosen_oracle = 1.0;
  p.rejected_oracle = 0.0;
  RewardSeqScorer oracle_like = [](const std::vector<int>&, const std::vector<int>& r) {
    return std::vector<double>(r.size(), r[0] == 2 ? 1.0 : 0.0);
  };
  TRCurve curve = autrc(oracle_like, {p});
  for (double a : curve.agreement) CHECK(a == 1.0);
  CHECK(curve.area == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(autrc(oracle_like, {}), ContractError);
  PreferencePair unordered = p;
  std::swap(unordered.chosen_oracle, unordered.rejected_oracle);
  CHECK_THROWS_AS(autrc(oracle_like, {unordered}), ContractError);
  PreferencePair empty = p;
  empty.rejected.clear();
  CHECK_THROWS_AS(autrc(oracle_like, {empty}), ContractError);
}

TEST_CASE("the curve is invariant under exact monotone reward transforms") {
  Rng rng(derive_seed(3, "monotone"));
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 12; ++i) {
    PreferencePair p;
    p.prompt = {0, static_cast<int>(rng.uniform_int(2, 9))};
    p.chosen.assign(static_cast<size_t>(rng.uniform_int(2, 10)), 2);
    p.rejected.assign(static_cast<size_t>(rng.uniform_int(2, 10)), 3);
    p.chosen_oracle = 1.0;
    p.rejected_oracle = 0.0;
    pairs.push_back(p);
  }
  // Deterministic pseudo-random rewards on a quarter grid, keyed by tokens.
  RewardSeqScorer base = [](const std::vector<int>& prompt, const std::vector<int>& r) {
    Rng local(derive_seed(fnv1a64("scorer") + static_cast<uint64_t>(prompt[1]),
                          r[0] == 2 ? "w" : "l", r.size()));
    return grid_rewards(local, r.size());
  };
  // 4x + 2 is exact for quarter-grid values: comparisons, ties included,
  // are preserved exactly.
  RewardSeqScorer scaled = [&base](const std::vector<int>& p, const std::vector<int>& r) {
    std::vector<double> out = base(p, r);
    for (double& x : out) x = 4.0 * x + 2.0;
    return out;
  };
  TRCurve c1 = autrc(base, pairs);
  TRCurve c2 = autrc(scaled, pairs);
  CHECK(c1.agreement == c2.agreement);  // exact
  CHECK(c1.area == c2.area);
}

TEST_CASE("model reward curve equals the raw per-position rewards") {
  RewardTransformer m = RewardTransformer::init(micro_config(16), 41);
  const std::vector<int> prompt{0, 5, 7, 12};
  const std::vector<int> response{5, 7, 1};
  std::vector<double> rewards = model_response_rewards(m, prompt, response);
  REQUIRE(rewards.size() == response.size());
  NoGradGuard g;
  ForwardOut full = forward(m, {0, 5, 7, 12, 5, 7, 1});
  for (size_t i = 0; i < rewards.size(); ++i) {
    CHECK(rewards[i] ==
          doctest::Approx(full.rewards.data()[prompt.size() + i]).epsilon(1e-9));
  }
}

TEST_CASE("cost model fixtures") {
  CostParams c;
  c.t_p = 0.5;
  c.t_d = 0.01;
  c.t_c = 0.05;
  c.t_r = 0.2;
  c.T_max = 100;
  c.N = 64;
  c.n = 10;
  c.k = 4;

  MctsCost mc = cost_mcts(c);
  CHECK(mc.per_action == doctest::Approx(25.6).epsilon(1e-12));
  CHECK(mc.total == doctest::Approx(256.5).epsilon(1e-12));

  SlaCost sc = cost_sla(c);
  CHECK(sc.slowdown_vs_greedy == 3.0);  // log_4(64), exact
  CHECK(sc.serial == doctest::Approx(64.5).epsilon(1e-12));
  CHECK(sc.parallel == doctest::Approx(3.5).epsilon(1e-12));

  // Non-power N falls back to the real logarithm.
  c.N = 48;
  CHECK(cost_sla(c).slowdown_vs_greedy ==
        doctest::Approx(std::log(48.0) / std::log(4.0)).epsilon(1e-12));

  CostParams bad = c;
  bad.n = 200;  // n > T_max
  CHECK_THROWS_AS(cost_sla(bad), ParamError);
  bad = c;
  bad.k = 1;
  CHECK_THROWS_AS(cost_sla(bad), ParamError);
  bad = c;
  bad.t_d = -1.0;
  CHECK_THROWS_AS(cost_mcts(bad), ParamError);
}

TEST_CASE("cost totals scale linearly with the timing quintuple") {
  CostParams c;
  c.t_p = 0.3;
  c.t_d = 0.02;
  c.t_c = 0.04;
  c.t_r = 0.15;
  c.T_max = 60;
  c.N = 16;
  c.n = 6;
  c.k = 2;
  CostParams scaled = c;
  scaled.t_p *= 7.0;
  scaled.t_d *= 7.0;
  scaled.t_c *= 7.0;
  scaled.t_r *= 7.0;
  CHECK(cost_mcts(scaled).total ==
        doctest::Approx(7.0 * cost_mcts(c).total).epsilon(1e-12));
  CHECK(cost_sla(scaled).serial ==
        doctest::Approx(7.0 * cost_sla(c).serial).epsilon(1e-12));
  CHECK(cost_sla(scaled).parallel ==
        doctest::Approx(7.0 * cost_sla(c).parallel).epsilon(1e-12));
  // The slowdown is timing-free.
  CHECK(cost_sla(scaled).slowdown_vs_greedy == cost_sla(c).slowdown_vs_greedy);
}

TEST_CASE("self-play tournaments are all ties") {
  RewardTransformer m = RewardTransformer::init(micro_config(16), 42);
  TaskSpec task = sortedness_task();
  std::vector<std::vector<int>> prompts;
  for (int i = 0; i < 8; ++i) {
    Rng rng(derive_seed(600, "tourney-prompts", static_cast<uint64_t>(i)));
    prompts.push_back(task.sample_prompt(rng));
  }
  DecodeParams greedy;
  greedy.algorithm = Algorithm::greedy;
  greedy.max_new_tokens = 10;
  TournamentResult r = run_tournament(m, prompts, greedy, greedy, task.oracle);
  CHECK(r.win_rate == 50.0);
  for (const MatchOutcome& o : r.outcomes) {
    CHECK(o.verdict == Verdict::tie);
    CHECK(o.candidate_score == o.baseline_score);
  }
}

TEST_CASE("tournament outcomes are worker-count independent") {
  RewardTransformer m = RewardTransformer::init(micro_config(16), 43);
  TaskSpec task = parity_task();
  std::vector<std::vector<int>> prompts;
  for (int i = 0; i < 10; ++i) {
    Rng rng(derive_seed(601, "tourney-prompts", static_cast<uint64_t>(i)));
    prompts.push_back(task.sample_prompt(rng));
  }
  DecodeParams cand;
  cand.algorithm = Algorithm::sample;
  cand.max_new_tokens = 8;
  cand.top_k = 16;
  cand.seed = 7;
  DecodeParams base;
  base.algorithm = Algorithm::greedy;
  base.max_new_tokens = 8;

  TournamentResult serial = run_tournament(m, prompts, cand, base, task.oracle, 1);
  TournamentResult parallel = run_tournament(m, prompts, cand, base, task.oracle, 4);
  REQUIRE(serial.outcomes.size() == parallel.outcomes.size());
  for (size_t i = 0; i < serial.outcomes.size(); ++i) {
    CHECK(serial.outcomes[i].candidate_score == parallel.outcomes[i].candidate_score);
    CHECK(serial.outcomes[i].baseline_score == parallel.outcomes[i].baseline_score);
    CHECK(serial.outcomes[i].verdict == parallel.outcomes[i].verdict);
  }
  CHECK(serial.win_rate == parallel.win_rate);
}

TEST_CASE("a crashing decoder loses its prompts with a diagnostic") {
  RewardTransformer m = RewardTransformer::init(micro_config(16), 44);
  TaskSpec task = sortedness_task();
  Rng rng(derive_seed(602, "tourney-prompts"));
  std::vector<std::vector<int>> prompts{task.sample_prompt(rng)};

  DecodeParams broken;
  broken.algorithm = Algorithm::sample;
  broken.temperature = -1.0;  // rejected at decode time
  DecodeParams base;
  base.algorithm = Algorithm::greedy;
  base.max_new_tokens = 8;

  TournamentResult r = run_tournament(m, prompts, broken, base, task.oracle);
  REQUIRE(r.outcomes.size() == 1);
  CHECK(r.outcomes[0].verdict == Verdict::loss);
  CHECK(r.outcomes[0].candidate_score == -1.0);
  CHECK(r.outcomes[0].note.find("candidate failed") != std::string::npos);
  CHECK(r.win_rate == 0.0);
}

TEST_CASE("latency rows include a unit-ratio greedy baseline") {
  RewardTransformer m = RewardTransformer::init(micro_config(16), 45);
  TaskSpec task = sortedness_task();
  Rng rng(derive_seed(603, "bench-prompts"));
  std::vector<std::vector<int>> prompts{task.sample_prompt(rng), task.sample_prompt(rng)};

  DecodeParams sla_params;
  sla_params.algorithm = Algorithm::sla;
  sla_params.max_new_tokens = 8;
  sla_params.sla = {2, 2, 4, false};

  std::vector<LatencyRow> rows = benchmark_latency(m, prompts, {sla_params});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].config == "greedy");
  CHECK(rows[0].ratio_vs_greedy == 1.0);
  CHECK(rows[0].forwards_per_token == 1.0);
  CHECK(rows[0].tokens_per_sec > 0.0);
  CHECK(rows[1].config == "sla(d=2,k=2,n=4)");
  CHECK(rows[1].ratio_vs_greedy > 0.0);
  CHECK(rows[1].forwards_per_token <= 4.0);  // d*k
  CHECK(rows[1].forwards_per_token > 1.0);
}

TEST_CASE("csv artifacts carry the expected headers") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path();

  const std::string tpath = (dir / "sla_test_tournament.csv").string();
  write_tournament_csv(tpath, outcomes_of(1, 1, 1));
  std::ifstream tin(tpath);
  std::string line;
  std::getline(tin, line);
  CHECK(line == "prompt_id,candidate_score,baseline_score,verdict");
  int rows = 0;
  while (std::getline(tin, line)) ++rows;
  CHECK(rows == 3);
  std::remove(tpath.c_str());

  PreferencePair p;
  p.prompt = {0};
  p.chosen = {2};
  p.rejected = {3};
  p.chosen_oracle = 1.0;
  RewardSeqScorer s = [](const std::vector<int>&, const std::vector<int>& r) {
    return std::vector<double>(r.size(), r[0] == 2 ? 1.0 : 0.0);
  };
  const std::string apath = (dir / "sla_test_autrc.csv").string();
  write_autrc_csv(apath, autrc(s, {p}));
  std::ifstream ain(apath);
  std::getline(ain, line);
  CHECK(line == "x,agreement");
  rows = 0;
  while (std::getline(ain, line)) ++rows;
  CHECK(rows == 101);
  std::remove(apath.c_str());

  LatencyRow row;
  row.config = "greedy";
  row.tokens_per_sec = 100.0;
  row.ratio_vs_greedy = 1.0;
  row.forwards_per_token = 1.0;
  const std::string lpath = (dir / "sla_test_latency.csv").string();
  write_latency_csv(lpath, {row});
  std::ifstream lin(lpath);
  std::getline(lin, line);
  CHECK(line == "config,tokens_per_sec,ratio,forwards_per_token");
  std::remove(lpath.c_str());

  CHECK_THROWS_AS(write_latency_csv("/nonexistent/dir/x.csv", {row}), IoError);
}
