#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sla/decode.hpp"
#include "sla/training.hpp"

namespace sla {

enum class Verdict { win, tie, loss };

struct MatchOutcome {
  double candidate_score = 0.0;
  double baseline_score = 0.0;
  Verdict verdict = Verdict::tie;
  // Diagnostic for decode failures; a failed side scores -1 so the ordinary
  // comparison rule still yields its loss.
  std::string note;
};

// 100 * (wins + ties/2) / total. Empty input is a contract error.
double win_rate(const std::vector<MatchOutcome>& outcomes);

struct TRCurve {
  std::vector<double> x;          // 101 evenly spaced fractions in [0, 1]
  std::vector<double> agreement;  // pairwise ranking accuracy at each fraction
  double area = 0.0;              // trapezoidal integral over x
};

// Per-position rewards for the response tokens of (prompt, response).
using RewardSeqScorer = std::function<std::vector<double>(
    const std::vector<int>& prompt, const std::vector<int>& response)>;

// Token-level reward curve: at fraction x, the share of pairs whose chosen
// response has the higher mean reward over its first max(1, ceil(x*T))
// response positions (ties count one half). Pairs must be oracle-ordered.
TRCurve autrc(const RewardSeqScorer& scorer, const std::vector<PreferencePair>& pairs);
// Same curve under the model's own R'.
TRCurve autrc(const RewardTransformer& model, const std::vector<PreferencePair>& pairs);

// R' at every response position, via the incremental path (no autograd).
std::vector<double> model_response_rewards(const RewardTransformer& model,
                                           const std::vector<int>& prompt,
                                           const std::vector<int>& response);

// ---- analytic cost models ---------------------------------------------------

struct CostParams {
  double t_p = 0.0;  // prefill
  double t_d = 0.0;  // decode one token
  double t_c = 0.0;  // one-way communication to an external scorer
  double t_r = 0.0;  // score one trajectory
  int T_max = 1;     // total decoded tokens
  int N = 1;         // searcher iterations per action
  int n = 1;         // tokens per action block
  int k = 2;         // tree branching factor
};

struct MctsCost {
  double per_action = 0.0;  // N * (n*t_d + 2*t_c + t_r)
  double total = 0.0;       // t_p + (T_max/n) * per_action
};

struct SlaCost {
  double serial = 0.0;    // t_p + (T_max/n) * k^(log_k N) * n * t_d
  double parallel = 0.0;  // t_p + T_max * log_k(N) * t_d
  double slowdown_vs_greedy = 0.0;  // log_k(N), exact when N is a power of k
};

MctsCost cost_mcts(const CostParams& c);
SlaCost cost_sla(const CostParams& c);  // requires k >= 2

// ---- tournaments and latency ------------------------------------------------

struct TournamentResult {
  std::vector<MatchOutcome> outcomes;  // one per prompt, prompt order
  double win_rate = 0.0;
};

// Decodes every prompt with both configurations and scores both responses
// with the oracle. Prompts run in parallel over the read-only models; each
// prompt's seeds derive from its index, so results are worker-count
// independent. A decoder that throws loses that prompt (score -1, note).
TournamentResult run_tournament(
    const RewardTransformer& model, const std::vector<std::vector<int>>& prompts,
    const DecodeParams& candidate_params, const DecodeParams& baseline_params,
    const std::function<double(const std::vector<int>&, const std::vector<int>&)>&
        oracle,
    int workers = 1);

// Same, with each side decoding from its own model (e.g. a retrained
// candidate against the original baseline checkpoint).
TournamentResult run_tournament(
    const RewardTransformer& candidate_model, const RewardTransformer& baseline_model,
    const std::vector<std::vector<int>>& prompts, const DecodeParams& candidate_params,
    const DecodeParams& baseline_params,
    const std::function<double(const std::vector<int>&, const std::vector<int>&)>&
        oracle,
    int workers = 1);

struct LatencyRow {
  std::string config;
  double tokens_per_sec = 0.0;
  double ratio_vs_greedy = 0.0;     // per-token wall clock over greedy's
  double forwards_per_token = 0.0;  // search block evaluations per emitted token
  double seconds_per_step = 0.0;    // per search step (per token for greedy)
  int64_t tokens = 0;
};

std::string config_label(const DecodeParams& params);

// Strictly sequential timing: one greedy baseline row first (ratio 1.0),
// then one row per configuration. Each configuration decodes every prompt
// once for warmup, then once timed.
std::vector<LatencyRow> benchmark_latency(const RewardTransformer& model,
                                          const std::vector<std::vector<int>>& prompts,
                                          const std::vector<DecodeParams>& params_list);

void write_tournament_csv(const std::string& path,
                          const std::vector<MatchOutcome>& outcomes);
void write_autrc_csv(const std::string& path, const TRCurve& curve);
void write_latency_csv(const std::string& path, const std::vector<LatencyRow>& rows);

}  // namespace sla
