#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sla/model.hpp"

namespace sla {

enum class Algorithm { greedy, sample, beam, best_of_n, sla, mcts };

std::string algorithm_name(Algorithm a);
Algorithm algorithm_from_name(const std::string& name);

struct SlaParams {
  int depth = 2;  // d: lookahead depth in blocks
  int width = 2;  // k: children per expanded leaf
  int step = 10;  // n: max tokens per action block
  // Children normally branch on the k most probable first tokens and continue
  // greedily. With sampled_children each child is drawn at `temperature`: k
  // distinct first tokens without replacement, then a sampled continuation.
  bool sampled_children = false;
};

struct MctsParams {
  int rollouts = 16;  // N: search iterations per committed action
  int step = 10;      // n: max tokens per action block
  double ucb_c = 1.4142135623730951;
  // Expansion fan-out. The cost model treats the MCTS tree as k-ary with the
  // same k as SLA, so the default matches SlaParams::width.
  int width = 2;
};

struct DecodeParams {
  Algorithm algorithm = Algorithm::greedy;
  int max_new_tokens = 64;
  int eos_id = 1;
  double temperature = 0.8;
  int top_k = 50;      // capped at vocab_size
  double top_p = 0.9;
  int beam_width = 4;
  int n_samples = 8;   // best_of_n candidates
  SlaParams sla;
  MctsParams mcts;
  uint64_t seed = 0;
};

struct Trajectory {
  std::vector<int> prompt;
  std::vector<int> response;
  // Log-prob of each emitted response token under the model, filled by the
  // token-at-a-time decoders (greedy, sample).
  std::vector<double> step_logprobs;
  // Q-value of the committed action after each search step (sla, mcts).
  std::vector<double> step_q;
  // Model reward R' at the last response token (at the prompt end if the
  // response is empty).
  double final_reward = 0.0;
  // Action blocks evaluated by search decoders; each block is one leaf
  // forward evaluation. Token-at-a-time decoders count 0.
  int64_t blocks_evaluated = 0;
  std::optional<double> oracle_reward;
};

// Sum over response positions of log P(x_i | x_<i). Empty response -> 0.
double trajectory_log_likelihood(const RewardTransformer& m, const Trajectory& t);

using EmitFn = std::function<void(const std::vector<int>&)>;
// Optional override of the self-evaluation signal for search decoders. Gets
// the full token sequence (prompt + committed + in-tree path [+ rollout])
// and the model reward R' at its last token; returns the score to use.
using BlockScorer = std::function<double(const std::vector<int>&, double)>;

Trajectory greedy_decode(const RewardTransformer& m, const std::vector<int>& prompt,
                         const DecodeParams& params);

// Temperature, top-k, then top-p filtering composed in that order.
Trajectory sample_decode(const RewardTransformer& m, const std::vector<int>& prompt,
                         const DecodeParams& params);

// The distribution sample_decode draws from at one position: softmax of
// logits/temperature, restricted to the top_k most probable tokens, then to
// the smallest prefix of those with cumulative mass >= top_p, renormalized.
// Pairs (token, prob), most probable first, probability ties by token id.
std::vector<std::pair<int, double>> sampling_distribution(
    const std::vector<double>& logits, double temperature, int top_k, double top_p);

// Joint log-likelihood beam search, no length normalization. Finished beams
// (end-of-sequence or length cap) retire; the best finished beam wins, ties
// broken by lexicographically smallest response.
Trajectory beam_search(const RewardTransformer& m, const std::vector<int>& prompt,
                       const DecodeParams& params);

// n_samples trajectories via sample_decode, reranked by the scorer (default:
// the model's own R' at the final token). Ties keep the earliest sample.
Trajectory best_of_n(const RewardTransformer& m, const std::vector<int>& prompt,
                     int n_samples, const DecodeParams& params);
Trajectory best_of_n(const RewardTransformer& m, const std::vector<int>& prompt,
                     int n_samples, const DecodeParams& params,
                     const std::function<double(const Trajectory&)>& scorer);

// ---- search tree ------------------------------------------------------------

struct SearchNode {
  std::vector<int> block;  // action tokens, length in [1, n]; empty at root
  SearchNode* parent = nullptr;
  std::vector<std::unique_ptr<SearchNode>> children;
  // SLA: max over descendant leaf rewards (== reward_estimate at leaves).
  // MCTS: sum of backpropagated simulation rewards; mean is q_value / visits.
  double q_value = 0.0;
  int visit_count = 0;         // MCTS only
  double reward_estimate = 0.0;  // R' at the block's last token
  double prior = 0.0;            // policy probability of block[0] (MCTS ordering)
  bool terminal = false;         // ends with EOS or hits a length cap
  std::shared_ptr<const KVCacheSegment> cache_segment;
  std::vector<double> last_logits;

  bool is_leaf() const { return children.empty(); }
};

struct SearchTree {
  std::vector<int> prompt;
  std::vector<int> committed;        // response tokens committed so far
  std::unique_ptr<SearchNode> root;  // current committed state
  std::vector<SearchNode*> frontier; // expandable leaves after the last sla_step
  int64_t blocks_evaluated = 0;      // one per node created (each forwarded once)
  int64_t rollout_tokens = 0;        // MCTS simulation tokens, not part of any node
  int steps_done = 0;
  std::vector<double> step_q;
};

// Evaluates the prompt and roots a tree at the committed state.
SearchTree make_search_tree(const RewardTransformer& m, const std::vector<int>& prompt);

// Deepens every non-terminal frontier leaf to depth d (k children each, one
// batched forward per level), sets leaf Q = R', internal Q = max(children Q),
// and returns the argmax-Q root action (ties: lowest first-token id).
std::vector<int> sla_step(const RewardTransformer& m, SearchTree& tree,
                          const DecodeParams& params,
                          const BlockScorer& scorer = nullptr);

// Runs N select/expand/simulate/backpropagate iterations and returns the
// root action with the highest mean simulated reward (ties: lowest first-
// token id). Selection is UCB with unvisited children first.
std::vector<int> mcts_step(const RewardTransformer& m, SearchTree& tree,
                           const DecodeParams& params,
                           const BlockScorer& scorer = nullptr);

// Commits a root action previously returned by a step: appends its tokens,
// promotes the child to root. retain_subtree keeps the child's descendants
// and their cache segments (SLA); otherwise they are dropped (MCTS re-search).
void commit_block(SearchTree& tree, const std::vector<int>& block, bool retain_subtree);

// Streaming search decode: sla_step, commit, emit (each batch <= n tokens,
// delivered before the next step), until EOS or max_new_tokens.
Trajectory sla_decode(const RewardTransformer& m, const std::vector<int>& prompt,
                      const DecodeParams& params, const EmitFn& emit = nullptr);

// Reference searcher: a fresh N-iteration search per committed action; only
// the committed path's cache survives between actions.
Trajectory mcts_decode(const RewardTransformer& m, const std::vector<int>& prompt,
                       const DecodeParams& params);

// Dispatch on params.algorithm.
Trajectory decode(const RewardTransformer& m, const std::vector<int>& prompt,
                  const DecodeParams& params);

}  // namespace sla
