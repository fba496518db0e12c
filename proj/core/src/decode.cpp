#include "sla/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sla/common.hpp"
#include "sla/kernels.hpp"
#include "sla/rng.hpp"

namespace sla {

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::greedy: return "greedy";
    case Algorithm::sample: return "sample";
    case Algorithm::beam: return "beam";
    case Algorithm::best_of_n: return "best_of_n";
    case Algorithm::sla: return "sla";
    case Algorithm::mcts: return "mcts";
  }
  throw ParamError("unknown algorithm tag");
}

Algorithm algorithm_from_name(const std::string& name) {
  if (name == "greedy") return Algorithm::greedy;
  if (name == "sample") return Algorithm::sample;
  if (name == "beam") return Algorithm::beam;
  if (name == "best_of_n") return Algorithm::best_of_n;
  if (name == "sla") return Algorithm::sla;
  if (name == "mcts") return Algorithm::mcts;
  throw ParamError(cat("unknown algorithm '", name, "'"));
}

namespace {

int argmax_token(const std::vector<double>& logits) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
    if (logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(best)]) best = i;
  }
  return best;
}

std::vector<double> softmax_copy(const std::vector<double>& logits) {
  std::vector<double> p = logits;
  kernels::softmax_row(p.data(), p.size());
  return p;
}

double log_prob_of(const std::vector<double>& logits, int tok) {
  std::vector<double> ls = logits;
  kernels::log_softmax_row(ls.data(), ls.size());
  return ls[static_cast<size_t>(tok)];
}

// Response-token budget: the smaller of max_new_tokens and the sequence room
// left after the prompt.
int response_cap(const RewardTransformer& m, size_t prompt_len,
                 const DecodeParams& params) {
  if (params.max_new_tokens < 0) {
    throw ParamError(cat("max_new_tokens must be >= 0, got ", params.max_new_tokens));
  }
  if (static_cast<int>(prompt_len) > m.config.max_seq_len) {
    throw CapacityError(cat("prompt of ", prompt_len, " tokens exceeds max_seq_len ",
                            m.config.max_seq_len));
  }
  const int room = m.config.max_seq_len - static_cast<int>(prompt_len);
  if (room == 0 && params.max_new_tokens > 0) {
    throw CapacityError(cat("prompt of ", prompt_len, " tokens fills max_seq_len ",
                            m.config.max_seq_len, "; no room to decode"));
  }
  return std::min(params.max_new_tokens, room);
}

void feed_tokens(const RewardTransformer& m, LeafCursor& cur,
                 const std::vector<int>& tokens) {
  std::vector<LeafCursor*> one{&cur};
  for (int t : tokens) step_leaves(m, one, {t});
}

void check_prompt(const std::vector<int>& prompt) {
  if (prompt.empty()) throw ContractError("prompt is empty");
}

}  // namespace

double trajectory_log_likelihood(const RewardTransformer& m, const Trajectory& t) {
  check_prompt(t.prompt);
  if (t.response.empty()) return 0.0;
  LeafCursor cur(m, nullptr);
  feed_tokens(m, cur, t.prompt);
  double lp = 0.0;
  std::vector<LeafCursor*> one{&cur};
  for (size_t j = 0; j < t.response.size(); ++j) {
    lp += log_prob_of(cur.last_logits(), t.response[j]);
    if (j + 1 < t.response.size()) step_leaves(m, one, {t.response[j]});
  }
  return lp;
}

Trajectory greedy_decode(const RewardTransformer& m, const std::vector<int>& prompt,
                         const DecodeParams& params) {
  check_prompt(prompt);
  const int cap = response_cap(m, prompt.size(), params);
  LeafCursor cur(m, nullptr);
  feed_tokens(m, cur, prompt);
  Trajectory t;
  t.prompt = prompt;
  t.final_reward = cur.last_reward();
  std::vector<LeafCursor*> one{&cur};
  while (static_cast<int>(t.response.size()) < cap) {
    const int tok = argmax_token(cur.last_logits());
    t.step_logprobs.push_back(log_prob_of(cur.last_logits(), tok));
    step_leaves(m, one, {tok});
    t.response.push_back(tok);
    t.final_reward = cur.last_reward();
    if (tok == params.eos_id) break;
  }
  return t;
}

std::vector<std::pair<int, double>> sampling_distribution(
    const std::vector<double>& logits, double temperature, int top_k, double top_p) {
  if (temperature <= 0.0) {
    throw ParamError(cat("temperature must be > 0, got ", temperature));
  }
  if (top_k < 1) throw ParamError(cat("top_k must be >= 1, got ", top_k));
  if (top_p <= 0.0 || top_p > 1.0) {
    throw ParamError(cat("top_p must be in (0, 1], got ", top_p));
  }
  const int vocab = static_cast<int>(logits.size());
  const int kk = std::min(top_k, vocab);
  std::vector<double> scaled = logits;
  for (double& x : scaled) x /= temperature;
  kernels::softmax_row(scaled.data(), scaled.size());
  std::vector<int> order(static_cast<size_t>(vocab));
  for (int i = 0; i < vocab; ++i) order[static_cast<size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double pa = scaled[static_cast<size_t>(a)];
    const double pb = scaled[static_cast<size_t>(b)];
    return pa != pb ? pa > pb : a < b;
  });
  double topk_mass = 0.0;
  for (int i = 0; i < kk; ++i) topk_mass += scaled[static_cast<size_t>(order[i])];
  int support = kk;
  double cum = 0.0;
  for (int i = 0; i < kk; ++i) {
    cum += scaled[static_cast<size_t>(order[i])] / topk_mass;
    if (cum >= top_p) {
      support = i + 1;
      break;
    }
  }
  double mass = 0.0;
  for (int i = 0; i < support; ++i) mass += scaled[static_cast<size_t>(order[i])];
  std::vector<std::pair<int, double>> dist;
  dist.reserve(static_cast<size_t>(support));
  for (int i = 0; i < support; ++i) {
    const int tok = order[static_cast<size_t>(i)];
    dist.emplace_back(tok, scaled[static_cast<size_t>(tok)] / mass);
  }
  return dist;
}

Trajectory sample_decode(const RewardTransformer& m, const std::vector<int>& prompt,
                         const DecodeParams& params) {
  check_prompt(prompt);
  if (params.temperature <= 0.0) {
    throw ParamError(cat("temperature must be > 0, got ", params.temperature));
  }
  if (params.top_k < 1) throw ParamError(cat("top_k must be >= 1, got ", params.top_k));
  if (params.top_p <= 0.0 || params.top_p > 1.0) {
    throw ParamError(cat("top_p must be in (0, 1], got ", params.top_p));
  }
  const int cap = response_cap(m, prompt.size(), params);
  Rng rng(derive_seed(params.seed, "sample-decode"));

  LeafCursor cur(m, nullptr);
  feed_tokens(m, cur, prompt);
  Trajectory t;
  t.prompt = prompt;
  t.final_reward = cur.last_reward();
  std::vector<LeafCursor*> one{&cur};
  while (static_cast<int>(t.response.size()) < cap) {
    const std::vector<std::pair<int, double>> dist = sampling_distribution(
        cur.last_logits(), params.temperature, params.top_k, params.top_p);
    const double u = rng.uniform();
    int tok = dist.back().first;
    double acc = 0.0;
    for (const auto& [cand, prob] : dist) {
      acc += prob;
      if (u < acc) {
        tok = cand;
        break;
      }
    }
    t.step_logprobs.push_back(log_prob_of(cur.last_logits(), tok));
    step_leaves(m, one, {tok});
    t.response.push_back(tok);
    t.final_reward = cur.last_reward();
    if (tok == params.eos_id) break;
  }
  return t;
}

Trajectory beam_search(const RewardTransformer& m, const std::vector<int>& prompt,
                       const DecodeParams& params) {
  check_prompt(prompt);
  if (params.beam_width < 1) {
    throw ParamError(cat("beam_width must be >= 1, got ", params.beam_width));
  }
  const int cap = response_cap(m, prompt.size(), params);
  const int vocab = m.config.vocab_size;

  struct Beam {
    LeafCursor cur;
    std::vector<int> resp;
    double lp = 0.0;
    double final_reward = 0.0;
  };
  Trajectory t;
  t.prompt = prompt;
  Beam seed{LeafCursor(m, nullptr), {}, 0.0, 0.0};
  feed_tokens(m, seed.cur, prompt);
  seed.final_reward = seed.cur.last_reward();
  if (cap == 0) {
    t.final_reward = seed.final_reward;
    return t;
  }
  std::vector<Beam> active;
  active.push_back(std::move(seed));
  std::vector<Beam> finished;

  auto better = [](double lp_a, const std::vector<int>& ra, double lp_b,
                   const std::vector<int>& rb) {
    if (lp_a != lp_b) return lp_a > lp_b;
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };

  while (!active.empty()) {
    struct Cand {
      size_t beam;
      int tok;
      double lp;
      std::vector<int> resp;
    };
    std::vector<Cand> cands;
    cands.reserve(active.size() * static_cast<size_t>(vocab));
    for (size_t b = 0; b < active.size(); ++b) {
      std::vector<double> ls = active[b].cur.last_logits();
      kernels::log_softmax_row(ls.data(), ls.size());
      for (int tok = 0; tok < vocab; ++tok) {
        Cand c{b, tok, active[b].lp + ls[static_cast<size_t>(tok)], active[b].resp};
        c.resp.push_back(tok);
        cands.push_back(std::move(c));
      }
    }
    std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
      return better(a.lp, a.resp, b.lp, b.resp);
    });
    const size_t take = std::min(cands.size(), static_cast<size_t>(params.beam_width));

    std::vector<Beam> next;
    next.reserve(take);
    std::vector<LeafCursor*> step_cursors;
    std::vector<int> step_tokens;
    for (size_t i = 0; i < take; ++i) {
      Beam nb{active[cands[i].beam].cur, std::move(cands[i].resp), cands[i].lp, 0.0};
      next.push_back(std::move(nb));
      step_cursors.push_back(&next.back().cur);
      step_tokens.push_back(cands[i].tok);
    }
    step_leaves(m, step_cursors, step_tokens);
    active.clear();
    for (Beam& nb : next) {
      nb.final_reward = nb.cur.last_reward();
      const bool done = nb.resp.back() == params.eos_id ||
                        static_cast<int>(nb.resp.size()) >= cap;
      (done ? finished : active).push_back(std::move(nb));
    }
    if (!finished.empty() && !active.empty()) {
      double best_f = finished[0].lp, best_a = active[0].lp;
      for (const Beam& b : finished) best_f = std::max(best_f, b.lp);
      for (const Beam& b : active) best_a = std::max(best_a, b.lp);
      // Extensions only lower a beam's log-likelihood, so a strictly better
      // finished beam is final.
      if (best_f > best_a) break;
    }
  }
  size_t best = 0;
  for (size_t i = 1; i < finished.size(); ++i) {
    if (better(finished[i].lp, finished[i].resp, finished[best].lp,
               finished[best].resp)) {
      best = i;
    }
  }
  t.response = std::move(finished[best].resp);
  t.final_reward = finished[best].final_reward;
  return t;
}

Trajectory best_of_n(const RewardTransformer& m, const std::vector<int>& prompt,
                     int n_samples, const DecodeParams& params) {
  return best_of_n(m, prompt, n_samples, params,
                   [](const Trajectory& t) { return t.final_reward; });
}

Trajectory best_of_n(const RewardTransformer& m, const std::vector<int>& prompt,
                     int n_samples, const DecodeParams& params,
                     const std::function<double(const Trajectory&)>& scorer) {
  if (n_samples < 1) throw ParamError(cat("n_samples must be >= 1, got ", n_samples));
  Trajectory best;
  double best_score = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    DecodeParams p = params;
    p.seed = derive_seed(params.seed, "best-of-n", static_cast<uint64_t>(i));
    Trajectory s = sample_decode(m, prompt, p);
    const double score = scorer(s);
    if (i == 0 || score > best_score) {
      best_score = score;
      best = std::move(s);
    }
  }
  return best;
}

// ---- search tree ------------------------------------------------------------

namespace {

// Response tokens accumulated from the committed state down to (and
// including) this node's block.
int node_response_len(const SearchTree& tree, const SearchNode* node) {
  int len = static_cast<int>(tree.committed.size());
  for (const SearchNode* p = node; p != nullptr; p = p->parent) {
    len += static_cast<int>(p->block.size());
  }
  return len;
}

std::vector<int> node_full_tokens(const SearchTree& tree, const SearchNode* node) {
  std::vector<const SearchNode*> path;
  for (const SearchNode* p = node; p != nullptr; p = p->parent) path.push_back(p);
  std::vector<int> toks = tree.prompt;
  toks.insert(toks.end(), tree.committed.begin(), tree.committed.end());
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    toks.insert(toks.end(), (*it)->block.begin(), (*it)->block.end());
  }
  return toks;
}

// Proposal ids for a node's children: the `width` most probable next tokens
// (or a without-replacement draw at `temperature` in sampled mode).
std::vector<int> propose_first_tokens(const std::vector<double>& logits, int width,
                                      bool sampled, double temperature, Rng* rng) {
  const int vocab = static_cast<int>(logits.size());
  const int w = std::min(width, vocab);
  if (!sampled) {
    std::vector<double> p = softmax_copy(logits);
    std::vector<int> order(static_cast<size_t>(vocab));
    for (int i = 0; i < vocab; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double pa = p[static_cast<size_t>(a)];
      const double pb = p[static_cast<size_t>(b)];
      return pa != pb ? pa > pb : a < b;
    });
    order.resize(static_cast<size_t>(w));
    return order;
  }
  std::vector<double> scaled = logits;
  for (double& x : scaled) x /= temperature;
  kernels::softmax_row(scaled.data(), scaled.size());
  std::vector<std::pair<int, double>> pool;
  pool.reserve(static_cast<size_t>(vocab));
  for (int i = 0; i < vocab; ++i) pool.emplace_back(i, scaled[static_cast<size_t>(i)]);
  std::vector<int> out;
  for (int draw = 0; draw < w; ++draw) {
    double total = 0.0;
    for (const auto& entry : pool) total += entry.second;
    const double u = rng->uniform() * total;
    double acc = 0.0;
    size_t pick = pool.size() - 1;
    for (size_t i = 0; i < pool.size(); ++i) {
      acc += pool[i].second;
      if (u < acc) {
        pick = i;
        break;
      }
    }
    out.push_back(pool[pick].first);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return out;
}

// One categorical draw from softmax(logits / temperature).
int sample_token(const std::vector<double>& logits, double temperature, Rng& rng) {
  std::vector<double> p = logits;
  for (double& x : p) x /= temperature;
  kernels::softmax_row(p.data(), p.size());
  const double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

// Expands every parent into its children blocks, stepping all new leaves
// through the model together one position at a time. Continuations are greedy
// (or drawn at `temperature` in sampled mode), early stop at EOS or the
// response cap. MCTS passes no rng and always expands deterministically.
void expand_children(const RewardTransformer& m, SearchTree& tree,
                     const std::vector<SearchNode*>& parents,
                     const DecodeParams& params, int width, int block_len, int cap,
                     const BlockScorer& scorer, Rng* sample_rng) {
  const bool sampled = params.sla.sampled_children && sample_rng != nullptr;
  struct Pending {
    SearchNode* parent;
    int first_tok;
    double prior;
    std::unique_ptr<LeafCursor> cur;
    int base_len;  // response tokens up to the parent
    bool done = false;
  };
  std::vector<Pending> pending;
  for (SearchNode* parent : parents) {
    const std::vector<int> firsts = propose_first_tokens(
        parent->last_logits, width, sampled, params.temperature, sample_rng);
    const std::vector<double> probs = softmax_copy(parent->last_logits);
    const int base = node_response_len(tree, parent);
    for (int tok : firsts) {
      Pending p;
      p.parent = parent;
      p.first_tok = tok;
      p.prior = probs[static_cast<size_t>(tok)];
      p.cur = std::make_unique<LeafCursor>(m, parent->cache_segment);
      p.base_len = base;
      pending.push_back(std::move(p));
    }
  }

  std::vector<LeafCursor*> step_cursors;
  std::vector<int> step_tokens;
  std::vector<Pending*> stepped;
  for (int pos = 0; pos < block_len; ++pos) {
    step_cursors.clear();
    step_tokens.clear();
    stepped.clear();
    for (Pending& p : pending) {
      if (p.done) continue;
      const int tok =
          pos == 0 ? p.first_tok
          : sampled ? sample_token(p.cur->last_logits(), params.temperature, *sample_rng)
                    : argmax_token(p.cur->last_logits());
      step_cursors.push_back(p.cur.get());
      step_tokens.push_back(tok);
      stepped.push_back(&p);
    }
    if (step_cursors.empty()) break;
    step_leaves(m, step_cursors, step_tokens);
    for (size_t i = 0; i < stepped.size(); ++i) {
      Pending& p = *stepped[i];
      if (step_tokens[i] == params.eos_id || p.base_len + p.cur->fed() >= cap) {
        p.done = true;
      }
    }
  }

  for (Pending& p : pending) {
    auto child = std::make_unique<SearchNode>();
    child->block = p.cur->fed_tokens();
    child->parent = p.parent;
    child->reward_estimate = p.cur->last_reward();
    child->prior = p.prior;
    child->terminal = child->block.back() == params.eos_id ||
                      p.base_len + static_cast<int>(child->block.size()) >= cap;
    child->cache_segment = p.cur->seal();
    child->last_logits = p.cur->last_logits();
    child->q_value = child->reward_estimate;
    if (scorer) {
      child->reward_estimate =
          scorer(node_full_tokens(tree, child.get()), child->reward_estimate);
      child->q_value = child->reward_estimate;
    }
    p.parent->children.push_back(std::move(child));
    tree.blocks_evaluated += 1;
  }
}

void collect_expandable(SearchNode* node, int depth, int max_depth,
                        std::vector<SearchNode*>& out) {
  if (node->is_leaf()) {
    if (!node->terminal && depth < max_depth) out.push_back(node);
    return;
  }
  for (auto& c : node->children) {
    collect_expandable(c.get(), depth + 1, max_depth, out);
  }
}

double recompute_q(SearchNode* node) {
  if (node->is_leaf()) {
    node->q_value = node->reward_estimate;
  } else {
    double best = recompute_q(node->children[0].get());
    for (size_t i = 1; i < node->children.size(); ++i) {
      best = std::max(best, recompute_q(node->children[i].get()));
    }
    node->q_value = best;
  }
  return node->q_value;
}

void check_root_expandable(const SearchTree& tree, int cap) {
  if (!tree.root) throw ContractError("search tree has no root");
  if (tree.root->terminal) throw ContractError("root is terminal (ends with EOS)");
  if (static_cast<int>(tree.committed.size()) >= cap) {
    throw ContractError(cat("root is terminal (", tree.committed.size(),
                            " committed tokens reach the cap ", cap, ")"));
  }
}

SearchNode* best_root_child_by_q(const SearchTree& tree) {
  SearchNode* best = nullptr;
  for (auto& c : tree.root->children) {
    if (best == nullptr || c->q_value > best->q_value ||
        (c->q_value == best->q_value && c->block[0] < best->block[0])) {
      best = c.get();
    }
  }
  if (best == nullptr) throw ContractError("root has no children to choose from");
  return best;
}

}  // namespace

SearchTree make_search_tree(const RewardTransformer& m, const std::vector<int>& prompt) {
  check_prompt(prompt);
  SearchTree tree;
  tree.prompt = prompt;
  LeafCursor cur(m, nullptr);
  feed_tokens(m, cur, prompt);
  tree.root = std::make_unique<SearchNode>();
  tree.root->cache_segment = cur.seal();
  tree.root->last_logits = cur.last_logits();
  tree.root->reward_estimate = cur.last_reward();
  tree.root->q_value = cur.last_reward();
  tree.frontier = {tree.root.get()};
  return tree;
}

std::vector<int> sla_step(const RewardTransformer& m, SearchTree& tree,
                          const DecodeParams& params, const BlockScorer& scorer) {
  if (params.sla.depth < 1 || params.sla.width < 1 || params.sla.step < 1) {
    throw ParamError("sla depth, width, and step must all be >= 1");
  }
  const int cap = response_cap(m, tree.prompt.size(), params);
  check_root_expandable(tree, cap);

  Rng child_rng(derive_seed(params.seed, "sla-children",
                            static_cast<uint64_t>(tree.steps_done)));
  for (;;) {
    std::vector<SearchNode*> leaves;
    collect_expandable(tree.root.get(), 0, params.sla.depth, leaves);
    if (leaves.empty()) break;
    expand_children(m, tree, leaves, params, params.sla.width, params.sla.step, cap,
                    scorer, &child_rng);
  }
  recompute_q(tree.root.get());
  tree.frontier.clear();
  collect_expandable(tree.root.get(), 0, params.sla.depth + 1, tree.frontier);
  tree.steps_done += 1;
  return best_root_child_by_q(tree)->block;
}

std::vector<int> mcts_step(const RewardTransformer& m, SearchTree& tree,
                           const DecodeParams& params, const BlockScorer& scorer) {
  if (params.mcts.rollouts < 1 || params.mcts.width < 1 || params.mcts.step < 1) {
    throw ParamError("mcts rollouts, width, and step must all be >= 1");
  }
  if (params.mcts.ucb_c < 0.0) throw ParamError("mcts ucb_c must be >= 0");
  const int cap = response_cap(m, tree.prompt.size(), params);
  check_root_expandable(tree, cap);

  auto select_child = [&](SearchNode* node) -> SearchNode* {
    SearchNode* pick = nullptr;
    // Unvisited children first, lowest first token; then max UCB.
    for (auto& c : node->children) {
      if (c->visit_count > 0) continue;
      if (pick == nullptr || c->block[0] < pick->block[0]) pick = c.get();
    }
    if (pick != nullptr) return pick;
    double best_ucb = 0.0;
    for (auto& c : node->children) {
      const double mean = c->q_value / c->visit_count;
      const double ucb =
          mean + params.mcts.ucb_c *
                     std::sqrt(std::log(static_cast<double>(node->visit_count)) /
                               c->visit_count);
      if (pick == nullptr || ucb > best_ucb ||
          (ucb == best_ucb && c->block[0] < pick->block[0])) {
        pick = c.get();
        best_ucb = ucb;
      }
    }
    return pick;
  };

  for (int iter = 0; iter < params.mcts.rollouts; ++iter) {
    SearchNode* node = tree.root.get();
    while (!node->children.empty()) node = select_child(node);
    if (!node->terminal) {
      const int base = node_response_len(tree, node);
      if (base < cap) {
        expand_children(m, tree, {node}, params, params.mcts.width, params.mcts.step,
                        cap, scorer, nullptr);
        node = select_child(node);
      }
    }
    // Simulate: greedy rollout from the node to EOS or the cap.
    double reward = node->reward_estimate;
    {
      const int base = node_response_len(tree, node);
      const bool node_open = !node->terminal && base < cap;
      if (node_open) {
        LeafCursor cur(m, node->cache_segment);
        std::vector<LeafCursor*> one{&cur};
        std::vector<int> rollout;
        const std::vector<double>* logits = &node->last_logits;
        while (base + static_cast<int>(rollout.size()) < cap) {
          const int tok = argmax_token(*logits);
          step_leaves(m, one, {tok});
          rollout.push_back(tok);
          logits = &cur.last_logits();
          if (tok == params.eos_id) break;
        }
        tree.rollout_tokens += static_cast<int64_t>(rollout.size());
        if (!rollout.empty()) {
          reward = cur.last_reward();
          if (scorer) {
            std::vector<int> full = node_full_tokens(tree, node);
            full.insert(full.end(), rollout.begin(), rollout.end());
            reward = scorer(full, reward);
          }
        }
      }
    }
    for (SearchNode* p = node; p != nullptr; p = p->parent) {
      p->visit_count += 1;
      p->q_value += reward;
    }
  }

  SearchNode* best = nullptr;
  for (auto& c : tree.root->children) {
    if (c->visit_count == 0) continue;
    if (best == nullptr) {
      best = c.get();
      continue;
    }
    const double mc = c->q_value / c->visit_count;
    const double mb = best->q_value / best->visit_count;
    if (mc > mb || (mc == mb && c->block[0] < best->block[0])) best = c.get();
  }
  if (best == nullptr) throw ContractError("no root child was visited");
  tree.steps_done += 1;
  return best->block;
}

void commit_block(SearchTree& tree, const std::vector<int>& block, bool retain_subtree) {
  if (!tree.root) throw ContractError("search tree has no root");
  std::unique_ptr<SearchNode> promoted;
  for (auto& c : tree.root->children) {
    if (c->block == block) {
      promoted = std::move(c);
      break;
    }
  }
  if (!promoted) {
    throw ContractError(cat("block of ", block.size(), " tokens is not a root action"));
  }
  tree.step_q.push_back(promoted->visit_count > 0
                            ? promoted->q_value / promoted->visit_count
                            : promoted->q_value);
  tree.committed.insert(tree.committed.end(), promoted->block.begin(),
                        promoted->block.end());
  promoted->block.clear();
  promoted->parent = nullptr;
  promoted->visit_count = 0;
  if (!retain_subtree) promoted->children.clear();
  tree.root = std::move(promoted);
  tree.frontier.clear();
  collect_expandable(tree.root.get(), 0, std::numeric_limits<int>::max(),
                     tree.frontier);
}

Trajectory sla_decode(const RewardTransformer& m, const std::vector<int>& prompt,
                      const DecodeParams& params, const EmitFn& emit) {
  SearchTree tree = make_search_tree(m, prompt);
  const int cap = response_cap(m, prompt.size(), params);
  while (static_cast<int>(tree.committed.size()) < cap && !tree.root->terminal) {
    std::vector<int> block = sla_step(m, tree, params);
    commit_block(tree, block, true);
    if (emit) emit(block);
  }
  Trajectory t;
  t.prompt = prompt;
  t.response = std::move(tree.committed);
  t.step_q = std::move(tree.step_q);
  t.final_reward = tree.root->reward_estimate;
  t.blocks_evaluated = tree.blocks_evaluated;
  return t;
}

Trajectory mcts_decode(const RewardTransformer& m, const std::vector<int>& prompt,
                       const DecodeParams& params) {
  SearchTree tree = make_search_tree(m, prompt);
  const int cap = response_cap(m, prompt.size(), params);
  while (static_cast<int>(tree.committed.size()) < cap && !tree.root->terminal) {
    std::vector<int> block = mcts_step(m, tree, params);
    // Reference behavior: every action is a fresh search; only the committed
    // path's cache survives.
    commit_block(tree, block, false);
  }
  Trajectory t;
  t.prompt = prompt;
  t.response = std::move(tree.committed);
  t.step_q = std::move(tree.step_q);
  t.final_reward = tree.root->reward_estimate;
  t.blocks_evaluated = tree.blocks_evaluated;
  return t;
}

Trajectory decode(const RewardTransformer& m, const std::vector<int>& prompt,
                  const DecodeParams& params) {
  switch (params.algorithm) {
    case Algorithm::greedy: return greedy_decode(m, prompt, params);
    case Algorithm::sample: return sample_decode(m, prompt, params);
    case Algorithm::beam: return beam_search(m, prompt, params);
    case Algorithm::best_of_n: return best_of_n(m, prompt, params.n_samples, params);
    case Algorithm::sla: return sla_decode(m, prompt, params);
    case Algorithm::mcts: return mcts_decode(m, prompt, params);
  }
  throw ParamError("unknown algorithm tag");
}

}  // namespace sla
