#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sla/tensor.hpp"

namespace sla {

// Decoder-only policy transformer with a parallel token-level reward
// channel. The policy channel is a standard causal transformer; the reward
// channel is position-wise: at layer j it consumes [h_p^j : h_r^j] through a
// small FFN with residual and norm, and never attends across positions. A
// linear head on the final policy state gives next-token logits; a linear
// head on the final reward state gives the scalar per-position reward.

struct ModelConfig {
  int vocab_size = 16;
  int d_model = 96;
  int n_layers = 4;
  int n_heads = 4;
  int d_ffn = 384;
  int d_reward = 32;
  int max_seq_len = 256;

  int d_head() const { return d_model / n_heads; }
  // Reward-channel FFN hidden width. 2x keeps the whole channel under 10% of
  // the policy channel in both parameters and per-token flops.
  int d_reward_hidden() const { return 2 * d_reward; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor norm1_g, norm1_b;  // after attention residual
  Tensor norm2_g, norm2_b;  // after FFN residual
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor r_w1, r_b1, r_w2, r_b2;  // reward FFN on [h_p : h_r]
  Tensor r_norm_g, r_norm_b;
};

struct RewardTransformer {
  ModelConfig config;
  Tensor token_embedding;               // [vocab, d_model]
  Tensor reward_proj_w, reward_proj_b;  // embeds X into the reward channel
  std::vector<LayerWeights> layers;
  Tensor policy_head_w, policy_head_b;  // [d_model, vocab], [vocab]
  Tensor reward_head_w, reward_head_b;  // [d_reward, 1], [1]
  std::vector<double> pos_encoding;     // sinusoidal, [max_seq_len * d_model], fixed

  // Zero-valued weights with the right shapes (checkpoint loading target).
  static RewardTransformer zeros(const ModelConfig& config);
  // Seeded random initialization; identical seeds give identical weights.
  static RewardTransformer init(const ModelConfig& config, uint64_t seed);

  // Named parameters in a fixed order (also the checkpoint order).
  std::vector<std::pair<std::string, Tensor>> parameters() const;
  std::vector<std::pair<std::string, Tensor>> policy_parameters() const;
  std::vector<std::pair<std::string, Tensor>> reward_parameters() const;

  void set_policy_requires_grad(bool v) const;
  void set_reward_requires_grad(bool v) const;

  // Deep copy with fresh leaf tensors (DPO reference snapshot).
  RewardTransformer clone() const;
};

struct ChannelCounts {
  int64_t policy = 0;
  int64_t reward = 0;
};
ChannelCounts parameter_counts(const ModelConfig& config);
// Weight multiply-adds per token, counted analytically from shapes.
ChannelCounts flops_per_token(const ModelConfig& config);

// ---- full-sequence ops (autograd path) -----------------------------------

// Token embedding plus sinusoidal positional encoding, rows [T, d_model].
// start_pos shifts the positional encoding for continuation spans.
Tensor embed(const RewardTransformer& m, const std::vector<int>& tokens,
             int start_pos = 0);

// One policy layer over the whole sequence with causal attention:
//   Norm(h_p + FFN(Norm(h_p + MHA(h_p))))
// Both residuals read the layer input, matching the update rule the model
// is defined by.
Tensor policy_block(const RewardTransformer& m, const Tensor& h_p, int layer);

// One position-wise reward layer: Norm(h_r + FFN([h_p : h_r])).
Tensor reward_block(const RewardTransformer& m, const Tensor& h_p,
                    const Tensor& h_r, int layer);

struct ForwardOut {
  Tensor logits;      // [T, vocab]; row i parameterizes pi(token | x_<=i)
  Tensor rewards;     // [T, 1]; entry i is R'(x_<=i)
  Tensor h_p_final;   // [T, d_model] final policy states (adapter input)
};

ForwardOut forward(const RewardTransformer& m, const std::vector<int>& tokens);

// ---- incremental decoding path (no autograd) ------------------------------

// Immutable cached activations for one committed span of tokens. Segments
// chain through `parent`; sibling branches share ancestors without copying.
struct KVCacheSegment {
  std::shared_ptr<const KVCacheSegment> parent;
  int start_pos = 0;
  int len = 0;
  std::vector<std::vector<double>> k;  // per layer, [len * d_model]
  std::vector<std::vector<double>> v;

  int end_pos() const { return start_pos + len; }
};

struct IncrementalOut {
  std::vector<std::vector<double>> logits;  // per new position
  std::vector<double> rewards;              // per new position
  std::shared_ptr<const KVCacheSegment> segment;
};

// Evaluates `new_tokens` as a continuation of `cache` (which may be null).
// Matches forward() on the concatenated sequence within 1e-9 per value; the
// two paths share their numeric kernels, so in practice they agree bitwise.
IncrementalOut forward_incremental(const RewardTransformer& m,
                                   std::shared_ptr<const KVCacheSegment> cache,
                                   const std::vector<int>& new_tokens);

// Evaluates several (cache, block) continuations, stepping all blocks
// through the weights together one position at a time. Per-leaf results are
// identical to sequential forward_incremental calls; the batching only
// amortizes weight-matrix traffic.
std::vector<IncrementalOut> batched_forward_leaves(
    const RewardTransformer& m,
    const std::vector<std::pair<std::shared_ptr<const KVCacheSegment>,
                                std::vector<int>>>& leaves);

// One in-flight continuation of a cache chain. Decoding loops feed tokens
// (batched across branch tips via step_leaves), read logits/rewards at each
// step, and seal the accumulated span into an immutable segment.
class LeafCursor {
 public:
  LeafCursor(const RewardTransformer& m,
             std::shared_ptr<const KVCacheSegment> parent);

  int next_pos() const { return base_len_ + fed_; }
  int fed() const { return fed_; }
  const std::vector<double>& last_logits() const { return last_logits_; }
  double last_reward() const { return last_reward_; }
  const std::vector<int>& fed_tokens() const { return tokens_; }

  // Snapshot of everything fed so far as an immutable segment.
  std::shared_ptr<const KVCacheSegment> seal() const;

 private:
  friend void step_leaves(const RewardTransformer& m,
                          const std::vector<LeafCursor*>& leaves,
                          const std::vector<int>& tokens);
  const RewardTransformer* model_;
  std::shared_ptr<const KVCacheSegment> parent_;
  std::vector<const KVCacheSegment*> chain_;  // oldest first
  int base_len_ = 0;
  int fed_ = 0;
  std::vector<int> tokens_;
  std::vector<std::vector<double>> k_, v_;  // per layer, growing
  std::vector<double> last_logits_;
  double last_reward_ = 0.0;
};

// Feeds tokens[i] to leaves[i] (one position each) in a single batched pass.
void step_leaves(const RewardTransformer& m,
                 const std::vector<LeafCursor*>& leaves,
                 const std::vector<int>& tokens);

// ---- adapter baseline ------------------------------------------------------

// Reward head bolted onto the final policy hidden state: `depth` linear
// layers (hidden width d_model, gelu between) ending in a scalar. depth=1 is
// the linear probe with d_model + 1 parameters.
struct AdapterRewardHead {
  int depth = 1;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static AdapterRewardHead init(const ModelConfig& config, int depth, uint64_t seed);
  std::vector<std::pair<std::string, Tensor>> parameters() const;
  int64_t parameter_count() const;
};

// Per-position rewards [T, 1] from final policy states [T, d_model].
Tensor adapter_rewards(const AdapterRewardHead& a, const Tensor& h_p_final);

}  // namespace sla
