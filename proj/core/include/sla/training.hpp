#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sla/model.hpp"
#include "sla/tasks.hpp"

namespace sla {

struct PreferencePair {
  std::vector<int> prompt;
  std::vector<int> chosen;    // higher oracle score, strictly
  std::vector<int> rejected;
  double chosen_oracle = 0.0;
  double rejected_oracle = 0.0;
};

enum class TrainMode { freeze_policy, dpo_then_freeze };

struct TrainConfig {
  int epochs = 3;
  double learning_rate = 5e-5;
  int batch_size = 1;
  TrainMode mode = TrainMode::freeze_policy;
  double dpo_beta = 0.1;
};

struct LossRecord {
  int step = 0;   // global optimizer step, 0-based
  int epoch = 0;  // 0-based
  double loss = 0.0;
  double learning_rate = 0.0;
};

// Cosine decay from lr0 at step 0 to exactly 0 at step total-1 (total==1
// keeps lr0).
double cosine_lr(double lr0, int step, int total_steps);

// Adam with standard moment defaults over an explicit parameter list.
// Parameters without a gradient are skipped for the step.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void zero_grad();
  void step(double lr);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

struct CollectConfig {
  int samples_per_prompt = 5;
  double temperature = 0.8;
  int max_new_tokens = 12;
  uint64_t seed = 0;
  int workers = 1;
};

// Samples samples_per_prompt responses per prompt at the given temperature,
// scores them with the oracle, pairs the best against the worst. Prompts
// whose samples all tie yield no pair. Each prompt draws from its own
// derived seed stream, so output is identical for any worker count.
std::vector<PreferencePair> collect_pairs(
    const RewardTransformer& model, const std::vector<std::vector<int>>& prompts,
    const std::function<double(const std::vector<int>&, const std::vector<int>&)>&
        oracle,
    const CollectConfig& config);

// Token-averaged pairwise ranking loss:
//   -log sigmoid( mean R'(chosen) - mean R'(rejected) )
// with means over response positions only (the shared prompt is excluded).
Tensor bt_loss(const RewardTransformer& model, const PreferencePair& pair);

// Trains only the reward channel (input projection, per-layer reward FFNs,
// reward head); policy parameters are frozen and provably untouched. Cosine
// schedule over all steps. Non-finite loss aborts naming the pair.
std::vector<LossRecord> train_reward_channel(RewardTransformer& model,
                                             const std::vector<PreferencePair>& pairs,
                                             const TrainConfig& config);

struct DpoResult {
  std::vector<LossRecord> dpo_history;
  std::vector<LossRecord> reward_history;
};

// Direct preference optimization of the policy against a frozen reference:
//   -log sigmoid( beta * [ (log pi - log pi_ref)(chosen)
//                        - (log pi - log pi_ref)(rejected) ] )
// with log-likelihoods summed over response tokens. The reward channel is
// frozen during DPO and retrained afterwards on the same pairs.
DpoResult train_dpo(RewardTransformer& model, const RewardTransformer& reference,
                    const std::vector<PreferencePair>& pairs,
                    const TrainConfig& config);

// Next-token cross-entropy over prompt+response sequences; trains the policy
// channel only. At a fresh init the loss starts near ln(vocab_size).
std::vector<LossRecord> pretrain_policy(RewardTransformer& model,
                                        const std::vector<Example>& corpus,
                                        const TrainConfig& config);

// Same pairwise objective, but scored by an adapter head on the frozen
// model's final policy states (the reward-channel ablation baseline).
Tensor adapter_bt_loss(const RewardTransformer& model, const AdapterRewardHead& adapter,
                       const PreferencePair& pair);
std::vector<LossRecord> train_adapter(const RewardTransformer& model,
                                      AdapterRewardHead& adapter,
                                      const std::vector<PreferencePair>& pairs,
                                      const TrainConfig& config);

// One JSON object per line: prompt/chosen/rejected arrays plus both oracle
// scores.
void write_pairs_jsonl(const std::string& path, const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> read_pairs_jsonl(const std::string& path);

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& history);

}  // namespace sla
