#include "sla/training.hpp"

#include <cmath>
#include <fstream>
#include <optional>

#include <json.hpp>

#include "sla/common.hpp"
#include "sla/decode.hpp"
#include "sla/rng.hpp"

namespace sla {

double cosine_lr(double lr0, int step, int total_steps) {
  if (total_steps <= 1) return lr0;
  const double x = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Adam::step(double lr) {
  t_ += 1;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    const std::vector<double>& g = params_[i].grad();
    std::vector<double>& w = params_[i].mutable_data();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

std::vector<PreferencePair> collect_pairs(
    const RewardTransformer& model, const std::vector<std::vector<int>>& prompts,
    const std::function<double(const std::vector<int>&, const std::vector<int>&)>&
        oracle,
    const CollectConfig& config) {
  if (config.samples_per_prompt < 2) {
    throw ParamError(cat("samples_per_prompt must be >= 2, got ",
                         config.samples_per_prompt));
  }
  std::vector<std::optional<PreferencePair>> slots(prompts.size());
  parallel_for(prompts.size(), config.workers, [&](size_t i) {
    const uint64_t prompt_seed = derive_seed(config.seed, "collect", i);
    DecodeParams params;
    params.algorithm = Algorithm::sample;
    params.temperature = config.temperature;
    params.top_k = model.config.vocab_size;  // pure temperature sampling
    params.top_p = 1.0;
    params.max_new_tokens = config.max_new_tokens;

    double best = 0.0, worst = 0.0;
    std::vector<int> best_resp, worst_resp;
    for (int j = 0; j < config.samples_per_prompt; ++j) {
      params.seed = derive_seed(prompt_seed, "sample", static_cast<uint64_t>(j));
      Trajectory t = sample_decode(model, prompts[i], params);
      const double score = oracle(prompts[i], t.response);
      if (j == 0 || score > best) {
        best = score;
        best_resp = t.response;
      }
      if (j == 0 || score < worst) {
        worst = score;
        worst_resp = t.response;
      }
    }
    if (best > worst) {
      slots[i] = PreferencePair{prompts[i], best_resp, worst_resp, best, worst};
    }
  });
  std::vector<PreferencePair> out;
  out.reserve(prompts.size());
  for (auto& s : slots) {
    if (s) out.push_back(std::move(*s));
  }
  return out;
}

namespace {

// Mean R' over the response rows of (prompt + response).
Tensor response_reward_mean(const RewardTransformer& model,
                            const std::vector<int>& prompt,
                            const std::vector<int>& response) {
  if (response.empty()) throw ContractError("preference response is empty");
  std::vector<int> seq = prompt;
  seq.insert(seq.end(), response.begin(), response.end());
  ForwardOut out = forward(model, seq);
  const int64_t p = static_cast<int64_t>(prompt.size());
  return mean(slice_rows(out.rewards, p, static_cast<int64_t>(seq.size())));
}

// Sum of log P(response_i | prefix) as a graph node.
Tensor response_logprob(const RewardTransformer& model, const std::vector<int>& prompt,
                        const std::vector<int>& response) {
  if (prompt.empty()) throw ContractError("prompt is empty");
  if (response.empty()) throw ContractError("preference response is empty");
  std::vector<int> seq = prompt;
  seq.insert(seq.end(), response.begin(), response.end());
  ForwardOut out = forward(model, seq);
  const int64_t p = static_cast<int64_t>(prompt.size());
  const int64_t t = static_cast<int64_t>(seq.size());
  Tensor ls = log_softmax(slice_rows(out.logits, p - 1, t - 1));
  return sum(row_select(ls, response));
}

void check_finite(double loss, int step, size_t pair_index,
                  const PreferencePair& pair) {
  if (std::isfinite(loss)) return;
  throw ContractError(cat("non-finite loss ", loss, " at step ", step, " on pair ",
                          pair_index, " (prompt ", pair.prompt.size(),
                          " tokens, chosen ", pair.chosen.size(), ", rejected ",
                          pair.rejected.size(), ")"));
}

std::vector<Tensor> tensors_of(const std::vector<std::pair<std::string, Tensor>>& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

// Shared minibatch loop: loss_fn(i) builds the graph for item i and is
// summed over the batch, averaged, stepped with a cosine schedule.
std::vector<LossRecord> run_training(size_t n_items, const TrainConfig& config,
                                     Adam& opt,
                                     const std::function<Tensor(size_t)>& loss_fn,
                                     const std::function<void(double, int, size_t)>&
                                         check_item) {
  std::vector<LossRecord> history;
  if (n_items == 0) return history;
  const int batch = std::max(1, config.batch_size);
  const int per_epoch =
      static_cast<int>((n_items + static_cast<size_t>(batch) - 1) / batch);
  const int total_steps = config.epochs * per_epoch;
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (size_t b0 = 0; b0 < n_items; b0 += static_cast<size_t>(batch)) {
      const double lr = cosine_lr(config.learning_rate, step, total_steps);
      opt.zero_grad();
      Tensor total;
      int count = 0;
      for (size_t i = b0; i < std::min(n_items, b0 + static_cast<size_t>(batch));
           ++i) {
        Tensor li = loss_fn(i);
        check_item(li.item(), step, i);
        total = count == 0 ? li : add(total, li);
        ++count;
      }
      Tensor loss = scalar_mul(total, 1.0 / count);
      const double value = loss.item();
      backward(loss);
      opt.step(lr);
      history.push_back({step, epoch, value, lr});
      ++step;
    }
  }
  return history;
}

}  // namespace

Tensor bt_loss(const RewardTransformer& model, const PreferencePair& pair) {
  Tensor mw = response_reward_mean(model, pair.prompt, pair.chosen);
  Tensor ml = response_reward_mean(model, pair.prompt, pair.rejected);
  return scalar_mul(log_sigmoid(sub(mw, ml)), -1.0);
}

std::vector<LossRecord> train_reward_channel(RewardTransformer& model,
                                             const std::vector<PreferencePair>& pairs,
                                             const TrainConfig& config) {
  if (config.learning_rate <= 0.0 || config.epochs < 1) {
    throw ParamError("learning_rate must be > 0 and epochs >= 1");
  }
  if (pairs.empty()) throw ContractError("training needs at least one preference pair");
  model.set_policy_requires_grad(false);
  model.set_reward_requires_grad(true);
  Adam opt(tensors_of(model.reward_parameters()));
  auto history = run_training(
      pairs.size(), config, opt, [&](size_t i) { return bt_loss(model, pairs[i]); },
      [&](double v, int step, size_t i) { check_finite(v, step, i, pairs[i]); });
  model.set_policy_requires_grad(true);
  return history;
}

DpoResult train_dpo(RewardTransformer& model, const RewardTransformer& reference,
                    const std::vector<PreferencePair>& pairs,
                    const TrainConfig& config) {
  if (config.learning_rate <= 0.0 || config.epochs < 1) {
    throw ParamError("learning_rate must be > 0 and epochs >= 1");
  }
  if (pairs.empty()) throw ContractError("training needs at least one preference pair");
  // The reference is frozen, so its per-pair log-likelihoods are constants;
  // evaluate them once up front.
  std::vector<double> ref_w(pairs.size()), ref_l(pairs.size());
  {
    NoGradGuard ng;
    for (size_t i = 0; i < pairs.size(); ++i) {
      ref_w[i] = response_logprob(reference, pairs[i].prompt, pairs[i].chosen).item();
      ref_l[i] = response_logprob(reference, pairs[i].prompt, pairs[i].rejected).item();
    }
  }
  model.set_reward_requires_grad(false);
  model.set_policy_requires_grad(true);
  Adam opt(tensors_of(model.policy_parameters()));
  DpoResult result;
  result.dpo_history = run_training(
      pairs.size(), config, opt,
      [&](size_t i) {
        Tensor lw = response_logprob(model, pairs[i].prompt, pairs[i].chosen);
        Tensor ll = response_logprob(model, pairs[i].prompt, pairs[i].rejected);
        Tensor margin = sub(scalar_add(lw, -ref_w[i]), scalar_add(ll, -ref_l[i]));
        return scalar_mul(log_sigmoid(scalar_mul(margin, config.dpo_beta)), -1.0);
      },
      [&](double v, int step, size_t i) { check_finite(v, step, i, pairs[i]); });
  model.set_reward_requires_grad(true);
  result.reward_history = train_reward_channel(model, pairs, config);
  return result;
}

std::vector<LossRecord> pretrain_policy(RewardTransformer& model,
                                        const std::vector<Example>& corpus,
                                        const TrainConfig& config) {
  if (config.learning_rate <= 0.0 || config.epochs < 1) {
    throw ParamError("learning_rate must be > 0 and epochs >= 1");
  }
  if (corpus.empty()) throw ContractError("pretraining needs a non-empty corpus");
  model.set_reward_requires_grad(false);
  model.set_policy_requires_grad(true);
  Adam opt(tensors_of(model.policy_parameters()));
  auto loss_fn = [&](size_t i) {
    std::vector<int> seq = corpus[i].prompt;
    seq.insert(seq.end(), corpus[i].response.begin(), corpus[i].response.end());
    if (seq.size() < 2) throw ContractError("corpus sequence shorter than 2 tokens");
    ForwardOut out = forward(model, seq);
    const int64_t t = static_cast<int64_t>(seq.size());
    Tensor ls = log_softmax(slice_rows(out.logits, 0, t - 1));
    std::vector<int> targets(seq.begin() + 1, seq.end());
    return scalar_mul(mean(row_select(ls, targets)), -1.0);
  };
  auto history = run_training(corpus.size(), config, opt, loss_fn,
                              [&](double v, int step, size_t i) {
                                if (!std::isfinite(v)) {
                                  throw ContractError(cat("non-finite loss ", v,
                                                          " at step ", step,
                                                          " on corpus example ", i));
                                }
                              });
  model.set_reward_requires_grad(true);
  return history;
}

Tensor adapter_bt_loss(const RewardTransformer& model, const AdapterRewardHead& adapter,
                       const PreferencePair& pair) {
  auto prefix_mean = [&](const std::vector<int>& response) {
    if (response.empty()) throw ContractError("preference response is empty");
    std::vector<int> seq = pair.prompt;
    seq.insert(seq.end(), response.begin(), response.end());
    ForwardOut out = forward(model, seq);
    Tensor r = adapter_rewards(adapter, out.h_p_final);
    return mean(slice_rows(r, static_cast<int64_t>(pair.prompt.size()),
                           static_cast<int64_t>(seq.size())));
  };
  Tensor mw = prefix_mean(pair.chosen);
  Tensor ml = prefix_mean(pair.rejected);
  return scalar_mul(log_sigmoid(sub(mw, ml)), -1.0);
}

std::vector<LossRecord> train_adapter(const RewardTransformer& model,
                                      AdapterRewardHead& adapter,
                                      const std::vector<PreferencePair>& pairs,
                                      const TrainConfig& config) {
  if (config.learning_rate <= 0.0 || config.epochs < 1) {
    throw ParamError("learning_rate must be > 0 and epochs >= 1");
  }
  if (pairs.empty()) throw ContractError("training needs at least one preference pair");
  // The backbone is a fixed feature extractor here.
  model.set_policy_requires_grad(false);
  model.set_reward_requires_grad(false);
  Adam opt(tensors_of(adapter.parameters()));
  auto history = run_training(
      pairs.size(), config, opt,
      [&](size_t i) { return adapter_bt_loss(model, adapter, pairs[i]); },
      [&](double v, int step, size_t i) { check_finite(v, step, i, pairs[i]); });
  model.set_policy_requires_grad(true);
  model.set_reward_requires_grad(true);
  return history;
}

void write_pairs_jsonl(const std::string& path,
                       const std::vector<PreferencePair>& pairs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(cat("cannot open ", path, " for writing"));
  for (const PreferencePair& p : pairs) {
    nlohmann::json j;
    j["prompt"] = p.prompt;
    j["chosen"] = p.chosen;
    j["rejected"] = p.rejected;
    j["chosen_oracle"] = p.chosen_oracle;
    j["rejected_oracle"] = p.rejected_oracle;
    os << j.dump() << "\n";
  }
  if (!os) throw IoError(cat("write to ", path, " failed"));
}

std::vector<PreferencePair> read_pairs_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(cat("cannot open ", path, " for reading"));
  std::vector<PreferencePair> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      PreferencePair p;
      p.prompt = j.at("prompt").get<std::vector<int>>();
      p.chosen = j.at("chosen").get<std::vector<int>>();
      p.rejected = j.at("rejected").get<std::vector<int>>();
      p.chosen_oracle = j.at("chosen_oracle").get<double>();
      p.rejected_oracle = j.at("rejected_oracle").get<double>();
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(cat(path, ":", line_no, ": bad pair record: ", e.what()));
    }
  }
  return out;
}

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(cat("cannot open ", path, " for writing"));
  os << "step,epoch,loss,learning_rate\n";
  os.precision(17);
  for (const LossRecord& r : history) {
    os << r.step << "," << r.epoch << "," << r.loss << "," << r.learning_rate << "\n";
  }
  if (!os) throw IoError(cat("write to ", path, " failed"));
}

}  // namespace sla
