#pragma once

// Shared helpers for the test suites: small model configs, raw-path loss
// evaluators for finite-difference checks, and a chi-square helper.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sla/common.hpp"
#include "sla/kernels.hpp"
#include "sla/model.hpp"
#include "sla/tensor.hpp"
#include "sla/training.hpp"

namespace test_support {

// Two layers, big enough to exercise every code path, small enough that
// exhaustive finite differences stay fast.
inline sla::ModelConfig tiny_config() {
  sla::ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ffn = 128;
  c.d_reward = 8;
  c.max_seq_len = 64;
  return c;
}

// One layer, vocab 4: decode searches over this are exhaustively checkable.
inline sla::ModelConfig micro_config(int vocab = 4) {
  sla::ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ffn = 32;
  c.d_reward = 8;
  c.max_seq_len = 32;
  return c;
}

// Next-token cross-entropy over one sequence, computed on the incremental
// path with raw kernels: independent of the autograd graph being checked.
inline double raw_lm_loss(const sla::RewardTransformer& m, const std::vector<int>& seq) {
  sla::LeafCursor cur(m, nullptr);
  std::vector<sla::LeafCursor*> one{&cur};
  std::vector<std::vector<double>> logits;
  for (int tok : seq) {
    std::vector<int> t{tok};
    sla::step_leaves(m, one, t);
    logits.push_back(cur.last_logits());
  }
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
    std::vector<double> ls = logits[t];
    sla::kernels::log_softmax_row(ls.data(), ls.size());
    total += ls[static_cast<std::size_t>(seq[t + 1])];
  }
  return -total / static_cast<double>(seq.size() - 1);
}

inline double raw_response_reward_mean(const sla::RewardTransformer& m,
                                       const std::vector<int>& prompt,
                                       const std::vector<int>& response) {
  sla::LeafCursor cur(m, nullptr);
  std::vector<sla::LeafCursor*> one{&cur};
  for (int tok : prompt) {
    std::vector<int> t{tok};
    sla::step_leaves(m, one, t);
  }
  double sum = 0.0;
  for (int tok : response) {
    std::vector<int> t{tok};
    sla::step_leaves(m, one, t);
    sum += cur.last_reward();
  }
  return sum / static_cast<double>(response.size());
}

inline double raw_bt_loss(const sla::RewardTransformer& m, const sla::PreferencePair& p) {
  const double margin = raw_response_reward_mean(m, p.prompt, p.chosen) -
                        raw_response_reward_mean(m, p.prompt, p.rejected);
  return -sla::kernels::log_sigmoid(margin);
}

// R' after feeding prompt then the whole response (the search decoders'
// self-evaluation signal for a finished trajectory).
inline double raw_final_reward(const sla::RewardTransformer& m,
                               const std::vector<int>& prompt,
                               const std::vector<int>& response) {
  sla::LeafCursor cur(m, nullptr);
  std::vector<sla::LeafCursor*> one{&cur};
  for (int tok : prompt) {
    std::vector<int> t{tok};
    sla::step_leaves(m, one, t);
  }
  for (int tok : response) {
    std::vector<int> t{tok};
    sla::step_leaves(m, one, t);
  }
  return cur.last_reward();
}

struct FdReport {
  double max_rel = 0.0;
  std::string where;
  long checked = 0;
};

// Central-difference check of d(loss)/d(param) for every element of every
// listed parameter. make_loss builds the autograd loss; eval_loss recomputes
// the loss value by some independent path (or the same expression under
// NoGradGuard for op-level checks).
inline FdReport fd_check(std::vector<std::pair<std::string, sla::Tensor>> params,
                         const std::function<sla::Tensor()>& make_loss,
                         const std::function<double()>& eval_loss,
                         double eps = 1e-5) {
  sla::Tensor loss = make_loss();
  sla::backward(loss);

  FdReport rep;
  for (auto& [name, p] : params) {
    std::vector<double> analytic =
        p.has_grad() ? p.grad()
                     : std::vector<double>(static_cast<std::size_t>(p.numel()), 0.0);
    std::vector<double>& d = p.mutable_data();
    for (std::size_t j = 0; j < d.size(); ++j) {
      const double orig = d[j];
      d[j] = orig + eps;
      const double lp = eval_loss();
      d[j] = orig - eps;
      const double lm = eval_loss();
      d[j] = orig;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double rel = std::abs(numeric - analytic[j]) /
                         std::max({std::abs(numeric), std::abs(analytic[j]), 1e-6});
      ++rep.checked;
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.where = sla::cat(name, "[", j, "]");
      }
    }
    p.zero_grad();
  }
  return rep;
}

// Pearson statistic against expected counts; expected[i] > 0 required.
inline double chi_square(const std::vector<long>& observed,
                         const std::vector<double>& expected) {
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double diff = static_cast<double>(observed[i]) - expected[i];
    stat += diff * diff / expected[i];
  }
  return stat;
}

// Upper 1% critical values of chi-square for df = 1..19.
inline double chi_square_crit_99(int df) {
  static const double table[] = {6.635,  9.210,  11.345, 13.277, 15.086, 16.812,
                                 18.475, 20.090, 21.666, 23.209, 24.725, 26.217,
                                 27.688, 29.141, 30.578, 32.000, 33.409, 34.805,
                                 36.191};
  return table[df - 1];
}

}  // namespace test_support
