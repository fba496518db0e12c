#include "sla/tasks.hpp"

#include <algorithm>
#include <cmath>

#include "sla/common.hpp"

namespace sla {

namespace {

constexpr int kValueLo = 2, kValueHi = 11;  // sortedness digit tokens
constexpr int kBitZero = 2, kBitOne = 3;    // parity bit tokens
constexpr int kEven = 4, kOdd = 5;          // parity answer tokens

// One trailing EOS is part of a well-formed response; strip it for scoring.
std::vector<int> strip_trailing_eos(const std::vector<int>& response) {
  std::vector<int> r = response;
  if (!r.empty() && r.back() == kEos) r.pop_back();
  return r;
}

std::vector<int> prompt_payload(const std::vector<int>& prompt, int lo, int hi) {
  std::vector<int> vals;
  for (int t : prompt) {
    if (t >= lo && t <= hi) vals.push_back(t);
  }
  return vals;
}

}  // namespace

TaskSpec sortedness_task() {
  TaskSpec t;
  t.name = "sortedness";
  t.vocab_size = 16;
  t.max_response_len = 12;
  t.sample_prompt = [](Rng& rng) {
    const int len = static_cast<int>(rng.uniform_int(3, 8));
    std::vector<int> p{kBos};
    for (int i = 0; i < len; ++i) {
      p.push_back(static_cast<int>(rng.uniform_int(kValueLo, kValueHi)));
    }
    p.push_back(kSep);
    return p;
  };
  t.reference_response = [](const std::vector<int>& prompt) {
    std::vector<int> vals = prompt_payload(prompt, kValueLo, kValueHi);
    std::sort(vals.begin(), vals.end());
    vals.push_back(kEos);
    return vals;
  };
  t.oracle = [](const std::vector<int>& prompt, const std::vector<int>& response) {
    std::vector<int> want = prompt_payload(prompt, kValueLo, kValueHi);
    std::vector<int> got = strip_trailing_eos(response);
    for (int v : got) {
      if (v < kValueLo || v > kValueHi) return 0.0;
    }
    std::vector<int> a = want, b = got;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) return 0.0;
    if (got.size() <= 1) return 1.0;
    int ordered = 0;
    for (size_t i = 0; i + 1 < got.size(); ++i) {
      if (got[i] <= got[i + 1]) ++ordered;
    }
    return static_cast<double>(ordered) / static_cast<double>(got.size() - 1);
  };
  return t;
}

TaskSpec parity_task() {
  TaskSpec t;
  t.name = "parity";
  t.vocab_size = 16;
  t.max_response_len = 8;
  t.sample_prompt = [](Rng& rng) {
    const int len = static_cast<int>(rng.uniform_int(2, 6));
    std::vector<int> p{kBos};
    for (int i = 0; i < len; ++i) {
      p.push_back(static_cast<int>(rng.uniform_int(kBitZero, kBitOne)));
    }
    p.push_back(kSep);
    return p;
  };
  auto answer_token = [](const std::vector<int>& bits) {
    int ones = 0;
    for (int b : bits) ones += b == kBitOne;
    return ones % 2 == 0 ? kEven : kOdd;
  };
  t.reference_response = [answer_token](const std::vector<int>& prompt) {
    std::vector<int> bits = prompt_payload(prompt, kBitZero, kBitOne);
    std::vector<int> r = bits;
    r.push_back(answer_token(bits));
    r.push_back(kEos);
    return r;
  };
  t.oracle = [answer_token](const std::vector<int>& prompt,
                            const std::vector<int>& response) {
    std::vector<int> bits = prompt_payload(prompt, kBitZero, kBitOne);
    std::vector<int> got = strip_trailing_eos(response);
    if (got.size() != bits.size() + 1) return 0.0;
    if (!std::equal(bits.begin(), bits.end(), got.begin())) return 0.0;
    const int a = got.back();
    if (a != kEven && a != kOdd) return 0.0;
    return a == answer_token(bits) ? 1.0 : 0.25;
  };
  return t;
}

TaskSpec task_by_name(const std::string& name) {
  if (name == "sortedness") return sortedness_task();
  if (name == "parity") return parity_task();
  throw ParamError(cat("unknown task '", name, "' (expected sortedness or parity)"));
}

std::vector<Example> make_corpus(const TaskSpec& task, int count, uint64_t seed) {
  if (count < 0) throw ParamError(cat("corpus count must be >= 0, got ", count));
  std::vector<Example> out(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, "corpus", static_cast<uint64_t>(i)));
    out[static_cast<size_t>(i)].prompt = task.sample_prompt(rng);
    out[static_cast<size_t>(i)].response =
        task.reference_response(out[static_cast<size_t>(i)].prompt);
  }
  return out;
}

namespace {

// Depth-first over complete responses in lexicographic order: EOS only as
// the final token, and every non-EOS branch runs to exactly max_len. Strict
// improvement keeps the first (lowest) maximizer.
void enumerate_responses(
    const std::vector<int>& prompt, int vocab_size, int max_len,
    const std::function<double(const std::vector<int>&, const std::vector<int>&)>&
        scorer,
    std::vector<int>& prefix, double& best_score, std::vector<int>& best) {
  for (int tok = 0; tok < vocab_size; ++tok) {
    prefix.push_back(tok);
    const bool complete = tok == kEos || static_cast<int>(prefix.size()) == max_len;
    if (complete) {
      const double score = scorer(prompt, prefix);
      if (best.empty() || score > best_score) {
        best_score = score;
        best = prefix;
      }
    } else {
      enumerate_responses(prompt, vocab_size, max_len, scorer, prefix, best_score,
                          best);
    }
    prefix.pop_back();
  }
}

}  // namespace

Trajectory brute_force_argmax(
    const std::vector<int>& prompt, int vocab_size, int max_len,
    const std::function<double(const std::vector<int>&, const std::vector<int>&)>&
        scorer) {
  if (vocab_size < 2) throw ParamError(cat("vocab_size must be >= 2, got ", vocab_size));
  if (max_len < 1) throw ParamError(cat("max_len must be >= 1, got ", max_len));
  const double bound = std::pow(static_cast<double>(vocab_size), max_len);
  if (bound > 1e6) {
    throw ContractError(cat("enumeration of ", bound, " trajectories exceeds the 1e6 budget"));
  }
  std::vector<int> prefix, best;
  double best_score = 0.0;
  enumerate_responses(prompt, vocab_size, max_len, scorer, prefix, best_score, best);
  Trajectory t;
  t.prompt = prompt;
  t.response = best;
  return t;
}

}  // namespace sla
