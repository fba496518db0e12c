#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sla/decode.hpp"
#include "sla/rng.hpp"

namespace sla {

// Shared token layout across tasks. Vocabulary fits in 16 ids so exhaustive
// oracles stay tractable; 0/1 are reserved for BOS/EOS everywhere.
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kSep = 12;  // prompt/response boundary marker

struct Example {
  std::vector<int> prompt;
  std::vector<int> response;  // reference, oracle score ~1.0
};

// A synthetic task: seeded prompt generator, reference responses for
// pretraining, and an exactly computable reward oracle over (prompt,
// response) with range [0, 1]. Oracles are pure and total: any token
// sequence gets a score, malformed ones get 0.
struct TaskSpec {
  std::string name;
  int vocab_size = 16;
  int max_response_len = 12;
  std::function<std::vector<int>(Rng&)> sample_prompt;
  std::function<std::vector<int>(const std::vector<int>&)> reference_response;
  std::function<double(const std::vector<int>& prompt,
                       const std::vector<int>& response)> oracle;
};

// Sort a list of digit tokens. Prompt: BOS, 3..8 values from {2..11}, SEP.
// Reference: the values sorted ascending, then EOS. Oracle: 0 unless the
// response (minus one trailing EOS) is exactly the prompt's value multiset;
// otherwise the fraction of adjacent non-decreasing pairs (1.0 when a single
// value or fully sorted).
TaskSpec sortedness_task();

// Restate a bit string and answer its parity. Prompt: BOS, 2..6 bits from
// {2=zero, 3=one}, SEP. Reference: the bits, the answer token (4=even parity
// of ones, 5=odd), EOS. Oracle: 1.0 for the correct answer, 0.25 for a
// well-formed restatement with the wrong answer, else 0.
TaskSpec parity_task();

TaskSpec task_by_name(const std::string& name);

// count examples with per-index derived seeds; element i depends only on
// (seed, i), so corpora are stable under reordering or parallel generation.
std::vector<Example> make_corpus(const TaskSpec& task, int count, uint64_t seed);

// Exhaustive argmax of `scorer` over all complete responses: EOS appears
// only as the final token, and a response either ends with EOS or has
// exactly max_len tokens. Ties pick the lexicographically smallest response.
// Enumeration size is vocab_size^max_len; beyond 1e6 throws ContractError.
Trajectory brute_force_argmax(
    const std::vector<int>& prompt, int vocab_size, int max_len,
    const std::function<double(const std::vector<int>& prompt,
                               const std::vector<int>& response)>& scorer);

}  // namespace sla
