#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sla {

// Error taxonomy. Every throw site names the offending values so failures
// are actionable without a debugger.

// Operand shapes incompatible with the requested operation.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Token id outside [0, vocab_size) or a malformed prompt/response.
struct VocabError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A hard resource limit was exceeded (sequence length, tree depth, ...).
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An API precondition was violated (backward twice, terminal root, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A numeric parameter is out of its documented range.
struct ParamError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File could not be opened, read, written, or parsed.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void cat_one(std::ostringstream&) {}
template <typename T, typename... Rest>
void cat_one(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  cat_one(os, rest...);
}
}  // namespace detail

template <typename... Parts>
std::string cat(const Parts&... parts) {
  std::ostringstream os;
  detail::cat_one(os, parts...);
  return os.str();
}

inline std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace sla
