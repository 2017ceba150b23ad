#include "cue/concepts.hpp"

namespace cue {

Pooling parse_pooling(std::string_view name) {
  if (name == "mean") return Pooling::Mean;
  if (name == "max") return Pooling::Max;
  throw Error(ErrorCode::InvalidConfig, "unknown pooling mode '" + std::string(name) + "'");
}

std::string_view to_string(Pooling p) { return p == Pooling::Mean ? "mean" : "max"; }

}  // namespace cue
