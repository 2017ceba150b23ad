#include "cue/uncertainty.hpp"

#include <string>

namespace cue {

Measure parse_measure(std::string_view name) {
  if (name == "total") return Measure::Total;
  if (name == "aleatoric") return Measure::Aleatoric;
  if (name == "epistemic") return Measure::Epistemic;
  throw Error(ErrorCode::InvalidConfig, "unknown uncertainty measure '" + std::string(name) + "'");
}

std::string_view to_string(Measure m) {
  switch (m) {
    case Measure::Total: return "total";
    case Measure::Aleatoric: return "aleatoric";
    case Measure::Epistemic: return "epistemic";
  }
  return "total";
}

DropoutMaskSet make_dropout_masks(std::uint64_t seed, Eigen::Index n_samples, Eigen::Index channels, double rate) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::InvalidConfig, "dropout rate must be in [0,1)");
  require(n_samples >= 1, ErrorCode::InvalidConfig, "need at least one dropout sample");
  DropoutMaskSet set{Eigen::MatrixXd(n_samples, channels), seed, rate};
  const double keep = 1.0 / (1.0 - rate);
  Rng rng(seed);
  for (Eigen::Index n = 0; n < n_samples; ++n)
    for (Eigen::Index c = 0; c < channels; ++c) set.masks(n, c) = rng.uniform() < rate ? 0.0 : keep;
  return set;
}

}  // namespace cue
