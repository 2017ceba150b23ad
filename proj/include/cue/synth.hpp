#pragma once

#include <cstdint>
#include <filesystem>

#include <Eigen/Dense>
#include <json.hpp>

#include "cue/store.hpp"

namespace cue {

/// Channel layout of the default synthetic embedding space.
struct SynthLayout {
  int channels_per_class = 3;
  int n_classes = 4;

  int class_begin(int k) const { return k * channels_per_class; }
  int ood_begin() const { return n_classes * channels_per_class; }
  int ood_channels() const { return 2 * n_classes; }
  int noise_begin() const { return ood_begin() + ood_channels(); }
  int attr_begin() const { return noise_begin() + n_classes; }
  int background_begin() const { return attr_begin() + 2; }
  int channels() const { return background_begin() + 2; }
};

/// Generator parameters. Each item is built from nonnegative parts: its class
/// center (possibly blended with a second class), one of several OOD centers, an additive
/// "noise" direction for corrupted items, an attribute direction for items
/// with group_attr = 1 and a background direction that the head ignores.
struct SynthSpec {
  int n_items = 1000;
  int n_classes = 4;
  int grid_h = 2;
  int grid_w = 2;
  std::uint64_t seed = 0;

  double ood_fraction = 0.15;
  double corruption_fraction = 0.10;  // of in-distribution items
  double ambiguous_fraction = 0.25;   // of clean in-distribution items
  double attr_fraction = 0.5;

  // Item strength ranges.
  double class_lo = 1.0, class_hi = 2.0;
  double blend_lo = 0.30, blend_hi = 0.42;
  double corrupt_atten_lo = 0.5, corrupt_atten_hi = 0.8;
  double noise_lo = 1.0, noise_hi = 2.5;
  double ood_lo = 1.0, ood_hi = 2.5;
  double ood_leak_lo = 0.3, ood_leak_hi = 1.0;
  double part_variation = 0.6;  // per-segment scaling of each class channel in [1 - v, 1 + v]
  double attr_scale = 0.8;
  double background_hi = 0.6;
  double jitter = 0.02;

  int n_mc_samples = 30;
  double dropout_rate = 0.2;

  // Derived from the layout unless supplied.
  Eigen::MatrixXd class_centers;  // K x C
  Eigen::MatrixXd ood_centers;  // one OOD type per row
  Eigen::VectorXd noise_direction;
  Eigen::VectorXd attr_direction;
  Eigen::VectorXd background_direction;
  Eigen::MatrixXd head_weights;  // C x K
  Eigen::VectorXd head_bias;

  int channels() const { return static_cast<int>(class_centers.cols()); }
};

struct SynthGains {
  double class_gain = 2.0;
  double ood_gain = 2.5;
  double noise_gain = 2.5;
  double attr_gain = 2.0;
};

/// Fills centers, directions and head from the block layout.
void apply_default_layout(SynthSpec& spec, const SynthGains& gains = {});

SynthSpec default_synth_spec(int n_items, int n_classes, std::uint64_t seed);

void validate(const SynthSpec& spec);

Dataset generate(const SynthSpec& spec);
void generate_to(const SynthSpec& spec, const std::filesystem::path& dir);

nlohmann::json to_json(const SynthSpec& spec);
/// Missing keys keep their defaults; layout arrays are derived when absent.
SynthSpec synth_spec_from_json(const nlohmann::json& j);

}  // namespace cue
