#include "cue/synth.hpp"

#include <cmath>
#include <cstdio>

#include "cue/rng.hpp"
#include "cue/uncertainty.hpp"

namespace cue {

using nlohmann::json;

namespace {

Eigen::VectorXd block(int channels, int begin, int count) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(channels);
  v.segment(begin, count).setConstant(1.0 / std::sqrt(double(count)));
  return v;
}

bool is_unit_nonneg(const Eigen::VectorXd& v) {
  return v.size() > 0 && (v.array() >= 0.0).all() && std::abs(v.norm() - 1.0) < 1e-6;
}

enum class Kind { Clean, Ambiguous, Corrupted, Ood };

}  // namespace

void apply_default_layout(SynthSpec& spec, const SynthGains& gains) {
  const SynthLayout L{3, spec.n_classes};
  const int C = L.channels(), K = spec.n_classes;
  Rng rng(spec.seed ^ 0x5eedc0ffee123457ULL);

  spec.class_centers = Eigen::MatrixXd::Zero(K, C);
  for (int k = 0; k < K; ++k) {
    for (int c = 0; c < L.channels_per_class; ++c) spec.class_centers(k, L.class_begin(k) + c) = rng.uniform(0.8, 1.2);
    spec.class_centers.row(k).normalize();
  }
  // OOD type t covers K consecutive OOD channels (cyclically), one favouring each class.
  const int M = L.ood_channels();
  spec.ood_centers = Eigen::MatrixXd::Zero(M, C);
  for (int t = 0; t < M; ++t)
    for (int c = 0; c < K; ++c) spec.ood_centers(t, L.ood_begin() + (t + c) % M) = 1.0 / std::sqrt(double(K));
  spec.noise_direction = block(C, L.noise_begin(), K);
  spec.attr_direction = block(C, L.attr_begin(), 2);
  spec.background_direction = block(C, L.background_begin(), 2);

  // Class channels vote for their class. Each OOD/noise channel favours one
  // class and penalizes the others so that the undropped contributions of a
  // whole OOD type or the noise direction cancel; dropout breaks the balance
  // and makes MC samples disagree.
  spec.head_weights = Eigen::MatrixXd::Zero(C, K);
  for (int k = 0; k < K; ++k)
    for (int c = 0; c < L.channels_per_class; ++c) spec.head_weights(L.class_begin(k) + c, k) = gains.class_gain;
  for (int j = 0; j < M; ++j)
    for (int k = 0; k < K; ++k) spec.head_weights(L.ood_begin() + j, k) = j % K == k ? gains.ood_gain : -gains.ood_gain / (K - 1);
  for (int j = 0; j < K; ++j)
    for (int k = 0; k < K; ++k)
      spec.head_weights(L.noise_begin() + j, k) = j == k ? gains.noise_gain : -gains.noise_gain / (K - 1);
  for (int c = 0; c < 2; ++c) spec.head_weights(L.attr_begin() + c, 0) = gains.attr_gain;
  spec.head_bias = Eigen::VectorXd::Zero(K);
}

SynthSpec default_synth_spec(int n_items, int n_classes, std::uint64_t seed) {
  SynthSpec s;
  s.n_items = n_items;
  s.n_classes = n_classes;
  s.seed = seed;
  apply_default_layout(s);
  return s;
}

void validate(const SynthSpec& s) {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorCode::InvalidSpec, what); };
  check(s.n_items >= 1, "n_items must be >= 1");
  check(s.n_classes >= 2, "n_classes must be >= 2");
  check(s.grid_h >= 1 && s.grid_w >= 1, "grid extents must be >= 1");
  for (double f : {s.ood_fraction, s.corruption_fraction, s.ambiguous_fraction, s.attr_fraction})
    check(f >= 0.0 && f <= 1.0, "fractions must lie in [0,1]");
  check(s.part_variation >= 0.0 && s.part_variation <= 1.0, "part_variation must lie in [0,1]");
  check(s.dropout_rate >= 0.0 && s.dropout_rate < 1.0, "dropout_rate must lie in [0,1)");
  check(s.n_mc_samples >= 1, "n_mc_samples must be >= 1");
  const int C = s.channels();
  check(C >= 1 && s.class_centers.rows() == s.n_classes, "class_centers must be n_classes x channels");
  check((s.class_centers.array() >= 0.0).all(), "class centers must be nonnegative");
  check(s.ood_centers.rows() >= 1 && s.ood_centers.cols() == C, "ood_centers must be types x channels");
  for (Eigen::Index t = 0; t < s.ood_centers.rows(); ++t)
    check(is_unit_nonneg(s.ood_centers.row(t).transpose()), "ood centers must be nonnegative and unit norm");
  for (const auto* v : {&s.noise_direction, &s.attr_direction, &s.background_direction})
    check(v->size() == C && is_unit_nonneg(*v), "directions must be nonnegative, unit norm, length channels");
  check(s.head_weights.rows() == C && s.head_weights.cols() == s.n_classes, "head_weights must be channels x n_classes");
  check(s.head_bias.size() == s.n_classes, "head_bias must have n_classes entries");
  for (double v : {s.class_lo, s.class_hi, s.noise_lo, s.noise_hi, s.ood_lo, s.ood_hi, s.attr_scale, s.jitter})
    check(v >= 0.0 && std::isfinite(v), "strengths must be finite and nonnegative");
}

Dataset generate(const SynthSpec& spec) {
  validate(spec);
  const int n = spec.n_items, K = spec.n_classes, C = spec.channels();
  const int S = spec.grid_h * spec.grid_w;
  Rng rng(spec.seed);

  const int n_ood = static_cast<int>(std::lround(spec.ood_fraction * n));
  const int n_id = n - n_ood;
  const int n_corrupt = static_cast<int>(std::lround(spec.corruption_fraction * n_id));
  const int n_amb = static_cast<int>(std::lround(spec.ambiguous_fraction * (n_id - n_corrupt)));
  std::vector<Kind> kinds;
  kinds.insert(kinds.end(), n_ood, Kind::Ood);
  kinds.insert(kinds.end(), n_corrupt, Kind::Corrupted);
  kinds.insert(kinds.end(), n_amb, Kind::Ambiguous);
  kinds.resize(static_cast<std::size_t>(n), Kind::Clean);
  for (std::size_t i = kinds.size(); i > 1; --i) std::swap(kinds[i - 1], kinds[rng.below(i)]);

  // Channels carried by some class center vary independently per segment, like object parts.
  const Eigen::ArrayXd part_mask = (spec.class_centers.colwise().maxCoeff().array() > 0.0).cast<double>().transpose();

  HeadParams head{spec.head_weights, spec.head_bias, spec.dropout_rate};
  Dataset ds;
  auto& m = ds.manifest;
  m.n_items = n;
  m.n_classes = K;
  m.n_mc_samples = spec.n_mc_samples;
  m.channels = C;
  m.dropout_rate = spec.dropout_rate;
  ds.segments.matrix.resize(static_cast<Eigen::Index>(n) * S, C);
  ds.head = head;

  for (int i = 0; i < n; ++i) {
    const Kind kind = kinds[static_cast<std::size_t>(i)];
    ItemRecord it;
    char id[32];
    std::snprintf(id, sizeof id, "item%05d", i);
    it.id = id;
    it.segment_offset = static_cast<std::int64_t>(i) * S;
    it.segment_count = S;
    it.grid = std::pair{spec.grid_h, spec.grid_w};
    it.is_ood = kind == Kind::Ood;
    it.is_corrupted = kind == Kind::Corrupted;
    it.group_attr = rng.bernoulli(spec.attr_fraction) ? 1 : 0;

    Eigen::VectorXd object = Eigen::VectorXd::Zero(C);  // spatially varying content
    Eigen::VectorXd overlay = Eigen::VectorXd::Zero(C);  // spread evenly over the item
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(K)));
    const double strength = rng.uniform(spec.class_lo, spec.class_hi);
    switch (kind) {
      case Kind::Clean:
        object = strength * spec.class_centers.row(y).transpose();
        break;
      case Kind::Ambiguous: {
        const int other = (y + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(K - 1)))) % K;
        const double lambda = rng.uniform(spec.blend_lo, spec.blend_hi);
        object = strength * ((1.0 - lambda) * spec.class_centers.row(y) + lambda * spec.class_centers.row(other)).transpose();
        break;
      }
      case Kind::Corrupted:
        object = strength * rng.uniform(spec.corrupt_atten_lo, spec.corrupt_atten_hi) * spec.class_centers.row(y).transpose();
        overlay = rng.uniform(spec.noise_lo, spec.noise_hi) * spec.noise_direction;
        break;
      case Kind::Ood: {
        const int leak = static_cast<int>(rng.below(static_cast<std::uint64_t>(K)));
        const auto type = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(spec.ood_centers.rows())));
        object = rng.uniform(spec.ood_lo, spec.ood_hi) * spec.ood_centers.row(type).transpose() +
                 rng.uniform(spec.ood_leak_lo, spec.ood_leak_hi) * spec.class_centers.row(leak).transpose();
        break;
      }
    }
    if (kind != Kind::Ood) it.true_label = y;

    Eigen::VectorXd object_w(S), overlay_w(S), attr_w = Eigen::VectorXd::Zero(S);
    for (int s = 0; s < S; ++s) object_w(s) = rng.uniform(0.5, 1.5);
    object_w *= S / object_w.sum();
    for (int s = 0; s < S; ++s) overlay_w(s) = rng.uniform(0.8, 1.2);
    overlay_w *= S / overlay_w.sum();
    if (*it.group_attr == 1) attr_w(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(S)))) = S;

    for (int s = 0; s < S; ++s) {
      Eigen::ArrayXd parts(C);
      for (int c = 0; c < C; ++c)
        parts(c) = part_mask(c) > 0.0 ? rng.uniform(1.0 - spec.part_variation, 1.0 + spec.part_variation) : 1.0;
      Eigen::VectorXd row = object_w(s) * (object.array() * parts).matrix() + overlay_w(s) * overlay +
                            attr_w(s) * spec.attr_scale * spec.attr_direction +
                            rng.uniform(0.0, spec.background_hi) * spec.background_direction;
      for (int c = 0; c < C; ++c) row(c) += std::abs(rng.normal(0.0, spec.jitter));
      ds.segments.matrix.row(it.segment_offset + s) = row.transpose();
    }
    m.items.push_back(std::move(it));
  }

  // MC predictive samples from the dropout head, fresh masks per item.
  ds.predictions.items.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& it = m.items[static_cast<std::size_t>(i)];
    const Eigen::VectorXd embedding = ds.segments.item_rows(it).colwise().mean().transpose();
    const auto masks = make_dropout_masks(rng.bits(), spec.n_mc_samples, C, spec.dropout_rate);
    // Stored as float32; renormalize after rounding so rows still sum to one.
    Eigen::MatrixXd P = mc_head_forward(embedding, head, masks);
    P = P.cast<float>().cast<double>();
    for (Eigen::Index r = 0; r < P.rows(); ++r) P.row(r) /= P.row(r).sum();
    ds.predictions.items.push_back(std::move(P));
  }
  return ds;
}

void generate_to(const SynthSpec& spec, const std::filesystem::path& dir) { save_dataset(generate(spec), dir); }

namespace {

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

Eigen::VectorXd vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::MatrixXd mat_from(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(static_cast<Eigen::Index>(rows[r].size()) == m.cols(), ErrorCode::InvalidSpec, "ragged matrix in spec");
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

}  // namespace

json to_json(const SynthSpec& s) {
  return {{"n_items", s.n_items},
          {"n_classes", s.n_classes},
          {"grid", {s.grid_h, s.grid_w}},
          {"seed", s.seed},
          {"ood_fraction", s.ood_fraction},
          {"corruption_fraction", s.corruption_fraction},
          {"ambiguous_fraction", s.ambiguous_fraction},
          {"attr_fraction", s.attr_fraction},
          {"class_strength", {s.class_lo, s.class_hi}},
          {"blend", {s.blend_lo, s.blend_hi}},
          {"corrupt_attenuation", {s.corrupt_atten_lo, s.corrupt_atten_hi}},
          {"noise_strength", {s.noise_lo, s.noise_hi}},
          {"ood_strength", {s.ood_lo, s.ood_hi}},
          {"ood_leak", {s.ood_leak_lo, s.ood_leak_hi}},
          {"part_variation", s.part_variation},
          {"attr_scale", s.attr_scale},
          {"background_max", s.background_hi},
          {"jitter", s.jitter},
          {"n_mc_samples", s.n_mc_samples},
          {"dropout_rate", s.dropout_rate},
          {"class_centers", mat_json(s.class_centers)},
          {"ood_centers", mat_json(s.ood_centers)},
          {"noise_direction", vec_json(s.noise_direction)},
          {"attr_direction", vec_json(s.attr_direction)},
          {"background_direction", vec_json(s.background_direction)},
          {"head_weights", mat_json(s.head_weights)},
          {"head_bias", vec_json(s.head_bias)}};
}

SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec s;
  try {
    s.n_items = j.value("n_items", s.n_items);
    s.n_classes = j.value("n_classes", s.n_classes);
    if (j.contains("grid")) {
      s.grid_h = j["grid"].at(0).get<int>();
      s.grid_w = j["grid"].at(1).get<int>();
    }
    s.seed = j.value("seed", s.seed);
    s.ood_fraction = j.value("ood_fraction", s.ood_fraction);
    s.corruption_fraction = j.value("corruption_fraction", s.corruption_fraction);
    s.ambiguous_fraction = j.value("ambiguous_fraction", s.ambiguous_fraction);
    s.attr_fraction = j.value("attr_fraction", s.attr_fraction);
    auto range = [&](const char* key, double& lo, double& hi) {
      if (j.contains(key)) {
        lo = j[key].at(0).get<double>();
        hi = j[key].at(1).get<double>();
      }
    };
    range("class_strength", s.class_lo, s.class_hi);
    range("blend", s.blend_lo, s.blend_hi);
    range("corrupt_attenuation", s.corrupt_atten_lo, s.corrupt_atten_hi);
    range("noise_strength", s.noise_lo, s.noise_hi);
    range("ood_strength", s.ood_lo, s.ood_hi);
    range("ood_leak", s.ood_leak_lo, s.ood_leak_hi);
    s.part_variation = j.value("part_variation", s.part_variation);
    s.attr_scale = j.value("attr_scale", s.attr_scale);
    s.background_hi = j.value("background_max", s.background_hi);
    s.jitter = j.value("jitter", s.jitter);
    s.n_mc_samples = j.value("n_mc_samples", s.n_mc_samples);
    s.dropout_rate = j.value("dropout_rate", s.dropout_rate);

    if (s.n_classes >= 2) apply_default_layout(s);
    if (j.contains("class_centers")) s.class_centers = mat_from(j["class_centers"]);
    if (j.contains("ood_centers")) s.ood_centers = mat_from(j["ood_centers"]);
    if (j.contains("noise_direction")) s.noise_direction = vec_from(j["noise_direction"]);
    if (j.contains("attr_direction")) s.attr_direction = vec_from(j["attr_direction"]);
    if (j.contains("background_direction")) s.background_direction = vec_from(j["background_direction"]);
    if (j.contains("head_weights")) s.head_weights = mat_from(j["head_weights"]);
    if (j.contains("head_bias")) s.head_bias = vec_from(j["head_bias"]);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, e.what());
  }
  validate(s);
  return s;
}

}  // namespace cue
