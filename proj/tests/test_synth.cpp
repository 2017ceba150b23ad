#include <doctest.h>

#include "cue/synth.hpp"
#include "cue/uncertainty.hpp"
#include "support.hpp"

using namespace cue;

TEST_CASE("planted counts and truth fields") {
  auto spec = default_synth_spec(1000, 4, 7);
  const Dataset ds = generate(spec);
  validate(ds);
  int ood = 0, corrupted = 0, attr = 0;
  for (const auto& it : ds.manifest.items) {
    REQUIRE(it.is_ood.has_value());
    REQUIRE(it.is_corrupted.has_value());
    REQUIRE(it.group_attr.has_value());
    ood += *it.is_ood;
    corrupted += *it.is_corrupted;
    attr += *it.group_attr;
    CHECK(it.true_label.has_value() == !*it.is_ood);
    CHECK_FALSE((*it.is_ood && *it.is_corrupted));
    CHECK(it.segment_count == 4);
  }
  CHECK(ood == 150);
  CHECK(corrupted == 85);  // 10% of the in-distribution items
  CHECK(attr > 430);
  CHECK(attr < 570);
  CHECK(ds.manifest.channels == SynthLayout{3, 4}.channels());
  CHECK(ds.predictions.items.front().rows() == 30);
}

TEST_CASE("same seed, same bytes") {
  testing::TempDir a, b;
  generate_to(default_synth_spec(120, 3, 5), a.path());
  generate_to(default_synth_spec(120, 3, 5), b.path());
  for (const char* f : {"manifest.json", "activations.npy", "predictions.npy", "head_weights.npy"})
    CHECK(read_text(a / f) == read_text(b / f));
  const auto x = generate(default_synth_spec(120, 3, 6));
  const auto y = load_dataset(a.path());
  CHECK((x.segments.matrix - y.segments.matrix).norm() > 0.1);
}

TEST_CASE("planted directions live where the labels say") {
  const auto spec = default_synth_spec(600, 4, 1);
  const Dataset ds = generate(spec);
  double noise_corrupt = 0, noise_clean = 0, attr_on = 0, attr_off = 0;
  int nc = 0, nk = 0, na = 0, nb = 0;
  for (const auto& it : ds.manifest.items) {
    const Eigen::VectorXd mean = ds.segments.item_rows(it).colwise().mean().transpose();
    const double noise = mean.dot(spec.noise_direction), attr = mean.dot(spec.attr_direction);
    if (*it.is_corrupted) noise_corrupt += noise, ++nc;
    else noise_clean += noise, ++nk;
    if (*it.group_attr) attr_on += attr, ++na;
    else attr_off += attr, ++nb;
  }
  CHECK(noise_corrupt / nc > 10 * noise_clean / nk);
  CHECK(attr_on / na > 10 * attr_off / nb);
  // activations are nonnegative and the head ignores the background block
  CHECK((ds.segments.matrix.array() >= 0).all());
  CHECK((spec.head_weights.transpose() * spec.background_direction).norm() == 0.0);
}

TEST_CASE("uncertainty separates the planted kinds") {
  const Dataset ds = generate(default_synth_spec(800, 4, 2));
  double ood = 0, clean = 0;
  int no = 0, nc = 0;
  for (std::size_t i = 0; i < ds.manifest.items.size(); ++i) {
    const auto& it = ds.manifest.items[i];
    const double u = total_uncertainty(ds.predictions.items[i]);
    if (*it.is_ood) ood += u, ++no;
    else if (!*it.is_corrupted) clean += u, ++nc;
  }
  CHECK(ood / no > clean / nc + 0.3);
}

TEST_CASE("spec JSON round trip and validation") {
  auto spec = default_synth_spec(50, 3, 9);
  spec.blend_lo = 0.2;
  spec.ood_fraction = 0.4;
  const auto back = synth_spec_from_json(nlohmann::json::parse(to_json(spec).dump()));
  CHECK(back.n_items == 50);
  CHECK(back.blend_lo == 0.2);
  CHECK(back.ood_fraction == 0.4);
  CHECK(back.head_weights == spec.head_weights);
  CHECK(back.ood_centers == spec.ood_centers);

  const auto partial = synth_spec_from_json(nlohmann::json{{"ood_leak", {0.1, 0.2}}, {"seed", 4}});
  CHECK(partial.ood_leak_lo == 0.1);
  CHECK(partial.seed == 4u);
  CHECK(partial.n_items == 1000);

  auto code = [](const nlohmann::json& j) {
    try {
      synth_spec_from_json(j);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoFailure;
  };
  CHECK(code({{"ood_fraction", 1.5}}) == ErrorCode::InvalidSpec);
  CHECK(code({{"n_classes", 1}}) == ErrorCode::InvalidSpec);
  CHECK(code({{"noise_direction", {1.0, 2.0}}}) == ErrorCode::InvalidSpec);
  CHECK(code({{"grid", "wide"}}) == ErrorCode::InvalidSpec);
}
