#include "cue/importance.hpp"

#include <boost/random/sobol.hpp>

namespace cue {

MaskDesign make_mask_design(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  require(n >= 1 && d >= 1, ErrorCode::InvalidConfig, "mask design needs n >= 1 and d >= 1");
  const auto dims = static_cast<std::size_t>(2 * d);
  boost::random::sobol qrng(dims);
  Rng rng(seed);
  std::vector<std::uint64_t> shift(dims);
  for (auto& s : shift) s = rng.bits();

  MaskDesign design{Eigen::MatrixXd(n, d), Eigen::MatrixXd(n, d), seed, "sobol+digital-shift"};
  // boost starts after the origin; put it back so every prefix of 2^m rows is a full net.
  for (Eigen::Index r = 0; r < n; ++r)
    for (std::size_t k = 0; k < dims; ++k) {
      const std::uint64_t x = (r == 0 ? 0 : static_cast<std::uint64_t>(qrng())) ^ shift[k];
      const double u = static_cast<double>(x >> 11) * 0x1.0p-53;
      const auto col = static_cast<Eigen::Index>(k);
      if (col < d) design.a(r, col) = u;
      else design.b(r, col - d) = u;
    }
  return design;
}

MaskDesign make_random_mask_design(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  MaskDesign design{Eigen::MatrixXd(n, d), Eigen::MatrixXd(n, d), seed, "iid-uniform"};
  Rng rng(seed);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) design.a(r, c) = rng.uniform();
    for (Eigen::Index c = 0; c < d; ++c) design.b(r, c) = rng.uniform();
  }
  return design;
}

ConceptResponse::ConceptResponse(Eigen::MatrixXd item_coefficients, const ConceptBank<double>& bank,
                                 const HeadParams& head, const DropoutMaskSet& masks, const Gmm2<double>& gmm,
                                 Pooling pooling, Measure measure)
    : coeffs_(std::move(item_coefficients)),
      bank_(&bank),
      head_(&head),
      masks_(&masks),
      gmm_(&gmm),
      pooling_(pooling),
      measure_(measure) {
  require(coeffs_.cols() == bank.size(), ErrorCode::DimensionMismatch, "coefficients do not match bank size");
  require(bank.channels() == head.channels() && masks.channels() == head.channels(), ErrorCode::DimensionMismatch,
          "bank, head and dropout masks must agree on channel count");
  require(coeffs_.rows() > 0, ErrorCode::EmptyItem, "item has no segments");
  if (pooling_ == Pooling::Mean) {
    pooled_ = coeffs_.colwise().mean().transpose();
    folded_.reserve(static_cast<std::size_t>(masks.samples()));
    for (Eigen::Index n = 0; n < masks.samples(); ++n)
      folded_.push_back(bank.concepts * masks.masks.row(n).transpose().asDiagonal() * head.weights);
  }
}

double ConceptResponse::score(const Eigen::MatrixXd& probs) const {
  switch (measure_) {
    case Measure::Total: return unc_posterior(*gmm_, total_uncertainty(probs));
    case Measure::Aleatoric: return unc_posterior(*gmm_, aleatoric_uncertainty(probs));
    case Measure::Epistemic: break;
  }
  return unc_posterior(*gmm_, epistemic_uncertainty(probs));
}

double ConceptResponse::operator()(const Eigen::Ref<const Eigen::VectorXd>& mask) const {
  if (pooling_ != Pooling::Mean) return reference(mask);
  const Eigen::RowVectorXd scaled = pooled_.cwiseProduct(mask).transpose();
  Eigen::MatrixXd probs(static_cast<Eigen::Index>(folded_.size()), head_->classes());
  for (std::size_t n = 0; n < folded_.size(); ++n) {
    const Eigen::VectorXd logits = (scaled * folded_[n]).transpose() + head_->bias;
    probs.row(static_cast<Eigen::Index>(n)) = softmax(logits).transpose();
  }
  return score(probs);
}

Eigen::VectorXd ConceptResponse::rows(const Eigen::MatrixXd& masks) const {
  const Eigen::Index n = masks.rows(), K = head_->classes(), N = static_cast<Eigen::Index>(folded_.size());
  Eigen::VectorXd out(n);
  if (pooling_ != Pooling::Mean) {
    for (Eigen::Index r = 0; r < n; ++r) out(r) = reference(masks.row(r).transpose());
    return out;
  }
  // Softmax, posterior mean and entropies are taken over all rows at once.
  const Eigen::MatrixXd scaled = masks * pooled_.asDiagonal();
  auto row_entropy = [](const Eigen::ArrayXXd& p) -> Eigen::ArrayXd {
    return -(p > 0.0).select(p * p.log(), 0.0).rowwise().sum() / std::log(2.0);
  };
  const bool need_aleatoric = measure_ != Measure::Total;
  Eigen::ArrayXXd sum_p = Eigen::ArrayXXd::Zero(n, K);
  Eigen::ArrayXd sum_h = Eigen::ArrayXd::Zero(n);
  for (const auto& folded : folded_) {
    Eigen::ArrayXXd z = (scaled * folded).array();
    z.rowwise() += head_->bias.transpose().array();
    z.colwise() -= z.rowwise().maxCoeff();
    z = z.exp();
    z.colwise() /= z.rowwise().sum();
    sum_p += z;
    if (need_aleatoric) sum_h += row_entropy(z);
  }
  const Eigen::ArrayXd total = row_entropy(sum_p / double(N));
  const Eigen::ArrayXd aleatoric = sum_h / double(N);
  for (Eigen::Index r = 0; r < n; ++r) {
    double u = total(r);
    if (measure_ == Measure::Aleatoric) u = aleatoric(r);
    if (measure_ == Measure::Epistemic) u = detail::exact_difference(total(r), aleatoric(r));
    out(r) = unc_posterior(*gmm_, u);
  }
  return out;
}

double ConceptResponse::reference(const Eigen::Ref<const Eigen::VectorXd>& mask) const {
  const Eigen::MatrixXd segments = (coeffs_ * mask.asDiagonal()) * bank_->concepts;
  const Eigen::VectorXd embedding = pool_rows(segments, pooling_);
  return score(mc_head_forward(embedding, *head_, *masks_));
}

ImportanceVector local_importance(const ItemRecord& item, const Eigen::MatrixXd& coefficients,
                                  const ConceptBank<double>& bank, const HeadParams& head,
                                  const DropoutMaskSet& masks, const Gmm2<double>& gmm, const MaskDesign& design,
                                  Pooling pooling, Measure measure) {
  require(design.dims() == bank.size(), ErrorCode::DimensionMismatch, "mask design dimension differs from bank size");
  require(item.segment_offset + item.segment_count <= coefficients.rows(), ErrorCode::DimensionMismatch,
          "item '" + item.id + "' segment range exceeds coefficient rows");
  const ConceptResponse h(coefficients.middleRows(item.segment_offset, item.segment_count), bank, head, masks, gmm,
                          pooling, measure);
  return {sobol_total_indices_batched([&](const Eigen::MatrixXd& m) { return h.rows(m); }, design),
          ImportanceScope::Local, item.id, false};
}

GlobalImportance global_importance(std::span<const ImportanceVector> locals, std::span<const Group> groups,
                                   Eigen::Index d_certain, Eigen::Index d_uncertain) {
  require(locals.size() == groups.size(), ErrorCode::DimensionMismatch, "one local vector per item is required");
  GlobalImportance g;
  g.certain = {Eigen::VectorXd::Zero(d_certain), ImportanceScope::GlobalCertain, {}, false};
  g.uncertain = {Eigen::VectorXd::Zero(d_uncertain), ImportanceScope::GlobalUncertain, {}, false};
  std::size_t n_cer = 0, n_unc = 0;
  for (std::size_t i = 0; i < locals.size(); ++i) {
    auto& target = groups[i] == Group::Uncertain ? g.uncertain : g.certain;
    require(locals[i].raw.size() == target.raw.size(), ErrorCode::DimensionMismatch,
            "local vector of item '" + locals[i].item_id + "' does not match its group's bank");
    target.raw += locals[i].raw;
    ++(groups[i] == Group::Uncertain ? n_unc : n_cer);
  }
  if (n_cer) g.certain.raw /= double(n_cer);
  else g.certain.empty = true;
  if (n_unc) g.uncertain.raw /= double(n_unc);
  else g.uncertain.empty = true;
  return g;
}

}  // namespace cue
