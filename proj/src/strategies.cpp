#include "cue/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cue {

FilterMethod parse_filter_method(std::string_view name) {
  for (auto m : kAllFilterMethods)
    if (to_string(m) == name) return m;
  throw Error(ErrorCode::InvalidConfig, "unknown filter method '" + std::string(name) + "'");
}

std::string_view to_string(FilterMethod m) {
  switch (m) {
    case FilterMethod::OursImportance: return "OursImportance";
    case FilterMethod::OursNMF: return "OursNMF";
    case FilterMethod::BaselineTotal: return "BaselineTotal";
    case FilterMethod::BaselineAleatoric: return "BaselineAleatoric";
    case FilterMethod::BaselineEpistemic: return "BaselineEpistemic";
  }
  return "OursNMF";
}

RejectMethod parse_reject_method(std::string_view name) {
  for (auto m : kAllRejectMethods)
    if (to_string(m) == name) return m;
  throw Error(ErrorCode::InvalidConfig, "unknown rejection method '" + std::string(name) + "'");
}

std::string_view to_string(RejectMethod m) {
  switch (m) {
    case RejectMethod::ConceptOnly: return "ConceptOnly";
    case RejectMethod::Weighted: return "Weighted";
    case RejectMethod::Total: return "Total";
    case RejectMethod::Aleatoric: return "Aleatoric";
    case RejectMethod::Epistemic: return "Epistemic";
  }
  return "Weighted";
}

std::vector<std::size_t> rank_descending(std::span<const std::size_t> candidates, std::span<const double> values,
                                         const std::vector<ItemRecord>& items) {
  require(candidates.size() == values.size(), ErrorCode::DimensionMismatch, "one value per candidate is required");
  std::vector<std::size_t> pos(candidates.size());
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return items[candidates[a]].id < items[candidates[b]].id;
  });
  std::vector<std::size_t> order;
  order.reserve(pos.size());
  for (auto p : pos) order.push_back(candidates[p]);
  return order;
}

FilterRanking noise_filter_ranking(const Eigen::MatrixXd& per_item, std::span<const int> flagged,
                                   std::span<const std::size_t> candidates, const std::vector<ItemRecord>& items,
                                   FilterMethod method) {
  require(!flagged.empty(), ErrorCode::EmptyFlagSet, "no noise concepts flagged");
  require(method == FilterMethod::OursImportance || method == FilterMethod::OursNMF, ErrorCode::InvalidConfig,
          "noise_filter_ranking handles the concept-based methods only");
  for (int c : flagged)
    require(c >= 0 && c < per_item.cols(), ErrorCode::ConceptOutOfRange,
            "flagged concept " + std::to_string(c) + " is not in the uncertain bank");
  std::vector<double> score;
  score.reserve(candidates.size());
  for (auto i : candidates) {
    double s = 0.0;
    for (int c : flagged) s += per_item(static_cast<Eigen::Index>(i), c);
    score.push_back(s);
  }
  return {rank_descending(candidates, score, items), method, {flagged.begin(), flagged.end()}};
}

FilterRanking baseline_uncertainty_ranking(const Scores& scores, Measure measure,
                                           std::span<const std::size_t> candidates,
                                           const std::vector<ItemRecord>& items) {
  std::vector<double> v;
  v.reserve(candidates.size());
  for (auto i : candidates) v.push_back(scores.at(i).get(measure));
  const FilterMethod m = measure == Measure::Total       ? FilterMethod::BaselineTotal
                         : measure == Measure::Aleatoric ? FilterMethod::BaselineAleatoric
                                                         : FilterMethod::BaselineEpistemic;
  return {rank_descending(candidates, v, items), m, {}};
}

Curve kept_useful_curve(const FilterRanking& ranking, const std::vector<ItemRecord>& items) {
  const std::size_t n = ranking.order.size();
  require(n >= 1, ErrorCode::EmptyInput, "empty ranking");
  Curve c;
  c.label = std::string(to_string(ranking.method));
  std::size_t useful = 0;
  for (std::size_t k = 1; k <= n; ++k) {
    const auto& it = items[ranking.order[n - k]];
    require(it.is_corrupted.has_value(), ErrorCode::MissingTruthFlags, "item '" + it.id + "' has no is_corrupted flag");
    if (!*it.is_corrupted) ++useful;
    c.x.push_back(double(k) / double(n));
    c.y.push_back(double(useful) / double(k));
  }
  if (n == 1) {  // a curve needs two points; selecting nothing is the trivially clean set
    c.x.insert(c.x.begin(), 0.0);
    c.y.insert(c.y.begin(), c.y.front());
  }
  return c;
}

RejectionRanking rejection_ranking(const Eigen::MatrixXd& pooled_combined, const Eigen::VectorXd& e_certain,
                                   const Eigen::VectorXd& e_uncertain, std::span<const double> f,
                                   const std::vector<ItemRecord>& items, RejectMethod method) {
  const Eigen::Index d_cer = e_certain.size();
  require(pooled_combined.cols() == d_cer + e_uncertain.size(), ErrorCode::DimensionMismatch,
          "pooled coefficients must span the combined bank");
  require(static_cast<std::size_t>(pooled_combined.rows()) == items.size() && f.size() == items.size(),
          ErrorCode::DimensionMismatch, "one pooled row and one f value per item");
  require(method == RejectMethod::ConceptOnly || method == RejectMethod::Weighted, ErrorCode::InvalidConfig,
          "rejection_ranking handles the concept-based methods only");

  std::vector<std::size_t> all(items.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<Eigen::Index> top(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) pooled_combined.row(static_cast<Eigen::Index>(i)).maxCoeff(&top[i]);

  if (method == RejectMethod::Weighted) {
    std::vector<double> score(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) score[i] = top[i] >= d_cer ? f[i] : -f[i];
    return {rank_descending(all, score, items), method};
  }

  std::vector<std::size_t> unc, cer;
  std::vector<double> unc_v, cer_v;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (top[i] >= d_cer) {
      unc.push_back(i);
      unc_v.push_back(e_uncertain(top[i] - d_cer));
    } else {
      cer.push_back(i);
      cer_v.push_back(-e_certain(top[i]));  // ascending certain importance
    }
  }
  auto order = rank_descending(unc, unc_v, items);
  const auto tail = rank_descending(cer, cer_v, items);
  order.insert(order.end(), tail.begin(), tail.end());
  return {std::move(order), method};
}

RejectionRanking baseline_rejection_ranking(const Scores& scores, Measure measure,
                                            const std::vector<ItemRecord>& items) {
  std::vector<std::size_t> all(items.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<double> v;
  v.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) v.push_back(scores.at(i).get(measure));
  const RejectMethod m = measure == Measure::Total       ? RejectMethod::Total
                         : measure == Measure::Aleatoric ? RejectMethod::Aleatoric
                                                         : RejectMethod::Epistemic;
  return {rank_descending(all, v, items), m};
}

std::vector<double> rejection_grid() {
  std::vector<double> x(100);
  for (int j = 0; j < 100; ++j) x[static_cast<std::size_t>(j)] = j / 100.0;
  return x;
}

namespace {

template <typename Keep>
Curve rejection_curve(std::span<const std::size_t> order, std::size_t n_items, Keep&& hit) {
  const std::size_t n = order.size();
  require(n >= 1 && n == n_items, ErrorCode::DimensionMismatch, "ranking must cover every item");
  // suffix[k]: hits among order[k..n)
  std::vector<std::size_t> suffix(n + 1, 0);
  for (std::size_t k = n; k-- > 0;) suffix[k] = suffix[k + 1] + (hit(order[k]) ? 1 : 0);
  Curve c;
  c.x = rejection_grid();
  for (std::size_t j = 0; j < c.x.size(); ++j) {
    const std::size_t rejected = j * n / 100;
    c.y.push_back(double(suffix[rejected]) / double(n - rejected));
  }
  return c;
}

}  // namespace

Curve accuracy_rejection_curve(std::span<const std::size_t> order, std::span<const int> predicted,
                               const std::vector<ItemRecord>& items) {
  require(predicted.size() == items.size(), ErrorCode::DimensionMismatch, "one prediction per item");
  for (const auto& it : items)
    require(it.true_label.has_value() || it.is_ood.value_or(false), ErrorCode::MissingTruthFlags,
            "item '" + it.id + "' has neither a label nor an OOD flag");
  auto c = rejection_curve(order, items.size(), [&](std::size_t i) {
    const auto& it = items[i];
    return !it.is_ood.value_or(false) && it.true_label && *it.true_label == predicted[i];
  });
  c.label = "accuracy";
  return c;
}

Curve ood_rejection_curve(std::span<const std::size_t> order, const std::vector<ItemRecord>& items) {
  for (const auto& it : items)
    require(it.is_ood.has_value(), ErrorCode::MissingTruthFlags, "item '" + it.id + "' has no is_ood flag");
  auto c = rejection_curve(order, items.size(), [&](std::size_t i) { return *items[i].is_ood; });
  c.label = "ood_remaining";
  return c;
}

double curve_auc(const Curve& c) {
  require(c.x.size() == c.y.size() && c.x.size() >= 2, ErrorCode::DimensionMismatch, "curve needs >= 2 points");
  double area = 0.0;
  for (std::size_t i = 1; i < c.x.size(); ++i) area += 0.5 * (c.y[i] + c.y[i - 1]) * (c.x[i] - c.x[i - 1]);
  return area / (c.x.back() - c.x.front());
}

double curve_at(const Curve& c, double x) {
  if (x <= c.x.front()) return c.y.front();
  if (x >= c.x.back()) return c.y.back();
  const auto hi = static_cast<std::size_t>(std::upper_bound(c.x.begin(), c.x.end(), x) - c.x.begin());
  const std::size_t lo = hi - 1;
  const double t = (x - c.x[lo]) / (c.x[hi] - c.x[lo]);
  return c.y[lo] + t * (c.y[hi] - c.y[lo]);
}

WilcoxonResult wilcoxon_one_sided(std::span<const double> differences) {
  std::vector<double> d;
  for (double v : differences)
    if (v != 0.0) d.push_back(v);
  const std::size_t n = d.size();
  require(n >= 5, ErrorCode::TooFewPairs, "need at least 5 nonzero differences, have " + std::to_string(n));

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  // Doubled average ranks keep tied ranks integral.
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
    const long r2 = static_cast<long>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) rank2[idx[k]] = r2;
    const double t = double(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  long w2 = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) w2 += rank2[i];

  WilcoxonResult res;
  res.n = n;
  res.w_plus = w2 / 2.0;
  if (n <= 20) {
    // Null distribution of the doubled statistic over all 2^n sign patterns.
    const long total = static_cast<long>(n * (n + 1));
    std::vector<double> count(static_cast<std::size_t>(total + 1), 0.0);
    count[0] = 1.0;
    long reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (long s = reach; s >= 0; --s)
        if (count[static_cast<std::size_t>(s)] != 0.0) count[static_cast<std::size_t>(s + rank2[i])] += count[static_cast<std::size_t>(s)];
      reach += rank2[i];
    }
    double tail = 0.0;
    for (long s = w2; s <= total; ++s) tail += count[static_cast<std::size_t>(s)];
    res.p_value = tail / std::ldexp(1.0, static_cast<int>(n));
    res.exact = true;
  } else {
    const double nn = double(n);
    const double mean = nn * (nn + 1) / 4.0;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
    const double z = (res.w_plus - mean - 0.5) / std::sqrt(var);
    res.p_value = 0.5 * std::erfc(z / std::sqrt(2.0));
    res.exact = false;
  }
  return res;
}

double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorCode::DimensionMismatch, "need two equal-length vectors, n >= 2");
  const auto n = static_cast<Eigen::Index>(a.size());
  const Eigen::Map<const Eigen::VectorXd> x(a.data(), n), y(b.data(), n);
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const double sx = xc.norm(), sy = yc.norm();
  require(sx > 0.0 && sy > 0.0, ErrorCode::ConstantInput, "correlation of a constant vector is undefined");
  return std::clamp(xc.dot(yc) / (sx * sy), -1.0, 1.0);
}

Repredictions concept_ablation_repredict(const Eigen::MatrixXd& coefficients, const ConceptBank<double>& bank,
                                         std::span<const int> ablate, const std::vector<ItemRecord>& items,
                                         const HeadParams& head, Pooling pooling) {
  require(coefficients.cols() == bank.size(), ErrorCode::DimensionMismatch, "coefficients do not match bank");
  Eigen::MatrixXd W = coefficients;
  for (int c : ablate) {
    require(c >= 0 && c < bank.size(), ErrorCode::ConceptOutOfRange,
            "concept " + std::to_string(c) + " is not in the bank");
    W.col(c).setZero();
  }
  Repredictions out;
  out.probabilities.resize(static_cast<Eigen::Index>(items.size()), head.classes());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Eigen::MatrixXd segments =
        W.middleRows(items[i].segment_offset, items[i].segment_count) * bank.concepts;
    const Eigen::VectorXd p = head_forward(pool_rows(segments, pooling), head);
    Eigen::Index k = 0;
    p.maxCoeff(&k);
    out.predicted.push_back(static_cast<int>(k));
    out.probabilities.row(static_cast<Eigen::Index>(i)) = p.transpose();
  }
  return out;
}

EqualizedOdds equalized_odds_gap(std::span<const int> predicted, const std::vector<ItemRecord>& items,
                                 int n_classes) {
  require(predicted.size() == items.size(), ErrorCode::DimensionMismatch, "one prediction per item");
  EqualizedOdds res;
  double sum = 0.0;
  for (int y = 0; y < n_classes; ++y) {
    // [group][positive?] -> (hits, support)
    double hit[2][2] = {{0, 0}, {0, 0}}, sup[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& it = items[i];
      if (!it.true_label) continue;
      require(it.group_attr.has_value(), ErrorCode::MissingGroupAttr, "item '" + it.id + "' has no group_attr");
      const int g = *it.group_attr;
      const int pos = *it.true_label == y ? 1 : 0;
      sup[g][pos] += 1;
      if (predicted[i] == y) hit[g][pos] += 1;
    }
    double gap = -1.0;
    const char* names[2] = {"FPR", "TPR"};
    for (int pos = 1; pos >= 0; --pos) {
      if (sup[0][pos] == 0 || sup[1][pos] == 0) {
        res.skipped.push_back("class " + std::to_string(y) + " " + names[pos]);
        continue;
      }
      gap = std::max(gap, std::abs(hit[1][pos] / sup[1][pos] - hit[0][pos] / sup[0][pos]));
    }
    if (gap >= 0.0) {
      sum += gap;
      ++res.classes_used;
    }
  }
  require(res.classes_used > 0, ErrorCode::MissingGroupAttr, "no class has support in both groups");
  res.gap = sum / res.classes_used;
  return res;
}

std::vector<int> auto_flag_concepts(const Eigen::MatrixXd& segment_coefficients,
                                    std::span<const std::size_t> candidates, const std::vector<ItemRecord>& items) {
  const Eigen::Index d = segment_coefficients.cols();
  std::vector<Eigen::Index> rows;
  std::vector<double> labels;
  for (auto i : candidates) {
    const auto& it = items[i];
    require(it.is_corrupted.has_value(), ErrorCode::MissingTruthFlags,
            "auto-flag needs is_corrupted on item '" + it.id + "'");
    for (std::int64_t s = 0; s < it.segment_count; ++s) {
      rows.push_back(it.segment_offset + s);
      labels.push_back(*it.is_corrupted ? 1.0 : 0.0);
    }
  }
  const auto m = static_cast<Eigen::Index>(rows.size());
  require(m > 0, ErrorCode::EmptyInput, "no segments to train the probe on");

  // Standardized features plus intercept.
  Eigen::MatrixXd X(m, d + 1);
  for (Eigen::Index r = 0; r < m; ++r) X.row(r).head(d) = segment_coefficients.row(rows[static_cast<std::size_t>(r)]);
  const Eigen::RowVectorXd mu = X.leftCols(d).colwise().mean();
  Eigen::RowVectorXd sd = ((X.leftCols(d).rowwise() - mu).array().square().colwise().sum() / double(m)).sqrt();
  sd = sd.unaryExpr([](double v) { return v > 0 ? v : 1.0; });
  X.leftCols(d) = ((X.leftCols(d).rowwise() - mu).array().rowwise() / sd.array()).matrix();
  X.col(d).setOnes();
  const Eigen::Map<const Eigen::VectorXd> y(labels.data(), m);

  // Newton iterations on the L2-penalized log-likelihood (intercept unpenalized).
  const double lambda = 1e-2;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d + 1, lambda);
  penalty(d) = 1e-8;
  for (int it = 0; it < 50; ++it) {
    const Eigen::VectorXd prob = (1.0 + (-(X * beta)).array().exp()).inverse();
    const Eigen::VectorXd grad = X.transpose() * (prob - y) + penalty.cwiseProduct(beta);
    const Eigen::VectorXd wts = prob.array() * (1.0 - prob.array());
    Eigen::MatrixXd H = X.transpose() * wts.asDiagonal() * X;
    H.diagonal() += penalty;
    const Eigen::VectorXd step = H.ldlt().solve(grad);
    beta -= step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
  }

  const Eigen::VectorXd w = beta.head(d);
  const double best = w.maxCoeff();
  std::vector<int> flagged;
  if (best <= 0.0) return flagged;
  for (Eigen::Index j = 0; j < d; ++j)
    if (w(j) >= 0.5 * best) flagged.push_back(static_cast<int>(j));
  return flagged;
}

}  // namespace cue
