#include "modelspace/svcca.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "modelspace/error.hpp"
#include "modelspace/graph.hpp"
#include "modelspace/parallel.hpp"

namespace modelspace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

ActivationMatrix collect_activations(const ModelSpec& model, const ProbeSet& probe,
                                     std::size_t threads) {
  probe.validate();
  ActivationMatrix act;
  act.model_id = model.id;
  act.rows = model.graph.representation_dim();
  act.cols = probe.size();
  act.values.assign(act.rows * act.cols, 0.0);
  act.probe_checksum = probe.checksum();
  parallel_for(probe.size(), threads, [&](std::size_t j) {
    const auto r = forward(model.graph, preprocess(model.preproc, probe.images[j])).representation;
    for (std::size_t u = 0; u < act.rows; ++u) act.at(u, j) = r[u];
  });
  return act;
}

namespace {

// Orthonormal basis (rows) of the leading centred subspace: with
// X = U S V^T, whitening the reduced data S_k V_k^T gives V_k^T.
Matrix whitened_subspace(const ActivationMatrix& act, double threshold) {
  Matrix x = Eigen::Map<const Matrix>(act.values.data(), static_cast<Eigen::Index>(act.rows),
                                      static_cast<Eigen::Index>(act.cols));
  x.colwise() -= x.rowwise().mean();
  Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || !(s(0) > 1e-12)) {
    fail(ErrorKind::DegenerateSubspace, "activations of '" + act.model_id + "' have no variance");
  }
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > 1e-10 * s(0)) ++rank;
  const double total = s.head(rank).squaredNorm();
  Eigen::Index keep = 0;
  double explained = 0.0;
  while (keep < rank) {
    explained += s(keep) * s(keep);
    ++keep;
    if (explained >= threshold * total * (1.0 - 1e-12)) break;
  }
  return svd.matrixV().leftCols(keep).transpose();
}

}  // namespace

SvccaResult svcca(const ActivationMatrix& a, const ActivationMatrix& b,
                  double variance_threshold) {
  if (!(variance_threshold > 0.0 && variance_threshold <= 1.0)) {
    fail(ErrorKind::InvalidArgument, "variance threshold must be in (0, 1]");
  }
  if (a.probe_checksum != b.probe_checksum || a.cols != b.cols) {
    fail(ErrorKind::ProbeMismatch, "activations of '" + a.model_id + "' and '" + b.model_id +
                                       "' come from different probes");
  }
  if (a.cols < 2) fail(ErrorKind::InvalidArgument, "SVCCA needs at least 2 probe samples");
  if (a.values.size() != a.rows * a.cols || b.values.size() != b.rows * b.cols) {
    fail(ErrorKind::ShapeMismatch, "activation matrix size does not match its dimensions");
  }
  const Matrix wa = whitened_subspace(a, variance_threshold);
  const Matrix wb = whitened_subspace(b, variance_threshold);
  // Cross-covariance of whitened data; its singular values are the
  // canonical correlations.
  const Matrix cross = wa * wb.transpose();
  Eigen::JacobiSVD<Matrix> svd(cross);
  SvccaResult r;
  r.kept_a = static_cast<std::size_t>(wa.rows());
  r.kept_b = static_cast<std::size_t>(wb.rows());
  const auto& s = svd.singularValues();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double c = std::clamp(s(i), 0.0, 1.0);
    r.correlations.push_back(c);
    sum += c;
  }
  r.mean_correlation = sum / static_cast<double>(s.size());
  return r;
}

double svcca_correlation(const ActivationMatrix& a, const ActivationMatrix& b,
                         double variance_threshold) {
  return svcca(a, b, variance_threshold).mean_correlation;
}

LabeledMatrix correlation_matrix(const std::vector<ActivationMatrix>& activations,
                                 double variance_threshold, std::size_t threads) {
  const std::size_t n = activations.size();
  if (n < 2) fail(ErrorKind::TooFewModels, "correlation matrix needs >= 2 models");
  LabeledMatrix m;
  m.kind = MatrixKind::Svcca;
  for (const auto& a : activations) m.ids.push_back(a.model_id);
  m.values.assign(n * n, 1.0);
  m.metadata = {{"variance_threshold", variance_threshold},
                {"probe_checksum", activations.front().probe_checksum},
                {"n_probe", activations.front().cols},
                {"centered", true}};
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  std::vector<double> results(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t p) {
    results[p] = svcca_correlation(activations[pairs[p].first], activations[pairs[p].second],
                                   variance_threshold);
  });
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    m.at(i, j) = m.at(j, i) = results[p];
  }
  m.validate();
  return m;
}

LabeledMatrix correlation_matrix(const std::vector<ModelSpec>& models, const ProbeSet& probe,
                                 double variance_threshold, std::size_t threads) {
  std::vector<ActivationMatrix> acts;
  acts.reserve(models.size());
  for (const auto& m : models) acts.push_back(collect_activations(m, probe, threads));
  return correlation_matrix(acts, variance_threshold, threads);
}

}  // namespace modelspace
