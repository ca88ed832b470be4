#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "modelspace/model_io.hpp"
#include "modelspace/model_space.hpp"
#include "modelspace/probe.hpp"

namespace modelspace {

inline constexpr double kDefaultVarianceThreshold = 0.99;

// Responses of D representation units to N_p probe images, row-major
// (row = unit, column = image).
struct ActivationMatrix {
  std::string model_id;
  std::size_t rows = 0;  // D
  std::size_t cols = 0;  // N_p
  std::vector<double> values;
  std::string probe_checksum;

  double at(std::size_t unit, std::size_t sample) const { return values[unit * cols + sample]; }
  double& at(std::size_t unit, std::size_t sample) { return values[unit * cols + sample]; }
};

ActivationMatrix collect_activations(const ModelSpec& model, const ProbeSet& probe,
                                     std::size_t threads = 1);

struct SvccaResult {
  double mean_correlation = 0.0;
  std::vector<double> correlations;  // canonical correlations, descending
  std::size_t kept_a = 0;            // SVD directions kept per side
  std::size_t kept_b = 0;
};

// Centre each unit, keep the leading singular directions explaining at least
// `variance_threshold` of the squared spectrum, run CCA between the two
// reduced subspaces and average the canonical correlations.
SvccaResult svcca(const ActivationMatrix& a, const ActivationMatrix& b,
                  double variance_threshold = kDefaultVarianceThreshold);

double svcca_correlation(const ActivationMatrix& a, const ActivationMatrix& b,
                         double variance_threshold = kDefaultVarianceThreshold);

// Pairwise SVCCA over models (kind = Svcca, unit diagonal, symmetric).
LabeledMatrix correlation_matrix(const std::vector<ActivationMatrix>& activations,
                                 double variance_threshold = kDefaultVarianceThreshold,
                                 std::size_t threads = 1);
LabeledMatrix correlation_matrix(const std::vector<ModelSpec>& models, const ProbeSet& probe,
                                 double variance_threshold = kDefaultVarianceThreshold,
                                 std::size_t threads = 1);

}  // namespace modelspace
