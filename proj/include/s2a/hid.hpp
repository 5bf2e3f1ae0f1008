#pragma once

#include <string>
#include <utility>
#include <vector>

#include "s2a/cube.hpp"

namespace s2a {

/// Principal components of the per-pixel spectra. Rows of `components` are
/// orthonormal principal directions, eigenvalues non-increasing.
struct PcaModel {
  int bands = 0;
  std::vector<double> mean;                 // length bands
  std::vector<std::vector<double>> components;  // k rows of length bands
  std::vector<double> explained_variance;   // length k, non-increasing

  void validate() const;
};

/// Contiguous partition of the band axis with one representative per segment.
struct BandSelection {
  std::vector<int> segment_boundaries;  // k+1 entries, 0 .. B
  std::vector<int> representatives;     // k entries, one inside each segment
  double objective_value = 0.0;         // total squared reconstruction residual

  void validate(int bands) const;
};

/// Percentile contrast-stretch parameters for the SA "generation" step.
struct GenerationParams {
  double low_percentile = 0.02;
  double high_percentile = 0.98;
  bool per_channel = true;

  void validate() const;
};

/// Top-k PCA of the B x B covariance of pixel spectra. Component sign is
/// fixed so each component's largest-magnitude entry is positive.
PcaModel fit_pca(const HyperCube& cube, int k);

/// Projects onto a 3-component model; each score channel is independently
/// min-max scaled to [0, 255] (degenerate range maps to 0).
AggregatedImage project_pca(const HyperCube& cube, const PcaModel& model);

/// Exact DP optimum over contiguous partitions into k segments with one
/// representative band each, minimizing the total scalar least-squares
/// reconstruction residual. Ties break to the lexicographically smallest
/// boundary sequence, then smallest representative indices.
BandSelection select_bands(const HyperCube& cube, int k);

/// False-color composite of the 3 representative bands (wavelength
/// descending -> R,G,B) with a per-channel percentile stretch.
AggregatedImage compose_sa(const HyperCube& cube, const BandSelection& sel,
                           const GenerationParams& gen);

/// (SA, SE) = (compose_sa(select_bands(cube, k_sa)), project_pca(fit_pca(cube, k_se))).
std::pair<AggregatedImage, AggregatedImage> decouple(
    const HyperCube& cube, int k_se = 3, int k_sa = 3,
    const GenerationParams& gen = GenerationParams{});

/// Symmetric eigendecomposition by cyclic Jacobi rotations; returns
/// (eigenvalues descending, matching eigenvector rows).
void symmetric_eigen(const std::vector<std::vector<double>>& matrix,
                     std::vector<double>& eigenvalues,
                     std::vector<std::vector<double>>& eigenvectors);

/// Quantile by nearest sorted rank: sorted[round(q * (n - 1))].
double quantile_nearest(std::vector<double> values, double q);

}  // namespace s2a
