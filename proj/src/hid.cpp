#include "s2a/hid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "s2a/common.hpp"

namespace s2a {

namespace {

std::uint8_t round_half_up_u8(double v) {
  double r = std::floor(v + 0.5);
  if (r < 0.0) r = 0.0;
  if (r > 255.0) r = 255.0;
  return static_cast<std::uint8_t>(r);
}

}  // namespace

void PcaModel::validate() const {
  if (bands <= 0 || mean.size() != static_cast<std::size_t>(bands))
    throw ValidationError("pca model mean length mismatch");
  if (components.size() != explained_variance.size())
    throw ValidationError("pca component/eigenvalue count mismatch");
  for (std::size_t i = 0; i < explained_variance.size(); ++i) {
    if (explained_variance[i] < 0.0)
      throw ValidationError("pca eigenvalue negative");
    if (i > 0 && explained_variance[i] > explained_variance[i - 1])
      throw ValidationError("pca eigenvalues must be non-increasing");
  }
}

void BandSelection::validate(int bands) const {
  if (segment_boundaries.size() < 2 ||
      segment_boundaries.front() != 0 || segment_boundaries.back() != bands)
    throw ValidationError("segment boundaries must span [0, B]");
  for (std::size_t i = 1; i < segment_boundaries.size(); ++i)
    if (segment_boundaries[i] <= segment_boundaries[i - 1])
      throw ValidationError("segment boundaries must be strictly increasing");
  if (representatives.size() + 1 != segment_boundaries.size())
    throw ValidationError("one representative per segment required");
  for (std::size_t i = 0; i < representatives.size(); ++i)
    if (representatives[i] < segment_boundaries[i] ||
        representatives[i] >= segment_boundaries[i + 1])
      throw ValidationError("representative outside its segment");
  if (objective_value < 0.0)
    throw ValidationError("objective must be non-negative");
}

void GenerationParams::validate() const {
  if (!(low_percentile >= 0.0 && low_percentile < 0.5))
    throw ValidationError("low percentile must be in [0, 0.5)");
  if (!(high_percentile > 0.5 && high_percentile <= 1.0))
    throw ValidationError("high percentile must be in (0.5, 1]");
  if (!(low_percentile < high_percentile))
    throw ValidationError("low percentile must be below high percentile");
}

void symmetric_eigen(const std::vector<std::vector<double>>& matrix,
                     std::vector<double>& eigenvalues,
                     std::vector<std::vector<double>>& eigenvectors) {
  const int n = static_cast<int>(matrix.size());
  std::vector<std::vector<double>> a = matrix;
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) v[i][i] = 1.0;

  double norm = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) norm += a[i][j] * a[i][j];
  norm = std::sqrt(norm);
  const double tol = (norm > 0.0 ? norm : 1.0) * 1e-15;

  // Cyclic Jacobi sweeps.
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (std::sqrt(2.0 * off) < tol) break;

    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < tol * 1e-3) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (int i = 0; i < n; ++i) {
          const double aip = a[i][p], aiq = a[i][q];
          a[i][p] = c * aip - s * aiq;
          a[i][q] = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = a[p][i], aqi = a[q][i];
          a[p][i] = c * api - s * aqi;
          a[q][i] = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = v[i][p], viq = v[i][q];
          v[i][p] = c * vip - s * viq;
          v[i][q] = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return a[x][x] > a[y][y]; });

  eigenvalues.resize(n);
  eigenvectors.assign(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i) {
    eigenvalues[i] = a[order[i]][order[i]];
    for (int j = 0; j < n; ++j) eigenvectors[i][j] = v[j][order[i]];
  }
}

PcaModel fit_pca(const HyperCube& cube, int k) {
  cube.validate();
  const int B = cube.bands;
  const std::size_t npix = cube.plane_size();
  if (k < 1 || k > B) throw ValidationError("pca component count out of range");
  if (npix < static_cast<std::size_t>(k))
    throw ValidationError("pca needs at least k pixels");

  PcaModel model;
  model.bands = B;
  model.mean.assign(B, 0.0);
  for (int b = 0; b < B; ++b) {
    const float* plane = cube.plane(b);
    double s = 0.0;
    for (std::size_t i = 0; i < npix; ++i) s += plane[i];
    model.mean[b] = s / static_cast<double>(npix);
  }

  // Explicit B x B covariance over pixel spectra (population divisor).
  std::vector<std::vector<double>> cov(B, std::vector<double>(B, 0.0));
  for (int b1 = 0; b1 < B; ++b1) {
    const float* p1 = cube.plane(b1);
    for (int b2 = b1; b2 < B; ++b2) {
      const float* p2 = cube.plane(b2);
      double s = 0.0;
      for (std::size_t i = 0; i < npix; ++i)
        s += (p1[i] - model.mean[b1]) * (p2[i] - model.mean[b2]);
      cov[b1][b2] = cov[b2][b1] = s / static_cast<double>(npix);
    }
  }

  std::vector<double> eigenvalues;
  std::vector<std::vector<double>> eigenvectors;
  symmetric_eigen(cov, eigenvalues, eigenvectors);

  model.components.resize(k);
  model.explained_variance.resize(k);
  for (int i = 0; i < k; ++i) {
    model.explained_variance[i] = std::max(0.0, eigenvalues[i]);
    model.components[i] = eigenvectors[i];
    // Sign convention: largest-magnitude entry positive.
    int arg = 0;
    for (int j = 1; j < B; ++j)
      if (std::abs(model.components[i][j]) > std::abs(model.components[i][arg]))
        arg = j;
    if (model.components[i][arg] < 0.0)
      for (double& c : model.components[i]) c = -c;
  }
  model.validate();
  return model;
}

AggregatedImage project_pca(const HyperCube& cube, const PcaModel& model) {
  cube.validate();
  if (model.bands != cube.bands)
    throw ValidationError("pca model band count does not match cube");
  if (model.components.size() != 3)
    throw ValidationError("spectral aggregation needs a 3-component model");

  const std::size_t npix = cube.plane_size();
  std::vector<std::vector<double>> scores(3, std::vector<double>(npix, 0.0));
  for (int c = 0; c < 3; ++c) {
    for (int b = 0; b < cube.bands; ++b) {
      const float* plane = cube.plane(b);
      const double w = model.components[c][b];
      const double m = model.mean[b];
      for (std::size_t i = 0; i < npix; ++i) scores[c][i] += w * (plane[i] - m);
    }
  }

  AggregatedImage img;
  img.height = cube.height;
  img.width = cube.width;
  img.role = ImageRole::SpectralAggregated;
  img.data.assign(npix * 3, 0);
  for (int c = 0; c < 3; ++c) {
    const auto [mn_it, mx_it] = std::minmax_element(scores[c].begin(), scores[c].end());
    const double mn = *mn_it, mx = *mx_it;
    if (mx > mn) {
      const double scale = 255.0 / (mx - mn);
      for (std::size_t i = 0; i < npix; ++i)
        img.data[i * 3 + c] = round_half_up_u8((scores[c][i] - mn) * scale);
    }
  }
  return img;
}

BandSelection select_bands(const HyperCube& cube, int k) {
  cube.validate();
  const int B = cube.bands;
  if (k < 1 || k > B) throw ValidationError("band selection k out of range");
  const std::size_t npix = cube.plane_size();

  // Gram matrix of flattened band planes.
  std::vector<std::vector<double>> gram(B, std::vector<double>(B, 0.0));
  for (int i = 0; i < B; ++i) {
    const float* pi = cube.plane(i);
    for (int j = i; j < B; ++j) {
      const float* pj = cube.plane(j);
      double s = 0.0;
      for (std::size_t t = 0; t < npix; ++t)
        s += static_cast<double>(pi[t]) * static_cast<double>(pj[t]);
      gram[i][j] = gram[j][i] = s;
    }
  }
  auto residual = [&](int b, int r) {
    // min_w ||x_b - w x_r||^2 with the closed-form scalar coefficient.
    if (gram[r][r] <= 0.0) return gram[b][b];
    double v = gram[b][b] - gram[b][r] * gram[b][r] / gram[r][r];
    return std::max(0.0, v);
  };

  // Segment cost: best representative for [i, j), residuals summed in band
  // order; smallest representative wins ties.
  std::vector<std::vector<double>> cost(B + 1, std::vector<double>(B + 1, 0.0));
  std::vector<std::vector<int>> rep(B + 1, std::vector<int>(B + 1, -1));
  for (int i = 0; i < B; ++i) {
    for (int j = i + 1; j <= B; ++j) {
      double best = std::numeric_limits<double>::infinity();
      int best_r = -1;
      for (int r = i; r < j; ++r) {
        double s = 0.0;
        for (int b = i; b < j; ++b) s += residual(b, r);
        if (s < best) {
          best = s;
          best_r = r;
        }
      }
      cost[i][j] = best;
      rep[i][j] = best_r;
    }
  }

  // Suffix DP: suf[s][i] = min cost of splitting [i, B) into s segments,
  // accumulated right-associated so reconstruction can compare exactly.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> suf(k + 1, std::vector<double>(B + 1, inf));
  suf[0][B] = 0.0;
  for (int s = 1; s <= k; ++s) {
    for (int i = B - 1; i >= 0; --i) {
      double best = inf;
      for (int j = i + 1; j <= B - (s - 1) + 1 && j <= B; ++j) {
        if (suf[s - 1][j] == inf) continue;
        const double c = cost[i][j] + suf[s - 1][j];
        if (c < best) best = c;
      }
      suf[s][i] = best;
    }
  }
  if (suf[k][0] == inf) throw ValidationError("no valid partition");

  BandSelection sel;
  sel.objective_value = suf[k][0];
  sel.segment_boundaries.push_back(0);
  int i = 0;
  for (int s = k; s >= 1; --s) {
    // Smallest j reproducing the optimum gives the lexicographically
    // smallest boundary sequence.
    for (int j = i + 1; j <= B; ++j) {
      if (suf[s - 1][j] == inf) continue;
      if (cost[i][j] + suf[s - 1][j] == suf[s][i]) {
        sel.segment_boundaries.push_back(j);
        sel.representatives.push_back(rep[i][j]);
        i = j;
        break;
      }
    }
  }
  sel.validate(B);
  return sel;
}

AggregatedImage compose_sa(const HyperCube& cube, const BandSelection& sel,
                           const GenerationParams& gen) {
  cube.validate();
  gen.validate();
  if (sel.representatives.size() != 3)
    throw ValidationError("spatial aggregation needs exactly 3 representative bands");
  for (int r : sel.representatives)
    if (r < 0 || r >= cube.bands)
      throw ValidationError("representative band index out of range");

  // Longest wavelength -> R, shortest -> G..B.
  std::vector<int> reps = sel.representatives;
  std::sort(reps.begin(), reps.end(), [&](int a, int b) {
    return cube.wavelengths_nm[a] > cube.wavelengths_nm[b];
  });

  const std::size_t npix = cube.plane_size();
  AggregatedImage img;
  img.height = cube.height;
  img.width = cube.width;
  img.role = ImageRole::SpatialAggregated;
  img.data.assign(npix * 3, 0);

  std::vector<double> all;
  if (!gen.per_channel) {
    all.reserve(npix * 3);
    for (int c = 0; c < 3; ++c) {
      const float* plane = cube.plane(reps[c]);
      all.insert(all.end(), plane, plane + npix);
    }
  }

  for (int c = 0; c < 3; ++c) {
    const float* plane = cube.plane(reps[c]);
    double lo, hi;
    if (gen.per_channel) {
      std::vector<double> vals(plane, plane + npix);
      lo = quantile_nearest(vals, gen.low_percentile);
      hi = quantile_nearest(std::move(vals), gen.high_percentile);
    } else {
      lo = quantile_nearest(all, gen.low_percentile);
      hi = quantile_nearest(all, gen.high_percentile);
    }
    if (hi > lo) {
      const double scale = 255.0 / (hi - lo);
      for (std::size_t i = 0; i < npix; ++i) {
        double v = (static_cast<double>(plane[i]) - lo) * scale;
        img.data[i * 3 + c] = round_half_up_u8(v);
      }
    }
  }
  return img;
}

double quantile_nearest(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  std::size_t idx = static_cast<std::size_t>(std::floor(pos + 0.5));
  if (idx >= values.size()) idx = values.size() - 1;
  return values[idx];
}

std::pair<AggregatedImage, AggregatedImage> decouple(const HyperCube& cube,
                                                     int k_se, int k_sa,
                                                     const GenerationParams& gen) {
  BandSelection sel = select_bands(cube, k_sa);
  PcaModel pca = fit_pca(cube, k_se);
  AggregatedImage sa = compose_sa(cube, sel, gen);
  AggregatedImage se = project_pca(cube, pca);

  std::ostringstream prov;
  prov.precision(12);
  prov << "k_sa = " << k_sa << "\nk_se = " << k_se
       << "\nlow_percentile = " << gen.low_percentile
       << "\nhigh_percentile = " << gen.high_percentile << "\nselected_bands =";
  for (int r : sel.representatives) prov << " " << r;
  prov << "\nband_objective = " << sel.objective_value << "\nexplained_variance =";
  for (double v : pca.explained_variance) prov << " " << v;
  prov << "\n";
  sa.provenance = prov.str();
  se.provenance = prov.str();
  return {std::move(sa), std::move(se)};
}

}  // namespace s2a
