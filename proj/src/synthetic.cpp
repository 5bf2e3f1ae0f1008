#include "s2a/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "s2a/common.hpp"
#include "s2a/eval.hpp"

namespace s2a {

namespace fs = std::filesystem;

namespace {

// Scene composition constants. Variances are ordered so per-cube PCA sorts
// the directions deterministically: brightness lift >> class signature >>
// background gradient >> sensor noise.
constexpr double kBackground = 0.35;
constexpr double kGradientAmp = 0.02;
constexpr double kShadingAmp = 0.45;  // smooth brightness field along the lift
constexpr double kCheckerAmp = 0.05;
constexpr double kLiftAmp = 0.5;
constexpr double kClassAmp = 0.10;
constexpr double kNoiseSigma = 0.005;
constexpr double kAlphaLo = 0.65, kAlphaHi = 1.35;  // per-object brightness
constexpr double kBandJitterLo = 0.95, kBandJitterHi = 1.05;  // per-object-band

void subtract_projection(std::vector<double>& v, const std::vector<double>& unit) {
  double dot = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * unit[i];
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * unit[i];
}

void normalize(std::vector<double>& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw NumericError("degenerate spectral basis vector");
  for (double& x : v) x /= norm;
}

}  // namespace

void SyntheticSceneSpec::validate() const {
  if (image_size <= 0 || image_size % 32 != 0)
    throw ValidationError("synthetic image size must be positive and divisible by 32");
  if (bands < 4) throw ValidationError("synthetic cubes need at least 4 bands");
  if (num_images <= 0) throw ValidationError("need at least one image");
  if (num_classes < 2) throw ValidationError("need at least two classes");
  if (min_objects < 0 || max_objects < min_objects)
    throw ValidationError("object count range is inverted");
  if (min_object_size < 4 || max_object_size < min_object_size ||
      max_object_size > image_size / 2)
    throw ValidationError("object size range must fit the image");
}

SpectralBasis spectral_basis(int bands) {
  // The signature is an alternating-sign contrast across every band:
  // zero-sum against the uniform lift, per-band magnitude ~1/sqrt(B) (far
  // too weak to survive object brightness jitter in any raw-band composite),
  // and a boosted second entry that stays the unique dominant one after
  // orthogonalization, so the per-cube PCA sign convention
  // (largest-magnitude entry positive) orients the matching component the
  // same way in every cube.
  SpectralBasis basis;
  basis.lift.assign(bands, 1.0 / std::sqrt(static_cast<double>(bands)));

  basis.signature.resize(bands);
  for (int b = 0; b < bands; ++b)
    basis.signature[b] = (b % 2 == 0 ? -1.0 : 1.0);
  basis.signature[1] *= 1.5;
  subtract_projection(basis.signature, basis.lift);
  normalize(basis.signature);

  basis.gradient.resize(bands);
  for (int b = 0; b < bands; ++b)
    basis.gradient[b] = std::sin(2.0 * 3.14159265358979323846 * (b + 0.5) / bands);
  subtract_projection(basis.gradient, basis.lift);
  subtract_projection(basis.gradient, basis.signature);
  normalize(basis.gradient);
  return basis;
}

SyntheticScene generate_scene(const SyntheticSceneSpec& spec, Rng& rng) {
  spec.validate();
  const int s = spec.image_size, bands = spec.bands;
  const SpectralBasis basis = spectral_basis(bands);

  SyntheticScene scene;
  scene.cube.height = s;
  scene.cube.width = s;
  scene.cube.bands = bands;
  scene.cube.wavelengths_nm = default_wavelengths(bands);
  scene.cube.data.assign(static_cast<std::size_t>(s) * s * bands, 0.0f);

  // Background, three layers on top of a flat spectrum:
  //  - a pixel-parity flicker along the lift. Its variance dominates every
  //    other source, pinning the first principal component to pure
  //    brightness so the class contrast is NOT absorbed into it — yet it is
  //    purely high-frequency, so after any local smoothing the objects are
  //    the only low-frequency brightness structure left;
  //  - a pixel-level checkerboard along the signature direction, anchoring
  //    the matching principal component's orientation while averaging out
  //    of any object-sized box mean;
  //  - a faint diagonal gradient along the third direction.
  const double phase = rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
  for (int b = 0; b < bands; ++b)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const double g = static_cast<double>(x + y) / (s - 1) - 1.0;  // [-1, 1]
        const double shade = phase * ((x % 2) * 2.0 - 1.0);
        const double checker = ((x + y) % 2) * 2.0 - 1.0;
        scene.cube.at(y, x, b) = static_cast<float>(
            kBackground + kShadingAmp * shade * basis.lift[b] +
            kGradientAmp * g * basis.gradient[b] +
            kCheckerAmp * checker * basis.signature[b]);
      }

  const int n_objects =
      spec.min_objects + static_cast<int>(rng.below(
                             static_cast<std::uint64_t>(spec.max_objects - spec.min_objects + 1)));
  for (int obj = 0; obj < n_objects; ++obj) {
    const int cls = static_cast<int>(rng.below(spec.num_classes));
    const int ow = spec.min_object_size +
                   static_cast<int>(rng.below(spec.max_object_size - spec.min_object_size + 1));
    const int oh = spec.min_object_size +
                   static_cast<int>(rng.below(spec.max_object_size - spec.min_object_size + 1));

    int x0 = -1, y0 = -1;
    for (int attempt = 0; attempt < 20; ++attempt) {
      const int tx = 1 + static_cast<int>(rng.below(s - ow - 1));
      const int ty = 1 + static_cast<int>(rng.below(s - oh - 1));
      bool clear = true;
      const Box cand{static_cast<double>(tx), static_cast<double>(ty),
                     static_cast<double>(tx + ow), static_cast<double>(ty + oh)};
      for (const GroundTruthBox& prev : scene.gts) {
        const Box pb{(prev.cx - prev.w / 2) * s, (prev.cy - prev.h / 2) * s,
                     (prev.cx + prev.w / 2) * s, (prev.cy + prev.h / 2) * s};
        if (iou(cand, pb) > 0.1) {
          clear = false;
          break;
        }
      }
      if (clear) {
        x0 = tx;
        y0 = ty;
        break;
      }
    }

    const double alpha = rng.uniform(kAlphaLo, kAlphaHi);
    std::vector<double> band_jitter(bands);
    for (double& j : band_jitter) j = rng.uniform(kBandJitterLo, kBandJitterHi);
    if (x0 < 0) continue;  // crowded scene; rng draws above keep determinism simple

    const double class_sign = 2.0 * cls / (spec.num_classes - 1) - 1.0;
    for (int b = 0; b < bands; ++b) {
      const float delta = static_cast<float>(
          alpha * band_jitter[b] * kLiftAmp * basis.lift[b] +
          class_sign * kClassAmp * basis.signature[b]);
      for (int y = y0; y < y0 + oh; ++y)
        for (int x = x0; x < x0 + ow; ++x) scene.cube.at(y, x, b) += delta;
    }

    GroundTruthBox gt;
    gt.class_id = cls;
    gt.cx = (x0 + ow / 2.0) / s;
    gt.cy = (y0 + oh / 2.0) / s;
    gt.w = static_cast<double>(ow) / s;
    gt.h = static_cast<double>(oh) / s;
    scene.gts.push_back(gt);
  }

  for (float& v : scene.cube.data)
    v += static_cast<float>(rng.normal(0.0, kNoiseSigma));

  scene.cube.validate();
  return scene;
}

void generate_corpus(const SyntheticSceneSpec& spec, const std::string& out_dir) {
  spec.validate();
  const fs::path root(out_dir);
  fs::create_directories(root / "cubes");
  fs::create_directories(root / "annotations");

  Rng rng(spec.seed);
  for (int i = 0; i < spec.num_images; ++i) {
    SyntheticScene scene = generate_scene(spec, rng);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d", i);
    write_cube(scene.cube, (root / "cubes" / name).string());

    std::ofstream ann(root / "annotations" / (std::string(name) + ".txt"));
    if (!ann) throw IoError("cannot write annotations for " + std::string(name));
    char line[160];
    for (const GroundTruthBox& gt : scene.gts) {
      std::snprintf(line, sizeof(line), "%d %.6f %.6f %.6f %.6f\n", gt.class_id,
                    gt.cx, gt.cy, gt.w, gt.h);
      ann << line;
    }
  }
}

}  // namespace s2a
