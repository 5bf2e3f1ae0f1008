#pragma once

#include <string>
#include <vector>

#include "s2a/cube.hpp"
#include "s2a/detector.hpp"
#include "s2a/rng.hpp"

namespace s2a {

/// Seeded synthetic-scene recipe. Objects are bright rectangles whose
/// location shows up in every band (so it survives band selection), while
/// class identity is a signed offset along a weak three-band spectral
/// contrast: per-cube PCA recovers that contrast as a stable component (the
/// background carries a checkerboard along it), but in any single band it
/// drowns in per-object brightness jitter.
struct SyntheticSceneSpec {
  int image_size = 64;   // divisible by 32
  int bands = 16;
  int num_images = 80;
  int num_classes = 2;
  int min_objects = 1, max_objects = 2;
  int min_object_size = 14, max_object_size = 26;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticScene {
  HyperCube cube;
  std::vector<GroundTruthBox> gts;
};

/// Orthonormal spectral directions the generator composes: `lift` (all-band
/// brightness), `signature` (class axis, a zero-sum three-band contrast with
/// a unique dominant entry so PCA recovers a stable sign), `gradient`
/// (background shading).
struct SpectralBasis {
  std::vector<double> lift;
  std::vector<double> signature;
  std::vector<double> gradient;
};

SpectralBasis spectral_basis(int bands);

SyntheticScene generate_scene(const SyntheticSceneSpec& spec, Rng& rng);

/// Writes <out_dir>/cubes/img_NNN.{hdr,raw} and
/// <out_dir>/annotations/img_NNN.txt for the whole corpus.
void generate_corpus(const SyntheticSceneSpec& spec, const std::string& out_dir);

}  // namespace s2a
