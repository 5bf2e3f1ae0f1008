#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace s2a {

/// H x W x B radiance volume, band-sequential storage (band-major planes of
/// height x width, row-major within a plane). Samples are 32-bit floats to
/// match the on-disk payload exactly.
struct HyperCube {
  int height = 0;
  int width = 0;
  int bands = 0;
  std::vector<float> data;            // bands * height * width
  std::vector<double> wavelengths_nm; // strictly increasing, length = bands

  float at(int y, int x, int b) const {
    return data[static_cast<std::size_t>(b) * height * width +
                static_cast<std::size_t>(y) * width + x];
  }
  float& at(int y, int x, int b) {
    return data[static_cast<std::size_t>(b) * height * width +
                static_cast<std::size_t>(y) * width + x];
  }
  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  const float* plane(int b) const { return data.data() + static_cast<std::size_t>(b) * plane_size(); }

  /// Throws ValidationError on any invariant violation (size, wavelength
  /// ordering/range, non-finite samples).
  void validate() const;
};

/// Raw snapshot-sensor frame with a repeating p x p spectral tile.
struct MosaicFrame {
  int height = 0;
  int width = 0;
  int pattern_size = 0;
  std::vector<float> data;                  // height * width, row-major
  std::vector<double> cell_wavelengths_nm;  // p*p, row-major over the tile

  void validate() const;
};

enum class ImageRole { SpatialAggregated, SpectralAggregated };

/// 3-channel 8-bit image, pixel-interleaved RGB.
struct AggregatedImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // height * width * 3
  ImageRole role = ImageRole::SpatialAggregated;
  std::string provenance;

  std::uint8_t at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  void validate() const;
};

/// Evenly spaced default wavelength grid for the 16-band snapshot sensor,
/// covering 470-620 nm.
std::vector<double> default_wavelengths(int bands);

/// Reads a <name>.hdr / <name>.raw pair. `path` may name either file or the
/// common stem. Payload is float32 little-endian, band-sequential.
HyperCube read_cube(const std::string& path);

/// Writes cube as <stem>.hdr + <stem>.raw; read_cube(write_cube(c)) == c.
void write_cube(const HyperCube& cube, const std::string& path);

/// Subsamples the p x p mosaic tile into p^2 band planes, then sorts the
/// band axis by wavelength ascending. No interpolation.
HyperCube demosaic(const MosaicFrame& frame);

/// Writes a binary PPM (P6, maxval 255). Lossless round trip.
void render_image(const AggregatedImage& img, const std::string& path);

/// Reads a binary PPM written by render_image.
AggregatedImage read_image(const std::string& path);

}  // namespace s2a
