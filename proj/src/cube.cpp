#include "s2a/cube.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "s2a/common.hpp"

namespace s2a {

namespace fs = std::filesystem;

void HyperCube::validate() const {
  if (height <= 0 || width <= 0 || bands <= 0)
    throw ValidationError("cube dimensions must be positive");
  const std::size_t expected =
      static_cast<std::size_t>(height) * width * bands;
  if (data.size() != expected)
    throw ValidationError("cube data length " + std::to_string(data.size()) +
                          " does not match dimensions (" +
                          std::to_string(expected) + ")");
  if (wavelengths_nm.size() != static_cast<std::size_t>(bands))
    throw ValidationError("wavelength count does not match band count");
  for (std::size_t i = 0; i < wavelengths_nm.size(); ++i) {
    const double w = wavelengths_nm[i];
    if (!(w > 100.0 && w < 3000.0))
      throw ValidationError("wavelength " + std::to_string(w) +
                            " nm outside (100, 3000)");
    if (i > 0 && !(wavelengths_nm[i - 1] < w))
      throw ValidationError("wavelengths must be strictly increasing");
  }
  for (float v : data) {
    if (!std::isfinite(v)) throw ValidationError("cube contains non-finite samples");
  }
}

void MosaicFrame::validate() const {
  if (height <= 0 || width <= 0 || pattern_size <= 0)
    throw ValidationError("mosaic dimensions must be positive");
  if (height % pattern_size != 0 || width % pattern_size != 0)
    throw ValidationError("mosaic dimensions must be divisible by pattern size");
  if (data.size() != static_cast<std::size_t>(height) * width)
    throw ValidationError("mosaic data length does not match dimensions");
  if (cell_wavelengths_nm.size() !=
      static_cast<std::size_t>(pattern_size) * pattern_size)
    throw ValidationError("mosaic cell wavelength grid must be p*p");
}

void AggregatedImage::validate() const {
  if (height <= 0 || width <= 0)
    throw ValidationError("image dimensions must be positive");
  if (data.size() != static_cast<std::size_t>(height) * width * 3)
    throw ValidationError("image data length does not match dimensions");
}

std::vector<double> default_wavelengths(int bands) {
  std::vector<double> w(bands);
  if (bands == 1) {
    w[0] = 545.0;
    return w;
  }
  for (int i = 0; i < bands; ++i)
    w[i] = 470.0 + (620.0 - 470.0) * i / (bands - 1);
  return w;
}

namespace {

// Accepts the .hdr path, the .raw path, or the bare stem.
std::pair<fs::path, fs::path> cube_paths(const std::string& path) {
  fs::path p(path);
  if (p.extension() == ".hdr" || p.extension() == ".raw") p.replace_extension();
  fs::path hdr = p;
  hdr += ".hdr";
  fs::path raw = p;
  raw += ".raw";
  return {hdr, raw};
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

HyperCube read_cube(const std::string& path) {
  auto [hdr_path, raw_path] = cube_paths(path);
  std::ifstream hdr(hdr_path);
  if (!hdr) throw IoError("cannot open header " + hdr_path.string());

  HyperCube cube;
  bool have_wavelengths = false;
  std::string line;
  while (std::getline(hdr, line)) {
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "samples") {
      cube.width = std::stoi(value);
    } else if (key == "lines") {
      cube.height = std::stoi(value);
    } else if (key == "bands") {
      cube.bands = std::stoi(value);
    } else if (key == "interleave") {
      if (value != "bsq")
        throw ValidationError("unsupported interleave '" + value + "' in " +
                              hdr_path.string());
    } else if (key == "data type") {
      if (value != "float32le")
        throw ValidationError("unsupported data type '" + value + "' in " +
                              hdr_path.string());
    } else if (key == "wavelength") {
      if (value.size() < 2 || value.front() != '{' || value.back() != '}')
        throw ValidationError("malformed wavelength list in " + hdr_path.string());
      std::stringstream ss(value.substr(1, value.size() - 2));
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) cube.wavelengths_nm.push_back(std::stod(tok));
      }
      have_wavelengths = true;
    }
  }
  if (cube.height <= 0 || cube.width <= 0 || cube.bands <= 0)
    throw ValidationError("header missing samples/lines/bands: " + hdr_path.string());
  if (!have_wavelengths) cube.wavelengths_nm = default_wavelengths(cube.bands);

  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) throw IoError("cannot open payload " + raw_path.string());
  raw.seekg(0, std::ios::end);
  const std::size_t file_size = static_cast<std::size_t>(raw.tellg());
  raw.seekg(0);
  const std::size_t expected =
      static_cast<std::size_t>(cube.height) * cube.width * cube.bands * 4;
  if (file_size != expected)
    throw ValidationError("payload size " + std::to_string(file_size) +
                          " bytes, expected " + std::to_string(expected) +
                          " for " + raw_path.string());
  cube.data.resize(expected / 4);
  raw.read(reinterpret_cast<char*>(cube.data.data()),
           static_cast<std::streamsize>(expected));
  if (!raw) throw IoError("short read from " + raw_path.string());

  cube.validate();
  return cube;
}

void write_cube(const HyperCube& cube, const std::string& path) {
  cube.validate();
  auto [hdr_path, raw_path] = cube_paths(path);

  std::ofstream hdr(hdr_path);
  if (!hdr) throw IoError("cannot write header " + hdr_path.string());
  hdr << "samples = " << cube.width << "\n";
  hdr << "lines = " << cube.height << "\n";
  hdr << "bands = " << cube.bands << "\n";
  hdr << "interleave = bsq\n";
  hdr << "data type = float32le\n";
  hdr << "wavelength = {";
  hdr.precision(17);
  for (int b = 0; b < cube.bands; ++b) {
    if (b) hdr << ", ";
    hdr << cube.wavelengths_nm[b];
  }
  hdr << "}\n";
  if (!hdr) throw IoError("failed writing header " + hdr_path.string());

  std::ofstream raw(raw_path, std::ios::binary);
  if (!raw) throw IoError("cannot write payload " + raw_path.string());
  raw.write(reinterpret_cast<const char*>(cube.data.data()),
            static_cast<std::streamsize>(cube.data.size() * 4));
  if (!raw) throw IoError("failed writing payload " + raw_path.string());
}

HyperCube demosaic(const MosaicFrame& frame) {
  frame.validate();
  const int p = frame.pattern_size;
  HyperCube cube;
  cube.height = frame.height / p;
  cube.width = frame.width / p;
  cube.bands = p * p;
  cube.data.resize(static_cast<std::size_t>(cube.height) * cube.width * cube.bands);

  for (int k = 0; k < cube.bands; ++k) {
    const int dy = k / p;
    const int dx = k % p;
    for (int y = 0; y < cube.height; ++y)
      for (int x = 0; x < cube.width; ++x)
        cube.at(y, x, k) =
            frame.data[static_cast<std::size_t>(y * p + dy) * frame.width + x * p + dx];
  }

  // Sort bands by wavelength, permuting planes to match.
  std::vector<int> order(cube.bands);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return frame.cell_wavelengths_nm[a] < frame.cell_wavelengths_nm[b];
  });
  HyperCube sorted = cube;
  sorted.wavelengths_nm.resize(cube.bands);
  for (int k = 0; k < cube.bands; ++k) {
    sorted.wavelengths_nm[k] = frame.cell_wavelengths_nm[order[k]];
    std::memcpy(sorted.data.data() + static_cast<std::size_t>(k) * cube.plane_size(),
                cube.plane(order[k]), cube.plane_size() * sizeof(float));
  }
  sorted.validate();
  return sorted;
}

void render_image(const AggregatedImage& img, const std::string& path) {
  img.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  if (!out) throw IoError("failed writing image " + path);
}

AggregatedImage read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw ValidationError("not a binary PPM: " + path);
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (maxval != 255) throw ValidationError("unsupported PPM maxval in " + path);
  in.get();  // single whitespace after header
  AggregatedImage img;
  img.height = h;
  img.width = w;
  img.data.resize(static_cast<std::size_t>(h) * w * 3);
  in.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size()));
  if (!in) throw ValidationError("truncated PPM payload in " + path);
  img.validate();
  return img;
}

}  // namespace s2a
