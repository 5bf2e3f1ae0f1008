#include "s2a/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "s2a/common.hpp"

namespace s2a {

namespace {

constexpr char kMagic[8] = {'S', '2', 'A', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(out, bits);
}

double read_f64(std::istream& in) {
  std::uint64_t bits = read_u64(in);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void save_checkpoint(const std::map<std::string, Tensor>& params,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, 8);
  write_u64(out, params.size());

  std::uint64_t offset = 0;  // in doubles, within the data section
  for (const auto& [name, tensor] : params) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, tensor.shape().size());
    for (int d : tensor.shape()) write_u64(out, static_cast<std::uint64_t>(d));
    write_u64(out, offset);
    offset += tensor.size();
  }
  for (const auto& [name, tensor] : params)
    for (double v : tensor.values()) write_f64(out, v);
  if (!out) throw IoError("failed writing checkpoint " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw ValidationError("not a checkpoint file: " + path);

  const std::uint64_t count = read_u64(in);
  std::vector<std::pair<std::string, Shape>> manifest;
  std::vector<std::uint64_t> offsets;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(read_u64(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape shape(read_u64(in));
    for (auto& d : shape) d = static_cast<int>(read_u64(in));
    offsets.push_back(read_u64(in));
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  if (!in) throw ValidationError("truncated checkpoint manifest: " + path);

  std::map<std::string, Tensor> params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto& [name, shape] = manifest[i];
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = read_f64(in);
    if (!in) throw ValidationError("truncated checkpoint payload: " + path);
    params.emplace(name, Tensor::from_data(shape, std::move(data), true));
  }
  return params;
}

void restore_into(std::map<std::string, Tensor>& params, const std::string& path) {
  auto loaded = load_checkpoint(path);
  for (auto& [name, tensor] : params) {
    auto it = loaded.find(name);
    if (it == loaded.end())
      throw ValidationError("checkpoint missing parameter '" + name + "'");
    if (it->second.shape() != tensor.shape())
      throw ValidationError("checkpoint shape mismatch for '" + name + "'");
    tensor.values() = it->second.values();
  }
}

}  // namespace s2a
