#pragma once

#include <map>
#include <string>

#include "s2a/tensor.hpp"

namespace s2a {

/// Weight checkpoint: a manifest of (name, shape, offset) entries followed by
/// 64-bit little-endian floats, entries ordered by name. std::map keeps the
/// deterministic ordering for free.
void save_checkpoint(const std::map<std::string, Tensor>& params,
                     const std::string& path);

/// Loads values into freshly created leaf tensors (requires_grad = true).
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

/// Copies values from a loaded checkpoint into an existing parameter set;
/// throws on missing names or shape mismatches.
void restore_into(std::map<std::string, Tensor>& params, const std::string& path);

}  // namespace s2a
