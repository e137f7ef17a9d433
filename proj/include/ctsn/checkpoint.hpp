#pragma once

#include "ctsn/optim.hpp"

#include <json.hpp>

#include <filesystem>

namespace ctsn {

/// Tensor container: one JSON header line
///   {"version":1,"dtype":"f64","names":[...],"shapes":[[r,c],...],"meta":{...}}
/// followed by the raw little-endian f64 data of each tensor in name order.
inline constexpr int kContainerVersion = 1;

struct TensorFile {
  ParamSet tensors;
  nlohmann::json meta = nlohmann::json::object();
};

void save_tensor_file(const TensorFile& file, const std::filesystem::path& path);
TensorFile load_tensor_file(const std::filesystem::path& path);

}  // namespace ctsn
