#include "ctsn/checkpoint.hpp"

#include "ctsn/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ctsn {

using nlohmann::json;

namespace {

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return __builtin_bswap64(v);
}

}  // namespace

void save_tensor_file(const TensorFile& file, const std::filesystem::path& path) {
  json header;
  header["version"] = kContainerVersion;
  header["dtype"] = "f64";
  json names = json::array(), shapes = json::array();
  for (const auto& n : file.tensors.names()) {
    names.push_back(n);
    const auto& t = file.tensors.at(n);
    shapes.push_back({t.rows(), t.cols()});
  }
  header["names"] = std::move(names);
  header["shapes"] = std::move(shapes);
  header["meta"] = file.meta;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  for (const auto& n : file.tensors.names()) {
    const auto& t = file.tensors.at(n);
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, t.data() + i, sizeof bits);
      bits = to_little(bits);
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

TensorFile load_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": missing header line");
  TensorFile file;
  try {
    const json header = json::parse(line);
    if (header.at("version").get<int>() != kContainerVersion)
      throw ValidationError(path.string() + ": unsupported container version");
    if (header.at("dtype").get<std::string>() != "f64")
      throw ValidationError(path.string() + ": unsupported dtype");
    const auto& names = header.at("names");
    const auto& shapes = header.at("shapes");
    if (names.size() != shapes.size()) throw ValidationError(path.string() + ": names/shapes length mismatch");
    if (header.contains("meta")) file.meta = header["meta"];
    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto rows = shapes[k].at(0).get<std::size_t>();
      const auto cols = shapes[k].at(1).get<std::size_t>();
      Tensor t(rows, cols);
      for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint64_t bits;
        if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits))
          throw ValidationError(path.string() + ": truncated data for '" + names[k].get<std::string>() + "'");
        bits = to_little(bits);
        std::memcpy(&t[i], &bits, sizeof bits);
      }
      file.tensors.add(names[k].get<std::string>(), std::move(t));
    }
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": bad header: " + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ValidationError(path.string() + ": trailing bytes");
  return file;
}

}  // namespace ctsn
