// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskapprox/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "maskapprox/error.hpp"

namespace maskapprox {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'X', 'C', 'K', 'P', 'T', '1'};

template <class T>
void put_le(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(const char* p) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const nlohmann::json& hyperparams) {
  std::string payload;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    const std::size_t offset = payload.size();
    if (t.dtype() == DType::f32) {
      for (double v : t.data()) put_le<float>(payload, static_cast<float>(v));
    } else {
      for (double v : t.data()) put_le<double>(payload, v);
    }
    index.push_back({{"name", name},
                     {"shape", t.shape()},
                     {"dtype", dtype_name(t.dtype())},
                     {"offset", offset},
                     {"nbytes", payload.size() - offset}});
  }
  nlohmann::json header = {{"format", "maskapprox-checkpoint"},
                           {"version", 1},
                           {"hyperparams", hyperparams},
                           {"tensors", index}};
  const std::string header_text = header.dump();
  std::string blob(kMagic, sizeof(kMagic));
  put_le<std::uint64_t>(blob, header_text.size());
  blob += header_text;
  blob += payload;

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw DataError("short write to checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + ": not a maskapprox checkpoint");
  }
  const auto header_len = get_le<std::uint64_t>(blob.data() + 8);
  if (16 + header_len > blob.size()) throw DataError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad header JSON: " + e.what());
  }
  const std::size_t base = 16 + header_len;
  Checkpoint ck;
  ck.hyperparams = header.value("hyperparams", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const DType dtype = dtype_from_name(entry.at("dtype").get<std::string>());
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto nbytes = entry.at("nbytes").get<std::size_t>();
    const std::size_t width = dtype == DType::f32 ? 4 : 8;
    const std::size_t n = shape_numel(shape);
    if (nbytes != n * width || base + offset + nbytes > blob.size()) {
      throw DataError(path.string() + ": tensor '" + name + "' has inconsistent extent");
    }
    std::vector<double> values(n);
    const char* p = blob.data() + base + offset;
    for (std::size_t i = 0; i < n; ++i) {
      values[i] = dtype == DType::f32 ? static_cast<double>(get_le<float>(p + i * 4))
                                      : get_le<double>(p + i * 8);
    }
    ck.tensors.emplace_back(name, Tensor::from(shape, std::move(values), dtype));
  }
  return ck;
}

void load_into(ParameterSet& params, const Checkpoint& checkpoint) {
  const auto& items = params.items();
  if (items.size() != checkpoint.tensors.size()) {
    throw DataError("checkpoint has " + std::to_string(checkpoint.tensors.size()) +
                    " tensors, model expects " + std::to_string(items.size()));
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& [name, dst] = items[i];
    const auto& [src_name, src] = checkpoint.tensors[i];
    if (name != src_name || dst.shape() != src.shape()) {
      throw DataError("checkpoint tensor '" + src_name + "' " + shape_str(src.shape()) +
                      " does not match model parameter '" + name + "' " +
                      shape_str(dst.shape()));
    }
    Tensor target = dst;
    auto d = target.mutable_data();
    std::copy(src.data().begin(), src.data().end(), d.begin());
    round_to_dtype(d, target.dtype());
  }
}

}  // namespace maskapprox
