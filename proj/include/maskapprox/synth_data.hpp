// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "maskapprox/tensor.hpp"

namespace maskapprox {

/// SplitMix64 combination used for every per-sample and per-stream seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

enum class ObjectKind { building, road, vegetation };
enum class EditKind { add, remove, enlarge };
enum class Quadrant { top_left, top_right, bottom_left, bottom_right };

std::string object_kind_name(ObjectKind k);
std::string edit_kind_name(EditKind k);
/// "top left", "bottom right", ...
std::string quadrant_name(Quadrant q);
ObjectKind object_kind_from_name(const std::string& s);
EditKind edit_kind_from_name(const std::string& s);
Quadrant quadrant_from_name(const std::string& s);

/// Axis-aligned footprint. Vegetation is the disc inscribed in the box.
struct SceneObject {
  ObjectKind kind = ObjectKind::building;
  int x = 0, y = 0;  // top-left corner
  int w = 0, h = 0;
  double intensity = 1.0;

  bool covers(int row, int col) const;
  bool operator==(const SceneObject&) const = default;
};

struct SceneSpec {
  std::size_t height = 0, width = 0;
  std::uint64_t seed = 0;
  std::vector<SceneObject> objects;

  /// Quadrant containing the object's centre.
  Quadrant quadrant_of(const SceneObject& o) const;
  /// 0 background, 1 + kind otherwise.
  std::vector<std::uint8_t> label_map() const;
  bool operator==(const SceneSpec&) const = default;
};

struct ChangeEdit {
  EditKind edit = EditKind::add;
  ObjectKind object = ObjectKind::building;
  Quadrant quadrant = Quadrant::top_left;
  bool operator==(const ChangeEdit&) const = default;
};
using ChangeLog = std::vector<ChangeEdit>;

nlohmann::json change_log_to_json(const ChangeLog& log);
ChangeLog change_log_from_json(const nlohmann::json& j);

/// Places round(density * H * W / 256) candidate objects, dropping those that
/// would overlap (1 px margin) after a bounded number of retries.
SceneSpec generate_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                         double density);

/// Fits inside the canvas and keeps a 1 px gap to every other object.
bool can_place(const SceneSpec& spec, const SceneObject& obj, std::size_t skip = SIZE_MAX);

/// Applies one edit to `spec` in place; nullopt (spec untouched) when it cannot.
/// `touched` marks objects already edited, parallel to spec.objects.
std::optional<ChangeEdit> try_edit(SceneSpec& spec, EditKind edit, Rng& rng,
                                   std::vector<bool>& touched);

/// Draws 0-3 edits ({0: .2, 1: .45, 2: .25, 3: .1}) from {add, remove, enlarge}.
std::pair<SceneSpec, ChangeLog> apply_change(const SceneSpec& spec, std::uint64_t seed);

inline constexpr std::size_t kCaptionsPerSample = 5;

std::vector<std::string> captions_for(const ChangeLog& log);
/// Inverse of the caption grammar; nullopt for sentences it cannot produce.
std::optional<ChangeLog> parse_caption(const std::string& caption);
/// Every word any caption can contain.
std::vector<std::string> caption_vocabulary();

struct BiTemporalSample {
  std::string id;
  std::string split;  // train / val / test
  Tensor ipre, ipost;  // 3 x H x W, values k/255
  Tensor mask;         // 1 x H x W in {0, 1}
  std::vector<std::string> captions;
  ChangeLog change_log;
};

/// Texture noise is keyed on the pre spec seed, with distinct streams for the two epochs.
BiTemporalSample render_sample(const SceneSpec& pre, const SceneSpec& post,
                               const ChangeLog& log);

struct DatasetConfig {
  std::uint64_t seed = 7;
  std::size_t count = 200;
  std::size_t height = 64, width = 64;
  double density = 0.5;
};

/// Split sizes for n samples: floor(0.8n), floor(0.1n), remainder.
std::array<std::size_t, 3> split_sizes(std::size_t n);
std::vector<BiTemporalSample> generate_dataset(const DatasetConfig& cfg);

void write_png_rgb(const std::filesystem::path& path, const Tensor& image);
void write_png_mask(const std::filesystem::path& path, const Tensor& mask);
Tensor read_png_rgb(const std::filesystem::path& path);
Tensor read_png_mask(const std::filesystem::path& path);

/// Writes images/, masks/ and manifest.jsonl. The directory must be empty or absent.
void write_dataset(const std::vector<BiTemporalSample>& samples, const std::filesystem::path& dir);
std::vector<BiTemporalSample> read_dataset(const std::filesystem::path& dir);
/// Samples of one split, in manifest order.
std::vector<BiTemporalSample> read_split(const std::filesystem::path& dir, const std::string& split);

}  // namespace maskapprox
