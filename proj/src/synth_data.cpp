// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskapprox/synth_data.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "maskapprox/error.hpp"

namespace maskapprox {

namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

// Portable draws: the standard distributions are not specified bit-for-bit.
int rand_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

double rand_unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

const std::array<const char*, 3> kObjectNames = {"building", "road", "vegetation"};
const std::array<const char*, 3> kEditNames = {"add", "remove", "enlarge"};
const std::array<const char*, 4> kQuadrantNames = {"top left", "top right", "bottom left",
                                                   "bottom right"};

template <typename E, std::size_t N>
E enum_from(const std::array<const char*, N>& names, const std::string& s, const char* what) {
  for (std::size_t i = 0; i < N; ++i)
    if (s == names[i]) return static_cast<E>(i);
  throw DataError(std::string("unknown ") + what + " '" + s + "'");
}

SceneObject random_object(ObjectKind kind, const SceneSpec& spec, Rng& rng) {
  const int H = static_cast<int>(spec.height), W = static_cast<int>(spec.width);
  SceneObject o;
  o.kind = kind;
  switch (kind) {
    case ObjectKind::building:
      o.w = rand_int(rng, 6, 12);
      o.h = rand_int(rng, 6, 12);
      break;
    case ObjectKind::road:
      if (rng() & 1) {
        o.w = rand_int(rng, 14, 24);
        o.h = 3;
      } else {
        o.w = 3;
        o.h = rand_int(rng, 14, 24);
      }
      break;
    case ObjectKind::vegetation:
      o.w = o.h = 2 * rand_int(rng, 3, 5) + 1;
      break;
  }
  o.w = std::min(o.w, W - 2);
  o.h = std::min(o.h, H - 2);
  o.x = rand_int(rng, 0, W - o.w);
  o.y = rand_int(rng, 0, H - o.h);
  o.intensity = 0.85 + 0.15 * rand_unit(rng);
  return o;
}

SceneObject grown(SceneObject o) {
  switch (o.kind) {
    case ObjectKind::building:
    case ObjectKind::vegetation:
      o.x -= 2;
      o.y -= 2;
      o.w += 4;
      o.h += 4;
      break;
    case ObjectKind::road:
      if (o.w > o.h) {
        o.x -= 4;
        o.w += 8;
      } else {
        o.y -= 4;
        o.h += 8;
      }
      break;
  }
  return o;
}

// Clause templates indexed [edit][variant]; {o} object noun, {q} quadrant.
const std::array<std::array<const char*, 5>, 3> kClauses = {{
    {"a {o} appears in the {q}", "a new {o} is added in the {q}", "a {o} has been added at the {q}",
     "there is a new {o} in the {q}", "in the {q} a {o} appears"},
    {"a {o} disappears from the {q}", "the {o} in the {q} is removed",
     "a {o} has been removed at the {q}", "there is no longer a {o} in the {q}",
     "in the {q} a {o} disappears"},
    {"a {o} in the {q} becomes larger", "the {o} in the {q} is enlarged",
     "a {o} has been expanded at the {q}", "there is a larger {o} in the {q}",
     "in the {q} a {o} grows"},
}};

const std::array<const char*, 3> kNouns = {"building", "road", "tree"};

const std::array<const char*, 5> kNoChange = {
    "the scene is unchanged", "there is no change", "nothing has changed in the scene",
    "the two images are the same", "no difference can be seen"};

std::string render_clause(const ChangeEdit& e, std::size_t variant) {
  std::string s = kClauses[static_cast<int>(e.edit)][variant];
  auto sub = [&](const std::string& key, const std::string& val) {
    const auto pos = s.find(key);
    if (pos != std::string::npos) s.replace(pos, key.size(), val);
  };
  sub("{o}", kNouns[static_cast<int>(e.object)]);
  sub("{q}", kQuadrantNames[static_cast<int>(e.quadrant)]);
  return s;
}

const std::map<std::string, ChangeEdit>& clause_table() {
  static const std::map<std::string, ChangeEdit> table = [] {
    std::map<std::string, ChangeEdit> t;
    for (int e = 0; e < 3; ++e)
      for (int o = 0; o < 3; ++o)
        for (int q = 0; q < 4; ++q)
          for (std::size_t v = 0; v < 5; ++v) {
            ChangeEdit ce{static_cast<EditKind>(e), static_cast<ObjectKind>(o),
                          static_cast<Quadrant>(q)};
            t.emplace(render_clause(ce, v), ce);
          }
    return t;
  }();
  return table;
}

// Base colours per label (background, building, road, vegetation).
const std::array<std::array<double, 3>, 4> kPalette = {{
    {0.55, 0.50, 0.40},
    {0.86, 0.80, 0.76},
    {0.28, 0.28, 0.31},
    {0.16, 0.50, 0.20},
}};
constexpr double kNoise = 0.04;

Tensor render_image(const SceneSpec& spec, std::uint64_t stream) {
  const std::size_t H = spec.height, W = spec.width;
  std::vector<double> img(3 * H * W);
  std::vector<double> shade(H * W, 1.0);
  std::vector<std::uint8_t> label(H * W, 0);
  for (const auto& o : spec.objects)
    for (int r = std::max(0, o.y); r < std::min<int>(H, o.y + o.h); ++r)
      for (int c = std::max(0, o.x); c < std::min<int>(W, o.x + o.w); ++c)
        if (o.covers(r, c)) {
          label[r * W + c] = static_cast<std::uint8_t>(1 + static_cast<int>(o.kind));
          shade[r * W + c] = o.intensity;
        }
  Rng rng(derive_seed(spec.seed, stream));
  for (std::size_t i = 0; i < H * W; ++i)
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double v = kPalette[label[i]][ch] * shade[i] + kNoise * (2.0 * rand_unit(rng) - 1.0);
      v = std::clamp(v, 0.0, 1.0);
      img[ch * H * W + i] = std::round(v * 255.0) / 255.0;
    }
  return Tensor::from({3, H, W}, std::move(img));
}

}  // namespace

std::string object_kind_name(ObjectKind k) { return kObjectNames[static_cast<int>(k)]; }
std::string edit_kind_name(EditKind k) { return kEditNames[static_cast<int>(k)]; }
std::string quadrant_name(Quadrant q) { return kQuadrantNames[static_cast<int>(q)]; }
ObjectKind object_kind_from_name(const std::string& s) {
  return enum_from<ObjectKind>(kObjectNames, s, "object kind");
}
EditKind edit_kind_from_name(const std::string& s) {
  return enum_from<EditKind>(kEditNames, s, "edit kind");
}
Quadrant quadrant_from_name(const std::string& s) {
  return enum_from<Quadrant>(kQuadrantNames, s, "quadrant");
}

bool SceneObject::covers(int row, int col) const {
  if (row < y || row >= y + h || col < x || col >= x + w) return false;
  if (kind != ObjectKind::vegetation) return true;
  // Doubled coordinates keep the disc test in integers.
  const int dx = 2 * (col - x) + 1 - w, dy = 2 * (row - y) + 1 - h;
  return dx * dx + dy * dy <= w * h;
}

Quadrant SceneSpec::quadrant_of(const SceneObject& o) const {
  const bool left = 2 * o.x + o.w < static_cast<int>(width);
  const bool top = 2 * o.y + o.h < static_cast<int>(height);
  if (top) return left ? Quadrant::top_left : Quadrant::top_right;
  return left ? Quadrant::bottom_left : Quadrant::bottom_right;
}

std::vector<std::uint8_t> SceneSpec::label_map() const {
  std::vector<std::uint8_t> out(height * width, 0);
  for (const auto& o : objects)
    for (int r = std::max(0, o.y); r < std::min<int>(height, o.y + o.h); ++r)
      for (int c = std::max(0, o.x); c < std::min<int>(width, o.x + o.w); ++c)
        if (o.covers(r, c)) out[r * width + c] = static_cast<std::uint8_t>(1 + static_cast<int>(o.kind));
  return out;
}

nlohmann::json change_log_to_json(const ChangeLog& log) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : log)
    arr.push_back({{"edit", edit_kind_name(e.edit)},
                   {"object", object_kind_name(e.object)},
                   {"quadrant", quadrant_name(e.quadrant)}});
  return arr;
}

ChangeLog change_log_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw DataError("change_log must be an array");
  ChangeLog log;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("edit") || !e.contains("object") || !e.contains("quadrant"))
      throw DataError("change_log entry needs edit, object and quadrant");
    log.push_back({edit_kind_from_name(e["edit"].get<std::string>()),
                   object_kind_from_name(e["object"].get<std::string>()),
                   quadrant_from_name(e["quadrant"].get<std::string>())});
  }
  return log;
}

bool can_place(const SceneSpec& spec, const SceneObject& obj, std::size_t skip) {
  if (obj.x < 0 || obj.y < 0 || obj.w <= 0 || obj.h <= 0) return false;
  if (obj.x + obj.w > static_cast<int>(spec.width) || obj.y + obj.h > static_cast<int>(spec.height))
    return false;
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    if (i == skip) continue;
    const auto& o = spec.objects[i];
    const bool apart = obj.x + obj.w + 1 <= o.x || o.x + o.w + 1 <= obj.x ||
                       obj.y + obj.h + 1 <= o.y || o.y + o.h + 1 <= obj.y;
    if (!apart) return false;
  }
  return true;
}

SceneSpec generate_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                         double density) {
  if (height == 0 || width == 0 || height % 16 != 0 || width % 16 != 0)
    throw ConfigError("scene extents must be positive multiples of 16");
  if (!std::isfinite(density) || density < 0.0)
    throw ConfigError("density must be a finite non-negative number");

  SceneSpec spec;
  spec.height = height;
  spec.width = width;
  spec.seed = seed;
  Rng rng(derive_seed(seed, 0));
  const auto attempts = static_cast<long>(std::llround(density * height * width / 256.0));
  for (long a = 0; a < attempts; ++a) {
    const auto kind = static_cast<ObjectKind>(rand_int(rng, 0, 2));
    for (int t = 0; t < 20; ++t) {
      SceneObject o = random_object(kind, spec, rng);
      if (can_place(spec, o)) {
        spec.objects.push_back(o);
        break;
      }
    }
  }
  return spec;
}

std::optional<ChangeEdit> try_edit(SceneSpec& spec, EditKind edit, Rng& rng,
                                   std::vector<bool>& touched) {
  if (edit == EditKind::add) {
    const auto quad = static_cast<Quadrant>(rand_int(rng, 0, 3));
    const auto kind = static_cast<ObjectKind>(rand_int(rng, 0, 2));
    for (int t = 0; t < 50; ++t) {
      SceneObject o = random_object(kind, spec, rng);
      if (spec.quadrant_of(o) != quad || !can_place(spec, o)) continue;
      spec.objects.push_back(o);
      touched.push_back(true);
      return ChangeEdit{edit, kind, quad};
    }
    return std::nullopt;
  }

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < spec.objects.size(); ++i)
    if (!touched[i]) eligible.push_back(i);
  if (eligible.empty()) return std::nullopt;
  // Rotate from a random start so every candidate gets a turn.
  const std::size_t start = rng() % eligible.size();
  for (std::size_t k = 0; k < eligible.size(); ++k) {
    const std::size_t i = eligible[(start + k) % eligible.size()];
    const SceneObject o = spec.objects[i];
    const ChangeEdit ce{edit, o.kind, spec.quadrant_of(o)};
    if (edit == EditKind::remove) {
      spec.objects.erase(spec.objects.begin() + static_cast<long>(i));
      touched.erase(touched.begin() + static_cast<long>(i));
      return ce;
    }
    const SceneObject g = grown(o);
    if (can_place(spec, g, i)) {
      spec.objects[i] = g;
      touched[i] = true;
      return ce;
    }
  }
  return std::nullopt;
}

std::pair<SceneSpec, ChangeLog> apply_change(const SceneSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 1));
  SceneSpec post = spec;
  std::vector<bool> touched(post.objects.size(), false);
  ChangeLog log;

  const double u = rand_unit(rng);
  const int edits = u < 0.20 ? 0 : u < 0.65 ? 1 : u < 0.90 ? 2 : 3;
  for (int e = 0; e < edits; ++e) {
    for (int attempt = 0; attempt < 10; ++attempt) {
      const auto kind = static_cast<EditKind>(rand_int(rng, 0, 2));
      if (auto ce = try_edit(post, kind, rng, touched)) {
        log.push_back(*ce);
        break;
      }
    }
  }
  return {std::move(post), std::move(log)};
}

std::vector<std::string> captions_for(const ChangeLog& log) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < kCaptionsPerSample; ++j) {
    if (log.empty()) {
      out.emplace_back(kNoChange[j]);
      continue;
    }
    std::string s;
    for (std::size_t i = 0; i < log.size(); ++i) {
      if (i) s += " and ";
      s += render_clause(log[i], (j + i) % kClauses[0].size());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::optional<ChangeLog> parse_caption(const std::string& caption) {
  for (const char* nc : kNoChange)
    if (caption == nc) return ChangeLog{};
  ChangeLog log;
  std::size_t pos = 0;
  const std::string sep = " and ";
  while (true) {
    const std::size_t next = caption.find(sep, pos);
    const std::string clause = caption.substr(pos, next == std::string::npos ? next : next - pos);
    const auto& table = clause_table();
    auto it = table.find(clause);
    if (it == table.end()) return std::nullopt;
    log.push_back(it->second);
    if (next == std::string::npos) break;
    pos = next + sep.size();
  }
  return log;
}

std::vector<std::string> caption_vocabulary() {
  std::set<std::string> words = {"and"};
  auto add_words = [&](const std::string& s) {
    std::istringstream is(s);
    std::string w;
    while (is >> w) words.insert(w);
  };
  for (const auto& kv : clause_table()) add_words(kv.first);
  for (const char* s : kNoChange) add_words(s);
  return {words.begin(), words.end()};
}

BiTemporalSample render_sample(const SceneSpec& pre, const SceneSpec& post,
                               const ChangeLog& log) {
  if (pre.height != post.height || pre.width != post.width)
    throw ContractError("render_sample: pre and post canvases differ");
  BiTemporalSample s;
  s.ipre = render_image(pre, 2);
  SceneSpec post_keyed = post;
  post_keyed.seed = pre.seed;
  s.ipost = render_image(post_keyed, 3);

  const auto a = pre.label_map(), b = post.label_map();
  std::vector<double> mask(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) mask[i] = a[i] != b[i] ? 1.0 : 0.0;
  s.mask = Tensor::from({1, pre.height, pre.width}, std::move(mask));
  s.captions = captions_for(log);
  s.change_log = log;
  return s;
}

std::array<std::size_t, 3> split_sizes(std::size_t n) {
  const std::size_t train = n * 8 / 10, val = n / 10;
  return {train, val, n - train - val};
}

std::vector<BiTemporalSample> generate_dataset(const DatasetConfig& cfg) {
  if (cfg.count == 0) throw ConfigError("dataset count must be positive");
  const auto sizes = split_sizes(cfg.count);
  const int digits = std::max<int>(4, static_cast<int>(std::to_string(cfg.count - 1).size()));
  std::vector<BiTemporalSample> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const std::uint64_t s = derive_seed(cfg.seed, i);
    const SceneSpec pre = generate_scene(s, cfg.height, cfg.width, cfg.density);
    const auto [post, log] = apply_change(pre, s);
    BiTemporalSample sample = render_sample(pre, post, log);
    char id[32];
    std::snprintf(id, sizeof id, "s%0*zu", digits, i);
    sample.id = id;
    sample.split = i < sizes[0] ? "train" : i < sizes[0] + sizes[1] ? "val" : "test";
    out.push_back(std::move(sample));
  }
  return out;
}

// ---------------------------------------------------------------- PNG

namespace {

void write_png(const fs::path& path, std::uint32_t w, std::uint32_t h, std::uint32_t format,
               const std::vector<std::uint8_t>& pixels) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = w;
  img.height = h;
  img.format = format;
  const fs::path tmp = path.string() + ".tmp";
  if (!png_image_write_to_file(&img, tmp.c_str(), 0, pixels.data(), 0, nullptr))
    throw DataError(path.string() + ": " + img.message);
  fs::rename(tmp, path);
}

std::vector<std::uint8_t> read_png(const fs::path& path, std::uint32_t format,
                                   std::uint32_t& w, std::uint32_t& h) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw DataError(path.string() + ": " + img.message);
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError(path.string() + ": " + img.message);
  }
  w = img.width;
  h = img.height;
  return buf;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_png_rgb(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("write_png_rgb: need 3 x H x W");
  const std::size_t H = image.dim(1), W = image.dim(2);
  const auto d = image.data();
  std::vector<std::uint8_t> px(3 * H * W);
  for (std::size_t i = 0; i < H * W; ++i)
    for (std::size_t c = 0; c < 3; ++c) px[3 * i + c] = to_byte(d[c * H * W + i]);
  write_png(path, static_cast<std::uint32_t>(W), static_cast<std::uint32_t>(H), PNG_FORMAT_RGB, px);
}

void write_png_mask(const fs::path& path, const Tensor& mask) {
  if (mask.rank() != 3 || mask.dim(0) != 1) throw DimensionError("write_png_mask: need 1 x H x W");
  std::vector<std::uint8_t> px(mask.numel());
  const auto d = mask.data();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = d[i] > 0.5 ? 255 : 0;
  write_png(path, static_cast<std::uint32_t>(mask.dim(2)), static_cast<std::uint32_t>(mask.dim(1)),
            PNG_FORMAT_GRAY, px);
}

Tensor read_png_rgb(const fs::path& path) {
  std::uint32_t w = 0, h = 0;
  const auto px = read_png(path, PNG_FORMAT_RGB, w, h);
  std::vector<double> d(3 * std::size_t{w} * h);
  const std::size_t n = std::size_t{w} * h;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) d[c * n + i] = px[3 * i + c] / 255.0;
  return Tensor::from({3, h, w}, std::move(d));
}

Tensor read_png_mask(const fs::path& path) {
  std::uint32_t w = 0, h = 0;
  const auto px = read_png(path, PNG_FORMAT_GRAY, w, h);
  std::vector<double> d(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (px[i] != 0 && px[i] != 255) throw DataError(path.string() + ": mask is not binary");
    d[i] = px[i] ? 1.0 : 0.0;
  }
  return Tensor::from({1, h, w}, std::move(d));
}

// ---------------------------------------------------------------- dataset IO

void write_dataset(const std::vector<BiTemporalSample>& samples, const fs::path& dir) {
  if (fs::exists(dir) && !fs::is_empty(dir))
    throw InputError(dir.string() + " exists and is not empty");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::ostringstream manifest;
  for (const auto& s : samples) {
    const std::string pre = "images/" + s.id + "_pre.png";
    const std::string post = "images/" + s.id + "_post.png";
    const std::string mask = "masks/" + s.id + ".png";
    write_png_rgb(dir / pre, s.ipre);
    write_png_rgb(dir / post, s.ipost);
    write_png_mask(dir / mask, s.mask);
    nlohmann::json j = {{"id", s.id},          {"split", s.split},
                        {"pre", pre},          {"post", post},
                        {"mask", mask},        {"captions", s.captions},
                        {"change_log", change_log_to_json(s.change_log)}};
    manifest << j.dump() << '\n';
  }
  const fs::path tmp = dir / "manifest.jsonl.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << manifest.str();
    if (!out) throw DataError("cannot write " + tmp.string());
  }
  fs::rename(tmp, dir / "manifest.jsonl");
}

std::vector<BiTemporalSample> read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("dataset directory not found: " + dir.string());
  const fs::path manifest = dir / "manifest.jsonl";
  std::ifstream in(manifest);
  if (!in) throw InputError("missing " + manifest.string());

  std::vector<BiTemporalSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = manifest.string() + ":" + std::to_string(lineno);
    BiTemporalSample s;
    try {
      const auto j = nlohmann::json::parse(line);
      s.id = j.at("id").get<std::string>();
      s.split = j.at("split").get<std::string>();
      s.captions = j.at("captions").get<std::vector<std::string>>();
      s.change_log = change_log_from_json(j.at("change_log"));
      s.ipre = read_png_rgb(dir / j.at("pre").get<std::string>());
      s.ipost = read_png_rgb(dir / j.at("post").get<std::string>());
      s.mask = read_png_mask(dir / j.at("mask").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError(manifest.string() + ": no samples");
  return out;
}

std::vector<BiTemporalSample> read_split(const fs::path& dir, const std::string& split) {
  std::vector<BiTemporalSample> out;
  for (auto& s : read_dataset(dir))
    if (s.split == split) out.push_back(std::move(s));
  return out;
}

}  // namespace maskapprox
