// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "maskapprox/error.hpp"
#include "maskapprox/synth_data.hpp"
#include "support/test_util.hpp"

using namespace maskapprox;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void expect_same_tensor(const Tensor& a, const Tensor& b) {
  ASSERT_EQ(a.shape(), b.shape());
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) ASSERT_EQ(da[i], db[i]) << i;
}

}  // namespace

TEST(GenerateScene, SameSeedSameSpec) {
  EXPECT_EQ(generate_scene(42, 64, 64, 0.5), generate_scene(42, 64, 64, 0.5));
  EXPECT_NE(generate_scene(42, 64, 64, 0.5), generate_scene(43, 64, 64, 0.5));
}

TEST(GenerateScene, ZeroDensityIsEmpty) {
  EXPECT_TRUE(generate_scene(1, 64, 64, 0.0).objects.empty());
}

TEST(GenerateScene, HalfDensityCountBounds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto n = generate_scene(seed, 64, 64, 0.5).objects.size();
    EXPECT_GE(n, 1u) << seed;
    EXPECT_LE(n, 12u) << seed;
  }
}

TEST(GenerateScene, ObjectsInsideAndSeparated) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SceneSpec s = generate_scene(seed, 64, 64, 1.0);
    for (std::size_t i = 0; i < s.objects.size(); ++i) EXPECT_TRUE(can_place(s, s.objects[i], i));
  }
}

TEST(GenerateScene, InvalidSizeIsConfigError) {
  EXPECT_THROW(generate_scene(1, 60, 64, 0.5), ConfigError);
  EXPECT_THROW(generate_scene(1, 0, 64, 0.5), ConfigError);
  EXPECT_THROW(generate_scene(1, 64, 64, -1.0), ConfigError);
}

TEST(ApplyChange, DeterministicAndEditCountsInRange) {
  std::set<std::size_t> seen;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const SceneSpec pre = generate_scene(seed, 64, 64, 0.5);
    const auto [post, log] = apply_change(pre, seed);
    const auto [post2, log2] = apply_change(pre, seed);
    EXPECT_EQ(post, post2);
    EXPECT_EQ(log, log2);
    EXPECT_LE(log.size(), 3u);
    seen.insert(log.size());
    if (log.empty()) EXPECT_EQ(post, pre);
    for (std::size_t i = 0; i < post.objects.size(); ++i)
      EXPECT_TRUE(can_place(post, post.objects[i], i));
  }
  EXPECT_EQ(seen.size(), 4u);
}

TEST(ApplyChange, RemoveOnEmptySceneIsRejected) {
  SceneSpec empty = generate_scene(3, 64, 64, 0.0);
  Rng rng(1);
  std::vector<bool> touched;
  EXPECT_FALSE(try_edit(empty, EditKind::remove, rng, touched).has_value());
  EXPECT_FALSE(try_edit(empty, EditKind::enlarge, rng, touched).has_value());
  // apply_change resamples the edit kind, so only adds appear.
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto [post, log] = apply_change(empty, seed);
    for (const auto& e : log) EXPECT_EQ(e.edit, EditKind::add);
    EXPECT_EQ(post.objects.size(), log.size());
  }
}

TEST(ApplyChange, AddRecordsKindAndQuadrant) {
  SceneSpec empty = generate_scene(3, 64, 64, 0.0);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    SceneSpec s = empty;
    Rng rng(seed);
    std::vector<bool> touched;
    const auto e = try_edit(s, EditKind::add, rng, touched);
    ASSERT_TRUE(e.has_value());
    ASSERT_EQ(s.objects.size(), 1u);
    EXPECT_EQ(e->object, s.objects[0].kind);
    EXPECT_EQ(e->quadrant, s.quadrant_of(s.objects[0]));
  }
}

TEST(RenderSample, NoChangeHasEmptyMaskAndUnchangedCaption) {
  const SceneSpec pre = generate_scene(5, 64, 64, 0.5);
  const auto s = render_sample(pre, pre, {});
  for (double v : s.mask.data()) EXPECT_EQ(v, 0.0);
  EXPECT_NE(std::find(s.captions.begin(), s.captions.end(), "the scene is unchanged"),
            s.captions.end());
  // Texture noise still differs between the two epochs.
  EXPECT_GT(maskapprox::testing::max_abs_diff(s.ipre.data(), s.ipost.data()), 0.0);
}

TEST(RenderSample, AddedEightByEightBuildingMasksSixtyFourPixels) {
  const SceneSpec pre = generate_scene(5, 64, 64, 0.0);
  SceneSpec post = pre;
  post.objects.push_back({ObjectKind::building, 4, 6, 8, 8, 0.9});
  const ChangeLog log = {{EditKind::add, ObjectKind::building, Quadrant::top_left}};
  const auto s = render_sample(pre, post, log);
  double sum = 0.0;
  for (double v : s.mask.data()) sum += v;
  EXPECT_EQ(sum, 64.0);
  EXPECT_EQ(post.quadrant_of(post.objects[0]), Quadrant::top_left);
  EXPECT_EQ(s.captions[0], "a building appears in the top left");
}

TEST(RenderSample, MaskIsFootprintSymmetricDifference) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const SceneSpec pre = generate_scene(seed, 64, 64, 0.5);
    const auto [post, log] = apply_change(pre, seed + 1000);
    const auto s = render_sample(pre, post, log);
    const auto m = s.mask.data();
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        bool in_pre = false, in_post = false;
        for (const auto& o : pre.objects) in_pre |= o.covers(r, c);
        for (const auto& o : post.objects) in_post |= o.covers(r, c);
        // Objects keep their kind under edits, so footprints decide the labels.
        bool differs = in_pre != in_post;
        if (in_pre && in_post) {
          const auto a = pre.label_map(), b = post.label_map();
          differs = a[r * 64 + c] != b[r * 64 + c];
        }
        ASSERT_EQ(m[r * 64 + c], differs ? 1.0 : 0.0) << seed << " " << r << "," << c;
      }
    if (log.empty()) {
      for (double v : m) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(RenderSample, DeterministicAndQuantized) {
  const SceneSpec pre = generate_scene(9, 64, 64, 0.5);
  const auto [post, log] = apply_change(pre, 9);
  const auto a = render_sample(pre, post, log), b = render_sample(pre, post, log);
  expect_same_tensor(a.ipre, b.ipre);
  expect_same_tensor(a.ipost, b.ipost);
  expect_same_tensor(a.mask, b.mask);
  for (double v : a.ipre.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_DOUBLE_EQ(v * 255.0, std::round(v * 255.0));
  }
}

TEST(Captions, FiveCaptionsParseBackToChangeLog) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const SceneSpec pre = generate_scene(seed, 64, 64, 0.5);
    const auto [post, log] = apply_change(pre, seed);
    const auto caps = captions_for(log);
    ASSERT_EQ(caps.size(), kCaptionsPerSample);
    for (const auto& c : caps) {
      const auto parsed = parse_caption(c);
      ASSERT_TRUE(parsed.has_value()) << c;
      EXPECT_EQ(*parsed, log) << c;
    }
  }
  EXPECT_FALSE(parse_caption("a spaceship lands in the top left").has_value());
}

TEST(Captions, VocabularyIsSmall) {
  const auto vocab = caption_vocabulary();
  EXPECT_LE(vocab.size(), 60u);
  std::set<std::string> vs(vocab.begin(), vocab.end());
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto [post, log] = apply_change(generate_scene(seed, 64, 64, 0.5), seed);
    for (const auto& c : captions_for(log)) {
      std::istringstream is(c);
      std::string w;
      while (is >> w) EXPECT_TRUE(vs.count(w)) << w;
    }
  }
}

TEST(Dataset, SplitSizes) {
  EXPECT_EQ(split_sizes(200), (std::array<std::size_t, 3>{160, 20, 20}));
  EXPECT_EQ(split_sizes(10), (std::array<std::size_t, 3>{8, 1, 1}));
  EXPECT_THROW(generate_dataset({7, 0, 64, 64, 0.5}), ConfigError);
}

TEST(Dataset, RoundTripIsFieldExact) {
  const auto samples = generate_dataset({11, 10, 64, 64, 0.5});
  const auto dir = maskapprox::testing::temp_dir("synth_rt");
  write_dataset(samples, dir / "ds");
  const auto back = read_dataset(dir / "ds");
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(back[i].id, samples[i].id);
    EXPECT_EQ(back[i].split, samples[i].split);
    EXPECT_EQ(back[i].captions, samples[i].captions);
    EXPECT_EQ(back[i].change_log, samples[i].change_log);
    expect_same_tensor(back[i].ipre, samples[i].ipre);
    expect_same_tensor(back[i].ipost, samples[i].ipost);
    expect_same_tensor(back[i].mask, samples[i].mask);
  }
  EXPECT_TRUE(fs::exists(dir / "ds" / "images" / (samples[0].id + "_pre.png")));
  EXPECT_TRUE(fs::exists(dir / "ds" / "masks" / (samples[0].id + ".png")));
  EXPECT_THROW(write_dataset(samples, dir / "ds"), InputError);
  EXPECT_EQ(read_split(dir / "ds", "train").size(), 8u);
}

TEST(Dataset, ByteIdenticalAcrossRuns) {
  const auto dir = maskapprox::testing::temp_dir("synth_bytes");
  write_dataset(generate_dataset({5, 12, 64, 64, 0.5}), dir / "a");
  write_dataset(generate_dataset({5, 12, 64, 64, 0.5}), dir / "b");
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 12u * 3 + 1);
}

TEST(Dataset, TruncatedManifestLineNamesLine) {
  const auto dir = maskapprox::testing::temp_dir("synth_trunc");
  write_dataset(generate_dataset({5, 4, 64, 64, 0.5}), dir / "ds");
  std::string text = slurp(dir / "ds" / "manifest.jsonl");
  std::vector<std::string> lines;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  lines[2] = lines[2].substr(0, lines[2].size() / 2);
  {
    std::ofstream out(dir / "ds" / "manifest.jsonl", std::ios::binary);
    for (const auto& l : lines) out << l << '\n';
  }
  try {
    read_dataset(dir / "ds");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("manifest.jsonl:3"), std::string::npos) << e.what();
  }
}

TEST(Dataset, CorruptImageNamesFile) {
  const auto dir = maskapprox::testing::temp_dir("synth_corrupt");
  const auto samples = generate_dataset({5, 2, 64, 64, 0.5});
  write_dataset(samples, dir / "ds");
  { std::ofstream(dir / "ds" / "images" / (samples[1].id + "_post.png")) << "not a png"; }
  try {
    read_dataset(dir / "ds");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(samples[1].id + "_post.png"), std::string::npos);
  }
  EXPECT_THROW(read_dataset(dir / "missing"), InputError);
}

TEST(Png, MaskRoundTripKeepsBinaryValues) {
  const auto dir = maskapprox::testing::temp_dir("synth_png");
  std::vector<double> v(32 * 48);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i * 7919 % 3 == 0) ? 1.0 : 0.0;
  const Tensor m = Tensor::from({1, 32, 48}, v);
  write_png_mask(dir / "m.png", m);
  expect_same_tensor(read_png_mask(dir / "m.png"), m);
}
