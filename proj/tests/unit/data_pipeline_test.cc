/* Copyright 2026 The cdadapt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "cdadapt/data_pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace cdadapt {
namespace {

namespace fs = std::filesystem;

ImagePair ramp_pair(int h, int w) {
  ImagePair p;
  p.id = "big";
  p.t1 = Image(h, w, 3);
  p.t2 = Image(h, w, 3);
  p.mask = Mask(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        p.t1.at(y, x, c) = static_cast<float>((y * 31 + x * 7 + c) % 256) / 255.0F;
        p.t2.at(y, x, c) = static_cast<float>((y * 13 + x * 17 + c) % 256) / 255.0F;
      }
      p.mask->at(y, x) = static_cast<std::uint8_t>(((y / 3) ^ (x / 5)) & 1);
    }
  }
  return p;
}

TEST(TilerTest, Stitch1024IsBitExact) {
  const ImagePair big = ramp_pair(1024, 1024);
  const auto tiles = tile_pair(big, 256);
  ASSERT_EQ(tiles.size(), 16U);
  ImagePair back = ramp_pair(1024, 1024);
  std::fill(back.t1.data.begin(), back.t1.data.end(), -1.0F);
  std::fill(back.t2.data.begin(), back.t2.data.end(), -1.0F);
  std::fill(back.mask->data.begin(), back.mask->data.end(), 9);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      const ImagePair& t = tiles[static_cast<std::size_t>(r * 4 + c)];
      EXPECT_EQ(t.id, "big_" + std::to_string(r) + "_" + std::to_string(c));
      for (int y = 0; y < 256; ++y) {
        for (int x = 0; x < 256; ++x) {
          for (int ch = 0; ch < 3; ++ch) {
            back.t1.at(r * 256 + y, c * 256 + x, ch) = t.t1.at(y, x, ch);
            back.t2.at(r * 256 + y, c * 256 + x, ch) = t.t2.at(y, x, ch);
          }
          back.mask->at(r * 256 + y, c * 256 + x) = t.mask->at(y, x);
        }
      }
    }
  }
  EXPECT_TRUE(back.t1 == big.t1);
  EXPECT_TRUE(back.t2 == big.t2);
  EXPECT_TRUE(*back.mask == *big.mask);
}

TEST(TilerTest, SplitArithmetic) {
  const TileGrid g = make_tile_grid(1024, 1024, 256);
  EXPECT_EQ(445 * g.rows * g.cols, 7120);
  EXPECT_EQ(64 * g.rows * g.cols, 1024);
}

TEST(TilerTest, BorderIsDiscardedAndSmallInputsRejected) {
  const TileGrid g = make_tile_grid(300, 600, 256);
  EXPECT_EQ(g.rows, 1);
  EXPECT_EQ(g.cols, 2);
  EXPECT_THROW(make_tile_grid(200, 600, 256), DimensionError);
  EXPECT_THROW(make_tile_grid(64, 64, 16), DimensionError);
}

TEST(LoaderTest, MatchesByStemAndReportsGaps) {
  const fs::path root = fs::temp_directory_path() / "cdadapt_loader_test";
  fs::remove_all(root);
  auto pairs = testing::random_pairs("p", 3, 8, 4, Domain::kTarget);
  pairs[2].mask.reset();
  save_cd_dataset(root, pairs);
  write_png_image(root / "A" / "orphan.png", pairs[0].t1);

  LoadReport report;
  const auto loaded = load_cd_dataset(root, DatasetLayout::kLevirStyle, &report, Domain::kTarget);
  ASSERT_EQ(loaded.size(), 3U);
  EXPECT_EQ(report.missing_in_b, std::vector<std::string>{"orphan"});
  EXPECT_EQ(report.unlabeled, std::vector<std::string>{"p002"});
  EXPECT_EQ(loaded[0].id, "p000");
  EXPECT_EQ(*loaded[0].mask, *pairs[0].mask);
  EXPECT_EQ(loaded[1].domain, Domain::kTarget);

  write_png_image(root / "B" / "p000.png", Image(9, 8, 3));
  EXPECT_THROW(load_cd_dataset(root), DimensionError);
  EXPECT_TRUE(load_cd_dataset(root / "absent").empty());
  EXPECT_THROW(parse_layout("nope"), std::invalid_argument);
  fs::remove_all(root);
}

TEST(SynthTest, DeterministicInSeed) {
  const auto p = SynthDomainParams::target_preset(32, 5);
  const auto a = synth_domain_dataset(4, p, Domain::kTarget, "t");
  const auto b = synth_domain_dataset(4, p, Domain::kTarget, "t");
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(a.pairs[i].t1 == b.pairs[i].t1);
    EXPECT_TRUE(a.pairs[i].t2 == b.pairs[i].t2);
    EXPECT_EQ(*a.pairs[i].mask, *b.pairs[i].mask);
  }
  const auto c = synth_domain_dataset(4, SynthDomainParams::target_preset(32, 6), Domain::kTarget, "t");
  EXPECT_FALSE(a.pairs[0].t1 == c.pairs[0].t1);
}

TEST(SynthTest, ZeroDensityHasNoChange) {
  auto p = SynthDomainParams::source_preset(32, 1);
  p.change_density = 0.0F;
  for (const auto& pair : synth_domain_dataset(6, p).pairs) EXPECT_EQ(pair.mask->count(), 0U);
  p.change_density = 1.5F;
  EXPECT_THROW(synth_domain_dataset(1, p), std::invalid_argument);
}

TEST(SynthTest, SingleNewSquareCoversHundredPixels) {
  SceneGeometry scene;
  scene.id = "sq";
  scene.height = 32;
  scene.width = 32;
  SynthObject obj;
  obj.parts = {Rect{4, 6, 10, 10}};
  obj.color = {0.9F, 0.9F, 0.9F};
  obj.in_t1 = false;
  scene.objects.push_back(obj);
  EXPECT_EQ(change_mask(scene).count(), 100U);
  const auto pair = render_scene(scene, SynthDomainParams::source_preset(32, 0), Domain::kSource);
  EXPECT_EQ(pair.mask->count(), 100U);
}

TEST(SynthTest, MaskIsXorOfGeometry) {
  const auto ds = synth_domain_dataset(8, SynthDomainParams::source_preset(48, 2));
  std::size_t changed = 0;
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const auto& g = ds.geometry[i];
    const Mask& m = *ds.pairs[i].mask;
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        bool in1 = false;
        bool in2 = false;
        for (const auto& o : g.objects) {
          for (const auto& r : o.parts) {
            if (y >= r.y && y < r.y + r.h && x >= r.x && x < r.x + r.w) {
              in1 = in1 || o.in_t1;
              in2 = in2 || o.in_t2;
            }
          }
        }
        ASSERT_EQ(m.at(y, x), (in1 != in2) ? 1 : 0) << g.id << " " << y << "," << x;
      }
    }
    changed += m.count();
  }
  EXPECT_GT(changed, 0U);
}

Image random_image(int h, int w, std::uint64_t seed) {
  return testing::random_pair("x", h, seed, Domain::kSource, false).t1.crop(0, 0, h, w);
}

TEST(PerturbationTest, ZeroStrengthIsIdentity) {
  const Image img = random_image(12, 12, 1);
  for (auto kind : {PerturbationKind::kColorJitter, PerturbationKind::kGrayscale,
                    PerturbationKind::kGaussianBlur, PerturbationKind::kContrastShift}) {
    EXPECT_TRUE(strong_perturb(img, {kind, 0.0F, 9}) == img);
  }
}

TEST(PerturbationTest, ShapeAndRangePreserved) {
  const Image img = random_image(16, 16, 2);
  for (auto kind : {PerturbationKind::kColorJitter, PerturbationKind::kGrayscale,
                    PerturbationKind::kGaussianBlur, PerturbationKind::kContrastShift}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Image out = strong_perturb(img, {kind, 1.0F, seed});
      ASSERT_TRUE(out.same_extent(img));
      for (float v : out.data) {
        ASSERT_GE(v, 0.0F);
        ASSERT_LE(v, 1.0F);
      }
    }
  }
  EXPECT_THROW(strong_perturb(img, {PerturbationKind::kGrayscale, 1.5F, 0}), std::invalid_argument);
}

TEST(PerturbationTest, FullGrayscaleEqualizesChannels) {
  const Image out = strong_perturb(random_image(8, 8, 3), {PerturbationKind::kGrayscale, 1.0F, 0});
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      EXPECT_EQ(out.at(y, x, 0), out.at(y, x, 1));
      EXPECT_EQ(out.at(y, x, 1), out.at(y, x, 2));
    }
  }
}

int mirror(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

TEST(PerturbationTest, BlurMatchesDirectConvolution) {
  const Image img = random_image(20, 20, 4);
  const float strength = 0.7F;
  const auto k = gaussian_kernel_for_strength(strength);
  ASSERT_EQ(k.size() % 2, 1U);
  double ksum = 0;
  for (double v : k) ksum += v;
  EXPECT_NEAR(ksum, 1.0, 1e-12);
  const int r = static_cast<int>(k.size() / 2);
  ASSERT_LT(r, 20);
  const Image out = strong_perturb(img, {PerturbationKind::kGaussianBlur, strength, 0});
  double max_err = 0;
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 20; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            acc += k[dy + r] * k[dx + r] * img.at(mirror(y + dy, 20), mirror(x + dx, 20), c);
        max_err = std::max(max_err, std::abs(acc - out.at(y, x, c)));
      }
    }
  }
  EXPECT_LT(max_err, 1e-6);
}

TEST(PerturbationTest, BlurPreservesImpulseMass) {
  Image img(31, 31, 3);
  img.at(15, 15, 1) = 1.0F;
  const Image out = strong_perturb(img, {PerturbationKind::kGaussianBlur, 1.0F, 0});
  double mass = 0;
  for (int y = 0; y < 31; ++y)
    for (int x = 0; x < 31; ++x) mass += out.at(y, x, 1);
  EXPECT_NEAR(mass, 1.0, 1e-6);
  EXPECT_LT(out.at(15, 15, 1), 1.0F);
}

TEST(PerturbationTest, ChainIsDeterministicPerFrame) {
  const auto a = draw_strong_chain(7, "t00001", 0);
  const auto b = draw_strong_chain(7, "t00001", 0);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].kind, b[i].kind);
    EXPECT_EQ(a[i].seed, b[i].seed);
    EXPECT_EQ(a[i].strength, b[i].strength);
  }
  // Kind frequencies over many draws follow the per-kind probabilities.
  std::array<int, 4> hits{};
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    for (const auto& s : draw_strong_chain(3, "id" + std::to_string(i), i % 2)) {
      hits[static_cast<std::size_t>(s.kind)] += 1;
      EXPECT_GE(s.strength, 0.5F);
      EXPECT_LE(s.strength, 1.0F);
    }
  }
  EXPECT_NEAR(hits[0] / double(n), 0.8, 0.03);
  EXPECT_NEAR(hits[1] / double(n), 0.2, 0.03);
  EXPECT_NEAR(hits[2] / double(n), 0.5, 0.03);
  EXPECT_NEAR(hits[3] / double(n), 0.5, 0.03);
}

TEST(SeedTest, DeriveSeedSeparatesStreams) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 50; ++a)
    for (std::uint64_t b = 0; b < 50; ++b) seen.insert(derive_seed(1, a, b));
  EXPECT_EQ(seen.size(), 2500U);
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

}  // namespace
}  // namespace cdadapt
