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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

namespace cdadapt {
namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Tiling

TileGrid make_tile_grid(int height, int width, int tile) {
  if (tile < 32) throw DimensionError("tile must be >= 32, got " + std::to_string(tile));
  if (height < tile || width < tile) {
    throw DimensionError("image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is smaller than tile " + std::to_string(tile));
  }
  return TileGrid{tile, height / tile, width / tile};
}

std::vector<ImagePair> tile_pair(const ImagePair& pair, int tile) {
  pair.validate();
  const TileGrid grid = make_tile_grid(pair.t1.height, pair.t1.width, tile);
  std::vector<ImagePair> out;
  out.reserve(static_cast<std::size_t>(grid.rows) * grid.cols);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      ImagePair p;
      p.id = pair.id + "_" + std::to_string(r) + "_" + std::to_string(c);
      p.t1 = pair.t1.crop(r * tile, c * tile, tile, tile);
      p.t2 = pair.t2.crop(r * tile, c * tile, tile, tile);
      if (pair.mask) p.mask = pair.mask->crop(r * tile, c * tile, tile, tile);
      p.domain = pair.domain;
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loading

DatasetLayout parse_layout(std::string_view name) {
  if (name == "levir_style" || name == "levir") return DatasetLayout::kLevirStyle;
  if (name == "whu_style" || name == "whu") return DatasetLayout::kWhuStyle;
  if (name == "generic") return DatasetLayout::kGeneric;
  throw std::invalid_argument("unknown dataset layout '" + std::string(name) + "'");
}

namespace {

bool is_image_file(const fs::path& p) {
  static const std::set<std::string> kExt{".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"};
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return kExt.contains(ext);
}

std::map<std::string, fs::path> index_dir(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) {
      out.emplace(entry.path().stem().string(), entry.path());
    }
  }
  return out;
}

}  // namespace

std::vector<ImagePair> load_cd_dataset(const fs::path& root, DatasetLayout layout,
                                       LoadReport* report, Domain domain) {
  // All supported layouts share the A/B/label convention; they differ only in
  // how label PNGs encode change (0/255 vs 0/1), which read_png_mask absorbs.
  (void)layout;
  std::vector<ImagePair> pairs;
  const auto a = index_dir(root / "A");
  const auto b = index_dir(root / "B");
  const auto label = index_dir(root / "label");
  for (const auto& [stem, path_a] : a) {
    auto it_b = b.find(stem);
    if (it_b == b.end()) {
      if (report) report->missing_in_b.push_back(stem);
      continue;
    }
    ImagePair p;
    p.id = stem;
    p.domain = domain;
    p.t1 = read_png_image(path_a);
    p.t2 = read_png_image(it_b->second);
    if (p.t1.height != p.t2.height || p.t1.width != p.t2.width) {
      throw DimensionError("pair '" + stem + "': A and B extents differ");
    }
    if (auto it_l = label.find(stem); it_l != label.end()) {
      p.mask = read_png_mask(it_l->second);
    } else if (report) {
      report->unlabeled.push_back(stem);
    }
    p.validate();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void save_cd_dataset(const fs::path& root, const std::vector<ImagePair>& pairs) {
  fs::create_directories(root / "A");
  fs::create_directories(root / "B");
  for (const auto& p : pairs) {
    write_png_image(root / "A" / (p.id + ".png"), p.t1);
    write_png_image(root / "B" / (p.id + ".png"), p.t2);
    if (p.mask) write_png_mask(root / "label" / (p.id + ".png"), *p.mask);
  }
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SynthDomainParams::validate() const {
  if (!(change_density >= 0.0F && change_density <= 1.0F)) {
    throw std::invalid_argument("change_density must lie in [0,1]");
  }
  if (!(resolution_scale > 0.0F)) throw std::invalid_argument("resolution_scale must be > 0");
  for (float s : color_shift) {
    if (s < -0.3F || s > 0.3F) throw std::invalid_argument("color_shift entries must lie in [-0.3,0.3]");
  }
  if (texture_noise_sigma < 0.0F) throw std::invalid_argument("texture_noise_sigma must be >= 0");
  if (object_size_range.first < 1 || object_size_range.second < object_size_range.first) {
    throw std::invalid_argument("invalid object_size_range");
  }
  if (size < 8) throw std::invalid_argument("size must be >= 8");
}

SynthDomainParams SynthDomainParams::source_preset(int size, std::uint64_t seed) {
  SynthDomainParams p;
  p.size = size;
  p.seed = seed;
  p.object_size_range = {std::max(3, size / 8), std::max(4, size / 3)};
  return p;
}

SynthDomainParams SynthDomainParams::target_preset(int size, std::uint64_t seed) {
  SynthDomainParams p = source_preset(size, seed);
  p.resolution_scale = 0.6F;
  p.color_shift = {0.12F, 0.05F, -0.10F};
  p.texture_noise_sigma = 0.06F;
  return p;
}

Mask change_mask(const SceneGeometry& scene) {
  Mask m1(scene.height, scene.width);
  Mask m2(scene.height, scene.width);
  for (const auto& obj : scene.objects) {
    for (const auto& r : obj.parts) {
      for (int y = std::max(0, r.y); y < std::min(scene.height, r.y + r.h); ++y) {
        for (int x = std::max(0, r.x); x < std::min(scene.width, r.x + r.w); ++x) {
          if (obj.in_t1) m1.at(y, x) = 1;
          if (obj.in_t2) m2.at(y, x) = 1;
        }
      }
    }
  }
  Mask out(scene.height, scene.width);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = m1.data[i] ^ m2.data[i];
  return out;
}

namespace {

struct Background {
  std::array<float, 3> base{};
  // Low-frequency texture: three planar waves.
  std::array<std::array<float, 4>, 3> waves{};  // kx, ky, phase, amplitude
};

Background draw_background(std::mt19937_64& rng) {
  static constexpr std::array<std::array<float, 3>, 3> kPalette{{
      {0.33F, 0.42F, 0.24F},  // vegetation
      {0.52F, 0.45F, 0.34F},  // bare soil
      {0.45F, 0.45F, 0.43F},  // pavement
  }};
  std::uniform_int_distribution<int> pick(0, static_cast<int>(kPalette.size()) - 1);
  std::uniform_real_distribution<float> jitter(-0.04F, 0.04F);
  std::uniform_real_distribution<float> freq(0.02F, 0.15F);
  std::uniform_real_distribution<float> phase(0.0F, 2.0F * std::numbers::pi_v<float>);
  std::uniform_real_distribution<float> amp(0.02F, 0.06F);
  Background bg;
  bg.base = kPalette[pick(rng)];
  for (auto& c : bg.base) c += jitter(rng);
  for (auto& w : bg.waves) w = {freq(rng), freq(rng), phase(rng), amp(rng)};
  return bg;
}

std::array<float, 3> draw_roof(std::mt19937_64& rng) {
  static constexpr std::array<std::array<float, 3>, 4> kRoofs{{
      {0.85F, 0.85F, 0.82F},
      {0.72F, 0.32F, 0.26F},
      {0.30F, 0.46F, 0.70F},
      {0.62F, 0.62F, 0.66F},
  }};
  std::uniform_int_distribution<int> pick(0, static_cast<int>(kRoofs.size()) - 1);
  std::uniform_real_distribution<float> jitter(-0.05F, 0.05F);
  auto c = kRoofs[pick(rng)];
  for (auto& v : c) v = std::clamp(v + jitter(rng), 0.0F, 1.0F);
  return c;
}

Image render_frame(const SceneGeometry& scene, const Background& bg, bool second,
                   float illumination) {
  Image img(scene.height, scene.width, 3);
  for (int y = 0; y < scene.height; ++y) {
    for (int x = 0; x < scene.width; ++x) {
      float t = 0.0F;
      for (const auto& w : bg.waves) t += w[3] * std::sin(w[0] * x + w[1] * y + w[2]);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = (bg.base[c] + t) * illumination;
    }
  }
  for (const auto& obj : scene.objects) {
    if (second ? !obj.in_t2 : !obj.in_t1) continue;
    for (const auto& r : obj.parts) {
      for (int y = std::max(0, r.y); y < std::min(scene.height, r.y + r.h); ++y) {
        for (int x = std::max(0, r.x); x < std::min(scene.width, r.x + r.w); ++x) {
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = obj.color[c] * illumination;
        }
      }
    }
  }
  return img;
}

void apply_domain_style(Image& img, const SynthDomainParams& params, std::mt19937_64& rng) {
  if (params.resolution_scale != 1.0F) {
    cv::Mat mat(img.height, img.width, CV_32FC3, img.data.data());
    const int lh = std::max(1, static_cast<int>(std::lround(img.height * params.resolution_scale)));
    const int lw = std::max(1, static_cast<int>(std::lround(img.width * params.resolution_scale)));
    cv::Mat low;
    cv::Mat back;
    cv::resize(mat, low, cv::Size(lw, lh), 0, 0,
               params.resolution_scale < 1.0F ? cv::INTER_AREA : cv::INTER_LINEAR);
    cv::resize(low, back, cv::Size(img.width, img.height), 0, 0, cv::INTER_LINEAR);
    std::copy(back.ptr<float>(), back.ptr<float>() + img.data.size(), img.data.begin());
  }
  std::normal_distribution<float> noise(0.0F, 1.0F);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    float v = img.data[i] + params.color_shift[i % 3];
    if (params.texture_noise_sigma > 0.0F) v += params.texture_noise_sigma * noise(rng);
    img.data[i] = std::clamp(v, 0.0F, 1.0F);
  }
}

SceneGeometry draw_scene(const SynthDomainParams& params, std::string id, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SceneGeometry scene;
  scene.id = std::move(id);
  scene.height = params.size;
  scene.width = params.size;
  scene.seed = seed;
  const auto [smin, smax] = params.object_size_range;
  std::uniform_int_distribution<int> side(smin, smax);
  const double mean_side = 0.5 * (smin + smax);
  const int expected =
      std::max(1, static_cast<int>(std::lround(0.18 * params.size * params.size / (mean_side * mean_side))));
  std::uniform_int_distribution<int> count(std::max(1, expected / 2), expected + expected / 2);
  std::uniform_real_distribution<float> u01(0.0F, 1.0F);
  const int n_objects = count(rng);
  for (int i = 0; i < n_objects; ++i) {
    SynthObject obj;
    const int h = std::min(side(rng), params.size);
    const int w = std::min(side(rng), params.size);
    std::uniform_int_distribution<int> py(0, params.size - h);
    std::uniform_int_distribution<int> px(0, params.size - w);
    Rect main{py(rng), px(rng), h, w};
    obj.parts.push_back(main);
    if (u01(rng) < 0.3F && h >= 4 && w >= 4) {
      // L-shaped footprint: a wing hanging off the bottom edge.
      Rect wing{main.y + main.h, main.x, std::max(2, h / 2), std::max(2, w / 2)};
      wing.h = std::min(wing.h, params.size - wing.y);
      if (wing.h > 0) obj.parts.push_back(wing);
    }
    obj.color = draw_roof(rng);
    if (u01(rng) < params.change_density) {
      const bool built = u01(rng) < 0.5F;
      obj.in_t1 = !built;
      obj.in_t2 = built;
    }
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

}  // namespace

ImagePair render_scene(const SceneGeometry& scene, const SynthDomainParams& params,
                       Domain domain) {
  std::mt19937_64 rng(derive_seed(scene.seed, 0x5eedULL));
  const Background bg = draw_background(rng);
  std::uniform_real_distribution<float> illum(0.92F, 1.08F);
  const float i1 = illum(rng);
  const float i2 = illum(rng);
  ImagePair p;
  p.id = scene.id;
  p.domain = domain;
  p.t1 = render_frame(scene, bg, false, i1);
  p.t2 = render_frame(scene, bg, true, i2);
  apply_domain_style(p.t1, params, rng);
  apply_domain_style(p.t2, params, rng);
  p.mask = change_mask(scene);
  return p;
}

SynthDataset synth_domain_dataset(int n, const SynthDomainParams& params, Domain domain,
                                  std::string_view id_prefix) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  params.validate();
  SynthDataset ds;
  ds.pairs.reserve(n);
  ds.geometry.reserve(n);
  for (int i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", i);
    SceneGeometry scene = draw_scene(params, std::string(id_prefix) + buf,
                                     derive_seed(params.seed, static_cast<std::uint64_t>(i)));
    ds.pairs.push_back(render_scene(scene, params, domain));
    ds.geometry.push_back(std::move(scene));
  }
  return ds;
}

void write_synth_dataset(const fs::path& root, const SynthDataset& ds) {
  save_cd_dataset(root, ds.pairs);
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& s : ds.geometry) {
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : s.objects) {
      nlohmann::json rects = nlohmann::json::array();
      for (const auto& r : o.parts) rects.push_back({r.y, r.x, r.h, r.w});
      objs.push_back({{"rects", rects}, {"in_t1", o.in_t1}, {"in_t2", o.in_t2}});
    }
    scenes.push_back({{"id", s.id}, {"height", s.height}, {"width", s.width}, {"objects", objs}});
  }
  std::ofstream(root / "geometry.json") << nlohmann::json{{"scenes", scenes}}.dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Perturbations

PerturbationKind parse_perturbation_kind(std::string_view name) {
  if (name == "color_jitter") return PerturbationKind::kColorJitter;
  if (name == "grayscale") return PerturbationKind::kGrayscale;
  if (name == "gaussian_blur") return PerturbationKind::kGaussianBlur;
  if (name == "contrast_shift") return PerturbationKind::kContrastShift;
  throw std::invalid_argument("unknown perturbation kind '" + std::string(name) + "'");
}

std::vector<double> gaussian_kernel_for_strength(float strength) {
  const double sigma = 2.0 * strength;
  if (sigma <= 0.0) return {};
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

namespace {

float luminance(const Image& img, int y, int x) {
  return 0.299F * img.at(y, x, 0) + 0.587F * img.at(y, x, 1) + 0.114F * img.at(y, x, 2);
}

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
  return i;
}

Image separable_blur(const Image& in, const std::vector<double>& k) {
  const int radius = static_cast<int>(k.size() / 2);
  Image tmp(in.height, in.width, in.channels);
  Image out(in.height, in.width, in.channels);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      for (int c = 0; c < in.channels; ++c) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) acc += k[d + radius] * in.at(y, reflect(x + d, in.width), c);
        tmp.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      for (int c = 0; c < in.channels; ++c) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) acc += k[d + radius] * tmp.at(reflect(y + d, in.height), x, c);
        out.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

}  // namespace

Image strong_perturb(const Image& image, const PerturbationSpec& spec) {
  if (spec.strength < 0.0F || spec.strength > 1.0F) {
    throw std::invalid_argument("perturbation strength must lie in [0,1]");
  }
  if (spec.strength == 0.0F) return image;
  const float s = spec.strength;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<float> sym(-1.0F, 1.0F);
  Image out = image;
  switch (spec.kind) {
    case PerturbationKind::kColorJitter: {
      const float brightness = 0.2F * s * sym(rng);
      std::array<float, 3> gain{};
      for (auto& g : gain) g = 1.0F + 0.4F * s * sym(rng);
      const float saturation = 1.0F + 0.5F * s * sym(rng);
      for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
          for (int c = 0; c < out.channels; ++c) {
            out.at(y, x, c) = std::clamp(image.at(y, x, c) * gain[c % 3] + brightness, 0.0F, 1.0F);
          }
          if (out.channels == 3) {
            const float g = luminance(out, y, x);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = g + (out.at(y, x, c) - g) * saturation;
          }
        }
      }
      break;
    }
    case PerturbationKind::kGrayscale: {
      if (image.channels != 3) break;
      for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
          const float g = luminance(image, y, x);
          for (int c = 0; c < 3; ++c) {
            out.at(y, x, c) = s == 1.0F ? g : (1.0F - s) * image.at(y, x, c) + s * g;
          }
        }
      }
      break;
    }
    case PerturbationKind::kGaussianBlur:
      out = separable_blur(image, gaussian_kernel_for_strength(s));
      break;
    case PerturbationKind::kContrastShift: {
      double mean = 0.0;
      for (float v : image.data) mean += v;
      mean /= static_cast<double>(std::max<std::size_t>(1, image.data.size()));
      const float factor = 1.0F + 0.6F * s * sym(rng);
      for (auto& v : out.data) v = static_cast<float>(mean) + (v - static_cast<float>(mean)) * factor;
      break;
    }
    default:
      throw std::invalid_argument("unknown perturbation kind");
  }
  for (auto& v : out.data) v = std::clamp(v, 0.0F, 1.0F);
  return out;
}

std::vector<PerturbationSpec> draw_strong_chain(std::uint64_t global_seed,
                                                std::string_view sample_id, int frame_index) {
  std::mt19937_64 rng(derive_seed(global_seed, fnv1a64(sample_id), static_cast<std::uint64_t>(frame_index)));
  std::uniform_real_distribution<float> u01(0.0F, 1.0F);
  std::uniform_real_distribution<float> strength(0.5F, 1.0F);
  static constexpr std::array<std::pair<PerturbationKind, float>, 4> kChain{{
      {PerturbationKind::kColorJitter, 0.8F},
      {PerturbationKind::kGrayscale, 0.2F},
      {PerturbationKind::kGaussianBlur, 0.5F},
      {PerturbationKind::kContrastShift, 0.5F},
  }};
  std::vector<PerturbationSpec> chain;
  for (const auto& [kind, prob] : kChain) {
    const bool apply = u01(rng) < prob;
    const float st = strength(rng);
    const std::uint64_t seed = rng();
    if (apply) chain.push_back({kind, st, seed});
  }
  return chain;
}

Image apply_chain(const Image& image, const std::vector<PerturbationSpec>& chain) {
  Image out = image;
  for (const auto& spec : chain) out = strong_perturb(out, spec);
  return out;
}

}  // namespace cdadapt
