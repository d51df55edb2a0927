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

// Dataset ingestion, tiling, synthetic domain pairs and photometric
// perturbations.

#ifndef CDADAPT_DATA_PIPELINE_HPP
#define CDADAPT_DATA_PIPELINE_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cdadapt/image.hpp"

namespace cdadapt {

/// Mixes a sequence of integers into one 64-bit seed (splitmix64 chain).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);
/// 64-bit FNV-1a, used to fold string ids into seeds and config hashes.
std::uint64_t fnv1a64(std::string_view text);

// ---------------------------------------------------------------------------
// Tiling

struct TileGrid {
  int tile = 256;
  int rows = 0;
  int cols = 0;
};

/// rows = floor(h / tile), cols = floor(w / tile). Throws DimensionError
/// when either is zero or tile < 32.
TileGrid make_tile_grid(int height, int width, int tile);

/// Non-overlapping tiles in row-major order with ids "{parent}_{r}_{c}".
/// Border pixels not covered by a whole tile are discarded.
std::vector<ImagePair> tile_pair(const ImagePair& pair, int tile = 256);

// ---------------------------------------------------------------------------
// On-disk datasets: root/A, root/B, root/label (0/255 PNG).

enum class DatasetLayout { kLevirStyle, kWhuStyle, kGeneric };

DatasetLayout parse_layout(std::string_view name);

struct LoadReport {
  std::vector<std::string> missing_in_b;   // present in A/, absent in B/
  std::vector<std::string> unlabeled;      // pair loaded without mask
};

/// Pairs matched by file stem, sorted by id. Mismatched extents inside a pair
/// throw DimensionError; an empty or absent root yields an empty list.
std::vector<ImagePair> load_cd_dataset(const std::filesystem::path& root,
                                       DatasetLayout layout = DatasetLayout::kGeneric,
                                       LoadReport* report = nullptr,
                                       Domain domain = Domain::kSource);

void save_cd_dataset(const std::filesystem::path& root, const std::vector<ImagePair>& pairs);

// ---------------------------------------------------------------------------
// Synthetic domain pairs

struct SynthDomainParams {
  int size = 256;                       // nominal tile edge in pixels
  float resolution_scale = 1.0F;        // > 0; <1 degrades detail
  std::array<float, 3> color_shift{0.0F, 0.0F, 0.0F};  // each in [-0.3, 0.3]
  float texture_noise_sigma = 0.0F;
  std::pair<int, int> object_size_range{12, 40};
  float change_density = 0.3F;          // probability an object is changed
  std::uint64_t seed = 0;

  void validate() const;
  static SynthDomainParams source_preset(int size, std::uint64_t seed);
  static SynthDomainParams target_preset(int size, std::uint64_t seed);
};

struct Rect {
  int y = 0;
  int x = 0;
  int h = 0;
  int w = 0;
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct SynthObject {
  std::vector<Rect> parts;  // union of rectangles (L-shapes use two)
  std::array<float, 3> color{};
  bool in_t1 = true;
  bool in_t2 = true;
};

/// The generator's geometry record for one pair.
struct SceneGeometry {
  std::string id;
  int height = 0;
  int width = 0;
  std::uint64_t seed = 0;
  std::vector<SynthObject> objects;
};

struct SynthDataset {
  std::vector<ImagePair> pairs;
  std::vector<SceneGeometry> geometry;
};

/// Pixels covered by the t1 object set XOR the t2 object set.
Mask change_mask(const SceneGeometry& scene);

/// Renders both frames of a scene and applies the domain style.
ImagePair render_scene(const SceneGeometry& scene, const SynthDomainParams& params,
                       Domain domain);

/// Deterministic in (n, params). Throws on change_density outside [0,1].
SynthDataset synth_domain_dataset(int n, const SynthDomainParams& params,
                                  Domain domain = Domain::kSource,
                                  std::string_view id_prefix = "s");

/// Writes A/, B/, label/ plus geometry.json.
void write_synth_dataset(const std::filesystem::path& root, const SynthDataset& ds);

// ---------------------------------------------------------------------------
// Strong photometric perturbations

enum class PerturbationKind { kColorJitter, kGrayscale, kGaussianBlur, kContrastShift };

PerturbationKind parse_perturbation_kind(std::string_view name);

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::kColorJitter;
  float strength = 1.0F;  // [0,1]
  std::uint64_t seed = 0;
};

/// Photometric only: shape preserved, output clipped to [0,1],
/// strength 0 returns the input unchanged.
Image strong_perturb(const Image& image, const PerturbationSpec& spec);

/// The blur kernel used by kGaussianBlur for a given strength (normalized,
/// odd length). Empty when the strength maps to no blur.
std::vector<double> gaussian_kernel_for_strength(float strength);

/// Draws the perturbation chain for one frame from (global_seed, sample_id,
/// frame_index). Each of the four kinds is applied independently with the
/// usual strong-augmentation probabilities.
std::vector<PerturbationSpec> draw_strong_chain(std::uint64_t global_seed,
                                                std::string_view sample_id, int frame_index);

Image apply_chain(const Image& image, const std::vector<PerturbationSpec>& chain);

}  // namespace cdadapt

#endif  // CDADAPT_DATA_PIPELINE_HPP
