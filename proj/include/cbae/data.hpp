#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbae/tensor.hpp"

namespace cbae {

// Per-concept attribute table, values in [0, 1].
struct FeatureNorms {
  std::vector<std::string> concept_names;
  std::vector<std::string> attribute_names;
  // Row-major [concepts × attributes].
  std::vector<double> values;

  std::size_t concept_count() const { return concept_names.size(); }
  std::size_t attribute_count() const { return attribute_names.size(); }
  std::span<const double> row(std::size_t c) const {
    return std::span<const double>(values).subspan(c * attribute_count(), attribute_count());
  }
  // Throws ValidationError on shape, range, duplicate names or all-zero rows.
  void validate() const;
};

struct Dataset {
  // [N × height·width], pixels in [0, 1].
  Tensor images;
  std::vector<std::size_t> labels;
  std::vector<std::string> concept_names;
  std::size_t height = 0;
  std::size_t width = 0;
  std::optional<FeatureNorms> norms;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const { return height * width; }
  std::size_t concept_count() const { return concept_names.size(); }
  void validate() const;
};

// Rows of `images` at `indices`, as an [indices.size() × cols] tensor.
Tensor gather_rows(const Tensor& images, std::span<const std::size_t> indices);
// The first `count` examples (all of them when count >= size()).
Dataset take_prefix(const Dataset& data, std::size_t count);

// Big-endian IDX: images magic 0x00000803 with dims (N, rows, cols), labels
// magic 0x00000801 with dim N. Pixels are scaled by 1/255. Labels must be
// below `num_classes`; concept names are "0", "1", ...
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::size_t num_classes = 10);
Dataset parse_idx(std::span<const std::uint8_t> image_bytes,
                  std::span<const std::uint8_t> label_bytes, std::size_t num_classes = 10);
// Pixels are quantized to round(255·v).
void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

// Averages non-overlapping factor×factor blocks.
Dataset downsample(const Dataset& data, std::size_t factor);

struct SyntheticSpec {
  std::size_t concepts = 16;
  std::size_t attributes = 8;
  std::size_t per_concept = 200;
  std::size_t side = 8;
  double noise = 0.25;
  std::uint64_t seed = 7;
};

// Concept dataset with known attribute structure. A random binary
// concept×attribute matrix (distinct, nonzero rows) selects which disjoint
// pixel templates are summed into each concept prototype; instances add
// Gaussian noise and clamp to [0, 1]. The matrix is kept as `norms`.
Dataset gen_synthetic(const SyntheticSpec& spec);
// Noise-free prototype image per concept, [concepts × side²]. Same draws as
// gen_synthetic.
Tensor synthetic_prototypes(const SyntheticSpec& spec);

// CSV with header "concept,<attr>,...", one row per concept.
FeatureNorms parse_feature_norms(std::istream& in);
FeatureNorms load_feature_norms(const std::filesystem::path& path);
void write_feature_norms(const FeatureNorms& norms, const std::filesystem::path& path);

}  // namespace cbae
