#include "cbae/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include "cbae/error.hpp"
#include "cbae/rng.hpp"

namespace cbae {

void FeatureNorms::validate() const {
  const std::size_t c = concept_count(), a = attribute_count();
  if (c == 0 || a == 0) throw ValidationError("feature norms: empty table");
  if (values.size() != c * a) {
    throw ValidationError("feature norms: " + std::to_string(values.size()) +
                          " values for a " + std::to_string(c) + "x" + std::to_string(a) +
                          " table");
  }
  if (std::set<std::string>(concept_names.begin(), concept_names.end()).size() != c) {
    throw ValidationError("feature norms: duplicate concept names");
  }
  if (std::set<std::string>(attribute_names.begin(), attribute_names.end()).size() != a) {
    throw ValidationError("feature norms: duplicate attribute names");
  }
  for (std::size_t i = 0; i < c; ++i) {
    const auto r = row(i);
    for (std::size_t j = 0; j < a; ++j) {
      if (!(r[j] >= 0.0 && r[j] <= 1.0)) {
        throw ValidationError("feature norms: value out of [0,1] for concept '" +
                              concept_names[i] + "', attribute '" + attribute_names[j] + "'");
      }
    }
    if (std::all_of(r.begin(), r.end(), [](double v) { return v == 0.0; })) {
      throw ValidationError("feature norms: all-zero row for concept '" + concept_names[i] + "'");
    }
  }
}

void Dataset::validate() const {
  const std::size_t n = labels.size();
  if (n == 0) throw DataError("dataset: no examples");
  if (!images.defined() || images.rank() != 2 || images.rows() != n ||
      images.cols() != input_dim()) {
    throw DataError("dataset: image tensor does not match " + std::to_string(n) + " examples of " +
                    std::to_string(height) + "x" + std::to_string(width));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= concept_count()) {
      throw DataError("dataset: label " + std::to_string(labels[i]) + " at example " +
                      std::to_string(i) + " exceeds concept count " +
                      std::to_string(concept_count()));
    }
  }
  for (double v : images.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("dataset: pixel outside [0,1]");
  }
  if (norms) norms->validate();
}

Tensor gather_rows(const Tensor& images, std::span<const std::size_t> indices) {
  const std::size_t cols = images.cols();
  std::vector<double> out(indices.size() * cols);
  const double* src = images.values().data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= images.rows()) {
      throw IndexError("gather_rows: row " + std::to_string(indices[i]) + " of " +
                       std::to_string(images.rows()));
    }
    std::copy_n(src + indices[i] * cols, cols, out.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  return Tensor({indices.size(), cols}, std::move(out));
}

Dataset take_prefix(const Dataset& data, std::size_t count) {
  if (count >= data.size()) return data;
  if (count == 0) throw ConfigError("take_prefix: count must be positive");
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Dataset out = data;
  out.images = gather_rows(data.images, idx);
  out.labels.assign(data.labels.begin(), data.labels.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* file) {
  if (offset + 4 > bytes.size()) {
    throw ParseError(std::string(file) + ": truncated header at byte offset " +
                     std::to_string(offset) + " (file has " + std::to_string(bytes.size()) +
                     " bytes)");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Dataset parse_idx(std::span<const std::uint8_t> image_bytes,
                  std::span<const std::uint8_t> label_bytes, std::size_t num_classes) {
  const std::uint32_t im_magic = read_be32(image_bytes, 0, "images");
  if (im_magic != kImageMagic) {
    throw ParseError("images: bad magic at byte offset 0 (expected 0x00000803)");
  }
  const std::size_t n = read_be32(image_bytes, 4, "images");
  const std::size_t rows = read_be32(image_bytes, 8, "images");
  const std::size_t cols = read_be32(image_bytes, 12, "images");
  const std::uint32_t lb_magic = read_be32(label_bytes, 0, "labels");
  if (lb_magic != kLabelMagic) {
    throw ParseError("labels: bad magic at byte offset 0 (expected 0x00000801)");
  }
  const std::size_t n_labels = read_be32(label_bytes, 4, "labels");
  if (n != n_labels) {
    throw ParseError("labels: count " + std::to_string(n_labels) + " at byte offset 4 does not "
                     "match image count " + std::to_string(n));
  }
  if (n == 0 || rows == 0 || cols == 0) throw ParseError("images: zero extent in header");

  constexpr std::size_t kImageHeader = 16, kLabelHeader = 8;
  const std::size_t pixels = rows * cols;
  const std::size_t need_images = kImageHeader + n * pixels;
  if (image_bytes.size() < need_images) {
    throw ParseError("images: payload truncated at byte offset " +
                     std::to_string(image_bytes.size()) + ", expected " +
                     std::to_string(need_images) + " bytes");
  }
  if (label_bytes.size() < kLabelHeader + n) {
    throw ParseError("labels: payload truncated at byte offset " +
                     std::to_string(label_bytes.size()) + ", expected " +
                     std::to_string(kLabelHeader + n) + " bytes");
  }

  Dataset d;
  d.height = rows;
  d.width = cols;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = label_bytes[kLabelHeader + i];
    if (label >= num_classes) {
      throw ValidationError("labels: value " + std::to_string(label) + " at byte offset " +
                            std::to_string(kLabelHeader + i) + " is not below " +
                            std::to_string(num_classes));
    }
    d.labels[i] = label;
  }
  std::vector<double> px(n * pixels);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = image_bytes[kImageHeader + i] / 255.0;
  d.images = Tensor({n, pixels}, std::move(px));
  for (std::size_t c = 0; c < num_classes; ++c) d.concept_names.push_back(std::to_string(c));
  return d;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::size_t num_classes) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);
  return parse_idx(images, labels, num_classes);
}

void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  data.validate();
  if (data.concept_count() > 256) throw ConfigError("write_idx: labels must fit in one byte");
  std::ofstream im(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lb(labels_path, std::ios::binary | std::ios::trunc);
  if (!im || !lb) throw IoError("write_idx: cannot open output files");
  const auto n = static_cast<std::uint32_t>(data.size());
  write_be32(im, kImageMagic);
  write_be32(im, n);
  write_be32(im, static_cast<std::uint32_t>(data.height));
  write_be32(im, static_cast<std::uint32_t>(data.width));
  std::vector<char> px(data.images.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = static_cast<char>(static_cast<std::uint8_t>(std::lround(data.images[i] * 255.0)));
  }
  im.write(px.data(), static_cast<std::streamsize>(px.size()));
  write_be32(lb, kLabelMagic);
  write_be32(lb, n);
  for (std::size_t l : data.labels) lb.put(static_cast<char>(l));
  if (!im || !lb) throw IoError("write_idx: write failed");
}

Dataset downsample(const Dataset& data, std::size_t factor) {
  if (factor == 0 || data.height % factor != 0 || data.width % factor != 0) {
    throw ConfigError("downsample: " + std::to_string(data.height) + "x" +
                      std::to_string(data.width) + " image is not divisible by factor " +
                      std::to_string(factor));
  }
  if (factor == 1) return data;
  const std::size_t h = data.height / factor, w = data.width / factor;
  const std::size_t in_dim = data.input_dim(), out_dim = h * w;
  const auto area = static_cast<double>(factor * factor);
  std::vector<double> out(data.size() * out_dim);
  const double* src = data.images.values().data();
  for (std::size_t n = 0; n < data.size(); ++n) {
    const double* img = src + n * in_dim;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        double s = 0.0;
        for (std::size_t dr = 0; dr < factor; ++dr)
          for (std::size_t dc = 0; dc < factor; ++dc)
            s += img[(r * factor + dr) * data.width + c * factor + dc];
        out[n * out_dim + r * w + c] = std::clamp(s / area, 0.0, 1.0);
      }
    }
  }
  Dataset d = data;
  d.height = h;
  d.width = w;
  d.images = Tensor({data.size(), out_dim}, std::move(out));
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic concepts

namespace {

struct SyntheticLayout {
  std::vector<std::vector<int>> attributes;  // [concept][attribute] ∈ {0,1}
  std::vector<double> prototypes;            // [concept × pixels]
};

SyntheticLayout draw_layout(const SyntheticSpec& spec, Rng& rng) {
  if (spec.concepts < 3) throw ConfigError("gen_synthetic: need at least 3 concepts");
  if (spec.attributes < 2) throw ConfigError("gen_synthetic: need at least 2 attributes");
  if (spec.attributes < 63 && spec.concepts > (std::size_t{1} << spec.attributes) - 1) {
    throw ConfigError("gen_synthetic: " + std::to_string(spec.concepts) +
                      " distinct nonzero attribute rows are impossible with " +
                      std::to_string(spec.attributes) + " attributes");
  }
  const std::size_t pixels = spec.side * spec.side;
  if (pixels < spec.attributes) {
    throw ConfigError("gen_synthetic: " + std::to_string(pixels) + " pixels cannot hold " +
                      std::to_string(spec.attributes) + " disjoint templates");
  }
  if (spec.per_concept == 0) throw ConfigError("gen_synthetic: per_concept must be positive");
  if (!(spec.noise >= 0.0)) throw ConfigError("gen_synthetic: noise must be >= 0");

  SyntheticLayout layout;
  std::set<std::vector<int>> seen;
  while (layout.attributes.size() < spec.concepts) {
    std::vector<int> row(spec.attributes);
    for (int& bit : row) bit = rng.uniform() < 0.5 ? 1 : 0;
    if (std::all_of(row.begin(), row.end(), [](int b) { return b == 0; })) continue;
    if (!seen.insert(row).second) continue;
    layout.attributes.push_back(std::move(row));
  }

  // Each attribute owns an equal, disjoint share of a shuffled pixel order.
  std::vector<std::size_t> order(pixels);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  const std::size_t share = pixels / spec.attributes;
  std::vector<std::vector<double>> templates(spec.attributes, std::vector<double>(pixels, 0.0));
  for (std::size_t a = 0; a < spec.attributes; ++a)
    for (std::size_t k = 0; k < share; ++k) templates[a][order[a * share + k]] = rng.uniform(0.5, 1.0);

  layout.prototypes.assign(spec.concepts * pixels, 0.0);
  for (std::size_t c = 0; c < spec.concepts; ++c) {
    double* proto = layout.prototypes.data() + c * pixels;
    for (std::size_t a = 0; a < spec.attributes; ++a)
      if (layout.attributes[c][a])
        for (std::size_t p = 0; p < pixels; ++p) proto[p] += templates[a][p];
    for (std::size_t p = 0; p < pixels; ++p) proto[p] = std::clamp(proto[p], 0.0, 1.0);
  }
  return layout;
}

std::string indexed_name(char prefix, std::size_t i, std::size_t count) {
  const std::size_t width = std::to_string(count - 1).size();
  std::string digits = std::to_string(i);
  return std::string(1, prefix) + std::string(width - digits.size(), '0') + digits;
}

}  // namespace

Tensor synthetic_prototypes(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  auto layout = draw_layout(spec, rng);
  return Tensor({spec.concepts, spec.side * spec.side}, std::move(layout.prototypes));
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  const SyntheticLayout layout = draw_layout(spec, rng);
  const std::size_t pixels = spec.side * spec.side;
  const std::size_t n = spec.concepts * spec.per_concept;

  Dataset d;
  d.height = d.width = spec.side;
  d.labels.resize(n);
  std::vector<double> px(n * pixels);
  for (std::size_t c = 0; c < spec.concepts; ++c) {
    const double* proto = layout.prototypes.data() + c * pixels;
    for (std::size_t k = 0; k < spec.per_concept; ++k) {
      const std::size_t i = c * spec.per_concept + k;
      d.labels[i] = c;
      for (std::size_t p = 0; p < pixels; ++p) {
        const double noise = spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0;
        px[i * pixels + p] = std::clamp(proto[p] + noise, 0.0, 1.0);
      }
    }
  }
  d.images = Tensor({n, pixels}, std::move(px));

  FeatureNorms norms;
  for (std::size_t c = 0; c < spec.concepts; ++c) {
    norms.concept_names.push_back(indexed_name('c', c, spec.concepts));
  }
  for (std::size_t a = 0; a < spec.attributes; ++a) {
    norms.attribute_names.push_back(indexed_name('a', a, spec.attributes));
  }
  for (const auto& row : layout.attributes)
    for (int bit : row) norms.values.push_back(static_cast<double>(bit));
  d.concept_names = norms.concept_names;
  d.norms = std::move(norms);
  return d;
}

// ---------------------------------------------------------------------------
// Feature-norm CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string strip(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

}  // namespace

FeatureNorms parse_feature_norms(std::istream& in) {
  FeatureNorms norms;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip(line);
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    for (auto& c : cells) c = strip(c);
    if (!have_header) {
      if (cells.size() < 2 || cells[0] != "concept") {
        throw ParseError("feature norms: row " + std::to_string(line_no) +
                         ": header must be 'concept,<attribute>,...'");
      }
      norms.attribute_names.assign(cells.begin() + 1, cells.end());
      if (std::set<std::string>(norms.attribute_names.begin(), norms.attribute_names.end())
              .size() != norms.attribute_names.size()) {
        throw ParseError("feature norms: row " + std::to_string(line_no) +
                         ": duplicate attribute name");
      }
      have_header = true;
      continue;
    }
    if (cells.size() != norms.attribute_names.size() + 1) {
      throw ParseError("feature norms: row " + std::to_string(line_no) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(norms.attribute_names.size() + 1));
    }
    if (cells[0].empty()) {
      throw ParseError("feature norms: row " + std::to_string(line_no) + ": empty concept name");
    }
    if (!seen.insert(cells[0]).second) {
      throw ParseError("feature norms: row " + std::to_string(line_no) +
                       ": duplicate concept '" + cells[0] + "'");
    }
    norms.concept_names.push_back(cells[0]);
    for (std::size_t j = 1; j < cells.size(); ++j) {
      const std::string& cell = cells[j];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
        throw ParseError("feature norms: row " + std::to_string(line_no) + ", column " +
                         std::to_string(j + 1) + ": '" + cell + "' is not a number");
      }
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ParseError("feature norms: row " + std::to_string(line_no) + ", column " +
                         std::to_string(j + 1) + ": value " + cell + " outside [0,1]");
      }
      norms.values.push_back(v);
    }
  }
  if (!have_header) throw ParseError("feature norms: missing header row");
  if (norms.concept_names.empty()) throw ParseError("feature norms: no concept rows");
  try {
    norms.validate();
  } catch (const ValidationError& e) {
    throw ParseError(e.what());
  }
  return norms;
}

FeatureNorms load_feature_norms(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("feature norms: cannot open " + path.string());
  return parse_feature_norms(in);
}

void write_feature_norms(const FeatureNorms& norms, const std::filesystem::path& path) {
  norms.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("feature norms: cannot open " + path.string() + " for writing");
  out << "concept";
  for (const auto& a : norms.attribute_names) out << ',' << a;
  out << '\n';
  char buf[64];
  for (std::size_t c = 0; c < norms.concept_count(); ++c) {
    out << norms.concept_names[c];
    for (double v : norms.row(c)) {
      const auto res = std::to_chars(buf, buf + sizeof buf, v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
  if (!out) throw IoError("feature norms: write failed");
}

}  // namespace cbae
