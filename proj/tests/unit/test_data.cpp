#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cbae/data.hpp"
#include "cbae/error.hpp"
#include "cbae/probes.hpp"
#include "cbae/rng.hpp"
#include "doctest.h"

using namespace cbae;
namespace fs = std::filesystem;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

// Hand-assembled IDX pair, independent of write_idx.
std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> idx_bytes(
    std::uint32_t n, std::uint32_t rows, std::uint32_t cols, std::uint8_t label_base = 0) {
  std::vector<std::uint8_t> im, lb;
  put_u32(im, 0x803);
  put_u32(im, n);
  put_u32(im, rows);
  put_u32(im, cols);
  for (std::uint32_t i = 0; i < n * rows * cols; ++i) im.push_back(static_cast<std::uint8_t>(i * 37));
  put_u32(lb, 0x801);
  put_u32(lb, n);
  for (std::uint32_t i = 0; i < n; ++i) lb.push_back(static_cast<std::uint8_t>((label_base + i) % 10));
  return {im, lb};
}

template <typename E>
std::string error_text(auto&& fn) {
  try {
    fn();
  } catch (const E& e) {
    return e.what();
  }
  return "<no error>";
}

Dataset image_dataset(std::size_t side, std::vector<double> pixels) {
  Dataset d;
  d.height = d.width = side;
  const std::size_t n = pixels.size() / (side * side);
  d.images = Tensor({n, side * side}, std::move(pixels));
  d.labels.assign(n, 0);
  d.concept_names = {"0"};
  return d;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cbae_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("parse_idx reads a hand-built file") {
  const auto [im, lb] = idx_bytes(3, 2, 2);
  const Dataset d = parse_idx(im, lb);
  CHECK(d.size() == 3);
  CHECK(d.height == 2);
  CHECK(d.width == 2);
  CHECK(d.labels == std::vector<std::size_t>{0, 1, 2});
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(d.images[i] == static_cast<double>(static_cast<std::uint8_t>(i * 37)) / 255.0);
  }
  CHECK(d.concept_names == std::vector<std::string>{"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"});
}

TEST_CASE("parse_idx errors name byte offsets") {
  auto [im, lb] = idx_bytes(3, 2, 2);

  auto bad = im;
  bad[3] = 0x01;
  CHECK(error_text<ParseError>([&] { parse_idx(bad, lb); }).find("byte offset 0") !=
        std::string::npos);

  auto cut = im;
  cut.resize(cut.size() - 3);
  const std::string msg = error_text<ParseError>([&] { parse_idx(cut, lb); });
  CHECK(msg.find("truncated") != std::string::npos);
  CHECK(msg.find("byte offset") != std::string::npos);

  auto short_header = std::vector<std::uint8_t>(im.begin(), im.begin() + 6);
  CHECK_THROWS_AS(parse_idx(short_header, lb), ParseError);

  auto [im4, lb4] = idx_bytes(4, 2, 2);
  CHECK(error_text<ParseError>([&] { parse_idx(im, lb4); }).find("byte offset 4") !=
        std::string::npos);

  auto ten = lb;
  ten.back() = 10;
  CHECK(error_text<ValidationError>([&] { parse_idx(im, ten); }).find("byte offset 10") !=
        std::string::npos);
}

TEST_CASE("IDX round trip through files") {
  const fs::path dir = temp_dir("idx");
  const auto [im, lb] = idx_bytes(5, 3, 4, 2);
  const Dataset d = parse_idx(im, lb);
  write_idx(d, dir / "im.idx", dir / "lb.idx");
  const Dataset back = load_idx(dir / "im.idx", dir / "lb.idx");
  CHECK(back.labels == d.labels);
  CHECK(back.height == 3);
  CHECK(back.width == 4);
  for (std::size_t i = 0; i < d.images.size(); ++i) CHECK(back.images[i] == d.images[i]);

  // Arbitrary pixels come back within one quantization step.
  Rng rng(3);
  std::vector<double> px(2 * 16);
  for (auto& v : px) v = rng.uniform();
  const Dataset r = image_dataset(4, px);
  write_idx(r, dir / "r_im.idx", dir / "r_lb.idx");
  const Dataset rb = load_idx(dir / "r_im.idx", dir / "r_lb.idx");
  for (std::size_t i = 0; i < px.size(); ++i) CHECK(std::abs(rb.images[i] - px[i]) <= 0.5 / 255.0 + 1e-15);
  CHECK_THROWS_AS(load_idx(dir / "missing", dir / "lb.idx"), IoError);
}

TEST_CASE("bundled MNIST subset loads and downsamples to 14x14") {
  const fs::path dir = CBAE_TEST_DATA_DIR "/mnist";
  const Dataset d = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  CHECK(d.size() == 2000);
  CHECK(d.input_dim() == 784);
  std::vector<std::size_t> counts(10, 0);
  for (auto y : d.labels) ++counts.at(y);
  for (auto c : counts) CHECK(c == 200);
  const Dataset small = downsample(d, 2);
  CHECK(small.input_dim() == 196);
  CHECK(small.labels == d.labels);
}

TEST_CASE("downsample examples") {
  Rng rng(1);
  std::vector<double> px(3 * 36);
  for (auto& v : px) v = rng.uniform();
  const Dataset d = image_dataset(6, px);
  const Dataset same = downsample(d, 1);
  for (std::size_t i = 0; i < px.size(); ++i) CHECK(same.images[i] == px[i]);

  const Dataset flat = downsample(image_dataset(6, std::vector<double>(36, 0.3)), 3);
  for (double v : flat.images.values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));

  const Dataset checker = downsample(image_dataset(2, {1, 0, 0, 1}), 2);
  CHECK(checker.images.size() == 1);
  CHECK(checker.images[0] == 0.5);

  const Dataset big = downsample(image_dataset(28, std::vector<double>(784, 0.0)), 7);
  CHECK(big.height == 4);
  CHECK(big.width == 4);
  CHECK_THROWS_AS(downsample(d, 4), ConfigError);
  CHECK_THROWS_AS(downsample(d, 0), ConfigError);
}

TEST_CASE("downsample composes exactly") {
  // Dyadic pixel values keep every block sum exact, so the two routes agree
  // bit for bit.
  Rng rng(9);
  std::vector<double> px(2 * 64);
  for (auto& v : px) v = static_cast<double>(rng.index(257)) / 256.0;
  const Dataset d = image_dataset(8, px);
  const Dataset once = downsample(d, 4);
  const Dataset twice = downsample(downsample(d, 2), 2);
  for (std::size_t i = 0; i < once.images.size(); ++i) CHECK(once.images[i] == twice.images[i]);

  // IDX-quantized pixels (k/255) agree to rounding.
  std::vector<double> q(2 * 36);
  for (auto& v : q) v = static_cast<double>(rng.index(256)) / 255.0;
  const Dataset e = image_dataset(6, q);
  const Dataset a = downsample(e, 6);
  const Dataset b = downsample(downsample(e, 2), 3);
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    CHECK(a.images[i] == doctest::Approx(b.images[i]).epsilon(1e-14));
  }
}

TEST_CASE("gen_synthetic structure") {
  SyntheticSpec spec;
  spec.per_concept = 10;
  const Dataset a = gen_synthetic(spec), b = gen_synthetic(spec);
  CHECK(a.size() == spec.concepts * spec.per_concept);
  CHECK(a.input_dim() == spec.side * spec.side);
  CHECK(std::equal(a.images.values().begin(), a.images.values().end(), b.images.values().begin()));
  REQUIRE(a.norms.has_value());
  CHECK(a.norms->concept_names == a.concept_names);
  for (double v : a.images.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  std::set<std::vector<double>> rows;
  for (std::size_t c = 0; c < a.norms->concept_count(); ++c) {
    const auto r = a.norms->row(c);
    CHECK(std::any_of(r.begin(), r.end(), [](double v) { return v != 0.0; }));
    for (double v : r) CHECK((v == 0.0 || v == 1.0));
    rows.emplace(r.begin(), r.end());
  }
  CHECK(rows.size() == spec.concepts);

  SyntheticSpec other = spec;
  other.seed = spec.seed + 1;
  const Dataset c = gen_synthetic(other);
  CHECK_FALSE(std::equal(a.images.values().begin(), a.images.values().end(), c.images.values().begin()));
}

TEST_CASE("zero-noise instances equal their prototype") {
  SyntheticSpec spec;
  spec.noise = 0.0;
  spec.per_concept = 5;
  const Dataset d = gen_synthetic(spec);
  const Tensor proto = synthetic_prototypes(spec);
  const std::size_t dim = d.input_dim();
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) CHECK(d.images.at(i, j) == proto.at(d.labels[i], j));
  }
}

TEST_CASE("prototype similarity tracks attribute similarity") {
  for (std::uint64_t seed : {1u, 7u, 21u}) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.per_concept = 1;
    const Dataset d = gen_synthetic(spec);
    const Tensor proto = synthetic_prototypes(spec);
    const auto pix = pairwise_cosines(proto.values(), spec.concepts);
    const auto attr = pairwise_cosines(d.norms->values, spec.concepts);
    CHECK(spearman(pix, attr) > 0.9);
  }
}

TEST_CASE("gen_synthetic rejects impossible specs") {
  SyntheticSpec spec;
  spec.concepts = 4;
  spec.attributes = 2;  // only 3 distinct nonzero rows
  CHECK_THROWS_AS(gen_synthetic(spec), ConfigError);
  spec.concepts = 2;
  CHECK_THROWS_AS(gen_synthetic(spec), ConfigError);
}

TEST_CASE("feature norm CSV") {
  std::istringstream good("concept,red,round\napple,1,0.5\nball,0,1\nsun,1,1\n");
  const FeatureNorms n = parse_feature_norms(good);
  CHECK(n.concept_names == std::vector<std::string>{"apple", "ball", "sun"});
  CHECK(n.attribute_names == std::vector<std::string>{"red", "round"});
  CHECK(n.values == std::vector<double>{1, 0.5, 0, 1, 1, 1});

  std::istringstream dup("concept,a,b\nx,1,0\ny,0,1\nx,1,1\n");
  const std::string dup_msg = error_text<ParseError>([&] { parse_feature_norms(dup); });
  CHECK(dup_msg.find("'x'") != std::string::npos);
  CHECK(dup_msg.find("row 4") != std::string::npos);

  std::istringstream range("concept,a,b\nx,1,0\ny,1.5,1\n");
  const std::string range_msg = error_text<ParseError>([&] { parse_feature_norms(range); });
  CHECK(range_msg.find("row 3") != std::string::npos);
  CHECK(range_msg.find("column 2") != std::string::npos);

  std::istringstream ragged("concept,a,b\nx,1\n");
  CHECK(error_text<ParseError>([&] { parse_feature_norms(ragged); }).find("row 2") !=
        std::string::npos);
  std::istringstream text("concept,a\nx,high\n");
  CHECK_THROWS_AS(parse_feature_norms(text), ParseError);

  const fs::path dir = temp_dir("norms");
  write_feature_norms(n, dir / "n.csv");
  const FeatureNorms back = load_feature_norms(dir / "n.csv");
  CHECK(back.values == n.values);
  CHECK(back.concept_names == n.concept_names);
}
