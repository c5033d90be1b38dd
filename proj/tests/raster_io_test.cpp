#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "geoalign/raster_io.hpp"
#include "test_util.hpp"

using namespace geoalign;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("geoalign_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "<no error>";
}

}  // namespace

TEST(DepthFormat, ByteLayout) {
  const std::vector<double> v = {1.5, -2.0};
  const std::string b = encode_depth(1, 2, v);
  const std::string header = "GEOD 1 1 2\n";
  ASSERT_EQ(b.size(), header.size() + 16);
  EXPECT_EQ(b.substr(0, header.size()), header);
  // 1.5 is 0x3FF8000000000000; little-endian puts the 0x3F byte last.
  EXPECT_EQ(static_cast<unsigned char>(b[header.size() + 7]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(b[header.size() + 6]), 0xF8);
  EXPECT_EQ(static_cast<unsigned char>(b[header.size()]), 0x00);
}

TEST(DepthFormat, RoundTripIsBitExact) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t h = testutil::random_size(rng, 1, 9), w = testutil::random_size(rng, 1, 9);
    const Tensor t = testutil::random_tensor(Shape{1, 1, h, w}, rng, -1e6, 1e6);
    const DepthMap back = decode_depth(encode_depth(h, w, t.data()));
    EXPECT_EQ(back.tensor(), t);
  }
}

TEST(DepthFormat, RejectsMalformedPayloads) {
  const std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
  const std::string good = encode_depth(2, 2, v);
  EXPECT_NE(error_of([&] { decode_depth(good.substr(0, good.size() - 1)); }).find("payload"), std::string::npos);
  EXPECT_THROW(decode_depth(good + "x"), FormatError);
  EXPECT_THROW(decode_depth("GEOX 1 2 2\n"), FormatError);
  EXPECT_THROW(decode_depth("GEOD 2 1 1\n" + std::string(8, '\0')), FormatError);
  EXPECT_THROW(decode_depth(""), FormatError);
  const std::vector<double> bad = {1.0, std::numeric_limits<double>::quiet_NaN()};
  const std::string msg = error_of([&] { decode_depth(encode_depth(1, 2, bad)); });
  EXPECT_NE(msg.find("row 0"), std::string::npos) << msg;
  EXPECT_NE(msg.find("column 1"), std::string::npos) << msg;
  EXPECT_THROW(encode_depth(2, 2, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(DepthFormat, ReadPrefixesThePath) {
  const fs::path d = scratch_dir("prefix");
  write_file_atomic(d / "bad.geod", "GEOD 1 1 1\n");
  const std::string msg = error_of([&] { read_depth(d / "bad.geod"); });
  EXPECT_NE(msg.find("bad.geod"), std::string::npos) << msg;
  EXPECT_THROW(read_depth(d / "missing.geod"), FormatError);
}

TEST(LabelFormat, RoundTripAndRangeCheck) {
  const LabelMap l{2, 3, {Label::ground, Label::roof, Label::facade, Label::edge, Label::roof, Label::ground}};
  const std::string b = encode_labels(l);
  EXPECT_EQ(b, std::string("GEOL 1 2 3\n") + std::string("\0\1\2\3\1\0", 6));
  EXPECT_EQ(decode_labels(b).labels, l.labels);
  std::string broken = b;
  broken.back() = 4;
  EXPECT_THROW(decode_labels(broken), FormatError);
  EXPECT_THROW(decode_labels(b.substr(0, b.size() - 2)), FormatError);
}

TEST(PgmFormat, HeaderClampAndQuantization) {
  const std::vector<double> v = {-1.0, 0.0, 0.5, 1.0, 7.0, std::numeric_limits<double>::quiet_NaN()};
  const std::string b = encode_pgm(2, 3, v);
  EXPECT_EQ(b.substr(0, 11), "P5\n3 2\n255\n");
  const GrayImage g = decode_pgm(b);
  EXPECT_EQ(g.pixels, (std::vector<std::uint8_t>{0, 0, 128, 255, 255, 0}));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor t = testutil::random_tensor(Shape{1, 1, 4, 5}, rng, 0, 1);
    const GrayImage q = decode_pgm(encode_pgm(4, 5, t.data()));
    for (std::size_t i = 0; i < 20; ++i) EXPECT_LE(std::abs(q.pixels[i] / 255.0 - t[i]), 1.0 / 510.0 + 1e-15);
  }
}

TEST(SceneSpecText, MinimalAndFullSpecs) {
  const SceneSpec empty = parse_scene_spec("# nothing\n\n");
  EXPECT_EQ(empty.ground_depth, 100.0);
  EXPECT_TRUE(empty.boxes.empty());

  const SceneSpec s = parse_scene_spec(
      "ground 50   # metres\n"
      "slope 0.1 -0.05\n"
      "noise 0.02\n"
      "seed 9\n"
      "raster 40 60\n"
      "box 1 2 5 6 7.5\n"
      "box 20 20 4 4 3\n");
  EXPECT_EQ(s.ground_depth, 50.0);
  EXPECT_EQ(s.slope_x, 0.1);
  EXPECT_EQ(s.slope_y, -0.05);
  EXPECT_EQ(s.noise_sigma, 0.02);
  EXPECT_EQ(s.seed, 9u);
  EXPECT_EQ(s.height, 40u);
  EXPECT_EQ(s.width, 60u);
  ASSERT_EQ(s.boxes.size(), 2u);
  EXPECT_EQ(s.boxes[0].x, 1);
  EXPECT_EQ(s.boxes[0].height, 7.5);

  const SceneSpec again = parse_scene_spec(format_scene_spec(s));
  EXPECT_EQ(format_scene_spec(again), format_scene_spec(s));
  EXPECT_EQ(render_oblique(again).depth.tensor(), render_oblique(s).depth.tensor());
}

TEST(SceneSpecText, ErrorsCarryLineNumbers) {
  auto msg = [](std::string_view text) { return error_of([&] { parse_scene_spec(text); }); };
  EXPECT_EQ(msg("ground 10\nbox 1 2 3 4\n"), "line 2: 'box' takes 5 value(s), got 4");
  EXPECT_NE(msg("noise 0.1\n\nnoise 0.2\n").find("line 3: duplicate 'noise' (first on line 1)"), std::string::npos);
  EXPECT_NE(msg("tower 1 2\n").find("line 1:"), std::string::npos);
  EXPECT_NE(msg("ground ten\n").find("line 1:"), std::string::npos);
  EXPECT_NE(msg("raster 8 8\nbox 1 1 4 4 2\nbox 2 2 4 4 2\n").find("boxes 0 and 1"), std::string::npos);
  EXPECT_THROW(parse_scene_spec("box 1 1 4 4 2\nbox 2 2 4 4 2\n"), std::invalid_argument);
}

TEST(AtomicWrite, ReplacesAndLeavesNoTempFiles) {
  const fs::path d = scratch_dir("atomic");
  write_file_atomic(d / "a.txt", "first");
  write_file_atomic(d / "a.txt", "second");
  EXPECT_EQ(read_file(d / "a.txt"), "second");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(d)) ++files;
  EXPECT_EQ(files, 1u);
  EXPECT_ANY_THROW(write_file_atomic(d / "no_such_dir" / "b.txt", "x"));
}
