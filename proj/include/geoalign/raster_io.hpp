#pragma once

// On-disk formats used by the command-line tool.
//
// Depth raster:  "GEOD 1 <H> <W>\n" then H*W little-endian IEEE-754 doubles, row-major.
// Label raster:  "GEOL 1 <H> <W>\n" then H*W bytes (0 ground, 1 roof, 2 facade, 3 edge).
// Mask image:    binary PGM (P5), maxval 255, value round(255 * m).
// Scene spec:    one directive per line, '#' starts a comment:
//                  ground <depth>
//                  slope <sx> <sy>
//                  noise <sigma>
//                  seed <n>
//                  raster <H> <W>
//                  box <x> <y> <w> <h> <height>
//                Each directive except box may appear at most once; omitted ones
//                keep the SceneSpec defaults.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "geoalign/mgsf.hpp"
#include "geoalign/scene.hpp"

namespace geoalign {

/// Malformed or unreadable input file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string encode_depth(std::size_t height, std::size_t width, std::span<const double> values);
void write_depth(const std::filesystem::path& path, std::size_t height, std::size_t width,
                 std::span<const double> values);
void write_depth(const std::filesystem::path& path, const DepthMap& depth);
DepthMap decode_depth(std::string_view bytes);
DepthMap read_depth(const std::filesystem::path& path);

std::string encode_labels(const LabelMap& labels);
void write_labels(const std::filesystem::path& path, const LabelMap& labels);
LabelMap decode_labels(std::string_view bytes);
LabelMap read_labels(const std::filesystem::path& path);

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

/// Values are clamped to [0, 1] before quantization.
std::string encode_pgm(std::size_t height, std::size_t width, std::span<const double> values);
void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               std::span<const double> values);
GrayImage decode_pgm(std::string_view bytes);

/// Throws FormatError with a "line N:" prefix on malformed input, and
/// std::invalid_argument from SceneSpec::validate for bad geometry.
SceneSpec parse_scene_spec(std::string_view text);
std::string format_scene_spec(const SceneSpec& spec);

std::string read_file(const std::filesystem::path& path);

}  // namespace geoalign
