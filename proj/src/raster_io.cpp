#include "geoalign/raster_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <system_error>
#include <unistd.h>

#include <fmt/format.h>

namespace geoalign {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open {}", path.string()));
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError(fmt::format("error reading {}", path.string()));
  return bytes;
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += fmt::format(".tmp{}", static_cast<long>(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(fmt::format("cannot write {}", tmp.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      fs::remove(tmp, ignored);
      throw FormatError(fmt::format("short write to {}", tmp.string()));
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    fs::remove(tmp, ignored);
    throw FormatError(fmt::format("cannot rename {} to {}: {}", tmp.string(), path.string(), ec.message()));
  }
}

namespace {

std::string header(std::string_view magic, std::size_t height, std::size_t width) {
  return fmt::format("{} 1 {} {}\n", magic, height, width);
}

struct Header {
  std::size_t height = 0;
  std::size_t width = 0;
  std::string_view payload;
};

Header parse_header(std::string_view bytes, std::string_view magic) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos || nl > 128) {
    throw FormatError(fmt::format("missing '{} 1 H W' header line", magic));
  }
  std::istringstream line{std::string(bytes.substr(0, nl))};
  std::string got_magic, extra;
  long version = 0, h = 0, w = 0;
  if (!(line >> got_magic >> version >> h >> w) || (line >> extra)) {
    throw FormatError(fmt::format("malformed header '{}', expected '{} 1 H W'", bytes.substr(0, nl), magic));
  }
  if (got_magic != magic) throw FormatError(fmt::format("bad magic '{}', expected '{}'", got_magic, magic));
  if (version != 1) throw FormatError(fmt::format("unsupported {} version {}", magic, version));
  if (h <= 0 || w <= 0) throw FormatError(fmt::format("raster size {}x{} must be positive", h, w));
  return {static_cast<std::size_t>(h), static_cast<std::size_t>(w), bytes.substr(nl + 1)};
}

void check_size(std::size_t height, std::size_t width, std::size_t count) {
  if (height == 0 || width == 0) throw std::invalid_argument("raster must be non-empty");
  if (count != height * width) {
    throw std::invalid_argument(fmt::format("{} values for a {}x{} raster", count, height, width));
  }
}

}  // namespace

std::string encode_depth(std::size_t height, std::size_t width, std::span<const double> values) {
  check_size(height, width, values.size());
  std::string out = header("GEOD", height, width);
  out.reserve(out.size() + values.size() * 8);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffU));
  }
  return out;
}

void write_depth(const fs::path& path, std::size_t height, std::size_t width, std::span<const double> values) {
  write_file_atomic(path, encode_depth(height, width, values));
}

void write_depth(const fs::path& path, const DepthMap& depth) {
  write_depth(path, depth.height(), depth.width(), depth.tensor().data());
}

DepthMap decode_depth(std::string_view bytes) {
  const Header h = parse_header(bytes, "GEOD");
  const std::size_t n = h.height * h.width;
  if (h.payload.size() != n * 8) {
    throw FormatError(fmt::format("GEOD {}x{} needs {} payload bytes, found {}", h.height, h.width, n * 8,
                                  h.payload.size()));
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(h.payload[i * 8 + static_cast<std::size_t>(b)]))
              << (8 * b);
    }
    values[i] = std::bit_cast<double>(bits);
    if (!std::isfinite(values[i])) {
      throw FormatError(fmt::format("non-finite depth at row {} column {}", i / h.width, i % h.width));
    }
  }
  return DepthMap(h.height, h.width, std::move(values));
}

DepthMap read_depth(const fs::path& path) {
  try {
    return decode_depth(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string encode_labels(const LabelMap& labels) {
  check_size(labels.height, labels.width, labels.labels.size());
  std::string out = header("GEOL", labels.height, labels.width);
  for (Label l : labels.labels) out.push_back(static_cast<char>(l));
  return out;
}

void write_labels(const fs::path& path, const LabelMap& labels) { write_file_atomic(path, encode_labels(labels)); }

LabelMap decode_labels(std::string_view bytes) {
  const Header h = parse_header(bytes, "GEOL");
  const std::size_t n = h.height * h.width;
  if (h.payload.size() != n) {
    throw FormatError(fmt::format("GEOL {}x{} needs {} payload bytes, found {}", h.height, h.width, n,
                                  h.payload.size()));
  }
  LabelMap out{h.height, h.width, std::vector<Label>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = static_cast<unsigned char>(h.payload[i]);
    if (v > 3) throw FormatError(fmt::format("label byte {} at index {} is not in 0..3", v, i));
    out.labels[i] = static_cast<Label>(v);
  }
  return out;
}

LabelMap read_labels(const fs::path& path) {
  try {
    return decode_labels(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string encode_pgm(std::size_t height, std::size_t width, std::span<const double> values) {
  check_size(height, width, values.size());
  std::string out = fmt::format("P5\n{} {}\n255\n", width, height);
  for (double v : values) {
    const double c = std::clamp(std::isnan(v) ? 0.0 : v, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(255.0 * c))));
  }
  return out;
}

void write_pgm(const fs::path& path, std::size_t height, std::size_t width, std::span<const double> values) {
  write_file_atomic(path, encode_pgm(height, width, values));
}

GrayImage decode_pgm(std::string_view bytes) {
  // Only the layout encode_pgm writes: no comments, single whitespace separators.
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  auto number = [&](std::string_view what) {
    const std::string_view t = token();
    std::size_t v = 0;
    const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || end != t.data() + t.size()) throw FormatError(fmt::format("bad PGM {}", what));
    return v;
  };
  if (token() != "P5") throw FormatError("not a binary PGM (P5)");
  GrayImage img;
  img.width = number("width");
  img.height = number("height");
  if (number("maxval") != 255) throw FormatError("PGM maxval must be 255");
  ++pos;
  if (pos > bytes.size() || bytes.size() - pos != img.height * img.width) throw FormatError("PGM payload size mismatch");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

namespace {

template <typename T>
T parse_number(std::string_view token, std::size_t line, std::string_view what) {
  T v{};
  const auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || end != token.data() + token.size()) {
    throw FormatError(fmt::format("line {}: {} '{}' is not a valid number", line, what, token));
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) throw FormatError(fmt::format("line {}: {} must be finite", line, what));
  }
  return v;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos > start) out.push_back(line.substr(start, pos - start));
  }
  return out;
}

}  // namespace

SceneSpec parse_scene_spec(std::string_view text) {
  SceneSpec spec;
  std::map<std::string, std::size_t, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tok = split(line);
    if (tok.empty()) continue;

    const std::string_view key = tok[0];
    auto expect = [&](std::size_t args) {
      if (tok.size() != args + 1) {
        throw FormatError(fmt::format("line {}: '{}' takes {} value(s), got {}", line_no, key, args, tok.size() - 1));
      }
    };
    if (key != "box") {
      if (auto it = seen.find(key); it != seen.end()) {
        throw FormatError(fmt::format("line {}: duplicate '{}' (first on line {})", line_no, key, it->second));
      }
      seen.emplace(std::string(key), line_no);
    }

    if (key == "ground") {
      expect(1);
      spec.ground_depth = parse_number<double>(tok[1], line_no, "ground depth");
    } else if (key == "slope") {
      expect(2);
      spec.slope_x = parse_number<double>(tok[1], line_no, "slope x");
      spec.slope_y = parse_number<double>(tok[2], line_no, "slope y");
    } else if (key == "noise") {
      expect(1);
      spec.noise_sigma = parse_number<double>(tok[1], line_no, "noise sigma");
      if (spec.noise_sigma < 0.0) throw FormatError(fmt::format("line {}: noise sigma must be >= 0", line_no));
    } else if (key == "seed") {
      expect(1);
      spec.seed = parse_number<std::uint64_t>(tok[1], line_no, "seed");
    } else if (key == "raster") {
      expect(2);
      spec.height = parse_number<std::size_t>(tok[1], line_no, "raster height");
      spec.width = parse_number<std::size_t>(tok[2], line_no, "raster width");
      if (spec.height == 0 || spec.width == 0) throw FormatError(fmt::format("line {}: raster must be non-empty", line_no));
    } else if (key == "box") {
      expect(5);
      Box b;
      b.x = parse_number<long>(tok[1], line_no, "box x");
      b.y = parse_number<long>(tok[2], line_no, "box y");
      b.w = parse_number<long>(tok[3], line_no, "box w");
      b.h = parse_number<long>(tok[4], line_no, "box h");
      b.height = parse_number<double>(tok[5], line_no, "box height");
      spec.boxes.push_back(b);
    } else {
      throw FormatError(fmt::format("line {}: unknown directive '{}'", line_no, key));
    }
  }
  spec.validate();
  return spec;
}

std::string format_scene_spec(const SceneSpec& spec) {
  std::string out = fmt::format("raster {} {}\nground {}\nslope {} {}\nnoise {}\nseed {}\n", spec.height, spec.width,
                                spec.ground_depth, spec.slope_x, spec.slope_y, spec.noise_sigma, spec.seed);
  for (const Box& b : spec.boxes) out += fmt::format("box {} {} {} {} {}\n", b.x, b.y, b.w, b.h, b.height);
  return out;
}

}  // namespace geoalign
