#include "ipirm/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ipirm/error.hpp"
#include "ipirm/random.hpp"

namespace ipirm {

namespace {

constexpr std::array<std::array<double, 3>, 6> kPalette{{
    {1.0, 0.0, 0.0},  // red
    {0.0, 1.0, 0.0},  // green
    {0.0, 0.0, 1.0},  // blue
    {1.0, 1.0, 0.0},  // yellow
    {1.0, 0.0, 1.0},  // magenta
    {0.0, 1.0, 1.0},  // cyan
}};

const std::set<std::string> kKnownFactors{"shape", "color", "pos_x", "pos_y", "scale"};

}  // namespace

// ---- DatasetSpec ----

void DatasetSpec::validate() const {
  if (style != "factorworld") throw ConfigError("unsupported render style '" + style + "'");
  if (factors.empty()) throw ConfigError("dataset needs at least one factor");
  if (height < 4 || width < 4) throw ConfigError("image height and width must be at least 4");
  if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
  if (count < 1) throw ConfigError("sample count must be at least 1");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
  std::set<std::string> seen;
  for (const auto& f : factors) {
    if (!kKnownFactors.count(f.name)) {
      throw ConfigError("factor '" + f.name + "' is not supported by the factorworld renderer");
    }
    if (!seen.insert(f.name).second) throw ConfigError("duplicate factor '" + f.name + "'");
    if (f.cardinality < 2) {
      throw ConfigError("factor '" + f.name + "' needs cardinality >= 2");
    }
    if (f.name == "shape" && f.cardinality > 3) {
      throw ConfigError("shape supports at most 3 values (square, disc, cross)");
    }
    if (f.name == "color") {
      if (f.cardinality > kPalette.size()) throw ConfigError("color supports at most 6 values");
      if (channels != 3) throw ConfigError("color factor requires 3 channels");
    }
  }
  if (correlated_pair) {
    const auto& [a, b] = *correlated_pair;
    if (a == b) throw ConfigError("correlated pair must name two different factors");
    if (!seen.count(a) || !seen.count(b)) {
      throw ConfigError("correlated pair (" + a + ", " + b + ") names an unknown factor");
    }
  }
}

std::size_t DatasetSpec::grid_size() const {
  std::size_t n = 1;
  for (const auto& f : factors) n *= f.cardinality;
  return n;
}

// ---- containers ----

ImageBatch ImageBatch::select(std::span<const std::size_t> indices) const {
  return ImageBatch{pixels.select_rows(indices), height, width, channels};
}

std::optional<std::size_t> FactorTable::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < factors.size(); ++i) {
    if (factors[i].name == name) return i;
  }
  return std::nullopt;
}

std::vector<std::uint32_t> FactorTable::column(std::size_t factor) const {
  std::vector<std::uint32_t> col;
  col.reserve(values.size());
  for (const auto& row : values) col.push_back(row.at(factor));
  return col;
}

FactorTable FactorTable::evaluable_only() const {
  FactorTable out;
  std::vector<std::size_t> keep;
  for (std::size_t f = 0; f < factors.size(); ++f) {
    if (f >= evaluable.size() || evaluable[f]) {
      keep.push_back(f);
      out.factors.push_back(factors[f]);
      out.evaluable.push_back(true);
    }
  }
  out.values.reserve(values.size());
  for (const auto& row : values) {
    std::vector<std::uint32_t> r;
    for (std::size_t f : keep) r.push_back(row[f]);
    out.values.push_back(std::move(r));
  }
  return out;
}

FactorTable FactorTable::select(std::span<const std::size_t> indices) const {
  FactorTable out;
  out.factors = factors;
  out.evaluable = evaluable;
  for (std::size_t i : indices) out.values.push_back(values.at(i));
  return out;
}

// ---- renderer ----

void render_factorworld(const DatasetSpec& spec, std::span<const std::uint32_t> row,
                        std::span<double> out) {
  const double side = static_cast<double>(std::min(spec.height, spec.width));
  const double half_min = 0.15 * side;
  const double half_max = 0.30 * side;

  std::size_t shape = 0;
  std::array<double, 3> rgb{1.0, 1.0, 1.0};
  double half = 0.5 * (half_min + half_max);
  double cx = 0.5 * static_cast<double>(spec.width);
  double cy = 0.5 * static_cast<double>(spec.height);

  auto level = [](std::uint32_t v, std::size_t card, double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(v) / static_cast<double>(card - 1);
  };
  const double margin = half_max + 0.5;
  for (std::size_t f = 0; f < spec.factors.size(); ++f) {
    const auto& factor = spec.factors[f];
    const std::uint32_t v = row[f];
    if (factor.name == "shape") {
      shape = v;
    } else if (factor.name == "color") {
      rgb = kPalette[v];
    } else if (factor.name == "scale") {
      half = level(v, factor.cardinality, half_min, half_max);
    } else if (factor.name == "pos_x") {
      cx = level(v, factor.cardinality, margin, static_cast<double>(spec.width) - margin);
    } else if (factor.name == "pos_y") {
      cy = level(v, factor.cardinality, margin, static_cast<double>(spec.height) - margin);
    }
  }

  const double arm = half / 3.0;
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t y = 0; y < spec.height; ++y) {
    const double dy = static_cast<double>(y) + 0.5 - cy;
    for (std::size_t x = 0; x < spec.width; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      bool inside = false;
      switch (shape) {
        case 0:  // square
          inside = std::abs(dx) <= half && std::abs(dy) <= half;
          break;
        case 1:  // disc
          inside = dx * dx + dy * dy <= half * half;
          break;
        default:  // cross
          inside = (std::abs(dx) <= arm && std::abs(dy) <= half) ||
                   (std::abs(dy) <= arm && std::abs(dx) <= half);
          break;
      }
      if (!inside) continue;
      const std::size_t base = (y * spec.width + x) * spec.channels;
      if (spec.channels == 3) {
        for (std::size_t c = 0; c < 3; ++c) out[base + c] = rgb[c];
      } else {
        out[base] = 1.0;
      }
    }
  }
}

Dataset generate_factorworld(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.factors.factors = spec.factors;
  ds.factors.evaluable.assign(spec.factors.size(), true);

  const std::size_t nf = spec.factors.size();
  if (spec.mode == SamplingMode::exhaustive) {
    const std::size_t total = spec.grid_size();
    for (std::size_t i = 0; i < total; ++i) {
      std::vector<std::uint32_t> row(nf);
      std::size_t rem = i;
      for (std::size_t f = nf; f-- > 0;) {
        row[f] = static_cast<std::uint32_t>(rem % spec.factors[f].cardinality);
        rem /= spec.factors[f].cardinality;
      }
      ds.factors.values.push_back(std::move(row));
    }
  } else {
    std::optional<std::size_t> lead, follow;
    if (spec.correlated_pair) {
      lead = ds.factors.index_of(spec.correlated_pair->first);
      follow = ds.factors.index_of(spec.correlated_pair->second);
    }
    for (std::size_t i = 0; i < spec.count; ++i) {
      Rng rng = make_rng(spec.seed, {0xfac7, i});
      std::vector<std::uint32_t> row(nf);
      for (std::size_t f = 0; f < nf; ++f) {
        row[f] = static_cast<std::uint32_t>(uniform_index(rng, spec.factors[f].cardinality));
      }
      if (lead && follow) {
        // Always draw, so rho does not shift the other streams.
        const bool aligned = uniform01(rng) < spec.rho;
        if (aligned) {
          row[*follow] =
              static_cast<std::uint32_t>(row[*lead] % spec.factors[*follow].cardinality);
        }
      }
      ds.factors.values.push_back(std::move(row));
    }
  }

  const std::size_t n = ds.factors.values.size();
  ds.images = ImageBatch{Tensor(n, spec.height * spec.width * spec.channels), spec.height,
                         spec.width, spec.channels};
  for (std::size_t i = 0; i < n; ++i) {
    render_factorworld(spec, ds.factors.values[i], ds.images.pixels.row(i));
  }
  return ds;
}

// ---- augmentation ----

void AugmentationConfig::validate() const {
  if (!(noise_stddev >= 0.0)) throw ConfigError("augment.noise_stddev must be >= 0");
  if (!(color_jitter >= 0.0 && color_jitter <= 1.0)) {
    throw ConfigError("augment.color_jitter must lie in [0, 1]");
  }
}

ImageBatch augment(const ImageBatch& batch, const AugmentationConfig& config, std::uint64_t seed) {
  config.validate();
  ImageBatch out = batch;
  if (config.is_identity()) return out;

  const std::size_t h = batch.height;
  const std::size_t w = batch.width;
  const std::size_t ch = batch.channels;
  std::vector<double> scratch(batch.pixel_count());

  for (std::size_t i = 0; i < batch.count(); ++i) {
    Rng rng = make_rng(seed, {0xa06, i});
    auto img = out.pixels.row(i);

    if (config.crop_rescale) {
      const double frac = uniform(rng, 0.75, 1.0);
      const std::size_t crop_h = std::max<std::size_t>(1, std::lround(frac * static_cast<double>(h)));
      const std::size_t crop_w = std::max<std::size_t>(1, std::lround(frac * static_cast<double>(w)));
      const std::size_t oy = uniform_index(rng, h - crop_h + 1);
      const std::size_t ox = uniform_index(rng, w - crop_w + 1);
      for (std::size_t y = 0; y < h; ++y) {
        const std::size_t sy = oy + y * crop_h / h;
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t sx = ox + x * crop_w / w;
          for (std::size_t c = 0; c < ch; ++c) {
            scratch[(y * w + x) * ch + c] = img[(sy * w + sx) * ch + c];
          }
        }
      }
      std::copy(scratch.begin(), scratch.end(), img.begin());
    }

    if (config.translate_radius > 0) {
      const long r = static_cast<long>(config.translate_radius);
      const long dx = static_cast<long>(uniform_index(rng, 2 * r + 1)) - r;
      const long dy = static_cast<long>(uniform_index(rng, 2 * r + 1)) - r;
      std::fill(scratch.begin(), scratch.end(), 0.0);
      for (long y = 0; y < static_cast<long>(h); ++y) {
        const long sy = y - dy;
        if (sy < 0 || sy >= static_cast<long>(h)) continue;
        for (long x = 0; x < static_cast<long>(w); ++x) {
          const long sx = x - dx;
          if (sx < 0 || sx >= static_cast<long>(w)) continue;
          for (std::size_t c = 0; c < ch; ++c) {
            scratch[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * ch + c] =
                img[(static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * ch + c];
          }
        }
      }
      std::copy(scratch.begin(), scratch.end(), img.begin());
    }

    if (config.color_jitter > 0.0) {
      std::array<double, 3> gain{};
      for (std::size_t c = 0; c < ch && c < 3; ++c) {
        gain[c] = 1.0 + config.color_jitter * uniform(rng, -1.0, 1.0);
      }
      for (std::size_t p = 0; p < h * w; ++p) {
        for (std::size_t c = 0; c < ch; ++c) img[p * ch + c] *= gain[c % 3];
      }
    }

    if (config.noise_stddev > 0.0) {
      for (double& v : img) v += config.noise_stddev * gaussian(rng);
    }

    for (double& v : img) v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

void mask_color_factors(FactorTable& table, const AugmentationConfig& config) {
  table.evaluable.resize(table.factors.size(), true);
  if (config.color_jitter <= 0.0) return;
  for (std::size_t f = 0; f < table.factors.size(); ++f) {
    if (table.factors[f].name.find("color") != std::string::npos) table.evaluable[f] = false;
  }
}

// ---- IDX ----

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

std::string hex_byte(std::uint8_t b) {
  static const char* digits = "0123456789ABCDEF";
  return std::string("0x") + digits[b >> 4] + digits[b & 0xF];
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) {
    throw FormatError("IDX header needs 4 bytes, file has " + std::to_string(bytes.size()) +
                      " (byte offset 0)");
  }
  if (bytes[0] != 0 || bytes[1] != 0) {
    throw FormatError("bad IDX magic: expected two zero bytes at byte offset 0, got " +
                      hex_byte(bytes[0]) + " " + hex_byte(bytes[1]));
  }
  if (bytes[2] != 0x08) {
    throw FormatError("unsupported IDX type code " + hex_byte(bytes[2]) +
                      " at byte offset 2 (only 0x08 unsigned byte)");
  }
  const std::uint8_t rank = bytes[3];
  if (rank == 0) throw FormatError("IDX rank 0 at byte offset 3");

  IdxArray out;
  out.type_code = bytes[2];
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) {
    throw TruncationError("IDX dimension table truncated: need " + std::to_string(header) +
                          " header bytes, file has " + std::to_string(bytes.size()));
  }
  std::size_t total = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    const std::uint32_t dim = read_be32(bytes, 4 + 4 * d);
    out.dims.push_back(dim);
    total *= dim;
  }
  if (bytes.size() - header < total) {
    throw TruncationError("IDX payload truncated: expected " + std::to_string(total) +
                          " bytes after offset " + std::to_string(header) + ", found " +
                          std::to_string(bytes.size() - header));
  }
  if (bytes.size() - header > total) {
    throw FormatError("IDX has trailing bytes at byte offset " + std::to_string(header + total));
  }
  out.payload.assign(bytes.begin() + static_cast<long>(header), bytes.end());
  return out;
}

IdxArray read_idx(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return parse_idx(bytes);
  } catch (const TruncationError& e) {
    throw TruncationError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ImageBatch load_idx_images(const std::filesystem::path& path) {
  const IdxArray arr = read_idx(path);
  if (arr.dims.size() != 3) {
    throw FormatError(path.string() + ": image file must have rank 3, got rank " +
                      std::to_string(arr.dims.size()) + " (byte offset 3)");
  }
  const std::size_t n = arr.dims[0];
  const std::size_t px = static_cast<std::size_t>(arr.dims[1]) * arr.dims[2];
  Tensor pixels(n, px);
  for (std::size_t i = 0; i < arr.payload.size(); ++i) pixels[i] = arr.payload[i] / 255.0;
  return ImageBatch{std::move(pixels), arr.dims[1], arr.dims[2], 1};
}

std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path) {
  IdxArray arr = read_idx(path);
  if (arr.dims.size() != 1) {
    throw FormatError(path.string() + ": label file must have rank 1, got rank " +
                      std::to_string(arr.dims.size()) + " (byte offset 3)");
  }
  return std::move(arr.payload);
}

Dataset colorize_cmnist(const ImageBatch& gray, std::span<const std::uint8_t> labels, double rho,
                        std::uint64_t seed) {
  if (gray.channels != 1) throw DataError("colorize_cmnist expects single-channel images");
  if (labels.size() != gray.count()) {
    throw DataError("colorize_cmnist: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(gray.count()) + " images");
  }
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("cmnist rho must lie in [0, 1]");

  Dataset ds;
  const std::size_t px = gray.height * gray.width;
  ds.images = ImageBatch{Tensor(gray.count(), px * 3), gray.height, gray.width, 3};
  ds.factors.factors = {{"digit", 10}, {"color", 2}};
  ds.factors.evaluable = {true, true};
  for (std::size_t i = 0; i < gray.count(); ++i) {
    if (labels[i] > 9) throw DataError("digit label " + std::to_string(labels[i]) + " out of range");
    Rng rng = make_rng(seed, {0xc0105, i});
    const std::uint32_t preferred = labels[i] < 5 ? 0 : 1;
    const std::uint32_t color = uniform01(rng) < rho ? preferred : 1 - preferred;
    const auto src = gray.pixels.row(i);
    auto dst = ds.images.pixels.row(i);
    for (std::size_t p = 0; p < px; ++p) dst[p * 3 + color] = src[p];
    ds.factors.values.push_back({labels[i], color});
  }
  return ds;
}

// ---- export ----

namespace {

void write_f64_le(std::ofstream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  out.write(bytes, 8);
}

double read_f64_le(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "images.f64", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "images.f64").string());
    for (double v : dataset.images.pixels.data()) write_f64_le(out, v);
  }
  {
    std::ofstream out(dir / "factors.csv");
    out << "index";
    for (const auto& f : dataset.factors.factors) out << "," << f.name;
    out << "\n";
    for (std::size_t i = 0; i < dataset.factors.count(); ++i) {
      out << i;
      for (std::uint32_t v : dataset.factors.values[i]) out << "," << v;
      out << "\n";
    }
  }
  {
    std::ofstream out(dir / "dataset.meta");
    out << "count=" << dataset.images.count() << "\n";
    out << "height=" << dataset.images.height << "\n";
    out << "width=" << dataset.images.width << "\n";
    out << "channels=" << dataset.images.channels << "\n";
    out << "factors=";
    for (std::size_t f = 0; f < dataset.factors.factors.size(); ++f) {
      out << (f ? "," : "") << dataset.factors.factors[f].name << ":"
          << dataset.factors.factors[f].cardinality;
    }
    out << "\nevaluable=";
    for (std::size_t f = 0; f < dataset.factors.factors.size(); ++f) {
      const bool e = f >= dataset.factors.evaluable.size() || dataset.factors.evaluable[f];
      out << (f ? "," : "") << (e ? 1 : 0);
    }
    out << "\n";
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "dataset.meta");
  if (!meta) throw DataError("missing " + (dir / "dataset.meta").string());
  std::size_t count = 0, height = 0, width = 0, channels = 0;
  Dataset ds;
  std::string line;
  auto split = [](const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) parts.push_back(item);
    return parts;
  };
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "count") count = std::stoul(value);
      if (key == "height") height = std::stoul(value);
      if (key == "width") width = std::stoul(value);
      if (key == "channels") channels = std::stoul(value);
      if (key == "factors") {
        for (const auto& part : split(value, ',')) {
          const auto colon = part.find(':');
          if (colon == std::string::npos) throw FormatError("bad factor entry '" + part + "'");
          ds.factors.factors.push_back({part.substr(0, colon), std::stoul(part.substr(colon + 1))});
        }
      }
      if (key == "evaluable") {
        for (const auto& part : split(value, ',')) ds.factors.evaluable.push_back(part == "1");
      }
    } catch (const std::logic_error&) {
      throw FormatError("dataset.meta: bad value for '" + key + "'");
    }
  }
  const std::size_t px = height * width * channels;
  if (px == 0) throw FormatError("dataset.meta: image shape missing");

  std::ifstream img(dir / "images.f64", std::ios::binary);
  if (!img) throw DataError("missing " + (dir / "images.f64").string());
  std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(img), {});
  if (bytes.size() != count * px * 8) {
    throw TruncationError("images.f64 has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(count * px * 8));
  }
  Tensor pixels(count, px);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = read_f64_le(bytes.data() + 8 * i);
  ds.images = ImageBatch{std::move(pixels), height, width, channels};

  std::ifstream csv(dir / "factors.csv");
  if (!csv) throw DataError("missing " + (dir / "factors.csv").string());
  std::getline(csv, line);  // header
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto parts = split(line, ',');
    if (parts.size() != ds.factors.factors.size() + 1) {
      throw FormatError("factors.csv: row '" + line + "' has the wrong number of columns");
    }
    std::vector<std::uint32_t> row;
    for (std::size_t f = 1; f < parts.size(); ++f) {
      row.push_back(static_cast<std::uint32_t>(std::stoul(parts[f])));
    }
    ds.factors.values.push_back(std::move(row));
  }
  if (ds.factors.count() != count) {
    throw FormatError("factors.csv has " + std::to_string(ds.factors.count()) + " rows, expected " +
                      std::to_string(count));
  }
  return ds;
}

}  // namespace ipirm
