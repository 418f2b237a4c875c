#include "lesion/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include "lesion/error.hpp"
#include "lesion/rng.hpp"

namespace lesion {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kBalanceTag = 0xba1a;
constexpr std::uint64_t kSplitTag = 0x5b117;
constexpr std::uint64_t kSynthTag = 0x5e7;
constexpr std::uint64_t kSynthCheckTag = 0xc4ec;

std::vector<std::vector<std::size_t>> indices_by_class(const DatasetManifest& m) {
  std::vector<std::vector<std::size_t>> out(m.classes.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) out[static_cast<std::size_t>(m.entries[i].label)].push_back(i);
  return out;
}

bool hidden(const fs::path& p) { return !p.filename().empty() && p.filename().string().front() == '.'; }

bool is_ppm(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ppm";
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  if (name == "unassigned") return Split::Unassigned;
  fail(ErrorKind::InvalidConfig, "unknown split '" + std::string(name) + "' (expected train|val|test)");
}

std::vector<std::size_t> DatasetManifest::class_counts() const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const auto& e : entries) ++counts[static_cast<std::size_t>(e.label)];
  return counts;
}

std::vector<std::size_t> DatasetManifest::class_counts(Split s) const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const auto& e : entries) {
    if (e.split == s) ++counts[static_cast<std::size_t>(e.label)];
  }
  return counts;
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"path", e.path}, {"class", e.label}, {"split", std::string(to_string(e.split))}});
  }
  return {{"classes", m.classes}, {"entries", entries}, {"root", m.root}, {"seed", m.seed}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.classes = j.at("classes").get<std::vector<std::string>>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.root = j.value("root", std::string("."));
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry{e.at("path").get<std::string>(), e.at("class").get<int>(),
                          parse_split(e.value("split", std::string("unassigned")))};
      if (entry.label < 0 || static_cast<std::size_t>(entry.label) >= m.classes.size()) {
        fail(ErrorKind::OutOfRangeClass, "manifest entry " + entry.path + " has class " + std::to_string(entry.label));
      }
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::MalformedHeader, std::string("bad manifest: ") + e.what());
  }
  return m;
}

std::string manifest_text(const DatasetManifest& m) { return to_json(m).dump(2) + "\n"; }

void save_manifest(const fs::path& file, const DatasetManifest& m) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot write " + file.string());
  out << manifest_text(m);
  if (!out) fail(ErrorKind::IoError, "write failed: " + file.string());
}

DatasetManifest load_manifest(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(ErrorKind::FileNotFound, "manifest not found: " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::MalformedHeader, "manifest " + file.string() + " is not JSON: " + e.what());
  }
  return manifest_from_json(j);
}

fs::path entry_path(const fs::path& manifest_file, const DatasetManifest& m, const ManifestEntry& e) {
  const fs::path root(m.root);
  const fs::path base = root.is_absolute() ? root : manifest_file.parent_path() / root;
  return (base / e.path).lexically_normal();
}

DatasetManifest scan(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) fail(ErrorKind::UnreadablePath, "not a readable directory: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& item : fs::directory_iterator(root, ec)) {
    if (item.is_directory() && !hidden(item.path())) class_dirs.push_back(item.path());
  }
  if (ec) fail(ErrorKind::UnreadablePath, "cannot list " + root.string() + ": " + ec.message());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.size() < 2) {
    fail(ErrorKind::EmptyDataset, root.string() + " has " + std::to_string(class_dirs.size()) + " class directories, need >= 2");
  }

  DatasetManifest m;
  m.root = root.string();
  for (const fs::path& dir : class_dirs) {
    const std::string name = dir.filename().string();
    std::vector<std::string> files;
    for (const auto& item : fs::directory_iterator(dir, ec)) {
      if (item.is_regular_file() && !hidden(item.path()) && is_ppm(item.path())) files.push_back(item.path().filename().string());
    }
    if (ec) fail(ErrorKind::UnreadablePath, "cannot list " + dir.string() + ": " + ec.message());
    if (files.empty()) fail(ErrorKind::EmptyClass, "class '" + name + "' has no .ppm images");
    std::sort(files.begin(), files.end());
    const int label = static_cast<int>(m.classes.size());
    m.classes.push_back(name);
    for (const auto& f : files) m.entries.push_back({name + "/" + f, label, Split::Unassigned});
  }
  return m;
}

DatasetManifest balance(const DatasetManifest& m, std::size_t cap, std::uint64_t seed) {
  if (cap < 1) fail(ErrorKind::InvalidConfig, "cap must be >= 1");
  std::vector<bool> keep(m.entries.size(), false);
  const auto groups = indices_by_class(m);
  for (std::size_t c = 0; c < groups.size(); ++c) {
    std::vector<std::size_t> order = groups[c];
    Rng rng = Rng::derive(seed, {kBalanceTag, c});
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t i = 0; i < std::min(cap, order.size()); ++i) keep[order[i]] = true;
  }
  DatasetManifest out = m;
  out.seed = seed;
  out.entries.clear();
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (keep[i]) out.entries.push_back(m.entries[i]);
  }
  return out;
}

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9)); }

SplitCounts split_counts(std::size_t n, const SplitFractions& f) {
  const auto nd = static_cast<double>(n);
  const std::size_t test = round_half_up(f.test * nd), val = round_half_up(f.val * nd);
  if (n < 3 || test + val >= n) {
    fail(ErrorKind::ClassTooSmall, "a class of " + std::to_string(n) + " images cannot be split (need >= 3 and a non-empty train part)");
  }
  return {n - test - val, val, test};
}

DatasetManifest split(const DatasetManifest& m, const SplitFractions& f, std::uint64_t seed) {
  if (!(f.train > 0 && f.val > 0 && f.test > 0) || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    fail(ErrorKind::InvalidConfig, "split fractions must be positive and sum to 1");
  }
  DatasetManifest out = m;
  out.seed = seed;
  const auto groups = indices_by_class(m);
  for (std::size_t c = 0; c < groups.size(); ++c) {
    SplitCounts counts{};
    try {
      counts = split_counts(groups[c].size(), f);
    } catch (const Error& e) {
      fail(ErrorKind::ClassTooSmall, "class '" + m.classes[c] + "': " + e.what());
    }
    std::vector<std::size_t> order = groups[c];
    Rng rng = Rng::derive(seed, {kSplitTag, c});
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t i = 0; i < order.size(); ++i) {
      out.entries[order[i]].split = i < counts.train ? Split::Train : i < counts.train + counts.val ? Split::Val : Split::Test;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PPM
// ---------------------------------------------------------------------------

namespace {

// Next header integer, skipping whitespace and '#' comments.
std::size_t read_header_number(std::istream& in, const char* what) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n' && c != '\r') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF) fail(ErrorKind::MalformedHeader, std::string("PPM header ends before ") + what);
  if (!std::isdigit(c)) fail(ErrorKind::MalformedHeader, std::string("PPM ") + what + " is not a number");
  std::size_t value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + static_cast<std::size_t>(c - '0');
    if (value > (std::size_t{1} << 31)) fail(ErrorKind::MalformedHeader, std::string("PPM ") + what + " is too large");
    c = in.get();
  }
  if (c == EOF) fail(ErrorKind::MalformedHeader, std::string("PPM header ends after ") + what);
  if (!std::isspace(c)) fail(ErrorKind::MalformedHeader, std::string("PPM ") + what + " is not followed by whitespace");
  return value;
}

}  // namespace

RawImage read_ppm(std::istream& in) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (in.gcount() < 2) fail(ErrorKind::MalformedHeader, "file too short for a PPM magic number");
  if (magic[0] != 'P' || magic[1] != '6') {
    if (magic[0] == 'P' && magic[1] >= '1' && magic[1] <= '7') {
      fail(ErrorKind::UnsupportedFormat, std::string("netpbm type P") + magic[1] + " is not supported, only binary P6");
    }
    fail(ErrorKind::MalformedHeader, "missing P6 magic number");
  }
  const int sep = in.peek();
  if (sep == EOF || !(std::isspace(sep) || sep == '#')) fail(ErrorKind::MalformedHeader, "P6 magic not followed by whitespace");

  RawImage img;
  img.width = read_header_number(in, "width");
  img.height = read_header_number(in, "height");
  const std::size_t maxval = read_header_number(in, "maxval");
  if (img.width == 0 || img.height == 0) fail(ErrorKind::MalformedHeader, "PPM dimensions must be positive");
  if (maxval == 0 || maxval > 65535) fail(ErrorKind::MalformedHeader, "PPM maxval " + std::to_string(maxval) + " out of range");
  if (maxval != 255) fail(ErrorKind::UnsupportedMaxval, "PPM maxval " + std::to_string(maxval) + " (only 255 is supported)");
  if (img.width * img.height > (std::size_t{1} << 28)) fail(ErrorKind::MalformedHeader, "PPM dimensions are implausibly large");

  img.rgb.resize(img.width * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.rgb.size()) {
    fail(ErrorKind::TruncatedPayload, "PPM payload has " + std::to_string(in.gcount()) + " of " +
                                          std::to_string(img.rgb.size()) + " bytes");
  }
  return img;
}

void write_ppm(std::ostream& out, const RawImage& image) {
  if (image.width == 0 || image.height == 0 || image.rgb.size() != image.width * image.height * 3) {
    fail(ErrorKind::ShapeMismatch, "RawImage buffer does not match its dimensions");
  }
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
}

RawImage load_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::FileNotFound, "image not found: " + path.string());
  try {
    return read_ppm(in);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

void save_ppm(const RawImage& image, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  write_ppm(out, image);
  if (!out) fail(ErrorKind::IoError, "write failed: " + path.string());
}

Tensor raw_tensor(const RawImage& image) {
  const std::size_t hw = image.width * image.height;
  std::vector<double> v(3 * hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) v[c * hw + p] = image.rgb[p * 3 + c];
  return Tensor({3, image.height, image.width}, std::move(v));
}

Image normalize(const RawImage& image) {
  Tensor raw = raw_tensor(image);
  std::vector<double> v = raw.to_vector();
  for (double& x : v) x /= 255.0;
  return Image{Tensor(raw.shape(), std::move(v))};
}

RawImage to_raw(const Image& image) {
  RawImage out{image.width(), image.height(), {}};
  const std::size_t hw = out.width * out.height;
  out.rgb.resize(3 * hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image.pixels[c * hw + p], 0.0, 1.0);
      out.rgb[p * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Resize and augmentation
// ---------------------------------------------------------------------------

namespace {

// Bilinear sample at continuous (y, x), clamped to the edge.
double sample(std::span<const double> plane, std::size_t h, std::size_t w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  const double top = plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx;
  const double bottom = plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx;
  return top * (1 - fy) + bottom * fy;
}

double corner_aligned(std::size_t i, std::size_t in, std::size_t out) {
  if (out == 1) return static_cast<double>(in - 1) / 2.0;
  return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
}

// Exact sine/cosine at multiples of 90 degrees.
std::pair<double, double> cos_sin_degrees(double degrees) {
  const double quarter = degrees / 90.0;
  if (quarter == std::round(quarter)) {
    static constexpr double kCos[4] = {1, 0, -1, 0}, kSin[4] = {0, 1, 0, -1};
    const auto k = static_cast<std::size_t>(((static_cast<long long>(quarter) % 4) + 4) % 4);
    return {kCos[k], kSin[k]};
  }
  const double r = degrees * std::numbers::pi / 180.0;
  return {std::cos(r), std::sin(r)};
}

}  // namespace

Image resize(const Image& image, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) fail(ErrorKind::InvalidConfig, "resize target must be at least 1x1");
  const std::size_t h = image.height(), w = image.width();
  if (h == height && w == width) return Image{image.pixels.detach()};
  std::vector<double> out(3 * height * width);
  const auto data = image.pixels.data();
  for (std::size_t c = 0; c < 3; ++c) {
    const auto plane = data.subspan(c * h * w, h * w);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        out[(c * height + y) * width + x] = sample(plane, h, w, corner_aligned(y, h, height), corner_aligned(x, w, width));
  }
  return Image{Tensor({3, height, width}, std::move(out))};
}

AugmentParams AugmentParams::none() {
  return AugmentParams{0.0, 0.0, 0.0, 1.0, 1.0, 0.0, false, false};
}

void AugmentParams::validate() const {
  if (!(rotation_max_degrees >= 0 && shear_max_degrees >= 0)) fail(ErrorKind::InvalidConfig, "augment angles must be >= 0");
  if (!(width_shift_frac >= 0 && width_shift_frac < 1 && height_shift_frac >= 0 && height_shift_frac < 1)) {
    fail(ErrorKind::InvalidConfig, "augment shift fractions must be in [0,1)");
  }
  if (!(zoom_min > 0 && zoom_min <= zoom_max)) fail(ErrorKind::InvalidConfig, "augment zoom range needs 0 < min <= max");
  if (shear_max_degrees >= 90) fail(ErrorKind::InvalidConfig, "augment shear must be below 90 degrees");
}

AugmentDraw draw_augment(const AugmentParams& p, Rng& rng) {
  p.validate();
  AugmentDraw d;
  d.rotation_degrees = rng.uniform(-p.rotation_max_degrees, p.rotation_max_degrees);
  d.shift_x_frac = rng.uniform(-p.width_shift_frac, p.width_shift_frac);
  d.shift_y_frac = rng.uniform(-p.height_shift_frac, p.height_shift_frac);
  d.zoom = rng.uniform(p.zoom_min, p.zoom_max);
  d.shear_degrees = rng.uniform(-p.shear_max_degrees, p.shear_max_degrees);
  d.hflip = p.hflip && rng.bernoulli(0.5);
  d.vflip = p.vflip && rng.bernoulli(0.5);
  return d;
}

Image apply_augment(const Image& image, const AugmentDraw& d) {
  const std::size_t h = image.height(), w = image.width();
  const double cy = static_cast<double>(h - 1) / 2.0, cx = static_cast<double>(w - 1) / 2.0;
  const auto [c, s] = cos_sin_degrees(d.rotation_degrees);
  const double shear = d.shear_degrees == 0.0 ? 0.0 : std::tan(d.shear_degrees * std::numbers::pi / 180.0);
  const double tx = d.shift_x_frac * static_cast<double>(w), ty = d.shift_y_frac * static_cast<double>(h);

  std::vector<double> out(3 * h * w);
  const auto data = image.pixels.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      // Invert R, then Sh, then Z, then the shift.
      const double ox = static_cast<double>(x) - cx, oy = static_cast<double>(y) - cy;
      double sx = c * ox - s * oy, sy = s * ox + c * oy;
      sx -= shear * sy;
      sx = sx / d.zoom - tx;
      sy = sy / d.zoom - ty;
      const std::size_t dy = d.vflip ? h - 1 - y : y, dx = d.hflip ? w - 1 - x : x;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        out[(ch * h + dy) * w + dx] = sample(data.subspan(ch * h * w, h * w), h, w, sy + cy, sx + cx);
      }
    }
  return Image{Tensor({3, h, w}, std::move(out))};
}

Image augment(const Image& image, const AugmentParams& p, Rng& rng) { return apply_augment(image, draw_augment(p, rng)); }

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

namespace {

std::array<double, 3> hue_rgb(double hue, double sat, double val) {
  const double h6 = std::fmod(hue, 1.0) * 6.0;
  const double f = h6 - std::floor(h6);
  const double p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
  switch (static_cast<int>(std::floor(h6)) % 6) {
    case 0: return {val, t, p};
    case 1: return {q, val, p};
    case 2: return {p, val, t};
    case 3: return {p, q, val};
    case 4: return {t, p, val};
    default: return {val, p, q};
  }
}

std::string class_name(std::size_t k, std::size_t classes) {
  const std::size_t digits = std::to_string(classes - 1).size() < 2 ? 2 : std::to_string(classes - 1).size();
  std::string n = std::to_string(k);
  return "class_" + std::string(digits - n.size(), '0') + n;
}

std::vector<double> pixels_of(const RawImage& img) { return std::vector<double>(img.rgb.begin(), img.rgb.end()); }

}  // namespace

RawImage synth_image(std::size_t label, std::size_t classes, std::size_t size, Rng& rng) {
  const auto base = hue_rgb(static_cast<double>(label) / static_cast<double>(classes), 0.75, 0.9);
  const double freq = 1.0 + static_cast<double>(label % 5);
  const double angle = std::numbers::pi * static_cast<double>(label) / static_cast<double>(classes) + rng.uniform(-0.2, 0.2);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  RawImage img{size, size, std::vector<std::uint8_t>(size * size * 3)};
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (static_cast<double>(x) * ca + static_cast<double>(y) * sa) / static_cast<double>(size);
      const double stripe = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq * u + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(base[c] * (0.55 + 0.45 * stripe) + 0.06 * rng.normal(), 0.0, 1.0);
        img.rgb[(y * size + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  return img;
}

SynthResult synth_dataset(std::size_t classes, std::size_t per_class, std::size_t image_size, std::uint64_t seed,
                          const fs::path& out) {
  if (classes < 2) fail(ErrorKind::InvalidConfig, "synthetic dataset needs >= 2 classes");
  if (per_class < 3) fail(ErrorKind::InvalidConfig, "synthetic dataset needs >= 3 images per class");
  if (image_size < 1) fail(ErrorKind::InvalidConfig, "image size must be >= 1");

  SynthResult result;
  DatasetManifest& m = result.manifest;
  m.seed = seed;
  m.root = ".";
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create " + out.string() + ": " + ec.message());

  std::vector<std::vector<double>> centroids(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    const std::string name = class_name(k, classes);
    m.classes.push_back(name);
    fs::create_directories(out / name, ec);
    if (ec) fail(ErrorKind::IoError, "cannot create " + (out / name).string() + ": " + ec.message());
    Rng rng = Rng::derive(seed, {kSynthTag, k});
    centroids[k].assign(image_size * image_size * 3, 0.0);
    for (std::size_t i = 0; i < per_class; ++i) {
      RawImage img = synth_image(k, classes, image_size, rng);
      std::string index = std::to_string(i);
      index = std::string(index.size() < 3 ? 3 - index.size() : 0, '0') + index;
      const std::string rel = name + "/" + name + "_" + index + ".ppm";
      save_ppm(img, out / rel);
      m.entries.push_back({rel, static_cast<int>(k), Split::Unassigned});
      for (std::size_t p = 0; p < img.rgb.size(); ++p) centroids[k][p] += img.rgb[p] / static_cast<double>(per_class);
    }
  }

  std::size_t correct = 0, total = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    Rng rng = Rng::derive(seed, {kSynthCheckTag, k});
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto v = pixels_of(synth_image(k, classes, image_size, rng));
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < classes; ++j) {
        double d = 0.0;
        for (std::size_t p = 0; p < v.size(); ++p) d += (v[p] - centroids[j][p]) * (v[p] - centroids[j][p]);
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      correct += best == k;
      ++total;
    }
  }
  result.centroid_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  save_manifest(out / "manifest.json", m);
  return result;
}

LabeledImages load_split(const fs::path& manifest_file, const DatasetManifest& m, Split s, std::size_t image_size) {
  LabeledImages out;
  for (const auto& e : m.entries) {
    if (e.split != s) continue;
    Image img = normalize(load_ppm(entry_path(manifest_file, m, e)));
    if (img.height() != image_size || img.width() != image_size) img = resize(img, image_size, image_size);
    out.images.push_back(std::move(img));
    out.labels.push_back(e.label);
  }
  return out;
}

}  // namespace lesion
