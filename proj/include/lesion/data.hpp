#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "lesion/tensor.hpp"

namespace lesion {

class Rng;

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

enum class Split { Train, Val, Test, Unassigned };

std::string_view to_string(Split s);
Split parse_split(std::string_view name);

struct ManifestEntry {
  std::string path;  // relative to the manifest root, "<class>/<file>"
  int label = 0;
  Split split = Split::Unassigned;
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;
  // Image directory. Relative roots resolve against the manifest file's
  // directory, so a manifest and its data can move together.
  std::string root = ".";

  std::size_t num_classes() const { return classes.size(); }
  std::vector<std::size_t> class_counts() const;
  std::vector<std::size_t> class_counts(Split s) const;
};

/// Canonical JSON: {classes, entries:[{class, path, split}], root, seed}, sorted keys.
nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);
std::string manifest_text(const DatasetManifest& m);
void save_manifest(const std::filesystem::path& file, const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& file);
/// Absolute-or-working-directory path of an entry for a manifest loaded from `manifest_file`.
std::filesystem::path entry_path(const std::filesystem::path& manifest_file, const DatasetManifest& m,
                                 const ManifestEntry& e);

/// Directory-per-class layout: root/<class>/<file>.ppm. Classes sorted by
/// name; entries sorted by (class, filename). Non-.ppm and hidden files are skipped.
DatasetManifest scan(const std::filesystem::path& root);

/// Keeps min(count, cap) entries per class, picked by a seeded shuffle of the
/// class's sorted entries. Output stays in (class, filename) order.
DatasetManifest balance(const DatasetManifest& m, std::size_t cap = 130, std::uint64_t seed = 0);

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

/// Half-up rounding used by the split rule; tolerant of representation error
/// (0.15 * 130 lands on 19.5, not 19.4999...).
std::size_t round_half_up(double x);

struct SplitCounts {
  std::size_t train, val, test;
};
SplitCounts split_counts(std::size_t n, const SplitFractions& f = {});

/// Per class of size n: test = round_half_up(test*n), val = round_half_up(val*n),
/// the rest train. Membership is a seeded per-class shuffle.
DatasetManifest split(const DatasetManifest& m, const SplitFractions& f = {}, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

/// Decoded 8-bit RGB, interleaved row-major exactly as stored in a P6 file.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  bool operator==(const RawImage&) const = default;
};

/// Normalized image: pixels [3,H,W] with values in [0,1].
struct Image {
  Tensor pixels;

  std::size_t height() const { return pixels.dim(1); }
  std::size_t width() const { return pixels.dim(2); }
};

RawImage read_ppm(std::istream& in);
void write_ppm(std::ostream& out, const RawImage& image);
RawImage load_ppm(const std::filesystem::path& path);
void save_ppm(const RawImage& image, const std::filesystem::path& path);

/// Raw 0..255 values as a [3,H,W] tensor.
Tensor raw_tensor(const RawImage& image);
/// v / 255.
Image normalize(const RawImage& image);
/// Quantizes back to 8 bits (round to nearest, clamped).
RawImage to_raw(const Image& image);

/// Bilinear, corner-aligned: output pixel i samples input i*(in-1)/(out-1); a
/// 1-pixel target samples the center.
Image resize(const Image& image, std::size_t height, std::size_t width);

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentParams {
  double rotation_max_degrees = 20.0;
  double width_shift_frac = 0.1;
  double height_shift_frac = 0.1;
  double zoom_min = 0.9;
  double zoom_max = 1.1;
  double shear_max_degrees = 10.0;
  bool hflip = true;
  bool vflip = true;

  static AugmentParams none();
  void validate() const;
};

/// One concrete transform. Positive rotation turns the content
/// counter-clockwise on screen; zoom > 1 magnifies.
struct AugmentDraw {
  double rotation_degrees = 0.0;
  double shift_x_frac = 0.0;
  double shift_y_frac = 0.0;
  double zoom = 1.0;
  double shear_degrees = 0.0;
  bool hflip = false;
  bool vflip = false;
};

AugmentDraw draw_augment(const AugmentParams& p, Rng& rng);

/// p_out = R * Sh * Z * (p_in + t) about the image center, sampled by inverse
/// mapping with bilinear interpolation and clamp-to-edge; flips afterwards.
Image apply_augment(const Image& image, const AugmentDraw& d);
Image augment(const Image& image, const AugmentParams& p, Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic data and loading
// ---------------------------------------------------------------------------

struct SynthResult {
  DatasetManifest manifest;
  double centroid_accuracy = 0.0;  // nearest-centroid accuracy on a fresh draw
};

/// K classes of n images each, written as out/<class>/<class>_<i>.ppm plus
/// out/manifest.json. Each class has its own hue and stripe frequency; phase,
/// orientation jitter and pixel noise vary per sample.
SynthResult synth_dataset(std::size_t classes, std::size_t per_class, std::size_t image_size, std::uint64_t seed,
                          const std::filesystem::path& out);

/// One synthetic sample, also used for the separability check.
RawImage synth_image(std::size_t label, std::size_t classes, std::size_t image_size, Rng& rng);

struct LabeledImages {
  std::vector<Image> images;
  std::vector<int> labels;
};

/// Loads, normalizes and resizes every entry of one split.
LabeledImages load_split(const std::filesystem::path& manifest_file, const DatasetManifest& m, Split s,
                         std::size_t image_size);

}  // namespace lesion
