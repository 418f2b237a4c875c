#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "lesion/data.hpp"
#include "lesion/ops.hpp"
#include "lesion/rng.hpp"
#include "test_util.hpp"

using namespace lesion;
using namespace lesion::test;
namespace fs = std::filesystem;

namespace {

RawImage random_raw(std::size_t w, std::size_t h, Rng& rng) {
  RawImage img{w, h, std::vector<std::uint8_t>(w * h * 3)};
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

void write_file(const fs::path& p, const std::string& bytes) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << bytes;
}

std::string ppm_bytes(const RawImage& img) {
  std::ostringstream out;
  write_ppm(out, img);
  return out.str();
}

DatasetManifest synthetic_manifest(const std::vector<std::size_t>& sizes) {
  DatasetManifest m;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    m.classes.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < sizes[c]; ++i) {
      m.entries.push_back({"c" + std::to_string(c) + "/img" + std::to_string(i) + ".ppm", static_cast<int>(c), Split::Unassigned});
    }
  }
  return m;
}

// Integer-only half-up rounding of pct% of n.
std::size_t percent_half_up(std::size_t n, std::size_t pct) { return (2 * pct * n + 100) / 200; }

Image image_from(std::size_t h, std::size_t w, std::vector<double> plane) {
  std::vector<double> v;
  for (int c = 0; c < 3; ++c) v.insert(v.end(), plane.begin(), plane.end());
  return Image{Tensor({3, h, w}, v)};
}

Image random_image(std::size_t h, std::size_t w, Rng& rng) { return Image{random_tensor({3, h, w}, rng, 0.0, 1.0)}; }

}  // namespace

TEST(Scan, CountsAndOrdering) {
  TempDir dir("scan");
  Rng rng(1);
  for (const char* c : {"zeta", "alpha", "mid"})
    for (const char* f : {"b.ppm", "a.ppm"}) save_ppm(random_raw(2, 2, rng), (fs::create_directories(dir / c), dir / c / f));
  write_file(dir / "alpha" / "notes.txt", "skip me");
  write_file(dir / "alpha" / ".hidden.ppm", "skip me");
  DatasetManifest m = scan(dir.path());
  EXPECT_EQ(m.classes, (std::vector<std::string>{"alpha", "mid", "zeta"}));
  ASSERT_EQ(m.entries.size(), 6u);
  EXPECT_EQ(m.entries[0].path, "alpha/a.ppm");
  EXPECT_EQ(m.entries[1].path, "alpha/b.ppm");
  EXPECT_EQ(m.entries[2].path, "mid/a.ppm");
  EXPECT_EQ(m.entries[5].label, 2);
  EXPECT_EQ(m.class_counts(), (std::vector<std::size_t>{2, 2, 2}));
  // Same filename in different classes stays distinct through the class directory.
  EXPECT_NE(m.entries[0].path, m.entries[2].path);
  EXPECT_EQ(entry_path(dir / "manifest.json", m, m.entries[0]), (dir / "alpha" / "a.ppm").lexically_normal());
}

TEST(Scan, Errors) {
  TempDir dir("scanerr");
  EXPECT_EQ(error_kind([&] { scan(dir / "missing"); }), ErrorKind::UnreadablePath);
  fs::create_directories(dir / "only");
  Rng rng(2);
  save_ppm(random_raw(1, 1, rng), dir / "only" / "x.ppm");
  EXPECT_EQ(error_kind([&] { scan(dir.path()); }), ErrorKind::EmptyDataset);
  fs::create_directories(dir / "empty");
  try {
    scan(dir.path());
    ADD_FAILURE() << "expected EmptyClass";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyClass);
    EXPECT_NE(std::string(e.what()).find("empty"), std::string::npos);
  }
}

TEST(Balance, CapsAndKeepsSmallClasses) {
  DatasetManifest m = synthetic_manifest({500, 80, 130});
  DatasetManifest b = balance(m, 130, 3);
  EXPECT_EQ(b.class_counts(), (std::vector<std::size_t>{130, 80, 130}));
  EXPECT_EQ(manifest_text(balance(m, 130, 3)), manifest_text(b));
  EXPECT_NE(manifest_text(balance(m, 130, 4)), manifest_text(b));
  EXPECT_EQ(error_kind([&] { balance(m, 0, 1); }), ErrorKind::InvalidConfig);
}

TEST(Balance, RandomManifestsKeepMinOfSizeAndCap) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> sizes(2 + rng.below(5));
    for (auto& s : sizes) s = 1 + rng.below(300);
    const std::size_t cap = 1 + rng.below(200);
    DatasetManifest m = synthetic_manifest(sizes);
    DatasetManifest b = balance(m, cap, rng.next_u64());
    for (std::size_t c = 0; c < sizes.size(); ++c) EXPECT_EQ(b.class_counts()[c], std::min(sizes[c], cap));
    std::set<std::string> original;
    for (const auto& e : m.entries) original.insert(e.path);
    std::set<std::string> kept;
    for (const auto& e : b.entries) {
      EXPECT_TRUE(original.count(e.path));
      EXPECT_TRUE(kept.insert(e.path).second);
    }
    EXPECT_TRUE(std::is_sorted(b.entries.begin(), b.entries.end(),
                               [](const auto& a, const auto& z) { return a.label < z.label; }));
  }
}

TEST(Split, CappedCountsAndRuleArithmetic) {
  EXPECT_EQ(round_half_up(0.15 * 130), 20u);
  const SplitCounts at130 = split_counts(130);
  EXPECT_EQ(at130.train, 90u);
  EXPECT_EQ(at130.val, 20u);
  EXPECT_EQ(at130.test, 20u);
  const SplitCounts at100 = split_counts(100);
  EXPECT_EQ(at100.train, 70u);
  EXPECT_EQ(at100.val, 15u);
  EXPECT_EQ(at100.test, 15u);
  const SplitCounts at10 = split_counts(10);
  EXPECT_EQ(at10.train, 6u);
  EXPECT_EQ(at10.val, 2u);
  EXPECT_EQ(at10.test, 2u);

  DatasetManifest m = split(balance(synthetic_manifest({500, 130, 200}), 130, 1), {}, 1);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(m.class_counts(Split::Train)[c], 90u);
    EXPECT_EQ(m.class_counts(Split::Val)[c], 20u);
    EXPECT_EQ(m.class_counts(Split::Test)[c], 20u);
  }
}

TEST(Split, PartitionPropertyForAllSizes) {
  for (std::size_t n = 3; n <= 500; ++n) {
    const SplitCounts s = split_counts(n);
    EXPECT_EQ(s.test, percent_half_up(n, 15)) << n;
    EXPECT_EQ(s.val, percent_half_up(n, 15)) << n;
    EXPECT_EQ(s.train + s.val + s.test, n);
    EXPECT_GE(s.train, 1u);
  }
  Rng rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::size_t> sizes(2 + rng.below(4));
    for (auto& s : sizes) s = 3 + rng.below(498);
    const std::uint64_t seed = rng.next_u64();
    DatasetManifest m = split(synthetic_manifest(sizes), {}, seed);
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      const SplitCounts expect{sizes[c] - 2 * percent_half_up(sizes[c], 15), percent_half_up(sizes[c], 15),
                               percent_half_up(sizes[c], 15)};
      EXPECT_EQ(m.class_counts(Split::Train)[c], expect.train);
      EXPECT_EQ(m.class_counts(Split::Val)[c], expect.val);
      EXPECT_EQ(m.class_counts(Split::Test)[c], expect.test);
      EXPECT_EQ(m.class_counts(Split::Unassigned)[c], 0u);
    }
    EXPECT_EQ(manifest_text(split(synthetic_manifest(sizes), {}, seed)), manifest_text(m));
  }
}

TEST(Split, Errors) {
  EXPECT_EQ(error_kind([] { split(synthetic_manifest({5, 2}), {}, 0); }), ErrorKind::ClassTooSmall);
  EXPECT_EQ(error_kind([] { split_counts(2); }), ErrorKind::ClassTooSmall);
  EXPECT_EQ(error_kind([] { split(synthetic_manifest({5, 5}), {0.5, 0.2, 0.2}, 0); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(error_kind([] { split(synthetic_manifest({5, 5}), {1.0, 0.0, 0.0}, 0); }), ErrorKind::InvalidConfig);
}

TEST(Split, SeedChangesMembership) {
  DatasetManifest a = split(synthetic_manifest({40, 40}), {}, 1), b = split(synthetic_manifest({40, 40}), {}, 2);
  EXPECT_NE(manifest_text(a), manifest_text(b));
}

TEST(Manifest, JsonRoundTripAndDeterministicPipeline) {
  TempDir dir("manifest");
  Rng rng(7);
  for (const char* c : {"a", "b"}) {
    fs::create_directories(dir / c);
    for (int i = 0; i < 12; ++i) save_ppm(random_raw(2, 2, rng), dir / c / ("i" + std::to_string(i) + ".ppm"));
  }
  auto pipeline = [&] { return split(balance(scan(dir.path()), 10, 9), {}, 9); };
  DatasetManifest m = pipeline();
  EXPECT_EQ(manifest_text(m), manifest_text(pipeline()));
  save_manifest(dir / "out" / "manifest.json", m);
  DatasetManifest loaded = load_manifest(dir / "out" / "manifest.json");
  EXPECT_EQ(manifest_text(loaded), manifest_text(m));
  nlohmann::json j = nlohmann::json::parse(manifest_text(m));
  EXPECT_EQ(j.dump(2) + "\n", manifest_text(m));
  EXPECT_EQ(error_kind([&] { load_manifest(dir / "nope.json"); }), ErrorKind::FileNotFound);
  write_file(dir / "bad.json", "{\"classes\": [\"a\"], \"entries\": [{\"path\": \"x\", \"class\": 3}]}");
  EXPECT_EQ(error_kind([&] { load_manifest(dir / "bad.json"); }), ErrorKind::OutOfRangeClass);
}

TEST(Ppm, RoundTripAndMinimalCase) {
  TempDir dir("ppm");
  Rng rng(8);
  RawImage img = random_raw(5, 7, rng);
  save_ppm(img, dir / "x.ppm");
  EXPECT_EQ(load_ppm(dir / "x.ppm"), img);

  write_file(dir / "white.ppm", std::string("P6\n1 1\n255\n") + "\xff\xff\xff");
  RawImage white = load_ppm(dir / "white.ppm");
  expect_values(raw_tensor(white), {255, 255, 255});
}

TEST(Ppm, HundredRandomImagesBitExact) {
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    RawImage img = random_raw(1 + rng.below(40), 1 + rng.below(40), rng);
    const std::string first = ppm_bytes(img);
    std::istringstream in(first);
    RawImage back = read_ppm(in);
    EXPECT_EQ(back, img);
    EXPECT_EQ(ppm_bytes(back), first);
  }
}

TEST(Ppm, HeaderCommentsAndWhitespace) {
  std::istringstream in(std::string("P6 # comment\n# another\n 2\t1\r\n255\n") + std::string(6, '\x10'));
  RawImage img = read_ppm(in);
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 1u);
  EXPECT_EQ(img.rgb, std::vector<std::uint8_t>(6, 0x10));
}

TEST(Ppm, Errors) {
  auto kind = [](const std::string& bytes) {
    return error_kind([&] {
      std::istringstream in(bytes);
      read_ppm(in);
    });
  };
  EXPECT_EQ(kind("P3\n1 1\n255\n255 255 255\n"), ErrorKind::UnsupportedFormat);
  EXPECT_EQ(kind("P5\n1 1\n255\n\x01"), ErrorKind::UnsupportedFormat);
  EXPECT_EQ(kind("GIF89a"), ErrorKind::MalformedHeader);
  EXPECT_EQ(kind("P6\nx 1\n255\n"), ErrorKind::MalformedHeader);
  EXPECT_EQ(kind("P6\n0 1\n255\n"), ErrorKind::MalformedHeader);
  EXPECT_EQ(kind("P6\n2 2\n"), ErrorKind::MalformedHeader);
  EXPECT_EQ(kind("P6\n1 1\n65535\n\x01\x02\x03\x04\x05\x06"), ErrorKind::UnsupportedMaxval);
  EXPECT_EQ(kind("P6\n2 2\n255\n\x01\x02\x03"), ErrorKind::TruncatedPayload);
  EXPECT_EQ(error_kind([] { load_ppm("/nonexistent/x.ppm"); }), ErrorKind::FileNotFound);
}

TEST(Normalize, Endpoints) {
  RawImage img{3, 1, {0, 0, 0, 255, 255, 255, 51, 51, 51}};
  Image n = normalize(img);
  ASSERT_EQ(n.pixels.shape(), (Shape{3, 1, 3}));
  EXPECT_EQ(n.pixels[0], 0.0);
  EXPECT_EQ(n.pixels[1], 1.0);
  EXPECT_DOUBLE_EQ(n.pixels[2], 0.2);
  EXPECT_EQ(to_raw(n), img);
}

TEST(Resize, Examples) {
  Rng rng(10);
  Image img = random_image(5, 6, rng);
  EXPECT_LE(max_abs_diff(resize(img, 5, 6).pixels, img.pixels), 1e-12);

  Image flat = image_from(3, 4, std::vector<double>(12, 0.375));
  Image big = resize(flat, 7, 2);
  for (std::size_t i = 0; i < big.pixels.size(); ++i) EXPECT_NEAR(big.pixels[i], 0.375, 1e-15);

  Image checker = image_from(2, 2, {0, 1, 1, 0});
  Image r = resize(checker, 3, 3);
  EXPECT_NEAR(r.pixels[4], 0.5, 1e-15);
  EXPECT_EQ(r.pixels[0], 0.0);
  EXPECT_EQ(r.pixels[2], 1.0);
  EXPECT_NEAR(r.pixels[1], 0.5, 1e-15);

  Image one = resize(checker, 1, 1);
  EXPECT_NEAR(one.pixels[0], 0.5, 1e-15);
  EXPECT_EQ(error_kind([&] { resize(checker, 0, 3); }), ErrorKind::InvalidConfig);
}

TEST(Augment, ZeroParamsAreIdentity) {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    Image img = random_image(1 + rng.below(12), 1 + rng.below(12), rng);
    Image out = augment(img, AugmentParams::none(), rng);
    EXPECT_LE(max_abs_diff(out.pixels, img.pixels), 1e-12);
  }
}

TEST(Augment, FlipsAreInvolutions) {
  Rng rng(12);
  for (int i = 0; i < 20; ++i) {
    Image img = random_image(1 + rng.below(9), 1 + rng.below(9), rng);
    AugmentDraw h;
    h.hflip = true;
    AugmentDraw v;
    v.vflip = true;
    EXPECT_LE(max_abs_diff(apply_augment(apply_augment(img, h), h).pixels, img.pixels), 1e-12);
    EXPECT_LE(max_abs_diff(apply_augment(apply_augment(img, v), v).pixels, img.pixels), 1e-12);
    Image flipped = apply_augment(img, h);
    const std::size_t w = img.width();
    EXPECT_EQ(flipped.pixels[0], img.pixels[w - 1]);
  }
}

TEST(Augment, RightAngleRotationsAreExact) {
  Image img = image_from(2, 2, {1, 2, 3, 4});  // [a,b;c,d]
  AugmentDraw r90;
  r90.rotation_degrees = 90;
  expect_values(reshape(apply_augment(img, r90).pixels, {12}), {2, 4, 1, 3, 2, 4, 1, 3, 2, 4, 1, 3}, 0.0);
  AugmentDraw r180;
  r180.rotation_degrees = 180;
  expect_values(reshape(apply_augment(img, r180).pixels, {12}), {4, 3, 2, 1, 4, 3, 2, 1, 4, 3, 2, 1}, 0.0);

  Rng rng(13);
  for (int i = 0; i < 10; ++i) {
    const std::size_t n = 1 + rng.below(9);
    Image sq = random_image(n, n, rng);
    Image x = sq;
    for (int k = 0; k < 4; ++k) x = apply_augment(x, r90);
    EXPECT_EQ(max_abs_diff(x.pixels, sq.pixels), 0.0);
    AugmentDraw r270;
    r270.rotation_degrees = -90;
    EXPECT_EQ(max_abs_diff(apply_augment(apply_augment(sq, r90), r270).pixels, sq.pixels), 0.0);
  }
}

TEST(Augment, ShiftMovesContentWithEdgeClamp) {
  Image img = image_from(1, 4, {1, 2, 3, 4});
  AugmentDraw d;
  d.shift_x_frac = 0.25;  // one pixel to the right
  expect_values(gather(apply_augment(img, d).pixels, {0, 1, 2, 3}, {4}), {1, 1, 2, 3});
}

TEST(Augment, ZoomAboutCenter) {
  Image img = image_from(1, 5, {0, 1, 2, 3, 4});
  AugmentDraw d;
  d.zoom = 2.0;
  expect_values(gather(apply_augment(img, d).pixels, {0, 1, 2, 3, 4}, {5}), {1, 1.5, 2, 2.5, 3});
}

TEST(Augment, DrawsRespectRangesAndSeeds) {
  AugmentParams p;
  Rng a(14), b(14);
  for (int i = 0; i < 200; ++i) {
    AugmentDraw d = draw_augment(p, a);
    EXPECT_LE(std::abs(d.rotation_degrees), 20.0);
    EXPECT_LE(std::abs(d.shift_x_frac), 0.1);
    EXPECT_LE(std::abs(d.shift_y_frac), 0.1);
    EXPECT_GE(d.zoom, 0.9);
    EXPECT_LE(d.zoom, 1.1);
    EXPECT_LE(std::abs(d.shear_degrees), 10.0);
    AugmentDraw e = draw_augment(p, b);
    EXPECT_EQ(d.rotation_degrees, e.rotation_degrees);
    EXPECT_EQ(d.hflip, e.hflip);
  }
  Rng rng(15);
  Image img = random_image(8, 8, rng);
  Image out = augment(img, p, rng);
  EXPECT_EQ(out.pixels.shape(), img.pixels.shape());
  for (double v : out.pixels.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  AugmentParams bad;
  bad.width_shift_frac = 1.0;
  EXPECT_EQ(error_kind([&] { bad.validate(); }), ErrorKind::InvalidConfig);
  bad = AugmentParams{};
  bad.zoom_min = 1.2;
  EXPECT_EQ(error_kind([&] { bad.validate(); }), ErrorKind::InvalidConfig);
}

TEST(Synth, CountsDeterminismAndSeparability) {
  TempDir a("synth_a"), b("synth_b");
  SynthResult ra = synth_dataset(4, 16, 32, 7, a.path());
  SynthResult rb = synth_dataset(4, 16, 32, 7, b.path());
  EXPECT_EQ(ra.manifest.entries.size(), 64u);
  EXPECT_EQ(ra.manifest.class_counts(), (std::vector<std::size_t>(4, 16)));
  std::size_t files = 0;
  for (const auto& item : fs::recursive_directory_iterator(a.path())) files += item.path().extension() == ".ppm";
  EXPECT_EQ(files, 64u);
  EXPECT_GT(ra.centroid_accuracy, 0.9);
  for (const auto& e : ra.manifest.entries) {
    std::ifstream fa(a / e.path, std::ios::binary), fb(b / e.path, std::ios::binary);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    ASSERT_FALSE(sa.str().empty());
    EXPECT_EQ(sa.str(), sb.str()) << e.path;
  }
  EXPECT_EQ(manifest_text(load_manifest(a / "manifest.json")), manifest_text(rb.manifest));
  EXPECT_EQ(scan(a.path()).entries.size(), 64u);
}

TEST(Synth, SeparableAtOtherSizes) {
  TempDir dir("synth_sep");
  EXPECT_GT(synth_dataset(10, 8, 16, 3, dir / "k10").centroid_accuracy, 0.9);
  EXPECT_GT(synth_dataset(2, 3, 8, 4, dir / "k2").centroid_accuracy, 0.9);
}

TEST(Synth, Guards) {
  TempDir dir("synth_guard");
  EXPECT_EQ(error_kind([&] { synth_dataset(1, 16, 32, 0, dir.path()); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(error_kind([&] { synth_dataset(3, 2, 32, 0, dir.path()); }), ErrorKind::InvalidConfig);
}

TEST(LoadSplit, ResizesAndNormalizes) {
  TempDir dir("load");
  synth_dataset(3, 10, 12, 5, dir.path());
  const fs::path mf = dir / "split.json";
  DatasetManifest m = split(load_manifest(dir / "manifest.json"), {}, 5);
  save_manifest(mf, m);
  LabeledImages train = load_split(mf, m, Split::Train, 8);
  EXPECT_EQ(train.images.size(), 3u * 6u);
  EXPECT_EQ(train.labels.size(), train.images.size());
  for (const auto& img : train.images) {
    EXPECT_EQ(img.pixels.shape(), (Shape{3, 8, 8}));
    for (double v : img.pixels.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(load_split(mf, m, Split::Test, 12).images.size(), 3u * 2u);
}
