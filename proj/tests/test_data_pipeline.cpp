#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "mos/data_pipeline.hpp"
#include "mos/sar_denoise.hpp"

using namespace mos;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("mos_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("manifest parsing") {
  SUBCASE("three rows") {
    const auto m = parse_manifest("a.png,1,optical\nb.png,1,sar\nc.png,2,optical\n");
    REQUIRE(m.entries.size() == 3);
    CHECK(m.entries[1].path == "b.png");
    CHECK(m.entries[1].modality == Modality::Sar);
    CHECK(m.entries[2].identity == 2);
  }
  SUBCASE("modality is case-insensitive") {
    const auto m = parse_manifest("a.png,3,SAR\nb.png,3,Optical\nc.png,4,oPtIcAl\n");
    CHECK(m.entries[0].modality == Modality::Sar);
    CHECK(m.entries[1].modality == Modality::Optical);
    CHECK(m.entries[2].modality == Modality::Optical);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(parse_manifest("a.png,0,sar\n"), Error);
    CHECK_THROWS_AS(parse_manifest("a.png,1,infrared\n"), Error);
    CHECK_THROWS_AS(parse_manifest("a.png,1\n"), Error);
    CHECK_THROWS_AS(parse_manifest("a.png,x,sar\n"), Error);
    CHECK_THROWS_AS(parse_manifest("a.png,1,sar\na.png,2,sar\n"), Error);
    try {
      parse_manifest("a.png,-3,sar\n");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Data);
    }
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.csv"), Error); }
}

TEST_CASE("manifest property: random valid and invalid rows") {
  Rng rng(123);
  const char* good_mod[] = {"optical", "SAR", "Sar", "OPTICAL", "sar"};
  const char* bad_mod[] = {"ir", "", "opt", "s a r"};
  for (int trial = 0; trial < 1000; ++trial) {
    std::string text;
    bool valid = true;
    const int rows = 1 + static_cast<int>(uniform_index(rng, 6));
    for (int r = 0; r < rows; ++r) {
      int id = 1 + static_cast<int>(uniform_index(rng, 20));
      std::string mod = good_mod[uniform_index(rng, 5)];
      std::string path = "img_" + std::to_string(r) + ".png";
      switch (uniform_index(rng, 12)) {
        case 0: id = -static_cast<int>(uniform_index(rng, 3)); valid = false; break;
        case 1: mod = bad_mod[uniform_index(rng, 4)]; valid = false; break;
        case 2: if (r > 0) { path = "img_0.png"; valid = false; } break;
        default: break;
      }
      text += path + "," + std::to_string(id) + "," + mod + "\n";
    }
    if (valid) {
      const auto m = parse_manifest(text);
      CHECK(m.entries.size() == static_cast<std::size_t>(rows));
      std::set<std::string> paths;
      for (const auto& e : m.entries) {
        CHECK(e.identity >= 1);
        paths.insert(e.path);
      }
      CHECK(paths.size() == m.entries.size());
    } else {
      CHECK_THROWS_AS(parse_manifest(text), Error);
    }
  }
}

TEST_CASE("synthetic generator") {
  SUBCASE("deterministic") {
    const auto a = generate_synthetic({10, 4, 32, 7, 0});
    const auto b = generate_synthetic({10, 4, 32, 7, 0});
    REQUIRE(a.images.size() == b.images.size());
    for (std::size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i].pixels == b.images[i].pixels);
    CHECK(format_manifest(a.manifest) == format_manifest(b.manifest));
  }
  SUBCASE("counts") {
    const auto d = generate_synthetic({2, 1, 32, 1, 0});
    REQUIRE(d.images.size() == 4);
    int opt = 0, sar = 0;
    for (const auto& img : d.images) {
      img.validate();
      (img.modality == Modality::Optical ? opt : sar)++;
    }
    CHECK(opt == 2);
    CHECK(sar == 2);
  }
  SUBCASE("offset renderings are fresh images of the same identities") {
    const auto a = generate_synthetic({3, 2, 16, 5, 0});
    const auto b = generate_synthetic({3, 2, 16, 5, 2});
    const auto c = generate_synthetic({3, 4, 16, 5, 0});
    // index 2 in b equals index 2 in c
    CHECK(b.images[0].pixels == c.images[2].pixels);
    CHECK(a.images[0].pixels != b.images[0].pixels);
  }
  SUBCASE("invalid arguments") {
    CHECK_THROWS_AS(generate_synthetic({1, 4, 32, 7, 0}), Error);
    CHECK_THROWS_AS(generate_synthetic({4, 0, 32, 7, 0}), Error);
    CHECK_THROWS_AS(generate_synthetic({4, 4, 7, 7, 0}), Error);
  }
  SUBCASE("SAR renderings carry more dark mass than their optical counterparts") {
    const auto d = generate_synthetic({20, 10, 32, 99, 0});
    int pairs = 0, darker = 0;
    for (std::size_t i = 0; i < d.images.size(); ++i) {
      const auto& s = d.images[i];
      if (s.modality != Modality::Sar) continue;
      // the optical counterpart has the same identity and rendering index
      const std::size_t j = i - 10;
      REQUIRE(d.images[j].modality == Modality::Optical);
      REQUIRE(d.images[j].identity == s.identity);
      const auto dark = [](const LabeledImage& img) {
        return std::count_if(img.pixels.begin(), img.pixels.end(), [](double p) { return p <= 25.0; });
      };
      ++pairs;
      darker += dark(s) > dark(d.images[j]);
    }
    CHECK(pairs == 200);
    CHECK(darker >= 190);
  }
}

TEST_CASE("PNG dataset round trip") {
  const auto dir = temp_dir("png");
  const auto d = generate_synthetic({2, 2, 16, 3, 0});
  write_dataset(dir, d);
  const auto back = load_dataset(dir);
  REQUIRE(back.images.size() == d.images.size());
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    CHECK(back.images[i].pixels == d.images[i].pixels);
    CHECK(back.images[i].identity == d.images[i].identity);
    CHECK(back.images[i].modality == d.images[i].modality);
  }
  std::ofstream(dir / "bad.csv") << "missing.png,1,sar\n";
  CHECK_THROWS_AS(load_dataset(dir / "bad.csv"), Error);
}

TEST_CASE("balanced sampler") {
  const auto d = generate_synthetic({10, 8, 16, 7, 0});
  SUBCASE("P=4, K=4") {
    Rng rng(1);
    const auto b = sample_balanced_batch(d, 4, 4, rng);
    REQUIRE(b.size() == 16);
    std::map<int, std::set<Modality>> seen;
    for (const auto& img : b.images) seen[img.identity].insert(img.modality);
    CHECK(seen.size() == 4);
    for (const auto& [id, mods] : seen) CHECK(mods.size() == 2);
  }
  SUBCASE("deterministic") {
    Rng r1(5), r2(5);
    for (int i = 0; i < 5; ++i) CHECK(sample_balanced_batch(d, 4, 4, r1).indices == sample_balanced_batch(d, 4, 4, r2).indices);
  }
  SUBCASE("with replacement when a pool is small") {
    Dataset small;
    small.manifest = parse_manifest("a,1,optical\nb,1,optical\nc,1,sar\nd,2,optical\ne,2,sar\nf,2,sar\n");
    for (const auto& e : small.manifest.entries) small.images.push_back({2, 2, {0, 0, 0, 0}, e.identity, e.modality});
    Rng rng(9);
    const auto b = sample_balanced_batch(small, 2, 4, rng);
    REQUIRE(b.size() == 8);
    // identity 1 has a single SAR image but needs two
    CHECK(std::count(b.indices.begin(), b.indices.end(), std::size_t{2}) == 2);
  }
  SUBCASE("every batch has a dual-modality identity") {
    Rng rng(77);
    for (int i = 0; i < 200; ++i) {
      const auto b = sample_balanced_batch(d, 2 + static_cast<int>(i % 3), 2 + static_cast<int>(i % 4), rng);
      std::map<int, std::set<Modality>> seen;
      for (const auto& img : b.images) seen[img.identity].insert(img.modality);
      CHECK(std::any_of(seen.begin(), seen.end(), [](const auto& kv) { return kv.second.size() == 2; }));
    }
  }
  SUBCASE("errors") {
    Rng rng(1);
    CHECK_THROWS_AS(sample_balanced_batch(d, 0, 4, rng), Error);
    CHECK_THROWS_AS(sample_balanced_batch(d, 4, 0, rng), Error);
    CHECK_THROWS_AS(sample_balanced_batch(d, 11, 4, rng), Error);
  }
}

TEST_CASE("flips") {
  const auto img = make_image(2, 3, {1, 2, 3, 4, 5, 6}, 1, Modality::Sar);
  CHECK(flip_horizontal(img).pixels == std::vector<double>{3, 2, 1, 6, 5, 4});
  CHECK(flip_vertical(img).pixels == std::vector<double>{4, 5, 6, 1, 2, 3});
  CHECK(flip_horizontal(flip_horizontal(img)).pixels == img.pixels);
}
