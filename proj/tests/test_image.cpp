#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "visage/errors.hpp"
#include "visage/image.hpp"
#include "visage/rng.hpp"

using namespace visage;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

Image random_rgb(Rng& rng, int w, int h) {
  Image img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.next_below(256));
  return img;
}

}  // namespace

TEST_CASE("image_to_chw lays out rgb planes and replicates gray") {
  Image rgb;
  rgb.width = 2;
  rgb.height = 1;
  rgb.channels = 3;
  rgb.pixels = {10, 20, 30, 40, 50, 60};
  Tensor t = image_to_chw(rgb);
  REQUIRE(t.shape() == Shape{3, 1, 2});
  CHECK(t[0] == 10.0f);  // r plane
  CHECK(t[1] == 40.0f);
  CHECK(t[2] == 20.0f);  // g plane
  CHECK(t[3] == 50.0f);
  CHECK(t[4] == 30.0f);  // b plane
  CHECK(t[5] == 60.0f);

  Image gray;
  gray.width = 2;
  gray.height = 2;
  gray.channels = 1;
  gray.pixels = {0, 85, 170, 255};
  Tensor g = image_to_chw(gray);
  REQUIRE(g.shape() == Shape{3, 2, 2});
  for (int c = 0; c < 3; ++c) {
    CHECK(g[c * 4 + 0] == 0.0f);
    CHECK(g[c * 4 + 1] == 85.0f);
    CHECK(g[c * 4 + 2] == 170.0f);
    CHECK(g[c * 4 + 3] == 255.0f);
  }
}

TEST_CASE("image_to_chw drops alpha and rejects nonsense") {
  Image rgba;
  rgba.width = 1;
  rgba.height = 2;
  rgba.channels = 4;
  rgba.pixels = {1, 2, 3, 200, 4, 5, 6, 100};
  Tensor t = image_to_chw(rgba);
  REQUIRE(t.shape() == Shape{3, 2, 1});
  CHECK(t[0] == 1.0f);
  CHECK(t[1] == 4.0f);
  CHECK(t[2] == 2.0f);
  CHECK(t[3] == 5.0f);
  CHECK(t[4] == 3.0f);
  CHECK(t[5] == 6.0f);

  Image bad;
  CHECK_THROWS_AS(image_to_chw(bad), DomainError);
}

TEST_CASE("resize_bilinear passes equal sizes through unchanged") {
  Rng rng(11);
  Tensor t({3, 7, 5});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.next_range(0, 255));
  Tensor out = resize_bilinear(t, 7, 5);
  REQUIRE(out.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(out[i] == t[i]);
}

TEST_CASE("resize_bilinear keeps constant fields constant") {
  Tensor t({2, 3, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 7.0f;
  for (int oh : {1, 2, 5, 9}) {
    for (int ow : {1, 4, 7}) {
      Tensor out = resize_bilinear(t, oh, ow);
      REQUIRE(out.shape() == Shape{2, oh, ow});
      for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 7.0f);
    }
  }
}

TEST_CASE("resize_bilinear doubles a 2x2 step edge with exact quarter weights") {
  // Source rows are both [0, 255]; half-pixel centers give sample points at
  // -0.25, 0.25, 0.75, 1.25, so the interior outputs mix with weights 1/4
  // and 3/4 while the edge outputs clamp to the nearest column.
  Tensor t({1, 2, 2});
  t[0] = 0.0f;
  t[1] = 255.0f;
  t[2] = 0.0f;
  t[3] = 255.0f;
  Tensor out = resize_bilinear(t, 4, 4);
  REQUIRE(out.shape() == Shape{1, 4, 4});
  for (int y = 0; y < 4; ++y) {
    CHECK(out[y * 4 + 0] == 0.0f);
    CHECK(out[y * 4 + 1] == 63.75f);
    CHECK(out[y * 4 + 2] == 191.25f);
    CHECK(out[y * 4 + 3] == 255.0f);
  }
}

TEST_CASE("resize_bilinear matches a reference resampler on random sizes") {
  Rng rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const int c = rng.next_below(2) == 0 ? 1 : 3;
    const int h = 1 + static_cast<int>(rng.next_below(12));
    const int w = 1 + static_cast<int>(rng.next_below(12));
    const int oh = 1 + static_cast<int>(rng.next_below(16));
    const int ow = 1 + static_cast<int>(rng.next_below(16));
    Tensor src({c, h, w});
    std::vector<double> ref(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      src[i] = static_cast<float>(rng.next_below(256));
      ref[i] = src[i];
    }
    Tensor out = resize_bilinear(src, oh, ow);
    const std::vector<double> want = oracles::bilinear(ref, c, h, w, oh, ow);
    REQUIRE(out.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      INFO("trial ", trial, " c ", c, " ", h, "x", w, " -> ", oh, "x", ow, " at ", i);
      CHECK(out[i] == doctest::Approx(want[i]));
    }
  }
}

TEST_CASE("resize_bilinear validates its arguments") {
  Tensor flat({4});
  CHECK_THROWS_AS(resize_bilinear(flat, 2, 2), ShapeError);
  Tensor ok({1, 2, 2});
  CHECK_THROWS_AS(resize_bilinear(ok, 0, 2), DomainError);
  CHECK_THROWS_AS(resize_bilinear(ok, 2, -1), DomainError);
}

TEST_CASE("png encode and decode round trip rgb and gray exactly") {
  Rng rng(7);
  const std::string path = temp_path("visage_test_roundtrip.png");

  Image rgb = random_rgb(rng, 13, 9);
  encode_png(path, rgb);
  Image back = decode_image(path);
  CHECK(back.width == 13);
  CHECK(back.height == 9);
  CHECK(back.channels == 3);
  CHECK(back.pixels == rgb.pixels);

  Image gray;
  gray.width = 5;
  gray.height = 4;
  gray.channels = 1;
  gray.pixels.resize(20);
  for (auto& p : gray.pixels) p = static_cast<std::uint8_t>(rng.next_below(256));
  encode_png(path, gray);
  back = decode_image(path);
  CHECK(back.width == 5);
  CHECK(back.height == 4);
  CHECK(back.channels == 1);
  CHECK(back.pixels == gray.pixels);
  std::remove(path.c_str());
}

TEST_CASE("encode_png rejects unsupported channel counts and bad buffers") {
  const std::string path = temp_path("visage_test_reject.png");
  Image rgba;
  rgba.width = 2;
  rgba.height = 2;
  rgba.channels = 4;
  rgba.pixels.resize(16);
  CHECK_THROWS_AS(encode_png(path, rgba), IoError);

  Image short_buf;
  short_buf.width = 4;
  short_buf.height = 4;
  short_buf.channels = 3;
  short_buf.pixels.resize(5);
  CHECK_THROWS_AS(encode_png(path, short_buf), IoError);
}

TEST_CASE("decode_image reports unreadable and corrupt files") {
  CHECK_THROWS_AS(decode_image(temp_path("visage_no_such_image.png")), ImageDecodeError);

  const std::string garbage = temp_path("visage_test_garbage.bin");
  {
    std::ofstream os(garbage, std::ios::binary);
    os << "certainly not pixels";
  }
  CHECK_THROWS_AS(decode_image(garbage), ImageDecodeError);
  std::remove(garbage.c_str());

  // A real PNG cut off mid-stream must fail cleanly, not crash.
  Rng rng(3);
  const std::string whole = temp_path("visage_test_whole.png");
  const std::string cut = temp_path("visage_test_cut.png");
  encode_png(whole, random_rgb(rng, 16, 16));
  {
    std::ifstream is(whole, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                            std::istreambuf_iterator<char>());
    std::ofstream os(cut, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(decode_image(cut), ImageDecodeError);
  std::remove(whole.c_str());
  std::remove(cut.c_str());
}

TEST_CASE("decode errors carry the offending path") {
  const std::string path = temp_path("visage_test_missing_subdir.jpg");
  try {
    decode_image(path);
    FAIL("expected ImageDecodeError");
  } catch (const ImageDecodeError& e) {
    CHECK(e.path == path);
    CHECK(std::string(e.what()).find(path) != std::string::npos);
  }
}
