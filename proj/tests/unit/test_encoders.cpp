#include <doctest.h>

#include "villa/encoders.hpp"
#include "villa/synth.hpp"

using namespace villa;

namespace {

Image solid_region(Rgb c) {
  Image img(kCell, kCell);
  for (int y = 8; y < 20; ++y)
    for (int x = 10; x < 18; ++x) {
      auto* p = img.pixel(x, y);
      p[0] = c.r, p[1] = c.g, p[2] = c.b;
    }
  return img;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::Io;
}

}  // namespace

TEST_CASE("embeddings are unit length and deterministic") {
  EncoderConfig enc;
  const auto cat = AttributeCatalog::docmnist();
  const auto r = encode_region(solid_region(kColorValues[0]), enc);
  CHECK(r.normalized);
  CHECK(r.values.size() == enc.d);
  CHECK(r.values.norm() == doctest::Approx(1.0));
  CHECK(encode_region(solid_region(kColorValues[0]), enc).values == r.values);

  const auto s = encode_sentence("The color is red", enc);
  CHECK(s.values.norm() == doctest::Approx(1.0));
  CHECK(encode_sentence("the COLOR is red.", enc).values == s.values);
  CHECK(encode_attribute(14, cat, enc).values.norm() == doctest::Approx(1.0));
  CHECK(encode_image(Image(kCanvas, kCanvas), enc).values.size() == enc.d);
}

TEST_CASE("sentence embedding is the normalized mean of its token vectors") {
  EncoderConfig enc;
  // Independent check: compose from single-token sentences.
  const Vec a = encode_sentence("red", enc).values;
  const Vec b = encode_sentence("circle", enc).values;
  const Vec expect = (a + b).normalized();
  CHECK((encode_sentence("red circle", enc).values - expect).norm() < 1e-12);
  CHECK((encode_sentence("circle red", enc).values - expect).norm() < 1e-12);
}

TEST_CASE("attribute embedding averages its category templates") {
  EncoderConfig enc;
  const auto cat = AttributeCatalog::docmnist();
  Vec acc = Vec::Zero(enc.d);
  for (const auto& t : cat.templates(Category::Shape))
    acc += encode_sentence(AttributeCatalog::instantiate(t, "circle"), enc).values;
  CHECK((encode_attribute(16, cat, enc).values - acc.normalized()).norm() < 1e-12);
  const Mat table = attribute_table(cat, enc);
  CHECK(table.rows() == 20);
  CHECK((table.row(16).transpose() - acc.normalized()).norm() < 1e-12);
}

TEST_CASE("region features separate colors") {
  EncoderConfig enc;
  const auto red1 = encode_region(solid_region(kColorValues[4]), enc);
  auto shifted = solid_region(kColorValues[4]);
  const auto red2 = encode_region(crop_region([&] {
                                    Image c(kCanvas, kCanvas);
                                    for (int y = 0; y < kCell; ++y)
                                      for (int x = 0; x < kCell; ++x) {
                                        const auto* p = shifted.pixel(x, y);
                                        auto* q = c.pixel(x + kCell, y);
                                        q[0] = p[0], q[1] = p[1], q[2] = p[2];
                                      }
                                    return c;
                                  }(),
                                                  1),
                                  enc);
  const auto blue = encode_region(solid_region(kColorValues[1]), enc);
  CHECK(red1.dot(red2) == doctest::Approx(1.0));
  CHECK(red1.dot(blue) < 0.99);
}

TEST_CASE("encoder configs hash their settings") {
  EncoderConfig a, b;
  CHECK(a.hash() == b.hash());
  b.token_seed += 1;
  CHECK(a.hash() != b.hash());
  b = a;
  b.d = 32;
  CHECK(a.hash() != b.hash());
  CHECK(encode_sentence("two", a).values.size() == 64);
  CHECK(encode_sentence("two", b).values.size() == 32);
}

TEST_CASE("encoder errors") {
  EncoderConfig enc;
  CHECK(kind_of([&] { encode_region(Image(10, 10), enc); }) == ErrorKind::ShapeMismatch);
  CHECK(kind_of([&] { encode_image(Image(kCell, kCell), enc); }) == ErrorKind::ShapeMismatch);
  CHECK(kind_of([&] { encode_sentence("  ..  ", enc); }) == ErrorKind::EmptyText);
  CHECK(kind_of([&] { encode_description({}, enc); }) == ErrorKind::EmptyText);
  EncoderConfig tiny;
  tiny.d = 4;
  CHECK(kind_of([&] { tiny.validate(); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("raw features are finite on blank and full windows") {
  CHECK(raw_features(Image(kCell, kCell)).allFinite());
  Image white(kCell, kCell);
  std::fill(white.rgb.begin(), white.rgb.end(), 255);
  const Vec f = raw_features(white);
  CHECK(f.allFinite());
  CHECK(f.size() == kRawFeatureCount);
}
