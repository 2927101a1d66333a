#include <doctest.h>

#include <filesystem>

#include "villa/checkpoint.hpp"

using namespace villa;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::Io;
}

Checkpoint sample_ckpt() {
  Checkpoint c;
  c.encoder_hash = 0x0123456789abcdefULL;
  c.config = {{"kind", "test"}, {"tau", "0.07"}};
  Mat m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  Vec v(2);
  v << -0.5, 0.25;
  c.tensors.push_back(to_tensor(0, "W", m));
  c.tensors.push_back(to_tensor(-1, "b", v));
  return c;
}

}  // namespace

TEST_CASE("container layout starts with magic and version") {
  const auto bytes = serialize_checkpoint(sample_ckpt());
  REQUIRE(bytes.size() > 16);
  CHECK(bytes.substr(0, 4) == "VLLA");
  CHECK(static_cast<unsigned char>(bytes[4]) == kCheckpointVersion);
  CHECK(bytes[5] == 0);
  // encoder hash, little-endian
  CHECK(static_cast<unsigned char>(bytes[8]) == 0xef);
  CHECK(static_cast<unsigned char>(bytes[15]) == 0x01);
}

TEST_CASE("round trip preserves tensors and config") {
  const auto c = sample_ckpt();
  const auto back = parse_checkpoint(serialize_checkpoint(c));
  CHECK(back.encoder_hash == c.encoder_hash);
  CHECK(back.config == c.config);
  CHECK(back.get("kind") == "test");
  const Mat m = mat_from(back.tensor(0, "W"));
  CHECK(m.rows() == 2);
  CHECK(m(1, 2) == 6.0);
  CHECK(vec_from(back.tensor(-1, "b"))[0] == -0.5);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(c));
}

TEST_CASE("file round trip and errors") {
  const auto path = std::filesystem::temp_directory_path() / "villa_ckpt_test.ckpt";
  save_checkpoint(sample_ckpt(), path);
  CHECK(load_checkpoint(path).get("tau") == "0.07");
  std::filesystem::remove(path);
  CHECK(kind_of([&] { load_checkpoint(path); }) == ErrorKind::MissingArtifact);

  auto bytes = serialize_checkpoint(sample_ckpt());
  CHECK(kind_of([&] { parse_checkpoint("XXXX" + bytes.substr(4)); }) == ErrorKind::BadMagic);
  CHECK(kind_of([&] { parse_checkpoint(bytes.substr(0, bytes.size() - 3)); }) == ErrorKind::TruncatedFile);
  const auto c = sample_ckpt();
  CHECK_THROWS_AS(c.tensor(3, "W"), Error);
  CHECK_THROWS_AS(c.get("missing"), Error);
}
