#include <doctest.h>

#include <bit>
#include <cstring>

#include "helpers.hpp"
#include "idforge/error.hpp"
#include "idforge/idv.hpp"
#include "idforge/image.hpp"

using namespace idforge;

namespace {

// Hand-built reference encoding, independent of encode_idv.
std::string ref_idv(std::uint32_t count, std::uint32_t dim, const std::vector<float>& values) {
  std::string out = "IDV1";
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
  };
  u32(count);
  u32(dim);
  for (const float f : values) u32(std::bit_cast<std::uint32_t>(f));
  return out;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::usage;  // sentinel: nothing thrown
}

}  // namespace

TEST_CASE("IDV1 byte layout") {
  Matrix m(2, 3);
  m << 1.0, -2.5, 0.125, 3.0, 1e-3, -0.0;
  const std::string bytes = encode_idv(m);
  CHECK(bytes == ref_idv(2, 3, {1.0f, -2.5f, 0.125f, 3.0f, 1e-3f, -0.0f}));
  CHECK(bytes.size() == 12 + 24);
  const IdvFile back = decode_idv(bytes);
  CHECK_FALSE(back.metadata.has_value());
  CHECK(encode_idv(back.rows) == bytes);
}

TEST_CASE("IDV1 round trip is bitwise") {
  Matrix m = testutil::gaussian_matrix(50, 17, 3).cast<float>().cast<double>();
  m(0, 0) = std::numeric_limits<float>::denorm_min();
  m(1, 1) = std::numeric_limits<float>::max();
  m(2, 2) = -0.0;
  const nlohmann::json meta = {{"kind", "test"}, {"tau", 0.3}};
  const auto dir = testutil::temp_dir("formats");
  write_idv(dir / "a.idv", m, meta);
  const IdvFile f = read_idv(dir / "a.idv");
  REQUIRE(f.rows.rows() == 50);
  CHECK(std::memcmp(f.rows.data(), m.data(), sizeof(double) * m.size()) == 0);
  CHECK(f.metadata == meta);
  CHECK(testutil::slurp(dir / "a.idv") == encode_idv(m, meta));
  write_idv(dir / "b.idv", f.rows, f.metadata);
  CHECK(testutil::slurp(dir / "b.idv") == testutil::slurp(dir / "a.idv"));

  // Empty pool and zero dimension are representable.
  CHECK(decode_idv(encode_idv(Matrix(0, 8))).rows.cols() == 8);
}

TEST_CASE("IDV1 format errors") {
  const std::string good = encode_idv(Matrix::Ones(2, 2), nlohmann::json{{"a", 1}});
  CHECK(kind_of([] { decode_idv("IDV2" + std::string(8, '\0')); }) == ErrorKind::format);
  CHECK(kind_of([] { decode_idv("IDV1"); }) == ErrorKind::format);
  CHECK(kind_of([&] { decode_idv(good.substr(0, 20)); }) == ErrorKind::format);
  CHECK(kind_of([&] { decode_idv(good.substr(0, good.size() - 1)); }) == ErrorKind::format);
  CHECK(kind_of([&] { decode_idv(good + "x"); }) == ErrorKind::format);
  std::string bad_json = encode_idv(Matrix::Ones(1, 1));
  bad_json += std::string("\x03\0\0\0", 4) + "{{{";
  CHECK(kind_of([&] { decode_idv(bad_json); }) == ErrorKind::format);
  CHECK(kind_of([] { read_idv("/nonexistent/x.idv"); }) == ErrorKind::io);
}

TEST_CASE("PGM and PPM round trip on quantized pixels") {
  const auto dir = testutil::temp_dir("pnm");
  for (const std::size_t channels : {std::size_t{1}, std::size_t{3}}) {
    Image img(7, 5, channels);
    for (Eigen::Index i = 0; i < img.pixels.size(); ++i) {
      img.pixels[i] = static_cast<double>((i * 37) % 256) / 255.0;
    }
    const auto path = dir / (channels == 1 ? "a.pgm" : "a.ppm");
    write_pnm(path, img);
    const Image back = read_pnm(path);
    CHECK(back.height == 7);
    CHECK(back.width == 5);
    CHECK(back.channels == channels);
    CHECK(back.pixels == img.pixels);
    write_pnm(dir / "b.pnm", back);
    CHECK(testutil::slurp(dir / "b.pnm") == testutil::slurp(path));
  }
  const std::string header = testutil::slurp(dir / "a.pgm").substr(0, 11);
  CHECK(header == "P5\n5 7\n255\n");
}

TEST_CASE("pixel quantization rounds half to even") {
  CHECK(quantize_pixel(-0.2) == 0);
  CHECK(quantize_pixel(1.7) == 255);
  CHECK(quantize_pixel(0.5) == 128);  // 127.5 -> 128 (even)
  CHECK(quantize_pixel(1.5 / 255.0) == 2);
  CHECK(quantize_pixel(2.5 / 255.0) == 2);
  CHECK(quantize_pixel(100.4 / 255.0) == 100);
}

TEST_CASE("PNM header parsing and errors") {
  std::string with_comment = "P5\n# made by hand\n2 1\n255\n";
  with_comment += std::string("\x00\xff", 2);
  const Image img = decode_pnm(with_comment);
  CHECK(img.pixels[0] == 0.0);
  CHECK(img.pixels[1] == 1.0);

  CHECK(kind_of([] { decode_pnm("P2\n1 1\n255\n0"); }) == ErrorKind::format);
  CHECK(kind_of([] { decode_pnm("P5\n1 1\n65535\n\0\0"); }) == ErrorKind::format);
  CHECK(kind_of([] { decode_pnm("P5\n2 2\n255\n\x01"); }) == ErrorKind::format);
  CHECK(kind_of([] { decode_pnm("P5\n0 2\n255\n"); }) == ErrorKind::format);
  CHECK(kind_of([] { decode_pnm("P5\nx 2\n255\n"); }) == ErrorKind::format);
  CHECK(kind_of([] { decode_pnm("P5\n1 1"); }) == ErrorKind::format);
}

TEST_CASE("image helpers") {
  Image a(2, 2, 1, 0.5), b(2, 2, 1, 0.25);
  CHECK(reconstruction_mse(a, b) == doctest::Approx(0.0625));
  CHECK_THROWS_AS(reconstruction_mse(a, Image(2, 2, 3)), Error);
  CHECK_THROWS_AS(Image(2, 2, 2), Error);
  Vector e1 = Vector::Zero(3), e2 = Vector::Zero(3);
  e1[0] = 1;
  e2[1] = 1;
  CHECK(identity_similarity_loss(e1, e1) == doctest::Approx(0.0));
  CHECK(identity_similarity_loss(e1, e2) == doctest::Approx(1.0));
}
