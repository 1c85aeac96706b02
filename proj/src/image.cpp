#include "idforge/image.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "idforge/error.hpp"

namespace idforge {

Image::Image(std::size_t h, std::size_t w, std::size_t c, double fill)
    : height(h), width(w), channels(c) {
  if (h == 0 || w == 0) fail(ErrorKind::shape, "Image: dimensions must be > 0");
  if (c != 1 && c != 3) fail(ErrorKind::shape, "Image: channels must be 1 or 3");
  pixels = Vector::Constant(static_cast<Eigen::Index>(h * w * c), fill);
}

void Image::clamp() { pixels = pixels.cwiseMax(0.0).cwiseMin(1.0); }

std::uint8_t quantize_pixel(double p) {
  const double c = p < 0.0 ? 0.0 : (p > 1.0 ? 1.0 : p);
  // nearbyint follows the default rounding mode: ties to even.
  return static_cast<std::uint8_t>(std::nearbyint(c * 255.0));
}

std::string encode_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    fail(ErrorKind::shape, "encode_pnm: channels must be 1 or 3");
  }
  std::string out = (image.channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.size());
  for (Eigen::Index i = 0; i < image.pixels.size(); ++i) {
    out.push_back(static_cast<char>(quantize_pixel(image.pixels[i])));
  }
  return out;
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  const std::string bytes = encode_pnm(image);
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "write_pnm: cannot open " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorKind::io, "write_pnm: write failed for " + path.string());
}

namespace {

// Next whitespace-delimited header token; '#' starts a comment to end of line.
std::string header_token(const std::string& bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) fail(ErrorKind::format, "pnm: truncated header");
  return bytes.substr(start, pos - start);
}

std::size_t header_number(const std::string& bytes, std::size_t& pos) {
  const std::string tok = header_token(bytes, pos);
  for (const char ch : tok) {
    if (!std::isdigit(static_cast<unsigned char>(ch))) {
      fail(ErrorKind::format, "pnm: bad header field '" + tok + "'");
    }
  }
  return static_cast<std::size_t>(std::stoul(tok));
}

}  // namespace

Image decode_pnm(const std::string& bytes) {
  std::size_t pos = 0;
  const std::string magic = header_token(bytes, pos);
  std::size_t channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    fail(ErrorKind::format, "pnm: unsupported magic '" + magic + "'");
  }
  const std::size_t width = header_number(bytes, pos);
  const std::size_t height = header_number(bytes, pos);
  const std::size_t maxval = header_number(bytes, pos);
  if (maxval != 255) fail(ErrorKind::format, "pnm: only maxval 255 is supported");
  if (width == 0 || height == 0) fail(ErrorKind::format, "pnm: zero dimension");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    fail(ErrorKind::format, "pnm: missing separator after header");
  }
  ++pos;
  Image image(height, width, channels);
  if (bytes.size() - pos < image.size()) fail(ErrorKind::format, "pnm: truncated pixel data");
  for (std::size_t i = 0; i < image.size(); ++i) {
    image.pixels[static_cast<Eigen::Index>(i)] =
        static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / 255.0;
  }
  return image;
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "read_pnm: cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_pnm(ss.str());
}

double reconstruction_mse(const Image& rec, const Image& gt) {
  if (!rec.same_shape(gt)) fail(ErrorKind::shape, "reconstruction_mse: image shapes differ");
  return (rec.pixels - gt.pixels).squaredNorm() / static_cast<double>(rec.size());
}

double identity_similarity_loss(const FeatureVector& emb_rec, const FeatureVector& emb_gt) {
  return 1.0 - cosine_similarity(emb_rec, emb_gt);
}

}  // namespace idforge
