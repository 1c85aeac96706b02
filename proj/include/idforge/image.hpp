#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "idforge/numkit.hpp"

namespace idforge {

/// Row-major interleaved pixels in [0, 1]; channels is 1 (gray) or 3 (RGB).
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  Vector pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0);

  std::size_t size() const { return height * width * channels; }
  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }
  void clamp();
};

/// Quantizes to 8 bits (round-half-even) and writes binary PGM (P5) or PPM (P6).
void write_pnm(const std::filesystem::path& path, const Image& image);
std::string encode_pnm(const Image& image);

/// Reads binary P5/P6 with maxval 255; pixels become q / 255.
Image read_pnm(const std::filesystem::path& path);
Image decode_pnm(const std::string& bytes);

std::uint8_t quantize_pixel(double p);

/// Mean squared pixel error.
double reconstruction_mse(const Image& rec, const Image& gt);

/// 1 - cosine similarity between two embeddings.
double identity_similarity_loss(const FeatureVector& emb_rec, const FeatureVector& emb_gt);

}  // namespace idforge
