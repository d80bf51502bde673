#ifndef VISAGE_IMAGE_HPP
#define VISAGE_IMAGE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "visage/tensor.hpp"

namespace visage {

/// Decoded 8-bit image, interleaved row-major (height x width x channels).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 gray, 2 gray+alpha, 3 rgb, 4 rgba
  std::vector<std::uint8_t> pixels;
};

/// Decodes a JPEG or PNG file, sniffed by magic bytes.
Image decode_image(const std::string& path);

/// Writes an 8-bit PNG; 1 or 3 channels.
void encode_png(const std::string& path, const Image& img);

/// Planar float [3 x h x w] with values in [0,255]. Grayscale is
/// replicated across the three channels; alpha is dropped.
Tensor image_to_chw(const Image& img);

/// Bilinear resample of a [c x h x w] tensor using half-pixel sample
/// centers and edge clamping. Equal sizes copy values through exactly.
Tensor resize_bilinear(const Tensor& chw, int out_h, int out_w);

}  // namespace visage

#endif
