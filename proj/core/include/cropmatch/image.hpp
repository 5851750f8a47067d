#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cropmatch {

/// H x W x 3 tensor, row-major, channel-interleaved. Pixel values live in
/// [0,1] for images proper; the same layout doubles as a signed field for
/// perturbations and gradients (see Perturbation).
struct ImageTensor {
  int h = 0;
  int w = 0;
  std::vector<double> data;  // size h*w*3

  ImageTensor() = default;
  ImageTensor(int height, int width, double fill = 0.0)
      : h(height), w(width),
        data(static_cast<std::size_t>(height) * width * 3, fill) {}

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * w + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * w + x) * 3 + c];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const ImageTensor& o) const { return h == o.h && w == o.w; }
};

/// Full-resolution perturbation field with its l-inf budget (unit scale).
struct Perturbation {
  int h = 0;
  int w = 0;
  std::vector<double> data;
  double epsilon = 0.0;

  Perturbation() = default;
  Perturbation(int height, int width, double eps)
      : h(height), w(width),
        data(static_cast<std::size_t>(height) * width * 3, 0.0),
        epsilon(eps) {}
};

/// Throws std::invalid_argument unless every entry is in [0,1] and the
/// shape is at least 8x8 with a populated buffer.
void validate_image(const ImageTensor& img);

/// Throws unless |data| <= epsilon everywhere.
void validate_budget(const Perturbation& delta);

/// Bilinear resize with half-pixel centers and edge clamp. Exact identity
/// when the output shape equals the input shape. Linear in the input.
ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w);

/// Vector-Jacobian product of resize_bilinear: scatters a cotangent on the
/// output back onto an in_h x in_w input grid.
ImageTensor resize_bilinear_vjp(const ImageTensor& cot, int in_h, int in_w);

/// Decodes an 8-bit RGB file (PNG or binary PPM), scales bytes to [0,1],
/// then resizes to side x side.
ImageTensor load_image(const std::string& path, int side);

/// Decode without resizing.
ImageTensor load_image_raw(const std::string& path);

/// Lossless 8-bit save; format picked from the extension (.png or .ppm).
void save_image(const ImageTensor& img, const std::string& path);

/// Quantization-safe persistence of clean+delta: every saved byte is clipped
/// to within epsilon_255 of the clean image's byte, so the integer-domain
/// budget survives the 8-bit round trip exactly.
void save_adversarial(const ImageTensor& clean, const Perturbation& delta,
                      int epsilon_255, const std::string& path);

/// Raw byte digest of a file, hex sha256. Declared here since image files
/// are the main digest subjects; implemented in llmclient.cpp (OpenSSL).
std::string file_sha256(const std::string& path);
std::string sha256_hex(const std::string& bytes);

}  // namespace cropmatch
