#include "cropmatch/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cropmatch {

void validate_image(const ImageTensor& img) {
  if (img.h < 8 || img.w < 8)
    throw std::invalid_argument("image must be at least 8x8, got " +
                                std::to_string(img.h) + "x" +
                                std::to_string(img.w));
  if (img.data.size() != static_cast<std::size_t>(img.h) * img.w * 3)
    throw std::invalid_argument("image buffer size does not match shape");
  for (double v : img.data)
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("image entry outside [0,1]");
}

void validate_budget(const Perturbation& delta) {
  if (delta.epsilon <= 0.0 || delta.epsilon > 1.0)
    throw std::invalid_argument("epsilon must be in (0,1]");
  for (double v : delta.data)
    if (!(std::fabs(v) <= delta.epsilon + 1e-12))
      throw std::invalid_argument("perturbation entry exceeds budget");
}

namespace {

struct AxisWeights {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

// Half-pixel-center source coordinates, clamped to the edge.
AxisWeights axis_weights(int in_n, int out_n) {
  AxisWeights aw;
  aw.lo.resize(out_n);
  aw.hi.resize(out_n);
  aw.frac.resize(out_n);
  const double scale = static_cast<double>(in_n) / out_n;
  for (int i = 0; i < out_n; ++i) {
    double coord = (i + 0.5) * scale - 0.5;
    double fl = std::floor(coord);
    int lo = static_cast<int>(fl);
    aw.frac[i] = coord - fl;
    aw.lo[i] = std::clamp(lo, 0, in_n - 1);
    aw.hi[i] = std::clamp(lo + 1, 0, in_n - 1);
  }
  return aw;
}

}  // namespace

ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("resize target must be positive");
  if (out_h == img.h && out_w == img.w) return img;
  const AxisWeights ay = axis_weights(img.h, out_h);
  const AxisWeights ax = axis_weights(img.w, out_w);
  ImageTensor out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int y0 = ay.lo[y], y1 = ay.hi[y];
    const double fy = ay.frac[y];
    for (int x = 0; x < out_w; ++x) {
      const int x0 = ax.lo[x], x1 = ax.hi[x];
      const double fx = ax.frac[x];
      for (int c = 0; c < 3; ++c) {
        double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
        double bot = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
        out.at(y, x, c) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

ImageTensor resize_bilinear_vjp(const ImageTensor& cot, int in_h, int in_w) {
  if (in_h < 1 || in_w < 1)
    throw std::invalid_argument("vjp input shape must be positive");
  if (cot.h == in_h && cot.w == in_w) return cot;
  const AxisWeights ay = axis_weights(in_h, cot.h);
  const AxisWeights ax = axis_weights(in_w, cot.w);
  ImageTensor grad(in_h, in_w);
  for (int y = 0; y < cot.h; ++y) {
    const int y0 = ay.lo[y], y1 = ay.hi[y];
    const double fy = ay.frac[y];
    for (int x = 0; x < cot.w; ++x) {
      const int x0 = ax.lo[x], x1 = ax.hi[x];
      const double fx = ax.frac[x];
      for (int c = 0; c < 3; ++c) {
        const double g = cot.at(y, x, c);
        grad.at(y0, x0, c) += (1.0 - fy) * (1.0 - fx) * g;
        grad.at(y0, x1, c) += (1.0 - fy) * fx * g;
        grad.at(y1, x0, c) += fy * (1.0 - fx) * g;
        grad.at(y1, x1, c) += fy * fx * g;
      }
    }
  }
  return grad;
}

namespace {

bool has_suffix(const std::string& s, const std::string& suf) {
  if (s.size() < suf.size()) return false;
  std::string tail = s.substr(s.size() - suf.size());
  std::transform(tail.begin(), tail.end(), tail.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return tail == suf;
}

ImageTensor from_bytes(const std::vector<unsigned char>& bytes, int h, int w) {
  ImageTensor img(h, w);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = bytes[i] / 255.0;
  return img;
}

std::vector<unsigned char> to_bytes(const ImageTensor& img) {
  std::vector<unsigned char> bytes(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    double v = std::clamp(img.data[i], 0.0, 1.0);
    long b = std::lround(v * 255.0);
    bytes[i] = static_cast<unsigned char>(std::clamp(b, 0L, 255L));
  }
  return bytes;
}

ImageTensor load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6")
    throw std::runtime_error(path + ": unsupported format (want P6)");
  auto next_token = [&in, &path]() {
    // Skips whitespace and # comments per the PPM grammar.
    std::string tok;
    for (;;) {
      int ch = in.get();
      if (ch == EOF) throw std::runtime_error(path + ": truncated header");
      if (std::isspace(ch)) continue;
      if (ch == '#') {
        std::string line;
        std::getline(in, line);
        continue;
      }
      tok.push_back(static_cast<char>(ch));
      while (in && !std::isspace(in.peek()) && in.peek() != EOF)
        tok.push_back(static_cast<char>(in.get()));
      return tok;
    }
  };
  int w = std::stoi(next_token());
  int h = std::stoi(next_token());
  int maxval = std::stoi(next_token());
  if (maxval != 255)
    throw std::runtime_error(path + ": only 8-bit PPM supported");
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w * 3);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error(path + ": truncated pixel data");
  return from_bytes(bytes, h, w);
}

void save_ppm(const ImageTensor& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  auto bytes = to_bytes(img);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

ImageTensor load_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("libpng init failed");
  }
  std::vector<unsigned char> bytes;
  int w = 0, h = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error(path + ": PNG decode error");
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error(path + ": not reducible to 8-bit RGB");
  }
  bytes.resize(static_cast<std::size_t>(h) * w * 3);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = bytes.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return from_bytes(bytes, h, w);
}

void save_png(const ImageTensor& img, const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot write " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng init failed");
  }
  auto bytes = to_bytes(img);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error(path + ": PNG encode error");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w),
               static_cast<png_uint_32>(img.h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.h);
  for (int y = 0; y < img.h; ++y)
    rows[y] = bytes.data() + static_cast<std::size_t>(y) * img.w * 3;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace

ImageTensor load_image_raw(const std::string& path) {
  if (has_suffix(path, ".ppm")) return load_ppm(path);
  if (has_suffix(path, ".png")) return load_png(path);
  throw std::runtime_error(path + ": unsupported extension (png/ppm)");
}

ImageTensor load_image(const std::string& path, int side) {
  if (side < 8) throw std::invalid_argument("side must be >= 8");
  ImageTensor raw = load_image_raw(path);
  ImageTensor out = resize_bilinear(raw, side, side);
  validate_image(out);
  return out;
}

void save_image(const ImageTensor& img, const std::string& path) {
  if (has_suffix(path, ".ppm")) return save_ppm(img, path);
  if (has_suffix(path, ".png")) return save_png(img, path);
  throw std::runtime_error(path + ": unsupported extension (png/ppm)");
}

void save_adversarial(const ImageTensor& clean, const Perturbation& delta,
                      int epsilon_255, const std::string& path) {
  if (clean.h != delta.h || clean.w != delta.w)
    throw std::invalid_argument("save_adversarial: shape mismatch");
  if (epsilon_255 < 1 || epsilon_255 > 255)
    throw std::invalid_argument("epsilon_255 out of range");
  ImageTensor quantized(clean.h, clean.w);
  for (std::size_t i = 0; i < clean.data.size(); ++i) {
    long clean_b = std::lround(clean.data[i] * 255.0);
    long adv_b = std::lround((clean.data[i] + delta.data[i]) * 255.0);
    adv_b = std::clamp(adv_b, clean_b - epsilon_255, clean_b + epsilon_255);
    adv_b = std::clamp(adv_b, 0L, 255L);
    quantized.data[i] = adv_b / 255.0;
  }
  save_image(quantized, path);
}

}  // namespace cropmatch
