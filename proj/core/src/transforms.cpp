#include "cropmatch/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cropmatch {

void validate_crop_config(const CropConfig& cfg) {
  if (!(cfg.scale_lo > 0.0 && cfg.scale_lo <= cfg.scale_hi &&
        cfg.scale_hi <= 1.0))
    throw std::invalid_argument("crop scale must satisfy 0 < lo <= hi <= 1");
  if (!(cfg.aspect_lo > 0.0 && cfg.aspect_lo <= cfg.aspect_hi))
    throw std::invalid_argument("aspect bounds must satisfy 0 < lo <= hi");
}

MatchingMode parse_matching_mode(const std::string& name) {
  if (name == "global-global") return MatchingMode::kGlobalGlobal;
  if (name == "local-global") return MatchingMode::kLocalGlobal;
  if (name == "global-local") return MatchingMode::kGlobalLocal;
  if (name == "local-local") return MatchingMode::kLocalLocal;
  throw std::invalid_argument("unknown matching mode: " + name);
}

std::string to_string(MatchingMode mode) {
  switch (mode) {
    case MatchingMode::kGlobalGlobal: return "global-global";
    case MatchingMode::kLocalGlobal: return "local-global";
    case MatchingMode::kGlobalLocal: return "global-local";
    case MatchingMode::kLocalLocal: return "local-local";
  }
  throw std::logic_error("bad mode");
}

bool source_is_local(MatchingMode mode) {
  return mode == MatchingMode::kLocalGlobal || mode == MatchingMode::kLocalLocal;
}

bool target_is_local(MatchingMode mode) {
  return mode == MatchingMode::kGlobalLocal || mode == MatchingMode::kLocalLocal;
}

CropSample sample_crop(const CropConfig& cfg, Rng& rng, int img_h, int img_w) {
  validate_crop_config(cfg);
  if (img_h < 8 || img_w < 8)
    throw std::invalid_argument("image must be at least 8x8");
  const double total = static_cast<double>(img_h) * img_w;
  for (int attempt = 0; attempt < 10; ++attempt) {
    double area = total * rng.uniform(cfg.scale_lo, cfg.scale_hi);
    double log_r = rng.uniform(std::log(cfg.aspect_lo), std::log(cfg.aspect_hi));
    double r = std::exp(log_r);
    int cw = static_cast<int>(std::lround(std::sqrt(area * r)));
    int ch = static_cast<int>(std::lround(std::sqrt(area / r)));
    if (cw > 0 && ch > 0 && cw <= img_w && ch <= img_h) {
      int top = static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(img_h - ch + 1)));
      int left = static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(img_w - cw + 1)));
      return {{top, left, ch, cw}, false};
    }
  }
  int ch = std::clamp(
      static_cast<int>(std::lround(img_h * std::sqrt(cfg.scale_hi))), 1, img_h);
  int cw = std::clamp(
      static_cast<int>(std::lround(img_w * std::sqrt(cfg.scale_hi))), 1, img_w);
  return {{(img_h - ch) / 2, (img_w - cw) / 2, ch, cw}, true};
}

ImageTensor apply_view(const ImageTensor& img, const CropRegion& region,
                       int out_side) {
  if (region.top < 0 || region.left < 0 || region.crop_h < 1 ||
      region.crop_w < 1 || region.top + region.crop_h > img.h ||
      region.left + region.crop_w > img.w)
    throw std::invalid_argument("crop region outside image bounds");
  if (region.top == 0 && region.left == 0 && region.crop_h == img.h &&
      region.crop_w == img.w)
    return resize_bilinear(img, out_side, out_side);
  ImageTensor crop(region.crop_h, region.crop_w);
  for (int y = 0; y < region.crop_h; ++y)
    for (int x = 0; x < region.crop_w; ++x)
      for (int c = 0; c < 3; ++c)
        crop.at(y, x, c) = img.at(region.top + y, region.left + x, c);
  return resize_bilinear(crop, out_side, out_side);
}

ImageTensor apply_view_vjp(const ImageTensor& cot, const CropRegion& region,
                           int img_h, int img_w) {
  if (region.top < 0 || region.left < 0 ||
      region.top + region.crop_h > img_h || region.left + region.crop_w > img_w)
    throw std::invalid_argument("crop region outside image bounds");
  ImageTensor crop_grad = resize_bilinear_vjp(cot, region.crop_h, region.crop_w);
  if (region.top == 0 && region.left == 0 && region.crop_h == img_h &&
      region.crop_w == img_w)
    return crop_grad;
  ImageTensor grad(img_h, img_w);
  for (int y = 0; y < region.crop_h; ++y)
    for (int x = 0; x < region.crop_w; ++x)
      for (int c = 0; c < 3; ++c)
        grad.at(region.top + y, region.left + x, c) = crop_grad.at(y, x, c);
  return grad;
}

double overlap_fraction(const CropRegion& r1, const CropRegion& r2) {
  long iy = std::max(0, std::min(r1.top + r1.crop_h, r2.top + r2.crop_h) -
                            std::max(r1.top, r2.top));
  long ix = std::max(0, std::min(r1.left + r1.crop_w, r2.left + r2.crop_w) -
                            std::max(r1.left, r2.left));
  long inter = iy * ix;
  long min_area = std::min(r1.area(), r2.area());
  if (min_area <= 0) throw std::invalid_argument("empty crop region");
  return static_cast<double>(inter) / static_cast<double>(min_area);
}

ViewPairPlan make_view_pair(MatchingMode mode, const CropConfig& cfg_s,
                            const CropConfig& cfg_t) {
  validate_crop_config(cfg_s);
  validate_crop_config(cfg_t);
  return {{source_is_local(mode), cfg_s}, {target_is_local(mode), cfg_t}};
}

AltKind parse_alt_kind(const std::string& name) {
  if (name == "shear") return AltKind::kShear;
  if (name == "rotation") return AltKind::kRotation;
  if (name == "translation") return AltKind::kTranslation;
  if (name == "color-jitter") return AltKind::kColorJitter;
  throw std::invalid_argument("unknown transform kind: " + name);
}

AltView sample_alt_transform(const AltTransform& t, Rng& rng) {
  AltView v;
  switch (t.kind) {
    case AltKind::kRotation: {
      double deg = rng.uniform(-t.max_rotation_deg, t.max_rotation_deg);
      double rad = deg * std::numbers::pi / 180.0;
      // Inverse rotation (rotate sampling grid the opposite way).
      v.a00 = std::cos(rad);
      v.a01 = std::sin(rad);
      v.a10 = -std::sin(rad);
      v.a11 = std::cos(rad);
      break;
    }
    case AltKind::kShear: {
      double s = rng.uniform(-t.max_shear, t.max_shear);
      v.a01 = -s;  // inverse of x' = x + s*y
      break;
    }
    case AltKind::kTranslation: {
      int span = 2 * t.max_translate_px + 1;
      v.ty = static_cast<double>(
          static_cast<long>(rng.uniform_int(span)) - t.max_translate_px);
      v.tx = static_cast<double>(
          static_cast<long>(rng.uniform_int(span)) - t.max_translate_px);
      break;
    }
    case AltKind::kColorJitter: {
      v.spatial = false;
      for (int c = 0; c < 3; ++c) {
        v.gain[c] = 1.0 + rng.uniform(-t.max_color_jitter, t.max_color_jitter);
        v.offset[c] = rng.uniform(-t.max_color_jitter, t.max_color_jitter) * 0.5;
      }
      break;
    }
  }
  return v;
}

namespace {

inline double clampd(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace

ImageTensor AltView::apply(const ImageTensor& img) const {
  ImageTensor out(img.h, img.w);
  if (!spatial) {
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        for (int c = 0; c < 3; ++c)
          out.at(y, x, c) =
              clampd(gain[c] * img.at(y, x, c) + offset[c], 0.0, 1.0);
    return out;
  }
  const double cy = (img.h - 1) / 2.0, cx = (img.w - 1) / 2.0;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      double sy = a00 * (y - cy) + a01 * (x - cx) + cy + ty;
      double sx = a10 * (y - cy) + a11 * (x - cx) + cx + tx;
      sy = clampd(sy, 0.0, img.h - 1.0);  // edge replication
      sx = clampd(sx, 0.0, img.w - 1.0);
      int y0 = static_cast<int>(std::floor(sy));
      int x0 = static_cast<int>(std::floor(sx));
      int y1 = std::min(y0 + 1, img.h - 1);
      int x1 = std::min(x0 + 1, img.w - 1);
      double fy = sy - y0, fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        double top = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
        double bot = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
        out.at(y, x, c) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

ImageTensor AltView::vjp(const ImageTensor& img, const ImageTensor& cot) const {
  ImageTensor grad(img.h, img.w);
  if (!spatial) {
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        for (int c = 0; c < 3; ++c) {
          double pre = gain[c] * img.at(y, x, c) + offset[c];
          if (pre > 0.0 && pre < 1.0)  // zero subgradient where clamped
            grad.at(y, x, c) = gain[c] * cot.at(y, x, c);
        }
    return grad;
  }
  const double cy = (img.h - 1) / 2.0, cx = (img.w - 1) / 2.0;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      double sy = a00 * (y - cy) + a01 * (x - cx) + cy + ty;
      double sx = a10 * (y - cy) + a11 * (x - cx) + cx + tx;
      sy = clampd(sy, 0.0, img.h - 1.0);
      sx = clampd(sx, 0.0, img.w - 1.0);
      int y0 = static_cast<int>(std::floor(sy));
      int x0 = static_cast<int>(std::floor(sx));
      int y1 = std::min(y0 + 1, img.h - 1);
      int x1 = std::min(x0 + 1, img.w - 1);
      double fy = sy - y0, fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        double g = cot.at(y, x, c);
        grad.at(y0, x0, c) += (1 - fy) * (1 - fx) * g;
        grad.at(y0, x1, c) += (1 - fy) * fx * g;
        grad.at(y1, x0, c) += fy * (1 - fx) * g;
        grad.at(y1, x1, c) += fy * fx * g;
      }
    }
  }
  return grad;
}

}  // namespace cropmatch
