#pragma once

#include <string>

#include "cropmatch/image.hpp"
#include "cropmatch/rng.hpp"

namespace cropmatch {

/// Random-resized-crop parameters: area fraction in [scale_lo, scale_hi],
/// aspect ratio (w/h) log-uniform in [aspect_lo, aspect_hi].
struct CropConfig {
  double scale_lo = 0.5;
  double scale_hi = 1.0;
  double aspect_lo = 0.75;
  double aspect_hi = 4.0 / 3.0;
};

void validate_crop_config(const CropConfig& cfg);

struct CropRegion {
  int top = 0;
  int left = 0;
  int crop_h = 0;
  int crop_w = 0;

  long area() const { return static_cast<long>(crop_h) * crop_w; }
  bool operator==(const CropRegion&) const = default;
};

struct CropSample {
  CropRegion region;
  bool fallback = false;  // true when 10 attempts failed and the center
                          // crop of scale_hi was used instead
};

enum class MatchingMode { kGlobalGlobal, kLocalGlobal, kGlobalLocal, kLocalLocal };

MatchingMode parse_matching_mode(const std::string& name);
std::string to_string(MatchingMode mode);
bool source_is_local(MatchingMode mode);
bool target_is_local(MatchingMode mode);

/// Samples a crop region: area fraction uniform, aspect log-uniform,
/// position uniform over feasible offsets. Falls back to a centered crop of
/// scale_hi after 10 infeasible attempts.
CropSample sample_crop(const CropConfig& cfg, Rng& rng, int img_h, int img_w);

/// Crop then bilinear-resize to out_side x out_side.
ImageTensor apply_view(const ImageTensor& img, const CropRegion& region,
                       int out_side);

/// VJP of apply_view: cotangent on the view -> gradient on the full image,
/// zero outside the crop window.
ImageTensor apply_view_vjp(const ImageTensor& cot, const CropRegion& region,
                           int img_h, int img_w);

/// |r1 and r2| / min(|r1|, |r2|).
double overlap_fraction(const CropRegion& r1, const CropRegion& r2);

/// Per-iteration sampling plan for one side of the matching.
struct ViewPlan {
  bool local = false;
  CropConfig crop;
};

struct ViewPairPlan {
  ViewPlan source;
  ViewPlan target;
};

ViewPairPlan make_view_pair(MatchingMode mode, const CropConfig& cfg_s,
                            const CropConfig& cfg_t);

enum class AltKind { kShear, kRotation, kTranslation, kColorJitter };

AltKind parse_alt_kind(const std::string& name);

/// Ablation alternatives to random crops. Magnitudes are maxima; each
/// sample draws the actual parameters uniformly within them.
struct AltTransform {
  AltKind kind = AltKind::kRotation;
  double max_rotation_deg = 15.0;
  double max_shear = 0.2;            // shear factor
  int max_translate_px = 4;
  double max_color_jitter = 0.2;     // gain/offset half-range
};

/// A sampled, differentiable image-to-image view of unchanged size.
/// Spatial kinds resample with bilinear lookup and edge replication;
/// color jitter is a per-channel affine map.
struct AltView {
  bool spatial = true;
  // Inverse map: source coords = A * (out coords - center) + center + t.
  double a00 = 1.0, a01 = 0.0, a10 = 0.0, a11 = 1.0;
  double ty = 0.0, tx = 0.0;
  double gain[3] = {1.0, 1.0, 1.0};
  double offset[3] = {0.0, 0.0, 0.0};

  ImageTensor apply(const ImageTensor& img) const;
  ImageTensor vjp(const ImageTensor& img, const ImageTensor& cot) const;
};

AltView sample_alt_transform(const AltTransform& t, Rng& rng);

}  // namespace cropmatch
