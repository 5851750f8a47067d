#include "cropmatch/encoders.hpp"

#include <cmath>
#include <stdexcept>

#include "cropmatch/rng.hpp"

namespace cropmatch {

ImageTensor preprocess(const ImageTensor& img, const Encoder& enc) {
  const PreprocessSpec& spec = enc.preprocess_spec();
  ImageTensor pre = resize_bilinear(img, spec.input_side, spec.input_side);
  for (int y = 0; y < pre.h; ++y)
    for (int x = 0; x < pre.w; ++x)
      for (int c = 0; c < 3; ++c)
        pre.at(y, x, c) = (pre.at(y, x, c) - spec.mean[c]) / spec.std[c];
  return pre;
}

ImageTensor preprocess_vjp(const ImageTensor& cot, const Encoder& enc,
                           int img_h, int img_w) {
  const PreprocessSpec& spec = enc.preprocess_spec();
  ImageTensor scaled = cot;
  for (int y = 0; y < scaled.h; ++y)
    for (int x = 0; x < scaled.w; ++x)
      for (int c = 0; c < 3; ++c)
        scaled.at(y, x, c) /= spec.std[c];
  return resize_bilinear_vjp(scaled, img_h, img_w);
}

std::vector<double> embed(const Encoder& enc, const ImageTensor& img) {
  return enc.embed_pre(preprocess(img, enc));
}

ImageTensor embed_vjp(const Encoder& enc, const ImageTensor& img,
                      const std::vector<double>& cot) {
  if (!enc.has_vjp())
    throw std::invalid_argument(enc.name() + ": encoder has no gradient path");
  ImageTensor pre = preprocess(img, enc);
  ImageTensor g_pre = enc.embed_vjp_pre(pre, cot);
  return preprocess_vjp(g_pre, enc, img.h, img.w);
}

ToyEncoder::ToyEncoder(std::uint64_t seed, int input_side, int embed_dim,
                       int patch_size, bool linear)
    : embed_dim_(embed_dim), patch_(patch_size), linear_(linear) {
  if (input_side < 1 || embed_dim < 1 || patch_size < 1)
    throw std::invalid_argument("toy encoder dims must be positive");
  if (input_side % patch_size != 0)
    throw std::invalid_argument("patch size must divide input side");
  spec_.input_side = input_side;
  grid_ = input_side / patch_size;
  n_feat_ = 3 * grid_ * grid_;
  name_ = (linear_ ? "toy-linear-p" : "toy-p") + std::to_string(patch_size);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n_feat_));
  W_.resize(static_cast<std::size_t>(embed_dim_) * n_feat_);
  for (double& w : W_) w = rng.normal() * scale;
  b_.resize(embed_dim_);
  for (double& b : b_) b = rng.normal() * 0.01;
}

std::vector<double> ToyEncoder::pool(const ImageTensor& pre) const {
  // Feature order: channel-major over the pooled grid (c, gy, gx).
  std::vector<double> u(n_feat_, 0.0);
  const double inv = 1.0 / (static_cast<double>(patch_) * patch_);
  for (int gy = 0; gy < grid_; ++gy)
    for (int gx = 0; gx < grid_; ++gx) {
      double sum[3] = {0.0, 0.0, 0.0};
      for (int py = 0; py < patch_; ++py)
        for (int px = 0; px < patch_; ++px)
          for (int c = 0; c < 3; ++c)
            sum[c] += pre.at(gy * patch_ + py, gx * patch_ + px, c);
      for (int c = 0; c < 3; ++c)
        u[(static_cast<std::size_t>(c) * grid_ + gy) * grid_ + gx] =
            sum[c] * inv;
    }
  return u;
}

std::vector<double> ToyEncoder::embed_pre(const ImageTensor& pre) const {
  if (pre.h != spec_.input_side || pre.w != spec_.input_side)
    throw std::invalid_argument(name_ + ": input shape mismatch");
  std::vector<double> u = pool(pre);
  std::vector<double> z(embed_dim_);
  for (int i = 0; i < embed_dim_; ++i) {
    double acc = b_[i];
    const double* row = &W_[static_cast<std::size_t>(i) * n_feat_];
    for (int k = 0; k < n_feat_; ++k) acc += row[k] * u[k];
    z[i] = linear_ ? acc : std::tanh(acc);
  }
  return z;
}

ImageTensor ToyEncoder::embed_vjp_pre(const ImageTensor& pre,
                                      const std::vector<double>& cot) const {
  if (static_cast<int>(cot.size()) != embed_dim_)
    throw std::invalid_argument(name_ + ": cotangent length mismatch");
  if (pre.h != spec_.input_side || pre.w != spec_.input_side)
    throw std::invalid_argument(name_ + ": input shape mismatch");
  std::vector<double> u = pool(pre);
  // dz, through tanh' where applicable
  std::vector<double> dz(embed_dim_);
  for (int i = 0; i < embed_dim_; ++i) {
    if (linear_) {
      dz[i] = cot[i];
    } else {
      double acc = b_[i];
      const double* row = &W_[static_cast<std::size_t>(i) * n_feat_];
      for (int k = 0; k < n_feat_; ++k) acc += row[k] * u[k];
      double t = std::tanh(acc);
      dz[i] = cot[i] * (1.0 - t * t);
    }
  }
  // du = W^T dz
  std::vector<double> du(n_feat_, 0.0);
  for (int i = 0; i < embed_dim_; ++i) {
    const double* row = &W_[static_cast<std::size_t>(i) * n_feat_];
    const double d = dz[i];
    for (int k = 0; k < n_feat_; ++k) du[k] += row[k] * d;
  }
  // unpool: each pixel in a patch receives du / patch^2
  ImageTensor g(spec_.input_side, spec_.input_side);
  const double inv = 1.0 / (static_cast<double>(patch_) * patch_);
  for (int gy = 0; gy < grid_; ++gy)
    for (int gx = 0; gx < grid_; ++gx)
      for (int c = 0; c < 3; ++c) {
        double v =
            du[(static_cast<std::size_t>(c) * grid_ + gy) * grid_ + gx] * inv;
        for (int py = 0; py < patch_; ++py)
          for (int px = 0; px < patch_; ++px)
            g.at(gy * patch_ + py, gx * patch_ + px, c) = v;
      }
  return g;
}

void EncoderEnsemble::validate() const {
  if (members.empty()) throw std::invalid_argument("empty ensemble");
  for (const auto& m : members)
    if (!m) throw std::invalid_argument("null ensemble member");
  if (!weights.empty()) {
    if (weights.size() != members.size())
      throw std::invalid_argument("weights/members length mismatch");
    double sum = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw std::invalid_argument("negative ensemble weight");
      sum += w;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("ensemble weights must sum to 1");
  }
}

double EncoderEnsemble::weight(std::size_t j) const {
  if (weights.empty()) return 1.0 / static_cast<double>(members.size());
  return weights[j];
}

EncoderEnsemble make_toy_ensemble(std::uint64_t seed, int input_side,
                                  int embed_dim) {
  EncoderEnsemble ens;
  int patches[3] = {8, 16, 32};
  for (int j = 0; j < 3; ++j)
    ens.members.push_back(std::make_shared<ToyEncoder>(
        seed + static_cast<std::uint64_t>(j), input_side, embed_dim,
        patches[j]));
  ens.validate();
  return ens;
}

double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine: length mismatch");
  if (a.empty()) throw std::invalid_argument("cosine: empty vectors");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> cosine_similarity_grad_a(const std::vector<double>& a,
                                             const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine grad: length mismatch");
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na2 += a[i] * a[i];
    nb2 += b[i] * b[i];
  }
  if (na2 == 0.0 || nb2 == 0.0)
    throw std::invalid_argument("cosine grad: zero vector");
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double s = dot / (na * nb);
  std::vector<double> g(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    g[i] = b[i] / (na * nb) - s * a[i] / na2;
  return g;
}

}  // namespace cropmatch
