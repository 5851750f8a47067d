#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cropmatch/image.hpp"

namespace cropmatch {

struct PreprocessSpec {
  int input_side = 64;
  double mean[3] = {0.5, 0.5, 0.5};
  double std[3] = {0.5, 0.5, 0.5};
};

/// Surrogate embedding model f_phi. Implementations must be deterministic
/// and immutable after construction; embed/embed_vjp are reentrant.
class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual const std::string& name() const = 0;
  virtual int input_side() const = 0;
  virtual int embed_dim() const = 0;
  /// Reception-field metadata; drives ensemble-composition ablations.
  virtual int patch_size() const = 0;
  virtual const PreprocessSpec& preprocess_spec() const = 0;
  /// Adapters without a gradient path must return false; the attack loop
  /// rejects them up front.
  virtual bool has_vjp() const = 0;

  /// Embedding of an already-preprocessed tensor (shape input_side^2 x 3,
  /// normalized scale).
  virtual std::vector<double> embed_pre(const ImageTensor& pre) const = 0;

  /// d<embed_pre(pre), cot>/d pre.
  virtual ImageTensor embed_vjp_pre(const ImageTensor& pre,
                                    const std::vector<double>& cot) const = 0;
};

/// resize to enc.input_side, then per-channel (x - mean) / std.
ImageTensor preprocess(const ImageTensor& img, const Encoder& enc);

/// VJP of preprocess: cotangent on the normalized tensor -> gradient on the
/// raw image.
ImageTensor preprocess_vjp(const ImageTensor& cot, const Encoder& enc,
                           int img_h, int img_w);

/// Convenience: embed_pre(preprocess(img)).
std::vector<double> embed(const Encoder& enc, const ImageTensor& img);

/// End-to-end VJP: d<embed(img), cot>/d img, chained through preprocessing.
ImageTensor embed_vjp(const Encoder& enc, const ImageTensor& img,
                      const std::vector<double>& cot);

/// Patch mean-pooling -> fixed seeded linear projection -> tanh. The
/// projection is N(0,1)/sqrt(n_features), bias N(0,1)*0.01, drawn from a
/// dedicated Rng so the same seed always gives bitwise-identical weights.
/// `linear` swaps tanh for identity (closed-form gradient checks).
class ToyEncoder : public Encoder {
 public:
  ToyEncoder(std::uint64_t seed, int input_side, int embed_dim, int patch_size,
             bool linear = false);

  const std::string& name() const override { return name_; }
  int input_side() const override { return spec_.input_side; }
  int embed_dim() const override { return embed_dim_; }
  int patch_size() const override { return patch_; }
  const PreprocessSpec& preprocess_spec() const override { return spec_; }
  bool has_vjp() const override { return true; }

  std::vector<double> embed_pre(const ImageTensor& pre) const override;
  ImageTensor embed_vjp_pre(const ImageTensor& pre,
                            const std::vector<double>& cot) const override;

  // Exposed for closed-form tests.
  const std::vector<double>& projection() const { return W_; }
  const std::vector<double>& bias() const { return b_; }
  int n_features() const { return n_feat_; }

 private:
  std::vector<double> pool(const ImageTensor& pre) const;

  std::string name_;
  PreprocessSpec spec_;
  int embed_dim_;
  int patch_;
  int grid_;     // input_side / patch
  int n_feat_;   // 3 * grid^2
  bool linear_;
  std::vector<double> W_;  // embed_dim x n_feat, row-major
  std::vector<double> b_;
};

struct EncoderEnsemble {
  std::vector<std::shared_ptr<Encoder>> members;
  std::vector<double> weights;  // empty means uniform

  void validate() const;
  double weight(std::size_t j) const;
};

/// The desk-scale default: three toy encoders, patch sizes 8/16/32, embed
/// dim 128, at the given input side. Member j is seeded seed + j.
EncoderEnsemble make_toy_ensemble(std::uint64_t seed, int input_side = 64,
                                  int embed_dim = 128);

double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b);

/// d CS(a,b) / d a = b/(|a||b|) - CS * a/|a|^2. Exactly zero at a == b.
std::vector<double> cosine_similarity_grad_a(const std::vector<double>& a,
                                             const std::vector<double>& b);

}  // namespace cropmatch
