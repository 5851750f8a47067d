#pragma once

#include <string>
#include <vector>

#include "cropmatch/encoders.hpp"
#include "cropmatch/image.hpp"
#include "cropmatch/rng.hpp"
#include "cropmatch/transforms.hpp"

namespace cropmatch {

enum class OptimizerKind { kIfgsm, kMifgsm, kPgdAdam };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

/// Budgets and step sizes are carried on the 0-255 scale and divided by 255
/// internally.
struct AttackConfig {
  int epsilon_255 = 16;
  int steps = 300;
  double alpha_255 = 1.0;
  OptimizerKind optimizer = OptimizerKind::kIfgsm;
  double beta = 1.0;           // mifgsm momentum
  bool mifgsm_normalize = false;  // classic l1-normalized accumulation
  double beta1 = 0.9;          // pgd-adam
  double beta2 = 0.999;
  double eps_small = 1e-8;
  MatchingMode mode = MatchingMode::kLocalGlobal;
  CropConfig crop_source;
  CropConfig crop_target;
  bool paste_back = false;     // literal windowed update (ifgsm only)
  std::uint64_t seed = 0;

  double epsilon() const { return epsilon_255 / 255.0; }
  double alpha() const { return alpha_255 / 255.0; }
};

void validate_attack_config(const AttackConfig& cfg);

struct OptimizerState {
  Perturbation delta;
  std::vector<double> v;    // mifgsm momentum
  std::vector<double> m;    // adam first moment
  std::vector<double> v2;   // adam second moment
  int t = 0;                // adam step counter; first update uses t=1
};

OptimizerState make_state(const AttackConfig& cfg, int h, int w);

/// Entrywise clip of delta to [-eps, eps], then clip clean+delta to [0,1]
/// and recompute delta.
void project(Perturbation& delta, const ImageTensor& clean);

/// delta <- project(delta + alpha * sign(g)); sign(0) = 0.
void ifgsm_step(OptimizerState& state, const ImageTensor& grad,
                const ImageTensor& clean, const AttackConfig& cfg);

/// v <- v + beta * g (unnormalized accumulation; the
/// mifgsm_normalize flag switches to v <- beta*v + g/|g|_1).
void mifgsm_step(OptimizerState& state, const ImageTensor& grad,
                 const ImageTensor& clean, const AttackConfig& cfg);

/// Adam moments with bias correction; t starts at 1.
void pgd_adam_step(OptimizerState& state, const ImageTensor& grad,
                   const ImageTensor& clean, const AttackConfig& cfg);

/// sum_j w_j * CS_j plus the matching gradient on the source view, chained
/// through each member's preprocessing.
struct SimilarityResult {
  double similarity = 0.0;
  std::vector<double> per_encoder;
  ImageTensor grad;
};

SimilarityResult ensemble_similarity_and_grad(const EncoderEnsemble& ens,
                                              const ImageTensor& src_view,
                                              const ImageTensor& tgt_view);

/// Similarity only (no gradient), full-image views.
double ensemble_similarity(const EncoderEnsemble& ens, const ImageTensor& a,
                           const ImageTensor& b);

struct AttackResult {
  ImageTensor adversarial;
  Perturbation delta;
  std::vector<double> trace;                    // per-step ensemble similarity
  std::vector<std::vector<double>> trace_per_encoder;  // steps x members
  std::vector<double> final_per_encoder;        // full-image CS after the run
  AttackConfig config;
  std::uint64_t seed = 0;
  int crop_fallbacks = 0;
};

/// The full iterative loop: sample views per mode, ascend the ensemble
/// similarity, pull the view gradient back to full resolution, step,
/// project.
AttackResult run_attack(const ImageTensor& clean, const ImageTensor& target,
                        const AttackConfig& cfg, const EncoderEnsemble& ens,
                        Rng& rng);

/// Writes "step,ensemble_similarity,<member names...>" CSV.
void write_trace_csv(const AttackResult& result, const EncoderEnsemble& ens,
                     const std::string& path);

}  // namespace cropmatch
