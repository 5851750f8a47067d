#include "cropmatch/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace cropmatch {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "ifgsm") return OptimizerKind::kIfgsm;
  if (name == "mifgsm") return OptimizerKind::kMifgsm;
  if (name == "pgd-adam") return OptimizerKind::kPgdAdam;
  throw std::invalid_argument("unknown optimizer: " + name);
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kIfgsm: return "ifgsm";
    case OptimizerKind::kMifgsm: return "mifgsm";
    case OptimizerKind::kPgdAdam: return "pgd-adam";
  }
  throw std::logic_error("bad optimizer");
}

void validate_attack_config(const AttackConfig& cfg) {
  if (cfg.epsilon_255 < 1 || cfg.epsilon_255 > 255)
    throw std::invalid_argument("epsilon_255 must be in 1..255");
  if (cfg.steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (!(cfg.alpha_255 > 0.0))
    throw std::invalid_argument("alpha_255 must be positive");
  if (cfg.optimizer == OptimizerKind::kPgdAdam) {
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) ||
        !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
      throw std::invalid_argument("adam betas must be in [0,1)");
    if (!(cfg.eps_small > 0.0))
      throw std::invalid_argument("eps_small must be positive");
  }
  if (cfg.paste_back && cfg.optimizer != OptimizerKind::kIfgsm)
    throw std::invalid_argument("paste_back supports ifgsm only");
  validate_crop_config(cfg.crop_source);
  validate_crop_config(cfg.crop_target);
}

OptimizerState make_state(const AttackConfig& cfg, int h, int w) {
  OptimizerState st;
  st.delta = Perturbation(h, w, cfg.epsilon());
  const std::size_t n = st.delta.data.size();
  if (cfg.optimizer == OptimizerKind::kMifgsm) st.v.assign(n, 0.0);
  if (cfg.optimizer == OptimizerKind::kPgdAdam) {
    st.m.assign(n, 0.0);
    st.v2.assign(n, 0.0);
    st.t = 0;
  }
  return st;
}

void project(Perturbation& delta, const ImageTensor& clean) {
  const double eps = delta.epsilon;
  for (std::size_t i = 0; i < delta.data.size(); ++i) {
    double d = std::clamp(delta.data[i], -eps, eps);
    double adv = std::clamp(clean.data[i] + d, 0.0, 1.0);
    delta.data[i] = adv - clean.data[i];
  }
}

namespace {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_finite(const ImageTensor& grad) {
  for (double g : grad.data)
    if (!std::isfinite(g))
      throw std::runtime_error("non-finite gradient entry");
}

}  // namespace

void ifgsm_step(OptimizerState& state, const ImageTensor& grad,
                const ImageTensor& clean, const AttackConfig& cfg) {
  check_finite(grad);
  const double alpha = cfg.alpha();
  for (std::size_t i = 0; i < state.delta.data.size(); ++i)
    state.delta.data[i] += alpha * sgn(grad.data[i]);
  project(state.delta, clean);
}

void mifgsm_step(OptimizerState& state, const ImageTensor& grad,
                 const ImageTensor& clean, const AttackConfig& cfg) {
  check_finite(grad);
  const double alpha = cfg.alpha();
  if (cfg.mifgsm_normalize) {
    double l1 = 0.0;
    for (double g : grad.data) l1 += std::fabs(g);
    const double inv = l1 > 0.0 ? 1.0 / l1 : 0.0;
    for (std::size_t i = 0; i < state.v.size(); ++i)
      state.v[i] = cfg.beta * state.v[i] + grad.data[i] * inv;
  } else {
    for (std::size_t i = 0; i < state.v.size(); ++i)
      state.v[i] += cfg.beta * grad.data[i];
  }
  for (std::size_t i = 0; i < state.delta.data.size(); ++i)
    state.delta.data[i] += alpha * sgn(state.v[i]);
  project(state.delta, clean);
}

void pgd_adam_step(OptimizerState& state, const ImageTensor& grad,
                   const ImageTensor& clean, const AttackConfig& cfg) {
  check_finite(grad);
  state.t += 1;
  const double alpha = cfg.alpha();
  const double bc1 = 1.0 - std::pow(cfg.beta1, state.t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, state.t);
  for (std::size_t i = 0; i < state.delta.data.size(); ++i) {
    const double g = grad.data[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v2[i] = cfg.beta2 * state.v2[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v2[i] / bc2;
    state.delta.data[i] += alpha * mhat / (std::sqrt(vhat) + cfg.eps_small);
  }
  project(state.delta, clean);
}

SimilarityResult ensemble_similarity_and_grad(const EncoderEnsemble& ens,
                                              const ImageTensor& src_view,
                                              const ImageTensor& tgt_view) {
  ens.validate();
  SimilarityResult res;
  res.grad = ImageTensor(src_view.h, src_view.w);
  res.per_encoder.reserve(ens.members.size());
  for (std::size_t j = 0; j < ens.members.size(); ++j) {
    const Encoder& enc = *ens.members[j];
    if (!enc.has_vjp())
      throw std::invalid_argument(enc.name() + ": encoder has no gradient path");
    const double wj = ens.weight(j);
    std::vector<double> a = embed(enc, src_view);
    std::vector<double> b = embed(enc, tgt_view);
    const double s = cosine_similarity(a, b);
    res.per_encoder.push_back(s);
    res.similarity += wj * s;
    std::vector<double> ga = cosine_similarity_grad_a(a, b);
    ImageTensor gj = embed_vjp(enc, src_view, ga);
    for (std::size_t i = 0; i < res.grad.data.size(); ++i)
      res.grad.data[i] += wj * gj.data[i];
  }
  return res;
}

double ensemble_similarity(const EncoderEnsemble& ens, const ImageTensor& a,
                           const ImageTensor& b) {
  ens.validate();
  double sim = 0.0;
  for (std::size_t j = 0; j < ens.members.size(); ++j)
    sim += ens.weight(j) *
           cosine_similarity(embed(*ens.members[j], a), embed(*ens.members[j], b));
  return sim;
}

AttackResult run_attack(const ImageTensor& clean, const ImageTensor& target,
                        const AttackConfig& cfg, const EncoderEnsemble& ens,
                        Rng& rng) {
  validate_attack_config(cfg);
  ens.validate();
  validate_image(clean);
  validate_image(target);
  if (!clean.same_shape(target))
    throw std::invalid_argument("clean/target shape mismatch");

  const int h = clean.h, w = clean.w;
  const ViewPairPlan plan =
      make_view_pair(cfg.mode, cfg.crop_source, cfg.crop_target);
  OptimizerState state = make_state(cfg, h, w);

  AttackResult res;
  res.config = cfg;
  res.seed = cfg.seed;
  res.trace.reserve(cfg.steps);
  res.trace_per_encoder.reserve(cfg.steps);

  const CropRegion full{0, 0, h, w};
  for (int step = 0; step < cfg.steps; ++step) {
    ImageTensor adv(h, w);
    for (std::size_t i = 0; i < adv.data.size(); ++i)
      adv.data[i] = clean.data[i] + state.delta.data[i];

    CropRegion region_s = full;
    if (plan.source.local) {
      CropSample s = sample_crop(plan.source.crop, rng, h, w);
      region_s = s.region;
      res.crop_fallbacks += s.fallback ? 1 : 0;
    }
    ImageTensor src_view =
        plan.source.local ? apply_view(adv, region_s, h) : adv;

    ImageTensor tgt_view;
    if (plan.target.local) {
      CropSample t = sample_crop(plan.target.crop, rng, h, w);
      res.crop_fallbacks += t.fallback ? 1 : 0;
      tgt_view = apply_view(target, t.region, h);
    } else {
      tgt_view = target;
    }

    SimilarityResult sim = ensemble_similarity_and_grad(ens, src_view, tgt_view);
    if (!std::isfinite(sim.similarity))
      throw std::runtime_error("non-finite loss at step " +
                               std::to_string(step));
    res.trace.push_back(sim.similarity);
    res.trace_per_encoder.push_back(sim.per_encoder);

    if (cfg.paste_back && plan.source.local) {
      // Literal windowed update: step in view space, splat into the crop.
      ImageTensor step_view(src_view.h, src_view.w);
      const double alpha = cfg.alpha();
      for (std::size_t i = 0; i < step_view.data.size(); ++i)
        step_view.data[i] = alpha * sgn(sim.grad.data[i]);
      ImageTensor splat = apply_view_vjp(step_view, region_s, h, w);
      for (std::size_t i = 0; i < state.delta.data.size(); ++i)
        state.delta.data[i] += splat.data[i];
      project(state.delta, clean);
      continue;
    }

    ImageTensor g_full = plan.source.local
                             ? apply_view_vjp(sim.grad, region_s, h, w)
                             : std::move(sim.grad);
    switch (cfg.optimizer) {
      case OptimizerKind::kIfgsm:
        ifgsm_step(state, g_full, clean, cfg);
        break;
      case OptimizerKind::kMifgsm:
        mifgsm_step(state, g_full, clean, cfg);
        break;
      case OptimizerKind::kPgdAdam:
        pgd_adam_step(state, g_full, clean, cfg);
        break;
    }
  }

  res.delta = state.delta;
  res.adversarial = ImageTensor(h, w);
  for (std::size_t i = 0; i < res.adversarial.data.size(); ++i)
    res.adversarial.data[i] = clean.data[i] + state.delta.data[i];
  res.final_per_encoder.reserve(ens.members.size());
  for (const auto& member : ens.members)
    res.final_per_encoder.push_back(cosine_similarity(
        embed(*member, res.adversarial), embed(*member, target)));
  return res;
}

void write_trace_csv(const AttackResult& result, const EncoderEnsemble& ens,
                     const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "step,ensemble_similarity";
  for (const auto& m : ens.members) out << "," << m->name();
  out << "\n";
  for (std::size_t i = 0; i < result.trace.size(); ++i) {
    out << i << "," << result.trace[i];
    for (double s : result.trace_per_encoder[i]) out << "," << s;
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace cropmatch
