#!/usr/bin/env python3
"""Straight-line reference implementation used to fix expected values for the
C++ test suite. Independent of the C++ code: everything here is written
directly from the update formulas.

Usage:
  python3 reference_attack.py bilinear   # print frozen interpolation values
  python3 reference_attack.py gain       # criterion bars: attack gain stats
  python3 reference_attack.py trends     # epsilon / crop-scale / mode trends
  python3 reference_attack.py centrality # heatmap centrality counts
"""

import sys
import math
import numpy as np


# ---------------------------------------------------------------------------
# bilinear resize, half-pixel centers, edge clamp
# ---------------------------------------------------------------------------

def _axis_weights(in_n, out_n):
    """Per output index: clamped floor/ceil source indices and the frac."""
    coords = (np.arange(out_n) + 0.5) * in_n / out_n - 0.5
    lo = np.floor(coords).astype(int)
    frac = coords - lo
    lo_c = np.clip(lo, 0, in_n - 1)
    hi_c = np.clip(lo + 1, 0, in_n - 1)
    return lo_c, hi_c, frac


def resize_bilinear(img, out_h, out_w):
    in_h, in_w = img.shape[0], img.shape[1]
    y0, y1, fy = _axis_weights(in_h, out_h)
    x0, x1, fx = _axis_weights(in_w, out_w)
    fy = fy[:, None, None] if img.ndim == 3 else fy[:, None]
    fx = fx[None, :, None] if img.ndim == 3 else fx[None, :]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_bilinear_vjp(cot, in_h, in_w):
    out_h, out_w = cot.shape[0], cot.shape[1]
    y0, y1, fy = _axis_weights(in_h, out_h)
    x0, x1, fx = _axis_weights(in_w, out_w)
    grad = np.zeros((in_h, in_w) + cot.shape[2:], dtype=np.float64)
    fy2 = fy[:, None, None] if cot.ndim == 3 else fy[:, None]
    fx2 = fx[None, :, None] if cot.ndim == 3 else fx[None, :]
    yy0 = np.broadcast_to(y0[:, None], (out_h, out_w))
    yy1 = np.broadcast_to(y1[:, None], (out_h, out_w))
    xx0 = np.broadcast_to(x0[None, :], (out_h, out_w))
    xx1 = np.broadcast_to(x1[None, :], (out_h, out_w))
    np.add.at(grad, (yy0, xx0), (1 - fy2) * (1 - fx2) * cot)
    np.add.at(grad, (yy0, xx1), (1 - fy2) * fx2 * cot)
    np.add.at(grad, (yy1, xx0), fy2 * (1 - fx2) * cot)
    np.add.at(grad, (yy1, xx1), fy2 * fx2 * cot)
    return grad


def print_bilinear_values():
    np.set_printoptions(precision=17, floatmode="maxprec")
    g = np.array([[0, 255], [128, 64]], dtype=np.float64) / 255.0
    print("2x2 bytes [[0,255],[128,64]]/255 -> 4x4:")
    print(repr(resize_bilinear(g, 4, 4)))
    print("same -> 3x3:")
    print(repr(resize_bilinear(g, 3, 3)))
    ramp = np.arange(16, dtype=np.float64).reshape(4, 4) / 15.0
    print("4x4 ramp /15, top-left 2x2 crop -> 4x4:")
    print(repr(resize_bilinear(ramp[:2, :2], 4, 4)))


# ---------------------------------------------------------------------------
# toy encoder: patch mean pooling -> fixed random projection -> tanh
# ---------------------------------------------------------------------------

class ToyEncoder:
    def __init__(self, rng, input_side, embed_dim, patch_size):
        self.side = input_side
        self.patch = patch_size
        k = input_side // patch_size
        self.k = k
        n_feat = 3 * k * k
        self.W = rng.standard_normal((embed_dim, n_feat)) / math.sqrt(n_feat)
        self.b = rng.standard_normal(embed_dim) * 0.01
        self.mean = 0.5
        self.std = 0.5

    def preprocess(self, img):
        x = resize_bilinear(img, self.side, self.side)
        return (x - self.mean) / self.std

    def pool(self, x):
        k, p = self.k, self.patch
        u = x.reshape(k, p, k, p, 3).mean(axis=(1, 3))  # k x k x 3
        return u.reshape(-1)

    def embed_pre(self, x):
        return np.tanh(self.W @ self.pool(x) + self.b)

    def embed(self, img):
        return self.embed_pre(self.preprocess(img))

    def embed_vjp_pre(self, x, cot):
        z = self.W @ self.pool(x) + self.b
        dz = cot * (1.0 - np.tanh(z) ** 2)
        du = self.W.T @ dz
        k, p = self.k, self.patch
        du_grid = du.reshape(k, k, 3)
        g = np.repeat(np.repeat(du_grid, p, axis=0), p, axis=1) / (p * p)
        return g

    def grad_img(self, img, cot):
        """d<embed(img), cot>/d img, chained through preprocess."""
        x = self.preprocess(img)
        g_pre = self.embed_vjp_pre(x, cot) / self.std
        return resize_bilinear_vjp(g_pre, img.shape[0], img.shape[1])


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def cosine_grad_a(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    s = a @ b / (na * nb)
    return b / (na * nb) - s * a / (na * na)


def ensemble_sim_and_grad(encs, src_view, tgt_view):
    m = len(encs)
    sim = 0.0
    grad = np.zeros_like(src_view)
    for enc in encs:
        a = enc.embed(src_view)
        bb = enc.embed(tgt_view)
        s = cosine(a, bb)
        sim += s / m
        ga = cosine_grad_a(a, bb)
        grad += enc.grad_img(src_view, ga) / m
    return sim, grad


# ---------------------------------------------------------------------------
# crop sampling (area uniform in [a,b], aspect log-uniform, offset uniform)
# ---------------------------------------------------------------------------

def sample_crop(rng, h, w, a, b, ar_lo=0.75, ar_hi=4.0 / 3.0):
    for _ in range(10):
        area = h * w * rng.uniform(a, b)
        r = math.exp(rng.uniform(math.log(ar_lo), math.log(ar_hi)))
        cw = round(math.sqrt(area * r))
        ch = round(math.sqrt(area / r))
        if 0 < cw <= w and 0 < ch <= h:
            top = rng.integers(0, h - ch + 1)
            left = rng.integers(0, w - cw + 1)
            return int(top), int(left), int(ch), int(cw)
    ch = max(1, min(h, round(h * math.sqrt(b))))
    cw = max(1, min(w, round(w * math.sqrt(b))))
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def smooth_image(rng, side):
    """Random low-frequency field per channel, clipped to [0,1].

    Kept low-contrast (base near mid-gray, small mode amplitudes) so a
    16/255 budget has real leverage over the pooled features; the frozen
    acceptance bars below assume exactly this recipe.
    """
    img = np.zeros((side, side, 3))
    ys, xs = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    for c in range(3):
        v = np.full((side, side), rng.uniform(0.45, 0.55))
        for _ in range(4):
            fy, fx = rng.uniform(0.5, 3.0, size=2)
            ph = rng.uniform(0, 2 * math.pi)
            amp = rng.uniform(0.03, 0.12)
            v += amp * np.cos(2 * math.pi * (fy * ys + fx * xs) / side + ph)
        img[:, :, c] = v
    return np.clip(img, 0.0, 1.0)


def run_attack(rng, encs, clean, target, eps, alpha, steps, mode, scale):
    h, w = clean.shape[0], clean.shape[1]
    delta = np.zeros_like(clean)
    src_local = mode in ("local-global", "local-local")
    tgt_local = mode in ("global-local", "local-local")
    for _ in range(steps):
        adv = clean + delta
        if src_local:
            t, l, ch, cw = sample_crop(rng, h, w, scale[0], scale[1])
            src_view = resize_bilinear(adv[t:t + ch, l:l + cw], h, w)
        else:
            t, l, ch, cw = 0, 0, h, w
            src_view = adv
        if tgt_local:
            tt, tl, tch, tcw = sample_crop(rng, h, w, scale[0], scale[1])
            tgt_view = resize_bilinear(target[tt:tt + tch, tl:tl + tcw], h, w)
        else:
            tgt_view = target
        _, g_view = ensemble_sim_and_grad(encs, src_view, tgt_view)
        g_crop = resize_bilinear_vjp(g_view, ch, cw)
        g_full = np.zeros_like(clean)
        g_full[t:t + ch, l:l + cw] = g_crop
        delta = np.clip(delta + alpha * np.sign(g_full), -eps, eps)
        delta = np.clip(clean + delta, 0.0, 1.0) - clean
    return delta


def global_gain(encs, clean, delta, target):
    m = len(encs)
    s_adv = sum(cosine(e.embed(clean + delta), e.embed(target)) for e in encs) / m
    s_cln = sum(cosine(e.embed(clean), e.embed(target)) for e in encs) / m
    return s_adv - s_cln, s_adv, s_cln


def make_ensemble(seed, side=64):
    rng = np.random.default_rng(seed)
    return [ToyEncoder(rng, side, 128, p) for p in (8, 16, 32)]


def gain_stats():
    side, eps, alpha, steps = 64, 16 / 255.0, 1 / 255.0, 300
    gains = []
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        encs = make_ensemble(50 + seed, side)
        clean = smooth_image(rng, side)
        target = smooth_image(rng, side)
        d = run_attack(rng, encs, clean, target, eps, alpha, steps,
                       "local-global", (0.5, 1.0))
        g, sa, sc = global_gain(encs, clean, d, target)
        gains.append(g)
        print(f"seed {seed:2d}: clean {sc:+.4f} adv {sa:+.4f} gain {g:+.4f}")
    print(f"mean gain over 20 seeds: {np.mean(gains):.4f} "
          f"(min {np.min(gains):.4f})")


def trends():
    side, alpha, steps = 64, 1 / 255.0, 300
    print("epsilon trend, local-global, scale [0.5,1.0], 10 seeds")
    for eps255 in (4, 8, 16):
        gains = []
        for seed in range(10):
            rng = np.random.default_rng(2000 + seed)
            encs = make_ensemble(70 + seed, side)
            clean = smooth_image(rng, side)
            target = smooth_image(rng, side)
            d = run_attack(rng, encs, clean, target, eps255 / 255.0, alpha,
                           steps, "local-global", (0.5, 1.0))
            gains.append(global_gain(encs, clean, d, target)[0])
        print(f"  eps {eps255:2d}: mean gain {np.mean(gains):.4f}")
    print("crop-scale trend, eps 16, 10 seeds")
    for scale in ((0.1, 0.4), (0.5, 0.9), (0.5, 1.0), (0.1, 0.9)):
        gains = []
        for seed in range(10):
            rng = np.random.default_rng(3000 + seed)
            encs = make_ensemble(90 + seed, side)
            clean = smooth_image(rng, side)
            target = smooth_image(rng, side)
            d = run_attack(rng, encs, clean, target, 16 / 255.0, alpha,
                           steps, "local-global", scale)
            gains.append(global_gain(encs, clean, d, target)[0])
        print(f"  scale {scale}: mean gain {np.mean(gains):.4f}")
    print("mode comparison (final global sim), eps 16, 20 seeds")
    sims = {m: [] for m in ("global-global", "local-global", "global-local",
                            "local-local")}
    for seed in range(20):
        for mode in sims:
            rng = np.random.default_rng(4000 + seed)
            encs = make_ensemble(110 + seed, side)
            clean = smooth_image(rng, side)
            target = smooth_image(rng, side)
            d = run_attack(rng, encs, clean, target, 16 / 255.0, alpha,
                           steps, mode, (0.5, 1.0))
            sims[mode].append(global_gain(encs, clean, d, target)[1])
    for mode, vals in sims.items():
        print(f"  {mode:14s}: mean final sim {np.mean(vals):.4f}")


def centrality():
    # Small crop scales concentrate coverage (and hence |delta|) centrally;
    # at [0.5, 1.0] every crop contains the center and the clip rail
    # saturates everywhere, washing the contrast out.
    side, steps = 64, 300
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(5000 + seed)
        encs = make_ensemble(130 + seed, side)
        clean = smooth_image(rng, side)
        target = smooth_image(rng, side)
        d = run_attack(rng, encs, clean, target, 16 / 255.0, 1 / 255.0,
                       steps, "local-global", (0.1, 0.4))
        mag = np.abs(d).mean(axis=2)
        half = round(side * math.sqrt(0.5))
        off = (side - half) // 2
        mask = np.zeros((side, side), dtype=bool)
        mask[off:off + half, off:off + half] = True
        inner = mag[mask].mean()
        outer = mag[~mask].mean()
        wins += inner > outer
        print(f"seed {seed:2d}: inner {inner:.5f} outer {outer:.5f} "
              f"{'WIN' if inner > outer else 'loss'}")
    print(f"centrality wins: {wins}/20")


if __name__ == "__main__":
    cmd = sys.argv[1] if len(sys.argv) > 1 else "bilinear"
    if cmd == "bilinear":
        print_bilinear_values()
    elif cmd == "gain":
        gain_stats()
    elif cmd == "trends":
        trends()
    elif cmd == "centrality":
        centrality()
    else:
        raise SystemExit(f"unknown command {cmd}")
