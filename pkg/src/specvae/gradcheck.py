"""Finite-difference verification of every differentiable operator.

Central differences in float64 with step 1e-5 against the analytic backward
pass. Error metric per coordinate is |a - n| / (1 + |n|), i.e. absolute for
small gradients and relative for large ones; the suite passes when the max
over all ops stays under 1e-6.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

STEP = 1e-5
TOL = 1e-6


def _scalarize(out: Tensor, rng: np.random.Generator) -> Tensor:
    # weighted sum so every output coordinate influences the scalar
    w = rng.standard_normal(out.shape)
    return T.sum_(T.mul(out, Tensor(w, dtype=np.float64)))


def numeric_grad(f, arrays, i: int, coords, step: float = STEP) -> np.ndarray:
    """Central-difference df/d(arrays[i]) at the given flat coordinates."""
    base = [a.copy() for a in arrays]
    out = np.zeros(len(coords))
    flat = base[i].reshape(-1)
    for j, c in enumerate(coords):
        orig = flat[c]
        flat[c] = orig + step
        hi = f(base)
        flat[c] = orig - step
        lo = f(base)
        flat[c] = orig
        out[j] = (hi - lo) / (2.0 * step)
    return out


def check(build, arrays, max_coords: int | None = None, seed: int = 0,
          step: float = STEP) -> float:
    """Max FD error of build(list of Tensors) -> scalar Tensor over all inputs."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(tensors)
    if out.size != 1:
        raise ValueError("gradcheck build must return a scalar")
    out.backward()
    analytic = [t.grad.reshape(-1).copy() if t.grad is not None else np.zeros(t.size)
                for t in tensors]

    def f(arrs):
        with T.no_grad():
            return build([Tensor(a) for a in arrs]).item()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for i, a in enumerate(arrays):
        coords = np.arange(a.size)
        if max_coords is not None and a.size > max_coords:
            coords = rng.choice(a.size, size=max_coords, replace=False)
        num = numeric_grad(f, arrays, i, coords, step)
        ana = analytic[i][coords]
        err = np.abs(ana - num) / (1.0 + np.abs(num))
        worst = max(worst, float(err.max()))
    return worst


# -- the operator battery ------------------------------------------------------


def _rng(seed):
    return np.random.default_rng(seed)


def check_arithmetic():
    rng = _rng(10)
    a = rng.standard_normal((3, 1, 4))
    b = rng.standard_normal((2, 4)) + 3.0  # keep divisors away from zero

    def build(ts):
        x, y = ts
        s = T.add(T.mul(x, y), T.div(T.sub(x, y), y))
        return _scalarize(s, _rng(11))

    return check(build, [a, b])


def check_matmul():
    rng = _rng(20)
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((4, 5))

    def build(ts):
        return _scalarize(T.matmul(ts[0], ts[1]), _rng(21))

    return check(build, [a, b])


def check_pointwise():
    rng = _rng(30)
    x = rng.uniform(0.5, 2.0, size=(4, 5))

    def build(ts):
        t = ts[0]
        s = T.exp(T.mul(t, Tensor(0.3, dtype=np.float64)))
        s = T.add(s, T.log(t))
        s = T.add(s, T.sin(t))
        s = T.add(s, T.sqrt(t))
        s = T.add(s, T.square(t))
        s = T.add(s, T.pow_const(t, 0.3))
        return _scalarize(s, _rng(31))

    return check(build, [x])


def check_abs_leaky_clip():
    rng = _rng(40)
    # keep every coordinate at least 0.05 from the kink / clip boundaries
    x = rng.uniform(0.1, 0.9, size=(3, 6)) * rng.choice([-1.0, 1.0], size=(3, 6))

    def build(ts):
        t = ts[0]
        s = T.add(T.abs_(t), T.leaky_relu(t, 0.2))
        s = T.add(s, T.clip(t, -0.95, 0.95))
        return _scalarize(s, _rng(41))

    return check(build, [x])


def check_reductions():
    rng = _rng(50)
    x = rng.standard_normal((3, 4, 5))

    def build(ts):
        t = ts[0]
        s = T.sum_(T.mean(t, axis=2), axis=0, keepdims=True)
        s = T.add(s, T.mean(T.sum_(t, axis=(0, 2), keepdims=True)))
        return _scalarize(s, _rng(51))

    return check(build, [x])


def check_shape_ops():
    rng = _rng(60)
    x = rng.standard_normal((2, 3, 4))
    y = rng.standard_normal((2, 2, 4))

    def build(ts):
        a, b = ts
        c = T.concat([a, b], axis=1)
        c = T.transpose(c, (1, 0, 2))
        c = T.reshape(c, (5, 8))
        c = c[1:4, ::2]
        c = T.pad_constant(c, ((1, 0), (0, 2)))
        return _scalarize(c, _rng(61))

    return check(build, [x, y])


def check_conv_pointwise():
    rng = _rng(70)
    x = rng.standard_normal((2, 3, 4, 5))
    w = rng.standard_normal((4, 3, 1, 1)) * 0.5
    b = rng.standard_normal(4) * 0.1

    def build(ts):
        return _scalarize(T.conv2d(ts[0], ts[1], ts[2]), _rng(71))

    return check(build, [x, w, b])


def check_conv_depthwise():
    rng = _rng(80)
    x = rng.standard_normal((2, 3, 9, 11))
    w = rng.standard_normal((3, 1, 3, 5)) * 0.3
    b = rng.standard_normal(3) * 0.1

    def build(ts):
        out = T.conv2d(ts[0], ts[1], ts[2], stride=(2, 1), dilation=(1, 2),
                       padding=((1, 1), (8, 0)), groups=3)
        return _scalarize(out, _rng(81))

    return check(build, [x, w, b], max_coords=80)


def check_conv_general():
    rng = _rng(90)
    x = rng.standard_normal((2, 4, 6, 7))
    w = rng.standard_normal((6, 2, 3, 3)) * 0.3
    b = rng.standard_normal(6) * 0.1

    def build(ts):
        out = T.conv2d(ts[0], ts[1], ts[2], stride=(2, 2), dilation=(1, 1),
                       padding=((1, 1), (1, 1)), groups=2)
        return _scalarize(out, _rng(91))

    return check(build, [x, w, b], max_coords=80)


def check_upsample():
    rng = _rng(100)
    x = rng.standard_normal((2, 3, 4, 5))

    def build(ts):
        both = T.nearest_upsample2(ts[0], axes=(2, 3))
        time_only = T.nearest_upsample2(ts[0], axes=(3,))
        return T.add(_scalarize(both, _rng(101)), _scalarize(time_only, _rng(102)))

    return check(build, [x], max_coords=60)


def check_take_overlap():
    rng = _rng(110)
    x = rng.standard_normal((2, 20))
    idx = np.array([[0, 1, 2, 3], [2, 3, 4, 5], [4, 5, 6, 7]])

    def build(ts):
        frames = T.take_last(ts[0], idx)
        sig = T.overlap_add(frames, hop=2, length=12)
        return _scalarize(sig, _rng(111))

    return check(build, [x])


def check_rfft():
    rng = _rng(120)
    x = rng.standard_normal((3, 16))

    def build(ts):
        spec = T.rfft_packed(ts[0])
        return _scalarize(spec, _rng(121))

    return check(build, [x])


def check_rfft_odd():
    rng = _rng(125)
    x = rng.standard_normal((2, 15))

    def build(ts):
        return _scalarize(T.rfft_packed(ts[0]), _rng(126))

    return check(build, [x])


def check_irfft():
    rng = _rng(130)
    spec = np.random.default_rng(130).standard_normal((3, 9, 2))

    def build(ts):
        return _scalarize(T.irfft_packed(ts[0], n=16), _rng(131))

    return check(build, [spec])


def check_fft_roundtrip():
    rng = _rng(140)
    x = rng.standard_normal((2, 12))

    def build(ts):
        spec = T.rfft_packed(ts[0])
        mag2 = T.sum_(T.square(spec), axis=-1)
        comp = T.pow_const(T.add(mag2, Tensor(1e-6, dtype=np.float64)), 0.15)
        back = T.irfft_packed(spec, n=12)
        return T.add(_scalarize(comp, _rng(141)), _scalarize(back, _rng(142)))

    return check(build, [x])


def check_instance_norm_train():
    rng = _rng(150)
    x = rng.standard_normal((2, 3, 4, 5))
    gamma = rng.uniform(0.5, 1.5, 3)
    beta = rng.standard_normal(3) * 0.2

    def build(ts):
        rm = np.zeros(3)
        rv = np.ones(3)
        out = T.instance_norm(ts[0], ts[1], ts[2], rm, rv, training=True)
        return _scalarize(out, _rng(151))

    return check(build, [x, gamma, beta], max_coords=80)


def check_instance_norm_eval():
    rng = _rng(160)
    x = rng.standard_normal((2, 3, 4, 5))
    gamma = rng.uniform(0.5, 1.5, 3)
    beta = rng.standard_normal(3) * 0.2
    rm = rng.standard_normal(3) * 0.3
    rv = rng.uniform(0.5, 2.0, 3)

    def build(ts):
        out = T.instance_norm(ts[0], ts[1], ts[2], rm, rv, training=False)
        return _scalarize(out, _rng(161))

    return check(build, [x, gamma, beta], max_coords=80)


def check_snakebeta():
    rng = _rng(170)
    x = rng.standard_normal((2, 3, 4, 5))
    la = rng.standard_normal(3) * 0.3
    lb = rng.standard_normal(3) * 0.3

    def build(ts):
        return _scalarize(T.snakebeta(ts[0], ts[1], ts[2]), _rng(171))

    return check(build, [x, la, lb], max_coords=80)


def check_cosine():
    rng = _rng(180)
    a = rng.standard_normal((4, 6))
    b = rng.standard_normal((4, 6))

    def build(ts):
        return _scalarize(T.cosine_similarity(ts[0], ts[1]), _rng(181))

    return check(build, [a, b])


def check_composite_block():
    # pointwise conv -> snakebeta -> depthwise conv -> instance norm -> skip add
    rng = _rng(190)
    x = rng.standard_normal((1, 2, 8, 6))
    w1 = rng.standard_normal((4, 2, 1, 1)) * 0.5
    wd = rng.standard_normal((4, 1, 3, 2)) * 0.5
    la = rng.standard_normal(4) * 0.2
    lb = rng.standard_normal(4) * 0.2
    gamma = rng.uniform(0.8, 1.2, 4)
    beta = rng.standard_normal(4) * 0.1
    w2 = rng.standard_normal((2, 4, 1, 1)) * 0.5

    def build(ts):
        xt, t1, td, tla, tlb, tg, tb, t2 = ts
        h = T.conv2d(xt, t1, None)
        h = T.snakebeta(h, tla, tlb)
        h = T.conv2d(h, td, None, padding=((1, 1), (1, 0)), groups=4)
        rm, rv = np.zeros(4), np.ones(4)
        h = T.instance_norm(h, tg, tb, rm, rv, training=True)
        h = T.conv2d(h, t2, None)
        return _scalarize(T.add(h, xt), _rng(191))

    return check(build, [x, w1, wd, la, lb, gamma, beta, w2], max_coords=40)


def check_contrast_head():
    # linear -> per-feature snakebeta -> linear, the pair-projection stack
    rng = _rng(200)
    x = rng.standard_normal((3, 5))
    w1 = rng.standard_normal((5, 8)) * 0.5
    b1 = rng.standard_normal(8) * 0.1
    la = rng.standard_normal(8) * 0.2
    lb = rng.standard_normal(8) * 0.2
    w2 = rng.standard_normal((8, 8)) * 0.5
    b2 = rng.standard_normal(8) * 0.1

    def build(ts):
        xt, t1, tb1, tla, tlb, t2, tb2 = ts
        h = T.add(T.matmul(xt, t1), tb1)
        h = T.snakebeta(h, tla, tlb)
        h = T.add(T.matmul(h, t2), tb2)
        return _scalarize(h, _rng(201))

    return check(build, [x, w1, b1, la, lb, w2, b2], max_coords=60)


def check_teacher_head():
    # linear -> unit normalization, the embedding-matching stack
    rng = _rng(210)
    x = rng.standard_normal((3, 5))
    w = rng.standard_normal((5, 7)) * 0.5
    b = rng.standard_normal(7) * 0.1

    def build(ts):
        h = T.add(T.matmul(ts[0], ts[1]), ts[2])
        return _scalarize(T.l2_normalize(h, axis=-1), _rng(211))

    return check(build, [x, w, b])


def check_discriminator_small():
    # two strided conv + leaky layers and a pointwise head over a packed spectrum
    rng = _rng(220)
    x = rng.standard_normal((1, 2, 9, 7))
    w1 = rng.standard_normal((4, 2, 3, 3)) * 0.4
    b1 = rng.standard_normal(4) * 0.1
    w2 = rng.standard_normal((4, 4, 3, 3)) * 0.4
    b2 = rng.standard_normal(4) * 0.1
    wh = rng.standard_normal((1, 4, 1, 1)) * 0.4
    bh = rng.standard_normal(1) * 0.1

    def build(ts):
        xt, t1, tb1, t2, tb2, th, tbh = ts
        f1 = T.leaky_relu(T.conv2d(xt, t1, tb1, stride=(2, 1),
                                   padding=((1, 1), (1, 1))), 0.2)
        f2 = T.leaky_relu(T.conv2d(f1, t2, tb2, stride=(2, 2),
                                   padding=((1, 1), (1, 1))), 0.2)
        logit = T.conv2d(f2, th, tbh)
        return T.add(_scalarize(logit, _rng(221)),
                     T.add(_scalarize(f1, _rng(222)), _scalarize(f2, _rng(223))))

    return check(build, [x, w1, b1, w2, b2, wh, bh], max_coords=40)


def check_loss_mrstft():
    from . import losses
    rng = _rng(230)
    ref = rng.standard_normal((1, 200))
    hat = 0.3 * ref + 1.5 * rng.standard_normal((1, 200))  # keep |hat-ref| off the L1 kink

    def build(ts):
        return losses.mrstft_loss(ts[0], ref, windows=(61, 31))

    return check(build, [hat], max_coords=24)


def check_loss_kld():
    from . import losses
    rng = _rng(240)
    mu = rng.standard_normal((2, 3, 1, 4))
    logvar = rng.uniform(-1.5, 1.0, (2, 3, 1, 4))

    def build(ts):
        return losses.kld_loss(ts[0], ts[1])

    return check(build, [mu, logvar])


def check_loss_ntxent():
    from . import losses
    rng = _rng(250)
    proj = rng.standard_normal((6, 5))

    def build(ts):
        return losses.ntxent_loss(ts[0], temperature=0.7)

    return check(build, [proj])


def check_loss_teacher():
    from . import losses
    rng = _rng(260)
    student = rng.standard_normal((3, 6))
    target = rng.standard_normal((3, 6))
    valid = np.array([1.0, 0.0, 1.0])

    def build(ts):
        return losses.masked_teacher_loss(ts[0], target, valid)

    return check(build, [student])


def check_loss_lsgan():
    from . import losses
    rng = _rng(270)
    r1 = rng.standard_normal((2, 1, 3, 4))
    r2 = rng.standard_normal((2, 1, 2, 2))
    f1 = rng.standard_normal((2, 1, 3, 4))
    f2 = rng.standard_normal((2, 1, 2, 2))

    def build(ts):
        d = losses.lsgan_disc_loss([ts[0], ts[1]], [ts[2], ts[3]])
        g = losses.lsgan_gen_loss([ts[2], ts[3]])
        return T.add(d, g)

    return check(build, [r1, r2, f1, f2])


def check_loss_feature_matching():
    from . import losses
    rng = _rng(280)
    fa = rng.standard_normal((1, 2, 3, 4))
    fb = rng.standard_normal((1, 2, 2, 2))
    ra = rng.standard_normal((1, 2, 3, 4))
    rb = rng.standard_normal((1, 2, 2, 2))

    def build(ts):
        return losses.feature_matching_loss([[ts[0]], [ts[1]]], [[ra], [rb]])

    return check(build, [fa, fb])


SUITE = [
    ("arithmetic", check_arithmetic),
    ("matmul", check_matmul),
    ("pointwise", check_pointwise),
    ("abs_leaky_clip", check_abs_leaky_clip),
    ("reductions", check_reductions),
    ("shape_ops", check_shape_ops),
    ("conv_pointwise", check_conv_pointwise),
    ("conv_depthwise", check_conv_depthwise),
    ("conv_general", check_conv_general),
    ("upsample", check_upsample),
    ("take_overlap", check_take_overlap),
    ("rfft", check_rfft),
    ("rfft_odd", check_rfft_odd),
    ("irfft", check_irfft),
    ("fft_roundtrip", check_fft_roundtrip),
    ("instance_norm_train", check_instance_norm_train),
    ("instance_norm_eval", check_instance_norm_eval),
    ("snakebeta", check_snakebeta),
    ("cosine", check_cosine),
    ("composite_block", check_composite_block),
    ("contrast_head", check_contrast_head),
    ("teacher_head", check_teacher_head),
    ("discriminator_small", check_discriminator_small),
    ("loss_mrstft", check_loss_mrstft),
    ("loss_kld", check_loss_kld),
    ("loss_ntxent", check_loss_ntxent),
    ("loss_teacher", check_loss_teacher),
    ("loss_lsgan", check_loss_lsgan),
    ("loss_feature_matching", check_loss_feature_matching),
]


def run_suite(tol: float = TOL, verbose: bool = True) -> bool:
    """Run every FD check; prints one line per op, returns overall pass."""
    ok = True
    for name, fn in SUITE:
        err = fn()
        passed = err < tol
        ok = ok and passed
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'} {name:24s} max_err={err:.3e}")
    return ok
