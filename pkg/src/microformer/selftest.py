"""Fast invariant checks runnable from an installed package (``microformer selftest``).

Output is deterministic: it contains measured errors but no timings.
"""
from __future__ import annotations

import tempfile
from typing import Callable

import numpy as np


def _gradients() -> tuple:
    from .ndcore import Tensor, check_gradients, ops
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    W = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    k = Tensor(rng.normal(size=(2, 1, 3, 3)), requires_grad=True)
    img = Tensor(rng.normal(size=(1, 1, 6, 6)), requires_grad=True)
    w = rng.normal(size=(3, 5))
    worst = max(
        check_gradients(lambda: ops.sum(ops.softmax(ops.linear(x, W)) * w), [x, W]),
        check_gradients(lambda: ops.sum(ops.layer_norm(x, np.ones(4), np.zeros(4)) * w[:, :4]), [x]),
        check_gradients(lambda: ops.sum(ops.conv2d(img, k) * 0.3), [img, k]),
        check_gradients(lambda: ops.sum(ops.attention(x, x, x) * w[:, :4]), [x]),
    )
    return worst < 1e-4, f"max relative error {worst:.3e}"


def _causality() -> tuple:
    from .seqmodel import Surrogate, preset
    rng = np.random.default_rng(1)
    m = Surrogate(preset("tiny"), rng).eval()
    e, s, mic = rng.normal(size=(1, 10, 3)), rng.normal(size=(1, 10, 4)), rng.normal(size=(1, 3))
    base = m(e, s, mic).data
    worst = 0.0
    for k in range(9):
        e2, s2 = e.copy(), s.copy()
        e2[:, k + 1:] += 1.0
        s2[:, k + 1:] -= 1.0
        worst = max(worst, float(np.abs(m(e2, s2, mic).data[:, :k + 1] - base[:, :k + 1]).max()))
    return worst < 1e-9, f"max leak {worst:.3e}"


def _plasticity() -> tuple:
    from .constitutive import j2_path, von_mises
    from .loadpath import cyclic_path, random_path
    rng = np.random.default_rng(2)
    vm, tr = 0.0, 0.0
    for i in range(50):
        p = random_path(rng) if i % 2 else cyclic_path(rng)
        stress, hist = j2_path(p.strain() * 3)
        vm = max(vm, float(von_mises(stress).max()))
        tr = max(tr, float(np.abs(hist[:, :3].sum(axis=1)).max()))
    gam = np.linspace(0, 0.03, 301)
    tau = float(j2_path(np.stack([0 * gam, 0 * gam, gam], 1))[0][-1, 3])
    ok = vm <= 20 + 1e-8 and tr < 1e-10 and abs(tau - 11.547) < 0.01
    return ok, f"max von Mises {vm:.9f}, max |tr eps_p| {tr:.1e}, shear plateau {tau:.6f}"


def _two_point() -> tuple:
    from . import kernels
    from .descriptors import fft_correlate
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(5):
        a = (rng.random((16, 16)) < 0.4).astype(float)
        worst = max(worst, float(np.abs(fft_correlate(a, a) - kernels.two_point_direct(a, a)).max()))
    return worst < 1e-10, f"FFT vs direct {worst:.3e} ({kernels.BACKEND} kernels)"


def _increments() -> tuple:
    from .loadpath import random_increment, step_norm
    rng = np.random.default_rng(4)
    n = np.array([step_norm(random_increment(rng, 5e-5, 2.5e-3)) for _ in range(2000)])
    return bool(n.min() >= 5e-5 and n.max() <= 2.5e-3), f"norms in [{n.min():.3e}, {n.max():.3e}]"


def _counts() -> tuple:
    from .convnet import ConvNetConfig, cnn_param_count
    from .pipeline import lr_schedule
    from .seqmodel import SurrogateConfig, decoder_param_count
    cnn, dec = cnn_param_count(ConvNetConfig()), decoder_param_count(SurrogateConfig())
    lrs = [lr_schedule(s, 512, 4000) for s in (1, 4000, 16000)]
    ok = cnn == 19_015_209 and dec == 25_224_192 and abs(lrs[1] - 2 * lrs[2]) < 1e-18
    return ok, f"cnn {cnn}, decoder {dec}, lr {lrs[0]:.4e}/{lrs[1]:.4e}/{lrs[2]:.4e}"


def _checkpoint() -> tuple:
    from .pipeline import SequenceRecord, Standardizer, load_checkpoint, save_checkpoint
    from .seqmodel import Surrogate, preset
    rng = np.random.default_rng(5)
    m = Surrogate(preset("tiny"), rng)
    recs = [SequenceRecord(str(i), rng.normal(size=(4, 3)), rng.normal(size=(4, 4)), "random")
            for i in range(3)]
    with tempfile.TemporaryDirectory() as d:
        save_checkpoint(f"{d}/ck", m, Standardizer.fit(recs))
        ck = load_checkpoint(f"{d}/ck")
    m.load_arrays({k: v.astype(np.float32).astype(np.float64) for k, v in m.state_arrays().items()})
    m.eval()
    e, mic = rng.normal(size=(1, 6, 3)), rng.normal(size=(1, 3))
    same = np.array_equal(ck.model.autoregressive_predict(e, mic), m.autoregressive_predict(e, mic))
    return same, "save/load predictions bitwise identical" if same else "predictions differ"


SUITES: dict = {
    "gradients": _gradients,
    "causality": _causality,
    "plasticity": _plasticity,
    "two-point": _two_point,
    "increments": _increments,
    "counts": _counts,
    "checkpoint": _checkpoint,
}


def run(write: Callable[[str], None] = print) -> bool:
    ok_all = True
    for name, fn in SUITES.items():
        try:
            ok, detail = fn()
        except Exception as err:           # report and keep going
            ok, detail = False, f"{type(err).__name__}: {err}"
        ok_all &= bool(ok)
        write(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok_all
