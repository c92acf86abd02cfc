"""Gradient-check suite over the primitives and the composite models, at tiny dims in float64."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .gradcheck import GradCheckReport, grad_check
from .guidance import GuidanceBatch, GuidanceExtractor
from .head import TrajectoryHead
from .predictor import Predictor, PredictorConfig, assemble_full_sequence
from .tensor import Tensor, default_dtype

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


def _t(rng: np.random.Generator, *shape, scale: float = 1.0, name: str | None = None) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), name=name, dtype=np.float64)


def _weights(rng: np.random.Generator, shape) -> np.ndarray:
    # fixed random projection turning a tensor output into a scalar
    return rng.normal(size=shape)


def _scalar(out: Tensor, w: np.ndarray) -> Tensor:
    return T.sum(out * Tensor(w, dtype=np.float64))


def _case_unary(op) -> Case:
    def build(rng):
        x = _t(rng, 3, 4, name="x")
        w = _weights(rng, (3, 4))
        return (lambda: _scalar(op(x), w)), [x]
    return build


def _case_add(rng):
    a, b = _t(rng, 2, 3, 4, name="a"), _t(rng, 3, 4, name="b")
    w = _weights(rng, (2, 3, 4))
    return (lambda: _scalar(T.add(a, b), w)), [a, b]


def _case_mul(rng):
    a, b = _t(rng, 2, 3, 4, name="a"), _t(rng, 4, name="b")
    w = _weights(rng, (2, 3, 4))
    return (lambda: _scalar(T.mul(a, b), w)), [a, b]


def _case_div(rng):
    a = _t(rng, 3, 4, name="a")
    b = Tensor(2.0 + np.abs(rng.normal(size=(3, 4))), name="b", dtype=np.float64)
    w = _weights(rng, (3, 4))
    return (lambda: _scalar(T.div(a, b), w)), [a, b]


def _case_matmul(rng):
    a, b = _t(rng, 2, 3, 4, name="a"), _t(rng, 4, 5, name="b")
    w = _weights(rng, (2, 3, 5))
    return (lambda: _scalar(T.matmul(a, b), w)), [a, b]


def _case_affine(rng):
    x, wt, b = _t(rng, 3, 4, name="x"), _t(rng, 4, 2, name="w"), _t(rng, 2, name="b")
    w = _weights(rng, (3, 2))
    return (lambda: _scalar(T.affine(x, wt, b), w)), [x, wt, b]


def _case_layer_norm(rng):
    x, g, b = _t(rng, 3, 5, name="x"), _t(rng, 5, name="gain"), _t(rng, 5, name="bias")
    w = _weights(rng, (3, 5))
    return (lambda: _scalar(T.layer_norm(x, g, b), w)), [x, g, b]


def _case_mean_pool(rng):
    x = _t(rng, 2, 3, 4, name="x")
    w = _weights(rng, (2, 4))
    return (lambda: _scalar(T.mean_pool(x, axis=1), w)), [x]


def _case_attention(rng):
    q, k, v = _t(rng, 2, 3, 4, name="q"), _t(rng, 2, 5, 4, name="k"), _t(rng, 2, 5, 3, name="v")
    w = _weights(rng, (2, 3, 3))
    return (lambda: _scalar(T.scaled_dot_attention(q, k, v), w)), [q, k, v]


def _case_smooth_l1(rng):
    x, y = _t(rng, 3, 4, scale=2.0, name="x"), _t(rng, 3, 4, scale=2.0, name="y")
    return (lambda: T.smooth_l1(x, y, beta=1.0)), [x, y]


def _case_l2_norm(rng):
    x = _t(rng, 3, 4, name="x")
    w = _weights(rng, (3,))
    return (lambda: _scalar(T.l2_norm(x, axis=-1), w)), [x]


def _case_concat(rng):
    a, b = _t(rng, 2, 3, name="a"), _t(rng, 2, 2, name="b")
    w = _weights(rng, (2, 5))
    return (lambda: _scalar(T.concat([a, b], axis=1), w)), [a, b]


def _case_slice(rng):
    x = _t(rng, 4, 5, name="x")
    w = _weights(rng, (2, 3))
    return (lambda: _scalar(x[1:3, ::2], w)), [x]


def _case_reshape(rng):
    x = _t(rng, 2, 6, name="x")
    w = _weights(rng, (3, 4))
    return (lambda: _scalar(x.reshape(3, 4).transpose(1, 0).transpose(1, 0), w)), [x]


def _case_broadcast(rng):
    x = _t(rng, 3, 1, name="x")
    w = _weights(rng, (2, 3, 4))
    return (lambda: _scalar(T.broadcast(x, (2, 3, 4)), w)), [x]


def _case_rope(rng):
    x = _t(rng, 2, 3, 4, name="x")
    ang = rng.uniform(0, 3, size=(3, 2))
    w = _weights(rng, (2, 3, 4))
    return (lambda: _scalar(T.rope(x, np.cos(ang), np.sin(ang)), w)), [x]


PRIMITIVES: dict[str, Case] = {
    "add": _case_add,
    "mul": _case_mul,
    "div": _case_div,
    "matmul": _case_matmul,
    "affine": _case_affine,
    "layer_norm": _case_layer_norm,
    "softmax": _case_unary(lambda x: T.softmax(x, axis=-1)),
    "gelu": _case_unary(T.gelu),
    "mean_pool": _case_mean_pool,
    "scaled_dot_attention": _case_attention,
    "smooth_l1": _case_smooth_l1,
    "l2_norm": _case_l2_norm,
    "concat": _case_concat,
    "slice": _case_slice,
    "reshape_transpose": _case_reshape,
    "broadcast": _case_broadcast,
    "rope": _case_rope,
}


def _randomize(params: list[Tensor], rng: np.random.Generator, scale: float = 0.3) -> None:
    # zero-initialized heads would hide every conditioning path from the check
    for p in params:
        if not np.any(p.data):
            p.data = rng.normal(0.0, scale, size=p.shape)


def guided_model_case(mode: str) -> Case:
    """Full loss (latent SL1 + trajectory distance) through adapters, predictor and head."""

    def build(rng):
        cfg = PredictorConfig(d=4, d_p=4, depth=2, heads=2, n_patches=2, t_past=2, t_future=2, mode=mode)
        seed = int(rng.integers(1 << 30))
        model = Predictor(cfg, seed)
        ext = GuidanceExtractor(3, (0, 2), 4, 2, mode, np.random.default_rng(seed + 1), hidden=4)
        head = TrajectoryHead(4, 4, 1, np.random.default_rng(seed + 2))
        params = model.parameters() + ext.parameters() + head.parameters()
        _randomize(params, rng)
        batch = GuidanceBatch(rng.normal(size=(1, 2, 3)), rng.normal(size=(1, 2, 3)),
                              {0: rng.normal(size=(1, 2, 3)), 2: rng.normal(size=(1, 2, 3))})
        past = _t(rng, 1, 2, 2, 4, name="past")
        target = rng.normal(size=(1, 2, 2, 4))
        gt = rng.normal(0.5, 0.2, size=(1, 2, 1, 3))

        def f():
            pred = model(past, ext(batch))
            traj = head(assemble_full_sequence(past, pred))
            return T.smooth_l1(pred, Tensor(target)) + T.l2_norm(traj - Tensor(gt), axis=-1).mean()
        for i, p in enumerate(params):
            p.name = f"param{i}"
        return f, params + [past]
    return build


def head_case(rng):
    head = TrajectoryHead(3, 4, 2, np.random.default_rng(int(rng.integers(1 << 30))))
    params = head.parameters()
    tokens = _t(rng, 2, 4, 3, 3, name="tokens")
    w = _weights(rng, (2, 2, 2, 3))
    return (lambda: _scalar(head(tokens), w)), params + [tokens]


COMPOSITES: dict[str, Case] = {
    "guided_predictor[film]": guided_model_case("film"),
    "guided_predictor[cross_attention]": guided_model_case("cross_attention"),
    "guided_predictor[adaln]": guided_model_case("adaln"),
    "trajectory_head": head_case,
}


def run_case(case: Case, seed: int, eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    with default_dtype(np.float64):
        f, inputs = case(np.random.default_rng(seed))
        return grad_check(f, inputs, eps=eps, tol=tol, seed=seed)


def run_suite(seeds=range(20), composite_seeds=range(3), eps: float = 1e-5,
              tol: float = 1e-4) -> dict[str, GradCheckReport]:
    """Worst report per case name across the given seeds."""
    out: dict[str, GradCheckReport] = {}
    for cases, ss in ((PRIMITIVES, seeds), (COMPOSITES, composite_seeds)):
        for name, case in cases.items():
            reports = [run_case(case, s, eps, tol) for s in ss]
            failed = [r for r in reports if not r.passed]
            worst = failed[0] if failed else max(reports, key=lambda r: r.max_rel_error)
            out[name] = worst
    return out
