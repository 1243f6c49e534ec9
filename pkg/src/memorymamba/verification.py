"""Finite-difference gradient checks grouped by module.

Every primitive is checked through a random linear functional ``sum(W * op(x))``
so no output entry has a structurally zero weight. Inputs of the kinked ops
(``abs``, ``relu``, the hinge losses) are kept away from the kinks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .autodiff import Tensor, check_parameters, finite_diff_check, ops, relative_error
from .config import LossConfig, ModelConfig
from .errors import ConfigurationError

PRIMITIVE_TOL = 1e-6
MODEL_TOL = 1e-4
STEP = 1e-5
MODULES = ("tensor-autodiff", "ssm-scan", "memory", "fusion", "losses", "model")


@dataclass
class GradCheck:
    name: str
    module: str
    tolerance: float
    run: Callable[[], float]


@dataclass
class CheckResult:
    name: str
    module: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error <= self.tolerance


def _rng(tag: str) -> np.random.Generator:
    return np.random.default_rng([7, *tag.encode()])


def _arr(rng, shape, low=None, away=0.0):
    if low is not None:
        return rng.uniform(low, low + 1.5, size=shape)
    x = rng.normal(size=shape)
    if away:
        x = np.sign(x) * (away + np.abs(x))
    return x


def _functional(fn: Callable[..., Tensor], args: List[np.ndarray], wrt: int, weights: np.ndarray = None):
    """Scalar ``sum(W * fn(*args))`` as a function of ``args[wrt]``."""

    def f(x: Tensor) -> Tensor:
        inputs = [x if i == wrt else Tensor(a) for i, a in enumerate(args)]
        out = fn(*inputs)
        w = weights if weights is not None else _cache_weights(out.shape)
        return ops.sum(ops.mul(out, Tensor(w)))

    return f


_WEIGHTS: Dict[tuple, np.ndarray] = {}


def _cache_weights(shape) -> np.ndarray:
    if shape not in _WEIGHTS:
        _WEIGHTS[shape] = np.random.default_rng([11, *shape]).normal(size=shape)
    return _WEIGHTS[shape]


def _op_check(name: str, fn, shapes: Sequence, module="tensor-autodiff", tol=PRIMITIVE_TOL, **gen) -> List[GradCheck]:
    rng = _rng(name)
    specs = [s if isinstance(s, dict) else {"shape": s} for s in shapes]
    args = [_arr(rng, s["shape"], s.get("low"), s.get("away", 0.0)) for s in specs]
    checks = []
    for i, s in enumerate(specs):
        if s.get("const"):
            continue
        label = f"{name}[{i}]" if len(args) > 1 else name
        f = _functional(fn, args, i)
        checks.append(GradCheck(label, module, tol, lambda f=f, x=args[i]: finite_diff_check(f, Tensor(x.copy()), STEP)))
    return checks


def primitive_checks() -> List[GradCheck]:
    gather = np.array([[0, 2], [2, 1]])
    checks: List[GradCheck] = []
    add = checks.extend
    add(_op_check("add", ops.add, [(3, 4), (4,)]))
    add(_op_check("sub", ops.sub, [(3, 4), (3, 1)]))
    add(_op_check("mul", ops.mul, [(3, 4), (4,)]))
    add(_op_check("div", ops.div, [(3, 4), {"shape": (3, 4), "low": 0.5}]))
    add(_op_check("neg", ops.neg, [(5,)]))
    add(_op_check("scale", lambda x: ops.scale(x, -1.7), [(2, 3)]))
    add(_op_check("exp", ops.exp, [(3, 3)]))
    add(_op_check("log", ops.log, [{"shape": (3, 3), "low": 0.3}]))
    add(_op_check("sqrt", ops.sqrt, [{"shape": (3, 3), "low": 0.3}]))
    add(_op_check("abs", ops.abs, [{"shape": (3, 3), "away": 0.1}]))
    add(_op_check("sigmoid", ops.sigmoid, [(3, 4)]))
    add(_op_check("silu", ops.silu, [(3, 4)]))
    add(_op_check("relu", ops.relu, [{"shape": (3, 4), "away": 0.1}]))
    add(_op_check("softplus", ops.softplus, [(3, 4)]))
    add(_op_check("sum", lambda x: ops.sum(x, axis=1, keepdims=True), [(2, 3, 4)]))
    add(_op_check("mean", lambda x: ops.mean(x, axis=(0, 2)), [(2, 3, 4)]))
    add(_op_check("global_avg_pool", ops.global_avg_pool, [(2, 3, 3, 4)]))
    add(_op_check("reshape", lambda x: ops.reshape(x, (4, 6)), [(2, 3, 4)]))
    add(_op_check("transpose", lambda x: ops.transpose(x, (2, 0, 1)), [(2, 3, 4)]))
    add(_op_check("getitem", lambda x: ops.getitem(x, (slice(None), gather)), [(2, 3, 2)]))
    add(_op_check("take", lambda x: ops.take(x, np.array([2, 0, 2, 1]), axis=1), [(2, 3, 2)]))
    add(_op_check("concat", lambda a, b: ops.concat([a, b], axis=1), [(2, 3), (2, 2)]))
    add(_op_check("stack", lambda a, b: ops.stack([a, b], axis=1), [(2, 3), (2, 3)]))
    add(_op_check("matmul", ops.matmul, [(3, 4), (4, 2)]))
    add(_op_check("matmul_batched", ops.matmul, [(2, 3, 4), (2, 4, 2)]))
    add(_op_check("conv2d", lambda x, w: ops.conv2d(x, w, stride=2, padding=1), [(2, 2, 5, 5), (3, 2, 3, 3)]))
    add(_op_check("softmax", lambda x: ops.softmax(x, axis=-1), [(3, 4)]))
    add(_op_check("log_softmax", lambda x: ops.log_softmax(x, axis=0), [(3, 4)]))
    add(_op_check("layernorm", ops.layernorm, [(3, 5), (5,), (5,)]))
    add(_op_check("cosine_sim", ops.cosine_sim, [(3, 4), (3, 4)]))
    add(_op_check("norm", lambda x: ops.norm(x, axis=-1), [(3, 4)]))
    return checks


def _scan_checks() -> List[GradCheck]:
    from .scan import ScanParams, scan_kernel, selective_scan_1d, ss2d

    n, L, c, s = 2, 6, 3, 2
    rng = _rng("scan")
    args = [
        rng.normal(size=(n, L, c)),
        rng.uniform(0.1, 1.0, size=(n, L, c)),
        -rng.uniform(0.5, 2.0, size=(c, s)),
        rng.normal(size=(n, L, s)),
        rng.normal(size=(n, L, s)),
        rng.normal(size=c),
    ]
    names = ("u", "delta", "A", "B", "C", "D")
    checks = []
    for i, nm in enumerate(names):
        f = _functional(scan_kernel, args, i)
        checks.append(
            GradCheck(f"scan_kernel[{nm}]", "ssm-scan", PRIMITIVE_TOL, lambda f=f, x=args[i]: finite_diff_check(f, Tensor(x.copy()), STEP))
        )

    params = ScanParams(c, s, _rng("scan-params"), dt_min=0.1, dt_max=1.0).to(np.float64)
    u1 = rng.normal(size=(L, c))
    F = rng.normal(size=(1, 3, 2, c))
    checks.append(
        GradCheck(
            "selective_scan_1d[u]", "ssm-scan", PRIMITIVE_TOL,
            lambda: finite_diff_check(_functional(lambda x: selective_scan_1d(x, params), [u1], 0), Tensor(u1.copy()), STEP),
        )
    )
    checks.append(
        GradCheck(
            "ss2d[F]", "ssm-scan", PRIMITIVE_TOL,
            lambda: finite_diff_check(_functional(lambda x: ss2d(x, params), [F], 0), Tensor(F.copy()), STEP),
        )
    )

    def ss2d_params() -> float:
        W = _cache_weights(F.shape)
        errs = check_parameters(lambda: ops.sum(ops.mul(ss2d(Tensor(F), params), Tensor(W))), params.named_parameters(), STEP)
        return max(errs.values())

    checks.append(GradCheck("ss2d[params]", "ssm-scan", PRIMITIVE_TOL, ss2d_params))
    return checks


def _memory_checks() -> List[GradCheck]:
    from .memory import MemoryBank, QueryConv, aggregate, attention, memory_encode

    rng = _rng("memory")
    d = 4
    bank_c = MemoryBank(3, d, rng).to(np.float64)
    bank_f = MemoryBank(5, d, rng).to(np.float64)
    conv = QueryConv(d, rng).to(np.float64)
    h = rng.normal(size=(2, 3))
    Z = rng.normal(size=(2, 3, 3, d))

    def readout(x: Tensor) -> Tensor:
        r = memory_encode(x, conv, bank_c, bank_f)
        return ops.concat([r.M_c, r.M_f], axis=-1)

    def bank_params() -> float:
        W = _cache_weights((2, 2 * d))
        loss = lambda: ops.sum(ops.mul(readout(Tensor(Z)), Tensor(W)))
        named = [(f"c.{k}", v) for k, v in bank_c.named_parameters()] + [(f"f.{k}", v) for k, v in bank_f.named_parameters()]
        named += [(f"conv.{k}", v) for k, v in conv.named_parameters()]
        return max(check_parameters(loss, named, STEP).values())

    return [
        GradCheck(
            "attention+aggregate[h]", "memory", PRIMITIVE_TOL,
            lambda: finite_diff_check(_functional(lambda x: aggregate(attention(x), bank_c), [h], 0), Tensor(h.copy()), STEP),
        ),
        GradCheck("memory_encode[Z]", "memory", PRIMITIVE_TOL, lambda: finite_diff_check(_functional(readout, [Z], 0), Tensor(Z.copy()), STEP)),
        GradCheck("memory_encode[params]", "memory", PRIMITIVE_TOL, bank_params),
    ]


def _fusion_checks() -> List[GradCheck]:
    from .fusion import fuse

    rng = _rng("fusion")
    args = [rng.normal(size=(2, 4)), rng.normal(size=(2, 4)), rng.normal(size=(2, 3, 2, 4))]
    checks = []
    for kind in ("cosine", "l1", "l2"):
        for i, nm in enumerate(("M_c", "M_f", "Z")):
            f = _functional(lambda a, b, z, kind=kind: fuse(a, b, z, kind), args, i)
            checks.append(
                GradCheck(f"fuse[{kind},{nm}]", "fusion", PRIMITIVE_TOL, lambda f=f, x=args[i]: finite_diff_check(f, Tensor(x.copy()), STEP))
            )
    return checks


def _loss_checks() -> List[GradCheck]:
    from .losses import contrastive_coarse, cross_entropy, info_nce
    from .nn import MLP

    rng = _rng("losses")
    logits = rng.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 2])
    h_c = rng.normal(size=(6, 5))
    c_labels = np.array([0, 1, 2, 0, 1, 2])
    z = rng.normal(size=(4, 3))
    m = rng.normal(size=(4, 3))
    proj = MLP(3, 3, 3, rng).to(np.float64)
    checks = [
        GradCheck("cross_entropy", "losses", PRIMITIVE_TOL, lambda: finite_diff_check(lambda x: cross_entropy(x, labels), Tensor(logits.copy()), STEP)),
        GradCheck("info_nce[z]", "losses", PRIMITIVE_TOL, lambda: finite_diff_check(lambda x: info_nce(x, Tensor(m), proj), Tensor(z.copy()), STEP)),
        GradCheck("info_nce[M_f]", "losses", PRIMITIVE_TOL, lambda: finite_diff_check(lambda x: info_nce(Tensor(z), x, proj), Tensor(m.copy()), STEP)),
    ]
    for form, delta in (("separating", -0.2), ("as_printed", 0.6)):
        for kind in ("cosine", "l2"):
            d = delta if kind == "cosine" else 4.0 if form == "separating" else 1.0
            checks.append(
                GradCheck(
                    f"contrastive[{form},{kind}]", "losses", PRIMITIVE_TOL,
                    lambda d=d, form=form, kind=kind: finite_diff_check(
                        lambda x: contrastive_coarse(x, c_labels, d, form, kind), Tensor(h_c.copy()), STEP
                    ),
                )
            )
    return checks


def micro_config(**overrides) -> ModelConfig:
    """The one-block model used for the end-to-end check: width 8, state 2, 8x8 input."""
    base = dict(
        image_size=8,
        num_classes=3,
        stage_depths=[1],
        stage_dims=[8],
        state_dim=2,
        mem_coarse_size=3,
        mem_fine_size=4,
        head_hidden=6,
        # larger initial steps keep every A_log gradient well above finite-difference noise
        dt_min=0.1,
        dt_max=1.0,
    )
    base.update(overrides)
    return ModelConfig(**base)


def micro_model_errors(cfg: Optional[ModelConfig] = None, seed: int = 5) -> Dict[str, float]:
    """Per-parameter relative error of the full training loss of the micro-model.

    The elementwise error is only meaningful for entries well above the
    finite-difference noise floor (about one ulp of the loss over ``2h``); the
    fixed seed gives a model whose smallest gradient entries clear it.
    """
    from .losses import compute_losses
    from .model import MemoryMamba

    cfg = cfg or micro_config()
    model = MemoryMamba(cfg, seed=seed).to(np.float64)
    rng = np.random.default_rng([seed, 1])
    images = Tensor(rng.normal(size=(4, cfg.image_size, cfg.image_size, cfg.in_channels)))
    labels = np.array([0, 1, 2, 1]) % cfg.num_classes
    loss_cfg = LossConfig(lambda_c=1.0, lambda_f=1.0)
    return check_parameters(lambda: compute_losses(model, model(images), labels, loss_cfg)["total"], model.named_parameters(), STEP)


def _model_checks() -> List[GradCheck]:
    return [GradCheck("micro_model[total_loss]", "model", MODEL_TOL, lambda: max(micro_model_errors().values()))]


def all_checks(modules: Optional[Iterable[str]] = None) -> List[GradCheck]:
    wanted = set(modules) if modules else set(MODULES)
    unknown = wanted - set(MODULES)
    if unknown:
        raise ConfigurationError(f"unknown gradcheck module(s) {sorted(unknown)}; choose from {', '.join(MODULES)}")
    builders = {
        "tensor-autodiff": primitive_checks,
        "ssm-scan": _scan_checks,
        "memory": _memory_checks,
        "fusion": _fusion_checks,
        "losses": _loss_checks,
        "model": _model_checks,
    }
    checks: List[GradCheck] = []
    for mod in MODULES:
        if mod in wanted:
            checks.extend(builders[mod]())
    return checks


def run_checks(checks: Iterable[GradCheck]) -> List[CheckResult]:
    results = []
    for chk in checks:
        t0 = time.perf_counter()
        try:
            err = chk.run()
        except ArithmeticError:
            err = float("inf")
        results.append(CheckResult(chk.name, chk.module, err, chk.tolerance, time.perf_counter() - t0))
    return results


def format_table(results: Sequence[CheckResult]) -> str:
    width = max(len(r.name) for r in results) if results else 10
    lines = [f"{'check':<{width}}  {'module':<15}  {'max rel-err':>11}  {'tol':>7}  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.module:<15}  {r.error:11.3e}  {r.tolerance:7.0e}  {'PASS' if r.passed else 'FAIL'}")
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results) - failed}/{len(results)} checks passed")
    return "\n".join(lines)


__all__ = [
    "CheckResult",
    "GradCheck",
    "MODULES",
    "all_checks",
    "format_table",
    "micro_config",
    "micro_model_errors",
    "relative_error",
    "run_checks",
]
