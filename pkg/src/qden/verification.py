"""Independent statistical and structural oracles.

Each check validates one mathematical claim the training objective leans
on: the noise moment identities behind the unbiasedness argument, the
unbiasedness of the estimated loss itself, the exact conditional
independence of coefficient pixels from their own input pixel, and the
receptive-field growth law. Negative controls (a corrupted estimator and
a corrupted mask) are run with inverted expectations so the suite proves
it can detect seeded bugs.

Monte-Carlo checks accept when the discrepancy is below 4 standard
errors; probes demand exact zeros or exact geometry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .autodiff import Tensor, backward, select
from .denoiser import apply_polynomial_map
from .image import GrayImage
from .losses import NoiseSpec, estimated_loss
from .masks import center_leak_masks, receptive_field_extent
from .network import NetworkConfig, NetworkParams, build_network, forward
from .noise import Rng, make_rng, sample_noise


@dataclass
class CheckResult:
    name: str
    statistic: float
    threshold: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name} statistic={self.statistic:.6g} threshold={self.threshold:.6g} {status}"


@dataclass
class MomentIdentityResult:
    """Paired Monte-Carlo comparison of one conditional-moment identity."""

    name: str
    lhs_mean: float
    rhs_mean: float
    lhs_se: float
    rhs_se: float
    diff_mean: float
    diff_se: float
    target: float
    passed: bool

    def check(self, prefix: str = "") -> CheckResult:
        return CheckResult(prefix + self.name, abs(self.diff_mean),
                           4.0 * self.diff_se, self.passed)


def moment_identity_check(x_val: float, spec: NoiseSpec, trials: int,
                          rng: Rng) -> List[MomentIdentityResult]:
    """Check E(Z^3 - 2 Z s2) = E(x Z^2), E(Z^2 - s2) = E(x Z), E(Z) = E(x).

    ``target`` carries the closed-form value of both sides for symmetric
    noise: x^3 + x s2, x^2 and x respectively.
    """
    if trials < 10_000:
        raise ValueError(f"need at least 10000 trials, got {trials}")
    x = float(x_val)
    s2 = spec.variance
    z = x + sample_noise((trials,), spec, rng)
    identities = (
        ("third_moment", z ** 3 - 2.0 * z * s2, x * z ** 2, x ** 3 + x * s2),
        ("second_moment", z ** 2 - s2, x * z, x ** 2),
        ("first_moment", z, np.full(trials, x), x),
    )
    results = []
    for name, lhs, rhs, target in identities:
        diff = lhs - rhs
        diff_se = float(diff.std(ddof=1) / np.sqrt(trials))
        diff_mean = float(diff.mean())
        results.append(MomentIdentityResult(
            name=name,
            lhs_mean=float(lhs.mean()), rhs_mean=float(rhs.mean()),
            lhs_se=float(lhs.std(ddof=1) / np.sqrt(trials)),
            rhs_se=float(rhs.std(ddof=1) / np.sqrt(trials)),
            diff_mean=diff_mean, diff_se=diff_se, target=float(target),
            passed=abs(diff_mean) < 4.0 * diff_se,
        ))
    return results


@dataclass
class IndependenceResult:
    passed: bool
    worst_abs_grad: float
    pixels_checked: int

    def check(self, name: str = "independence_probe") -> CheckResult:
        return CheckResult(name, self.worst_abs_grad, 0.0, self.passed)


def independence_probe(params: NetworkParams, z, samples: int,
                       rng: Optional[Rng] = None) -> IndependenceResult:
    """Autodiff gradient of each coefficient pixel w.r.t. its own input pixel.

    ``z`` is a normalized [H, W] array or a GrayImage. ``samples`` pixels
    are probed (all of them when samples >= H*W, in which case no rng is
    needed). Passes only if every gradient is exactly zero.
    """
    zn = z.to_normalized().pixels if isinstance(z, GrayImage) else np.asarray(z, float)
    h, w = zn.shape
    coords = [(r, c) for r in range(h) for c in range(w)]
    if samples < len(coords):
        if rng is None:
            raise ValueError("an rng is required when sampling a pixel subset")
        picks = rng.choice(len(coords), size=samples, replace=False)
        coords = [coords[int(i)] for i in picks]
    worst = 0.0
    n_maps = params.config.degree + 1
    for r, c in coords:
        for m in range(n_maps):
            zt = Tensor(zn, requires_grad=True)
            maps = forward(params, zt)
            amap = (maps.a0, maps.a1, maps.a2)[m]
            backward(select(amap, (r, c)))
            worst = max(worst, abs(float(zt.grad[r, c])))
    params.zero_grads()
    return IndependenceResult(passed=(worst == 0.0), worst_abs_grad=worst,
                              pixels_checked=len(coords))


@dataclass
class UnbiasednessResult:
    mean_est_loss: float
    mean_mse: float
    diff_mean: float
    diff_se: float
    trials: int
    passed: bool

    def check(self, name: str = "unbiasedness") -> CheckResult:
        return CheckResult(name, abs(self.diff_mean), 4.0 * self.diff_se, self.passed)


def unbiasedness_check(x: GrayImage, params: NetworkParams, spec: NoiseSpec,
                       trials: int, rng: Rng,
                       omit_penalty_offset: bool = False) -> UnbiasednessResult:
    """Monte-Carlo comparison of the estimated loss against the true MSE.

    Draws fresh noise ``trials`` times, evaluating both losses on each
    draw; passes when the paired mean difference is within 4 standard
    errors. Refuses to run if the conditional-independence probe fails,
    since the comparison is meaningless for a leaky network.

    ``omit_penalty_offset=True`` evaluates the deliberately corrupted
    estimator whose per-pixel correction lacks its constant -1 term
    (i.e. estimated loss + sigma^2); the result should then FAIL.
    """
    probe_rng = make_rng(20_000_000, stream=1)
    probe = independence_probe(params, x.to_normalized().pixels,
                               samples=12, rng=probe_rng)
    if not probe.passed:
        raise RuntimeError(
            "refusing to run: the conditional-independence probe failed "
            f"(worst |grad| = {probe.worst_abs_grad:.3g})"
        )
    clean = x.to_normalized().pixels
    sigma2 = (spec.sigma / 255.0) ** 2
    frozen = params.clone(requires_grad=False)
    degree = params.config.degree
    ests = np.empty(trials)
    mses = np.empty(trials)
    for i in range(trials):
        zn = clean + sample_noise(clean.shape, spec, rng) / 255.0
        coeffs = forward(frozen, zn)
        est = estimated_loss(zn, coeffs, sigma2, degree).item()
        if omit_penalty_offset:
            est += sigma2
        xhat = apply_polynomial_map(zn, coeffs, degree).data
        ests[i] = est
        mses[i] = float(np.mean((clean - xhat) ** 2))
    diffs = ests - mses
    diff_se = float(diffs.std(ddof=1) / np.sqrt(trials))
    diff_mean = float(diffs.mean())
    return UnbiasednessResult(
        mean_est_loss=float(ests.mean()), mean_mse=float(mses.mean()),
        diff_mean=diff_mean, diff_se=diff_se, trials=trials,
        passed=abs(diff_mean) < 4.0 * diff_se,
    )


@dataclass
class ReceptiveFieldResult:
    depth: int
    expected_k: int
    measured_k: int
    passed: bool

    def check(self) -> CheckResult:
        return CheckResult(f"receptive_field_depth{self.depth}",
                           self.measured_k, self.expected_k,
                           self.passed)


def receptive_field_probe(params: NetworkParams, image: Optional[np.ndarray] = None,
                          pixel: Optional[Tuple[int, int]] = None,
                          rng: Optional[Rng] = None,
                          delta: float = 1e-3) -> ReceptiveFieldResult:
    """Measure the context window of one output pixel by single-pixel perturbation.

    Perturbs every input pixel in turn and records which ones change any
    coefficient at the probed pixel; the measured extent is the side of
    the smallest square containing all of them.
    """
    depth = params.config.depth
    k = receptive_field_extent(depth)
    reach = (k - 1) // 2
    if image is None:
        if rng is None:
            rng = make_rng(0)
        n = k + 6
        image = rng.uniform(0.0, 1.0, size=(n, n))
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    if pixel is None:
        pixel = (h // 2, w // 2)
    r0, c0 = pixel
    if r0 - reach < 0 or c0 - reach < 0 or r0 + reach >= h or c0 + reach >= w:
        raise ValueError(
            f"probe pixel {pixel} too close to the border for a {k}x{k} window"
        )

    def coeff_values(z):
        maps = forward(params, z)
        tensors = [maps.a0, maps.a1] + ([maps.a2] if maps.a2 is not None else [])
        return np.array([t.data[r0, c0] for t in tensors])

    base = coeff_values(image)
    changed_rows, changed_cols = [], []
    for r in range(h):
        for c in range(w):
            bumped = image.copy()
            bumped[r, c] += delta
            if np.any(coeff_values(bumped) != base):
                changed_rows.append(r)
                changed_cols.append(c)
    if not changed_rows:
        measured = 0
    else:
        measured = max(max(changed_rows) - min(changed_rows),
                       max(changed_cols) - min(changed_cols)) + 1
    return ReceptiveFieldResult(depth=depth, expected_k=k, measured_k=measured,
                                passed=(measured == k))


# ---------------------------------------------------------------------------
# standard suites
# ---------------------------------------------------------------------------

def _fixed_clean_image(size: int = 16) -> GrayImage:
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    pix = 128.0 + 80.0 * np.sin(2.0 * np.pi * (0.13 * xx + 0.07 * yy)) \
        + 20.0 * np.cos(2.0 * np.pi * 0.21 * yy)
    return GrayImage(np.clip(pix, 0.0, 255.0))


def run_suite(suite: str, seed: int = 0) -> List[CheckResult]:
    """Run one named verification suite and return its check lines."""
    suites = {
        "moments": _suite_moments,
        "unbiasedness": _suite_unbiasedness,
        "independence": _suite_independence,
        "rf": _suite_rf,
    }
    if suite == "all":
        checks: List[CheckResult] = []
        for fn in suites.values():
            checks.extend(fn(seed))
        return checks
    if suite not in suites:
        raise ValueError(f"unknown suite {suite!r}; choose from "
                         f"{sorted(suites)} or 'all'")
    return suites[suite](seed)


def _suite_moments(seed: int) -> List[CheckResult]:
    checks = []
    for stream, dist in enumerate(("gaussian", "laplacian")):
        rng = make_rng(seed, stream=stream)
        results = moment_identity_check(2.0, NoiseSpec(1.0, dist), 10 ** 6, rng)
        checks.extend(r.check(prefix=f"moments_{dist}_") for r in results)
    return checks


def _suite_unbiasedness(seed: int) -> List[CheckResult]:
    x = _fixed_clean_image(16)
    params = build_network(NetworkConfig(depth=2, width=8, degree=2), seed=seed)
    checks = []
    for dist in ("gaussian", "laplacian"):
        rng = make_rng(seed, stream=10 + (dist == "laplacian"))
        res = unbiasedness_check(x, params, NoiseSpec(25.0, dist), 2000, rng)
        checks.append(res.check(name=f"unbiasedness_{dist}_sigma25"))
    rng = make_rng(seed, stream=12)
    control = unbiasedness_check(x, params, NoiseSpec(25.0, "gaussian"), 2000, rng,
                                 omit_penalty_offset=True)
    checks.append(CheckResult(
        "unbiasedness_negative_control_missing_offset",
        abs(control.diff_mean), 4.0 * control.diff_se,
        passed=not control.passed,
    ))
    return checks


def _suite_independence(seed: int) -> List[CheckResult]:
    rng = make_rng(seed, stream=20)
    z = rng.uniform(0.0, 1.0, size=(8, 8))
    params = build_network(NetworkConfig(depth=2, width=8, degree=2), seed=seed)
    res = independence_probe(params, z, samples=z.size)
    checks = [res.check(name="independence_exhaustive_8x8")]
    leaky = build_network(NetworkConfig(depth=2, width=8, degree=2), seed=seed,
                          mask_specs=center_leak_masks())
    control = independence_probe(leaky, z, samples=z.size)
    checks.append(CheckResult(
        "independence_negative_control_center_leak",
        control.worst_abs_grad, 0.0, passed=not control.passed,
    ))
    return checks


def _suite_rf(seed: int) -> List[CheckResult]:
    checks = []
    for depth in (1, 2, 3, 4):
        params = build_network(NetworkConfig(depth=depth, width=6, degree=2),
                               seed=seed + depth)
        res = receptive_field_probe(params, rng=make_rng(seed, stream=30 + depth))
        checks.append(res.check())
    return checks


def format_report(checks: List[CheckResult]) -> str:
    lines = [c.line() for c in checks]
    n_fail = sum(not c.passed for c in checks)
    lines.append(f"{len(checks) - n_fail}/{len(checks)} checks passed")
    return "\n".join(lines)
