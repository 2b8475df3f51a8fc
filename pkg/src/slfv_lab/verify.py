"""Release gate: analytic checks (fast) and the Monte Carlo suites (full).

Each criterion writes its CSVs under ``<root>/verify-<level>/cNN`` and returns
checks.  Only seeded quantities go into CSVs; timings stay in the manifest so
that two runs with the same seed produce byte-identical CSVs.
"""
from __future__ import annotations

import logging
import math
import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import io, rng
from .besov import lp_blocks, paraproducts
from .config import ExperimentConfig, kpp_stable_dt
from .environment import (
    coupled_environment,
    renormalization_constant,
    resonant_at,
    sample_environment,
)
from .experiments import (
    Check,
    bump_field,
    derived_seed,
    multiplier_eigenvalues,
    run_duality,
    run_kpp,
    run_schauder,
    run_slfv,
)
from .hamiltonian import Hamiltonian, eigenpairs
from .harness import RunManifest, output_root
from .slfv import ScalingRegime, simulate
from .torus import (
    Field,
    TorusGrid,
    a_n,
    a_n_realspace,
    chi_hat,
    nu0,
    pi_n,
    resolvent,
    theta_symbol,
)

log = logging.getLogger(__name__)

LEVELS = ("fast", "full")

# criterion 8 as stated: d=1, n=32, rho=2, T=0.5, 10^4 replicas within 30 minutes
DUALITY_TARGET = dict(n=32, rho=2.0, T=0.5, replicas=10_000, budget_s=1800.0)


def _random_field(grid: TorusGrid, seed: int, key: int) -> Field:
    g = rng.stream(seed, rng.TEST, key, grid.d, grid.N)
    return Field(grid, g.standard_normal(grid.shape))


# --------------------------------------------------------------------------
# fast level


def c01_nu0(seed: int, out: Path) -> list[Check]:
    """Second derivative of chi_hat at 0 by Richardson-extrapolated central differences."""
    rows, worst = [], 0.0
    for d in (1, 2):
        e = np.zeros(d)
        e[0] = 1.0

        def fd(h):
            k = np.array([h * e, 0 * e, -h * e]) if d == 2 else np.array([h, 0.0, -h])
            v = chi_hat(k, d)
            return (v[0] - 2 * v[1] + v[2]) / h**2

        h = 1e-3
        est = (4 * fd(h) - fd(2 * h)) / 3
        target = -((2 * math.pi) ** 2) * nu0(d) / 4
        rel = abs(est / target - 1)
        worst = max(worst, rel)
        rows.append((d, est, target, rel))
    io.write_csv(out / "nu0.csv", ("d", "finite_difference", "target", "relative_error"), rows)
    return [Check("c1-nu0", worst <= 1e-6, worst, "relative error of D^2 chi_hat(0)")]


def c02_operators(seed: int, out: Path) -> list[Check]:
    rows = []
    for d, n in ((1, 16), (2, 8)):
        grid = TorusGrid(d, n)
        f, g = _random_field(grid, seed, 1), _random_field(grid, seed, 2)
        A = a_n(f)
        rows.append((d, "A_n spectral vs real-space", (A - a_n_realspace(f)).norm(math.inf) / max(1.0, A.norm(math.inf)), 1e-12))
        lam = 1.0
        u = resolvent(f, n, lam)
        rows.append((d, "resolvent round trip", (lam * u - a_n(u) - f).norm(math.inf) / max(1.0, f.norm(math.inf)), 1e-12))
        H = Hamiltonian.from_environment(sample_environment(grid, seed=derived_seed(seed, 2, d)))
        scale = f.norm(2) * g.norm(2)
        for name, op in (("Pi_n", pi_n), ("A_n", a_n), ("H_n", H.apply)):
            err = abs(op(f).inner(g) - f.inner(op(g))) / scale
            rows.append((d, f"self-adjoint {name}", err, 1e-10))
        less, res, greater = paraproducts(f, g)
        rows.append((d, "Bony decomposition", (less + res + greater - f * g).norm(math.inf), 1e-10))
        rows.append((d, "LP partition", float(np.abs(lp_blocks(f).sum(axis=0) - f.values).max()), 1e-10))
    io.write_csv(out / "operators.csv", ("d", "check", "error", "tolerance"), rows)
    bad = [r for r in rows if not r[2] <= r[3]]
    worst = max(r[2] / r[3] for r in rows)
    return [Check("c2-operators", not bad, worst, "; ".join(f"d={r[0]} {r[1]}" for r in bad) or "max error/tolerance")]


def c03_schauder(seed: int, out: Path) -> list[Check]:
    cfg = ExperimentConfig(kind="schauder", seed=seed, d=1, n=(16, 32, 64, 128), corpus=50).validate()
    return [Check("c3-" + c.name, c.passed, c.value, c.detail) for c in run_schauder(cfg, out, out)]


def c04_zero_noise(seed: int, out: Path) -> list[Check]:
    rows, worst = [], 0.0
    for d, n, k in ((1, 16, 9), (2, 8, 9)):
        grid = TorusGrid(d, n)
        for v in (0.0, 0.7):
            H = Hamiltonian(grid, np.full(grid.shape, v))
            sp = eigenpairs(H, k)
            ref = multiplier_eigenvalues(grid, k, shift=v)
            err = float(np.abs(sp.values - ref).max())
            worst = max(worst, err)
            rows += [(d, n, v, i + 1, sp.values[i], ref[i]) for i in range(k)]
    io.write_csv(out / "zero_noise_spectrum.csv", ("d", "n", "potential", "index", "eigenvalue", "multiplier"), rows)
    return [Check("c4-zero-noise-spectrum", worst <= 1e-8, worst, "max |lambda_k - multiplier|")]


def c05_cn_trend(seed: int, out: Path) -> list[Check]:
    ns = (16, 32, 64, 128)
    cn = [renormalization_constant(n) for n in ns]
    ratio = [c / math.log(n) for c, n in zip(cn, ns)]
    diffs = np.diff(ratio)
    io.write_csv(out / "cn.csv", ("n", "c_n", "c_n_over_log_n"), zip(ns, cn, ratio))
    io.write_csv(out / "cn_differences.csv", ("n", "difference"), zip(ns[1:], diffs))
    # c_n / log n settles to a constant: the step sizes shrink
    dec = bool(np.all(np.diff(np.abs(diffs)) < 0))
    return [Check("c5-cn-log-trend", dec, float(abs(diffs[-1])), "|successive differences| of c_n/log n decrease")]


# --------------------------------------------------------------------------
# full level


def c05_resonant_mc(seed: int, out: Path, seeds: int = 1000) -> list[Check]:
    rows, checks = [], []
    for n in (8, 16, 32):
        grid = TorusGrid(2, n)
        c = renormalization_constant(n)
        v = np.array([
            resonant_at(sample_environment(grid, seed=derived_seed(seed, 5, n, i), c_n=c), (0, 0), 1.0)
            for i in range(seeds)
        ])
        mean, se = v.mean(), v.std(ddof=1) / math.sqrt(seeds)
        z = (mean - c) / se
        rows += [(n, "resonant", mean, se, c, z), (n, "diamond", mean - c, se, 0.0, z)]
        checks.append(Check(f"c5-resonant-tracks-cn-n{n}", abs(z) < 3, float(z), f"mean {mean:.4f} vs c_n {c:.4f}"))
        checks.append(Check(f"c5-diamond-centred-n{n}", abs(z) < 3, float(z), f"diamond mean {mean - c:.4f} +- {se:.4f}"))
    io.write_csv(out / "resonant_mc.csv", ("n", "statistic", "mean", "se", "reference", "z"), rows)
    return checks


def c06_eigen_trend(seed: int, out: Path, masters: int = 20) -> list[Check]:
    ns = (8, 16, 32, 64, 128)
    rows, mono, positive, diffs_all = [], 0, 0, []
    for i in range(masters):
        s = derived_seed(seed, 6, i)
        lam, pos = [], True
        for n in ns:
            sp = eigenpairs(Hamiltonian.from_environment(coupled_environment(TorusGrid(1, n), s)), 2)
            lam.append(sp.values[0])
            pos &= bool(sp.pairs[0].positive)
            rows.append((i, n, sp.values[0], sp.pairs[0].min_value))
        diffs = np.abs(np.diff(lam))
        diffs_all.append(diffs)
        mono += bool(np.all(np.diff(diffs) < 0))
        positive += pos
    io.write_csv(out / "eigen_trend.csv", ("master", "n", "lambda1", "min_e1"), rows)
    D = np.array(diffs_all)
    # supplementary: decay exponent of the median difference (not a gate)
    slope = float(np.polyfit(np.log(ns[:-1]), np.log(np.median(D, axis=0)), 1)[0])
    io.write_csv(out / "eigen_differences.csv", ("n", "median_abs_diff", "mean_abs_diff"),
                 zip(ns[:-1], np.median(D, axis=0), D.mean(axis=0)))
    frac = mono / masters
    return [
        Check("c6-monotone-differences", frac >= 0.9, frac, f"{mono}/{masters} seeds monotone"),
        Check("c6-positive-e1", positive == masters, positive / masters, f"{positive}/{masters} runs"),
        Check("c6-supplementary-decay-slope", True, slope, "log-log slope of the median difference (not gating)"),
    ]


def c07_martingale(seed: int, out: Path) -> list[Check]:
    cfg = ExperimentConfig(
        kind="slfv", seed=seed, d=1, n=(8,), rho=2.0, T=0.01, checkpoints=2, replicas=10_000, zero_noise=True,
    ).validate()
    return [Check("c7-" + c.name, c.passed, c.value, c.detail) for c in run_slfv(cfg, out, out)]


def c08_duality(seed: int, out: Path) -> list[Check]:
    tgt = DUALITY_TARGET
    grid = TorusGrid(1, tgt["n"])
    env = sample_environment(grid, seed=derived_seed(seed, 8))
    regime = ScalingRegime.sparse(1, tgt["n"], tgt["rho"])
    probe = 2_000_000
    t0 = time.perf_counter()
    p = simulate(env, regime, regime.initial_state(grid), tgt["T"], [0.0], [pi_n(bump_field(grid))],
                 seed=seed, max_events=probe)
    rate = p.events / (time.perf_counter() - t0)
    needed = regime.time_factor * tgt["T"] * tgt["replicas"]
    projected = needed / rate
    checks = [Check(
        "c8-duality-n32", projected <= tgt["budget_s"], projected,
        f"not run: {needed:.3g} events at {rate:.3g}/s projects to {projected / 3600:.3g} h "
        f"against {tgt['budget_s'] / 60:.0f} min",
    )]
    cfg = ExperimentConfig(
        kind="duality", seed=seed, d=1, n=(8,), rho=2.0, T=0.5, dt=0.005, checkpoints=5,
        replicas=10_000, eigen_count=1,
    ).validate()
    for c in run_duality(cfg, out, out):
        checks.append(Check("c8-supplementary-" + c.name, c.passed, c.value, c.detail))
    return checks


def c09_kpp(seed: int, out: Path) -> list[Check]:
    T2 = 0.25
    cfg2 = ExperimentConfig(
        kind="kpp", seed=seed, d=2, n=(8, 16, 32), kpp_n=32, scaling="diffusive", eta=1.0, regime="smooth",
        T=T2, dt=kpp_stable_dt(2, 32, 8, T2), checkpoints=5, replicas=4, output="d2",
    ).validate()
    T1 = 0.1
    cfg1 = ExperimentConfig(
        kind="kpp", seed=seed, d=1, n=(32,), kpp_n=8, scaling="diffusive", eta=1.0, regime="smooth",
        T=T1, dt=kpp_stable_dt(1, 8, 8, T1), checkpoints=2, replicas=1000, output="d1",
    ).validate()
    checks = []
    for cfg in (cfg2, cfg1):
        sub = out / cfg.output
        checks += [Check(f"c9-d{cfg.d}-" + c.name, c.passed, c.value, c.detail) for c in run_kpp(cfg, sub, out)]
    return checks


FAST: list[tuple[str, Callable]] = [
    ("c01", c01_nu0),
    ("c02", c02_operators),
    ("c03", c03_schauder),
    ("c04", c04_zero_noise),
    ("c05", c05_cn_trend),
]
FULL: list[tuple[str, Callable]] = FAST + [
    ("c05", c05_resonant_mc),
    ("c06", c06_eigen_trend),
    ("c07", c07_martingale),
    ("c08", c08_duality),
    ("c09", c09_kpp),
]


def verify_suite(level: str = "fast", seed: int = 1, root: str | Path | None = None) -> RunManifest:
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    out = output_root(root) / f"verify-{level}"
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    man = RunManifest(f"verify-{level}", f"verify-{level}-seed{seed}", __import__("slfv_lab").__version__, seed)
    timings = {}
    for tag, fn in FAST if level == "fast" else FULL:
        t0 = time.perf_counter()
        log.info("running %s (%s)", tag, fn.__name__)
        man.add(fn(seed, out / tag))
        timings[fn.__name__] = time.perf_counter() - t0
    man.add([Check(f"runtime-{k}", True, v, "seconds") for k, v in timings.items()])
    return man.finish(out, started)
