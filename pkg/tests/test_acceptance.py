"""Acceptance suite: ten end-to-end criteria, one PASS/FAIL line each."""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from rkbs_svm.cli import EXIT_OK, main
from rkbs_svm.finite_rkbs import FiniteRkbs, random_hermitian_pd
from rkbs_svm.function_space import RkbsModel, TrainingSet
from rkbs_svm.kernels import SpectralKernel, canonical_pair_check, gram_matrix, spectral_density
from rkbs_svm.lp_semi_inner import WeightedSequenceSpace, dual_element, lp_norm, semi_inner
from rkbs_svm.oracle import (
    QuadratureGrid,
    brute_force_minimize,
    finite_difference_gradient,
    quad_evaluate,
    quad_phi,
    quad_reproduction,
)
from rkbs_svm.solver import (
    LossSpec,
    Problem,
    RegularizerSpec,
    SolverConfig,
    fixed_point_residual,
    fixed_point_solve,
    gradient,
    objective,
    objective_batch,
    solve_p2_closed_form,
)

ROOT = Path(__file__).resolve().parents[1]
EPS = np.finfo(float).eps


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}")
        assert ok, detail

    return emit


def test_01_finite_rkbs_reproduction(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for m in range(100):
        n = 1 + m % 8
        a = random_hermitian_pd(n, rng, cond=100.0, complex_entries=bool(m % 2))
        for p in (4 / 3, 2.0, 4.0):
            worst = max(worst, FiniteRkbs(a, p).reproduction_check(rng, trials=10))
    report(1, "finite RKBS two-sided reproduction", worst <= 1e-10, f"worst residual {worst:.2e} (tol 1e-10)")


def test_02_semi_inner_axioms(report):
    rng = np.random.default_rng(7)
    worst = {"linearity": 0.0, "positivity": 0.0, "homogeneity": 0.0, "cauchy_schwarz": 0.0, "norm": 0.0}
    for _ in range(1000):
        size = int(rng.integers(1, 16))
        p = float(rng.choice([4 / 3, 1.5, 2.0, 3.0, 4.0]))
        sp = WeightedSequenceSpace(rng.uniform(0.05, 3.0, size), p)
        f, g, h = rng.standard_normal((3, size)) + 1j * rng.standard_normal((3, size))
        a, b, lam = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        nf, ng, nh = lp_norm(sp, f), lp_norm(sp, g), lp_norm(sp, h)
        lin = abs(semi_inner(sp, a * f + b * g, h) - a * semi_inner(sp, f, h) - b * semi_inner(sp, g, h))
        worst["linearity"] = max(worst["linearity"], lin / max(1.0, (abs(a) * nf + abs(b) * ng) * nh))
        worst["positivity"] = max(worst["positivity"], abs(semi_inner(sp, f, f) - nf**2) / max(1.0, nf**2))
        hom = abs(semi_inner(sp, f, lam * g) - np.conj(lam) * semi_inner(sp, f, g))
        worst["homogeneity"] = max(worst["homogeneity"], hom / max(1.0, abs(lam) * nf * ng))
        cs = abs(semi_inner(sp, f, g)) ** 2 - (semi_inner(sp, f, f) * semi_inner(sp, g, g)).real
        worst["cauchy_schwarz"] = max(worst["cauchy_schwarz"], cs / max(1.0, (nf * ng) ** 2))
        worst["norm"] = max(worst["norm"], abs(lp_norm(sp.conjugate(), dual_element(sp, f)) - nf) / max(1.0, nf))
    ok = max(worst["linearity"], worst["positivity"], worst["homogeneity"], worst["norm"]) <= 1e-12
    ok &= worst["cauchy_schwarz"] <= 1e-12
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (tol 1e-12, 1000 draws)"
    report(2, "semi-inner-product axioms and dual norm", ok, detail)


def test_03_matern_consistency(report):
    pair = 0.0
    statuses = set()
    for n in (1.0, 2.0):
        for theta in (0.5, 1.0, 2.0):
            res = canonical_pair_check(SpectralKernel(theta, n), QuadratureGrid(40.0 * theta, 2**14))
            pair = max(pair, res.discrepancy)
            statuses.add(res.status)
    semigroup = 0.0
    w = np.linspace(-100, 100, 4001)
    for n in (1.0, 2.0):
        for theta in (0.5, 1.0, 2.0):
            k = SpectralKernel(theta, n)
            for m in (1, 3, 5):
                lhs, rhs = spectral_density(k, w) ** m, spectral_density(k.power(m), w)
                # rounding of x**a is amplified by |log x**a|; measure in those units
                ulps = np.abs(lhs - rhs) / (rhs * EPS * np.maximum(1.0, np.abs(np.log(rhs))))
                semigroup = max(semigroup, float(np.max(ulps)))
    rng = np.random.default_rng(3)
    min_eig = np.inf
    for _ in range(50):
        size = int(rng.integers(1, 9))
        pts = rng.uniform(-3, 3, size)
        if size > 1 and np.min(np.diff(np.sort(pts))) < 1e-2:
            continue
        k = SpectralKernel(float(rng.choice([0.5, 1.0, 2.0])), float(rng.choice([1.0, 2.0])))
        min_eig = min(min_eig, float(np.min(np.linalg.eigvalsh(gram_matrix(k, pts)))))
    ok = statuses == {"pass"} and pair <= 1e-6 and semigroup <= 4 and min_eig > 0
    detail = f"pair discrepancy {pair:.1e} (tol 1e-6), semigroup {semigroup:.2f} ulp, min Gram eigenvalue {min_eig:.1e}"
    report(3, "Matérn normalization, semigroup, positive definiteness", ok, detail)


def test_04_closed_form_vs_quadrature(report):
    rng = np.random.default_rng(11)
    kernel = SpectralKernel(1.0, 2.0)
    grid = QuadratureGrid(40.0, 2**14)
    tol = 1e-4
    worst_eval = worst_phi = worst_rep = worst_delta = 0.0
    for size in (1, 2, 3):
        for trial in range(2):
            centers = np.sort(rng.uniform(-2, 2, size))
            c = rng.standard_normal(size) + (1j * rng.standard_normal(size) if trial else 0)
            model = RkbsModel(4, kernel, centers, c)
            xs = rng.uniform(-3, 3, 20)
            est = quad_evaluate(grid, kernel, 4, centers, c, xs)
            worst_eval = max(worst_eval, float(np.max(np.abs(est.value - model.evaluate(xs)))))
            worst_delta = max(worst_delta, est.delta)
            phi = model.phi()
            for j in range(size):
                q = quad_phi(grid, kernel, 4, centers, c, j)
                worst_phi = max(worst_phi, abs(q.value - phi[j]))
                worst_delta = max(worst_delta, q.delta)
            rep = quad_reproduction(grid, kernel, 4, model, xs)
            worst_rep = max(worst_rep, float(np.max(rep.value)))
            worst_delta = max(worst_delta, rep.delta)
    converged = worst_delta < tol / 2
    ok = converged and max(worst_eval, worst_phi, worst_rep) <= tol
    detail = (f"evaluate {worst_eval:.1e}, phi {worst_phi:.1e}, reproduction {worst_rep:.1e} (tol 1e-4), "
              f"refinement delta {worst_delta:.1e} (must be < 5e-5)")
    report(4, "even-p closed form vs spectral quadrature", ok, detail)


def test_05_gradient_vs_finite_differences(report):
    rng = np.random.default_rng(5)
    kernel = SpectralKernel(1.0, 2.0)
    regs = [RegularizerSpec("lambda_t_squared", 0.3), RegularizerSpec("lambda_t_power", 0.3, 1.5)]
    worst, count = 0.0, 0
    for loss in ("squared", "logistic", "squared_hinge"):
        for reg in regs:
            for p in (2, 4):
                xs = np.sort(rng.uniform(-2, 2, 3))
                ys = rng.standard_normal(3) if loss == "squared" else np.where(rng.standard_normal(3) > 0, 1.0, -1.0)
                prob = Problem(TrainingSet(xs, ys), kernel, p, LossSpec(loss), reg, real_mode=False)
                for _ in range(20):
                    c = rng.standard_normal(3) + 1j * rng.standard_normal(3)
                    g = gradient(prob, c)
                    fd = finite_difference_gradient(lambda z: objective(prob, z), c, 1e-6)
                    worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(g)))
                    count += 1
    report(5, "Wirtinger gradient vs central differences", worst <= 1e-5,
           f"worst relative error {worst:.1e} over {count} cases (tol 1e-5)")


def test_06_fixed_point_characterization(report):
    rng = np.random.default_rng(6)
    kernel = SpectralKernel(1.0, 2.0)
    worst_res, monotone, count = 0.0, True, 0
    for loss in ("squared", "logistic", "squared_hinge"):
        for p in (2, 4):
            for real in (True, False):
                xs = np.sort(rng.uniform(-2, 2, 4))
                ys = rng.standard_normal(4) if loss == "squared" else np.where(rng.standard_normal(4) > 0, 1.0, -1.0)
                prob = Problem(TrainingSet(xs, ys), kernel, p, LossSpec(loss), RegularizerSpec(lam=0.2), real_mode=real)
                c, diag = fixed_point_solve(prob)
                worst_res = max(worst_res, fixed_point_residual(prob, c))
                monotone &= bool(np.all(np.diff(diag.objective_trace) <= 0))
                count += 1
    report(6, "fixed-point residual and monotone objective", worst_res <= 1e-6 and monotone,
           f"worst residual {worst_res:.1e} (tol 1e-6), traces nonincreasing: {monotone}, {count} runs")


def test_07_hilbert_case(report):
    rng = np.random.default_rng(8)
    worst = 0.0
    for i in range(20):
        size = int(rng.integers(2, 21))
        xs = np.linspace(0.0, 0.6 * (size - 1), size) + rng.uniform(-0.1, 0.1, size)
        ys = rng.standard_normal(size)
        kernel = SpectralKernel(1.0, 1.0 + i % 2)
        lam = float(rng.uniform(0.05, 1.0))
        data = TrainingSet(xs, ys)
        prob = Problem(data, kernel, 2, LossSpec("squared"), RegularizerSpec(lam=lam), real_mode=True)
        # coefficient error is about cond(G(G + λI)) times the gradient tolerance
        c, _ = fixed_point_solve(prob, SolverConfig(init="zeros", grad_tol=1e-9))
        worst = max(worst, float(np.max(np.abs(c - solve_p2_closed_form(data, kernel, lam)))))
    report(7, "p=2 solver vs closed-form ridge", worst <= 1e-6, f"worst coefficient gap {worst:.1e} (tol 1e-6)")


def _item8_problem(seed, centers=None):
    rng = np.random.default_rng(seed)
    xs = np.sort(rng.uniform(-2, 2, 2))
    ys = rng.standard_normal(2)
    data = TrainingSet(xs, ys)
    return Problem(data, SpectralKernel(1.0, 2.0), 4, LossSpec("squared"), RegularizerSpec(lam=0.1),
                   centers=centers, real_mode=True)


def test_08_global_optimality(report):
    worst, flagged = 0.0, 0
    for seed in range(10):
        prob = _item8_problem(seed)
        c, _ = fixed_point_solve(prob)
        value = objective(prob, c)
        half = 2 * float(np.max(np.abs(c))) + 1
        res = brute_force_minimize(lambda z: objective_batch(prob, z), [-half] * 2, [half] * 2,
                                   rounds=100, shrink=0.8, starts=4, batched=True)
        worst = max(worst, abs(value - res.value))
        flagged += res.multimodal
    report(8, "solver vs brute-force global minimum (p=4, N=2)", worst <= 1e-6,
           f"worst objective gap {worst:.1e} over 10 seeds (tol 1e-6), multimodal flags {flagged}")


def test_09_representer(report):
    worst = -np.inf
    for seed in range(10):
        base = _item8_problem(seed)
        value = objective(base, fixed_point_solve(base)[0])
        pts = base.data.points[:, 0]
        extra = float(np.mean(pts) + 1.5)
        wide = _item8_problem(seed, centers=np.append(pts, extra))
        widened = objective(wide, fixed_point_solve(wide)[0])
        worst = max(worst, value - widened)
    report(9, "extra non-data center does not help", worst < 1e-6,
           f"largest improvement {worst:.1e} over 10 seeds (must be < 1e-6)")


def test_10_bench_report(report, tmp_path):
    out = tmp_path / "bench.json"
    start = time.perf_counter()
    code = main(["bench", "--config", str(ROOT / "configs" / "bench.json"), "--out", str(out), "--seed-override", "1"])
    elapsed = time.perf_counter() - start
    doc = json.loads(out.read_text(encoding="utf-8")) if out.exists() else {}
    results = doc.get("results", {})
    acc = {p: results.get(p, {}).get("test_accuracy") for p in ("p=2", "p=4")}
    ok = code == EXIT_OK and doc.get("n_train") == 20 and doc.get("seed") == 1
    ok &= all(isinstance(v, float) for v in acc.values())
    report(10, "bench report with p=2 and p=4 accuracies", ok,
           f"exit {code}, test accuracy p=2 {acc['p=2']}, p=4 {acc['p=4']}, {elapsed:.1f}s")
