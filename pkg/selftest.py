"""
Fast invariant suite behind `main.py selftest`

Each check returns a named pass/fail result; a check that raises counts as a
failure carrying the exception text.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from baselines import LinearHead, NcmModel, SldaModel
from clp_model import ClpModel
from clp_rules import UpdateInputs, angle_between, norm_drift, update_explicit, update_selfnorm
from core import Rng
from harness import compare_learning_modes
from quantize import INT7, alpha_for_goodness, fixed_update, quantize_vec
from snn_sim import SnnNetwork, SnnParams

logger = logging.getLogger(__name__)

DRIFT_TOLERANCE = 1e-10


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _unit_pairs(rng: Rng, count: int, d: int) -> Tuple[np.ndarray, np.ndarray]:
    return rng.unit_vectors(count, d), rng.unit_vectors(count, d)


def check_norm_drift_law(drift_constant: float = 1.0, cases: int = 10_000) -> Tuple[bool, str]:
    rng = Rng(101)
    ws, xs = _unit_pairs(rng, cases, 16)
    alphas = 0.3 * (1.0 - rng.uniform(cases))
    signs = np.where(rng.uniform(cases) < 0.5, -1, 1)
    worst = 0.0
    for w, x, alpha, r in zip(ws, xs, alphas, signs):
        u = UpdateInputs.build(w, x, float(alpha), int(r))
        expected = drift_constant * alpha * alpha * (1.0 - u.y * u.y)
        worst = max(worst, abs(norm_drift(u) - expected))
    return worst <= DRIFT_TOLERANCE, f"max |drift - law| = {worst:.3e}"


def check_second_order_agreement(cases: int = 1_000) -> Tuple[bool, str]:
    """Self-normalizing and explicit updates differ in angle by O(alpha^2)"""
    rng = Rng(202)
    totals = {0.1: 0.0, 0.01: 0.0}
    used = 0
    for w, x in zip(*_unit_pairs(rng, cases, 16)):
        if float(w @ x) >= 0.99:
            continue
        used += 1
        for alpha in totals:
            u = UpdateInputs.build(w, x, alpha, 1)
            totals[alpha] += angle_between(update_selfnorm(u), update_explicit(u))
    ratio = totals[0.1] / totals[0.01]
    return ratio >= 50.0, f"angle shrink ratio {ratio:.1f} over {used} cases"


def check_imprint_exactness() -> Tuple[bool, str]:
    rng = Rng(303)
    x = rng.unit_vectors(1, 32)[0]
    float_ok = np.array_equal(update_selfnorm(UpdateInputs(np.zeros(32), x, 1.0, 1, 0.0)), x)
    x_q = quantize_vec(x)
    int_ok = np.array_equal(fixed_update(np.zeros(32, dtype=np.int64), x_q, 0, INT7.alpha_one, 1), x_q)
    return float_ok and int_ok, f"float path {'exact' if float_ok else 'inexact'}, INT7 path {'exact' if int_ok else 'inexact'}"


def check_metaplasticity_ledger() -> Tuple[bool, str]:
    model = ClpModel(8, capacity=4)
    x = Rng(404).unit_vectors(1, 8)[0]
    model.learn_step(x, 0)
    ledger = [(int(model.goodness[0]), float(model.alpha[0]))]
    for label in (0, 0, 1):
        model.learn_step(x, label)
        ledger.append((int(model.goodness[0]), float(model.alpha[0])))
    goodness = [g for g, _ in ledger]
    product_ok = all(abs(g * a - 1.0) < 1e-12 for g, a in ledger)
    return goodness == [1, 2, 3, 2] and product_ok, f"goodness {goodness}"


def check_wta_agreement(injections: int = 10_000) -> Tuple[bool, str]:
    """SNN winner equals the integer argmax whenever the top-2 gap exceeds one bin"""
    rng = Rng(505)
    d, p = 16, 8
    net = SnnNetwork(d, SnnParams(capacity=p))
    for i, row in enumerate(rng.unit_vectors(p, d)):
        net.weights[i] = quantize_vec(row)
        net.allocated[i] = True
        net.labels[i] = i
    net.next_free = p

    checked = mismatches = 0
    targets = rng.integers(p, injections)
    noise = rng.normal(injections * d).reshape(injections, d)
    for k, eps in zip(targets, noise):
        x = net.weights[k] / INT7.max_code + 0.5 * eps / np.sqrt(d)
        x_q = quantize_vec(x / np.linalg.norm(x))
        y = net.weights @ x_q
        top = np.sort(y)[-2:]
        if top[1] <= net.theta_int or top[1] - top[0] <= net.bin_quantum:
            continue
        net.epoch_clock = 0
        net.inject_sample(x_q)
        while net.winner is None and net.epoch_clock < net.params.t_epoch:
            net.step()
        checked += 1
        mismatches += int(net.winner != int(np.argmax(y)))
    return checked > 0 and mismatches == 0, f"{mismatches} mismatches over {checked} qualifying injections"


def check_streaming_oracles() -> Tuple[bool, str]:
    rng = Rng(606)
    d, n = 8, 1_000
    xs = rng.normal(n * d).reshape(n, d)
    labels = rng.integers(3, n)

    ncm = NcmModel(d)
    slda = SldaModel(d)
    for x, k in zip(xs, labels):
        ncm.update(x, int(k))
        slda.update(x, int(k))
    ncm_err = max(float(np.max(np.abs(ncm.means[k] - xs[labels == k].mean(axis=0)))) for k in ncm.means)

    centered = np.vstack([xs[labels == k] - xs[labels == k].mean(axis=0) for k in slda.means])
    batch_cov = centered.T @ centered / n
    cov_err = float(np.max(np.abs(slda.covariance - batch_cov)))

    head = LinearHead(d)
    for k in range(3):
        head.row(k)
    head.weights = 0.1 * rng.normal(3 * d).reshape(3, d)
    x, label = xs[0][None, :], [int(labels[0])]
    grad_w, _ = head.gradient(x, label)
    h = 1e-6
    numeric = np.zeros_like(head.weights)
    for i in range(3):
        for j in range(d):
            head.weights[i, j] += h
            plus = head.loss(x, label)
            head.weights[i, j] -= 2 * h
            minus = head.loss(x, label)
            head.weights[i, j] += h
            numeric[i, j] = (plus - minus) / (2 * h)
    grad_err = float(np.max(np.abs(numeric - grad_w)))

    passed = ncm_err <= 1e-9 and cov_err <= 1e-8 and grad_err <= 1e-5
    return passed, f"ncm {ncm_err:.1e}, slda cov {cov_err:.1e}, finetune grad {grad_err:.1e}"


def check_learning_mode_ratio() -> Tuple[bool, str]:
    rng = Rng(707)
    centers = rng.unit_vectors(3, 16)
    frames, labels = [], []
    for step in range(30):
        k = step % 3
        x = centers[k] + 0.2 * rng.normal(16) / 4.0
        frames.append(x / np.linalg.norm(x))
        labels.append(k)
    ratio = compare_learning_modes(16, SnnParams(capacity=16), frames, labels)
    return ratio == 20, f"rule-evaluation ratio {ratio}"


def check_int7_norm_health(updates: int = 1_000) -> Tuple[bool, str]:
    rng = Rng(808)
    d = 32
    center = rng.unit_vectors(1, d)[0]
    w = quantize_vec(center)
    alpha = alpha_for_goodness(4)
    worst = 0.0
    for eps in rng.normal(updates * d).reshape(updates, d):
        x = center + 0.3 * eps / np.sqrt(d)
        x_q = quantize_vec(x / np.linalg.norm(x))
        w = fixed_update(w, x_q, int(w @ x_q), alpha, 1)
        worst = max(worst, abs(float(np.linalg.norm(w)) / INT7.max_code - 1.0))
    return worst <= 0.05, f"max norm deviation {worst:.4f} over {updates} updates"


def checks(drift_constant: float = 1.0) -> List[Tuple[str, Callable[[], Tuple[bool, str]]]]:
    return [
        ("norm_drift_law", lambda: check_norm_drift_law(drift_constant)),
        ("second_order_agreement", check_second_order_agreement),
        ("imprint_exactness", check_imprint_exactness),
        ("metaplasticity_ledger", check_metaplasticity_ledger),
        ("wta_agreement", check_wta_agreement),
        ("streaming_oracles", check_streaming_oracles),
        ("learning_mode_ratio", check_learning_mode_ratio),
        ("int7_norm_health", check_int7_norm_health),
    ]


def run_selftest(drift_constant: float = 1.0) -> List[CheckResult]:
    results = []
    for name, check in checks(drift_constant):
        started = time.perf_counter()
        try:
            passed, detail = check()
        except Exception as e:
            logger.error(f"Self-test {name} raised: {e}", exc_info=True)
            passed, detail = False, f"{type(e).__name__}: {e}"
        results.append(CheckResult(name, passed, detail, time.perf_counter() - started))
    return results
