"""Tests for the logistic loss, the L1 regularizer and the margin cache."""

from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sp

from dplbfgs.data import LabeledDataset, LabeledShard, partition_instances
from dplbfgs.errors import DomainError
from dplbfgs.objective import (
    L1Regularizer,
    LogisticLoss,
    LossCache,
    NullRegularizer,
    delta_term,
    grad_local,
    hessian_quadform_local,
    loss_value_local,
    prox_step_l1,
    reg_value_l1,
    softplus_delta,
)

from .conftest import shard_of


def _dense_dataset(rng: np.random.Generator, n: int, d: int) -> LabeledDataset:
    matrix = rng.standard_normal((d, n))
    labels = rng.choice((-1.0, 1.0), size=n)
    return LabeledDataset.from_matrix(sp.csc_matrix(matrix), labels)


def _full_loss(dataset: LabeledDataset, w: np.ndarray, c: float) -> float:
    shard = shard_of(dataset)
    return loss_value_local(shard, shard.matrix.T @ w, c)


def test_loss_at_zero_margins() -> None:
    """Verify two instances at w = 0 cost 2 log 2."""
    shard = shard_of(LabeledDataset.from_matrix(sp.eye(2, format="csc"), [1.0, -1.0]))

    assert loss_value_local(shard, np.zeros(2), 1.0) == pytest.approx(2 * math.log(2))


def test_loss_without_overflow() -> None:
    """Verify a margin of -800 costs about 800 and a huge margin costs about 0."""
    shard = shard_of(LabeledDataset.from_matrix(sp.eye(1, format="csc"), [1.0]))

    assert loss_value_local(shard, np.array([-800.0]), 1.0) == pytest.approx(800.0)
    assert loss_value_local(shard, np.array([800.0]), 1.0) == pytest.approx(0.0, abs=1e-300)


def test_gradient_single_instance(single_instance: LabeledDataset) -> None:
    """Verify x = e1, y = 1, C = 1 gives (-0.5, 0, 0) at w = 0."""
    shard = shard_of(single_instance)

    assert grad_local(shard, np.zeros(1), 1.0).tolist() == [-0.5, 0.0, 0.0]


def test_gradient_at_zero_is_label_sum(rng: np.random.Generator) -> None:
    """Verify the share at w = 0 is -(C/2) sum y_i x_i."""
    dataset = _dense_dataset(rng, 12, 4)
    shard = shard_of(dataset)

    expected = -1.5 * (dataset.matrix @ dataset.labels)

    assert np.allclose(grad_local(shard, np.zeros(12), 3.0), expected)


def test_gradient_empty_shard() -> None:
    """Verify a shard without instances contributes zeros."""
    shard = LabeledShard(0, sp.csc_matrix((3, 0)), np.zeros(0))

    assert grad_local(shard, np.zeros(0), 1.0).tolist() == [0.0, 0.0, 0.0]


def test_gradient_matches_finite_differences(rng: np.random.Generator) -> None:
    """Verify the summed gradient shares match central differences."""
    for _ in range(50):
        n, d = rng.integers(1, 51), rng.integers(1, 21)
        dataset = _dense_dataset(rng, n, d)
        c = float(rng.uniform(0.1, 5.0))
        w = rng.standard_normal(d) * 0.3
        shards = partition_instances(dataset, min(3, n))

        grad = sum(grad_local(s, s.matrix.T @ w, c) for s in shards)

        h = 1e-6
        fd = np.array(
            [
                (_full_loss(dataset, w + h * e, c) - _full_loss(dataset, w - h * e, c))
                / (2 * h)
                for e in np.eye(d)
            ]
        )
        assert np.linalg.norm(grad - fd) <= 1e-5 * max(np.linalg.norm(grad), 1.0)


def test_quadform_single_instance(single_instance: LabeledDataset) -> None:
    """Verify v = grad gives 0.0625 at w = 0."""
    shard = shard_of(single_instance)
    v = np.array([-0.5, 0.0, 0.0])

    assert hessian_quadform_local(shard, np.zeros(1), shard.matrix.T @ v, 1.0) == 0.0625


def test_quadform_edge_cases(single_instance: LabeledDataset) -> None:
    """Verify vectors orthogonal to the data and saturated margins give 0."""
    shard = shard_of(single_instance)
    orthogonal = shard.matrix.T @ np.array([0.0, 1.0, 1.0])

    assert hessian_quadform_local(shard, np.zeros(1), orthogonal, 1.0) == 0.0
    assert hessian_quadform_local(
        shard, np.array([800.0]), np.array([1.0]), 1.0
    ) == pytest.approx(0.0, abs=1e-300)


def test_quadform_matches_finite_differences(rng: np.random.Generator) -> None:
    """Verify v^T Hess v against differences of the gradient along v."""
    for _ in range(50):
        n, d = rng.integers(1, 51), rng.integers(1, 21)
        dataset = _dense_dataset(rng, n, d)
        shard = shard_of(dataset)
        w = rng.standard_normal(d) * 0.3
        v = rng.standard_normal(d)

        quad = hessian_quadform_local(shard, shard.matrix.T @ w, shard.matrix.T @ v, 1.0)

        h = 1e-6
        forward = grad_local(shard, shard.matrix.T @ (w + h * v), 1.0)
        backward = grad_local(shard, shard.matrix.T @ (w - h * v), 1.0)
        fd = v @ (forward - backward) / (2 * h)
        assert quad >= 0.0
        assert abs(quad - fd) <= 1e-5 * max(quad, 1.0)


def test_loss_delta_matches_difference(rng: np.random.Generator) -> None:
    """Verify the per-instance difference equals the difference of totals."""
    dataset = _dense_dataset(rng, 30, 6)
    loss = LogisticLoss(shard_of(dataset), 2.0)
    z, z_dir = rng.standard_normal(30), rng.standard_normal(30)

    delta = loss.loss_delta_local(z, z_dir, 0.25)

    assert delta == pytest.approx(
        loss.value_local(z + 0.25 * z_dir) - loss.value_local(z), rel=1e-10
    )


@pytest.mark.parametrize(
    ("u", "w", "psi", "expected"),
    [
        ([3.0, -0.5, 0.0], [0.0, 0.0, 0.0], 1.0, [2.0, 0.0, 0.0]),
        ([-0.2, 0.3], [1.0, 0.0], 1.0, [-1.0, 0.0]),
        ([3.0, -0.5, 0.0], [0.0, 0.0, 0.0], 2.0, [2.5, 0.0, 0.0]),
    ],
)
def test_prox_step_examples(
    u: list[float], w: list[float], psi: float, expected: list[float]
) -> None:
    """Verify the shifted soft-threshold."""
    p = prox_step_l1(np.array(u), np.array(w), psi)

    assert p == pytest.approx(expected)


@pytest.mark.parametrize("psi", [0.0, -1.0])
def test_prox_step_rejects_non_positive_scale(psi: float) -> None:
    """Verify psi <= 0 is outside the domain."""
    with pytest.raises(DomainError):
        prox_step_l1(np.ones(2), np.zeros(2), psi)
    with pytest.raises(DomainError):
        NullRegularizer().prox_step(np.ones(2), np.zeros(2), psi)


def test_prox_step_is_optimal(rng: np.random.Generator) -> None:
    """Verify no coordinate perturbation improves the prox objective."""

    def phi(p, u, w, psi):
        return 0.5 * np.sum((p - u) ** 2) + reg_value_l1(w + p) / psi

    for _ in range(100):
        d = int(rng.integers(1, 8))
        u, w = rng.standard_normal(d) * 2, rng.standard_normal(d)
        psi = float(rng.uniform(0.1, 5.0))
        p = prox_step_l1(u, w, psi)
        best = phi(p, u, w, psi)
        for e in np.eye(d):
            for eps in (1e-4, -1e-4):
                assert best <= phi(p + eps * e, u, w, psi) + 1e-12


@pytest.mark.parametrize(
    ("grad", "w", "p", "expected"),
    [
        ([-3.0, 0.0], [1.0, 0.0], [1.0, 0.0], -2.0),
        ([-3.0, 0.0], [1.0, 0.0], [0.0, 0.0], 0.0),
        ([0.5, 0.5], [0.0, 0.0], [1.0, -1.0], 2.0),
    ],
)
def test_delta_term_examples(
    grad: list[float], w: list[float], p: list[float], expected: float
) -> None:
    """Verify grad^T p + ||w + p||_1 - ||w||_1."""
    grad_, w_, p_ = np.array(grad), np.array(w), np.array(p)

    assert delta_term(float(grad_ @ p_), w_, p_) == expected


def test_delta_term_is_separable(rng: np.random.Generator) -> None:
    """Verify slice shares of the predicted decrease add up to the whole."""
    grad, w, p = (rng.standard_normal(9) for _ in range(3))
    whole = delta_term(float(grad @ p), w, p)

    parts = sum(
        delta_term(float(grad[s] @ p[s]), w[s], p[s])
        for s in (slice(0, 4), slice(4, 7), slice(7, 9))
    )

    assert parts == pytest.approx(whole, rel=1e-12)


def test_regularizer_values() -> None:
    """Verify L1 value, weighted value and value_delta."""
    w, step = np.array([1.0, -2.0, 0.0]), np.array([-1.0, 0.5, 0.25])

    assert reg_value_l1(w) == 3.0
    assert L1Regularizer(0.5).value(w) == 1.5
    assert L1Regularizer().value_delta(w, step) == pytest.approx(-1.25)
    assert NullRegularizer().value_delta(w, step) == 0.0


def test_cache_stays_coherent(rng: np.random.Generator) -> None:
    """Verify axpy-updated margins match a fresh X^T w after many steps."""
    dataset = _dense_dataset(rng, 40, 10)
    shard = shard_of(dataset)
    w = np.zeros(10)
    cache = LossCache(shard, w)

    for _ in range(200):
        p = rng.standard_normal(10)
        alpha = float(rng.choice((1.0, 0.5, 0.25)))
        cache.set_direction(p)
        cache.accept(alpha)
        w = w + alpha * p

    fresh = shard.matrix.T @ w
    assert np.linalg.norm(cache.z - fresh) <= 1e-10 * np.linalg.norm(fresh)
    cache.refresh(w)
    assert np.array_equal(cache.z, fresh)


@pytest.mark.parametrize(
    ("t", "step", "expected"),
    [
        (50.0, 1e-20, 1e-20),
        (0.0, 1e-12, 0.5e-12),
        (-800.0, 0.5, 0.0),
        (100.0, -50.0, -50.0),
        (0.0, 3.0, math.log1p(math.exp(3.0)) - math.log(2.0)),
    ],
)
def test_softplus_delta_keeps_small_differences(
    t: float, step: float, expected: float
) -> None:
    """Verify differences far below the softplus magnitude survive."""
    delta = softplus_delta(np.array([t]), np.array([step]))

    assert delta[0] == pytest.approx(expected, rel=1e-9, abs=1e-300)


def test_l1_value_delta_keeps_small_steps() -> None:
    """Verify tiny moves of large weights are not lost to rounding."""
    w = np.array([1e8, -1e8, 0.0])
    step = np.array([1e-9, 1e-9, -1e-9])

    assert L1Regularizer().value_delta(w, step) == pytest.approx(1e-9, rel=1e-12)
