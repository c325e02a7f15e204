"""Chain behavior: equivalence with the op-level reference, determinism,
detection power, MCSE, and result stitching."""

import math

import numpy as np
import pytest

from cvfmri.design import design_for_length
from cvfmri.errors import InsufficientDataError, InvalidSpecError
from cvfmri.parcellation import EDGE, build_adjacency, build_spatial_basis, partition_grid
from cvfmri.sampler import (
    NONSPATIAL,
    ChainSummary,
    SamplerConfig,
    backward_transform,
    mcse,
    run_parcel_chain,
    sample_beta,
    sample_delta,
    sample_eta,
    sample_eta_nonspatial,
    sample_gamma,
    sample_kappa,
    sample_rho,
    sample_sigma2,
    sample_tau2,
    summarize,
)


def reference_chain(y, basis, x, cfg, seed):
    """Op-level reference: stage-batched loops over the public conditionals.

    Consumes the RNG stream exactly like run_parcel_chain, so the two must
    agree draw for draw (up to roundoff in the sufficient-statistics algebra).
    """
    rng = np.random.default_rng(seed)
    n_vox, n_time = y.shape
    yc = y - y.mean(axis=1, keepdims=True)
    xc = x - x.mean()

    gamma = np.ones(n_vox, dtype=bool)
    sigma2 = np.maximum(0.25 * np.mean(yc.real**2 + yc.imag**2, axis=1), 1e-30)
    rho = np.zeros(n_vox, dtype=complex)
    tau2 = 1.0
    eta = np.zeros(n_vox)
    kappa = cfg.a_kappa * cfg.b_kappa
    beta = np.empty(n_vox, dtype=complex)
    for v in range(n_vox):
        _, xs = backward_transform(yc[v], xc, rho[v])
        ys = yc[v][1:]
        c = np.sum(np.conj(xs) * ys)
        beta[v] = c / (np.sum(np.abs(xs) ** 2) + sigma2[v] / tau2)

    history = []
    kept_gamma = []
    beta_sum = np.zeros(n_vox, dtype=complex)
    for it in range(cfg.n_iter):
        for v in range(n_vox):
            ys, xs = backward_transform(yc[v], xc, rho[v])
            gamma[v] = sample_gamma(ys, xs, sigma2[v], tau2, eta[v], cfg.psi, rng)
        new_beta = np.zeros(n_vox, dtype=complex)
        for v in range(n_vox):
            ys, xs = backward_transform(yc[v], xc, rho[v])
            new_beta[v] = sample_beta(ys, xs, sigma2[v], tau2, gamma[v], rng)
        beta = new_beta
        for v in range(n_vox):
            rho[v], _ = sample_rho(yc[v], xc, beta[v], sigma2[v], rng)
        for v in range(n_vox):
            w = yc[v] - beta[v] * xc
            sigma2[v] = sample_sigma2(w[1:], w[:-1], rho[v], rng)
        tau2 = sample_tau2(gamma, beta, tau2, rng)
        for v in range(n_vox):
            eta[v] = sample_eta(gamma[v:v + 1], basis.nu2[v], kappa, rng)[0]
        sample_delta(eta, basis.m, basis.qhat_inv, kappa, rng, chol=basis.qhat_inv_chol)
        kappa = sample_kappa(eta, basis.nu2, cfg.a_kappa, cfg.b_kappa, rng)
        history.append((gamma.copy(), beta.copy(), rho.copy(), sigma2.copy()))
        if it >= cfg.n_burn:
            kept_gamma.append(gamma.copy())
            beta_sum += beta
    incl = np.mean(kept_gamma, axis=0)
    return history, incl, beta_sum / len(kept_gamma)


@pytest.fixture(scope="module")
def tiny_instance():
    rng = np.random.default_rng(555)
    n_vox, n_time = 4, 12
    x = design_for_length(n_time, on_len=3, off_len=3).bold
    beta_true = np.array([0.0, 0.5, 0.0, 1.0])
    y = (1.0 + beta_true[:, None] * x[None, :]) * np.exp(1j * 0.6)
    y = y + 0.3 * (rng.standard_normal((n_vox, n_time)) + 1j * rng.standard_normal((n_vox, n_time)))
    adjacency = build_adjacency(np.arange(4), (1, 4), EDGE)
    basis = build_spatial_basis(adjacency, 2)
    return y, x, basis


class TestChainEquivalence:
    def test_chain_matches_op_level_reference(self, tiny_instance):
        y, x, basis = tiny_instance
        cfg = SamplerConfig(n_iter=20, n_burn=0, seed=0)
        seed = 77777
        summary = run_parcel_chain(y, basis, x, cfg, parcel_seed=seed,
                                   trace_voxels=[0, 1, 2, 3])
        history, incl, beta_mean = reference_chain(y, basis, x, cfg, seed)
        for it, (gamma, beta, rho, sigma2) in enumerate(history):
            for v in range(4):
                row = summary.trace[v][it]
                assert row[0] == gamma[v]
                assert np.isclose(row[1], beta[v].real, rtol=1e-9, atol=1e-12)
                assert np.isclose(row[2], beta[v].imag, rtol=1e-9, atol=1e-12)
                assert np.isclose(row[3], rho[v].real, rtol=1e-9, atol=1e-12)
                assert np.isclose(row[4], rho[v].imag, rtol=1e-9, atol=1e-12)
                assert np.isclose(row[5], sigma2[v], rtol=1e-9)
        assert np.allclose(summary.incl_prob, incl, atol=1e-12)
        assert np.allclose(summary.beta_mean, beta_mean, rtol=1e-9, atol=1e-12)


class TestChainBehavior:
    def test_deterministic(self, tiny_instance):
        y, x, basis = tiny_instance
        cfg = SamplerConfig(n_iter=60, n_burn=20, seed=0)
        a = run_parcel_chain(y, basis, x, cfg, parcel_seed=42)
        b = run_parcel_chain(y, basis, x, cfg, parcel_seed=42)
        assert np.array_equal(a.incl_prob, b.incl_prob)
        assert np.array_equal(a.beta_mean, b.beta_mean)
        assert np.array_equal(a.mcse, b.mcse)
        assert a.n_kept == cfg.n_iter - cfg.n_burn

    def test_pure_noise_parcel_stays_quiet(self):
        rng = np.random.default_rng(8)
        n_vox, n_time = 100, 200
        x = design_for_length(n_time).bold
        y = 0.5 + 0.2 * (rng.standard_normal((n_vox, n_time)) + 1j * rng.standard_normal((n_vox, n_time)))
        part = partition_grid((10, 10), 1)
        basis = build_spatial_basis(build_adjacency(part.parcel_voxel_lists[0], (10, 10)), 5)
        cfg = SamplerConfig(n_iter=400, n_burn=200, seed=0)
        summary = run_parcel_chain(y, basis, x, cfg, parcel_seed=3)
        below = np.mean(summary.incl_prob < cfg.threshold)
        assert below >= 0.99

    def test_strong_signal_detected(self):
        rng = np.random.default_rng(9)
        n_time = 200
        x = design_for_length(n_time).bold
        sigma = 0.05
        beta_true = np.array([0.0, 5 * sigma, 0.0, 0.0])  # CNR 5
        y = (0.5 + beta_true[:, None] * x[None, :]) * np.exp(1j * np.pi / 4)
        y = y + sigma * (rng.standard_normal((4, n_time)) + 1j * rng.standard_normal((4, n_time)))
        basis = build_spatial_basis(build_adjacency(np.arange(4), (1, 4), EDGE), 2)
        cfg = SamplerConfig(n_iter=400, n_burn=200, seed=0)
        summary = run_parcel_chain(y, basis, x, cfg, parcel_seed=5)
        assert summary.incl_prob[1] > 0.99

    def test_inclusion_monotone_in_signal_strength(self):
        n_time = 200
        x = design_for_length(n_time).bold
        sigma = 0.05
        beta_true = np.array([0.5 * sigma, 2.0 * sigma, 0.0, 0.0])
        basis = build_spatial_basis(build_adjacency(np.arange(4), (1, 4), EDGE), 2)
        cfg = SamplerConfig(n_iter=200, n_burn=100, seed=0)
        weak, strong = [], []
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            y = (0.5 + beta_true[:, None] * x[None, :]) * np.exp(1j * np.pi / 4)
            y = y + sigma * (rng.standard_normal((4, n_time)) + 1j * rng.standard_normal((4, n_time)))
            summary = run_parcel_chain(y, basis, x, cfg, parcel_seed=seed)
            weak.append(summary.incl_prob[0])
            strong.append(summary.incl_prob[1])
        assert np.mean(strong) > np.mean(weak)

    def test_audit_invariants_hold(self, tiny_instance):
        y, x, basis = tiny_instance
        cfg = SamplerConfig(n_iter=100, n_burn=50, seed=0)
        run_parcel_chain(y, basis, x, cfg, parcel_seed=11, audit=True)

    def test_nonspatial_mode(self, tiny_instance):
        y, x, _ = tiny_instance
        cfg = SamplerConfig(n_iter=60, n_burn=20, mode=NONSPATIAL, seed=0)
        assert cfg.threshold == 0.5
        summary = run_parcel_chain(y, None, x, cfg, parcel_seed=2)
        assert summary.incl_prob.shape == (4,)

    def test_nonspatial_matches_op_reference(self, tiny_instance):
        y, x, _ = tiny_instance
        cfg = SamplerConfig(n_iter=16, n_burn=0, mode=NONSPATIAL, seed=0)
        seed = 31
        summary = run_parcel_chain(y, None, x, cfg, parcel_seed=seed,
                                   trace_voxels=[0, 1, 2, 3])
        # inline reference with the shared-rate updates
        rng = np.random.default_rng(seed)
        yc = y - y.mean(axis=1, keepdims=True)
        xc = x - x.mean()
        gamma = np.ones(4, dtype=bool)
        sigma2 = np.maximum(0.25 * np.mean(yc.real**2 + yc.imag**2, axis=1), 1e-30)
        rho = np.zeros(4, dtype=complex)
        tau2 = 1.0
        eta_shared = 0.5
        for it in range(cfg.n_iter):
            probs = np.empty(4)
            for v in range(4):
                ys, xs = backward_transform(yc[v], xc, rho[v])
                xn2 = np.sum(np.abs(xs) ** 2)
                c = np.sum(np.conj(xs) * ys)
                denom = xn2 + sigma2[v] / tau2
                ratio = (tau2 / sigma2[v]) * denom * math.exp(
                    -abs(c) ** 2 / (2 * sigma2[v] * denom)
                )
                probs[v] = eta_shared / (eta_shared + ratio * (1 - eta_shared))
            gamma = rng.random(4) < probs
            beta = np.zeros(4, dtype=complex)
            for v in range(4):
                ys, xs = backward_transform(yc[v], xc, rho[v])
                beta[v] = sample_beta(ys, xs, sigma2[v], tau2, gamma[v], rng)
            for v in range(4):
                rho[v], _ = sample_rho(yc[v], xc, beta[v], sigma2[v], rng)
            for v in range(4):
                w = yc[v] - beta[v] * xc
                sigma2[v] = sample_sigma2(w[1:], w[:-1], rho[v], rng)
            tau2 = sample_tau2(gamma, beta, tau2, rng)
            eta_shared = sample_eta_nonspatial(gamma, rng)
            for v in range(4):
                assert summary.trace[v][it][0] == gamma[v]

    def test_rejects_mismatched_inputs(self, tiny_instance):
        y, x, basis = tiny_instance
        with pytest.raises(InvalidSpecError):
            run_parcel_chain(y[:, :6], basis, x, SamplerConfig(seed=0), parcel_seed=1)
        with pytest.raises(InsufficientDataError):
            run_parcel_chain(y, basis, x, SamplerConfig(n_iter=20, n_burn=10, seed=0),
                             parcel_seed=1)


class TestMcse:
    def test_constant_draws(self):
        assert mcse(np.ones(100)) == 0.0

    def test_iid_bernoulli_scale(self):
        rng = np.random.default_rng(1)
        draws = (rng.random(10_000) < 0.5).astype(float)
        est = mcse(draws)
        assert 0.005 / 1.5 < est < 0.005 * 1.5

    def test_root_n_scaling(self):
        rng = np.random.default_rng(2)
        small = np.array([mcse((rng.random(2500) < 0.5).astype(float)) for _ in range(40)])
        large = np.array([mcse((rng.random(10_000) < 0.5).astype(float)) for _ in range(40)])
        ratio = small.mean() / large.mean()
        assert abs(ratio - 2.0) < 0.6

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            mcse(np.ones(15))

    def test_columnwise(self):
        rng = np.random.default_rng(3)
        draws = (rng.random((400, 5)) < 0.3).astype(float)
        out = mcse(draws)
        assert out.shape == (5,)
        assert np.allclose(out, [mcse(draws[:, j]) for j in range(5)])


class TestSummarize:
    def _summaries(self, partition, incl, beta):
        out = []
        for voxels in partition.parcel_voxel_lists:
            out.append(ChainSummary(
                incl_prob=incl.reshape(-1)[voxels],
                beta_mean=beta.reshape(-1)[voxels],
                mcse=np.zeros(voxels.size),
                converged=True,
                n_kept=100,
            ))
        return out

    def test_magnitude_and_phase(self):
        part = partition_grid((2, 2), 2)
        incl = np.array([1.0, 0.0, 1.0, 0.0])
        beta = np.array([1 + 1j, 0j, 2 + 0j, 0j])
        maps = summarize(self._summaries(part, incl, beta), part, 0.8722)
        assert maps.activation.tolist() == [[1, 0], [1, 0]]
        assert maps.magnitude[0, 0] == pytest.approx(math.sqrt(2))
        assert maps.phase[0, 0] == pytest.approx(math.pi / 4)
        assert np.isnan(maps.phase[0, 1])

    def test_threshold_is_strict(self):
        part = partition_grid((1, 2), 1)
        incl = np.array([0.8722, 0.87221])
        beta = np.array([1 + 0j, 1 + 0j])
        maps = summarize(self._summaries(part, incl, beta), part, 0.8722)
        assert maps.activation.tolist() == [[0, 1]]

    def test_missing_parcel_rejected(self):
        part = partition_grid((2, 2), 2)
        incl = np.zeros(4)
        beta = np.zeros(4, dtype=complex)
        with pytest.raises(InvalidSpecError):
            summarize(self._summaries(part, incl, beta)[:1], part, 0.5)
