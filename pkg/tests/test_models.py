"""Model objectives and predictions against dense-formula oracles."""

import numpy as np
import oracles
from gradcheck import fd_check

from amorgp import kernels, likelihoods, models, tape
from amorgp.nets import AmortizationNet
from amorgp.tape import Tape, Tensor


def make_kernel(log_ls=0.2, log_amp=0.1):
    return kernels.Matern32(
        Tensor(np.asarray(log_ls), requires_grad=True, name="kernel.log_lengthscale"),
        Tensor(np.asarray(log_amp), requires_grad=True, name="kernel.log_amplitude"),
    )


def kernel_np(log_ls=0.2, log_amp=0.1):
    return lambda a, b: oracles.matern32_np(a, b, log_ls, log_amp)


def regression_data(rng, n=25, d=2):
    x = rng.standard_normal((n, d))
    y = np.sin(x[:, 0]) + 0.3 * rng.standard_normal(n)
    return x, y


# ---------------------------------------------------------------------------
# exact GP


def test_exact_gp_matches_dense_posterior():
    rng = np.random.default_rng(80)
    x, y = regression_data(rng)
    xs = rng.standard_normal((7, 2))
    noise = 0.15
    kernel = make_kernel()
    lik = likelihoods.GaussianLikelihood(Tensor(np.log(noise)))
    pred = models.exact_gp_predict(x, y, kernel, lik, xs)

    knp = kernel_np()
    k_noisy = knp(x, x) + noise * np.eye(len(x))
    k_noisy += oracles.base_jitter(k_noisy) * np.eye(len(x))
    kinv = np.linalg.inv(k_noisy)
    kxs = knp(xs, x)
    want_mean = kxs @ kinv @ y
    want_var = np.diag(knp(xs, xs)) - np.einsum("ij,ij->i", kxs @ kinv, kxs)
    assert np.abs(pred.mean - want_mean).max() <= 1e-9
    assert np.abs(pred.var - want_var).max() <= 1e-9


def test_exact_gp_objective_matches_dense_logml():
    rng = np.random.default_rng(81)
    x, y = regression_data(rng, n=18)
    noise = 0.2
    kernel = make_kernel()
    lik = likelihoods.GaussianLikelihood(Tensor(np.log(noise)))
    got = models.exact_gp_objective(Tensor(x), y, kernel, lik).item()
    k_noisy = kernel_np()(x, x) + noise * np.eye(len(x))
    k_noisy += oracles.base_jitter(k_noisy) * np.eye(len(x))
    assert abs(got - oracles.logml_np(k_noisy, y)) <= 1e-9


def test_exact_gp_empty_training_set_gives_prior():
    kernel = make_kernel()
    lik = likelihoods.GaussianLikelihood()
    xs = np.linspace(-2.0, 2.0, 9)[:, None].repeat(2, axis=1)
    pred = models.exact_gp_predict(np.zeros((0, 2)), np.zeros(0), kernel, lik, xs)
    assert np.abs(pred.mean).max() == 0.0
    assert np.abs(pred.var - np.exp(2.0 * 0.1)).max() <= 1e-9


def test_exact_gp_objective_gradients():
    rng = np.random.default_rng(82)
    x, y = regression_data(rng, n=10, d=1)
    kernel = make_kernel()
    lik = likelihoods.GaussianLikelihood(Tensor(np.log(0.3), requires_grad=True, name="likelihood.log_noise"))
    params = [kernel.log_lengthscale, kernel.log_amplitude, lik.log_noise]

    def build(ps):
        return models.exact_gp_objective(Tensor(x), y, kernel, lik)

    fd_check(build, params)


# ---------------------------------------------------------------------------
# sparse variational GP


def random_vsgp(rng, x, noise=0.2, m=4):
    kernel = make_kernel()
    lik = likelihoods.GaussianLikelihood(Tensor(np.log(noise), requires_grad=True, name="likelihood.log_noise"))
    model = models.build_vsgp(kernel, lik, x, m, rng)
    # move the posterior off its prior initialization
    model.qmean.value = rng.standard_normal(m)
    model.qscale_flat.value = rng.standard_normal(m * (m + 1) // 2)
    return model


def test_vsgp_elbo_matches_dense_oracle():
    rng = np.random.default_rng(83)
    x, y = regression_data(rng, n=30)
    model = random_vsgp(rng, x)
    got = model.objective(Tensor(x), y, n_total=60).item()
    want = oracles.vsgp_elbo_np(
        x, y, 60, model.z.value, model.qmean.value, model.scale_tril().value, kernel_np(), 0.2
    )
    assert abs(got - want) <= 1e-9 * max(1.0, abs(want))


def test_vsgp_elbo_below_exact_logml():
    rng = np.random.default_rng(84)
    x, y = regression_data(rng, n=20)
    for _ in range(5):
        model = random_vsgp(rng, x, m=5)
        elbo = model.objective(Tensor(x), y, n_total=len(y)).item()
        logml = models.exact_gp_objective(Tensor(x), y, model.kernel, model.likelihood).item()
        assert elbo <= logml + 1e-8


def test_vsgp_prior_initialization_recovers_prior():
    rng = np.random.default_rng(85)
    x, _ = regression_data(rng, n=40)
    kernel = make_kernel()
    lik = likelihoods.GaussianLikelihood()
    model = models.build_vsgp(kernel, lik, x, num_inducing=6, rng=rng)
    xs = rng.standard_normal((100, 2)) * 1.5
    pred = model.predict_latent(xs)
    prior_var = kernel.diag(Tensor(xs)).value
    assert np.abs(pred.mean).max() <= 1e-8
    assert np.abs(pred.var - prior_var).max() <= 1e-8


def test_vsgp_elbo_gradients():
    rng = np.random.default_rng(86)
    x, y = regression_data(rng, n=8, d=1)
    model = random_vsgp(rng, x, m=3)

    def build(ps):
        return model.objective(Tensor(x), y, n_total=16)

    fd_check(build, list(model.parameters().values()))


def test_vsgp_predict_matches_dense_marginals():
    rng = np.random.default_rng(87)
    x, y = regression_data(rng, n=20)
    model = random_vsgp(rng, x)
    xs = rng.standard_normal((11, 2))
    pred = model.predict_latent(xs)
    knp = kernel_np()
    kzz = knp(model.z.value, model.z.value)
    kzz_j = kzz + oracles.base_jitter(kzz) * np.eye(model.num_inducing)
    lq = model.scale_tril().value
    want_mean, want_var = oracles.sparse_marginals_np(
        np.diag(knp(xs, xs)), knp(xs, model.z.value), kzz_j, model.qmean.value, lq @ lq.T
    )
    assert np.abs(pred.mean - want_mean).max() <= 1e-9
    assert np.abs(pred.var - want_var).max() <= 1e-9


# ---------------------------------------------------------------------------
# input-dependent sparse GP


def random_idsgp(rng, x, m=3, hidden=None, probit=False):
    kernel = make_kernel()
    if probit:
        lik = likelihoods.ProbitLikelihood(quad_nodes=24)
    else:
        lik = likelihoods.GaussianLikelihood(Tensor(np.log(0.2), requires_grad=True, name="likelihood.log_noise"))
    model = models.build_idsgp(kernel, lik, x, m, hidden or [8], rng)
    # randomize the final layer so states genuinely vary with the input
    w = model.amort.net.weights[-1]
    w.value = 0.2 * rng.standard_normal(w.shape)
    return model


def test_idsgp_elbo_matches_looped_oracle():
    rng = np.random.default_rng(88)
    x, y = regression_data(rng, n=12)
    model = random_idsgp(rng, x)
    got = model.objective(Tensor(x), y, n_total=48).item()

    z, qm, qs = model.amort.states(Tensor(x))
    states = [(z.value[i], qm.value[i], qs.value[i]) for i in range(len(x))]
    want = oracles.idsgp_elbo_np(
        x, y, 48, states, kernel_np(),
        lambda mean, var, yy: oracles.gaussian_expected_ll_np(mean, var, yy, 0.2),
    )
    assert abs(got - want) <= 1e-9 * max(1.0, abs(want))


def test_idsgp_constant_network_equals_vsgp():
    rng = np.random.default_rng(89)
    x, y = regression_data(rng, n=15)
    vsgp = random_vsgp(rng, x, m=4)
    ids = models.build_idsgp(vsgp.kernel, vsgp.likelihood, x, 4, [6], rng)
    ids.amort.set_constant_state(vsgp.z.value, vsgp.qmean.value, vsgp.scale_tril().value)
    for n_total in (15, 150):
        a = vsgp.objective(Tensor(x), y, n_total).item()
        b = ids.objective(Tensor(x), y, n_total).item()
        assert abs(a - b) <= 1e-9 * max(1.0, abs(a))


def test_idsgp_single_element_batch():
    # with one element the bound is n_total * E_1 - KL_1
    rng = np.random.default_rng(90)
    x, y = regression_data(rng, n=1)
    model = random_idsgp(rng, np.broadcast_to(x, (5, 2)).copy())
    got = model.objective(Tensor(x), y[:1], n_total=40).item()
    z, qm, qs = model.amort.states(Tensor(x))
    states = [(z.value[0], qm.value[0], qs.value[0])]
    want = oracles.idsgp_elbo_np(
        x, y[:1], 40, states, kernel_np(),
        lambda mean, var, yy: oracles.gaussian_expected_ll_np(mean, var, yy, 0.2),
    )
    assert abs(got - want) <= 1e-9 * max(1.0, abs(want))


def test_idsgp_prior_initialization_recovers_prior():
    rng = np.random.default_rng(91)
    x, _ = regression_data(rng, n=50)
    kernel = make_kernel()
    model = models.build_idsgp(kernel, likelihoods.GaussianLikelihood(), x, 3, [10, 10], rng)
    xs = rng.standard_normal((100, 2)) * 2.0
    pred = model.predict_latent(xs)
    prior_var = kernel.diag(Tensor(xs)).value
    assert np.abs(pred.mean).max() <= 1e-8
    assert np.abs(pred.var - prior_var).max() <= 1e-8


def test_idsgp_predict_chunking_is_invisible():
    rng = np.random.default_rng(92)
    x, _ = regression_data(rng, n=20)
    model = random_idsgp(rng, x)
    xs = rng.standard_normal((23, 2))
    whole = model.predict_latent(xs)
    model.predict_chunk = 7
    parts = model.predict_latent(xs)
    assert np.array_equal(whole.mean, parts.mean)
    assert np.array_equal(whole.var, parts.var)


def test_idsgp_predict_matches_per_point_states():
    rng = np.random.default_rng(93)
    x, _ = regression_data(rng, n=14)
    model = random_idsgp(rng, x)
    xs = rng.standard_normal((6, 2))
    pred = model.predict_latent(xs)
    z, qm, qs = model.amort.states(Tensor(xs))
    knp = kernel_np()
    for i in range(len(xs)):
        kzz = knp(z.value[i], z.value[i])
        kzz_j = kzz + oracles.base_jitter(kzz) * np.eye(model.num_inducing)
        lq = qs.value[i]
        want_mean, want_var = oracles.sparse_marginals_np(
            np.diag(knp(xs[i : i + 1], xs[i : i + 1])),
            knp(xs[i : i + 1], z.value[i]),
            kzz_j,
            qm.value[i],
            lq @ lq.T,
        )
        assert abs(pred.mean[i] - want_mean[0]) <= 1e-9
        assert abs(pred.var[i] - want_var[0]) <= 1e-9


def test_idsgp_elbo_gradients():
    rng = np.random.default_rng(94)
    x, y = regression_data(rng, n=6, d=1)
    model = random_idsgp(rng, x, m=2, hidden=[4])

    def build(ps):
        return model.objective(Tensor(x), y, n_total=12)

    fd_check(build, list(model.parameters().values()))


def test_idsgp_probit_elbo_gradients():
    rng = np.random.default_rng(95)
    x = rng.standard_normal((6, 2))
    y = np.where(x[:, 0] + x[:, 1] > 0.0, 1.0, -1.0)
    model = random_idsgp(rng, x, m=2, hidden=[4], probit=True)

    def build(ps):
        return model.objective(Tensor(x), y, n_total=12)

    fd_check(build, list(model.parameters().values()))
