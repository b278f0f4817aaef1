import numpy as np
import pytest

from dydila.numerics import ContractViolation, ConfigError, matmul
from dydila.oracle import per_token_projection
from dydila.projection import ProjectorBank, dpm_forward, project_shared
from dydila.routing import Router

from conftest import make_proj_bank, make_router, mat


def _identity_bank(d, scale=2.0):
    eye = np.eye(d)
    return ProjectorBank(
        w_q0=eye.copy(), w_k0=eye.copy(), w_v0=eye.copy(),
        w_q=(scale * eye,), w_k=(scale * eye,),
        router_q=Router(np.ones((d, 1))), router_k=Router(np.ones((d, 1))),
    )


def test_identity_bank_passthrough():
    x = mat(0, 6, 4)
    q, k, v, qr, kr, routes_q, routes_k = dpm_forward(x, _identity_bank(4))
    assert np.array_equal(q, x) and np.array_equal(k, x) and np.array_equal(v, x)
    assert np.array_equal(qr, 2.0 * x) and np.array_equal(kr, 2.0 * x)
    assert routes_q.indices.tolist() == [0] * 6


def test_project_shared_matches_matmul():
    x = mat(1, 10, 8)
    bank = make_proj_bank(2, 8, 3)
    q, k, v = project_shared(x, bank)
    assert np.array_equal(q, matmul(x, bank.w_q0))
    assert np.array_equal(k, matmul(x, bank.w_k0))
    assert np.array_equal(v, matmul(x, bank.w_v0))


@pytest.mark.parametrize("seed", range(5))
def test_matches_per_token_oracle_bitwise(seed):
    x = mat(seed, 16, 8)
    bank = make_proj_bank(seed + 30, 8, 3)
    q, k, v, qr, kr, routes_q, routes_k = dpm_forward(x, bank)
    oq, ok, ov, oqr, okr, oiq, oik = per_token_projection(x, bank)
    assert np.array_equal(routes_q.indices, oiq)
    assert np.array_equal(routes_k.indices, oik)
    # gathered batching must not change any row's accumulation order
    for got, want in ((q, oq), (k, ok), (v, ov), (qr, oqr), (kr, okr)):
        assert np.array_equal(got, want)


def test_single_projector_degenerates_to_shared_style():
    x = mat(3, 12, 6)
    bank = make_proj_bank(4, 6, 1)
    _, _, _, qr, kr, routes_q, _ = dpm_forward(x, bank)
    assert routes_q.indices.tolist() == [0] * 12
    assert np.array_equal(qr, matmul(x, bank.w_q[0]))
    assert np.array_equal(kr, matmul(x, bank.w_k[0]))


def test_equal_projectors_make_routing_irrelevant():
    x = mat(5, 20, 6)
    base = make_proj_bank(6, 6, 1)
    w = base.w_q[0]
    bank = ProjectorBank(
        w_q0=base.w_q0, w_k0=base.w_k0, w_v0=base.w_v0,
        w_q=(w, w, w), w_k=(w, w, w),
        router_q=make_router(7, 6, 3), router_k=make_router(8, 6, 3),
    )
    _, _, _, qr, kr, _, _ = dpm_forward(x, bank)
    assert np.array_equal(qr, matmul(x, w))
    assert np.array_equal(kr, matmul(x, w))


def test_row_locality():
    x = mat(9, 14, 6)
    bank = make_proj_bank(10, 6, 3)
    base = dpm_forward(x, bank)
    poked = x.copy()
    poked[5] = -poked[5]
    after = dpm_forward(poked, bank)
    mask = np.arange(14) != 5
    for b, a in zip(base[:5], after[:5]):
        assert np.array_equal(a[mask], b[mask])


def test_permutation_equivariance():
    x = mat(11, 24, 6)
    bank = make_proj_bank(12, 6, 3)
    base = dpm_forward(x, bank)
    perm = np.random.Generator(np.random.PCG64(13)).permutation(24)
    permuted = dpm_forward(x[perm], bank)
    for b, a in zip(base[:5], permuted[:5]):
        assert np.array_equal(a, b[perm])
    assert np.array_equal(permuted[5].indices, base[5].indices[perm])


def test_dim_mismatch():
    with pytest.raises(ContractViolation, match="dim"):
        project_shared(mat(0, 4, 5), make_proj_bank(1, 6, 2))


def test_non_square_rejected():
    with pytest.raises(ConfigError, match="square"):
        ProjectorBank(
            w_q0=np.zeros((4, 3)), w_k0=np.zeros((4, 4)), w_v0=np.zeros((4, 4)),
            w_q=(np.zeros((4, 4)),), w_k=(np.zeros((4, 4)),),
            router_q=Router(np.zeros((4, 1))), router_k=Router(np.zeros((4, 1))),
        )


def test_projector_list_length_mismatch():
    eye = np.eye(4)
    with pytest.raises(ConfigError, match="equal length"):
        ProjectorBank(
            w_q0=eye, w_k0=eye, w_v0=eye,
            w_q=(eye, eye), w_k=(eye,),
            router_q=Router(np.zeros((4, 2))), router_k=Router(np.zeros((4, 2))),
        )


def test_router_width_mismatch():
    eye = np.eye(4)
    with pytest.raises(ConfigError, match="router_q"):
        ProjectorBank(
            w_q0=eye, w_k0=eye, w_v0=eye,
            w_q=(eye,), w_k=(eye,),
            router_q=Router(np.zeros((4, 2))), router_k=Router(np.zeros((4, 1))),
        )
