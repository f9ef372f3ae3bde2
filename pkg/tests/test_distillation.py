import numpy as np
import pytest
from scipy.stats import special_ortho_group

from ccl.distillation import kd_loss, teacher_epoch_update, teacher_init
from ccl.encoder import flatten, forward, init_params
from ccl.errors import CCLError
from ccl.numerics import finite_diff_grad, row_cross_entropy, similarity_matrix, softmax_rows

from conftest import rel_err, unit_rows


def four(rng, B, D):
    return [unit_rows(rng, B, D) for _ in range(4)]


def row_entropy(p):
    return float(-(p * np.log(p)).sum() / p.shape[0])


class TestKDLoss:
    def test_matched_student_gives_teacher_entropy(self, rng):
        zT, zTq, _, _ = four(rng, 4, 5)
        res = kd_loss(zT, zTq, zT, zTq, 0.1)
        assert res.loss == pytest.approx(row_entropy(res.p_teacher), abs=1e-12)
        np.testing.assert_allclose(res.grad_zS, 0.0, atol=1e-12)
        np.testing.assert_allclose(res.grad_zSq, 0.0, atol=1e-12)

    def test_singleton_batch(self, rng):
        res = kd_loss(*four(rng, 1, 3), 0.1)
        assert res.loss == 0.0
        np.testing.assert_array_equal(res.p_teacher, [[1.0]])

    def test_composition_and_literal_sum(self, rng):
        zT, zTq, zS, zSq = four(rng, 3, 4)
        res = kd_loss(zT, zTq, zS, zSq, 0.1)
        pt = softmax_rows(similarity_matrix(zT, zTq), 0.1)
        ps = softmax_rows(similarity_matrix(zS, zSq), 0.1)
        assert res.loss == pytest.approx(row_cross_entropy(pt, ps), abs=1e-10)
        literal = -sum(pt[i, j] * np.log(ps[i, j]) for i in range(3) for j in range(3))
        assert 3 * res.loss == pytest.approx(literal, abs=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        zT, zTq, zS, zSq = four(rng, 3, 4)
        res = kd_loss(zT, zTq, zS, zSq, 0.1)
        g_s = finite_diff_grad(lambda v: kd_loss(zT, zTq, v, zSq, 0.1).loss, zS)
        g_sq = finite_diff_grad(lambda v: kd_loss(zT, zTq, zS, v, 0.1).loss, zSq)
        assert rel_err(res.grad_zS, g_s) <= 1e-4
        assert rel_err(res.grad_zSq, g_sq) <= 1e-4

    def test_lower_bound_by_teacher_entropy(self, rng):
        for _ in range(20):
            zT, zTq, zS, zSq = four(rng, 4, 6)
            res = kd_loss(zT, zTq, zS, zSq, 0.2)
            assert res.loss >= row_entropy(res.p_teacher) - 1e-9

    def test_joint_permutation(self, rng):
        zs = four(rng, 5, 4)
        p = rng.permutation(5)
        a = kd_loss(*zs, 0.1).loss
        b = kd_loss(*[z[p] for z in zs], 0.1).loss
        assert b == pytest.approx(a, abs=1e-12)

    def test_rotation_invariance(self, rng):
        zs = four(rng, 4, 5)
        R = special_ortho_group.rvs(5, random_state=3)
        a = kd_loss(*zs, 0.1).loss
        b = kd_loss(*[z @ R.T for z in zs], 0.1).loss
        assert b == pytest.approx(a, abs=1e-9)

    def test_teacher_is_constant(self, rng):
        zT, zTq, zS, zSq = four(rng, 3, 4)
        # result type exposes no teacher gradient; perturbing the teacher moves only the target
        res = kd_loss(zT, zTq, zS, zSq, 0.1)
        assert set(vars(res)) == {"loss", "grad_zS", "grad_zSq", "p_teacher", "p_student"}

    def test_batch_mismatch(self, rng):
        zT, zTq, zS, _ = four(rng, 3, 4)
        with pytest.raises(CCLError, match="batch mismatch"):
            kd_loss(zT, zTq, zS, unit_rows(rng, 2, 4), 0.1)


class TestTeacher:
    def test_init_copies(self, rng):
        student = init_params([4, 6, 3], 0)
        teacher = teacher_init(student)
        x = rng.standard_normal((5, 4))
        assert np.array_equal(forward(teacher, x)[0], forward(student, x)[0])
        student.weights[0][0, 0] += 1.0
        assert teacher.weights[0][0, 0] != student.weights[0][0, 0]

    def test_frozen_teacher(self):
        t, s = init_params([4, 3], 1), init_params([4, 3], 2)
        assert teacher_epoch_update(t, s, 1.0).equals(t)

    def test_moves_point_four_percent(self):
        t, s = init_params([4, 3], 1), init_params([4, 3], 2)
        s.biases[0][:] = 1.0
        out = teacher_epoch_update(t, s, 0.996)
        gap = flatten(s) - flatten(t)
        np.testing.assert_allclose(flatten(out) - flatten(t), 0.004 * gap, rtol=0, atol=1e-15)

    def test_geometric_convergence(self):
        t, s = init_params([4, 3], 1), init_params([4, 3], 2)
        d0 = np.abs(flatten(t) - flatten(s)).max()
        for k in range(1, 51):
            t = teacher_epoch_update(t, s, 0.996)
            assert np.abs(flatten(t) - flatten(s)).max() == pytest.approx(0.996**k * d0, abs=1e-9)
