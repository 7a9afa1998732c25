import numpy as np
import pytest

from curvedfiber.models import (
    box_mesh,
    make_twist_bar,
    make_uniform_bar,
    uniform_bar_stress,
)
from curvedfiber.psl import (
    compute_psl_weights,
    count_psl_weights,
    default_l_max,
    dump_psls,
    select_psls,
    trace_all,
    trace_psl,
)
from curvedfiber.stress import principal_decompose


@pytest.fixture(scope="module")
def bar():
    mesh = make_uniform_bar(nx=8, ny=3, nz=3)
    principal = principal_decompose(uniform_bar_stress(mesh))
    return mesh, principal


class TestTracing:
    def test_straight_in_uniform_field(self, bar):
        mesh, pr = bar
        psl = trace_psl(mesh, pr, 0)
        assert np.ptp(psl.points[:, 1]) < 1e-9
        assert np.ptp(psl.points[:, 2]) < 1e-9
        assert psl.terminated_by == "boundary"

    def test_spans_full_bar(self, bar):
        mesh, pr = bar
        psl = trace_psl(mesh, pr, 0)
        assert psl.points[:, 0].min() == pytest.approx(0.0, abs=1e-9)
        assert psl.points[:, 0].max() == pytest.approx(40.0, abs=1e-9)

    def test_max_length_termination(self, bar):
        mesh, pr = bar
        psl = trace_psl(mesh, pr, 0, l_max=3.0)
        assert psl.terminated_by == "max_length"
        assert psl.length <= 3.0 + mesh.average_edge_length

    def test_zero_direction_termination(self, bar):
        mesh, pr = bar
        tensors = uniform_bar_stress(mesh)
        tensors[mesh.centroids[:, 0] > 20.0] = 0.0  # dead half
        pr0 = principal_decompose(tensors)
        seed = int(np.argmin(np.abs(mesh.centroids[:, 0] - 10.0)))
        psl = trace_psl(mesh, pr0, seed)
        assert psl.terminated_by == "zero_direction"

    def test_source_element_crossed(self, bar):
        mesh, pr = bar
        psl = trace_psl(mesh, pr, 5)
        assert 5 in psl.crossed_elements

    def test_bad_seed_rejected(self, bar):
        mesh, pr = bar
        with pytest.raises(IndexError):
            trace_psl(mesh, pr, len(mesh.tets))
        with pytest.raises(ValueError):
            trace_psl(mesh, pr, 0, l_max=0.0)


class TestSelection:
    def test_all_selected_in_uniform_bar(self, bar):
        mesh, pr = bar
        psls = trace_all(mesh, pr)
        assert len(select_psls(psls, mesh)) == len(psls)

    def test_unlabeled_mesh_rejected(self, bar):
        _, pr = bar
        plain = box_mesh(2, 2, 2)
        with pytest.raises(ValueError):
            select_psls([], plain)

    def test_counts_unique_per_line(self, bar):
        mesh, pr = bar
        psls = trace_all(mesh, pr)
        w = count_psl_weights(mesh, select_psls(psls, mesh))
        # every element is crossed by its own seed line at least
        assert (w.n_psl >= 1).all()
        assert w.n_psl.max() <= len(psls)

    def test_batch_matches_object_route(self, bar):
        mesh, pr = bar
        w_obj = count_psl_weights(mesh, select_psls(trace_all(mesh, pr), mesh))
        w_batch = compute_psl_weights(mesh, pr)
        assert np.array_equal(w_obj.n_psl, w_batch.n_psl)

    def test_batch_matches_on_twist_bar(self):
        mesh, tensors = make_twist_bar(nx=10, ny=3, nz=3)
        pr = principal_decompose(tensors)
        w_obj = count_psl_weights(mesh, select_psls(trace_all(mesh, pr), mesh))
        w_batch = compute_psl_weights(mesh, pr)
        assert np.array_equal(w_obj.n_psl, w_batch.n_psl)

    def test_twist_bar_has_critical_band(self):
        mesh, tensors = make_twist_bar(nx=14, ny=4, nz=4)
        w = compute_psl_weights(mesh, principal_decompose(tensors))
        crit = w.n_psl > 0
        assert crit.any()
        # the critical band sits at mid height
        z = mesh.centroids[crit][:, 2]
        assert z.min() > 1.0 and z.max() < 9.0


def test_default_l_max_scales(bar):
    mesh, _ = bar
    assert default_l_max(mesh) == pytest.approx(100.0 * mesh.average_edge_length)


def test_dump_psls(tmp_path, bar):
    mesh, pr = bar
    psls = [trace_psl(mesh, pr, 0)]
    dump_psls(psls, tmp_path / "p.txt")
    line = (tmp_path / "p.txt").read_text().strip()
    head, *coords = line.split(";")
    assert head == "0"
    assert len(coords) == len(psls[0].points)
