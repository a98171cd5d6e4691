import math

import numpy as np
import pytest

from vortexblob.exceptions import ConvergenceWarning, ParameterError
from vortexblob.experiments import (STRONG, WEAK, compare_runs, perturb_weight, run_existence_pipeline,
                                    run_fundamental_estimate_probe, run_kernel_scaling_experiment,
                                    run_level, run_stability_experiment, stability_family)
from vortexblob.field import InitialVorticitySpec, VortexBlobField, discretize, l1_norm
from vortexblob.flow import FlowConfig
from vortexblob.grid import UniformGrid
from vortexblob.io import read_table

RANKINE = InitialVorticitySpec("rankine", {"omega0": 1.0, "radius": 1.0})
TREE = FlowConfig(dt=0.05, method="tree", theta=0.5)


@pytest.fixture(scope="module")
def existence_report():
    return run_existence_pipeline(RANKINE, [0.08, 0.04, 0.02], 1.0, TREE, gamma=0.002)


def test_existence_distances_decrease(existence_report):
    rep = existence_report
    assert rep.passed, rep.warnings
    for name in rep.METRICS:
        a, b = getattr(rep, name)
        assert a > b > 0, name


def test_existence_conserves_circulation(existence_report):
    for row in existence_report.circulation:
        assert all(c == row[0] for c in row)


def test_existence_identical_levels_give_zero():
    rep = run_existence_pipeline(RANKINE, [0.2, 0.2, 0.2], 0.2, FlowConfig(dt=0.05),
                                 label_spacing=0.25, v_spacing=0.25)
    assert rep.flow_distance == [0.0, 0.0]
    assert rep.omega_l1_distance == [0.0, 0.0]
    assert rep.velocity_distance == [0.0, 0.0]
    assert rep.passed


def test_existence_sign_changing_pair_circulation():
    spec = InitialVorticitySpec("sign_changing_pair", {"strength": 1.0, "radius": 0.5,
                                                       "centers": [[-0.6, 0], [0.6, 0]]})
    rep = run_existence_pipeline(spec, [0.2, 0.1, 0.05], 0.2, FlowConfig(dt=0.05),
                                 label_spacing=0.25, v_spacing=0.25)
    for row in rep.circulation:
        assert all(abs(c) <= 1e-10 for c in row)


@pytest.mark.parametrize("levels", [[0.1, 0.05], [0.05, 0.1, 0.2]])
def test_existence_rejects_bad_schedules(levels):
    with pytest.raises(ParameterError):
        run_existence_pipeline(RANKINE, levels, 0.1, TREE)


def test_existence_report_writes_versioned_csv(existence_report, tmp_path):
    existence_report.write(tmp_path)
    kind, header, rows = read_table(tmp_path / "summary.csv")
    assert kind == "existence" and header[0] == "eps_coarse" and len(rows) == 2
    assert (tmp_path / "config.yaml").exists()


# -- stability -----------------------------------------------------------------

def test_weak_family_keeps_magnitudes_and_flips_signs():
    base = InitialVorticitySpec("lamb_oseen", {"circulation": math.pi * 0.04, "core": 0.2})
    fam = stability_family(base, WEAK, 3)
    assert [lv for lv, _, _ in fam] == [8.0, 16.0, 32.0]
    fields = [f for _, f, _ in fam]
    for f in fields[1:]:
        assert np.array_equal(f.positions, fields[0].positions)
        assert np.array_equal(np.abs(f.weights), np.abs(fields[0].weights))
        assert not np.array_equal(f.weights, fields[0].weights)
        assert f.blob_scale == fields[0].blob_scale


def test_strong_family_halves_blob_scale():
    fam = stability_family(RANKINE, STRONG, 3, eps0=0.2)
    assert [f.blob_scale for _, f, _ in fam] == [0.2, 0.1, 0.05]
    for _, f, _ in fam:
        assert l1_norm(f) == pytest.approx(math.pi, rel=0.05)


def test_single_level_has_no_comparisons():
    rep = run_stability_experiment(RANKINE, STRONG, 1, 0.1, FlowConfig(dt=0.05), eps0=0.2,
                                   label_spacing=0.25, v_spacing=0.25)
    assert rep.levels == [0.2]
    assert rep.flow_distance == [0.0] and rep.consecutive_omega_l1 == []
    assert rep.passed


def test_stability_rejects_concentrating_family():
    with pytest.raises(ParameterError, match="equi-integrability"):
        run_stability_experiment(RANKINE, STRONG, 2, 0.1, FlowConfig(dt=0.05), eps0=0.2,
                                 equi_tol=1e-3, label_spacing=0.25)


def test_stability_rejects_unknown_perturbation():
    with pytest.raises(ParameterError):
        stability_family(RANKINE, "shear", 2)


def test_stability_small_strong_run(tmp_path):
    rep = run_stability_experiment(RANKINE, STRONG, 3, 0.5, TREE, eps0=0.16,
                                   gamma=0.01, label_spacing=0.1, v_spacing=0.1)
    assert rep.circulation_drift == [0.0, 0.0, 0.0]
    assert rep.flow_distance[-1] == 0.0
    rep.write(tmp_path)
    kind, header, rows = read_table(tmp_path / "levels.csv")
    assert kind == "stability-levels" and len(rows) == 3


# -- kernel scaling ------------------------------------------------------------

H4 = [2.0**-k for k in range(3, 7)]


@pytest.mark.parametrize("p, alpha", [(1.5, 1 / 3), (4 / 3, 0.5)])
def test_kernel_scaling_targets(p, alpha):
    rep = run_kernel_scaling_experiment([p], H4)
    fit = rep.fits[0]
    assert fit.alpha == pytest.approx(alpha)
    assert fit.in_band and not fit.inconclusive
    assert rep.passed


def test_kernel_scaling_deduplicates_h():
    rep = run_kernel_scaling_experiment([1.5], H4 + H4[:2])
    assert rep.fits[0].h == sorted(H4)


def test_kernel_scaling_needs_two_distinct_h():
    with pytest.raises(ParameterError):
        run_kernel_scaling_experiment([1.5], [0.1, 0.1])


def test_kernel_scaling_warns_on_few_h():
    with pytest.warns(ConvergenceWarning):
        run_kernel_scaling_experiment([1.5], [0.1, 0.05])


# -- fundamental estimate probe --------------------------------------------------

@pytest.fixture(scope="module")
def probe_field():
    spec = InitialVorticitySpec("lamb_oseen", {"circulation": 1.0, "core": 0.25})
    return discretize(spec, 0.05, 16)


def test_probe_identical_fields_degenerate(probe_field):
    rep = run_fundamental_estimate_probe(probe_field, probe_field, [0.01], 1.0, T=0.2,
                                         cfg=FlowConfig(dt=0.02), label_spacing=0.1,
                                         v_spacing=0.1)
    assert rep.distance[0.01] == 0.0
    for lam in rep.lambdas:
        assert rep.dv_l1[lam] == 0.0
        assert rep.degenerate(0.01, lam) and math.isnan(rep.ratio(0.01, lam))


def test_probe_distance_non_increasing_in_gamma(probe_field):
    cfg = FlowConfig(dt=0.02)
    labels = UniformGrid.covering_ball((0, 0), 1.0, 0.025)
    a = run_level(probe_field, 0.4, cfg, labels)
    b = run_level(perturb_weight(probe_field, 0.05), 0.4, cfg, labels)
    gammas = [1e-4, 2e-4, 4e-4, 8e-4]
    rep = compare_runs(a, b, gammas, 1.0, v_spacing=0.1, time_stride=5)
    d = [rep.distance[g] for g in gammas]
    assert d[0] > 0
    assert all(y <= x for x, y in zip(d, d[1:]))
    assert all(rep.dv_l1[lam] > 0 for lam in rep.lambdas)


def test_perturb_weight_targets_blob_nearest_origin():
    f = VortexBlobField([[1.0, 1.0], [0.1, 0.0], [-2.0, 0.0]], [1.0, 2.0, 3.0], 0.1)
    g = perturb_weight(f, 0.5)
    assert list(g.weights) == [1.0, 2.5, 3.0]
    assert list(perturb_weight(f, -1.0, index=2).weights) == [1.0, 2.0, 2.0]
