import csv
import json
import os

import numpy as np
import pytest

from mflsi.dynamics import SimConfig, TrajectoryLog
from mflsi.errors import InvalidArgument
from mflsi.experiment import (ExperimentConfig, OutputNotWritable, TeacherSpec, TeacherStream, bound_reports,
                              emit_plot_data, make_teacher_dataset, neuron_rows, run_experiment)
from mflsi.model import ActivationSpec, LossSpec, RegularizerSpec, Specs


def _small_cfg(tmp_path=None, **kw):
    base = dict(sim=SimConfig(N=12, d=2, lam=1.0, dt=1e-2, batch=20, record_every=2, seed=3),
                epochs=6, epoch_size=20, decay_every_epochs=3, eval_size=50)
    base.update(kw)
    if tmp_path is not None:
        base["outputs"] = str(tmp_path)
    return ExperimentConfig(**base)


def _read(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_zero_teacher_gives_zero_labels():
    t = TeacherSpec([(0.0, [1.0, 2.0]), (0.0, [-1.0, 0.5])])
    assert np.all(make_teacher_dataset(t, 30, 0).labels == 0.0)


def test_reference_teacher_labels():
    t = TeacherSpec.reference()
    act = ActivationSpec()
    x = np.array([[0.6, 0.8]])
    expected = 0.5 * (1.1 * act.sigma(np.array(2.2)) - 3.2 * act.sigma(np.array(-1.0)))
    assert t.labels(x)[0] == pytest.approx(expected, rel=1e-14)
    assert TeacherSpec.reference(teacher_sum=True).labels(x)[0] == pytest.approx(2 * expected, rel=1e-14)


@pytest.mark.parametrize("sampler", ["sphere", "ball", "gaussian-clipped"])
def test_inputs_respect_x_max(sampler):
    t = TeacherSpec.reference(input_sampler=sampler)
    X = t.sample_inputs(500, np.random.default_rng(0))
    r = np.linalg.norm(X, axis=1)
    assert np.all(r <= t.activation.x_max * (1 + 1e-12))
    if sampler == "sphere":
        np.testing.assert_allclose(r, t.activation.x_max)


def test_teacher_rejects():
    with pytest.raises(InvalidArgument):
        TeacherSpec([])
    with pytest.raises(InvalidArgument):
        TeacherSpec([(1.0, [1.0]), (1.0, [1.0, 2.0])])
    with pytest.raises(InvalidArgument):
        TeacherSpec.reference(input_sampler="cube")
    with pytest.raises(InvalidArgument):
        TeacherStream(TeacherSpec.reference(), 200, 30, 0)


def test_stream_batches_and_epochs():
    s = TeacherStream(TeacherSpec.reference(), 20, 5, seed=1)
    a, b = s(0), s(3)
    full = s.epoch_data(0)
    np.testing.assert_array_equal(a.inputs, full.inputs[:5])
    np.testing.assert_array_equal(b.inputs, full.inputs[15:])
    assert not np.array_equal(s(4).inputs, a.inputs)
    np.testing.assert_array_equal(TeacherStream(TeacherSpec.reference(), 20, 5, seed=1)(4).inputs, s(4).inputs)


def test_epoch_conversion():
    sim = _small_cfg(sim=SimConfig(d=2, batch=5)).sim_config()
    assert sim.steps == 6 * 4 and sim.lr_decay_every == 3 * 4


def test_zero_epochs(tmp_path):
    res = run_experiment(_small_cfg(tmp_path, epochs=0))
    for r in res.values():
        assert len(r.log) == 1 and r.rate_fit is None
    rows = _read(tmp_path / "loss_l2.csv")
    assert len(rows) == 2


def test_deterministic_and_arm_isolated(tmp_path):
    a = run_experiment(_small_cfg())
    b = run_experiment(_small_cfg(regularizers={"l3": RegularizerSpec.power(1.0, 3.0)}))
    assert a["l3"].log.to_csv() == b["l3"].log.to_csv()
    assert a["l2"].log.Q[0] != a["l3"].log.Q[0] and a["l2"].log.risk[0] == a["l3"].log.risk[0]


def test_outputs_written(tmp_path):
    run_experiment(_small_cfg(tmp_path, sim=SimConfig(N=12, d=2, dt=1e-2, batch=20, record_every=2,
                                                      keep_snapshots=True)))
    names = set(os.listdir(tmp_path))
    for arm in ("l2", "l3"):
        assert {f"trajectory_{arm}.csv", f"report_{arm}.json", f"snapshots_{arm}.json", f"loss_{arm}.csv",
                f"neurons_{arm}.csv", f"neurons_{arm}_scaled.csv", f"bounds_{arm}.json"} <= names
    assert "teacher.csv" in names
    neurons = _read(tmp_path / "neurons_l2.csv")
    assert neurons[0] == ["u", "w1", "w2", "uw1", "uw2"] and len(neurons) == 13
    scaled = np.array(_read(tmp_path / "neurons_l2_scaled.csv")[1:], dtype=float)
    plain = np.array(neurons[1:], dtype=float)
    np.testing.assert_allclose(scaled[:, 3:], plain[:, 3:] / 12, rtol=1e-15)
    teacher = np.array(_read(tmp_path / "teacher.csv")[1:], dtype=float)
    np.testing.assert_allclose(teacher, [[1.1, 1, 2, 1.1, 2.2], [-3.2, -3, 1, 9.6, -3.2]], rtol=1e-15)
    report = json.loads((tmp_path / "report_l2.json").read_text())
    assert report["skipped_bounds"]["lyapunov"].startswith("loss gradient is unbounded")


def test_loss_csv_columns(tmp_path):
    run_experiment(_small_cfg(tmp_path))
    rows = _read(tmp_path / "loss_l3.csv")
    assert rows[0] == ["t", "risk", "reg_mean", "entropy", "regularized_loss", "Q", "grad_norm_mean"]
    t, risk, reg, H, rl, Q, _ = map(float, rows[-1])
    assert rl == pytest.approx(risk + reg) and Q == pytest.approx(rl - H)


def test_header_only_for_empty_log(tmp_path):
    emit_plot_data({"x": TrajectoryLog()}, {}, tmp_path, d=3)
    assert _read(tmp_path / "loss_x.csv") == [["t", "risk", "reg_mean", "entropy", "regularized_loss", "Q",
                                               "grad_norm_mean"]]
    assert _read(tmp_path / "neurons_x.csv") == [["u", "w1", "w2", "w3", "uw1", "uw2", "uw3"]]


def test_neuron_rows():
    rows = neuron_rows([2.0, -1.0], [[1.0, 0.5], [3.0, 0.0]], 0.5)
    np.testing.assert_array_equal(rows, [[2.0, 1.0, 0.5, 1.0, 0.5], [-1.0, 3.0, 0.0, -1.5, 0.0]])


def test_unwritable_output_fails_before_compute(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = _small_cfg(outputs=str(blocker / "sub"), epochs=10_000)
    with pytest.raises(OutputNotWritable) as info:
        run_experiment(cfg)
    assert info.value.exit_code == 2


def test_config_validation():
    with pytest.raises(InvalidArgument):
        run_experiment(_small_cfg(regularizers={}))
    with pytest.raises(InvalidArgument):
        run_experiment(_small_cfg(sim=SimConfig(d=3, batch=20)))
    with pytest.raises(InvalidArgument):
        run_experiment(_small_cfg(epochs=-1))


def test_bound_reports_routes():
    act = ActivationSpec()
    rep, skip = bound_reports(Specs(act, LossSpec("huber", L1=1.0), RegularizerSpec.quartic(1.0)), 2, 1.0)
    assert set(rep) == {"quartic-holley-stroock", "lyapunov"} and not skip
    rep, skip = bound_reports(Specs(act, LossSpec("huber", L1=1.0), RegularizerSpec.power(1.0, 2.0)), 2, 1.0)
    assert set(rep) == set() and set(skip) == {"quartic-holley-stroock", "lyapunov"}
    rep, skip = bound_reports(Specs(act, LossSpec("huber", L1=1.0), RegularizerSpec.power(1.0, 3.0)), 2, 1.0)
    assert set(rep) == {"lyapunov"}
    assert bound_reports(Specs(act, LossSpec("huber", L1=1.0), RegularizerSpec.quartic(1.0)), 2, 0.0)[0] == {}


def test_one_dimensional_run_uses_grid_q_star():
    teacher = TeacherSpec([(1.1, [1.0]), (-3.2, [-1.0])])
    cfg = ExperimentConfig(sim=SimConfig(N=40, d=1, lam=1.0, dt=5e-3, batch=20, record_every=5),
                           teacher=teacher, regularizers={"q": RegularizerSpec.quartic(1.0)},
                           loss=LossSpec("clipped-square", L1=10.0), epochs=60, epoch_size=20,
                           decay_every_epochs=1000, eval_size=40)
    res = run_experiment(cfg)["q"]
    assert res.q_star_source == "grid"
    assert set(res.bounds) == {"quartic-holley-stroock", "lyapunov"}
