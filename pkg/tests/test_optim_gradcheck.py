import numpy as np
import pytest

from unishade.errors import ContractViolation, InvalidParameterError, NumericalError
from unishade.gradcheck import (
    GradientReport,
    LossSpec,
    ParameterVector,
    _has_kink,
    finite_diff_check,
    relative_error,
    step_sweep,
)
from unishade.optim import Adam, TrainConfig, View, smoothed, train
from unishade.render import render
from unishade.scene import PARAM_GROUPS
from unishade.shading import EnvironmentLight
from unishade.synthetic import round_trip_problem, tiny_camera, tiny_scene, two_tone_env


def _problem(views=2, size=16):
    truth, init, cams, _, env = round_trip_problem(count=60, views=views, size=size)
    light = EnvironmentLight.from_radiance(env)
    data = [View(c, render(truth, c, light).deferred) for c in cams]
    return init, data, light


SMALL = dict(probe_resolution=(2, 2, 2), probe_face_resolution=4, ao_samples=16, env_update_interval=2)


def test_config_from_mapping_coerces():
    cfg = TrainConfig.from_mapping({"stage1_iterations": "7", "lambda_alpha": "0.5", "learn_environment": "no",
                                    "probe_resolution": "3, 4 5", "probe_threshold": "none"})
    assert cfg.stage1_iterations == 7 and cfg.lambda_alpha == 0.5
    assert cfg.learn_environment is False
    assert cfg.probe_resolution == (3, 4, 5) and cfg.probe_threshold is None
    with pytest.raises(InvalidParameterError):
        TrainConfig.from_mapping({"lr_everything": 1})
    with pytest.raises(InvalidParameterError):
        TrainConfig(lambda_dssim=1.5)


def test_position_lr_decays_log_linearly():
    cfg = TrainConfig(spatial_scale=2.0)
    assert cfg.learning_rates(0, 100)["positions"] == pytest.approx(2 * cfg.lr_positions)
    assert cfg.learning_rates(100, 100)["positions"] == pytest.approx(2 * cfg.lr_positions_final)
    mid = cfg.learning_rates(50, 100)["positions"]
    assert mid == pytest.approx(2 * np.sqrt(cfg.lr_positions * cfg.lr_positions_final))
    assert set(cfg.learning_rates()) == {name for name, _ in PARAM_GROUPS}


def test_adam_first_step_is_lr_times_sign():
    p = {"x": np.array([1.0, -2.0, 3.0])}
    adam = Adam(p, eps=1e-30)
    adam.step(p, {"x": np.array([0.3, -5.0, 0.0])}, {"x": 0.1})
    np.testing.assert_allclose(p["x"], [0.9, -1.9, 3.0], rtol=1e-14)


def test_adam_zero_lr_skips_group():
    p = {"x": np.ones(2), "y": np.ones(2)}
    adam = Adam(p)
    adam.step(p, {"x": np.ones(2), "y": np.ones(2)}, {"x": 0.0, "y": 0.5})
    assert np.array_equal(p["x"], np.ones(2))
    assert adam.t == {"x": 0, "y": 1}


def test_zero_iterations_returns_copy():
    init, data, light = _problem()
    res = train(init, data, light, TrainConfig(stage1_iterations=0, stage2_iterations=0))
    assert res.scene is not init
    np.testing.assert_array_equal(res.scene.positions, init.positions)
    assert res.log == []
    with pytest.raises(InvalidParameterError):
        train(init, [], light)


def test_training_is_deterministic_and_keeps_invariants():
    init, data, light = _problem()
    cfg = TrainConfig(stage1_iterations=4, stage2_iterations=2, **SMALL)
    a = train(init, data, light, cfg)
    b = train(init, data, light, cfg)
    assert a.scene.positions.tobytes() == b.scene.positions.tobytes()
    assert a.env.radiance.tobytes() == b.env.radiance.tobytes()
    a.scene.check_invariants()
    assert [e["stage"] for e in a.log] == [1] * 4 + [2] * 2
    assert a.probes is not None


def test_stage_two_freezes_geometry():
    init, data, light = _problem()
    s1 = train(init, data, light, TrainConfig(stage1_iterations=3, stage2_iterations=0, **SMALL))
    both = train(init, data, light, TrainConfig(stage1_iterations=3, stage2_iterations=3, **SMALL))
    for name in ("positions", "quats", "log_scales", "opacity_logits"):
        np.testing.assert_array_equal(getattr(both.scene, name), getattr(s1.scene, name))
    assert not np.array_equal(both.scene.albedo, s1.scene.albedo)


def test_loss_decreases_on_round_trip():
    init, data, light = _problem(views=3, size=24)
    cfg = TrainConfig(stage1_iterations=60, stage2_iterations=0, learn_environment=False,
                      lr_positions=1e-3, lr_positions_final=1e-4, lr_albedo=2e-2, **SMALL)
    res = train(init, data, light, cfg)
    tot = [e["total"] for e in res.log]
    assert np.mean(tot[-9:]) < np.mean(tot[:9])


def test_nonfinite_reference_raises(tmp_path):
    init, data, light = _problem()
    data[0].image[0, 0, 0] = np.nan
    data[1].image[0, 0, 0] = np.nan
    ck = tmp_path / "nan.ck"
    with pytest.raises(NumericalError):
        train(init, data, light, TrainConfig(stage1_iterations=2, stage2_iterations=0, **SMALL), checkpoint_path=ck)
    assert ck.exists()


def test_smoothed_window():
    np.testing.assert_allclose(smoothed(np.arange(5.0), window=2)[-1], 3.5)


# ---------------------------------------------------------------- gradcheck

def test_parameter_vector_roundtrip():
    sc = tiny_scene(count=4)
    pv = ParameterVector(len(sc))
    assert pv.size == 18 * 4
    vec = pv.gather(sc)
    back = pv.scatter(vec, sc)
    np.testing.assert_array_equal(pv.gather(back), vec)
    assert pv.index[pv.position("albedo", 2, 1)] == ("albedo", 2, 1)
    with pytest.raises(ContractViolation):
        pv.scatter(vec[:-1], sc)


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)
    assert relative_error(2.0, 1.0) == 0.5


def test_kink_detector():
    # smooth: successive differences shrink by 4
    assert not _has_kink(1.0 + 16e-6, 1.0 + 4e-6, 1.0 + 1e-6)
    assert _has_kink(1.0, 0.5, 0.25)
    assert not _has_kink(1.0, 1.0, 1.0)


def test_tie_excluded_and_subset():
    sc = tiny_scene(count=3)
    sc.log_scales[0] = [-3.0, -3.0, -1.0]
    cam = tiny_camera(16)
    light = EnvironmentLight.from_radiance(two_tone_env())
    ref = np.zeros((16, 16, 3))
    rep = finite_diff_check(sc, cam, light, LossSpec(ref), param_subset=["log_scales"])
    assert isinstance(rep, GradientReport)
    assert len(rep.labels) == 9
    assert rep.status[0] == "excluded:argmin_tie" and rep.status[1] == "excluded:argmin_tie"
    assert rep.pass_rate == 1.0
    assert rep.to_text().count("\n") == 10


def test_albedo_gradient_exact_and_sweep():
    sc = tiny_scene(count=3)
    cam = tiny_camera(16)
    light = EnvironmentLight.from_radiance(two_tone_env())
    ref = render(sc, cam, light).deferred * 0.7
    spec = LossSpec(ref, stage=2)
    rep = finite_diff_check(sc, cam, light, spec, param_subset=["albedo"])
    assert rep.summary()["checked"] == 9
    assert rep.pass_rate == 1.0
    sweep = step_sweep(sc, cam, light, spec, param_subset=["albedo"], steps=(1e-4, 1e-5))
    assert set(sweep) == {1e-4, 1e-5}
    assert all(v < 1e-3 for v in sweep.values())
