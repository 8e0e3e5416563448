import numpy as np
import pytest

from parklab.nn import (
    BadGradient,
    CheckpointError,
    F32,
    ParameterSet,
    adam_step,
    load_tensors,
    save_tensors,
)


def test_first_adam_step_magnitude():
    # constant gradient 1, lr 0.1: bias-corrected first step is ~lr
    params = ParameterSet()
    params.add("p", np.array([5.0], dtype=F32))
    adam_step(params, {"p": np.array([1.0], dtype=F32)}, lr=0.1)
    assert params["p"][0] == pytest.approx(5.0 - 0.1, abs=1e-6)


def test_zero_gradients_leave_parameters_unchanged():
    params = ParameterSet()
    params.add("p", np.array([1.0, -2.0], dtype=F32))
    before = params["p"].copy()
    for _ in range(5):
        adam_step(params, {"p": np.zeros(2, dtype=F32)}, lr=0.1)
    assert np.array_equal(params["p"], before)


def test_adam_determinism_bitwise():
    def run():
        rng = np.random.default_rng(3)
        params = ParameterSet()
        params.add("w", rng.standard_normal((4, 4)).astype(F32))
        for i in range(100):
            g = np.sin(np.arange(16, dtype=F32)).reshape(4, 4) * F32(0.1 * (i % 7))
            adam_step(params, {"w": g}, lr=1e-3)
        return params["w"].tobytes()

    assert run() == run()


def test_nan_gradient_aborts_with_name():
    params = ParameterSet()
    params.add("fine", np.zeros(2, dtype=F32))
    params.add("broken", np.zeros(2, dtype=F32))
    grads = {"fine": np.zeros(2, dtype=F32),
             "broken": np.array([1.0, np.nan], dtype=F32)}
    with pytest.raises(BadGradient) as err:
        adam_step(params, grads, lr=1e-3)
    assert "broken" in str(err.value)


def test_missing_gradient_rejected():
    params = ParameterSet()
    params.add("a", np.zeros(1, dtype=F32))
    with pytest.raises(ValueError):
        adam_step(params, {}, lr=1e-3)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "enc.w": rng.standard_normal((3, 4, 5)).astype(F32),
        "enc.b": np.zeros(4, dtype=F32),
        "scalar": np.array(2.5, dtype=F32),
    }
    path = tmp_path / "model.caap"
    save_tensors(path, tensors)
    loaded = load_tensors(path)
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert loaded[name].shape == tensors[name].shape
        assert np.array_equal(loaded[name], tensors[name])


def test_checkpoint_header_layout(tmp_path):
    path = tmp_path / "m.caap"
    save_tensors(path, {"x": np.array([1.0], dtype=F32)})
    blob = path.read_bytes()
    assert blob[:4] == b"CAAP"
    assert int.from_bytes(blob[4:8], "little") == 1   # version
    assert int.from_bytes(blob[8:12], "little") == 1  # tensor count
    assert int.from_bytes(blob[12:14], "little") == 1  # name length
    assert blob[14:15] == b"x"


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.caap"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError):
        load_tensors(path)


def test_parameter_shape_immutable():
    params = ParameterSet()
    params.add("w", np.zeros((2, 2), dtype=F32))
    with pytest.raises(ValueError):
        params["w"] = np.zeros(3, dtype=F32)
    with pytest.raises(ValueError):
        params.add("w", np.zeros(1, dtype=F32))
