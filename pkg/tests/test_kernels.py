import numpy as np
import pytest

from distilkit import kernels, layers
from distilkit.errors import ConfigError

from _oracles import random_lstm_params

needs_compiled = pytest.mark.skipif(
    "compiled" not in kernels.available_kernels(),
    reason="compiled kernel not built")


@pytest.fixture
def restore_kernel():
    previous = kernels.active_kernel()
    yield
    kernels.set_kernel(previous)


def test_python_kernel_always_available():
    assert "python" in kernels.available_kernels()


def test_set_kernel_rejects_unknown():
    with pytest.raises(ConfigError):
        kernels.set_kernel("fortran")


@needs_compiled
def test_forward_backward_agree_across_backends(restore_kernel):
    rng = np.random.default_rng(0)
    for trial in range(5):
        H = int(rng.integers(1, 9))
        D = int(rng.integers(1, 9))
        T = int(rng.integers(1, 12))
        p = random_lstm_params(rng, H, D, scale=1.0)
        xs = rng.standard_normal((T, D)) * 3  # large enough to clip sometimes
        grad_h = rng.standard_normal((T, H))

        outputs = {}
        for name in ("python", "compiled"):
            kernels.set_kernel(name)
            h, cache = layers.lstm_sequence_forward(p, xs)
            grads, gxs, (gh0, gc0) = layers.lstm_sequence_backward(p, cache, grad_h)
            outputs[name] = (h, cache.c, cache.mask, gxs, gh0, gc0,
                             *(m for m in grads.matrices()))
        for a, b in zip(outputs["python"], outputs["compiled"]):
            np.testing.assert_allclose(a, b, atol=1e-12, rtol=1e-12)


@needs_compiled
def test_clip_contract_holds_in_both_backends(restore_kernel):
    rng = np.random.default_rng(1)
    p = random_lstm_params(rng, 4, 3, scale=3.0)
    xs = rng.standard_normal((64, 3)) * 50
    for name in ("python", "compiled"):
        kernels.set_kernel(name)
        _, cache = layers.lstm_sequence_forward(p, xs)
        assert np.all(np.abs(cache.c) <= p.cell_clip)
        assert np.any(cache.mask == 0.0)  # the adversarial inputs did clip


def test_env_override_rejected_when_unknown(monkeypatch):
    monkeypatch.setenv("DISTILKIT_KERNEL", "quantum")
    with pytest.raises(ConfigError):
        kernels._initial_choice()


def test_env_override_python(monkeypatch):
    monkeypatch.setenv("DISTILKIT_KERNEL", "python")
    assert kernels._initial_choice() == "python"
