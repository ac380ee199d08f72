import numpy as np
import pytest

from tctn.model import TCTNConfig, init_parameters


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_config():
    return TCTNConfig(
        input_len=3,
        horizon=2,
        height=8,
        width=8,
        channels=1,
        embed_dim=8,
        num_blocks=2,
        embed_kernel=3,
        tc_kernel=(3, 3, 3),
        dropout_p=0.1,
        seed=7,
    )


@pytest.fixture
def tiny_model(tiny_config):
    return init_parameters(tiny_config, dtype=np.float64)


def zero_sublayer_weights(model) -> None:
    """Zero every conv/linear weight and bias, keeping layer-norm params."""
    for p in model.parameters:
        if ".ln" not in p.name:
            p.tensor.data[:] = 0.0


def copy_probe_model(config):
    """Model that reproduces its input: identity embedding, zero blocks,
    channel-picking forecaster. Requires use_posenc=False and non-negative
    inputs (leaky ReLU passes them unchanged)."""
    assert not config.use_posenc
    model = init_parameters(config, dtype=np.float64)
    for p in model.parameters:
        if p.name.endswith("gamma"):
            p.tensor.data[:] = 1.0
        elif ".ln" in p.name:
            p.tensor.data[:] = 0.0
        else:
            p.tensor.data[:] = 0.0
    w1 = model.param("embed.conv1.weight")  # (ek, ek, C, D)
    center = config.embed_kernel // 2
    for c in range(config.channels):
        w1.data[center, center, c, c] = 1.0
    wf = model.param("forecaster.weight")  # (D, C)
    for c in range(config.channels):
        wf.data[c, c] = 1.0
    return model
