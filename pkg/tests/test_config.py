"""TOML experiment configs: parsing, preset layering, validation,
and the emit/parse round trip."""

import pytest

from mrfnln.config import (
    ExperimentConfig,
    default_experiment,
    emit_config,
    load_config,
)
from mrfnln.errors import ConfigError
from mrfnln.losses import CRConfig
from mrfnln.network import preset


def test_empty_text_gives_defaults():
    cfg = load_config("")
    assert cfg == default_experiment("B")
    assert cfg.network == preset("B")


def test_preset_selection():
    cfg = load_config('[network]\npreset = "L"\n')
    assert cfg.network == preset("L")


def test_overrides_layer_on_preset():
    cfg = load_config(
        '[network]\npreset = "tiny"\nbase_channels = 12\n'
        'block_kinds = ["rb", "rb", "fab", "rb", "rb"]\n'
    )
    base = preset("tiny")
    assert cfg.network.base_channels == 12
    assert cfg.network.block_kinds == ("rb", "rb", "fab", "rb", "rb")
    # untouched fields come from the preset
    assert cfg.network.stage_depths == base.stage_depths


def test_sampler_subtable():
    cfg = load_config(
        '[network]\npreset = "tiny"\n'
        '[network.sampler]\nvariant = "spp"\ngrid_sizes = [1, 2]\n'
    )
    assert cfg.network.sampler.variant == "spp"
    assert cfg.network.sampler.grid_sizes == (1, 2)


def test_train_table_types():
    cfg = load_config(
        "[train]\niterations = 7\nlr_init = 1e-3\nlr_final = 1e-5\n"
        "early_stop_psnr = 29\n"
    )
    assert cfg.train.iterations == 7
    assert isinstance(cfg.train.lr_final, float)
    assert cfg.train.early_stop_psnr == pytest.approx(29.0)


def test_loss_subtable():
    cfg = load_config(
        '[train.loss]\nvariant = "sifcr"\nbeta = 0.25\n'
    )
    assert cfg.train.loss == CRConfig(variant="sifcr", beta=0.25)


@pytest.mark.parametrize("text", [
    "[network]\nwibble = 1\n",
    "[train]\nmomentum = 0.9\n",
    "[train.loss]\nvariant = \"dfcr\"\nrampup = 2\n",
    "[network.sampler]\nstride = 2\n",
    "[rocket]\nfuel = \"lots\"\n",
])
def test_unknown_keys_rejected(text):
    with pytest.raises(ConfigError):
        load_config(text)


def test_invalid_toml_is_config_error():
    with pytest.raises(ConfigError):
        load_config("[network\npreset =")


def test_bad_values_surface_as_config_error():
    with pytest.raises(ConfigError):
        load_config('[network]\npreset = "colossal"\n')
    with pytest.raises(ConfigError):
        load_config("[train]\ncrop = 31\n")  # must be a multiple of 16


def test_path_input(tmp_path):
    p = tmp_path / "exp.toml"
    p.write_text('[network]\npreset = "tiny"\n')
    assert load_config(p).network == preset("tiny")
    assert load_config(str(p)).network == preset("tiny")


@pytest.mark.parametrize("name", ["B", "L", "tiny"])
def test_emit_round_trips_presets(name):
    cfg = default_experiment(name)
    assert load_config(emit_config(cfg)) == cfg


def test_emit_round_trips_modified():
    cfg = load_config(
        '[network]\npreset = "tiny"\nattention = "nlb"\n'
        'global_residual = true\n'
        '[network.sampler]\nvariant = "none"\n'
        '[train]\niterations = 3\nseed = 5\nearly_stop_psnr = 33.5\n'
        '[train.loss]\nvariant = "original"\n'
    )
    again = load_config(emit_config(cfg))
    assert again == cfg
    assert isinstance(again, ExperimentConfig)
