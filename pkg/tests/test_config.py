import pytest

from stylediff.config import load_run_config
from stylediff.errors import ConfigError


def test_defaults_mirror_the_benchmark_table():
    config = load_run_config()
    assert config.get("transform", "embedding") == 8
    assert config.get("transform", "delay") == 3
    assert config.get("transform", "width") == 8
    assert config.get("diffusion", "steps") == 18
    assert config.get("diffusion", "base_channels") == 128
    assert config.get("diffusion", "channel_multipliers") == (1, 2, 2, 2)
    assert config.get("diffusion", "learning_rate") == 1e-4
    assert config.get("diffusion", "batch_size") == 128
    assert config.get("stl", "period") == 24
    assert config.get("stl", "robust") is True
    assert config.get("guidance", "layers") == 2
    assert config.get("guidance", "model_dim") == 64
    assert config.get("guidance", "learning_rate") == 1e-3


def test_config_file_overrides_defaults(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text(
        "[run]\nseed = 11\n\n[diffusion]\nsteps = 6\nbase_channels = 16\n"
        "channel_multipliers = 1,2\n\n[stl]\nrobust = false\n"
    )
    config = load_run_config(ini)
    assert config.seed == 11
    assert config.get("diffusion", "steps") == 6
    assert config.get("diffusion", "channel_multipliers") == (1, 2)
    assert config.get("stl", "robust") is False
    # untouched keys keep their defaults
    assert config.get("guidance", "model_dim") == 64


def test_flag_overrides_beat_the_config_file(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nseed = 11\n")
    config = load_run_config(ini, overrides={"run": {"seed": 99}})
    assert config.seed == 99


def test_unknown_keys_and_sections_rejected(tmp_path):
    bad_key = tmp_path / "bad_key.ini"
    bad_key.write_text("[diffusion]\nsteppes = 18\n")
    with pytest.raises(ConfigError):
        load_run_config(bad_key)
    bad_section = tmp_path / "bad_section.ini"
    bad_section.write_text("[difusion]\nsteps = 18\n")
    with pytest.raises(ConfigError):
        load_run_config(bad_section)
    with pytest.raises(ConfigError):
        load_run_config(None, overrides={"run": {"sed": 1}})


def test_values_validated_before_any_work(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[diffusion]\nsteps = 1\n")
    with pytest.raises(ConfigError):
        load_run_config(ini)
    bad_type = tmp_path / "bad_type.ini"
    bad_type.write_text("[diffusion]\nsteps = eighteen\n")
    with pytest.raises(ConfigError):
        load_run_config(bad_type)


def test_missing_config_file():
    with pytest.raises(ConfigError):
        load_run_config("/nonexistent/run.ini")


def test_digest_stable_and_sensitive():
    a = load_run_config()
    b = load_run_config()
    assert a.digest() == b.digest()
    c = load_run_config(None, overrides={"run": {"seed": 1}})
    assert c.digest() != a.digest()


def test_typed_views_construct():
    config = load_run_config()
    assert config.transform_params().embedding == 8
    assert config.schedule().steps == 18
    assert config.stl_params().period == 24
    assert config.eval_config().histogram_bins == 50
    assert config.kernel_config(length=24).total_steps == 18
    assert config.denoiser_config(features=5).in_channels == 5
    assert config.guidance_config(features=6, length=24).input_dim == 13
