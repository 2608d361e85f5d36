import sys
import os

sys.path.append(os.path.join(os.path.dirname(__file__), os.pardir))

from env_config import format_prefix, read_env_config
from vidmask.config import RunConfig

def test_prefixed_fields_only():
    """
    Only VIDMASK_-prefixed run configuration fields are read. Unrelated env vars are ignored.
    """

    env = {
        'HOSTNAME': 'localhost',
        'PERIOD': '4',
        'VIDMASK_PERIOD': '8,16',
        'VIDMASK_SEED_SCENE': '3',
    }

    config = read_env_config("VIDMASK", env)

    assert 'hostname' not in config
    assert config == {'period': '8,16', 'seed_scene': '3'}


def test_paths_are_not_read_from_env():
    """
    Input and output paths always come from flags or the config file.
    """

    env = {
        'VIDMASK_OUT': '/tmp/elsewhere',
        'VIDMASK_INPUT': '/tmp/data',
        'VIDMASK_TOY': '1',
    }

    assert read_env_config("VIDMASK", env) == {'toy': '1'}

def test_unknown_field_ignored():
    env = {
        'VIDMASK_NOT_A_FIELD': 'x',
        'VIDMASK_STATIC_KEEP': '0.1',
    }

    assert read_env_config("VIDMASK_", env) == {'static_keep': '0.1'}

def test_format_prefix():
    assert format_prefix("VIDMASK") == "VIDMASK_"
    assert format_prefix("VIDMASK_") == "VIDMASK_"
    assert format_prefix("") == ""

def test_env_values_validate():
    """
    String values from the environment are parsed by the run configuration.
    """

    env = {
        'VIDMASK_PERIOD': '8,16',
        'VIDMASK_STATIC_KEEP': '0.1,0.3',
        'VIDMASK_TOY': 'true',
    }

    config = RunConfig.resolve(env=read_env_config("VIDMASK", env))
    assert config.period == [8, 16]
    assert config.static_keep == [0.1, 0.3]
    assert config.toy
    assert config.embed_dim == 64
