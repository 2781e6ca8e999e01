import pytest

from cardiorom.calibration import ChainConfig
from cardiorom.pipeline import PipelineConfig, UQConfig, run_offline


@pytest.fixture(scope="session")
def mini_pipeline(tmp_path_factory):
    """One miniature offline run shared by the pipeline and CLI tests."""
    out = tmp_path_factory.mktemp("mini") / "store"
    config = PipelineConfig(
        out_dir=str(out), seed=0, n_pop=30, n_geom=4,
        rom_dt=4.0, rom_n_cycles=3,
        chain=ChainConfig(n_adaptive=600, reset_every=300, n_regular=600,
                          n_burnin=150),
        uq=UQConfig(n_mc=200))
    manifest = run_offline(config)
    return config, manifest
