import pytest

from mintad import config as cfgmod
from mintad.config import ConfigError, LossConfig, RunConfig
from mintad.losses import LossWeights


class TestRoundTrip:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfgmod.loads(cfgmod.dumps(cfg)) == cfg

    def test_every_field_survives(self, tmp_path):
        cfg = RunConfig().replace(seed=7, precision="float64", run_id="x", data={"noise_std": 0.35},
                                  model={"use_query": False, "omega0": 12.5},
                                  loss={"prior_reduction": "mean"}, schedule={"decay_factor": 0.25})
        cfgmod.save(cfg, tmp_path / "c.ini")
        assert cfgmod.load(tmp_path / "c.ini") == cfg

    def test_partial_file_keeps_defaults(self):
        cfg = cfgmod.loads("[model]\nwidth = 32\n")
        assert cfg.model.width == 32 and cfg.model.heads == RunConfig().model.heads


class TestErrors:
    @pytest.mark.parametrize("text", [
        "[model]\nwidthh = 32\n",
        "[nosuch]\nx = 1\n",
        "[run]\nlearning = 1\n",
        "[model]\nwidth = wide\n",
        "[model]\nuse_query = maybe\n",
        "not an ini file",
    ])
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            cfgmod.loads(text)

    @pytest.mark.parametrize("override", [
        "precision=float16", "optim.kind=sgd", "optim.lr=0", "schedule.decay_epoch=500",
        "model.heads=3", "model.width=30", "loss.prior_reduction=max", "loss.lambda_ce=-1", "batch_size=0",
    ])
    def test_validation(self, override):
        with pytest.raises(ConfigError):
            cfgmod.loads("", [override])

    def test_override_needs_equals(self):
        with pytest.raises(ConfigError):
            cfgmod.apply_overrides(RunConfig(), ["model.width"])

    def test_replace_unknown(self):
        with pytest.raises(ConfigError):
            RunConfig().replace(model={"depth": 3})
        with pytest.raises(ConfigError):
            RunConfig().replace(nonsense=1)


class TestPrecedence:
    def test_override_beats_file_beats_base(self):
        base = cfgmod.preset("quick")
        cfg = cfgmod.loads("[model]\nwidth = 48\nheads = 4\n", ["model.heads=8"], base)
        assert cfg.model.width == 48
        assert cfg.model.heads == 8
        assert cfg.batch_size == 4

    def test_run_section_keys(self):
        cfg = cfgmod.apply_overrides(RunConfig(), ["seed=5", "--run_id=abc"])
        assert cfg.seed == 5 and cfg.run_id == "abc"


class TestPresets:
    def test_desk_is_defaults(self):
        assert cfgmod.preset("desk") == RunConfig()

    def test_quick(self):
        q = cfgmod.preset("quick")
        assert q.model.width == 32 and q.schedule.total_epochs == 40
        assert q.loss.lambda_ce == 1.0 and q.loss.lambda_prior == 0.1

    def test_paper_schedule(self):
        assert cfgmod.preset("paper").schedule.total_epochs == 1000

    def test_unknown(self):
        with pytest.raises(ConfigError):
            cfgmod.preset("huge")


class TestDefaults:
    def test_loss_weights(self):
        assert LossConfig().lambda_ce == 1.0 and LossConfig().lambda_prior == 0.1
        assert LossWeights().ce == 1.0 and LossWeights().prior == 0.1

    def test_prior_sum_by_default(self):
        assert LossConfig().prior_reduction == "sum"

    def test_architecture_defaults(self):
        m = RunConfig().model
        assert (m.enc_depth, m.dec_depth, m.inr_depth, m.token_dim, m.omega0) == (4, 4, 5, 32, 30.0)
        assert m.dropout == 0.1 and m.ff_mult == 4
