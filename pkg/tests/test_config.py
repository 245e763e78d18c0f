import pytest

from simplexdiff.config import (
    ConfigError,
    OUT_ROOT_ENV,
    RunConfig,
    apply_overrides,
    load_config,
    parse_config,
)


class TestDefaults:
    def test_every_field_has_a_default(self):
        cfg = RunConfig()
        assert cfg.get("schedule", "k") == 5.0
        assert cfg.get("schedule", "t_train") == 5000
        assert cfg.get("generate", "num_steps") == 1000
        assert cfg.get("train", "learning_rate") == 3e-5
        assert cfg.get("train", "rho") == 0.5
        assert cfg.get("model", "d_model") == 128

    def test_empty_file_is_all_defaults(self):
        assert parse_config("").values == RunConfig().values


class TestParsing:
    def test_partial_file_overrides_only_named_keys(self):
        cfg = parse_config("[train]\nlearning_rate = 1e-3\n")
        assert cfg.get("train", "learning_rate") == 1e-3
        assert cfg.get("train", "batch_size") == 32

    def test_unknown_key_names_the_key(self):
        with pytest.raises(ConfigError, match="foo"):
            parse_config("[train]\nfoo = 1\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="warp"):
            parse_config("[warp]\nspeed = 9\n")

    def test_bad_type_rejected(self):
        with pytest.raises(ConfigError, match="train.total_steps"):
            parse_config("[train]\ntotal_steps = soon\n")

    def test_bool_words(self):
        cfg = parse_config("[generate]\nself_conditioning = no\n")
        assert cfg.get("generate", "self_conditioning") is False
        with pytest.raises(ConfigError):
            parse_config("[generate]\nself_conditioning = maybe\n")

    def test_syntax_error_reported(self):
        with pytest.raises(ConfigError, match="syntax"):
            parse_config("not an ini file at all")


class TestRoundTrip:
    def test_dump_reparses_to_equal_config(self):
        cfg = parse_config("[run]\nseed = 7\n[model]\ndropout = 0.25\n[generate]\nmode = block\n")
        again = parse_config(cfg.dump())
        assert again.values == cfg.values

    def test_round_trip_preserves_float_precision(self):
        cfg = RunConfig()
        cfg.set("train", "learning_rate", "3.3e-5")
        again = parse_config(cfg.dump())
        assert again.get("train", "learning_rate") == 3.3e-5


class TestOverrides:
    def test_override_wins_over_file(self):
        cfg = parse_config("[train]\ntotal_steps = 100\n")
        apply_overrides(cfg, ["train.total_steps=42", "run.seed=3"])
        assert cfg.get("train", "total_steps") == 42
        assert cfg.get("run", "seed") == 3

    def test_malformed_override(self):
        with pytest.raises(ConfigError, match="section.key=value"):
            apply_overrides(RunConfig(), ["total_steps=42"])

    def test_unknown_override_key(self):
        with pytest.raises(ConfigError, match="bar"):
            apply_overrides(RunConfig(), ["train.bar=1"])


class TestOutDir:
    def test_relative_resolves_under_env_root(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUT_ROOT_ENV, str(tmp_path))
        cfg = RunConfig()
        cfg.set("run", "out_dir", "exp1")
        assert cfg.out_dir() == str(tmp_path / "exp1")

    def test_absolute_ignores_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUT_ROOT_ENV, "/elsewhere")
        cfg = RunConfig()
        cfg.set("run", "out_dir", str(tmp_path))
        assert cfg.out_dir() == str(tmp_path)

    def test_no_env_keeps_relative(self, monkeypatch):
        monkeypatch.delenv(OUT_ROOT_ENV, raising=False)
        cfg = RunConfig()
        assert cfg.out_dir() == "run"


class TestFileLoading:
    def test_load_config(self, tmp_path):
        path = tmp_path / "cfg.ini"
        path.write_text("[run]\nseed = 11\n")
        assert load_config(path).get("run", "seed") == 11

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.ini")
