import pytest

from qclnet.config import Config, config_keys, load_config, parse_config
from qclnet.errors import ConfigError


class TestDefaults:
    def test_empty_text_gives_defaults(self):
        cfg = parse_config("")
        assert cfg.d == 64
        assert cfg.tau == 0.5
        assert cfg.lr == 1e-3
        assert cfg.k == 1
        assert cfg.groups == 4
        assert cfg.levels == (8, 4, 2)

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("\n# a comment\n  \nD = 32  # trailing\n")
        assert cfg.d == 32

    def test_frame_extent(self):
        assert Config().frame_extent == 32
        toy = Config(levels=(4, 2), layers=(2, 2), feat_channels=(4, 4))
        assert toy.frame_extent == 16

    def test_config_keys_lists_documented_names(self):
        keys = dict(config_keys())
        assert keys["D"] == 64
        assert keys["K"] == 1
        assert keys["tau"] == 0.5
        assert "d" not in keys and "k" not in keys


class TestParsing:
    def test_d_alias(self):
        assert parse_config("D = 32").d == 32
        assert parse_config("d = 32").d == 32

    def test_k_alias(self):
        assert parse_config("K = 5").k == 5

    def test_tuple_values(self):
        cfg = parse_config("levels = 16, 8, 4\nlayers = 1,2,3\n"
                           "feat_channels = 4,4,4")
        assert cfg.levels == (16, 8, 4)
        assert cfg.layers == (1, 2, 3)

    def test_unknown_key_names_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("D = 32\nwat = 1")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("D = 32\nD = 64")

    def test_unparseable_value_names_line(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("D = banana")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config("just some words")


class TestConstraints:
    def test_negative_d_names_key(self):
        with pytest.raises(ConfigError, match="D"):
            parse_config("D = -1")

    def test_negative_k(self):
        with pytest.raises(ConfigError, match="K"):
            parse_config("K = 0")

    def test_tau_range(self):
        with pytest.raises(ConfigError, match="tau"):
            parse_config("tau = 1.5")
        with pytest.raises(ConfigError, match="tau"):
            Config(tau=-0.1)

    def test_negative_lr(self):
        with pytest.raises(ConfigError, match="lr"):
            Config(lr=-1e-3)
        assert Config(lr=0.0).lr == 0.0

    def test_d_divisible_by_groups(self):
        with pytest.raises(ConfigError, match="group"):
            Config(d=10, groups=4)

    def test_levels_must_halve(self):
        with pytest.raises(ConfigError, match="levels"):
            Config(levels=(8, 3), layers=(2, 2), feat_channels=(8, 8))

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            Config(levels=(8, 4), layers=(2, 2, 2), feat_channels=(8, 8))

    def test_skip_channels_needs_two(self):
        with pytest.raises(ConfigError, match="skip_channels"):
            Config(skip_channels=(8,))

    def test_positive_entries(self):
        with pytest.raises(ConfigError):
            Config(levels=(8, 4, 2), layers=(2, 0, 2), feat_channels=(8, 8, 8))


class TestLoadConfig:
    def test_round_trip_file(self, tmp_path):
        p = tmp_path / "toy.cfg"
        p.write_text("D = 16\ntau = 0.6\nlevels = 4,2\nlayers = 2,2\n"
                     "feat_channels = 4,4\n")
        cfg = load_config(str(p))
        assert cfg.d == 16 and cfg.tau == 0.6 and cfg.levels == (4, 2)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(str(tmp_path / "absent.cfg"))
