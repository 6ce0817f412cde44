import numpy as np
import pytest

from amerbsde.config import SCHEMA, ConfigError, load, parse_text, serialize


def test_empty_file_gives_defaults():
    cfg = parse_text("")
    assert cfg.market.d == 7 and cfg.payoff.kind.value == "geometric_call"
    assert cfg.train.N == 100 and cfg.train.M == 240000 and cfg.train.C == 3
    assert cfg.oracle.nodes == 4097 and cfg.lsm.chi == 4 and cfg.hedge.intervals == 100
    np.testing.assert_allclose(cfg.market.rho[0, 1], 0.75)


def test_round_trip_is_stable():
    text = "[market]\nd = 2\nsigma = 0.2, 0.3\nrho = 1, 0.3; 0.3, 1\n[payoff]\nkind = max_call\n[train]\nN = 10\nJ = 2\n[hedge]\nintervals = 5\n"
    cfg = parse_text(text)
    again = parse_text(cfg.serialize())
    assert again.serialize() == cfg.serialize() and again.digest() == cfg.digest()
    np.testing.assert_allclose(again.market.sigma, [0.2, 0.3])
    np.testing.assert_allclose(again.market.rho, [[1, 0.3], [0.3, 1]])


def test_every_bad_entry_is_listed():
    text = "[market]\nd = two\nfoo = 1\n[train]\nsteps = x\n[extra]\na = 1\n"
    with pytest.raises(ConfigError) as info:
        parse_text(text)
    joined = "\n".join(info.value.problems)
    for needle in ("market.d", "market.foo: unknown key", "train.steps", "[extra]: unknown section"):
        assert needle in joined


def test_cross_field_checks():
    text = "[market]\nd = 3\nsigma = 0.2, 0.3\n[train]\nN = 10\nJ = 20\n[hedge]\nintervals = 3\nprovider = magic\n"
    with pytest.raises(ConfigError) as info:
        parse_text(text)
    joined = "\n".join(info.value.problems)
    for needle in ("market.sigma", "J must not exceed N", "hedge.intervals", "hedge.provider"):
        assert needle in joined


def test_market_validation_reaches_user():
    with pytest.raises(ConfigError, match="market"):
        parse_text("[market]\nd = 2\nrho = 1, 1.5; 1.5, 1\n")


def test_auto_fields_and_load(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[train]\nwidth = 12\nkappa = auto\n[run]\nworkers = 3\n")
    cfg = load(p)
    assert cfg.train.width == 12 and cfg.train.kappa is None and cfg.worker_count() == 3
    with pytest.raises(ConfigError, match="cannot read"):
        load(tmp_path / "missing.ini")


def test_serialize_covers_schema():
    raw = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    text = serialize(raw)
    for sec in SCHEMA:
        assert f"[{sec}]" in text
