import csv
import textwrap

import numpy as np
import pytest

from smlrelay.cli import main
from smlrelay.config import ConfigError, config_from_dict, parse_config
from smlrelay.experiment import CSV_HEADER, ExperimentError, aggregate, emit_results, run_experiment

MINIMAL = textwrap.dedent("""\
    N: 3
    M_S: 2
    U: 1
    J: 4
    constellation: BPSK
    S: 1
    snr_db: {start: 0, stop: 12, step: 2}
    protocols: [switched_max_link]
    seeds: [1]
    """)


def write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_config(tmp_path):
    cfg = parse_config(write(tmp_path, MINIMAL))
    assert cfg.snr_db == (0, 2, 4, 6, 8, 10, 12)
    assert cfg.protocols[0].switch == 1
    assert cfg.packets is None and cfg.symbols_per_packet == 100
    assert cfg.simulation_config(0).n_sets == 10_000
    assert cfg.L == 2 and cfg.M_R == 2


def test_bad_divisibility_is_line_anchored(tmp_path):
    p = write(tmp_path, MINIMAL.replace("J: 4", "J: 3"))
    with pytest.raises(ConfigError, match="buffer size must hold whole packet-sets") as e:
        parse_config(p)
    assert e.value.line == 4


def test_unknown_protocol(tmp_path):
    p = write(tmp_path, MINIMAL.replace("[switched_max_link]", "[switched_max_link, foo]"))
    with pytest.raises(ConfigError, match="unknown protocol") as e:
        parse_config(p)
    assert e.value.line == 8


def test_imperfect_csi_scenario(tmp_path):
    cfg = parse_config(write(tmp_path, MINIMAL + "csi: {beta: 1, alpha: 0.8}\n"))
    assert (cfg.csi.beta, cfg.csi.alpha) == (1.0, 0.8)


@pytest.mark.parametrize("patch", [{"snr_db": []}, {"seeds": []}, {"protocols": []},
                                   {"bogus": 1}, {"N": 0}, {"constellation": "16QAM"},
                                   {"variances": {"SD": -1}}])
def test_invalid_fields(patch):
    base = {"N": 3, "M_S": 2, "J": 4, "snr_db": [0], "protocols": ["mmd_max_link"], "seeds": [1]}
    base.update(patch)
    with pytest.raises(ConfigError):
        config_from_dict(base)


def test_malformed_yaml(tmp_path):
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(write(tmp_path, "N: [1, 2\nM_S: 2\n"))


def small_config(**kw):
    d = {"N": 2, "M_S": 2, "J": 4, "snr_db": [0, 4, 8], "packets": 200,
         "protocols": ["mmd_max_link"], "seeds": [1, 2, 3], "dtmc": {"draws": 1000}}
    d.update(kw)
    return config_from_dict(d)


def test_row_count_and_round_trip(tmp_path):
    res = run_experiment(small_config())
    raw, agg = emit_results(res, tmp_path / "out")
    with raw.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_HEADER
    assert len(rows) == 1 + 9
    for row, trial in zip(rows[1:], res.trials):
        assert float(row[3]) == trial.metrics.ber
        assert float(row[5]) == trial.metrics.sum_rate
        assert int(row[8]) == trial.metrics.n_sr
    with agg.open() as fh:
        assert len(list(csv.reader(fh))) == 1 + 3


def test_byte_identical_reruns(tmp_path):
    cfg = small_config(seeds=[3, 1])
    a, _ = emit_results(run_experiment(cfg), tmp_path / "a")
    b, _ = emit_results(run_experiment(cfg), tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()


def test_parallel_matches_serial(tmp_path):
    cfg = small_config(snr_db=[4], seeds=[1, 2])
    a, _ = emit_results(run_experiment(cfg), tmp_path / "a")
    b, _ = emit_results(run_experiment(cfg, workers=2), tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()


def test_identical_seeds_zero_stderr():
    res = run_experiment(small_config(snr_db=[4], seeds=[7]))
    res.trials = res.trials + res.trials
    rec = aggregate(res)[0]
    assert rec["ber_stderr"] == 0.0 and rec["n_seeds"] == 2


def test_emit_empty_raises(tmp_path):
    res = run_experiment(small_config(snr_db=[4], seeds=[1]))
    res.trials = []
    with pytest.raises(ValueError):
        emit_results(res, tmp_path)


def test_engine_errors_carry_context():
    cfg = small_config(N=2, snr_db=[4], seeds=[1])
    with pytest.raises(ExperimentError, match=r"mmd_max_link at 4 dB, seed 1"):
        run_experiment(cfg, packets=3)


def test_cli_complexity(capsys):
    assert main(["complexity", "--n", "3", "--ms", "2", "--u", "1", "--w", "1"]) == 0
    out = capsys.readouterr().out
    assert "MMD,36,48" in out and "QN,18,24" in out


def test_cli_simulate_dtmc_pep(tmp_path, capsys):
    p = write(tmp_path, textwrap.dedent("""\
        N: 2
        M_S: 2
        J: 4
        snr_db: [2, 6]
        packets: 200
        protocols: [mmd_max_link, {name: switched_max_link, S: 2}]
        seeds: [1]
        dtmc: {draws: 1000}
        """))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "results.csv").exists()
    assert main(["dtmc", "--config", str(p)]) == 0
    assert "queue_length" in capsys.readouterr().out
    assert main(["pep", "--config", str(p)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "protocol,snr_db,pep_theory" and len(lines) == 5


def test_cli_error_exit(tmp_path, capsys):
    p = write(tmp_path, MINIMAL.replace("J: 4", "J: 3"))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) != 0
    assert "c.yaml:4" in capsys.readouterr().err
    assert main(["dtmc", "--config", str(tmp_path / "missing.yaml")]) != 0
