import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from callhawkes import io
from callhawkes.cli import EXIT_CONFIG, EXIT_OK, EXIT_VALIDATION, dic_table, main
from callhawkes.core import CovariateSeries, ModelVariant, RecorderArray, validate_sequence
from callhawkes.inference import MCMCConfig, run_mcmc


def write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


@pytest.fixture
def geometry(tmp_path, tri_array):
    path = tmp_path / "geometry.csv"
    io.write_geometry(path, tri_array)
    return path


def simulate(tmp_path, name, geometry, *extra, config=None):
    out = tmp_path / name
    argv = ["simulate", "--geometry", str(geometry), "--horizon", "1440", "--target-count", "150",
            "--seed", "4", "--out", str(out), *extra]
    if config is not None:
        argv += ["--config", str(config)]
    assert main(argv) == EXIT_OK
    return out


def fit(tmp_path, name, sim_dir, variant="nhpp-gp-cc", iters=120, *extra):
    out = tmp_path / name
    argv = ["fit", "--events", str(sim_dir / "events.csv"), "--geometry", str(sim_dir / "geometry.csv"),
            "--noise", str(sim_dir / "noise.csv"), "--variant", variant, "--iters", str(iters),
            "--burnin", "20", "--seed", "3", "--horizon", "1440", "--out", str(out), *extra]
    assert main(argv) == EXIT_OK
    return out


# ---------------------------------------------------------------------------
# file round trips
# ---------------------------------------------------------------------------
def rewrite_identical(path: Path, read, write_fn):
    first = path.read_bytes()
    write_fn(path, read(path))
    return path.read_bytes() == first


@settings(deadline=None)
@given(times=st.lists(st.floats(0.001, 1e4, allow_nan=False), min_size=1, max_size=30, unique=True),
       seed=st.integers(0, 2**32 - 1))
def test_events_round_trip_is_byte_identical(times, seed, tmp_path_factory, tri_array):
    times = np.sort(times)
    marks = np.random.default_rng(seed).integers(0, 3, times.size)
    seq = validate_sequence(times, marks, float(times[-1]), 3)
    path = tmp_path_factory.mktemp("ev") / "events.csv"
    io.write_events(path, seq, tri_array.ids)
    back = io.events_to_sequence(io.read_events(path), tri_array, float(times[-1]))
    assert np.array_equal(back.times, seq.times) and np.array_equal(back.marks, seq.marks)
    assert rewrite_identical(path, lambda p: io.events_to_sequence(io.read_events(p), tri_array, float(times[-1])),
                             lambda p, s: io.write_events(p, s, tri_array.ids))


def test_geometry_noise_branching_round_trips(tmp_path, tri_array):
    g = tmp_path / "g.csv"
    io.write_geometry(g, tri_array)
    assert rewrite_identical(g, io.read_geometry, io.write_geometry)
    matrix = RecorderArray.from_distances(tri_array.dist, ids=tri_array.ids)
    io.write_geometry(g, matrix)
    assert np.array_equal(io.read_geometry(g).dist, matrix.dist)
    assert rewrite_identical(g, io.read_geometry, io.write_geometry)

    rng = np.random.default_rng(0)
    cov = CovariateSeries.from_arrays([np.arange(5.0) * 300] * 3, [rng.normal(size=5) for _ in range(3)],
                                      standardize=False)
    n = tmp_path / "n.csv"
    io.write_noise(n, cov, tri_array.ids)
    assert rewrite_identical(n, lambda p: io.read_noise(p, tri_array, standardize=False),
                             lambda p, c: io.write_noise(p, c, tri_array.ids))

    b = tmp_path / "b.csv"
    z = np.array([0, 1, 0, 2, 3])
    io.write_branching(b, z)
    assert np.array_equal(io.read_branching(b), z)
    assert rewrite_identical(b, io.read_branching, io.write_branching)


def test_chain_and_json_round_trip(tmp_path, gpcc_small):
    *_, model = gpcc_small
    ch = run_mcmc(model, "nhpp-gp-cc", MCMCConfig(iterations=40, burn_in=10), seed=1)
    path = tmp_path / "chain.csv"
    io.write_chain(path, ch)
    back = io.read_chain(path, "nhpp-gp-cc", 3, model.grid.size)
    assert np.array_equal(back.samples["alpha"], ch.samples["alpha"])
    assert rewrite_identical(path, lambda p: io.read_chain(p, "nhpp-gp-cc", 3, model.grid.size), io.write_chain)
    j = tmp_path / "p.json"
    io.write_json(j, io.params_to_dict(ch.params_at(3)))
    assert rewrite_identical(j, lambda p: io.params_to_dict(io.params_from_dict(io.read_json(p))), io.write_json)


# ---------------------------------------------------------------------------
# parse errors
# ---------------------------------------------------------------------------
def test_malformed_rows_name_file_and_line(tmp_path, tri_array):
    bad = write(tmp_path / "events.csv", "time_min,recorder_id\n1.0,A\n\n2.0,B,extra\n")
    with pytest.raises(io.ParseError, match=r"events\.csv:4"):
        io.read_events(bad)
    bad = write(tmp_path / "events2.csv", "time_min,recorder_id\n1.0,A\nabc,B\n")
    with pytest.raises(io.ParseError, match=r"events2\.csv:3"):
        io.read_events(bad)
    with pytest.raises(io.ParseError, match=":1"):
        io.read_events(write(tmp_path / "events3.csv", "t,r\n"))
    cfg = write(tmp_path / "cfg.txt", "seed = 1\n# comment\nbogus = 2\n")
    with pytest.raises(io.ParseError, match=r"cfg\.txt:3"):
        io.read_config(cfg)
    with pytest.raises(io.ParseError, match=r"duplicate"):
        io.read_config(write(tmp_path / "cfg2.txt", "seed = 1\nseed = 2\n"))


def test_unknown_recorder_and_order_are_validation_errors(tmp_path, tri_array):
    from callhawkes.core import ValidationError

    t = io.read_events(write(tmp_path / "e.csv", "time_min,recorder_id\n1.0,Z\n"))
    with pytest.raises(ValidationError, match="not in the geometry"):
        io.events_to_sequence(t, tri_array, 10.0)
    t = io.read_events(write(tmp_path / "e2.csv", "time_min,recorder_id\n2.0,A\n2.0,B\n"))
    with pytest.raises(ValidationError):
        io.events_to_sequence(t, tri_array, 10.0)
    t = io.read_events(write(tmp_path / "e3.csv", "time_min,recorder_id\n2.0,A\n1.0,B\n"))
    assert io.events_to_sequence(t, tri_array, 10.0).marks.tolist() == [1, 0]
    with pytest.raises(ValidationError):
        io.events_to_sequence(t, tri_array, 1.5)


def test_iso_timestamps_rebased_on_midnight(tmp_path):
    t = io.read_events(write(tmp_path / "e.csv", "timestamp,recorder_id\n2020-03-01T06:30:00Z,A\n"
                                                  "2020-03-02T00:15:00+00:00,A\n"))
    assert t.times.tolist() == [390.0, 1455.0]
    assert t.t0_clock_min == 0.0
    t = io.read_events(write(tmp_path / "e2.csv", "timestamp,recorder_id\n2020-03-01T00:00:00,A\n"))
    assert t.times.tolist() == [1440.0]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def test_zero_alpha_config_gives_no_counter_calls(tmp_path, geometry):
    cfg = write(tmp_path / "sim.txt", "variant = nhpp-cc\nalpha = 0\neta = 0.5\nphi = 0.8\n")
    out = simulate(tmp_path, "sim", geometry, config=cfg)
    assert np.all(io.read_branching(out / "branching.csv") == 0)


def test_simulate_is_deterministic(tmp_path, geometry):
    a = simulate(tmp_path, "a", geometry)
    b = simulate(tmp_path, "b", geometry)
    for name in ("events.csv", "branching.csv", "noise.csv", "geometry.csv", "truth.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_supercritical_refused_unless_allowed(tmp_path, geometry, capsys):
    cfg = write(tmp_path / "hot.txt", "variant = nhpp-cc\nalpha = 2.0\neta = 0.5\nphi = 0.8\n")
    argv = ["simulate", "--geometry", str(geometry), "--horizon", "60", "--target-count", "5",
            "--config", str(cfg), "--out", str(tmp_path / "hot")]
    assert main(argv) == EXIT_VALIDATION
    assert "supercritical" in capsys.readouterr().err.lower()


def test_fit_assess_summarize_pipeline(tmp_path, geometry):
    sim = simulate(tmp_path, "sim", geometry)
    run = fit(tmp_path, "fit", sim)
    again = fit(tmp_path, "fit2", sim)
    assert (run / "chain.csv").read_bytes() == (again / "chain.csv").read_bytes()
    man = json.loads((run / "manifest.json").read_text())
    assert set(man["input_sha256"]) == {"events", "geometry", "noise"}
    assert "eta" in man["acceptance"] and man["mcmc"]["iterations"] == 120

    assert main(["assess", str(run)]) == EXIT_OK
    qq = np.loadtxt(run / "qq.csv", delimiter=",", skiprows=1)
    assert qq.shape == (man["n_events"], 5)
    assert np.all(np.diff(qq[:, 1]) > 0)
    assess = json.loads((run / "assess.json").read_text())
    assert assess["msd"] >= 0 and assess["threshold"] == 0.05

    assert main(["summarize", str(run), "--distances", "3,5"]) == EXIT_OK
    summ = json.loads((run / "summaries.json").read_text())
    assert summ["observed_total"] == man["n_events"]
    assert set(summ["derived"]["distance_survival"]) == {"3.0", "5.0"}
    rows = (run / "decomposition.csv").read_text().splitlines()
    assert rows[0] == "quantity,source,recorder,mean,hpd_lo,hpd_hi"
    assert len(rows) == 1 + 3 * 3 + 9 + 1


def test_nhpp_chain_has_no_excitation_columns(tmp_path, geometry):
    sim = simulate(tmp_path, "sim", geometry)
    run = fit(tmp_path, "fit", sim, "nhpp", 60)
    header = (run / "chain.csv").read_text().splitlines()[0].split(",")
    assert not any(h.startswith(("alpha", "eta", "phi", "w_")) for h in header)


def test_assess_refuses_changed_inputs(tmp_path, geometry, capsys):
    sim = simulate(tmp_path, "sim", geometry)
    run = fit(tmp_path, "fit", sim, "nhpp", 60)
    other = write(tmp_path / "other.csv", "time_min,recorder_id\n1.0,A\n")
    assert main(["assess", str(run), "--events", str(other)]) == EXIT_VALIDATION
    with open(sim / "events.csv", "a") as fh:
        fh.write("1439.5,A\n")
    assert main(["summarize", str(run)]) == EXIT_VALIDATION
    assert "changed" in capsys.readouterr().err


def test_compare_single_and_matrix(tmp_path, geometry, capsys):
    sim = simulate(tmp_path, "sim", geometry)
    run = fit(tmp_path, "fit", sim, "nhpp", 60)
    assert main(["compare", str(run), "--csv", str(tmp_path / "t.csv")]) == EXIT_OK
    text = capsys.readouterr().out
    body = [l for l in text.splitlines() if l.startswith(ModelVariant.NHPP_GP_CC.label)]
    assert len(body) == 1
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 2
    table = dic_table({("nhpp", "nhpp"): 10.0, ("nhpp", "nhpp-gp"): 13.0, ("nhpp", "nhpp-cc"): 30.0})
    row = [l for l in table.splitlines() if l.startswith("nhpp ")][0]
    assert row.count("*") == 2


def test_exit_codes_and_env_overrides(tmp_path, geometry, monkeypatch):
    assert main(["fit"]) == EXIT_CONFIG
    assert main(["simulate", "--variant", "bogus", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["simulate", "--geometry", str(geometry)]) == EXIT_CONFIG
    bad = write(tmp_path / "bad.csv", "time_min,recorder_id\n1,A\nx,B\n")
    assert main(["fit", "--events", str(bad), "--geometry", str(geometry), "--out", str(tmp_path / "f")]) \
        == EXIT_VALIDATION

    monkeypatch.setenv("CALLHAWKES_SEED", "4")
    monkeypatch.setenv("CALLHAWKES_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--geometry", str(geometry), "--horizon", "1440", "--target-count", "150"]) == EXIT_OK
    ref = simulate(tmp_path, "ref", geometry)
    assert (tmp_path / "env" / "events.csv").read_bytes() == (ref / "events.csv").read_bytes()
    # an explicit flag beats the environment
    monkeypatch.setenv("CALLHAWKES_VARIANT", "bogus")
    assert main(["simulate", "--geometry", str(geometry), "--horizon", "1440", "--target-count", "150",
                 "--variant", "nhpp", "--out", str(tmp_path / "flag")]) == EXIT_OK


def test_simulated_files_feed_fit_ingestion(tmp_path, geometry):
    sim = simulate(tmp_path, "sim", geometry)
    truth = json.loads((sim / "truth.json").read_text())
    table = io.read_events(sim / "events.csv")
    arr = io.read_geometry(sim / "geometry.csv")
    seq = io.events_to_sequence(table, arr, truth["horizon_min"])
    assert seq.n == truth["n_events"]
    cov = io.read_noise(sim / "noise.csv", arr)
    assert cov.K == 3
