import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tonertu import cli
from tonertu.checkpoint import (
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    read_checkpoint,
    read_records,
    write_checkpoint,
    write_records,
)
from tonertu.diagnostics import NormRequest, norm
from tonertu.experiments import (
    ConfigError,
    InitSpec,
    envelope_bounded,
    eval_number,
    fit_decay,
    make_initial_data,
    oracle_smallgrid,
    parse_config,
    quadrature_norms,
    run_experiment,
    steady_check,
)
from tonertu.inequalities import default_matrix
from tonertu.models import State
from tonertu.spectral import hermitian_defect, lambda_multiplier, make_grid
from tonertu.timestepper import BlowUp

from conftest import random_state


def cfg_text(tmp_path, **sections):
    base = {"output": {"dir": str(tmp_path)}}
    for name, kv in sections.items():
        base.setdefault(name, {}).update(kv)
    return "\n".join(f"[{s}]\n" + "\n".join(f"{k} = {v}" for k, v in kv.items()) for s, kv in base.items())


# --- config ------------------------------------------------------------------


def test_minimal_config_defaults():
    cfg = parse_config("")
    assert cfg.stepper.scheme == "imex-rk2"
    assert cfg.diagnostics.delta0 == 0.1
    assert cfg.grid.dealias == "one-half"


def test_arithmetic_values():
    cfg = parse_config("[grid]\nn = 512\nL = 400*pi\n")
    assert cfg.grid.grid().k_min == pytest.approx(0.005)
    assert eval_number("-(2**3)/4") == -2.0
    with pytest.raises(ValueError):
        eval_number("__import__('os')")


def test_d4_rejected():
    with pytest.raises(ConfigError, match=r"d ∈ \{2,3\}"):
        parse_config("[grid]\nd = 4\n")


def test_all_violations_enumerated():
    with pytest.raises(ConfigError) as exc:
        parse_config("[grid]\nd = 4\nn = 7\n[init]\nepsilon = 0\n[stepper]\nscheme = rk9\n[bogus]\nx = 1\n")
    joined = "\n".join(exc.value.errors)
    for needle in ("grid.d", "grid.n", "init.epsilon", "stepper.scheme", "[bogus]"):
        assert needle in joined
    assert len(exc.value.errors) >= 5


def test_s_outside_decay_hypothesis():
    with pytest.raises(ConfigError, match="decay lemma hypothesis"):
        parse_config("[diagnostics]\ns = 1.2\n")
    parse_config("[grid]\nd = 3\nn = 8\n[diagnostics]\ns = 0\nl = 1\n")  # (3,3) allows s = 0
    with pytest.raises(ConfigError):
        parse_config("[grid]\nd = 3\nn = 8\n[diagnostics]\ns = 0\nm = 4\nl = 1\n")


def test_unknown_key_and_bad_value():
    with pytest.raises(ConfigError) as exc:
        parse_config("[grid]\nN = 8\nL = abc\n")
    assert any("grid.N" in e for e in exc.value.errors)
    assert any("grid.L" in e for e in exc.value.errors)


def test_parse_error_reported():
    with pytest.raises(ConfigError, match="parse error"):
        parse_config("key without section\n")


def test_overrides():
    cfg = parse_config("[grid]\nn = 16\n", ["grid.n=32", "init.seed=5", "diagnostics.l=0,0.5"])
    assert cfg.grid.n == 32 and cfg.init.seed == 5 and cfg.diagnostics.l == (0.0, 0.5)
    with pytest.raises(ConfigError):
        parse_config("", ["gridn=3"])


def test_profile_incompatibility():
    with pytest.raises(ConfigError, match="2a - 2s > -d"):
        parse_config("[init]\nkind = power_profile\na = -0.6\n[diagnostics]\ns = 0.5\n")


# --- initial data ---------------------------------------------------------------


@pytest.mark.parametrize("kind", ["low_freq_bump", "power_profile", "random_small"])
@pytest.mark.parametrize("d,n", [(2, 16), (3, 8)])
def test_initial_data_normalized(kind, d, n):
    g = make_grid(d, n, 20.0)
    spec = InitSpec(kind, 1e-3, -0.4 if kind == "power_profile" else None, 2.0, 3)
    st_ = make_initial_data(g, spec)
    assert norm(st_, NormRequest.hm(max(3, d - 2))) == pytest.approx(1e-3, rel=1e-12)
    X = st_.stacked()
    assert np.all(X[(slice(None),) + (0,) * d] == 0)
    assert max(hermitian_defect(c, d) for c in X) <= 1e-12


def test_initial_data_zero_amplitude(grid8):
    assert np.all(make_initial_data(grid8, InitSpec(epsilon=0.0)).stacked() == 0)


def test_initial_data_deterministic(grid16):
    a = make_initial_data(grid16, InitSpec(seed=4)).stacked()
    assert np.array_equal(a, make_initial_data(grid16, InitSpec(seed=4)).stacked())


def test_initial_profile_rejected(grid16):
    with pytest.raises(ValueError):
        make_initial_data(grid16, InitSpec("power_profile", 1e-3, -0.6, 1.0), s=0.5)


def test_negative_norm_stable_under_refinement():
    # |û_k| = |k|^a with a = s - d/2 + 0.1: the negative norm converges as n grows at fixed L
    s, L = 0.5, 200.0
    vals = []
    for n in (64, 128, 256):
        g = make_grid(2, n, L)
        k = g.k_magnitude
        sel = (k > 0) & (k <= 1.0)
        amp = np.where(sel, np.where(sel, k, 1) ** (2 * (s - 1 + 0.1)), 0)
        vals.append(np.sum(amp * lambda_multiplier(g, -2 * s)))
    # modes with |k| <= 1 all resolved once n/2 * 2π/L > 1; sums then agree exactly
    assert vals[1] == pytest.approx(vals[2], rel=1e-12)
    st_ = make_initial_data(make_grid(2, 128, L), InitSpec("power_profile", 1e-3, s - 0.9, 1.0), s=s)
    assert math.isfinite(norm(st_, NormRequest.hdot(-s)))


# --- decay fits -------------------------------------------------------------------


def test_fit_exact_power_law():
    t = np.linspace(0, 100, 201)
    r = fit_decay((t, (1 + t) ** -1.0), l=1.0, s=0.5, window=(10, 100))
    assert r.slope == pytest.approx(-1.0, abs=1e-12)
    assert r.passed and r.expected == -0.75
    assert math.isfinite(r.stderr)


def test_fit_constant_series_fails():
    t = np.linspace(0, 100, 101)
    r = fit_decay((t, np.ones_like(t)), l=0.0, s=0.5, window=(10, 100))
    assert r.slope == 0 and not r.passed


def test_fit_errors():
    t = np.linspace(0, 50, 51)
    with pytest.raises(ValueError):
        fit_decay((t, np.ones_like(t)), 0, 0.5, (10, 100))
    with pytest.raises(ValueError):
        fit_decay((t, np.zeros_like(t)), 0, 0.5, (10, 20))
    with pytest.raises(ValueError):
        fit_decay((t, np.ones_like(t)), 0, 0.5, (10.2, 10.4))


def test_sharp_check_two_sided():
    t = np.linspace(0, 100, 101)
    r = fit_decay((t, (1 + t) ** -0.9), 0.0, 0.5, (10, 100), 0.15, sharp_expected=-0.3)
    assert r.passed and r.sharp_passed is False


def test_envelope_check():
    recs = [{"t": t, "envelope": {"0": 1.0 + 0.01 * t}} for t in range(0, 101)]
    ok, ratio = envelope_bounded(recs, 0, (10, 100))
    assert ok and ratio == pytest.approx(2.0 / 1.1)
    assert not envelope_bounded(recs, 0, (0, 100), factor=1.5)[0]


def test_quadrature_oracle_small_time_limit():
    # t = 0 reduces to ∫ |k|^{2a} ‖I‖_F² dk = 3 · 2π k0^{2a+2}/(2a+2)
    a = -0.4
    v = quadrature_norms("PPTT", 2, a, 0.0, 1.0, [0.0])[0]
    assert v**2 == pytest.approx(3 * 2 * math.pi / (2 * a + 2), rel=1e-4)


# --- checkpoints -----------------------------------------------------------------


@pytest.mark.parametrize("d,n", [(2, 8), (3, 8)])
def test_checkpoint_roundtrip(tmp_path, d, n):
    g = make_grid(d, n, 3.7)
    st_ = random_state(g, 1).with_time(2.5)
    path = write_checkpoint(st_, tmp_path / "c.ttlb")
    back = read_checkpoint(path)
    assert back.t == 2.5 and back.grid == g
    assert back.stacked().tobytes() == st_.stacked().tobytes()


def test_checkpoint_layout(grid8):
    blob = encode_checkpoint(State.zeros(grid8))
    assert blob[:4] == b"TTLB"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert len(blob) == 4 + 4 + 32 + 16 * 3 * 64 + 8


@pytest.mark.parametrize("mutate", ["truncate", "magic", "version", "payload"])
def test_checkpoint_corruption(grid8, mutate):
    blob = bytearray(encode_checkpoint(random_state(grid8, 0)))
    if mutate == "truncate":
        blob = blob[:-20]
    elif mutate == "magic":
        blob[:4] = b"XXXX"
    elif mutate == "version":
        blob[4] = 9
    else:
        blob[100] ^= 1
    with pytest.raises(CheckpointError):
        decode_checkpoint(bytes(blob))


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="missing"):
        read_checkpoint(tmp_path / "missing.ttlb")


def test_records_roundtrip(tmp_path):
    recs = [{"t": 0.0, "x": float("inf")}, {"t": 1.0, "x": 2}]
    write_records(recs, tmp_path / "s.jsonl", header={"a": 1})
    header, back = read_records(tmp_path / "s.jsonl")
    assert header == {"a": 1} and back[1] == {"t": 1.0, "x": 2} and back[0]["x"] == "inf"


# --- runs ------------------------------------------------------------------------


def small_run_cfg(tmp_path, **extra):
    sections = {
        "grid": {"n": 16},
        "stepper": {"dt": 0.05, "t_end": 1.0, "output_every": 4},
        "init": {"epsilon": 1e-2, "k0": 2},
        "diagnostics": {"s": 0.5, "ledger_orders": "0, 1"},
    }
    for k, v in extra.items():
        sections.setdefault(k, {}).update(v)
    return parse_config(cfg_text(tmp_path, **sections))


def test_run_writes_series_and_checkpoint(tmp_path):
    cfg = small_run_cfg(tmp_path)
    res = run_experiment(cfg)
    lines = res.series_path.read_text().splitlines()
    assert len(lines) == len(res.records) + 1 == 6 + 1
    header, recs = read_records(res.series_path)
    assert header["config"]["grid"]["n"] == 16
    keys = {"t", "h3", "hm", "hdot_minus_s", "hdot_l", "ubar_l2", "hypo", "envelope", "ledger.E0", "ledger.D1"}
    assert keys <= recs[0].keys()
    ts = [r["t"] for r in recs]
    assert ts == sorted(ts) and ts[-1] == pytest.approx(1.0)
    back = read_checkpoint(res.checkpoint_path)
    assert back.stacked().tobytes() == res.final_state.stacked().tobytes()


def test_run_deterministic(tmp_path):
    a = run_experiment(small_run_cfg(tmp_path / "a")).series_path.read_bytes()
    b = run_experiment(small_run_cfg(tmp_path / "b"))
    header_a, _ = read_records(tmp_path / "a" / "series.jsonl")
    assert a.splitlines()[1:] == b.series_path.read_bytes().splitlines()[1:]
    assert header_a["config"]["output"]["dir"] != str(tmp_path / "b")


def test_run_from_steady_state_stays_put(tmp_path):
    cfg = small_run_cfg(tmp_path, stepper={"dt": 0.01, "t_end": 10.0, "output_every": 100}, model={"form": "primitive", "alpha": 2.0})
    cfg.diagnostics.s = None
    g = cfg.grid.grid()
    res = run_experiment(cfg, initial=State.zeros(g))
    assert max(r["h3"] for r in res.records) <= 1e-10


def test_partial_output_on_blowup(tmp_path):
    cfg = small_run_cfg(tmp_path, model={"kind": "TT"}, stepper={"dt": 0.5, "t_end": 50.0, "output_every": 1, "blowup_factor": 2.0, "scheme": "imex-euler"})
    g = cfg.grid.grid()
    with pytest.raises(BlowUp):
        run_experiment(cfg, initial=random_state(g, 0, 5.0))
    _, recs = read_records(cfg.output.series_path)
    assert len(recs) >= 1


def test_linear_mode_agrees_with_nonlinear_at_small_amplitude(tmp_path):
    # (X_nl - X_lin)/ε = A + εB + O(ε²), A being the stepping error of the
    # nonlinear run; successive differences isolate the O(ε²) nonlinear part
    scaled = []
    for eps in (4e-2, 2e-2, 1e-2):
        base = dict(init={"epsilon": eps, "k0": 2}, stepper={"dt": 0.01, "t_end": 1.0, "output_every": 20})
        nl = run_experiment(small_run_cfg(tmp_path / f"n{eps}", **base), write=False)
        base["stepper"] = dict(base["stepper"], mode="linear", output_interval=0.2)
        lin = run_experiment(small_run_cfg(tmp_path / f"l{eps}", **base), write=False)
        assert [r["t"] for r in nl.records] == pytest.approx([r["t"] for r in lin.records])
        scaled.append((nl.final_state.stacked() - lin.final_state.stacked()) / eps)
    ratio = np.linalg.norm(scaled[0] - scaled[1]) / np.linalg.norm(scaled[1] - scaled[2])
    assert 1.8 < ratio < 2.2


# --- oracle and steady check ----------------------------------------------------------


def test_oracle_random_state():
    rep = oracle_smallgrid(parse_config("[grid]\nn = 8\n"))
    assert rep.passed and rep.worst[1] <= 1e-10
    assert any(k.startswith("commutator") for k in rep.errors)


def test_oracle_zero_state(grid8):
    rep = oracle_smallgrid(parse_config("[grid]\nn = 8\n"), State.zeros(grid8))
    assert all(v == 0 for v in rep.errors.values())


def test_oracle_detects_aliasing():
    rep = oracle_smallgrid(parse_config("[grid]\nn = 8\ndealias = none\n"))
    assert not rep.passed
    assert rep.errors["TT.perturbed.cubic"] > 1e-3


def test_oracle_rejects_big_grid():
    with pytest.raises(ValueError):
        oracle_smallgrid(parse_config("[grid]\nn = 32\n"))


def test_steady_check():
    for rep in steady_check(parse_config("[grid]\nn = 8\n[stepper]\ndt = 0.05\n"), steps=200):
        assert rep.max_h3_drift <= 1e-10 and rep.eta_mean_drift <= 1e-12


# --- CLI ------------------------------------------------------------------------


def write_cfg(tmp_path, text):
    p = tmp_path / "exp.ini"
    p.write_text(text)
    return str(p)


def test_cli_oracle_pass_and_fail(tmp_path, capsys):
    assert cli.main(["oracle", "--override", "grid.n=8"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert cli.main(["oracle", "--override", "grid.n=8", "--override", "grid.dealias=none"]) == 4


def test_cli_config_error(tmp_path, capsys):
    assert cli.main(["simulate", "--config", write_cfg(tmp_path, "[grid]\nd = 4\n")]) == 1
    assert "d ∈ {2,3}" in capsys.readouterr().err


def test_cli_missing_config_is_config_error(tmp_path):
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.ini")]) == 1


def test_cli_simulate_and_fit(tmp_path):
    text = cfg_text(
        tmp_path,
        grid={"n": 16, "L": "40*pi"},
        stepper={"t_end": 20, "output_interval": 1},
        init={"kind": "power_profile", "a": -0.4, "epsilon": 1e-3},
        diagnostics={"s": 0.5, "fit_window": "5, 20", "ledger_orders": ""},
    )
    path = write_cfg(tmp_path, text)
    assert cli.main(["simulate", "--config", path, "--seed", "3"]) == 0
    _, recs = read_records(tmp_path / "series.jsonl")
    assert len(recs) == 21
    code = cli.main(["fit-decay", "--config", path])
    assert code in (0, 4)
    fits = [json.loads(line) for line in (tmp_path / "fit.jsonl").read_text().splitlines()]
    assert {f["status"] for f in fits} <= {"PASS", "FAIL"}
    assert (code == 0) == all(f["status"] == "PASS" for f in fits)


def test_cli_blowup_exit_code(tmp_path):
    text = cfg_text(
        tmp_path,
        model={"kind": "TT"},
        grid={"n": 8},
        stepper={"dt": 1.0, "t_end": 20, "scheme": "imex-euler"},
        init={"kind": "random_small", "epsilon": 1e3, "k0": 10},
        diagnostics={"ledger_orders": ""},
    )
    assert cli.main(["simulate", "--config", write_cfg(tmp_path, text)]) == 2


def test_cli_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["simulate", "--override", f"output.dir={blocker}/sub", "--override", "grid.n=8"]) == 3


def test_cli_steady_and_inequalities(tmp_path):
    assert cli.main(["steady-check", "--override", "grid.n=8", "--override", "stepper.dt=0.1", "--override", "diagnostics.steady_steps=50"]) == 0
    out = tmp_path / "ineq"
    args = ["verify-inequalities", "--output", str(out), "--override", "grid.n=16", "--override", "diagnostics.ineq_count=3"]
    assert cli.main(args) == 0
    lines = (out / "inequalities.jsonl").read_text().splitlines()
    n_big_i = sum(name == "big_i" for name, _ in default_matrix(2))
    assert len(lines) == len(default_matrix(2)) + 2 * n_big_i
