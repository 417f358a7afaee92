import csv
import dataclasses
import pickle

import jax
import jax.numpy as jnp
import numpy as np
import pytest
import yaml

from geovmc.errors import CheckpointError, ConfigurationError
from geovmc.runner import checks
from geovmc.runner.checkpoint import FORMAT_VERSION, load_trainer, read_checkpoint, save_checkpoint
from geovmc.runner.cli import main
from geovmc.runner.config import PRESETS, from_dict, load_config
from geovmc.runner.evaluate import evaluate_from_trainer, parse_grid, scan
from geovmc.runner.trainer import LOG_HEADER, Trainer
from geovmc.templates import realize
from geovmc.wfmodel import SignedLogAmplitude

TINY_MODEL = {
    "single_width": 8,
    "double_width": 4,
    "n_layers": 1,
    "n_det": 2,
    "embedding_dim": 4,
    "gnn_embedding_dim": 4,
    "gnn_message_dim": 4,
}


def tiny_config(**overrides):
    base = {
        "seed": 7,
        "system": {"template": "diatomic", "scan": {"lower": 1.2, "upper": 1.6}},
        "model": TINY_MODEL,
        "sampler": {"geometry_walkers": 2, "steps_per_update": 3, "burn_in": 5},
        "optimizer": {"batch_size": 32, "iterations": 3},
        "pretraining": {"iterations": 2},
        "evaluation": {"samples": 256, "burn_in": 10, "batch": 64, "thin": 2},
        "output": {"checkpoint_every": 2},
    }
    for key, value in overrides.items():
        base[key] = {**base.get(key, {}), **value} if isinstance(value, dict) else value
    return from_dict(base)


def read_log(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [{k: v for k, v in row.items() if k != "seconds"} for row in rows]


def test_paper_defaults():
    cfg = from_dict({"system": {"template": "diatomic", "params": [1.4]}})
    m, s, o, p, e = cfg.model, cfg.sampler, cfg.optimizer, cfg.pretraining, cfg.evaluation
    assert (m.n_layers, m.single_width, m.double_width, m.n_det, m.embedding_dim) == (4, 256, 32, 16, 64)
    assert (m.gnn_layers, m.gnn_message_dim, m.n_sbf, m.n_rbf) == (2, 32, 7, 6)
    assert (s.step_size, s.steps_per_update, s.geometry_walkers) == (0.02, 40, 16)
    assert (o.batch_size, o.lr, o.lr_decay, o.clip_local_energy, o.damping_scale, o.cg_max_steps) == (
        4096, 0.1, 1000.0, 5.0, 1e-4, 100,
    )
    assert (p.iterations, p.lr) == (2000, 0.003)
    assert (e.samples, e.burn_in) == (1_000_000, 200)
    desk = from_dict({"preset": "desk", "system": {"template": "diatomic", "params": [1.4]}})
    assert desk.optimizer.batch_size == 512 and "desk" in PRESETS


def test_config_validation(tmp_path, monkeypatch):
    with pytest.raises(ConfigurationError, match="unknown field"):
        from_dict({"system": {"template": "diatomic", "params": [1.4]}, "model": {"widht": 3}})
    with pytest.raises(ConfigurationError, match="batch_size"):
        from_dict({"system": {"template": "diatomic", "params": [1.4]}, "optimizer": {"batch_size": 0}})
    with pytest.raises(ConfigurationError, match="template"):
        from_dict({"system": {}})
    with pytest.raises(ConfigurationError, match="preset"):
        from_dict({"preset": "huge", "system": {"template": "diatomic", "params": [1.4]}})
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"seed": 3, "system": {"template": "diatomic", "params": [1.4]}}))
    assert load_config(path).seed == 3
    monkeypatch.setenv("GEOVMC_SEED", "11")
    assert load_config(path).seed == 11


def test_scan_walkers_split_the_batch():
    cfg = tiny_config()
    assert cfg.n_geometries() == 2 and cfg.walkers_per_geometry() == 16
    assert [g.positions[1, 2] * 2 for g in cfg.initial_geometries()] == pytest.approx([1.3, 1.5])


def test_identical_runs_write_identical_logs(tmp_path):
    for name in ("a", "b"):
        t = Trainer(tiny_config(), log_path=tmp_path / f"{name}.csv")
        t.pretrain()
        t.train()
    a, b = read_log(tmp_path / "a.csv"), read_log(tmp_path / "b.csv")
    assert list(a[0]) + ["seconds"] == LOG_HEADER
    assert len(a) == 3 * 2  # one record per step and geometry
    assert a == b


def test_resume_continues_the_same_trajectory(tmp_path):
    cfg = tiny_config(optimizer={"iterations": 4})
    full = Trainer(cfg, log_path=tmp_path / "full.csv")
    full.train()

    half = Trainer(cfg, log_path=tmp_path / "half.csv")
    half.train(2)
    save_checkpoint(half, tmp_path / "half.ckpt")
    resumed = load_trainer(tmp_path / "half.ckpt", log_path=tmp_path / "half.csv")
    resumed.train()
    assert np.array_equal(full.state.params, resumed.state.params)
    assert read_log(tmp_path / "full.csv") == read_log(tmp_path / "half.csv")


def test_checkpoint_version_mismatch_is_rejected(tmp_path):
    t = Trainer(tiny_config())
    path = save_checkpoint(t, tmp_path / "c.ckpt")
    data = pickle.loads(path.read_bytes())
    data["format_version"] = FORMAT_VERSION + 1
    path.write_bytes(pickle.dumps(data))
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(path)
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "missing.ckpt")


def hydrogen_stub_trainer():
    """1s-exact model: zero orbital weights and head weights leave c * exp(-r) orbitals."""
    cfg = from_dict(
        {
            "system": {"template": "atom", "params": [0.0], "options": {"charge": 1, "n_up": 1, "n_dn": 0}},
            "model": {**TINY_MODEL, "n_det": 1},
            "optimizer": {"batch_size": 64, "iterations": 1},
            "evaluation": {"samples": 2000, "burn_in": 20, "batch": 200, "thin": 2},
        }
    )
    t = Trainer(cfg)
    theta = t.theta
    theta["wf"]["orbital_w"] = jax.tree_util.tree_map(jnp.zeros_like, theta["wf"]["orbital_w"])
    for out in ("global_out", "node_out"):
        for head in theta["gnn"][out]["heads"]:
            head["w"] = jnp.zeros_like(head["w"])
    t.set_theta(theta)
    return t


def test_evaluate_exact_stub_has_zero_variance():
    t = hydrogen_stub_trainer()
    stats = evaluate_from_trainer(t, realize("atom", [0.0], {"charge": 1, "n_up": 1, "n_dn": 0}))
    assert stats.variance < 1e-12
    assert abs(stats.mean + 0.5) < 1e-8
    assert stats.n_samples == 2000 and stats.std_error == np.sqrt(stats.variance / 2000)


def test_evaluate_unseen_geometry_and_spin_mismatch(tmp_path):
    t = Trainer(tiny_config())
    stats = evaluate_from_trainer(t, realize("diatomic", [2.7]))
    assert np.isfinite(stats.mean) and stats.n_samples == 256
    with pytest.raises(ConfigurationError, match="n_up"):
        evaluate_from_trainer(t, realize("diatomic", [1.4], {"charges": [2, 1], "n_up": 2, "n_dn": 1}))


def test_scan_rows_and_single_point(tmp_path):
    t = Trainer(tiny_config())
    grid = parse_grid("1.2:1.6:3")
    assert grid == pytest.approx([1.2, 1.4, 1.6])
    points = scan(t, grid, tmp_path / "scan.csv")
    rows = list(csv.reader(open(tmp_path / "scan.csv")))
    assert rows[0] == ["param", "energy_hartree", "stderr_hartree", "variance"]
    assert len(rows) == len(grid) + 1
    single = scan(t, [1.4])[0].stats
    direct = evaluate_from_trainer(t, realize("diatomic", [1.4]))
    assert single == direct == points[1].stats


def test_scan_continues_past_failing_points(tmp_path):
    t = Trainer(tiny_config())
    points = scan(t, [1.4, 0.0, 1.5], tmp_path / "scan.csv")
    assert points[1].stats is None and "coincide" in points[1].error
    assert points[0].stats is not None and points[2].stats is not None
    assert list(csv.reader(open(tmp_path / "scan.csv")))[2][1] == "nan"


def broken_sign(theta, r, geom, cfg):
    from geovmc import model as model_lib

    value = model_lib.log_psi(theta, r, geom, cfg)
    return SignedLogAmplitude(jnp.abs(value.sign), value.log_abs)


def test_corrupted_sign_path_fails_antisymmetry():
    assert not checks.check_antisymmetry(n_cases=5, log_psi_fn=broken_sign).passed
    good = checks.check_antisymmetry(n_cases=5)
    assert good.passed and good.margin > 1
    assert good.line().startswith("PASS antisymmetry")


def test_cli_end_to_end(tmp_path, capsys):
    cfg = dataclasses.asdict(tiny_config())
    cfg["output"]["directory"] = "out"
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["train", "--config", str(path)]) == 0
    ckpt = tmp_path / "out" / "checkpoint.pkl"
    assert ckpt.exists() and len(read_log(tmp_path / "out" / "energy_log.csv")) == 6
    assert main(["evaluate", "--ckpt", str(ckpt), "--geometry", "1.45", "--units", "ev"]) == 0
    assert " eV" in capsys.readouterr().out
    assert main(["scan", "--ckpt", str(ckpt), "--grid", "1.3,1.5", "--out", str(tmp_path / "s.csv")]) == 0
    assert main(["evaluate", "--ckpt", str(tmp_path / "nope.ckpt"), "--geometry", "1.4"]) == 2
