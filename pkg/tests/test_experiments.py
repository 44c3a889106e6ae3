import dataclasses

import numpy as np
import pytest

from relimp.config import RunConfig, load_config, save_config
from relimp.experiments import (TABLE_I, AblationConfig, ablation_by_name, baseline_rows, render_table,
                                rows_to_csv, run_ablation, summarize, sweep_thresholds)
from relimp.model import ModelConfig
from relimp.synth import GenConfig, generate_dataset
from relimp.train import TrainConfig, train

TINY = ModelConfig(lstm_hidden=4, feat_dim=4, mlp_hidden=4, graph_hidden=4, cls_hidden=6,
                   aux_hidden1=3, aux_hidden2=4, d_appearance=4, d_depthsem=3, t_future=2)
GEN = GenConfig(scene_count=30, unlabeled_count=12, seed=6, T_h=3, T_f=2, d_appearance=4, d_depthsem=3,
                max_objects=5)
QUICK = TrainConfig(epochs=2, batch_size=8, lr=3e-3)


@pytest.fixture(scope="module")
def data():
    ds = generate_dataset(GEN)
    cfg = RunConfig(GEN, TINY, QUICK)
    tr, te = cfg.split(ds.labeled)
    return tr, te, ds.unlabeled


def test_table_rows():
    flags = {c.name: (c.use_intention, c.use_relation_graph, c.use_auxiliary, c.use_ranking_pseudo,
                      c.use_loss_weighting) for c in TABLE_I}
    assert flags == {
        "Ours-S-1": (True, False, False, None, None),
        "Ours-S-2": (False, True, False, None, None),
        "Ours-S-3": (True, True, False, None, None),
        "Ours-S": (True, True, True, None, None),
        "Ours-SS-1": (True, True, False, True, False),
        "Ours-SS-2": (True, True, False, False, True),
        "Ours-SS-3": (True, True, False, True, True),
        "Ours-SS": (True, True, True, True, True),
    }


def test_invalid_combinations():
    with pytest.raises(ValueError):
        AblationConfig("x", "supervised", use_ranking_pseudo=True)
    with pytest.raises(ValueError):
        AblationConfig("x", "semi_supervised")
    with pytest.raises(ValueError):
        AblationConfig("x", "mixed")
    with pytest.raises(ValueError, match="unknown ablation"):
        ablation_by_name("Ours-X")


def test_apply_sets_flags():
    m, t = ablation_by_name("Ours-SS-2").apply(TINY, QUICK, 5)
    assert m.use_intention and m.use_relation_graph
    assert t.mode == "semi_supervised" and t.seed == 5 and not t.use_auxiliary and t.loss_weights.lam == 0
    assert not t.use_ranking_pseudo and t.use_loss_weighting


def test_gamma_zero_ssl_matches_supervised(data):
    tr, _, unl = data
    sup = train(tr, TINY, dataclasses.replace(QUICK, seed=3))
    ssl = train(tr, TINY, dataclasses.replace(QUICK, seed=3, mode="semi_supervised", gamma_forced=0.0),
                unlabeled=unl)
    strip = lambda res: [{k: v for k, v in r.items() if k != "gamma"} for r in res.log]
    assert strip(sup) == strip(ssl)
    for k in sup.params:
        assert sup.params[k].tobytes() == ssl.params[k].tobytes()


def test_run_ablation_rows(data):
    tr, te, unl = data
    configs = [ablation_by_name("Ours-S-1"), ablation_by_name("Ours-SS")]
    fam = {"firsthalf": {s.scene_id for s in te[: len(te) // 2]}}
    rows = run_ablation(tr, te, configs, [0, 1], TINY, QUICK, unlabeled=unl, families=fam)
    assert len(rows) == 2 * 2 * 5
    assert {r["slice"] for r in rows} == {"overall", "forward", "left", "right", "firsthalf"}
    summary = summarize(rows)
    assert len(summary) == 2 * 5 and all(r["n_seeds"] == 2 for r in summary)
    text = render_table(rows)
    assert "Ours-SS" in text and "±" in text


def test_baseline_rows(data):
    _, te, _ = data
    rows = baseline_rows(te)
    assert {r["config"] for r in rows} == {"B-1", "B-2", "B-3"}
    assert all(0 <= r["accuracy"] <= 100 for r in rows)


def test_sweep_cardinality_and_sharing(data):
    tr, te, unl = data
    rows = sweep_thresholds(tr, te, unl, [0.5, 0.8], [0.6, 0.9], [0], TINY, QUICK)
    assert len(rows) == 4
    a = [r for r in rows if r["alpha1"] == 0.5]
    assert a[0]["f1"] == a[1]["f1"]
    assert "mean" in render_table(rows)
    with pytest.raises(ValueError):
        sweep_thresholds(tr, te, unl, [0.4], [0.5], [0], TINY, QUICK)


def test_summary_statistics():
    rows = [{"slice": "overall", "config": "c", "accuracy": a, "f1": a / 2} for a in (80.0, 90.0, 100.0)]
    (s,) = summarize(rows)
    assert s["accuracy_mean"] == 90.0 and s["accuracy_std"] == 10.0 and s["f1_mean"] == 45.0


def test_csv_floats_round_trip():
    text = rows_to_csv([{"a": 0.1 + 0.2, "b": "x"}])
    assert text == "a,b\n0.30000000000000004,x\n"


def test_config_round_trip(tmp_path):
    cfg = RunConfig(GEN, TINY, QUICK, label_fraction=0.25)
    save_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back.to_dict() == cfg.to_dict()


def test_config_errors(tmp_path):
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ValueError, match="invalid JSON"):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ValueError, match="unknown config sections"):
        RunConfig.from_dict({"modle": {}})
    with pytest.raises(ValueError, match="unknown train keys"):
        RunConfig.from_dict({"train": {"lr": 1, "epochz": 3}})
    with pytest.raises(ValueError):
        RunConfig(label_fraction=0.0)


def test_config_aliases():
    cfg = RunConfig.from_dict({"model": {"preset": "desk"},
                               "train": {"lambda": 0.25, "gamma_schedule": {"max": 2.0, "shape": "linear"}}})
    assert cfg.model.feat_dim == 32 and cfg.train.lam == 0.25
    assert cfg.train.gamma_max == 2.0 and cfg.train.gamma_shape == "linear"


def test_label_fraction_subset(data):
    ds = generate_dataset(GEN)
    cfg = RunConfig(GEN, TINY, QUICK, label_fraction=0.25)
    full, te = RunConfig(GEN, TINY, QUICK).split(ds.labeled)
    sub, te2 = cfg.split(ds.labeled, seed=1)
    assert te == te2 and len(sub) == len(full) // 4
    assert {s.scene_id for s in sub} <= {s.scene_id for s in full}
    assert [s.scene_id for s in cfg.split(ds.labeled, seed=1)[0]] == [s.scene_id for s in sub]
