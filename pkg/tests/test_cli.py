import json

import pytest

from relimp.cli import main
from relimp.scene import load_dataset

CONFIG = {
    "generator": {"scene_count": 30, "unlabeled_count": 10, "seed": 2, "T_h": 3, "T_f": 2,
                  "d_appearance": 4, "d_depthsem": 3, "max_objects": 4},
    "model": {"lstm_hidden": 4, "feat_dim": 4, "mlp_hidden": 4, "graph_hidden": 4, "cls_hidden": 4,
              "aux_hidden1": 3, "aux_hidden2": 3, "d_appearance": 4, "d_depthsem": 3, "t_future": 2},
    "train": {"epochs": 2, "batch_size": 8, "lr": 0.003},
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.json").write_text(json.dumps(CONFIG))
    assert main(["generate", "--config", str(d / "cfg.json"), "--out", str(d / "data.jsonl")]) == 0
    return d


def run(work, *argv):
    return main([a.format(d=work) for a in argv])


def test_generate_writes_dataset(work):
    ds = load_dataset(work / "data.jsonl")
    assert len(ds.labeled) == 30 and len(ds.unlabeled) == 10


@pytest.mark.parametrize("mode", ["supervised", "ssl"])
def test_train_eval_round_trip(work, mode):
    assert run(work, "train", "--config", "{d}/cfg.json", "--data", "{d}/data.jsonl", "--mode", mode,
               "--out", f"{{d}}/{mode}.ckpt") == 0
    for suffix in ("", ".config.json", ".log.csv"):
        assert (work / f"{mode}.ckpt{suffix}").exists()
    log = (work / f"{mode}.ckpt.log.csv").read_text().splitlines()
    assert log[0] == "epoch,L_labeled,L_unlabeled,gamma,val_accuracy,val_F1" and len(log) == 3
    assert run(work, "eval", "--data", "{d}/data.jsonl", "--checkpoint", f"{{d}}/{mode}.ckpt", "--baselines",
               "--out", f"{{d}}/{mode}.csv") == 0
    text = (work / f"{mode}.csv").read_text()
    assert text.startswith("slice,config,seed,accuracy,f1,n_scenes,n_objects\n")
    assert all(b in text for b in ("B-1", "B-2", "B-3", "model"))


def test_seed_determinism(work):
    outs = []
    for k in range(2):
        assert run(work, "train", "--config", "{d}/cfg.json", "--data", "{d}/data.jsonl", "--seed", "7",
                   "--out", f"{{d}}/s7_{k}.ckpt") == 0
        assert run(work, "eval", "--data", "{d}/data.jsonl", "--checkpoint", f"{{d}}/s7_{k}.ckpt",
                   "--out", f"{{d}}/s7_{k}.csv") == 0
        outs.append(((work / f"s7_{k}.csv").read_bytes(), (work / f"s7_{k}.ckpt.log.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_ablate_sweep_report(work, capsys):
    assert run(work, "ablate", "--config", "{d}/cfg.json", "--data", "{d}/data.jsonl", "--configs",
               "Ours-S-3,Ours-SS", "--seeds", "0,1", "--out", "{d}/abl.csv") == 0
    assert (work / "abl.summary.csv").exists()
    assert run(work, "sweep", "--config", "{d}/cfg.json", "--data", "{d}/data.jsonl", "--grid-a1", "0.5,0.8",
               "--grid-a2", "0.7", "--out", "{d}/sweep.csv") == 0
    assert len((work / "sweep.csv").read_text().splitlines()) == 3
    capsys.readouterr()
    assert run(work, "report", "{d}/abl.csv", "{d}/sweep.csv") == 0
    out = capsys.readouterr().out
    assert "Ours-SS" in out and "overall" in out and "mean" in out


def test_icc(work, capsys):
    rows = ["subject,rater,value"] + [f"s{i},r{r},{i * 2 + (r == 1) * 0.1}" for i in range(4) for r in range(3)]
    (work / "ratings.csv").write_text("\n".join(rows) + "\n")
    assert run(work, "icc", "{d}/ratings.csv") == 0
    value = float(capsys.readouterr().out)
    assert 0.99 < value < 1.0


def test_icc_perfect(work, capsys):
    rows = ["subject,rater,value"] + [f"s{i},r{r},{i}" for i in range(3) for r in range(2)]
    (work / "same.csv").write_text("\n".join(rows) + "\n")
    assert run(work, "icc", "--data", "{d}/same.csv") == 0
    assert capsys.readouterr().out == "1.000000\n"


def test_errors(work, capsys):
    assert run(work, "train", "--data", "{d}/missing.jsonl", "--out", "{d}/x.ckpt") == 3
    assert "cannot read" in capsys.readouterr().err
    (work / "bad.json").write_text('{"train": {"epochz": 1}}')
    assert run(work, "generate", "--config", "{d}/bad.json", "--out", "{d}/x.jsonl") == 1
    assert "unknown train keys" in capsys.readouterr().err
    (work / "hdr.csv").write_text("a,b,c\n1,2,3\n")
    assert run(work, "icc", "{d}/hdr.csv") == 2
    assert "subject,rater,value" in capsys.readouterr().err
    assert run(work, "eval", "--data", "{d}/data.jsonl") == 2
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code != 0
