import json

from fractalgen.cli import main
from fractalgen.generator import read_manifest


def test_generate_run_report(tmp_path, capsys):
    space = tmp_path / "space.json"
    space.write_text(
        json.dumps(
            {
                "depth_n_choices": [1],
                "num_columns_choices": [1, 2],
                "activation_choices": ["relu"],
                "norm_choices": ["batch_norm"],
                "dropout_choices": [0.0],
                "base_channels": 4,
                "input_shape": [3, 8, 8],
                "num_classes": 2,
            }
        )
    )
    manifest = tmp_path / "m.jsonl"
    assert main(["generate", "--out", str(manifest), "--space", str(space)]) == 0
    assert len(read_manifest(manifest)) == 4  # two columns x two post-op orders

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 2, "train_count": 32, "val_count": 16}))
    out = tmp_path / "out"
    assert main(["run", "--manifest", str(manifest), "--config", str(cfg), "--out", str(out)]) == 0
    assert "success rate: 4/4" in capsys.readouterr().out

    summary = tmp_path / "summary.json"
    dist = tmp_path / "dist.csv"
    curves = tmp_path / "loss.csv"
    rc = main(
        ["report", "--in", str(out), "--summary", str(summary), "--epoch-dist", str(dist), "--epochs", "1,2", "--loss-curves", str(curves)]
    )
    assert rc == 0
    assert json.loads(summary.read_text())["model_count"] == 4
    assert dist.read_text().splitlines()[0] == "model_id,acc_epoch1,acc_epoch2"
    assert len(curves.read_text().splitlines()) == 1 + 4 * 2


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", "--manifest", str(tmp_path / "none.jsonl"), "--out", str(tmp_path)]) != 0
    assert main(["report", "--in", str(tmp_path / "empty")]) != 0
    capsys.readouterr()
