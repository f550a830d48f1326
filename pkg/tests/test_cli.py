import json
import subprocess
import sys

import numpy as np
import pytest

from durian_e import numerics as nx
from durian_e import verify
from durian_e.cli import main
from durian_e.corpus import load_corpus, read_record

TINY = {"model": {"hidden": 16, "linguistic_blocks": 1, "frame_blocks": 1, "prenet_dim": 8, "decoder_hidden": 8,
                  "residual_channels": 8, "residual_blocks": 2, "step_embed_dim": 8},
        "train": {"checkpoint_every": 2}}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["gen-data", "--out", str(root / "data"), "--seed", "3", "--utterances", "3"]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "run"), "--config", str(cfg),
                 "--steps", "4"]) == 0
    return root


def test_gen_data_deterministic(tmp_path, trained):
    main(["gen-data", "--out", str(tmp_path / "again"), "--seed", "3", "--utterances", "3"])
    for a, b in zip(sorted((trained / "data").iterdir()), sorted((tmp_path / "again").iterdir())):
        assert a.name == b.name and a.read_bytes() == b.read_bytes()
    assert load_corpus(trained / "data")[0].mel.shape[1] == 16


def test_train_outputs(trained):
    run = trained / "run"
    lines = (run / "metrics.log").read_text().splitlines()
    assert len(lines) == 4 and all(len(ln.split(",")) == 7 for ln in lines)
    assert {p.name for p in run.glob("*.drnc")} == {"step_000002.drnc", "step_000004.drnc", "last.drnc"}
    assert json.loads((run / "config.json").read_text())["model"]["hidden"] == 16


def test_train_channel_mismatch(trained, tmp_path):
    with pytest.raises(SystemExit, match="mel channels"):
        main(["train", "--data", str(trained / "data"), "--out", str(tmp_path), "--preset", "paper",
              "--steps", "1"])


def synth(trained, out, *extra):
    return main(["synth", "--checkpoint", str(trained / "run" / "last.drnc"), "--text", "p3 p7 #1 p2",
                 "--style", "happy", "--speaker", "2", "--out", str(out), "--seed", "9", *extra])


def test_synth_writes_both_mels(trained, tmp_path):
    assert synth(trained, tmp_path, "--emit-predenoiser") == 0
    post, pre = read_record(tmp_path / "synth.mel.drne"), read_record(tmp_path / "synth.pre.mel.drne")
    assert post.mel.shape == pre.mel.shape and post.mel.shape[0] == post.durations.sum()
    assert (post.style, post.speaker) == (1, 2)
    assert list(post.symbols) == [3, 7, 16, 2]
    assert not np.array_equal(post.mel, pre.mel)


def test_synth_deterministic(trained, tmp_path):
    synth(trained, tmp_path / "a")
    synth(trained, tmp_path / "b")
    assert (tmp_path / "a" / "synth.mel.drne").read_bytes() == (tmp_path / "b" / "synth.mel.drne").read_bytes()
    assert not (tmp_path / "a" / "synth.pre.mel.drne").exists()


@pytest.mark.parametrize("text,style,speaker", [("", "happy", "0"), ("p3 zz", "happy", "0"),
                                                ("p3", "gloomy", "0"), ("p3", "happy", "7")])
def test_synth_rejects_bad_input(trained, tmp_path, capsys, text, style, speaker):
    code = main(["synth", "--checkpoint", str(trained / "run" / "last.drnc"), "--text", text, "--style", style,
                 "--speaker", speaker, "--out", str(tmp_path)])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_verify_invariants_exit_zero(capsys):
    assert main(["verify", "invariants"]) == 0
    out = capsys.readouterr().out
    assert "PASS  invariants/swishrnn.scalar_oracle" in out and "max_err=" in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "durian_e", "verify", "diffusion-oracle"], capture_output=True,
                         text=True, timeout=300)
    assert res.returncode == 0, res.stdout + res.stderr
    assert "checks passed" in res.stdout


def test_corrupted_vjp_fails_gradcheck(monkeypatch, capsys):
    """Negative control: a tanh whose backward uses 1 - y instead of 1 - y^2."""

    def bad_tanh(a):
        a = nx.as_tensor(a)
        out = np.tanh(a.data)
        return nx._record(out, (a,), "tanh", lambda g: (g * (1.0 - out),))

    monkeypatch.setattr(nx, "tanh", bad_tanh)
    checks = verify.suite_gradcheck()
    failed = {c.name for c in checks if not c.passed}
    assert "primitive.tanh" in failed
    assert any(name.startswith("denoiser") for name in failed)  # gated activation uses tanh
    assert main(["verify", "gradcheck"]) == 1
    assert "FAIL  gradcheck/primitive.tanh" in capsys.readouterr().out
