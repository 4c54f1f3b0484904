import io
import math

import pytest

from fastmd.cli import EXIT_FORMAT, EXIT_OK, EXIT_USAGE, run_cli

TINY = ["--d-model", "16", "--d-ff", "32", "--heads", "2", "--asr-encoder-layers", "2",
        "--asr-decoder-layers", "2", "--st-encoder-layers", "1", "--st-decoder-layers", "2",
        "--interctc-layers", "1"]


def run(*argv):
    out = io.StringIO()
    code = run_cli([str(a) for a in argv], out)
    return code, out.getvalue()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("--seed", 3, "gen", "--out", d / "corpus", "--n-utts", 3)[0] == EXIT_OK
    assert run("--seed", 4, "init-model", "--corpus", d / "corpus", "--out", d / "ar.fmd", *TINY)[0] == EXIT_OK
    assert run("--seed", 4, "init-model", "--corpus", d / "corpus", "--out", d / "cmlm.fmd",
               "--decoder-kind", "cmlm", "--encoder-kind", "conformer", *TINY)[0] == EXIT_OK
    return d


def test_decode_fast_parallel(workspace):
    code, out = run("decode", "--model", workspace / "ar.fmd", "--corpus", workspace / "corpus",
                    "--mode", "fast_parallel", "--b-st", 4)
    assert code == EXIT_OK
    lines = out.strip().splitlines()
    assert len(lines) == 4 and lines[-1].startswith("summary")
    assert all("transcript=" in l and "translation=" in l and "asr_decoder_passes=1" in l for l in lines[:3])


def test_decode_slow_with_fusion_and_masked(workspace):
    code, _ = run("decode", "--model", workspace / "ar.fmd", "--corpus", workspace / "corpus",
                  "--b-asr", 3, "--ctc-weight", 0.3, "--lm-weight", 0.2)
    assert code == EXIT_OK
    code, out = run("decode", "--model", workspace / "cmlm.fmd", "--corpus", workspace / "corpus",
                    "--mode", "fast_masked", "--k-mask", 2, "--p-thres", 0.5)
    assert code == EXIT_OK and "asr_decoder_passes=2" in out


def test_decode_is_deterministic(workspace):
    args = ("decode", "--model", workspace / "ar.fmd", "--corpus", workspace / "corpus", "--b-asr", 2)
    assert run(*args)[1] == run(*args)[1]


def test_bench_report_fields(workspace):
    code, out = run("bench", "--model", workspace / "ar.fmd", "--corpus", workspace / "corpus",
                    "--modes", "slow,fast_parallel", "--runs", 2, "--b-asr", 2,
                    "--table", workspace / "bench.csv")
    assert code == EXIT_OK
    fields = dict(line.split(": ", 1) for line in out.strip().splitlines())
    assert fields["slow.speedup"] == "1.000"
    assert float(fields["fast_parallel.speedup"]) > 0
    assert fields["fast_parallel.asr_decoder_passes"] == "3"
    assert (workspace / "bench.csv").read_text().startswith("mode,")


def parse_loss(out):
    rows = []
    for line in out.strip().splitlines():
        rows.append(dict(kv.split("=") for kv in line.split("\t")[1:]))
    return rows


def test_loss_theta_only_changes_conditioning(workspace):
    base = ("--seed", 1, "loss", "--model", workspace / "ar.fmd", "--corpus", workspace / "corpus", "--sample-ctc")
    code_inf, inf = run(*base, "--theta-cer", math.inf)
    code_zero, zero = run(*base, "--theta-cer", 0)
    assert code_inf == code_zero == EXIT_OK
    for a, b in zip(parse_loss(inf), parse_loss(zero)):
        assert a["l_asr_trf"] == b["l_asr_trf"]
        assert a["l_asr_ctc"] == b["l_asr_ctc"]
        assert a["used_ctc"] == "1"


def test_verify_ctc(workspace):
    code, out = run("verify", "--suite", "ctc")
    assert code == EXIT_OK
    assert out.count("PASS") == 4 and "FAIL" not in out


def test_usage_errors():
    assert run("decode", "--bogus")[0] == EXIT_USAGE
    assert run("frobnicate")[0] == EXIT_USAGE
    assert run()[0] == EXIT_USAGE
    assert run("verify", "--suite", "nope")[0] == EXIT_USAGE


def test_format_errors(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.fmd"
    bad.write_bytes(b"nope")
    (tmp_path / "bad.fmd.json").write_text((workspace / "ar.fmd.json").read_text())
    code, _ = run("decode", "--model", bad, "--corpus", workspace / "corpus")
    assert code == EXIT_FORMAT
    assert "error" in capsys.readouterr().err


def test_incompatible_mode_is_usage_error(workspace):
    code, _ = run("decode", "--model", workspace / "ar.fmd", "--corpus", workspace / "corpus",
                  "--mode", "fast_masked")
    assert code == EXIT_USAGE
