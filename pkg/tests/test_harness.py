import json

import pytest

from slfv_lab import io
from slfv_lab.cli import main
from slfv_lab.config import ConfigError, ExperimentConfig, default_config
from slfv_lab.harness import MANIFEST, OUTPUT_ENV, RunManifest, run
from slfv_lab.verify import verify_suite


def _csv_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


@pytest.fixture(scope="module")
def fast_runs(tmp_path_factory):
    a = tmp_path_factory.mktemp("fast_a")
    b = tmp_path_factory.mktemp("fast_b")
    c = tmp_path_factory.mktemp("fast_c")
    return (a, verify_suite("fast", 1, a)), (b, verify_suite("fast", 2, b)), (c, verify_suite("fast", 1, c))


def _gates(man):
    return [(c["name"], c["passed"]) for c in man.checks if not c["name"].startswith("runtime-")]


def test_verify_fast_passes_and_is_seed_stable(fast_runs):
    (_, m1), (_, m2), _ = fast_runs
    assert all(p for _, p in _gates(m1)), m1.failed
    assert _gates(m1) == _gates(m2)


def test_verify_fast_reproducible_bytes(fast_runs):
    (a, _), _, (c, _) = fast_runs
    ba, bc = _csv_bytes(a), _csv_bytes(c)
    assert ba and ba == bc


def test_manifest_lists_every_file_and_is_written_last(fast_runs):
    (root, man), _, _ = fast_runs
    out = root / "verify-fast"
    doc = json.loads((out / MANIFEST).read_text())
    files = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file() and p.name != MANIFEST}
    assert set(doc["files"]) == files
    for name, digest in doc["files"].items():
        assert io.sha256_file(out / name) == digest
        assert (out / name).stat().st_mtime_ns <= (out / MANIFEST).stat().st_mtime_ns
    assert doc["passed"] == man.passed
    back = RunManifest.load(out / MANIFEST)
    assert back.checks == man.checks and back.files == man.files


def test_run_spectra(tmp_path):
    man = run(default_config("spectra"), tmp_path)
    assert man.passed, man.failed
    out = tmp_path / "spectra"
    assert (out / "config.ini").exists() and (out / "spectra.csv").exists()
    assert ExperimentConfig.load(out / "config.ini") == default_config("spectra")
    assert man.config_hash == default_config("spectra").digest()


def test_env_stats_deterministic(tmp_path):
    cfg = default_config("env-stats")
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    a, b = tmp_path / "a" / "env-stats", tmp_path / "b" / "env-stats"
    assert _csv_bytes(a) == _csv_bytes(b)
    assert io.sha256_file(tmp_path / "a" / cfg.cn_cache) == io.sha256_file(tmp_path / "b" / cfg.cn_cache)


def test_tampered_cache_fails_env_stats(tmp_path):
    cfg = default_config("env-stats")
    assert run(cfg, tmp_path).passed
    cache = tmp_path / cfg.cn_cache
    lines = cache.read_text().splitlines()
    parts = lines[1].split(",")
    parts[3] = repr(float(parts[3]) + 1e-9)
    cache.write_text("\n".join([lines[0], ",".join(parts)] + lines[2:]) + "\n")
    man = run(cfg, tmp_path)
    assert not man.passed
    assert "CacheIntegrityError" in man.checks[0]["detail"]
    assert (tmp_path / "env-stats" / MANIFEST).exists()


def test_invalid_config_writes_nothing(tmp_path):
    cfg = default_config("slfv").replace(replicas=0)
    with pytest.raises(ConfigError):
        run(cfg, tmp_path / "out")
    assert not (tmp_path / "out").exists()


def test_cli_invalid_config_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "out"))
    p = tmp_path / "bad.ini"
    p.write_text(default_config("slfv").to_text().replace("replicas = 1000", "replicas = 0"))
    assert main(["run", str(p)]) == 2
    assert "replicas" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()
    assert main(["run", str(tmp_path / "missing.ini")]) == 2


def test_cli_print_config_and_run(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "out"))
    assert main(["print-config", "--kind", "spectra"]) == 0
    text = capsys.readouterr().out
    assert ExperimentConfig.from_text(text) == default_config("spectra")
    p = tmp_path / "spectra.ini"
    p.write_text(text)
    assert main(["run", str(p)]) == 0
    assert "all checks passed" in capsys.readouterr().out
    assert (tmp_path / "out" / "spectra" / MANIFEST).exists()
    with pytest.raises(SystemExit):
        main(["print-config", "--kind", "bogus"])
