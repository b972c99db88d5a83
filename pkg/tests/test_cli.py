import json

import pytest

from papforge.cli import main
from papforge.manifest import ManifestError, build_instances, parse_manifest

TINY = {
    "problem": "ccp",
    "train": {"kind": "ccp", "count": 3, "dims": [6], "T": 10},
    "test": {"kind": "ccp", "count": 2, "dims": [6], "lams": [0.0, 0.01], "T": 10},
    "seed": 3,
    "dace": {"K": 2, "max_round": 2, "n_mining": 2, "n_init_configs": 4, "budget": 100,
             "reps": 1, "aac": {"max_trials": 3, "restarts": 1},
             "mutation": {"max_iter": 1, "pgpe_samples": 2}},
    "nir": {"samples_per_instance": 200, "max_epochs": 1, "patience": 1},
    "sampling": {"nir_bound_samples": 400, "real_bound_samples": 300,
                 "feature_solutions": 400, "feature_pairs": 4000},
    "evaluate": {"runs": 2},
}


@pytest.fixture
def manifest(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(TINY))
    return path


def test_defaults_and_seed():
    m = parse_manifest({"problem": "onemax"})
    assert m.seed == 42 and m.dace["K"] == 4 and m.dace["n_mining"] == 20
    assert m.nir["lambda2"] == 5e-4 and m.dace["aac"]["max_trials"] == 100
    assert parse_manifest({"problem": "onemax"}, scale="paper").dace["aac"]["max_trials"] == 1600
    assert parse_manifest({"problem": "onemax", "seed": 1}, seed=9).seed == 9
    cfg = parse_manifest(TINY).dace_config(workers=2)
    assert cfg.K == 2 and cfg.aac.max_trials == 3 and cfg.workers == 2 and cfg.seed == 3


@pytest.mark.parametrize("bad,msg", [
    ({"problem": "ccp", "foo": 1}, "manifest.foo: unknown key 'foo'"),
    ({"problem": "ccp", "dace": {"K": "4"}}, "manifest.dace.K"),
    ({"problem": "tsp"}, "manifest.problem"),
    ({}, "manifest.problem: required"),
    ({"problem": "ccp", "train": {"count": 2}}, "manifest.train.kind"),
])
def test_manifest_errors(bad, msg):
    with pytest.raises(ManifestError, match=msg):
        parse_manifest(bad)


def test_generated_instances_are_reproducible():
    a = build_instances(TINY["test"], "test", 3)
    b = build_instances(TINY["test"], "test", 3)
    assert [x.id for x in a] == ["ccp-test-000", "ccp-test-001"]
    assert [x.lam for x in a] == [0.0, 0.01]
    assert all((x.alpha == y.alpha).all() for x, y in zip(a, b))


def test_usage_exit_codes(tmp_path, manifest):
    with pytest.raises(SystemExit) as exc:
        main(["bogus", "--out", str(tmp_path)])
    assert exc.value.code == 2
    assert main(["dace-run", "--out", str(tmp_path / "x")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"problem": "ccp", "oops": 1}')
    assert main(["dace-run", "--manifest", str(bad), "--out", str(tmp_path / "x")]) == 2
    bad.write_text("{not json")
    assert main(["dace-run", "--manifest", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["report", "--out", str(tmp_path / "missing")]) == 1


def test_ceps_run_report_and_overwrite(tmp_path, manifest, capsys):
    out = tmp_path / "ceps"
    args = ["ceps-run", "--manifest", str(manifest), "--out", str(out), "--workers", "1"]
    assert main(args) == 0
    assert (out / "round_2" / "pap.json").exists() and (out / "cache.json").exists()
    assert main(args) == 2
    assert main(args + ["--force"]) == 0
    assert main(["evaluate", "--manifest", str(manifest), "--out", str(out)]) == 0
    ev = json.loads((out / "evaluation.json").read_text())
    assert set(ev["instances"]) == {"ccp-test-000", "ccp-test-001"}
    assert set(ev["summary"]) == {"portfolio", "baseline"}
    assert main(["evaluate", "--manifest", str(manifest), "--out", str(out)]) == 2
    assert main(["report", "--out", str(out)]) == 0
    summary = json.loads((out / "report" / "summary.json").read_text())
    assert summary["rounds"] == 2 and "evaluation" in summary
    lines = [json.loads(l) for l in capsys.readouterr().err.splitlines() if l.startswith("{")]
    assert any(e["event"] == "error" for e in lines)


def test_ceps_needs_domain_generator(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({**TINY, "problem": "onemax",
                                "train": {"kind": "onemax", "count": 2, "dims": [6]}}))
    assert main(["ceps-run", "--manifest", str(path), "--out", str(tmp_path / "o")]) == 2


def test_dace_run_then_features(tmp_path, manifest):
    out = tmp_path / "dace"
    assert main(["dace-run", "--manifest", str(manifest), "--out", str(out),
                 "--workers", "1"]) == 0
    assert (out / "nir" / "manifest.json").exists()
    pap = json.loads((out / "round_2" / "pap.json").read_text())
    assert len(pap["members"]) == 2
    events = [json.loads(l) for l in open(out / "log.jsonl")]
    assert sum(e["event"] == "pap_evolved" for e in events) == 2
    assert main(["features", "--manifest", str(manifest), "--out", str(out)]) == 0
    feats = json.loads((out / "features.json").read_text())
    groups = [p["group"] for p in feats["points"]]
    assert groups.count("train") == 3 and groups.count("test") == 2 and "pool" in groups
    assert all(len(p["features"]) == 32 and len(p["xy"]) == 2 for p in feats["points"])


def test_nir_train_command(tmp_path, manifest):
    out = tmp_path / "n"
    assert main(["nir-train", "--manifest", str(manifest), "--out", str(out)]) == 0
    meta = json.loads((out / "nir" / "manifest.json").read_text())
    assert meta["ids"] == ["nir-000", "nir-001", "nir-002"]
    assert main(["nir-train", "--manifest", str(manifest), "--out", str(out)]) == 2


def test_onemax_verify_command(tmp_path, capsys):
    path = tmp_path / "om.json"
    path.write_text(json.dumps({
        "problem": "onemax", "nir": {"samples_per_instance": 400, "max_epochs": 2},
        "recovery": {"n_instances": 2, "dim": 8, "fes": 200, "n_search": 500, "n_valid": 500,
                     "n_random": 1, "n_sampled": 2}}))
    code = main(["onemax-verify", "--manifest", str(path), "--out", str(tmp_path / "o")])
    assert code in (0, 1)
    result = json.loads((tmp_path / "o" / "onemax_verify.json").read_text())
    assert len(result["trained"]) == 2 and len(result["sampled"]) == 2
    printed = capsys.readouterr().out
    assert printed.count("PASS") + printed.count("FAIL") == 5
