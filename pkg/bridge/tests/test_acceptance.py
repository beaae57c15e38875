"""Conformance gate: bridge output must be directly consumable.

A 10-image sample goes through the full bridge, and the results are
checked with the CONSUMER'S own tooling -- the contextcap CLI validator
run as a subprocess and its NER file parser -- not with this package's
code.  Requires contextcap installed (pip install -e .. from here).
"""

import csv
import json
import subprocess
import sys
import warnings

import pytest

from featbridge.extract import BridgeConfig, run_bridge
from featbridge.sample import make_sample_corpus

pytest.importorskip(
    "contextcap",
    reason="consumer package not installed; run: pip install -e .. --no-build-isolation",
)


def _report(name, detail):
    print(f"ACCEPTANCE PASS: {name}: {detail}")


@pytest.fixture(scope="module")
def bridged(tmp_path_factory):
    out = tmp_path_factory.mktemp("bridged")
    manifest = make_sample_corpus(out, count=10)
    config = BridgeConfig(
        manifest=manifest,
        features_out=out / "features.jsonl",
        ner_out=out / "ner.jsonl",
    )
    written, skipped = run_bridge(config)
    assert skipped == []
    with open(manifest, newline="", encoding="utf-8") as f:
        manifest_ids = [row["id"] for row in csv.DictReader(f)]
    return config, manifest_ids, written


def test_features_validate_under_consumer_cli(bridged):
    config, manifest_ids, _ = bridged
    proc = subprocess.run(
        [sys.executable, "-m", "contextcap.cli", "validate-features",
         "--features", str(config.features_out),
         "--n-obj", str(config.max_objects)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("ok:"), proc.stdout
    _report("feature file validates under consumer CLI",
            f"{len(manifest_ids)} images -> {proc.stdout.strip()!r}, exit 0")


def test_ner_parses_under_consumer_parser_with_zero_errors(bridged):
    config, manifest_ids, _ = bridged
    from contextcap.context import parse_ner_file

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pairs = parse_ner_file(str(config.ner_out))
    assert caught == []
    assert len(pairs) == len(manifest_ids)
    by_id = dict(pairs)
    assert by_id["protest-delhi"].entries["GPE"] == ["Delhi"]
    assert by_id["protest-delhi"].entries["DATE"] == ["Friday"]
    assert by_id["no-entity"].entries == {}
    _report("NER file parses under consumer parser",
            f"{len(pairs)} records, 0 errors, 0 warnings")


def test_id_sets_match_manifest_in_order(bridged):
    config, manifest_ids, written = bridged
    feat_ids = [json.loads(l)["id"] for l in open(config.features_out)]
    ner_ids = [json.loads(l)["id"] for l in open(config.ner_out)]
    assert feat_ids == manifest_ids
    assert ner_ids == manifest_ids
    assert written == manifest_ids
    _report("id sets match the manifest",
            f"features == ner == manifest ({len(manifest_ids)} ids, same order)")


def test_features_load_under_consumer_loader_with_zero_warnings(bridged):
    config, manifest_ids, _ = bridged
    from contextcap.visual import load_features

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        records = load_features(str(config.features_out),
                                n_obj=config.max_objects)
    assert caught == []
    assert [r.sample_id for r in records] == manifest_ids
    d_vis = records[0].d_vis
    assert all(r.d_vis == d_vis for r in records)
    real = sum(int(r.object_mask.sum()) for r in records)
    _report("feature records load under consumer loader",
            f"{len(records)} records, d_vis {d_vis}, {real} real objects, 0 warnings")
