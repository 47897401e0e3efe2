import json

import pytest

from atsc_prompts.backends.base import BackendDescriptor
from atsc_prompts.config import ConfigError, build_registry, fingerprint, load_config
from atsc_prompts.corpus import FewShotSpec


class TestFingerprint:
    def test_deterministic_and_order_insensitive(self):
        assert fingerprint({"a": 1, "b": 2}) == fingerprint({"b": 2, "a": 1})
        assert len(fingerprint({"a": 1})) == 12

    def test_nested_dataclasses(self):
        assert fingerprint(FewShotSpec(size=16, seed=3)) == \
            fingerprint({"size": 16, "seed": 3})

    def test_distinct_payloads_differ(self):
        assert fingerprint({"seed": 1}) != fingerprint({"seed": 2})


def minimal_config(tmp_path, **overrides):
    (tmp_path / "train.jsonl").write_text("")
    (tmp_path / "test.jsonl").write_text("")
    raw = {
        "data": {"laptops": {"train": "train.jsonl", "test": "test.jsonl"}},
        "backends": [{"kind": "bow", "family": "nli"}],
    }
    raw.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


class TestLoadConfig:
    def test_minimal(self, tmp_path):
        config = load_config(minimal_config(tmp_path), env={})
        assert config.data_path("laptops", "train").name == "train.jsonl"
        assert config.seed_list == (0, 1, 2, 3, 4)
        assert config.schedule.epochs == 20

    def test_all_problems_reported_at_once(self, tmp_path):
        path = minimal_config(
            tmp_path,
            data={"laptops": {"train": "missing1.jsonl", "test": "missing2.jsonl"},
                  "hotels": {"train": "x.jsonl"}},
            seed_list=[],
            backends=[{"kind": "bow", "family": "rnn"},
                      {"kind": "transformer", "family": "nli"}],
        )
        with pytest.raises(ConfigError) as excinfo:
            load_config(path, env={})
        problems = excinfo.value.problems
        assert len(problems) >= 5
        assert any("missing1" in p for p in problems)
        assert any("hotels" in p for p in problems)
        assert any("seed_list" in p for p in problems)
        assert any("family" in p for p in problems)
        assert any("path" in p for p in problems)

    def test_data_root_env_override(self, tmp_path):
        root = tmp_path / "elsewhere"
        root.mkdir()
        (root / "train.jsonl").write_text("")
        (root / "test.jsonl").write_text("")
        raw = {"data": {"laptops": {"train": "train.jsonl", "test": "test.jsonl"}}}
        path = tmp_path / "config.json"
        path.write_text(json.dumps(raw))
        config = load_config(path, env={"ATSC_PROMPTS_DATA_ROOT": str(root)})
        assert config.data_path("laptops", "train") == root / "train.jsonl"

    def test_backend_path_env(self, tmp_path):
        model_dir = tmp_path / "weights"
        model_dir.mkdir()
        path = minimal_config(tmp_path, backends=[
            {"kind": "transformer", "family": "nli", "path_env": "MY_NLI_DIR"}])
        config = load_config(path, env={"MY_NLI_DIR": str(model_dir)})
        assert config.backends[0].path == model_dir
        with pytest.raises(ConfigError, match="path"):
            load_config(path, env={})

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.json", env={})

    def test_invalid_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        with pytest.raises(ConfigError, match="valid JSON"):
            load_config(bad, env={})


class TestBuildRegistry:
    def test_bow_backends_load(self, tmp_path):
        path = minimal_config(tmp_path, backends=[
            {"kind": "bow", "family": "nli"},
            {"kind": "bow", "family": "masked_lm", "provenance": "domain_adapted",
             "domain": "laptops", "options": {"init_seed": 9}},
        ])
        registry = build_registry(load_config(path, env={}))
        nli = registry.load(BackendDescriptor(family="nli"))
        assert nli.descriptor.family == "nli"
        adapted = registry.load(BackendDescriptor(family="masked_lm",
                                                  provenance="domain_adapted",
                                                  domain="laptops"))
        assert adapted.init_seed == 9

    def test_transformer_backend_loads(self, tmp_path, tiny_nli_dir):
        path = minimal_config(tmp_path, backends=[
            {"kind": "transformer", "family": "nli", "path": str(tiny_nli_dir),
             "options": {"max_length": 48}}])
        registry = build_registry(load_config(path, env={}))
        backend = registry.load(BackendDescriptor(family="nli"))
        assert backend.max_length == 48
