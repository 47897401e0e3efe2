from __future__ import annotations

import pytest

from atsc_prompts.backends.base import BackendDescriptor, BackendRegistry
from atsc_prompts.backends import bow
from atsc_prompts.corpus import parse_semeval, preprocess
from atsc_prompts.experiments import DataStore

import fixture_data


@pytest.fixture(scope="session")
def atsc_rows():
    return {
        ("laptops", "train"): fixture_data.make_atsc_sentences("laptops", n_per_class=16, seed=10),
        ("laptops", "test"): fixture_data.make_atsc_sentences("laptops", n_per_class=8,
                                                              n_multi=3, seed=11),
        ("restaurants", "train"): fixture_data.make_atsc_sentences("restaurants", n_per_class=16,
                                                                   seed=12),
        ("restaurants", "test"): fixture_data.make_atsc_sentences("restaurants", n_per_class=8,
                                                                  n_multi=3, seed=13),
    }


@pytest.fixture(scope="session")
def atsc_examples(atsc_rows):
    examples = {}
    for (domain, split), rows in atsc_rows.items():
        raw = parse_semeval(fixture_data.atsc_xml(rows), kind="atsc")
        examples[(domain, split)] = preprocess(raw, domain=domain)
    return examples


@pytest.fixture(scope="session")
def acsc_examples():
    rows = fixture_data.make_acsc_sentences(n_per_class=10, seed=14)
    raw = parse_semeval(fixture_data.acsc_xml(rows), kind="acsc")
    return preprocess(raw, domain="restaurants")


@pytest.fixture()
def data_store(atsc_examples):
    return DataStore(splits=atsc_examples)


def build_bow_registry() -> BackendRegistry:
    registry = BackendRegistry()
    entries = [
        BackendDescriptor(family="masked_lm"),
        BackendDescriptor(family="causal_lm"),
        BackendDescriptor(family="nli"),
        BackendDescriptor(family="pair_classifier"),
        BackendDescriptor(family="masked_lm", provenance="domain_adapted", domain="laptops"),
        BackendDescriptor(family="masked_lm", provenance="domain_adapted", domain="restaurants"),
    ]
    classes = {
        "masked_lm": bow.BagOfWordsMaskedLM,
        "causal_lm": bow.BagOfWordsCausalLM,
        "nli": bow.BagOfWordsNli,
        "pair_classifier": bow.BagOfWordsPairClassifier,
    }
    for descriptor in entries:
        cls = classes[descriptor.family]
        registry.register(descriptor, lambda cls=cls, d=descriptor: cls(descriptor=d))
    return registry


@pytest.fixture()
def bow_registry():
    return build_bow_registry()


@pytest.fixture(scope="session")
def tiny_masked_lm_dir(tmp_path_factory):
    from hf_fixtures import make_tiny_masked_lm
    return make_tiny_masked_lm(tmp_path_factory.mktemp("tiny_mlm"))


@pytest.fixture(scope="session")
def tiny_causal_lm_dir(tmp_path_factory):
    from hf_fixtures import make_tiny_causal_lm
    return make_tiny_causal_lm(tmp_path_factory.mktemp("tiny_clm"))


@pytest.fixture(scope="session")
def tiny_nli_dir(tmp_path_factory):
    from hf_fixtures import make_tiny_nli
    return make_tiny_nli(tmp_path_factory.mktemp("tiny_nli"))


@pytest.fixture(scope="session")
def tiny_encoder_dir(tmp_path_factory):
    from hf_fixtures import make_tiny_encoder
    return make_tiny_encoder(tmp_path_factory.mktemp("tiny_encoder"))
