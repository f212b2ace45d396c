import json
from collections import Counter

import numpy as np
import pytest

from advdistill.data import (
    SOURCE,
    TARGET,
    DomainPairDataset,
    Example,
    GeneratorConfig,
    batch_indices,
    batch_iter,
    build_vocabulary,
    generate_domain_pair,
    hash_token,
    load_jsonl,
    load_manifest,
    split_protocol,
    write_dataset,
)

SMALL = GeneratorConfig(per_class=100)


@pytest.fixture(scope="module")
def default_pair():
    return generate_domain_pair(GeneratorConfig())


def test_default_split_sizes(default_pair):
    assert default_pair.sizes() == {"source_train": 1600, "source_dev": 400,
                                    "target_train": 1600, "target_eval": 2000}


def test_labeled_splits_balanced(default_pair):
    for split in ("source_train", "source_dev", "target_eval"):
        counts = Counter(ex.label for ex in getattr(default_pair, split))
        assert counts[0] == counts[1], split


def test_splits_disjoint(default_pair):
    seen = {}
    for split in ("source_train", "source_dev", "target_train", "target_eval"):
        for ex in getattr(default_pair, split):
            assert seen.setdefault(ex.tokens, split) == split


def test_target_train_structurally_unlabeled(default_pair):
    assert all(ex.label is None and ex.domain == TARGET for ex in default_pair.target_train)
    with pytest.raises(ValueError, match="target_train"):
        DomainPairDataset([], [], [Example((1,), 0, TARGET)], [])


def test_generation_deterministic():
    a, b = generate_domain_pair(SMALL), generate_domain_pair(SMALL)
    assert a.source_train == b.source_train and a.target_eval == b.target_eval
    c = generate_domain_pair(GeneratorConfig(per_class=100, seed=1))
    assert c.source_train != a.source_train


def test_lengths_and_ids_in_range():
    ds = generate_domain_pair(SMALL)
    for ex in ds.source_train + ds.target_eval:
        assert 20 <= len(ex.tokens) <= 128
        assert 0 <= min(ex.tokens) and max(ex.tokens) < 2000


def _class_sets(cfg):
    vocab = build_vocabulary(cfg, np.random.default_rng(cfg.seed))
    return ([set(vocab.class_tokens(SOURCE, k).tolist()) for k in range(cfg.num_classes)],
            [set(vocab.class_tokens(TARGET, k).tolist()) for k in range(cfg.num_classes)])


def test_rho_one_shares_class_vocabulary():
    src, tgt = _class_sets(GeneratorConfig(pivot_fraction=1.0))
    assert src == tgt


def test_rho_zero_disjoint_class_vocabulary():
    src, tgt = _class_sets(GeneratorConfig(pivot_fraction=0.0))
    assert all(not (s & t) for s in src for t in tgt)


def test_rho_sets_pivot_share():
    src, tgt = _class_sets(GeneratorConfig(pivot_fraction=0.3, class_words=40))
    assert [len(s & t) for s, t in zip(src, tgt)] == [12, 12]


def test_infeasible_vocabulary_rejected():
    with pytest.raises(ValueError, match="vocab_size"):
        generate_domain_pair(GeneratorConfig(vocab_size=100, class_words=40, pivot_fraction=0.0))


@pytest.mark.parametrize("bad", [dict(pivot_fraction=1.5), dict(min_len=0), dict(max_len=200),
                                 dict(class_token_rate=-1.0)])
def test_bad_generator_config(bad):
    with pytest.raises(ValueError):
        GeneratorConfig(**bad).validate()


# -- split protocol -------------------------------------------------------------

def _labeled(n, domain=SOURCE):
    return [Example((i + 1,), i % 2, domain) for i in range(n)]


@pytest.mark.parametrize("n, sizes", [(2000, (1600, 400)), (1000, (800, 200)), (10, (8, 2))])
def test_split_sizes(n, sizes):
    ds = split_protocol(_labeled(n), _labeled(8, TARGET), _labeled(12, TARGET), seed=0)
    assert (len(ds.source_train), len(ds.source_dev)) == sizes
    assert Counter(ex.label for ex in ds.source_dev)[0] == sizes[1] // 2
    assert all(ex.label is None for ex in ds.target_train)


def test_split_seeds_permute():
    a = split_protocol(_labeled(100), [], _labeled(4, TARGET), seed=0)
    b = split_protocol(_labeled(100), [], _labeled(4, TARGET), seed=1)
    assert len(a.source_dev) == len(b.source_dev)
    assert [ex.tokens for ex in a.source_train] != [ex.tokens for ex in b.source_train]


def test_split_rejects_small_and_imbalanced():
    with pytest.raises(ValueError, match="at least 10"):
        split_protocol(_labeled(9), [], [])
    skew = _labeled(10) + [Example((99,), 0), Example((98,), 0)]
    with pytest.raises(ValueError, match="imbalanced"):
        split_protocol(skew, [], [])
    # imbalance of exactly one is fine
    split_protocol(_labeled(11), [], [])


# -- batching -------------------------------------------------------------------

def test_batch_counts():
    assert len(list(batch_iter(list(range(1600)), 64, 0, 0))) == 25
    assert [len(b) for b in batch_iter(list(range(100)), 64, 0, 0)] == [64, 36]


def test_epochs_reshuffle_same_multiset():
    e0 = np.concatenate(batch_indices(100, 64, 0, 0))
    e1 = np.concatenate(batch_indices(100, 64, 0, 1))
    assert not np.array_equal(e0, e1)
    assert sorted(e0) == sorted(e1) == list(range(100))
    assert np.array_equal(e0, np.concatenate(batch_indices(100, 64, 0, 0)))


def test_batch_size_must_be_positive():
    with pytest.raises(ValueError):
        batch_indices(5, 0, 0, 0)


# -- JSONL ------------------------------------------------------------------------

def test_fnv1a_reference_values():
    # published 64-bit FNV-1a vectors: "" -> cbf29ce484222325, "a" -> af63dc4c8601ec8c
    assert hash_token("", 2 ** 64 - 1) == 0xCBF29CE484222325 % (2 ** 64 - 1)
    assert hash_token("a", 2 ** 64 - 1) == 0xAF63DC4C8601EC8C % (2 ** 64 - 1)


def test_jsonl_truncates_and_hashes(tmp_path):
    path = tmp_path / "c.jsonl"
    long = " ".join(f"w{i}" for i in range(300))
    path.write_text(json.dumps({"text": long, "label": 1}) + "\n\n"
                    + json.dumps({"tokens": [1, 2, 3]}) + "\n")
    exs = load_jsonl(path, vocab_size=500)
    assert len(exs[0].tokens) == 128 and exs[0].label == 1
    assert exs[0].tokens[0] == hash_token("w0", 500)
    assert exs[1].label is None and exs[1].tokens == (1, 2, 3)


def test_jsonl_empty_file(tmp_path):
    path = tmp_path / "e.jsonl"
    path.write_text("")
    assert load_jsonl(path) == []


@pytest.mark.parametrize("line, match", [
    ("{not json", "malformed"),
    ('{"label": 1}', "text' or 'tokens"),
    ('{"tokens": [1, "a"]}', "integers"),
    ('{"tokens": [1], "label": -2}', "label"),
    ('{"tokens": [5000]}', "outside"),
    ('[1, 2]', "JSON object"),
])
def test_jsonl_errors_carry_line_number(tmp_path, line, match):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"tokens": [1]}\n' + line + "\n")
    with pytest.raises(ValueError, match=match) as info:
        load_jsonl(path)
    assert f"{path}:2" in str(info.value)


def test_manifest_round_trip(tmp_path):
    ds = generate_domain_pair(SMALL)
    manifest = write_dataset(ds, tmp_path / "d")
    back = load_manifest(manifest)
    assert back.name == ds.name and back.sizes() == ds.sizes()
    assert back.source_train == ds.source_train and back.target_train == ds.target_train
    assert back.meta == json.loads(json.dumps(ds.meta))


def test_manifest_strips_target_train_labels(tmp_path):
    ds = generate_domain_pair(SMALL)
    manifest = write_dataset(ds, tmp_path / "d")
    # a hand-edited file that sneaks labels in is stripped on load
    (tmp_path / "d" / "target_train.jsonl").write_text('{"tokens": [1, 2], "label": 1}\n')
    assert load_manifest(manifest).target_train[0].label is None


def test_write_dataset_idempotent(tmp_path):
    ds = generate_domain_pair(SMALL)
    write_dataset(ds, tmp_path / "a")
    write_dataset(generate_domain_pair(SMALL), tmp_path / "b")
    for name in ("manifest.json", "source_train.jsonl", "target_eval.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
