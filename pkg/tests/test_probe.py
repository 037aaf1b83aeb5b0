import numpy as np
import pytest

from dxprivacy.embeddings import SPECIAL_TOKENS, EmbeddingTable
from dxprivacy.mechanism import PrivacyParams
from dxprivacy.probe import LabeledDataset, ProbeConfig, eval_probe, features, load_tsv, random_probe, train_probe
from dxprivacy.synthetic import SentimentWorld
from dxprivacy.tokenizer import tokenize


@pytest.fixture(scope="module")
def separable():
    """Two token clusters far apart; each example draws tokens from one cluster."""
    rng = np.random.default_rng(0)
    pos = rng.normal(size=(30, 5)) * 0.1 + np.array([1.0, 0, 0, 0, 0])
    neg = rng.normal(size=(30, 5)) * 0.1 - np.array([1.0, 0, 0, 0, 0])
    names = list(SPECIAL_TOKENS) + [f"p{i}" for i in range(30)] + [f"n{i}" for i in range(30)]
    table = EmbeddingTable(names, np.vstack([np.zeros((5, 5)), pos, neg]))
    seqs, labels = [], []
    for i in range(400):
        label = i % 2
        base = 5 if label else 35
        seqs.append((base + rng.integers(0, 30, size=rng.integers(3, 9))).tolist())
        labels.append(label)
    return table, LabeledDataset(seqs, labels)


def test_separable_training_accuracy(separable):
    table, data = separable
    m = train_probe(data, table, "none")
    assert m.train_accuracy >= 0.99
    assert eval_probe(m, data, table) == m.train_accuracy


def test_vanishing_noise_matches_clean(separable):
    table, data = separable
    clean = eval_probe(train_probe(data, table), data, table)
    # noise mean n/eta = 5e-3 < margin/100 (margin ~ 2)
    p = PrivacyParams(1000.0, table.dim, 1)
    rep = eval_probe(train_probe(data, table, "representation", p), data, table, "representation", p)
    assert abs(rep - clean) <= 0.02


def test_none_is_deterministic(separable):
    table, data = separable
    a = train_probe(data, table, config=ProbeConfig(seed=3))
    b = train_probe(data, table, config=ProbeConfig(seed=3))
    np.testing.assert_array_equal(a.weights, b.weights)


def test_random_probe_chance():
    world = SentimentWorld()
    t = world.table()
    rows = world.sentences(2000, 5)
    data = LabeledDataset([tokenize(x, t) for _, x in rows], [label for label, _ in rows])
    accs = [eval_probe(random_probe(t, seed=s), data, t) for s in range(5)]
    assert abs(np.mean(accs) - 0.5) <= 0.05


def test_errors(separable, tri_table):
    table, data = separable
    single = LabeledDataset(data.first[:10], np.zeros(10))
    with pytest.raises(ValueError):
        train_probe(single, table)
    with pytest.raises(ValueError):
        LabeledDataset([[1]], [2])
    with pytest.raises(ValueError):
        LabeledDataset([[]], [1])
    m = train_probe(data, table)
    with pytest.raises(ValueError):
        eval_probe(m, LabeledDataset([[0]], [1]), tri_table)
    with pytest.raises(ValueError):
        features(data, table, "representation", None)


def test_pair_features(separable):
    table, data = separable
    pair = LabeledDataset(data.first, data.labels, second=data.first[::-1])
    f = features(pair, table)
    assert f.shape == (len(data), 2 * table.dim)
    m = train_probe(pair, table)
    assert m.pair and m.weights.size == 2 * table.dim


def test_load_tsv(tmp_path, word_table):
    p = tmp_path / "d.tsv"
    p.write_text("1\tthe nerve\n0\temotions\n\n", encoding="utf-8")
    d = load_tsv(p, word_table)
    assert len(d) == 2 and not d.is_pair
    assert d.first[0] == [word_table.vocab.id("the"), word_table.vocab.id("nerve")]
    p.write_text("1\tthe\tnerve\n0\tthe\tthe\n", encoding="utf-8")
    assert load_tsv(p, word_table).is_pair
    p.write_text("1\tthe\n0\tthe\tthe\n", encoding="utf-8")
    with pytest.raises(ValueError, match="line 2"):
        load_tsv(p, word_table)
    p.write_text("x\tthe\n", encoding="utf-8")
    with pytest.raises(ValueError, match="line 1"):
        load_tsv(p, word_table)


def test_privatization_does_not_beat_clean():
    world = SentimentWorld()
    t = world.table()
    mk = lambda rows: LabeledDataset([tokenize(x, t) for _, x in rows], [label for label, _ in rows])
    tr, dv = mk(world.sentences(1000, 1)), mk(world.sentences(600, 2))
    clean = eval_probe(train_probe(tr, t), dv, t)
    se = np.sqrt(clean * (1 - clean) / len(dv))
    for mode in ("representation", "text"):
        p = PrivacyParams(150.0, t.dim, 0)
        acc = eval_probe(train_probe(tr, t, mode, p), dv, t, mode, p)
        assert acc <= clean + 2 * se
