import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from microformer.constitutive import MATRIX, elastic_stiffness
from microformer.ndcore import Tensor
from microformer.pipeline import (AdamState, SequenceRecord, Standardizer, TrainConfig,
                                  adam_step, clip_global_norm, dataset_mse, evaluate,
                                  generate_dataset, is_validation, load_checkpoint,
                                  lr_schedule, read_jsonl, rmse_metrics, save_checkpoint,
                                  split_records, train, truncate_random)
from microformer.pipeline.data import collate, length_bucketed_batches
from microformer.pipeline.evaluate import position_trend
from microformer.seqmodel import Surrogate, preset


# -- schedule and optimizer ----------------------------------------------------

def test_lr_examples():
    assert lr_schedule(1, 512, 4000) == pytest.approx(1.7469e-7, rel=1e-4)
    assert lr_schedule(4000, 512, 4000) == pytest.approx(6.9877e-4, rel=1e-4)
    assert lr_schedule(16000, 512, 4000) == pytest.approx(lr_schedule(4000, 512, 4000) / 2)
    with pytest.raises(ValueError):
        lr_schedule(0, 512, 4000)


def test_lr_shape():
    lrs = np.array([lr_schedule(s, 128, 300) for s in range(1, 2000)])
    assert np.all(np.diff(lrs[:299]) > 0) and np.all(np.diff(lrs[299:]) < 0)
    assert lr_schedule(300, 128, 300) == pytest.approx(128 ** -0.5 * 300 ** -0.5, rel=1e-15)


def test_adam_zero_grad_and_first_step():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    st_ = AdamState.for_params([p])
    adam_step([p], [np.zeros(2)], st_, 1e-3)
    assert np.array_equal(p.data, [1.0, -2.0]) and st_.step == 1
    q = Tensor(np.array([0.5]), requires_grad=True)
    sq = AdamState.for_params([q])
    adam_step([q], [np.array([3.0])], sq, 1e-3)
    assert abs(0.5 - q.data[0]) == pytest.approx(1e-3, rel=1e-7)
    with pytest.raises(ValueError):
        adam_step([q], [np.zeros(2)], sq, 1e-3)


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(0)
    p = Tensor(rng.normal(size=3), requires_grad=True)
    ref = p.data.copy()
    m = v = np.zeros(3)
    st_ = AdamState.for_params([p])
    for t in range(1, 6):
        g = rng.normal(size=3)
        adam_step([p], [g.copy()], st_, 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p.data, ref, rtol=1e-13)


def test_clip():
    g = [np.array([3.0]), np.array([4.0])]
    assert clip_global_norm(g, 1.0) == 5.0
    assert np.allclose([g[0][0], g[1][0]], [0.6, 0.8])
    h = [np.array([0.3])]
    clip_global_norm(h, 1.0)
    assert h[0][0] == 0.3


# -- records and standardization -----------------------------------------------

def make_record(rng, i, t=None):
    t = t or int(rng.integers(1, 30))
    return SequenceRecord(f"r{i}", rng.normal(size=(t, 3)), rng.normal(3, 2, size=(t, 4)), "random")


def test_record_validation():
    with pytest.raises(ValueError):
        SequenceRecord("x", np.zeros((3, 3)), np.zeros((2, 4)), "random")
    with pytest.raises(ValueError):
        SequenceRecord("x", np.zeros((0, 3)), np.zeros((0, 4)), "random")


def test_standardizer_round_trip_and_moments():
    rng = np.random.default_rng(0)
    recs = [make_record(rng, i) for i in range(20)]
    s = Standardizer.fit(recs)
    z = [s.apply(r) for r in recs]
    e = np.concatenate([r.strain for r in z])
    sig = np.concatenate([r.stress for r in z])
    for x in (e, sig):
        assert np.abs(x.mean(0)).max() < 1e-10 and np.abs(x.std(0) - 1).max() < 1e-10
    back = s.invert(z[3])
    assert np.abs(back.stress - recs[3].stress).max() < 1e-12
    s2 = Standardizer.from_json(json.loads(json.dumps(s.to_json())))
    assert np.array_equal(s2.stress_std, s.stress_std)


def test_standardizer_degenerate():
    r = SequenceRecord("c", np.ones((5, 3)), np.ones((5, 4)), "random")
    with pytest.raises(ValueError):
        Standardizer.fit([r])


def test_truncation():
    rng = np.random.default_rng(1)
    one = make_record(rng, 0, t=1)
    assert all(len(truncate_random(one, rng)) == 1 for _ in range(20))
    full = make_record(rng, 1, t=100)
    lens = np.array([len(truncate_random(full, rng)) for _ in range(10_000)])
    counts = np.bincount(lens, minlength=101)[1:]
    chi2 = ((counts - 100.0) ** 2 / 100.0).sum()
    assert chi2 < 134.6                     # chi-square 0.99 quantile, 99 dof
    cut = truncate_random(full, rng)
    assert np.array_equal(cut.stress, full.stress[:len(cut)])


def test_split_is_stable():
    ids = [f"mix-0-{i:07d}" for i in range(5000)]
    frac = np.mean([is_validation(i) for i in ids])
    assert 0.18 < frac < 0.22
    assert [is_validation(i) for i in ids[:50]] == [is_validation(i) for i in ids[:50]]


def test_collate_and_buckets():
    rng = np.random.default_rng(2)
    recs = [make_record(rng, i) for i in range(7)]
    b = collate(recs)
    assert b.strain.shape == (7, max(len(r) for r in recs), 3)
    assert list(b.lengths) == [len(r) for r in recs]
    lengths = rng.integers(1, 100, size=95)
    seen = np.concatenate(list(length_bucketed_batches(lengths, 10, rng, pool_batches=3)))
    assert sorted(seen.tolist()) == list(range(95))


# -- dataset generation ----------------------------------------------------------

def test_generation_determinism(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    generate_dataset(a, "homogeneous", 3, seed=4)
    generate_dataset(b, "homogeneous", 3, seed=4)
    assert a.read_bytes() == b.read_bytes()
    rec = json.loads(a.read_text().splitlines()[0])
    assert set(rec) == {"id", "fvr", "strain", "stress", "kind"} and rec["fvr"] == 0.0


def test_generation_order_independent(tmp_path):
    generate_dataset(tmp_path / "all.jsonl", "mixture", 4, seed=2)
    generate_dataset(tmp_path / "tail.jsonl", "mixture", 2, seed=2, start=2)
    generate_dataset(tmp_path / "par.jsonl", "mixture", 4, seed=2, jobs=2)
    all_lines = (tmp_path / "all.jsonl").read_text().splitlines()
    tail = [json.loads(x) for x in (tmp_path / "tail.jsonl").read_text().splitlines()]
    for x, y in zip([json.loads(x) for x in all_lines[2:]], tail):
        assert x["stress"] == y["stress"] and x["id"] == y["id"]
    par = [json.loads(x) for x in (tmp_path / "par.jsonl").read_text().splitlines()]
    for x, y in zip([json.loads(x) for x in all_lines], par):
        assert (tmp_path / x.pop("micro")).read_bytes() == (tmp_path / y.pop("micro")).read_bytes()
        assert x == y


def test_mixture_records(tmp_path):
    p = tmp_path / "m.jsonl"
    generate_dataset(p, "mixture", 6, seed=0)
    recs = read_jsonl(p)
    for r in recs:
        assert 0.2 <= r.fvr <= 0.52 and r.grid.shape == (64, 64)
        assert abs(r.grid.mean() - r.fvr) < 0.03


def test_homogeneous_stress_bound(tmp_path):
    from microformer.constitutive import von_mises
    p = tmp_path / "h.jsonl"
    generate_dataset(p, "homogeneous", 10, seed=3)
    for r in read_jsonl(p):
        assert von_mises(r.stress).max() <= 20 + 1e-8


def test_mixture_elastic_stiffness_increases_with_fvr():
    from microformer.constitutive import mixture_path
    e = np.array([[1e-5, 0.0, 0.0]])
    slopes = [mixture_path(e, f)[0, 0] / 1e-5 for f in (0.2, 0.35, 0.5)]
    assert slopes[0] < slopes[1] < slopes[2]


# -- metrics and checkpoints --------------------------------------------------------

def test_rmse_examples():
    rng = np.random.default_rng(3)
    t = [rng.normal(size=(n, 4)) for n in (3, 7, 5)]
    assert rmse_metrics(t, t)["rmse"] == 0
    m = rmse_metrics([x + 0.25 for x in t], t)
    assert m["rmse"] == pytest.approx(0.25) and np.allclose(m["rmse_by_position"], 0.25)
    assert len(m["rmse_by_position"]) == 7 and m["worst"][0]["rmse"] == pytest.approx(0.25)
    assert position_trend([1, 2, 3, 4]) == pytest.approx(1.0)


def tiny_model(homog=False):
    return Surrogate(preset("tiny", micro_dim=0 if homog else 3), np.random.default_rng(0))


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    m = tiny_model()
    recs = [make_record(rng, i) for i in range(5)]
    st_ = Standardizer.fit(recs, rng.normal(size=(5, 3)))
    save_checkpoint(tmp_path / "ck", m, st_, metadata={"note": 1})
    ck = load_checkpoint(tmp_path / "ck")
    e, s, mic = rng.normal(size=(2, 6, 3)), rng.normal(size=(2, 6, 4)), rng.normal(size=(2, 3))
    m.load_arrays({k: v.astype(np.float32).astype(np.float64) for k, v in m.state_arrays().items()})
    m.eval()
    assert np.array_equal(ck.model(e, s, mic).data, m(e, s, mic).data)
    save_checkpoint(tmp_path / "ck2", ck.model, ck.standardizer)
    assert (tmp_path / "ck" / "weights.bin").read_bytes() == (tmp_path / "ck2" / "weights.bin").read_bytes()
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert manifest["weights"]["count"] * 4 == (tmp_path / "ck" / "weights.bin").stat().st_size
    assert ck.metadata == {"note": 1}


# -- training --------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    generate_dataset(d / "mix.jsonl", "mixture", 40, seed=7)
    generate_dataset(d / "hom.jsonl", "homogeneous", 40, seed=7)
    return d


def small_config(small_dataset, out, **kw):
    base = dict(dataset=str(small_dataset / "mix.jsonl"), output=str(out), preset="tiny",
                batch_size=8, epochs=2, warmup_steps=20, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(dataset="x", output="y", batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(dataset="x", output="y", micro="fft")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"dataset": "x", "output": "y", "learning_rate": 1})
    assert TrainConfig("x", "y", fine_tune=True).lr(10, 512) == pytest.approx(
        0.1 * lr_schedule(10, 512, 4000), rel=1e-15)


def test_training_is_deterministic_and_resumable(small_dataset, tmp_path):
    a = train(small_config(small_dataset, tmp_path / "a", epochs=3))
    b = train(small_config(small_dataset, tmp_path / "b", epochs=3))
    assert [h["train_mse"] for h in a.history] == [h["train_mse"] for h in b.history]
    assert (tmp_path / "a/best/weights.bin").read_bytes() == (tmp_path / "b/best/weights.bin").read_bytes()
    train(small_config(small_dataset, tmp_path / "c", epochs=1))
    c = train(small_config(small_dataset, tmp_path / "c", epochs=3, resume=True))
    assert [h["train_mse"] for h in c.history] == [h["train_mse"] for h in a.history]
    assert [h.get("val_mse") for h in c.history] == [h.get("val_mse") for h in a.history]


def test_fine_tune_from_homogeneous(small_dataset, tmp_path):
    pre = train(small_config(small_dataset, tmp_path / "pre", micro="none",
                             dataset=str(small_dataset / "hom.jsonl"), epochs=1))
    ft = train(small_config(small_dataset, tmp_path / "ft", init=str(tmp_path / "pre/best"),
                            fine_tune=True, epochs=1))
    ref = load_checkpoint(tmp_path / "pre/best").model.state_arrays()
    fresh = Surrogate(ft.model.config, np.random.default_rng(3)).state_arrays()
    assert "micro_embed.W" not in ref
    shared = [k for k in ref if k in fresh]
    assert len(shared) > 0.5 * len(fresh)
    assert math.isfinite(ft.best_val_mse) and pre.model.config.homogeneous


def test_evaluate_and_cnn_training(small_dataset, tmp_path):
    from microformer.convnet import SMALL_CONVNET
    r = train(small_config(small_dataset, tmp_path / "cnn", micro="cnn", epochs=1,
                           model={"cnn": SMALL_CONVNET}))
    assert r.model.cnn.config.input_size == 8
    recs = read_jsonl(small_dataset / "mix.jsonl")[:5]
    m = evaluate(tmp_path / "cnn/best", recs)
    assert m["records"] == 5 and math.isfinite(m["rmse"]) and m["stress_std"] > 0
    ck = load_checkpoint(tmp_path / "cnn/best")
    before = (tmp_path / "cnn/best/weights.bin").read_bytes()
    evaluate(ck, recs)
    assert (tmp_path / "cnn/best/weights.bin").read_bytes() == before


def test_loss_decreases_when_overfitting(small_dataset, tmp_path):
    r = train(small_config(small_dataset, tmp_path / "o", epochs=10, val_fraction=0.0,
                           truncate=False, batch_size=16, warmup_steps=10,
                           model={"dropout": 0.0}))
    losses = np.array([h["train_mse"] for h in r.history])
    assert len(losses) == 10
    assert losses[-1] < 0.8 * losses[0]
    assert np.polyfit(np.arange(10), losses, 1)[0] < 0
