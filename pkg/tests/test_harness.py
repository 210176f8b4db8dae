import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prodelib import corpus as C
from prodelib.harness import experiments as X
from prodelib.harness.evaluation import ConstantModel, EvalReport, OracleModel, evaluate, exact_match
from prodelib.harness.latency import bench_latency, fit_line, write_latency_csv
from prodelib.model import DeliberationModel, ModelConfig
from prodelib.noising import NoiseSpec
from prodelib.training import ScheduleSpec, TrainConfig


def test_exact_match_examples():
    a = "[IN:X [SL:Y john ] ]".split()
    assert exact_match(a, list(a))
    assert not exact_match(a + ["]"], a)
    assert not exact_match(list(reversed(a)), a)
    assert exact_match([], [])


def test_oracle_and_constant_models(small_data):
    assert evaluate(OracleModel(), small_data).em_total == 1.0
    rep = evaluate(OracleModel(), small_data)
    assert rep.em_asr_error == rep.em_no_asr_error == 1.0
    assert evaluate(ConstantModel(), small_data).em_total == 0.0


@settings(max_examples=100, deadline=None)
@given(flags=st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40))
def test_weighted_mean_identity(flags):
    examples = [C.Example(["w"], ["w"], ["t"], err, "test", i) for i, (err, _) in enumerate(flags)]
    preds = [["t"] if hit else ["x"] for _, hit in flags]
    rep = EvalReport.from_matches(examples, preds)
    weighted = (rep.em_asr_error * rep.n_asr_error + rep.em_no_asr_error * rep.n_no_asr_error) / rep.n_total
    assert abs(rep.em_total - weighted) < 1e-12
    assert rep.n_asr_error + rep.n_no_asr_error == rep.n_total


def test_eval_csv_schema(tmp_path, small_data):
    rep = evaluate(OracleModel(), small_data[:5])
    rep.write_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "example_id,bucket,match"
    assert len(lines) == 6


def test_fit_line_exact():
    slope, intercept, r2 = fit_line([1, 2, 3, 4], [3, 5, 7, 9])
    assert slope == pytest.approx(2.0) and intercept == pytest.approx(1.0) and r2 == pytest.approx(1.0)


SMALL = dict(hidden_dim=16, num_heads=2, ffn_dim=32, encoder_layers=1, decoder_layers=1, first_pass_dim=16,
             max_length=40, audio_units=16)


@pytest.fixture(scope="module")
def models(small_vocab):
    return {m: DeliberationModel(ModelConfig(mode=m, **SMALL), small_vocab) for m in
            ("ctc", "mask_predict", "autoregressive")}


def test_bench_is_decoder_only_and_counts_ar_invocations(models, small_data, monkeypatch, tmp_path):
    ar = models["autoregressive"]
    calls = {"encoder": 0}
    real = type(ar.encoder).__call__

    def counting(self, *a, **k):
        calls["encoder"] += 1
        return real(self, *a, **k)

    monkeypatch.setattr(type(ar.encoder), "__call__", counting)
    ar.decoder.invocations = 0
    profiles = bench_latency({"autoregressive": ar}, small_data[0], lengths=(3, 6), runs=50, warmup=5)
    # one encoding per length, outside the timed loop
    assert calls["encoder"] == 2
    prof = profiles["autoregressive"]
    per_decode = {3: 4, 6: 7}
    timed = sum((50 + 5 + 1) * prof.at(n).inner_loops * per_decode[n] for n in (3, 6))
    # first untimed call at each length does not use inner loops
    timed -= sum((prof.at(n).inner_loops - 1) * per_decode[n] for n in (3, 6))
    assert ar.decoder.invocations == timed
    write_latency_csv(profiles, tmp_path / "lat.csv")
    assert (tmp_path / "lat.csv").read_text().splitlines()[0] == "mode,length,run,micros"


def test_bench_profile_fields(models, small_data):
    prof = bench_latency({"ctc": models["ctc"]}, small_data[0], lengths=(5, 10), runs=50, warmup=5)["ctc"]
    assert [s.length for s in prof.stats] == [5, 10]
    for s in prof.stats:
        assert s.runs == 50 and len(prof.samples[s.length]) == 50
        assert 0 < s.median <= s.p95
    assert prof.encode_micros > 0


def test_bench_validates_run_counts(models, small_data):
    with pytest.raises(ValueError, match="50"):
        bench_latency({"ctc": models["ctc"]}, small_data[0], lengths=(5,), runs=10)
    with pytest.raises(ValueError, match="warmup"):
        bench_latency({"ctc": models["ctc"]}, small_data[0], lengths=(5,), runs=50, warmup=1)


def test_sweep_csv_round_trip(tmp_path):
    rows = [X.SweepRow("a", 0, 0.5, 0.25, 0.75), X.SweepRow("a", 1, 0.7, 0.5, 0.8), X.SweepRow("b", 0, 0.1, 0, 0.2)]
    X.write_sweep_csv(rows, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "variant,seed,em_total,em_error,em_clean"
    assert X.read_sweep_csv(tmp_path / "s.csv") == rows
    means = X.mean_by_variant(rows)
    assert means["a"].em_total == pytest.approx(0.6)
    assert "variant" in X.summarize(rows)


def test_variant_tables():
    template = TrainConfig(model=ModelConfig(**SMALL))
    comp = X.comparison_variants(template)
    assert list(comp) == ["ctc_denoise", "ctc_no_noise", "mask_predict", "autoregressive"]
    assert comp["ctc_denoise"].noise.meta == "sampling"
    assert comp["ctc_no_noise"].noise.is_identity
    abl = X.ablation_variants(template)
    assert [c.noise.meta for c in abl.values()] == ["sampling", "single-del", "single-subs", "none"]
    alphas = X.alpha_variants(template, [1.1, 2])
    assert [c.model.alpha for c in alphas.values()] == [1.1, 2.0]
    with pytest.raises(ValueError):
        X.alpha_variants(template, [1.0])


def test_no_noise_run_matches_zero_probability_run(grammar):
    data = C.generate(grammar, {"train": 40, "valid": 10, "test": 10}, seed=2)
    base = TrainConfig(model=ModelConfig(**SMALL), schedule=ScheduleSpec(0.5, 1, 0.5, 3e-3, 3e-4), epochs=1,
                       batch_size=16)
    none = X.run_variants({"v": X._with_mode(base, "ctc", NoiseSpec(meta="none"))}, data, [0])
    zero = X.run_variants({"v": X._with_mode(base, "ctc", NoiseSpec(deletion_p=0.0, substitution_p=0.0))},
                          data, [0])
    assert none == zero


def test_ablation_small_run_is_reproducible(grammar):
    data = C.generate(grammar, {"train": 40, "valid": 10, "test": 10}, seed=2)
    base = TrainConfig(model=ModelConfig(**SMALL), schedule=ScheduleSpec(0.5, 1, 0.5, 3e-3, 3e-4), epochs=1,
                       batch_size=16, noise=NoiseSpec(deletion_p=0.3, substitution_p=0.5))
    a = X.denoise_ablation(base, data, seeds=[0])
    assert [r.variant for r in a] == ["sampling", "del_only", "subs_only", "no_noise"]
    assert a == X.denoise_ablation(base, data, seeds=[0])


def test_alpha_sweep_reports_em_and_latency(grammar):
    data = C.generate(grammar, {"train": 30, "valid": 10, "test": 10}, seed=2)
    base = TrainConfig(model=ModelConfig(**SMALL), schedule=ScheduleSpec(0.5, 1, 0.5, 3e-3, 3e-4), epochs=1,
                       batch_size=16)
    rows, profiles = X.alpha_sweep(base, data, [1.5, 3.0], bench_lengths=(5, 10))
    assert [r.variant for r in rows] == ["alpha=1.5", "alpha=3"]
    assert set(profiles) == {"alpha=1.5", "alpha=3"}
