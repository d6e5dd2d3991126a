import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ggmixer.data import Dataset, SyntheticSpec, generate_synthetic, window
from ggmixer.errors import ConfigError, ProtocolError
from ggmixer.evaluation import (ARCHITECTURES, AVERAGED, HORIZONS_MS, PER_FRAME, EvalProtocol,
                                ablation_suite, evaluate, guidance_probe, ms_to_frame,
                                per_frame_errors, report_from_errors, variant_config)
from ggmixer.graph import chain
from ggmixer.network import NetworkConfig, init_parameters
from ggmixer.training import TrainConfig


@pytest.fixture(scope="module")
def setup():
    cfg = NetworkConfig(joints=3, input_frames=8, output_frames=8, middle_blocks=2)
    seq = generate_synthetic(SyntheticSpec(skeleton=chain(3, 100.0), frames=60, seed=9))
    return cfg, window(seq, 8, 8, 2, "test")


class TestMsToFrame:
    @pytest.mark.parametrize("ms,frame", [(80, 2), (1000, 25), (40, 1), (160, 4), (320, 8), (560, 14)])
    def test_standard_horizons(self, ms, frame):
        assert ms_to_frame(ms, 25) == frame

    def test_beyond_output(self):
        with pytest.raises(ProtocolError):
            ms_to_frame(400, 25, max_frame=8)

    @pytest.mark.parametrize("ms", [0, -80])
    def test_nonpositive(self, ms):
        with pytest.raises(ProtocolError):
            ms_to_frame(ms)


class TestProtocol:
    def test_for_output_truncates(self):
        assert EvalProtocol.for_output(8).horizons == (80, 160, 320)
        assert EvalProtocol.for_output(25).horizons == HORIZONS_MS

    def test_bad_mode(self):
        with pytest.raises(ProtocolError):
            EvalProtocol("median")

    def test_unsorted_horizons(self):
        with pytest.raises(ProtocolError):
            EvalProtocol(PER_FRAME, (160, 80))


class TestEvaluate:
    def test_oracle_predictor(self, setup):
        cfg, ds = setup
        perfect = Dataset(ds.inputs, ds.targets)
        errors = per_frame_errors(perfect.targets, perfect.targets)
        for mode in (PER_FRAME, AVERAGED):
            rep = report_from_errors(errors, len(perfect), EvalProtocol.for_output(8, mode))
            assert rep.values == (0.0, 0.0, 0.0)

    def test_constant_error(self, setup):
        _, ds = setup
        offset = np.array([3.0, 0.0, 4.0])
        errors = per_frame_errors(ds.targets + offset, ds.targets)
        for mode in (PER_FRAME, AVERAGED):
            rep = report_from_errors(errors, len(ds), EvalProtocol.for_output(8, mode))
            np.testing.assert_allclose(rep.values, 5.0, atol=1e-12)

    def test_averaged_is_running_mean(self, setup):
        cfg, ds = setup
        model = init_parameters(cfg)
        hs = (40, 80, 120, 160, 200, 240, 280, 320)
        per = evaluate(model, ds, EvalProtocol(PER_FRAME, hs))
        avg = evaluate(model, ds, EvalProtocol(AVERAGED, hs))
        for k in range(len(hs)):
            assert abs(avg.values[k] - np.mean(per.values[:k + 1])) <= 1e-9

    def test_side_effect_free(self, setup):
        cfg, ds = setup
        model = init_parameters(cfg)
        before = model.checksum()
        a = evaluate(model, ds, EvalProtocol.for_output(8))
        b = evaluate(model, ds, EvalProtocol.for_output(8))
        assert a.values == b.values and a.to_csv() == b.to_csv()
        assert model.checksum() == before

    def test_horizon_beyond_output(self, setup):
        cfg, ds = setup
        with pytest.raises(ProtocolError):
            evaluate(init_parameters(cfg), ds, EvalProtocol(PER_FRAME, (80, 400)))

    def test_csv_columns(self, setup):
        cfg, ds = setup
        csv = evaluate(init_parameters(cfg), ds, EvalProtocol.for_output(8, AVERAGED)).to_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == "ms,frame,mpjpe_mm,protocol,samples"
        assert lines[1].startswith("80,2,") and lines[1].endswith(f",averaged,{len(ds)}")

    def test_probe_returns_both(self, setup):
        cfg, ds = setup
        normal, zeroed = guidance_probe(init_parameters(cfg), ds, EvalProtocol.for_output(8))
        assert normal.values != zeroed.values


@given(st.lists(st.floats(0, 1000), min_size=1, max_size=25))
@settings(max_examples=100, deadline=None)
def test_protocol_consistency_property(errors):
    errors = np.array(errors)
    t_f = len(errors)
    hs = tuple(1000.0 * f / 25 for f in range(1, t_f + 1))
    per = report_from_errors(errors, 1, EvalProtocol(PER_FRAME, hs))
    avg = report_from_errors(errors, 1, EvalProtocol(AVERAGED, hs))
    for k in range(t_f):
        assert abs(avg.values[k] - np.mean(per.values[:k + 1])) <= 1e-9


class TestAblation:
    def test_settings_and_architectures(self):
        base = NetworkConfig(joints=2, input_frames=4, output_frames=2)
        assert set(ARCHITECTURES) == {"no-interleave", "full-fuse", "all-SM", "all-TM"}
        assert variant_config(base, "all-TM", 3).layout == "all-TM"
        assert variant_config(base, "cd", 3).variant == "cd"
        with pytest.raises(ConfigError):
            variant_config(base, "xyz", 0)

    def test_suite_runs(self, setup):
        cfg, ds = setup
        result = ablation_suite(cfg, ds, ds, ["baseline", "abcdef", "all-SM"],
                                TrainConfig(iterations=3, batch_size=4), seeds=(0, 1))
        summary = result.summary()
        assert set(summary) == {"baseline", "abcdef", "all-SM"}
        assert len(summary["baseline"]["mpjpe_mm"]) == 2
        json.dumps(summary)
        assert len(result.final_horizon("abcdef")) == 2
        assert len(result.models["abcdef"]) == 2

    def test_unknown_setting_fails_before_training(self, setup):
        cfg, ds = setup
        with pytest.raises(ConfigError):
            ablation_suite(cfg, ds, ds, ["abcdef", "bogus"], TrainConfig(iterations=1))
