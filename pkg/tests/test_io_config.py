import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mhsaem import io
from mhsaem.config import (GenerateConfig, SweepConfig, TrainConfig, build, merge, read_document)
from mhsaem.diagnostics import IterationRecord
from mhsaem.errors import ValidationError
from mhsaem.model import MixtureParams
from mhsaem.schedules import Schedule
from mhsaem.trainers import TrainerConfig, default_init, run

from conftest import random_flow_mixture, random_gaussian_mixture

finite = st.floats(-1e300, 1e300, allow_nan=False, allow_infinity=False)


class TestCheckpoint:
    def test_gaussian_round_trip(self, tmp_path, rng):
        theta = random_gaussian_mixture(rng, 4, 3)
        io.save_checkpoint(theta, tmp_path / "c.json")
        back = io.load_checkpoint(tmp_path / "c.json")
        assert back.family_id == "gaussian" and back.dim == 3
        assert np.array_equal(back.nu, theta.nu) and np.array_equal(back.components, theta.components)

    def test_flow_round_trip(self, tmp_path, rng):
        theta = random_flow_mixture(rng, 2, 2)
        io.save_checkpoint(theta, tmp_path / "c.json")
        assert np.array_equal(io.load_checkpoint(tmp_path / "c.json").components, theta.components)

    @settings(max_examples=50)
    @given(st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=6, max_size=6))
    def test_bit_exact_any_finite(self, nu, comps):
        theta = MixtureParams(np.array(nu[:3]), np.array(comps).reshape(3, 2), "gaussian", 1)
        doc = json.loads(json.dumps(io.theta_to_dict(theta)))
        back = io.theta_from_dict(doc)
        assert back.nu.tobytes() == theta.nu.tobytes()
        assert back.components.tobytes() == theta.components.tobytes()

    def test_document_fields(self, rng):
        doc = io.theta_to_dict(random_gaussian_mixture(rng, 2, 1))
        assert set(doc) == {"family_id", "K", "D", "nu", "components"}

    def test_bad_documents(self):
        with pytest.raises(ValidationError):
            io.theta_from_dict({"family_id": "gaussian", "K": 1, "D": 1, "nu": [0.0]})
        with pytest.raises(ValidationError):
            io.theta_from_dict({"family_id": "gaussian", "K": 2, "D": 1, "nu": [0.0],
                                "components": [[0.0, 0.0]]})


class TestRunState:
    @pytest.mark.parametrize("alg,proposal,m_step", [("mhsaem", "tf", "suffstats"),
                                                      ("mhsaem", "u", "gradient"),
                                                      ("em", "u", "suffstats")])
    def test_round_trip(self, tmp_path, rng, alg, proposal, m_step):
        X = rng.normal(size=(40, 2))
        cfg = TrainerConfig(alg, B=10, M=2, T=5, proposal=proposal, m_step=m_step, optimizer="adam")
        res = run(cfg, "gaussian", X, default_init("gaussian", 3, 2, 0))
        io.save_state(res.state, tmp_path / "s.json", {"note": 1})
        back, conf = io.load_state(tmp_path / "s.json")
        assert conf == {"note": 1} and back.t == 5 and back.elapsed == res.state.elapsed
        for name in ("stats", "chain", "proposal", "adam"):
            a, b = getattr(res.state, name), getattr(back, name)
            assert (a is None) == (b is None)
            if a is None:
                continue
            for field, val in vars(a).items():
                if isinstance(val, np.ndarray):
                    assert np.array_equal(val, getattr(b, field)), (name, field)
                    assert val.dtype == getattr(b, field).dtype
                else:
                    assert val == getattr(b, field)

    def test_version_checked(self, tmp_path, rng):
        X = rng.normal(size=(20, 1))
        res = run(TrainerConfig("em", T=1), "gaussian", X, default_init("gaussian", 2, 1, 0))
        doc = io.state_to_dict(res.state)
        doc["version"] = 99
        with pytest.raises(ValidationError):
            io.state_from_dict(doc)


class TestDataAndMetrics:
    def test_data_round_trip(self, tmp_path, rng):
        X = rng.normal(size=(30, 3)) * 1e-3
        labels = rng.integers(1, 5, 30)
        io.write_data(tmp_path / "a.csv", X, labels)
        io.write_data(tmp_path / "b.csv", X)
        Xa, la = io.read_data(tmp_path / "a.csv")
        Xb, lb = io.read_data(tmp_path / "b.csv")
        assert Xa.tobytes() == X.tobytes() and Xb.tobytes() == X.tobytes()
        assert np.array_equal(la, labels) and lb is None

    @pytest.mark.parametrize("text", ["", "1,2\n3\n", "1,nan\n", "1,abc\n"])
    def test_bad_data(self, tmp_path, text):
        p = tmp_path / "bad.csv"
        p.write_text(text)
        with pytest.raises(ValidationError):
            io.read_data(p)

    def test_metrics_round_trip(self, tmp_path):
        recs = [IterationRecord(1, 0.25, -3.5, None, 1e-3, 12, 0.1, 1.0),
                IterationRecord(2, 0.5, None, 0.125, None, 0, 1.0, 0.05)]
        io.write_metrics(tmp_path / "m.csv", recs)
        back = io.read_metrics(tmp_path / "m.csv")
        assert [r.as_row() for r in back] == [r.as_row() for r in recs]
        io.write_metrics(tmp_path / "n.csv", recs, include_time=False)
        assert all(r.wall_time_s is None for r in io.read_metrics(tmp_path / "n.csv"))
        assert (tmp_path / "m.csv").read_text().splitlines()[0] == \
            "t,wall_time_s,loglik,aar,bias,eval_count,beta,gamma"

    def test_bad_metrics_header(self, tmp_path):
        (tmp_path / "m.csv").write_text("a,b\n")
        with pytest.raises(ValidationError):
            io.read_metrics(tmp_path / "m.csv")

    def test_timing_round_trip(self, tmp_path):
        recs = [IterationRecord(1, 0.1), IterationRecord(2, None)]
        io.write_timing(tmp_path / "t.csv", recs)
        assert io.read_timing(tmp_path / "t.csv") == {1: 0.1, 2: None}


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig(seed=1)
        tc = cfg.trainer_config()
        assert tc.schedule == Schedule("piecewise", 0.05, 50, 0.6)
        assert tc.anneal is not None and tc.anneal.beta_min == 0.1 and tc.anneal.beta_max == 1.2
        assert tc.accelerate is True and tc.seed == 1

    def test_unknown_and_missing_fields(self):
        with pytest.raises(ValidationError):
            build(TrainConfig, {"seed": 1, "bogus": 2})
        with pytest.raises(ValidationError):
            build(TrainConfig, {"K": 3})
        with pytest.raises(ValidationError):
            build(GenerateConfig, {"seed": 1, "omega": 1.5})

    def test_merge_nested_flags(self):
        doc = merge({"seed": 1, "schedule": {"kind": "constant"}},
                    {"schedule__value": 0.3, "K": None, "anneal__enabled": False})
        assert doc == {"seed": 1, "schedule": {"kind": "constant", "value": 0.3},
                       "anneal": {"enabled": False}}
        cfg = build(TrainConfig, doc).trainer_config()
        assert cfg.schedule(7) == 0.3 and cfg.anneal is None

    def test_read_document(self, tmp_path):
        (tmp_path / "a.yaml").write_text("seed: 3\nschedule:\n  kind: constant\n")
        (tmp_path / "b.json").write_text('{"seed": 4}')
        (tmp_path / "c.yaml").write_text("- 1\n- 2\n")
        assert read_document(tmp_path / "a.yaml")["schedule"] == {"kind": "constant"}
        assert read_document(tmp_path / "b.json") == {"seed": 4}
        with pytest.raises(ValidationError):
            read_document(tmp_path / "c.yaml")

    def test_sweep_config(self):
        cfg = build(SweepConfig, {"seed": 2, "data": {"N": 100}, "train": {"T": 5}})
        assert cfg.data.seed == 2 and cfg.data.N == 100
        with pytest.raises(ValidationError):
            build(SweepConfig, {"seed": 2, "train": {"K": 5}})
        with pytest.raises(ValidationError):
            build(SweepConfig, {"seed": 2, "train": {"nonsense": 5}})
