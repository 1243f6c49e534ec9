from __future__ import annotations

import json

import numpy as np
import pytest
from conftest import CONFIGS
from hypothesis import given, settings
from hypothesis import strategies as st

from memorymamba.config import RunConfig, dumps_toml, load_config
from memorymamba.errors import ConfigurationError, ContractError, DataError
from memorymamba.metrics import csv_row, evaluate, read_csv, write_csv, write_report

TRUTHS = [0, 0, 1, 1, 2, 2]
PREDS = [0, 1, 1, 1, 2, 0]


class TestEvaluate:
    def test_hand_confusion_case(self):
        r = evaluate(PREDS, TRUTHS, 3)
        np.testing.assert_array_equal(r.confusion, [[1, 1, 0], [0, 2, 0], [1, 0, 1]])
        assert round(r.acc, 4) == 0.6667
        assert round(r.macro_prec, 4) == 0.7222
        assert round(r.macro_rec, 4) == 0.6667
        assert round(r.macro_f1, 4) == 0.6556
        assert [round(c["prec"], 4) for c in r.per_class] == [0.5, 0.6667, 1.0]
        assert [round(c["rec"], 4) for c in r.per_class] == [0.5, 1.0, 0.5]
        assert [round(c["f1"], 4) for c in r.per_class] == [0.5, 0.8, 0.6667]
        assert r.micro_rec == r.acc

    def test_all_correct(self):
        r = evaluate([0, 1, 2, 1], [0, 1, 2, 1], 3)
        assert (r.acc, r.macro_prec, r.macro_rec, r.macro_f1) == (1.0, 1.0, 1.0, 1.0)

    def test_all_wrong(self):
        r = evaluate([1, 0, 1, 0], [0, 1, 0, 1], 2)
        assert r.acc == 0.0 and r.macro_f1 == 0.0

    def test_absent_class_scores_zero(self):
        r = evaluate([0, 0], [0, 0], 2)
        assert r.per_class[1]["prec"] == 0.0 and r.macro_prec == 0.5

    def test_errors(self):
        with pytest.raises(ContractError):
            evaluate([0, 1], [0], 2)
        with pytest.raises(ContractError):
            evaluate([], [], 2)
        with pytest.raises(ContractError):
            evaluate([3], [0], 2)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 40))
    def test_properties(self, seed, k, n):
        r_ = np.random.default_rng(seed)
        y, p = r_.integers(0, k, n), r_.integers(0, k, n)
        rep = evaluate(p, y, k)
        perm = r_.permutation(n)
        again = evaluate(p[perm], y[perm], k)
        assert rep.to_dict() == again.to_dict()
        assert rep.acc == pytest.approx(np.trace(rep.confusion) / n)
        assert rep.macro_f1 <= 1.0
        diagonal = not np.any(rep.confusion - np.diag(np.diag(rep.confusion)))
        assert (rep.macro_f1 == 1.0) == (diagonal and np.all(np.diag(rep.confusion) > 0))


class TestReports:
    def test_csv_round_trip_exact(self, tmp_path):
        r = evaluate(PREDS, TRUTHS, 3)
        path = write_report(r, tmp_path / "r.csv", "csv", dataset="toy")
        assert read_csv(path) == [csv_row(r, "MemoryMamba", "toy")]
        row = read_csv(path)[0]
        assert (row["acc"], row["prec"], row["rec"], row["f1"]) == ("0.6667", "0.7222", "0.6667", "0.6556")
        write_csv(read_csv(path), tmp_path / "again.csv")
        assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()

    def test_structured_text(self, tmp_path):
        r = evaluate(PREDS, TRUTHS, 3)
        body = json.loads(write_report(r, tmp_path / "r.json", "structured-text").read_text())
        assert body["confusion"] == [[1, 1, 0], [0, 2, 0], [1, 0, 1]]
        assert body["macro"]["prec"] == r.macro_prec

    def test_rejects_empty(self, tmp_path):
        with pytest.raises(DataError):
            write_csv([], tmp_path / "x.csv")
        with pytest.raises(DataError):
            write_report(None, tmp_path / "x.csv")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ContractError):
            write_report(evaluate([0], [0], 2), tmp_path / "x", "xml")

    def test_io_failure(self, tmp_path):
        with pytest.raises(DataError):
            write_report(evaluate([0], [0], 2), tmp_path / "missing" / "x.csv")


class TestConfig:
    def test_shipped_configs_load(self):
        desk = load_config(CONFIGS / "desk.toml")
        paper = load_config(CONFIGS / "paper.toml")
        assert desk.model.image_size == 64 and desk.model.stage_dims == [48, 96]
        assert paper.optim.base_lr == 2e-5 and paper.optim.epochs == 10 and paper.optim.batch_size == 64

    def test_defaults_match_desk_model(self):
        m = RunConfig().model
        assert (m.image_size, m.stage_depths, m.stage_dims, m.state_dim) == (64, [2, 2], [48, 96], 8)
        assert (m.mem_coarse_size, m.mem_fine_size, m.head_hidden) == (4, 16, 128)

    def test_unknown_key_reports_line(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("[model]\nimage_size = 64\n\n[loss]\nlamda_c = 0.2\n")
        with pytest.raises(ConfigurationError, match=r"loss\.lamda_c.*line 5.*lambda_c"):
            load_config(path)

    def test_unknown_section(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("[modle]\nimage_size = 64\n")
        with pytest.raises(ConfigurationError, match="model"):
            load_config(path)

    def test_type_errors(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text('[variant]\nuse_cmn = "yes"\n')
        with pytest.raises(ConfigurationError, match="use_cmn"):
            load_config(path)

    def test_syntax_error(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("[model\n")
        with pytest.raises(ConfigurationError):
            load_config(path)

    @pytest.mark.parametrize(
        "section,values",
        [
            ("model", {"stage_dims": [96, 48]}),
            ("model", {"image_size": 60}),
            ("fusion", {"similarity": "dot"}),
            ("loss", {"delta": 1.0}),
            ("loss", {"hinge_form": "flipped"}),
            ("optim", {"warmup_fraction": 0.0}),
            ("block", {"dt_min": 0.5, "dt_max": 0.1}),
        ],
    )
    def test_invalid_values(self, section, values):
        with pytest.raises(ConfigurationError):
            RunConfig().replace(**{section: values})

    def test_dict_and_toml_round_trip(self, tmp_path):
        cfg = load_config(CONFIGS / "desk.toml").replace(variant={"use_fmn": False}, loss={"memory_similarity": "l2"})
        assert RunConfig.from_dict(cfg.to_dict()) == cfg
        path = tmp_path / "rt.toml"
        path.write_text(dumps_toml(cfg))
        assert load_config(path) == cfg
