import copy

import pytest

from odchain.errors import ConfigurationError
from odchain.scenario import (
    EstimationConfig,
    NoiseFractions,
    PerturbationSpec,
    load_scenario,
    packaged_scenario_path,
    parse_minutes,
    scenario_from_mapping,
)

INLINE_CORRIDOR = {
    "name": "corridor",
    "seed": 7,
    "time_grid": {"start": 0, "interval_minutes": 15, "n_intervals": 12},
    "network": {
        "zones": [{"id": "a"}, {"id": "b", "kind": "work"}],
        "links": [
            {"label": "1", "from": "a", "to": "b", "free_flow_time": 8.0, "capacity": 2000},
        ],
        "paths": {"a-b": ["1a"], "b-a": ["1b"]},
        "detectors": ["1a", "1b"],
    },
    "legs": [
        {"name": "out", "total": 900, "od_split": {"a-b": 1.0},
         "schedule": {"preferred_arrival": "00:45", "logit_scale": 0.05}},
        {"name": "back", "total": 900, "od_split": {"b-a": 1.0},
         "schedule": {"preferred_arrival": 150, "logit_scale": 0.05}, "feeds": ["out"]},
    ],
    "perturbation": {"mode": "uniform_scale", "scale": 0.2},
    "estimation": {"cutoff": 90, "prediction_intervals": 2},
    "models": ["seed", "kf", "pkf", "spkf"],
}


class TestParseMinutes:
    def test_clock_string(self):
        assert parse_minutes("08:00") == 480.0
        assert parse_minutes("18:30") == 1110.0

    def test_plain_number(self):
        assert parse_minutes(37) == 37.0
        assert parse_minutes(12.5) == 12.5

    def test_rejects_garbage(self):
        for bad in ("8", "a:b", "10:75", None, [1]):
            with pytest.raises(ConfigurationError):
                parse_minutes(bad)


class TestSpecs:
    def test_perturbation_mode_checked(self):
        with pytest.raises(ConfigurationError):
            PerturbationSpec(mode="quadratic")

    def test_perturbation_scale_floor(self):
        with pytest.raises(ConfigurationError):
            PerturbationSpec(scale=-1.0)

    def test_perturbation_noise_range(self):
        with pytest.raises(ConfigurationError):
            PerturbationSpec(mode="scale_plus_noise", noise=1.0)

    def test_noise_fractions_positive(self):
        with pytest.raises(ConfigurationError):
            NoiseFractions(process=0.0)

    def test_prediction_intervals_floor(self):
        with pytest.raises(ConfigurationError):
            EstimationConfig(cutoff_minute=720.0, prediction_intervals=0)


class TestPackagedToy:
    def test_loads_clean(self, toy_cfg):
        assert toy_cfg.name == "toy"
        assert toy_cfg.seed == 20260825
        assert toy_cfg.grid.n_intervals == 96
        assert toy_cfg.cutoff_index == 48  # noon on a 15-minute grid
        assert toy_cfg.models == ("seed", "kf", "pkf", "spkf")
        assert toy_cfg.validate() == []

    def test_chain_shape(self, toy_cfg):
        chain = toy_cfg.chain()
        assert set(chain.roots()) == {"hw_direct", "hw_leisure"}
        assert chain.feeds["work_home"] == ("hw_direct",)
        assert chain.feeds["leisure_home"] == ("work_leisure",)

    def test_leg_totals(self, toy_cfg):
        assert toy_cfg.leg_def("hw_direct").total == 20000.0
        assert toy_cfg.leg_def("work_leisure").total == 6000.0
        with pytest.raises(ConfigurationError):
            toy_cfg.leg_def("nope")

    def test_commute_capacity_override_applied(self, toy_cfg):
        assert toy_cfg.network.links["4a"].capacity == 11000.0
        assert toy_cfg.network.links["7a"].capacity == 4000.0


class TestValidate:
    def test_unknown_model_flagged(self, toy_doc):
        toy_doc["models"] = ["seed", "warp"]
        cfg = scenario_from_mapping(toy_doc)
        assert any("warp" in p for p in cfg.validate())

    def test_cutoff_outside_grid_flagged(self, toy_doc):
        toy_doc["estimation"]["cutoff"] = "25:00"
        cfg = scenario_from_mapping(toy_doc)
        assert any("cutoff" in p for p in cfg.validate())

    def test_missing_path_flagged(self, toy_doc):
        toy_doc["legs"][0]["od_split"] = {"1-5": 1.0}  # no such path in the toy net
        cfg = scenario_from_mapping(toy_doc)
        assert any("no path" in p for p in cfg.validate())

    def test_unchainable_arrivals_flagged(self, toy_doc):
        # drop zone 4's return ODs: hw_direct arrivals at 4 become orphans
        toy_doc["legs"][2]["od_split"] = {"3-1": 0.5, "3-2": 0.5}
        cfg = scenario_from_mapping(toy_doc)
        assert any("no outgoing OD" in p for p in cfg.validate())

    def test_unknown_feeder_flagged(self, toy_doc):
        toy_doc["legs"][2]["feeds"] = ["ghost"]
        cfg = scenario_from_mapping(toy_doc)
        assert any("ghost" in p for p in cfg.validate())

    def test_duplicate_leg_flagged(self, toy_doc):
        toy_doc["legs"].append(copy.deepcopy(toy_doc["legs"][0]))
        cfg = scenario_from_mapping(toy_doc)
        assert any("duplicate" in p for p in cfg.validate())


class TestMappingErrors:
    def test_split_must_sum_to_one(self, toy_doc):
        toy_doc["legs"][0]["od_split"]["1-3"] = 0.5
        with pytest.raises(ConfigurationError):
            scenario_from_mapping(toy_doc)

    def test_no_legs(self, toy_doc):
        toy_doc["legs"] = []
        with pytest.raises(ConfigurationError):
            scenario_from_mapping(toy_doc)

    def test_unknown_schedule_key(self, toy_doc):
        toy_doc["legs"][0]["schedule"]["lunch_break"] = 30
        with pytest.raises(ConfigurationError):
            scenario_from_mapping(toy_doc)

    def test_unknown_noise_key(self, toy_doc):
        toy_doc["noise"]["wobble"] = 0.1
        with pytest.raises(ConfigurationError):
            scenario_from_mapping(toy_doc)

    def test_unknown_preset(self, toy_doc):
        toy_doc["network"] = {"preset": "manhattan"}
        with pytest.raises(ConfigurationError):
            scenario_from_mapping(toy_doc)

    def test_non_mapping_document(self):
        with pytest.raises(ConfigurationError):
            scenario_from_mapping(["not", "a", "mapping"])

    def test_bad_od_key(self, toy_doc):
        toy_doc["legs"][0]["od_split"] = {"1_3": 1.0}
        with pytest.raises(ConfigurationError):
            scenario_from_mapping(toy_doc)


class TestInlineNetwork:
    def test_builds_and_validates(self):
        cfg = scenario_from_mapping(copy.deepcopy(INLINE_CORRIDOR))
        assert cfg.validate() == []
        assert set(cfg.network.links) == {"1a", "1b"}
        assert cfg.network.od_index == (("a", "b"), ("b", "a"))

    def test_zone_id_with_dash_rejected(self):
        doc = copy.deepcopy(INLINE_CORRIDOR)
        doc["network"]["zones"][0]["id"] = "a-1"
        with pytest.raises(ConfigurationError):
            scenario_from_mapping(doc)

    def test_runs_end_to_end(self):
        """A non-toy network through the whole pipeline: the chained filters
        must beat the uncorrected seed on this single corridor."""
        from odchain.experiment import run_experiment

        cfg = scenario_from_mapping(copy.deepcopy(INLINE_CORRIDOR))
        report = run_experiment(cfg)
        rows = {r.model: r for r in report.rows}
        assert all(r.status == "ok" for r in report.rows)
        assert rows["pkf"].rmse_od < rows["seed"].rmse_od
        assert rows["kf"].impr_link_pct > 0.0


class TestFiles:
    def test_packaged_path_exists(self):
        assert packaged_scenario_path("toy").exists()

    def test_missing_file_raises_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_scenario(tmp_path / "ghost.scenario")

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "broken.scenario"
        path.write_text("name: [unclosed\n")
        with pytest.raises(ConfigurationError):
            load_scenario(path)
