"""Config loading, overrides, validation paths, and the input-density builder."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dsinkhorn.config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    build_instance,
    build_topology_from_spec,
    load_config_file,
    mixture_histograms,
    run_config_from_dict,
)


class TestLoadConfigFile:
    def test_reads_yaml(self, tmp_path):
        p = tmp_path / "cfg.yaml"
        p.write_text("problem:\n  d: 32\n  epsilon: 0.5\nseeds: [1, 2]\n")
        data = load_config_file(str(p))
        assert data["problem"]["d"] == 32
        assert data["seeds"] == [1, 2]

    def test_reads_json(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"comms": {"bits": 8}}))
        assert load_config_file(str(p))["comms"]["bits"] == 8

    def test_empty_file_is_empty_tree(self, tmp_path):
        p = tmp_path / "empty.yaml"
        p.write_text("")
        assert load_config_file(str(p)) == {}

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="config: cannot read"):
            load_config_file(str(tmp_path / "nope.yaml"))

    def test_invalid_yaml(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("problem: [unclosed\n")
        with pytest.raises(ConfigError, match="not valid YAML"):
            load_config_file(str(p))

    def test_non_mapping_top_level(self, tmp_path):
        p = tmp_path / "list.yaml"
        p.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError, match="top level must be a mapping"):
            load_config_file(str(p))


class TestApplyOverrides:
    def test_sets_nested_value(self):
        out = apply_overrides({"comms": {"delta": 1e-3}}, ["comms.delta=0.01"])
        assert out["comms"]["delta"] == 0.01

    def test_creates_missing_sections(self):
        out = apply_overrides({}, ["activation.mode=randomized_subset",
                                   "activation.p_active=0.5"])
        assert out["activation"] == {"mode": "randomized_subset", "p_active": 0.5}

    def test_values_parse_as_yaml(self):
        out = apply_overrides({}, ["comms.bits=unquantized", "seeds=[3, 4]",
                                   "channel.drop_prob=0.25"])
        assert out["comms"]["bits"] == "unquantized"
        assert out["seeds"] == [3, 4]
        assert out["channel"]["drop_prob"] == 0.25

    def test_original_tree_untouched(self):
        base = {"comms": {"delta": 1e-3}}
        apply_overrides(base, ["comms.delta=0.5"])
        assert base["comms"]["delta"] == 1e-3

    def test_missing_equals_sign(self):
        with pytest.raises(ConfigError, match="expected dotted.path=value"):
            apply_overrides({}, ["comms.delta"])

    def test_scalar_in_path(self):
        with pytest.raises(ConfigError, match="not a section"):
            apply_overrides({"seeds": [1]}, ["seeds.extra=2"])

    def test_empty_path_component(self):
        with pytest.raises(ConfigError, match="empty path component"):
            apply_overrides({}, ["comms..delta=1"])


class TestRunConfigValidation:
    def test_empty_tree_gives_defaults(self):
        cfg = run_config_from_dict({})
        assert cfg.problem.d == 64
        assert cfg.problem.epsilon == 0.1
        assert cfg.network.topology_kind == "grid2d"
        assert cfg.network.num_nodes == 16
        assert cfg.comms.bits == 16
        assert cfg.channel.drop_prob == 0.0
        assert cfg.activation.mode == "synchronous"
        assert cfg.seeds == (0, 1, 2, 3, 4)
        assert cfg.output_dir == "out"

    @pytest.mark.parametrize("tree, message", [
        ({"problem": {"epsilon": 0.0}}, r"problem\.epsilon: must be > 0"),
        ({"problem": {"epsilon": "fast"}}, r"problem\.epsilon: must be a number"),
        ({"problem": {"d": 1}}, r"problem\.d: must be >= 2"),
        ({"problem": {"d": 3.5}}, r"problem\.d: must be an integer"),
        ({"problem": {"ridge": -1e-3}}, r"problem\.ridge: must be >= 0"),
        ({"problem": {"cost_kind": "euclidean"}}, r"problem\.cost_kind"),
        ({"problem": {"cost_kind": "file"}}, r"problem\.cost_path: required"),
        ({"problem": {"turbo": True}}, r"problem\.turbo: unknown field"),
        ({"network": {"topology_kind": "ring", "params": {"n": 2}}}, r"network\.params"),
        ({"network": {"params": []}}, r"network\.params: must be a mapping"),
        ({"comms": {"delta": -0.5}}, r"comms\.delta: must be >= 0"),
        ({"comms": {"tau_inner": 0}}, r"comms\.tau_inner: must be > 0"),
        ({"comms": {"tau_inner": ".inf"}}, r"comms\.tau_inner: must be finite"),
        ({"comms": {"bits": 2.5}}, r"comms\.bits"),
        ({"comms": {"bits": 0}}, r"comms: bits must be an integer"),
        ({"comms": {"inner_step_cap": 0}}, r"comms\.inner_step_cap: must be >= 1"),
        ({"channel": {"drop_prob": 1.0}}, r"channel\.drop_prob: must be in \[0, 1\)"),
        ({"channel": {"drop_prob": -0.1}}, r"channel\.drop_prob: must be >= 0"),
        ({"channel": {"max_staleness": -1}}, r"channel\.max_staleness: must be >= 0"),
        ({"activation": {"p_active": 1.5}}, r"activation\.p_active: must be in \(0, 1\]"),
        ({"activation": {"p_active": 0.0}}, r"activation\.p_active: must be > 0"),
        ({"activation": {"mode": "roundrobin"}}, r"activation\.mode"),
        ({"seeds": []}, r"seeds: must be a nonempty list"),
        ({"seeds": ["a"]}, r"seeds: must be a nonempty list of integers"),
        ({"seeds": [True]}, r"seeds: must be a nonempty list of integers"),
        ({"output_dir": ""}, r"output_dir: must be a nonempty string"),
        ({"output_dir": 7}, r"output_dir: must be a nonempty string"),
        ({"typo_section": {}}, r"config\.typo_section: unknown field"),
        ({"comms": {"quantizer": 8}}, r"comms\.quantizer: unknown field"),
    ])
    def test_field_errors_name_the_path(self, tree, message):
        with pytest.raises(ConfigError, match=message):
            run_config_from_dict(tree)

    def test_bits_unquantized_sentinel(self):
        assert run_config_from_dict({"comms": {"bits": "unquantized"}}).comms.bits is None
        assert run_config_from_dict({"comms": {"bits": None}}).comms.bits is None

    def test_infinite_delta_spellings(self):
        for raw in ("inf", ".inf", "Infinity"):
            cfg = run_config_from_dict({"comms": {"delta": raw}})
            assert np.isinf(cfg.comms.delta)

    def test_non_square_custom_network(self):
        cfg = run_config_from_dict(
            {"network": {"topology_kind": "ring", "params": {"n": 7}}}
        )
        assert cfg.network.num_nodes == 7
        assert build_topology_from_spec(cfg.network).num_nodes == 7

    def test_seeds_tuple_accepted(self):
        assert run_config_from_dict({"seeds": (3, 4)}).seeds == (3, 4)


class TestResolvedDict:
    def test_round_trip_defaults(self):
        cfg = run_config_from_dict({})
        assert run_config_from_dict(cfg.resolved_dict()) == cfg

    def test_round_trip_sentinels(self):
        cfg = run_config_from_dict(
            {"comms": {"delta": ".inf", "bits": "unquantized"},
             "network": {"topology_kind": "complete", "params": {"n": 4}},
             "activation": {"mode": "randomized_subset", "p_active": 0.5}}
        )
        resolved = cfg.resolved_dict()
        assert resolved["comms"]["delta"] == ".inf"
        assert resolved["comms"]["bits"] == "unquantized"
        assert run_config_from_dict(resolved) == cfg

    def test_resolved_tree_is_json_serializable(self):
        cfg = run_config_from_dict({"comms": {"delta": "inf"}})
        text = json.dumps(cfg.resolved_dict())
        assert "Infinity" not in text  # the sentinel string survives, not the float


class TestMixtureHistograms:
    def test_deterministic(self):
        a = mixture_histograms(32, 3, density_seed=7)
        b = mixture_histograms(32, 3, density_seed=7)
        for ha, hb in zip(a, b):
            assert np.array_equal(ha.weights, hb.weights)

    def test_seed_changes_output(self):
        a = mixture_histograms(32, 1, density_seed=7)[0]
        b = mixture_histograms(32, 1, density_seed=8)[0]
        assert not np.allclose(a.weights, b.weights)

    def test_on_simplex(self):
        for h in mixture_histograms(48, 5, density_seed=3):
            assert h.weights.min() >= 0.0
            assert h.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_prefix_stable_in_agent_count(self):
        # agent k's histogram does not depend on how many agents follow it
        small = mixture_histograms(24, 3, density_seed=7)
        large = mixture_histograms(24, 6, density_seed=7)
        for hs, hl in zip(small, large):
            assert np.array_equal(hs.weights, hl.weights)

    def test_density_independent_of_grid(self):
        # the same continuous mixture discretized at two resolutions:
        # first moments must agree closely
        coarse = mixture_histograms(64, 4, density_seed=7)
        fine = mixture_histograms(512, 4, density_seed=7)
        for hc, hf in zip(coarse, fine):
            mean_c = float(np.linspace(0, 1, 64) @ hc.weights)
            mean_f = float(np.linspace(0, 1, 512) @ hf.weights)
            assert abs(mean_c - mean_f) < 2e-3


class TestBuildInstance:
    def test_default_grid_instance(self):
        cfg = run_config_from_dict({"problem": {"d": 16},
                                    "network": {"topology_kind": "complete",
                                                "params": {"n": 3}}})
        inst = build_instance(cfg)
        assert inst.support_size == 16
        assert inst.num_agents == 3
        assert inst.cost.max_entry == 1.0

    def test_cost_from_file(self, tmp_path):
        entries = np.abs(np.subtract.outer(np.arange(6.0), np.arange(6.0))) / 5.0
        path = tmp_path / "cost.npy"
        np.save(path, entries)
        cfg = run_config_from_dict(
            {"problem": {"d": 6, "cost_kind": "file", "cost_path": str(path)},
             "network": {"topology_kind": "complete", "params": {"n": 3}}}
        )
        inst = build_instance(cfg)
        assert_allclose(inst.cost.entries, entries)

    def test_cost_file_shape_mismatch(self, tmp_path):
        path = tmp_path / "cost.npy"
        np.save(path, np.zeros((4, 4)))
        cfg = run_config_from_dict(
            {"problem": {"d": 6, "cost_kind": "file", "cost_path": str(path)},
             "network": {"topology_kind": "complete", "params": {"n": 3}}}
        )
        with pytest.raises(ConfigError, match="expected shape"):
            build_instance(cfg)

    def test_agent_count_follows_topology(self):
        cfg = run_config_from_dict({})  # 4x4 grid
        assert build_instance(cfg).num_agents == 16
        assert build_topology_from_spec(cfg.network).num_nodes == 16
