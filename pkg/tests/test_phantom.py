import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrtherm import presets
from mrtherm.errors import ConfigError, DomainError
from mrtherm.phantom import build_phantom, load_phantom, realize_attenuation

from conftest import small_config


class TestBuildPhantom:
    def test_brain_like_four_tissue(self):
        ph = build_phantom(presets.get("volumetric")["phantom"])
        assert ph.grid.dims == (32, 32, 32)
        assert ph.num_tissues == 4
        for t in ph.tissues:
            assert (t.conductivity, t.perfusion, t.density, t.blood_specific_heat, t.specific_heat) == (
                0.527, 9.0, 1045.0, 3840.0, 3600.0)
        assert set(np.unique(ph.labels)) == {0, 1, 2, 3}

    def test_agar(self):
        ph = build_phantom(presets.get("agar")["phantom"])
        t = ph.tissues[0]
        assert (t.conductivity, t.perfusion, t.density, t.blood_specific_heat, t.specific_heat) == (
            0.6, 0.0, 1000.0, 0.0, 3900.0)
        assert ph.boundary.initial_temperature == 19.0

    def test_out_of_range_label(self):
        cfg = small_config(dims=(4, 4), tissues=2)
        labels = np.zeros((4, 4), dtype=int)
        labels[1, 2] = 2
        cfg["labels"] = labels.tolist()
        with pytest.raises(ConfigError, match="labels"):
            build_phantom(cfg)

    def test_partition_counts(self):
        ph = build_phantom(presets.get("volumetric")["phantom"])
        assert ph.tissue_volumes().sum() == ph.grid.size

    def test_missing_key_names_field(self):
        cfg = small_config()
        del cfg["laser"]["power"]
        with pytest.raises(ConfigError, match="laser.power"):
            build_phantom(cfg)

    def test_fiber_outside_domain(self):
        cfg = small_config()
        cfg["laser"]["position"] = [1.0, 1.0]
        with pytest.raises(ConfigError, match="outside"):
            build_phantom(cfg)

    def test_raw_label_file(self, tmp_path):
        labels = (np.arange(36) % 2).astype("<u1").reshape(6, 6)
        labels.tofile(tmp_path / "labels.raw")
        cfg = small_config(dims=(6, 6), tissues=2)
        cfg["labels"] = {"path": "labels.raw"}
        ph = build_phantom(cfg, base_dir=tmp_path)
        np.testing.assert_array_equal(ph.labels, labels)

    def test_yaml_round_trip(self, tmp_path):
        import yaml

        cfg = small_config(dims=(5, 5))
        (tmp_path / "ph.yaml").write_text(yaml.safe_dump(cfg))
        ph = load_phantom(tmp_path / "ph.yaml")
        assert ph.grid.dims == (5, 5)
        assert ph.laser.power_at(0.0) == 5.0

    def test_per_face_boundaries(self):
        cfg = small_config(boundary={"initial_temperature": 30.0, "faces": {
            "x-": {"kind": "neumann", "value": 0.0}, "y+": {"kind": "robin", "coefficient": 10.0}}})
        ph = build_phantom(cfg)
        assert ph.boundary.faces["x-"].kind == "neumann"
        assert ph.boundary.faces["y+"].coefficient == 10.0
        assert ph.boundary.faces["x+"].kind == "dirichlet"
        assert ph.boundary.faces["x+"].value == 30.0

    def test_unknown_face(self):
        cfg = small_config(boundary={"faces": {"z-": {"kind": "neumann"}}})
        with pytest.raises(ConfigError, match="z-"):
            build_phantom(cfg)

    def test_power_schedule(self):
        cfg = small_config()
        cfg["laser"]["power"] = [[0.0, 2.0], [5.0, 4.0]]
        cfg["laser"]["duration"] = 10.0
        laser = build_phantom(cfg).laser
        assert [laser.power_at(t) for t in (1.0, 6.0, 11.0)] == [2.0, 4.0, 0.0]
        assert laser.mean_power(4.0, 6.0) == pytest.approx(3.0)
        assert laser.mean_power(9.0, 11.0) == pytest.approx(2.0)

    def test_voxel_cap(self):
        with pytest.raises(ConfigError):
            build_phantom(small_config(dims=(64, 64)), voxel_cap=1000)


class TestRealizeAttenuation:
    def test_single_tissue_constant(self):
        field = realize_attenuation(np.zeros((3, 4), dtype=int), [200.0])
        assert np.all(field == 200.0)

    def test_four_tissue_values(self):
        ph = build_phantom(presets.get("volumetric")["phantom"])
        mu = (111.39, 218.75, 383.01, 385.96)
        field = realize_attenuation(ph.labels, mu)
        assert set(np.unique(field)) == set(mu)

    def test_two_voxels(self):
        np.testing.assert_array_equal(realize_attenuation(np.array([0, 1]), [1.0, 2.0]), [1.0, 2.0])

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            realize_attenuation(np.array([0]), [0.0])

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=40), st.randoms(use_true_random=False))
    @settings(max_examples=50, deadline=None)
    def test_permutation_equivariance(self, labels, rnd):
        labels = np.array(labels)
        mu = [10.0, 20.0, 30.0, 40.0]
        perm = list(range(len(labels)))
        rnd.shuffle(perm)
        np.testing.assert_array_equal(realize_attenuation(labels[perm], mu), realize_attenuation(labels, mu)[perm])
