import json
import math

import numpy as np
import pytest

from bouncenet.dataset import (DatasetManifest, GeneratorConfig, NormalizationStats,
                               TrajectoryFormatError, compute_normalization, config_hash,
                               generate_dataset, load_external_trajectory, normalize,
                               prepare_batch, prepare_sequence, read_trajectory_csv,
                               sample_scenario, scenario_seed, write_trajectory_csv)
from bouncenet.physics import SimConfig, lowest_point, initial_state
from bouncenet.records import HEAVY, LIGHT, Trajectory


def z_traj(z, **kw):
    z = np.asarray(z, dtype=float)
    return Trajectory(np.column_stack([np.zeros_like(z), np.zeros_like(z), z]), 24.0, **kw)


def test_sample_scenario_deterministic():
    assert sample_scenario(LIGHT, 42) == sample_scenario(LIGHT, 42)
    assert sample_scenario(LIGHT, 42) != sample_scenario(LIGHT, 43)


def test_light_ranges_audit():
    g = GeneratorConfig()
    for seed in range(1000):
        m = sample_scenario(LIGHT, seed, g).material
        assert g.light_restitution[0] <= m.restitution <= g.light_restitution[1]
        assert g.light_mass[0] <= m.mass <= g.light_mass[1]
        assert g.friction[0] <= m.friction_coeff <= g.friction[1]


def test_heavy_ranges_and_start_above_ground():
    g = GeneratorConfig()
    for seed in range(300):
        sc = sample_scenario(HEAVY, seed, g)
        assert g.heavy_restitution[0] <= sc.material.restitution <= g.heavy_restitution[1]
        assert g.heavy_mass[0] <= sc.material.mass <= g.heavy_mass[1]
        assert lowest_point(initial_state(sc), g.half_extent) > 0.0


def test_kinematics_label_independent():
    h, l = sample_scenario(HEAVY, 7), sample_scenario(LIGHT, 7)
    for name in ("initial_position", "initial_euler", "initial_linear_velocity",
                 "initial_angular_velocity"):
        assert getattr(h, name) == getattr(l, name)
    assert h.material != l.material


def test_invalid_label():
    with pytest.raises(ValueError):
        sample_scenario(2, 0)


def test_scenario_seeds_disjoint_across_splits():
    train = {scenario_seed(5, "train", lab, i) for lab in (0, 1) for i in range(500)}
    test = {scenario_seed(5, "test", lab, i) for lab in (0, 1) for i in range(500)}
    assert len(train) == 1000 and len(test) == 1000
    assert not train & test


def test_generate_small_corpus(tmp_path):
    m = generate_dataset(2, 2, 3, tmp_path / "d")
    assert m.counts == {"train": {0: 2, 1: 2}, "test": {0: 2, 1: 2}}
    files = sorted(p.relative_to(tmp_path / "d").as_posix() for p in (tmp_path / "d").rglob("*.csv"))
    assert len(files) == 8
    m.verify()
    loaded = DatasetManifest.load(tmp_path / "d")
    assert loaded.entries == m.entries and loaded.config_hash == m.config_hash
    assert loaded.config_hash == config_hash(GeneratorConfig(), SimConfig())
    train = loaded.load_split("train")
    assert sorted(t.label for t in train) == [0, 0, 1, 1]


def test_regeneration_byte_identical(tmp_path):
    generate_dataset(2, 1, 11, tmp_path / "a")
    generate_dataset(2, 1, 11, tmp_path / "b")
    for p in sorted((tmp_path / "a").rglob("*")):
        if p.is_file():
            q = tmp_path / "b" / p.relative_to(tmp_path / "a")
            assert p.read_bytes() == q.read_bytes(), p.name


def test_parallel_generation_matches_serial(tmp_path):
    generate_dataset(2, 1, 4, tmp_path / "s", workers=1)
    generate_dataset(2, 1, 4, tmp_path / "p", workers=2)
    for p in sorted((tmp_path / "s").rglob("*.csv")):
        assert p.read_bytes() == (tmp_path / "p" / p.relative_to(tmp_path / "s")).read_bytes()


def test_generate_rejects_zero_counts(tmp_path):
    with pytest.raises(ValueError):
        generate_dataset(0, 1, 1, tmp_path)


def test_manifest_verify_detects_missing_file(tmp_path):
    m = generate_dataset(1, 1, 2, tmp_path)
    (tmp_path / m.entries[0]["path"]).unlink()
    with pytest.raises(FileNotFoundError):
        m.verify()


def test_manifest_file_is_json(tmp_path):
    generate_dataset(1, 1, 2, tmp_path)
    d = json.loads((tmp_path / "manifest.json").read_text())
    assert {"counts", "config_hash", "frame_rate", "entries", "master_seed"} <= set(d)
    assert all({"path", "label", "seed", "split"} <= set(e) for e in d["entries"])


def test_csv_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    t = Trajectory(rng.normal(size=(30, 3)), 24.0, LIGHT, 99)
    write_trajectory_csv(t, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "frame,x,y,z"
    back = read_trajectory_csv(tmp_path / "t.csv", 24.0, LIGHT, 99)
    assert back == t


def test_external_three_columns(tmp_path):
    p = tmp_path / "track.csv"
    p.write_text("x,y,z\n" + "".join(f"{i * 0.1},{-i * 0.1},{1 - i * 0.01}\n" for i in range(50)))
    t = load_external_trajectory(p, 24.0)
    assert len(t) == 50 and not t.z_only
    assert t.samples[3, 2] == pytest.approx(0.97)


def test_external_z_only(tmp_path):
    p = tmp_path / "z.csv"
    p.write_text("\n".join(str(v) for v in (1.0, 0.8, 0.5, 0.1)) + "\n")
    t = load_external_trajectory(p, 30.0)
    assert t.z_only and t.frame_rate == 30.0
    np.testing.assert_array_equal(t.samples[:, :2], 0.0)
    np.testing.assert_array_equal(t.samples[:, 2], [1.0, 0.8, 0.5, 0.1])


@pytest.mark.parametrize("body,line", [("0,0,1\n0,0,NaN\n0,0,2\n", 2),
                                       ("0,0,1\n0,0,abc\n", 2),
                                       ("0,0,1\n0,0\n0,0,3\n", 2),
                                       ("0,0,1\n", None)])
def test_external_malformed(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(TrajectoryFormatError) as err:
        load_external_trajectory(p, 24.0)
    if line is not None:
        assert f":{line}:" in str(err.value)


def test_normalization_formula():
    stats = compute_normalization([z_traj([1, 2, 3])])
    assert stats.std[2] == pytest.approx(math.sqrt(2 / 3), abs=1e-12)
    assert stats.std[0] == 1e-8 and stats.std[1] == 1e-8


def test_normalization_constant_corpus_floored():
    t = Trajectory(np.ones((5, 3)), 24.0)
    assert compute_normalization([t, t]).std == (1e-8, 1e-8, 1e-8)


def test_normalization_empty():
    with pytest.raises(ValueError):
        compute_normalization([])


def test_normalization_scale_equivariance():
    rng = np.random.default_rng(1)
    trajs = [Trajectory(rng.normal(size=(20, 3)), 24.0) for _ in range(5)]
    scaled = [t.with_samples(t.samples * 10) for t in trajs]
    s1, s10 = compute_normalization(trajs), compute_normalization(scaled)
    np.testing.assert_allclose(s10.std, np.array(s1.std) * 10, rtol=1e-13)
    for a, b in zip(trajs, scaled):
        # equal up to the last bit of the ratio
        np.testing.assert_allclose(normalize(a, s1).samples, normalize(b, s10).samples, rtol=1e-13)


def test_normalize_division_only():
    t = z_traj([1, 2, 3])
    stats = NormalizationStats((1.0, 1.0, math.sqrt(2 / 3)))
    np.testing.assert_allclose(normalize(t, stats).samples[:, 2], [1.224745, 2.449490, 3.674235],
                               atol=1e-6)
    assert normalize(t, NormalizationStats.unit()) == t
    once = normalize(t, stats)
    assert normalize(once, NormalizationStats.unit()) == once


def test_stats_validation():
    with pytest.raises(ValueError):
        NormalizationStats((1.0, 0.0, 1.0))


def test_prepare_sequence_pad_truncate_project():
    t = Trajectory(np.arange(15, dtype=float).reshape(5, 3) + 1, 24.0)
    x, n = prepare_sequence(t, 8)
    assert x.shape == (8, 3) and n == 5
    np.testing.assert_array_equal(x[:5], t.samples)
    np.testing.assert_array_equal(x[5:], 0.0)

    long = Trajectory(np.random.default_rng(0).normal(size=(200, 3)), 24.0)
    x, n = prepare_sequence(long, 100)
    assert n == 100
    np.testing.assert_array_equal(x, long.samples[:100])

    z, n = prepare_sequence(long, 120, "z")
    assert z.shape == (120, 1)
    np.testing.assert_array_equal(z[:, 0], np.r_[long.samples[:120, 2], np.zeros(0)])
    with pytest.raises(ValueError):
        prepare_sequence(long, 0)


def test_prepare_batch_shapes():
    trajs = [z_traj(np.linspace(1, 0, n), label=n % 2) for n in (3, 9, 40)]
    X, L, y = prepare_batch(trajs, NormalizationStats.unit(), 16, "xyz")
    assert X.shape == (3, 16, 3)
    np.testing.assert_array_equal(L, [3, 9, 16])
    np.testing.assert_array_equal(y, [1, 1, 0])


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((1, 3)), 24.0)
    with pytest.raises(ValueError):
        Trajectory(np.array([[0, 0, np.inf], [0, 0, 0]]), 24.0)


def test_null_signal_config_shares_ranges():
    g = GeneratorConfig.null_signal()
    assert g.ranges_for(HEAVY) == g.ranges_for(LIGHT)
    assert config_hash(g, SimConfig()) != config_hash(GeneratorConfig(), SimConfig())
    assert GeneratorConfig.from_dict(g.to_dict()) == g
