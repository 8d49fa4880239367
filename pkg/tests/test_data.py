import json
import logging

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from hapticfusion.data import (
    Dataset,
    Grasp,
    SplitCounts,
    SplitPlan,
    SyntheticConfig,
    compute_stats,
    convert_upstream,
    gen_synthetic,
    kinesthetic_mean,
    load_dataset,
    make_split,
    normalize,
    save_dataset,
    squeeze_profile,
    _class_latents,
)
from hapticfusion.errors import DatasetFormatError, InvalidArgumentError


@pytest.fixture(scope="module")
def full_sized():
    # 6 classes x 60 grasps, tiny frames: only the indexing matters here
    return gen_synthetic(SyntheticConfig(classes=6, grasps_per_class=60, frames=1, samples=3, noise=0.5, seed=0))


def _grasp(gid, label, tac_value=0.0, kin=None, frames=1, samples=3):
    tac = np.full((frames, 28, 50), float(tac_value))
    kin = np.zeros((samples, 4)) if kin is None else np.asarray(kin, dtype=float)
    return Grasp(gid, label, tac, kin)


# -- splits --------------------------------------------------------------------

def _sizes(plan, part):
    return [len(ix) for ix in getattr(plan, part)]


def test_bayesian_split_counts(full_sized):
    plan = make_split(full_sized, "bayesian", 3)
    assert _sizes(plan, "train") == [12] * 6
    assert _sizes(plan, "val") == [3] * 6
    assert _sizes(plan, "fusion_train") == [0] * 6
    assert _sizes(plan, "test") == [45] * 6


def test_neural_split_counts(full_sized):
    plan = make_split(full_sized, "neural", 3)
    assert _sizes(plan, "train") == [8] * 6
    assert _sizes(plan, "val") == [2] * 6
    assert _sizes(plan, "fusion_train") == [5] * 6
    assert _sizes(plan, "test") == [45] * 6


@pytest.mark.parametrize("protocol", ["bayesian", "neural"])
def test_split_parts_are_disjoint_and_class_pure(full_sized, protocol):
    plan = make_split(full_sized, protocol, 9)
    seen = []
    for part in ("train", "val", "fusion_train", "test"):
        for c, ix in enumerate(getattr(plan, part)):
            assert all(full_sized.grasps[i].label == c for i in ix)
            seen.extend(ix)
    assert len(seen) == len(set(seen)) == 6 * 60


def test_protocols_share_test_grasps(full_sized):
    for seed in range(5):
        assert make_split(full_sized, "bayesian", seed).test == make_split(full_sized, "neural", seed).test


def test_split_is_deterministic_and_seeded(full_sized):
    assert make_split(full_sized, "neural", 4) == make_split(full_sized, "neural", 4)
    assert make_split(full_sized, "neural", 4).test != make_split(full_sized, "neural", 5).test


def test_split_insufficient_grasps_names_requirement():
    ds = gen_synthetic(SyntheticConfig(classes=2, grasps_per_class=59, frames=1, samples=2, seed=0))
    with pytest.raises(InvalidArgumentError, match="60 grasps per class"):
        make_split(ds, "bayesian", 0)


def test_split_unknown_protocol(full_sized):
    with pytest.raises(InvalidArgumentError):
        make_split(full_sized, "majority", 0)


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 10), st.integers(2, 12), st.integers(0, 2**32 - 1),
    st.sampled_from(["bayesian", "neural"]), st.integers(0, 5),
)
def test_scaled_counts_cover_prescribed_sizes(test_n, pool, seed, protocol, extra):
    counts = SplitCounts(test=test_n, pool=pool, fusion=pool // 3, val_fraction=0.2)
    ds = gen_synthetic(SyntheticConfig(classes=3, grasps_per_class=test_n + pool + extra, frames=1, samples=1, seed=1))
    plan = make_split(ds, protocol, seed, counts)
    n_base = counts.base(protocol)
    for c in range(3):
        assert len(plan.test[c]) == test_n
        assert len(plan.val[c]) == counts.val(protocol)
        assert len(plan.train[c]) == n_base - counts.val(protocol)
        assert len(plan.fusion_train[c]) == (counts.fusion if protocol == "neural" else 0)
    flat = [i for part in ("train", "val", "fusion_train", "test") for i in plan.flat(part)]
    assert len(flat) == len(set(flat))


# -- normalisation ---------------------------------------------------------------

def _manual_plan(train, test):
    return SplitPlan("bayesian", 0, (tuple(train),), ((),), ((),), (tuple(test),))


def _kin_column(values):
    return np.column_stack([values, np.arange(len(values)), np.arange(len(values)) * 2.0, np.ones(len(values))])


def test_minmax_examples():
    ds = Dataset(
        (
            _grasp("a", 0, 0.0, _kin_column([0.0, 40.0, 100.0])),
            _grasp("b", 0, 100.0, _kin_column([10.0, 20.0, 30.0])),
            _grasp("c", 0, 50.0, _kin_column([50.0, 120.0, 300.0])),
        ),
        ("only",),
    )
    out = normalize(ds, _manual_plan([0, 1], [2]))
    npt.assert_array_equal(out.grasps[2].tactile, 0.5)
    npt.assert_allclose(out.grasps[2].kinesthetic[:, 0], [0.5, 1.2, 1.5])  # 300 -> 3.0 is clamped
    npt.assert_allclose(out.grasps[0].kinesthetic[:, 0], [0.0, 0.4, 1.0])
    assert out.normalization_stats.tactile_max == 100.0


def test_constant_column_maps_to_half_with_warning(caplog):
    ds = Dataset(
        (_grasp("a", 0, 1.0, _kin_column([1.0, 2.0, 3.0])), _grasp("b", 0, 3.0, _kin_column([4.0, 5.0, 6.0]))),
        ("only",),
    )
    with caplog.at_level(logging.WARNING):
        out = normalize(ds, _manual_plan([0], [1]))
    npt.assert_array_equal(out.grasps[1].kinesthetic[:, 3], 0.5)
    assert any("theta_2r" in w for w in out.normalization_stats.warnings)
    assert "theta_2r" in caplog.text


def test_normalize_does_not_mutate_input(full_sized):
    plan = make_split(full_sized, "bayesian", 0)
    before = full_sized.grasps[0].tactile.copy()
    normalize(full_sized, plan)
    npt.assert_array_equal(full_sized.grasps[0].tactile, before)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-1e6, 1e6))
def test_stats_ignore_test_grasps(seed, value):
    ds = gen_synthetic(SyntheticConfig(classes=2, grasps_per_class=60, frames=1, samples=3, noise=1.0, seed=2))
    plan = make_split(ds, "neural", seed)
    victim = plan.flat("test")[seed % 90]
    grasps = list(ds.grasps)
    g = grasps[victim]
    grasps[victim] = Grasp(g.grasp_id, g.label, np.full_like(g.tactile, abs(value)), np.full_like(g.kinesthetic, value))
    a = compute_stats(ds, plan.training_indices())
    b = normalize(Dataset(tuple(grasps), ds.class_names), plan).normalization_stats
    assert a.tactile_min == b.tactile_min and a.tactile_max == b.tactile_max
    assert a.kinesthetic_min.tobytes() == b.kinesthetic_min.tobytes()
    assert a.kinesthetic_max.tobytes() == b.kinesthetic_max.tobytes()


# -- canonical files ---------------------------------------------------------------

def _small():
    return gen_synthetic(SyntheticConfig(classes=2, grasps_per_class=3, frames=2, samples=5, noise=1.0, seed=4))


def test_round_trip_bit_exact(tmp_path):
    ds = _small()
    g = ds.grasps[0]
    g.kinesthetic[0, 0] = np.nextafter(1.0 / 3.0, 1.0)
    g.tactile[0, 0, 0] = 5e-324
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d" / "manifest.json")
    assert back.class_names == ds.class_names
    for a, b in zip(ds.grasps, back.grasps):
        assert (a.grasp_id, a.label) == (b.grasp_id, b.label)
        assert a.tactile.tobytes() == b.tactile.tobytes()
        assert a.kinesthetic.tobytes() == b.kinesthetic.tobytes()
    save_dataset(back, tmp_path / "e")
    for name in ("manifest.json", "tactile/c01_g001.csv", "kinesthetic/c02_g003.csv"):
        assert (tmp_path / "d" / name).read_bytes() == (tmp_path / "e" / name).read_bytes()


def test_manifest_two_classes_three_grasps(tmp_path):
    save_dataset(_small(), tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["class_names"] == ["object_01", "object_02"]
    assert len(load_dataset(tmp_path).grasps) == 6
    header = (tmp_path / "kinesthetic" / "c01_g001.csv").read_text().splitlines()[0]
    assert header == "theta_al,theta_ar,theta_2l,theta_2r"


def test_missing_file_names_grasp(tmp_path):
    save_dataset(_small(), tmp_path)
    (tmp_path / "tactile" / "c02_g002.csv").unlink()
    with pytest.raises(FileNotFoundError, match="c02_g002"):
        load_dataset(tmp_path / "manifest.json")


def test_frame_count_mismatch_is_format_error(tmp_path):
    ds = gen_synthetic(SyntheticConfig(classes=2, grasps_per_class=3, frames=20, samples=5, seed=0))
    save_dataset(ds, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["tactile_frames"] = 21
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetFormatError, match=r"\(560, 50\).*\(588, 50\)"):
        load_dataset(tmp_path / "manifest.json")


def test_unknown_label_is_format_error(tmp_path):
    save_dataset(_small(), tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["grasps"][0]["label"] = "teapot"
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetFormatError, match="teapot"):
        load_dataset(tmp_path / "manifest.json")


def test_bad_kinesthetic_header(tmp_path):
    save_dataset(_small(), tmp_path)
    path = tmp_path / "kinesthetic" / "c01_g001.csv"
    lines = path.read_text().splitlines()
    lines[0] = "a,b,c,d"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="header"):
        load_dataset(tmp_path)


def test_dataset_rejects_out_of_range_label():
    with pytest.raises(InvalidArgumentError):
        Dataset((_grasp("a", 2),), ("x", "y"))


@pytest.mark.parametrize("channel_last", [True, False])
def test_convert_upstream_bundle(tmp_path, channel_last):
    rng = np.random.default_rng(0)
    tac = rng.uniform(0, 200, size=(4, 3, 28, 50))
    kin = rng.normal(40, 10, size=(4, 6, 4))
    labels = np.array([1, 2, 1, 2])
    np.savez(
        tmp_path / "bundle.npz",
        tactile=np.moveaxis(tac, 1, 3) if channel_last else tac,
        kinesthetic=np.swapaxes(kin, 1, 2) if channel_last else kin,
        labels=labels,
    )
    manifest = convert_upstream(tmp_path / "bundle.npz", tmp_path / "out")
    ds = load_dataset(manifest)
    assert ds.n_classes == 2
    npt.assert_array_equal(ds.labels, labels - 1)
    npt.assert_array_equal(ds.grasps[2].tactile, tac[2])
    npt.assert_array_equal(ds.grasps[3].kinesthetic, kin[3])


def test_convert_rejects_unrecognised_shapes(tmp_path):
    np.savez(tmp_path / "b.npz", tactile=np.zeros((2, 3, 27, 50)), kinesthetic=np.zeros((2, 5, 4)), labels=[0, 1])
    with pytest.raises(DatasetFormatError):
        convert_upstream(tmp_path / "b.npz", tmp_path / "out")


# -- synthetic generator -------------------------------------------------------------

def test_noise_free_grasps_identical_within_class():
    ds = gen_synthetic(SyntheticConfig(classes=3, grasps_per_class=4, frames=3, samples=7, noise=0.0, seed=1))
    for ix in ds.indices_by_class():
        first = ds.grasps[ix[0]]
        for i in ix[1:]:
            npt.assert_array_equal(ds.grasps[i].tactile, first.tactile)
            npt.assert_array_equal(ds.grasps[i].kinesthetic, first.kinesthetic)


def test_generator_is_deterministic():
    cfg = SyntheticConfig(classes=3, grasps_per_class=5, frames=3, samples=7, noise=0.7, seed=12)
    a, b = gen_synthetic(cfg), gen_synthetic(cfg)
    for ga, gb in zip(a.grasps, b.grasps):
        assert ga.tactile.tobytes() == gb.tactile.tobytes()
        assert ga.kinesthetic.tobytes() == gb.kinesthetic.tobytes()
    c = gen_synthetic(SyntheticConfig(classes=3, grasps_per_class=5, frames=3, samples=7, noise=0.7, seed=13))
    assert a.grasps[0].kinesthetic.tobytes() != c.grasps[0].kinesthetic.tobytes()


def test_generator_shapes_and_pressure_sign():
    ds = gen_synthetic(SyntheticConfig(classes=2, grasps_per_class=2, frames=5, samples=9, noise=3.0, seed=0))
    for g in ds.grasps:
        assert g.tactile.shape == (5, 28, 50) and g.kinesthetic.shape == (9, 4)
        assert g.tactile.min() >= 0


@pytest.mark.parametrize(
    "cfg",
    [
        SyntheticConfig(classes=1),
        SyntheticConfig(noise=-0.1),
        SyntheticConfig(frames=0),
        SyntheticConfig(classes=2, stiffness=(0.5,)),
    ],
)
def test_invalid_generator_config(cfg):
    with pytest.raises(InvalidArgumentError):
        gen_synthetic(cfg)


def test_squeeze_profile_rises_then_releases():
    u = squeeze_profile(41)
    assert u[20] == 1 and u[0] < 0.05
    npt.assert_allclose(u, u[::-1], atol=1e-15)
    assert np.all(np.diff(u[:21]) > 0) and np.all(np.diff(u[20:]) < 0)
    assert squeeze_profile(1)[0] == 1 and np.all(squeeze_profile(2) == 0.5)


def test_plateau_angle_threshold_separates_stiffness():
    # noise-free class means fix the threshold; noisy grasps must fall on the right side
    cfg = SyntheticConfig(classes=2, grasps_per_class=200, frames=1, samples=21, noise=0.5, seed=3,
                          stiffness=(0.2, 0.9), size=(0.6, 0.6), inclusions=(0, 0))
    latents = _class_latents(cfg, np.random.default_rng(0))
    plateau = [kinesthetic_mean(lat, cfg.samples)[:, 0].max() for lat in latents]
    threshold = 0.5 * (plateau[0] + plateau[1])
    ds = gen_synthetic(cfg)
    soft_is_higher = plateau[0] > plateau[1]
    pred = np.array([int((g.kinesthetic[:, 0].max() > threshold) != soft_is_higher) for g in ds.grasps])
    assert np.mean(pred == ds.labels) >= 0.99
