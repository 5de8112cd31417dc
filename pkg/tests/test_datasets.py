import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twoblock.datasets import (SCENES, DataError, NormStats, ParseError, SceneTable, WindowSpec,
                               fit_norm, gen_mask, gen_masks, gen_synthetic_cv, leave_one_out,
                               load_scene, make_windows, round_half_away, window_set)
from twoblock.numkit import Rng


def write(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


def table(rows, scene="t"):
    a = np.array(rows, dtype=float).reshape(-1, 4)
    return SceneTable(scene, a[:, 0], a[:, 1], a[:, 2], a[:, 3])


def ped_rows(pid, first_step, n, frame_step=10):
    return [(frame_step * (first_step + i), pid, 0.1 * i, -0.2 * i) for i in range(n)]


def test_load_two_rows(tmp_path):
    t = load_scene(write(tmp_path / "a.txt", ["0 1 0.0 0.0", "10 1 1.0 0.0"]))
    assert len(t) == 2 and t.n_peds == 1


def test_load_empty_file_gives_no_windows(tmp_path):
    t = load_scene(write(tmp_path / "e.txt", []))
    assert len(t) == 0
    assert make_windows(t, WindowSpec(8, 12)) == []


def test_parse_error_reports_line(tmp_path):
    with pytest.raises(ParseError) as e:
        load_scene(write(tmp_path / "b.txt", ["0 1 0.0 0.0", "10 1 abc 0.0"]))
    assert e.value.lineno == 2


def test_comments_floats_and_sorting(tmp_path):
    t = load_scene(write(tmp_path / "c.txt", ["# header", "", "20.0 2.0 1.5 2.5", "10 1 0 0",
                                              "10\t2  3 4"]))
    np.testing.assert_array_equal(t.frame, [10, 10, 20])
    np.testing.assert_array_equal(t.ped, [1, 2, 2])


def test_duplicate_key_rejected(tmp_path):
    with pytest.raises(DataError, match="duplicate"):
        load_scene(write(tmp_path / "d.txt", ["0 1 0 0", "0 1 1 1"]))


@pytest.mark.parametrize("n,expected", [(20, 1), (19, 0), (23, 4)])
def test_window_counting(n, expected):
    assert len(make_windows(table(ped_rows(1, 0, n)), WindowSpec(8, 12, 1))) == expected


def test_two_pedestrians_two_windows():
    t = table(ped_rows(1, 0, 20) + ped_rows(2, 0, 20))
    ws = make_windows(t, WindowSpec(8, 12, 1))
    assert len(ws) == 2 and {w.agent_id for w in ws} == {1, 2}


def test_gap_breaks_windows():
    rows = ped_rows(1, 0, 10) + ped_rows(1, 11, 10) + ped_rows(9, 0, 25)  # ped 9 defines the axis
    ws = make_windows(table(rows), WindowSpec(8, 12, 1))
    assert {w.agent_id for w in ws} == {9}


def test_window_contents():
    rows = ped_rows(3, 0, 20)
    w = make_windows(table(rows), WindowSpec(8, 12))[0]
    np.testing.assert_array_equal(w.positions, [(r[2], r[3]) for r in rows[:8]])
    np.testing.assert_array_equal(w.future, [(r[2], r[3]) for r in rows[8:]])
    assert w.observed.all()


@given(st.integers(20, 60), st.integers(0, 10), st.integers(1, 6))
def test_doubling_stride_never_adds_windows(n, first, stride):
    t = table(ped_rows(1, first, n) + ped_rows(2, 0, first + n))
    a = len(make_windows(t, WindowSpec(8, 12, stride)))
    b = len(make_windows(t, WindowSpec(8, 12, 2 * stride)))
    assert b <= a


def test_round_half_away():
    assert [round_half_away(v) for v in (0.5, 1.5, 2.5, 6.4, -0.5)] == [1, 2, 3, 6, -1]


def test_mask_ratio_zero_all_observed():
    for T in (2, 8, 13):
        m, c = gen_mask(T, Rng(0), 0.0)
        assert m.all() and not c


def test_mask_ratio_point_eight():
    m, c = gen_mask(8, Rng(1), 0.8)
    assert (~m).sum() == 6 and m.sum() == 2 and not c


def test_mask_deterministic():
    a, _ = gen_masks(50, 8, Rng(5, 1))
    b, _ = gen_masks(50, 8, Rng(5, 1))
    np.testing.assert_array_equal(a, b)


def test_all_missing_clamped_and_flagged():
    m, c = gen_mask(8, Rng(0), 1.0)
    assert c and m.sum() == 1


@given(st.integers(2, 20), st.floats(0.0, 1.0), st.integers(0, 1000))
def test_mask_counts_exact(T, ratio, seed):
    m, c = gen_mask(T, Rng(seed), ratio)
    expected = min(round_half_away(ratio * T), T - 1)
    assert (~m).sum() == expected and m.any()
    assert c == (round_half_away(ratio * T) >= T)


def test_uniform_ratio_range():
    masks, _ = gen_masks(2000, 10, Rng(3))
    frac = (~masks).mean(axis=1)
    assert frac.min() >= 0.2 and frac.max() <= 0.8
    assert 0.45 < frac.mean() < 0.55


def test_norm_two_points():
    s = fit_norm([(0, 0), (2, 2)])
    np.testing.assert_array_equal(s.mean, [1, 1])
    np.testing.assert_array_equal(s.std, [1, 1])
    np.testing.assert_array_equal(s.apply([(0, 0), (2, 2)]), [(-1, -1), (1, 1)])


def test_norm_roundtrip_and_independent_stats():
    pts = np.random.default_rng(0).normal(3, 2, size=(500, 2))
    s = fit_norm(pts)
    # single-pass (Welford) oracle
    n, mean, m2 = 0, np.zeros(2), np.zeros(2)
    for p in pts:
        n += 1
        d = p - mean
        mean += d / n
        m2 += d * (p - mean)
    np.testing.assert_allclose(s.mean, mean, rtol=1e-12)
    np.testing.assert_allclose(s.std, np.sqrt(m2 / n), rtol=1e-12)
    x = np.random.default_rng(1).normal(size=(20, 2)) * 10
    np.testing.assert_allclose(s.invert(s.apply(x)), x, rtol=1e-12)
    back = NormStats.from_dict(s.to_dict())
    np.testing.assert_array_equal(back.mean, s.mean)
    np.testing.assert_array_equal(back.std, s.std)


def test_norm_degenerate_axis():
    with pytest.raises(DataError):
        fit_norm([(0, 1), (0, 2)])


def test_synthetic_zero_noise_exact_advance():
    s = gen_synthetic_cv(3, 4, 4, Rng(0), speed_range=(1, 1), heading_range=(0, 0),
                         meas_std=0.0, process_noise=0.0)
    d = np.diff(s.measurements, axis=1)
    np.testing.assert_allclose(d, np.broadcast_to([0.4, 0.0], d.shape), rtol=0, atol=1e-12)


def test_synthetic_reproducible():
    a = gen_synthetic_cv(20, 8, 8, Rng(9))
    b = gen_synthetic_cv(20, 8, 8, Rng(9))
    np.testing.assert_array_equal(a.measurements, b.measurements)
    np.testing.assert_array_equal(a.windows.future, b.windows.future)


def test_synthetic_mean_speed():
    s = gen_synthetic_cv(10_000, 2, 1, Rng(4), speed_range=(0.5, 1.5), process_noise=0.0)
    speed = np.hypot(s.states[:, 0, 2], s.states[:, 0, 3])
    assert abs(speed.mean() - 1.0) < 0.01


def _scene_dir(root):
    r = np.random.default_rng(0)
    for k, sc in enumerate(SCENES):
        lines = []
        for ped in range(3):
            start = r.integers(0, 5)
            for i in range(25):
                lines.append(f"{10 * (start + i)} {ped} {k * 100 + ped + 0.3 * i:.3f} {k - 0.1 * i:.3f}")
        d = root / sc
        d.mkdir()
        write(d / f"{sc}.txt", lines)
    return root


def test_leave_one_out_provenance(tmp_path):
    root = _scene_dir(tmp_path)
    split = leave_one_out(root, "zara2", WindowSpec(8, 8), WindowSpec(8, 8))
    assert "zara2" not in set(split.train.scene) and set(split.test.scene) == {"zara2"}
    # normalisation sees only training rows
    train_pts = np.concatenate([load_scene(root / s / f"{s}.txt").positions
                                for s in SCENES if s != "zara2"])
    np.testing.assert_allclose(split.norm.mean, train_pts.mean(axis=0), rtol=1e-12)
    assert "zara2" not in split.norm.source


def test_missing_data_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        leave_one_out(tmp_path, "eth", WindowSpec(), WindowSpec())


def test_window_set_empty():
    ws = window_set([table([])], WindowSpec(8, 8))
    assert len(ws) == 0 and ws.obs.shape == (0, 8, 2)
