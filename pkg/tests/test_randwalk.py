import math

import pytest

from coarselab import randwalk as rw
from coarselab import sublinear
from coarselab.errors import DomainError, Inconclusive
from coarselab.space import FreeGroupSpace, FreeProductSpace, GridSpace

KLOG = sublinear.by_tag("log")


@pytest.fixture(scope="module")
def f2_paths(f2):
    return rw.sample_paths(f2, rw.uniform_generator_measure(f2), 256, 60,
                           seed=5)


# ---------------------------------------------------------------------------
# step measures

def test_step_measure_validation():
    with pytest.raises(DomainError):
        rw.StepMeasure(())
    with pytest.raises(DomainError):
        rw.StepMeasure((((1,), 0.5), ((2,), 0.6)))
    with pytest.raises(DomainError):
        rw.StepMeasure((((1,), -0.5), ((2,), 1.5)))
    mu = rw.StepMeasure.uniform([(1,), (-1,)])
    assert mu.support == (((1,), 0.5), ((-1,), 0.5))


def test_identity_in_support_is_rejected(f2):
    with pytest.raises(DomainError):
        rw.sample_paths(f2, rw.StepMeasure.point_mass(()), 8, 1, seed=0)


def test_non_generator_support_is_spelled_out(f2):
    # steps by a^2 are legal: each one pushes two letters
    mu = rw.StepMeasure.point_mass((1, 1))
    p = rw.sample_paths(f2, mu, 10, 1, seed=0)[0]
    assert p.positions_at({10})[10] == (1,) * 20


# ---------------------------------------------------------------------------
# sample paths

def test_paths_are_deterministic_and_replayable(f2):
    mu = rw.uniform_generator_measure(f2)
    a = rw.sample_paths(f2, mu, 128, 5, seed=9)
    b = rw.sample_paths(f2, mu, 128, 5, seed=9)
    for pa, pb in zip(a, b):
        assert pa.seed == pb.seed
        assert pa.positions_at({1, 64, 128}) == pb.positions_at({1, 64, 128})
        assert pa.stats() == pb.stats()
    # distinct indices get distinct streams
    assert a[0].seed != a[1].seed


def test_point_mass_walk_is_the_axis(f2):
    p = rw.sample_paths(f2, rw.StepMeasure.point_mass((1,)), 32, 1, seed=0)[0]
    assert p.positions_at({32})[32] == (1,) * 32
    s = p.stats()
    assert all(s.norms[k] == k for k in s.checkpoints)


def test_norm_bounded_by_step_count(f2_paths):
    for s in rw.ensemble_stats(f2_paths):
        for k in s.checkpoints:
            assert s.norms[k] <= k


def test_ensemble_stats_identical_across_jobs(f2_paths):
    one = rw.ensemble_stats(f2_paths, jobs=1)
    two = rw.ensemble_stats(f2_paths, jobs=2)
    assert one == two


def test_positions_beyond_length_rejected(f2_paths):
    with pytest.raises(DomainError):
        f2_paths[0].positions_at({512})


def test_sample_paths_validation(f2):
    mu = rw.uniform_generator_measure(f2)
    with pytest.raises(DomainError):
        rw.sample_paths(f2, mu, 0, 3, seed=0)
    with pytest.raises(DomainError):
        rw.sample_paths(f2, mu, 8, 0, seed=0)


# ---------------------------------------------------------------------------
# drift

def test_drift_free_group_near_half(f2_paths):
    rep = rw.drift(f2_paths)
    assert 0.45 <= rep.ell <= 0.55
    assert rep.ci[0] <= rep.ell <= rep.ci[1]
    assert rep.subadditive
    assert rep.dyadic_means[-1][0] == 256


def test_drift_point_mass_is_one(f2):
    paths = rw.sample_paths(f2, rw.StepMeasure.point_mass((1,)), 64, 30,
                            seed=0)
    rep = rw.drift(paths)
    assert rep.ell == 1.0
    assert rep.ci == (1.0, 1.0)


def test_drift_needs_thirty_paths(f2):
    paths = rw.sample_paths(f2, rw.uniform_generator_measure(f2), 16, 5,
                            seed=0)
    with pytest.raises(DomainError):
        rw.drift(paths)


# ---------------------------------------------------------------------------
# progress tails

def test_progress_tail_free_group_decays(f2_paths):
    rows, v = rw.progress_tail(f2_paths, 0.5, 0.5)
    assert v
    assert rows[-1][1] == 0.0


def test_progress_tail_grid_is_diffusive(z2):
    paths = rw.sample_paths(z2, rw.uniform_generator_measure(z2), 256, 60,
                            seed=5)
    _, v = rw.progress_tail(paths, 0.5, 0.5)
    assert not v


def test_progress_tail_without_failures_passes(f2):
    paths = rw.sample_paths(f2, rw.StepMeasure.point_mass((1,)), 64, 30,
                            seed=0)
    rows, v = rw.progress_tail(paths, 1.0, 0.5)
    assert v
    assert all(p == 0.0 for _, p in rows)


def test_progress_tail_rejects_bad_fraction(f2_paths):
    with pytest.raises(DomainError):
        rw.progress_tail(f2_paths, 0.5, 1.5)


# ---------------------------------------------------------------------------
# peripheral statistics

def test_mann_kendall_direction():
    assert rw.mann_kendall_increasing([1, 2, 3, 4, 5, 6, 7]) < 0.05
    assert rw.mann_kendall_increasing([7, 6, 5, 4, 3, 2, 1]) > 0.5
    assert rw.mann_kendall_increasing([1, 2]) == 1.0


def test_peripheral_growth_uniform_walk_is_logarithmic(zz):
    paths = rw.sample_paths(zz, rw.uniform_generator_measure(zz), 1024, 80,
                            seed=2)
    rows, v = rw.peripheral_projection_growth(paths, lo=2 ** 5, hi=2 ** 10)
    assert v
    assert [k for k, _ in rows] == [32, 64, 128, 256, 512, 1024]


def test_peripheral_growth_coset_trapped_walk_fails(zz):
    grid_mu = rw.StepMeasure.uniform([g for g in zz.gens if g[0] == 0])
    paths = rw.sample_paths(zz, grid_mu, 1024, 80, seed=2)
    _, v = rw.peripheral_projection_growth(paths, lo=2 ** 5, hi=2 ** 10)
    assert not v
    assert v.parameters["p_value"] <= 0.05


def test_peripheral_growth_needs_relhyp(f2_paths):
    with pytest.raises(DomainError):
        rw.peripheral_projection_growth(f2_paths, lo=2, hi=256)


# ---------------------------------------------------------------------------
# limit-ray proxies and tracking

def test_proxy_point_mass_rides_the_free_axis(zz):
    p = rw.sample_paths(zz, rw.StepMeasure.point_mass((1, (1,))), 64, 1,
                        seed=0)[0]
    proxy = rw.limit_ray_proxy(zz, p)
    assert proxy.constants == (1, 0)
    assert proxy.horizon == 64
    assert len(proxy.path_seg) - 1 == 64
    assert all(i == 1 for i, _ in proxy.path_seg.step_letters())


def test_proxy_inconclusive_when_coned_progress_is_tiny(zz):
    trapped = rw.sample_paths(zz, rw.StepMeasure.point_mass((0, (1, 0))),
                              64, 1, seed=0)[0]
    with pytest.raises(Inconclusive):
        rw.limit_ray_proxy(zz, trapped)


def test_proxy_on_plain_group_is_a_geodesic(f2, f2_paths):
    p = f2_paths[0]
    proxy = rw.limit_ray_proxy(f2, p)
    w = p.positions_at({256})[256]
    assert proxy.path_seg.endpoint() == w
    assert len(proxy.path_seg) - 1 == f2.norm(w)


def test_tracking_profile_free_group(f2, f2_paths):
    paths = f2_paths[:40]
    proxies = [rw.limit_ray_proxy(f2, p) for p in paths]
    rows, v1, v2 = rw.tracking_profile(paths, proxies)
    assert v1 and v2
    assert rows[-1][0] == 128          # bands stop at N/2
    assert rows[-1][1] <= 0.05
    with pytest.raises(DomainError):
        rw.tracking_profile(paths, proxies[:-1])


# ---------------------------------------------------------------------------
# hitting statistics

def test_direction_cells(f2, zz):
    assert rw.direction_cell(f2, (1, 2, -1)) == "a"
    assert rw.direction_cell(f2, (-2, 1)) == "B"
    assert rw.direction_cell(f2, ()) == "other"
    assert rw.direction_cell(zz, zz.parse_word("a a t")) == "P0"
    assert rw.direction_cell(zz, zz.parse_word("t b b")) == "f1:a"
    assert rw.direction_cell(zz, ()) == "other"


def test_hitting_histogram_free_group_is_near_uniform(f2):
    paths = rw.sample_paths(f2, rw.uniform_generator_measure(f2), 64, 200,
                            seed=1)
    hist = rw.hitting_histogram(f2, paths)
    assert set(hist) == {"a", "A", "b", "B"}
    assert sum(hist.values()) == pytest.approx(1.0)
    for p in hist.values():
        assert 0.15 <= p <= 0.35


def test_hitting_histogram_point_mass(f2):
    paths = rw.sample_paths(f2, rw.StepMeasure.point_mass((1,)), 16, 10,
                            seed=1)
    assert rw.hitting_histogram(f2, paths) == {"a": 1.0}


# ---------------------------------------------------------------------------
# walk-ray excursions

def test_walk_ray_excursions_are_horizon_stable(zz):
    paths = rw.sample_paths(zz, rw.uniform_generator_measure(zz), 256, 16,
                            seed=4)
    full, v = rw.excursion_of_walk_ray(zz, paths, KLOG)
    assert v
    assert len(full) == 16
    assert v.parameters["q_full"] <= v.parameters["q_half"] * 1.5 + 1e-9


def test_walk_ray_excursions_need_relhyp(f2, f2_paths):
    with pytest.raises(DomainError):
        rw.excursion_of_walk_ray(f2, f2_paths[:4], KLOG)


# ---------------------------------------------------------------------------
# CSV emission

def _read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    return lines


def test_walk_stats_csv(tmp_path, f2_paths):
    out = tmp_path / "walk_stats.csv"
    rw.write_walk_stats_csv(str(out), f2_paths[:3])
    lines = _read_csv(out)
    assert lines[0].startswith("#") and "schema=1" in lines[0]
    assert lines[1] == "path_id,n,dist,coned_dist"
    ks = rw._dyadic_checkpoints(256)
    assert len(lines) == 2 + 3 * len(ks)
    # non-relhyp spaces leave the coned column empty
    assert lines[2].endswith(",")


def test_excursion_csv(tmp_path, zz):
    ray = __import__("coarselab.relhyp", fromlist=["excursion_ray"]) \
        .excursion_ray(zz, 12, lambda k: int(math.log2(1 + k)))
    out = tmp_path / "excursion.csv"
    rw.write_excursion_csv(str(out), zz, ray, 0, KLOG)
    lines = _read_csv(out)
    assert lines[1] == "coset_id,excursion,coned_norm,ratio"
    assert len(lines) == 2 + 12


def test_tracking_csv(tmp_path):
    out = tmp_path / "tracking.csv"
    rw.write_tracking_csv(str(out), [(2, 0.5, 1.0), (4, 0.25, 0.9)])
    lines = _read_csv(out)
    assert lines[1] == "n,ratio_n,ratio_log2"
    assert lines[2] == "2,0.500000,1.000000"
