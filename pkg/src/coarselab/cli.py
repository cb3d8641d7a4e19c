"""Experiment runner: INI configs in, CSV/JSON reports out.

Every subcommand reads one section of the config, runs the corresponding
tester, and appends a result record to ``summary.json``.  The exit code is
0 iff every verdict matches its expectation, where negative controls are
annotated ``expect = fail`` in their section.  Reports carry the seed and
parameters of every number so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

from . import __version__, morse, randwalk, relhyp, space, sublinear
from .errors import DomainError, Inconclusive, PreconditionError
from .seeds import derive_seed, rng_for


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# schema

_str = str
_int = int
_float = float


def _bool(s):
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _kappa(s):
    try:
        return sublinear.by_tag(s)
    except DomainError as e:
        raise ValueError(str(e)) from None


_EXPECT = ("pass", "fail")


def _expect(s):
    if s not in _EXPECT:
        raise ValueError(f"expect must be one of {_EXPECT}, got {s!r}")
    return s


#: section -> key -> (parser, default); None default means required
SCHEMA = {
    "experiment": {
        "seed": (_int, None),
        "space": (_str, None),
        "out": (_str, "results"),
        "jobs": (_int, 1),
        "tests": (_str, ""),
    },
    "morse": {
        "target": (_str, "axis"),
        "length": (_int, 600),
        "kappa": (_kappa, "1"),
        "kappa_prime": (_kappa, "1"),
        "r": (_float, 100.0),
        "big_r": (_float, 400.0),
        "q": (_float, 1.5),
        "big_q": (_float, 0.0),
        "probes": (_int, 40),
        "gauge": (_str, "derive"),
        "c1": (_float, 0.5),
        "c2": (_float, 0.0),
        "d1": (_float, 1.0),
        "d2": (_float, 0.0),
        "expect": (_expect, "pass"),
    },
    "contract": {
        "target": (_str, "axis"),
        "length": (_int, 600),
        "kappa": (_kappa, "1"),
        "c1": (_float, 0.5),
        "samples": (_int, 160),
        "expect": (_expect, "pass"),
    },
    "excursion": {
        "syllables": (_int, 200),
        "sizes": (_str, "log"),
        "kappa": (_kappa, "log"),
        "contracting": (_bool, False),
        "samples": (_int, 80),
        "expect": (_expect, "pass"),
    },
    "walk": {
        "statistic": (_str, "drift"),
        "n": (_int, 1024),
        "count": (_int, 200),
        "support": (_str, "generators"),
        "fraction": (_float, 0.5),
        "ell": (_float, -1.0),   # <0 means: use the measured drift
        "lo": (_float, 0.0),
        "hi": (_float, float("inf")),
        "expect": (_expect, "pass"),
    },
    "gauge": {
        "q": (_float, 2.0),
        "big_q": (_float, 0.0),
        "c1": (_float, 0.5),
        "c2": (_float, 1.0),
        "d1": (_float, 1.0),
        "d2": (_float, 1.0),
        "kappa": (_kappa, "1"),
    },
    "surgery": {
        "fixtures": (_int, 50),
        "r": (_float, 40.0),
        "big_r": (_float, 120.0),
        "expect": (_expect, "pass"),
    },
    "distance_formula": {
        "k": (_int, 5),
        "k2": (_int, 0),         # 0 disables the stability comparison
        "pairs": (_int, 500),
        "radius": (_int, 30),
        "expect": (_expect, "pass"),
    },
}

RUNNABLE = tuple(s for s in SCHEMA if s != "experiment")


@dataclass
class ExperimentConfig:
    path: str
    seed: int
    space_spec: str
    out: str
    jobs: int
    tests: list
    sections: dict = field(default_factory=dict)


def _first_line_with(lines, needle, section=None):
    """1-based line number of `needle`, searching inside `section` if given."""
    in_section = section is None
    for i, raw in enumerate(lines, start=1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            in_section = section is None or s[1:-1].strip() == section
            if section is not None and in_section and needle == s[1:-1].strip():
                return i
            continue
        if in_section and (s == needle or s.split("=", 1)[0].strip() == needle):
            return i
    return 0


def validate_config(path):
    """Parse and schema-check an INI config; the first error is reported
    with its line number."""
    import configparser
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            text = fh.read()
        cp.read_string(text, source=path)
    except OSError as e:
        raise ConfigError(f"{path}: {e}") from None
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    lines = text.splitlines()

    def err(msg, needle, section=None):
        ln = _first_line_with(lines, needle, section)
        where = f"{path}:{ln}" if ln else path
        raise ConfigError(f"{where}: {msg}")

    if not cp.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    for sec in cp.sections():
        if sec not in SCHEMA:
            err(f"unknown section [{sec}]", sec, section=sec)
        for key in cp.options(sec):
            if key not in SCHEMA[sec]:
                err(f"unknown key {key!r} in [{sec}]", key, section=sec)
    if not cp.has_option("experiment", "seed"):
        err("seed required", "experiment", section="experiment")

    parsed = {}
    for sec in cp.sections():
        vals = {}
        for key, (parse, default) in SCHEMA[sec].items():
            if cp.has_option(sec, key):
                raw = cp.get(sec, key)
                try:
                    vals[key] = parse(raw)
                except (ValueError, DomainError) as e:
                    err(f"bad value for {key!r}: {e}", key, section=sec)
            elif default is None:
                err(f"{key} required in [{sec}]", sec, section=sec)
            else:
                vals[key] = parse(default) if isinstance(default, str) else default
        parsed[sec] = vals

    exp = parsed["experiment"]
    try:
        space.build_space(exp["space"])  # validate the spec eagerly
    except DomainError as e:
        err(f"bad space spec: {e}", "space", section="experiment")
    tests = exp["tests"].split() if exp["tests"] else \
        [s for s in RUNNABLE if s in parsed]
    for t in tests:
        if t not in RUNNABLE:
            err(f"unknown test {t!r}", "tests", section="experiment")
        if t not in parsed:
            err(f"test {t!r} has no [{t}] section", "tests", section="experiment")
    return ExperimentConfig(path=path, seed=exp["seed"], space_spec=exp["space"],
                            out=exp["out"], jobs=exp["jobs"], tests=tests,
                            sections=parsed)


# ---------------------------------------------------------------------------
# fixtures and targets

def _make_target(sp, name, length):
    if name == "axis":
        return space.axis_ray(sp, length)
    if name == "diagonal":
        if not isinstance(sp, space.GridSpace) or sp.d < 2:
            raise ConfigError("diagonal target needs a grid of dimension >= 2")
        letters = [((1, 0) + (0,) * (sp.d - 2), (0, 1) + (0,) * (sp.d - 2))
                   [k % 2] for k in range(length)]
        return space.PathSeg(sp, start=sp.identity, letters=letters, q=1, Q=0)
    if name == "ray":
        if not isinstance(sp, space.LoopyRaySpace):
            raise ConfigError("ray target needs a loopy_ray space")
        return sp.ray_prefix(length)
    raise ConfigError(f"unknown target {name!r}")


def _target_projection(sp, Z):
    def proj(x):
        return tuple(space.nearest_point_projection(sp, x, Z))
    return proj


def _sizes_fn(spec):
    if spec == "log":
        return lambda k: max(1, int(math.log(k + 2)))
    if spec == "linear":
        return lambda k: k + 1
    if spec.startswith("const:"):
        c = int(spec.split(":", 1)[1])
        return lambda k: c
    raise ConfigError(f"unknown sizes spec {spec!r}")


def _step_measure(sp, support_spec):
    if support_spec == "generators":
        return randwalk.uniform_generator_measure(sp)
    if support_spec.startswith("factor:"):
        i = int(support_spec.split(":", 1)[1])
        if not isinstance(sp, space.FreeProductSpace):
            raise ConfigError("factor: support needs a free product")
        gens = [(i, g) for g in sp.factors[i].gens]
        return randwalk.StepMeasure.uniform(gens)
    raise ConfigError(f"unknown support spec {support_spec!r}")


def surgery_fixture_file(out_dir, sp):
    safe = "".join(c if c.isalnum() else "_" for c in sp.kind)
    return os.path.join(out_dir, "fixtures", f"surgery_{safe}.json")


def load_surgery_fixtures(out_dir, sp, count, seed, regen=False):
    """Per-fixture walk seeds, persisted so reruns share fixtures; regen
    rewrites the file from the current seed."""
    path = surgery_fixture_file(out_dir, sp)
    if not regen and os.path.exists(path):
        with open(path) as fh:
            data = json.load(fh)
        return data["seeds"]
    seeds = [derive_seed(seed, 77, i) for i in range(count)]
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as fh:
        json.dump({"version": __version__, "seeds": seeds}, fh, sort_keys=True)
    return seeds


# ---------------------------------------------------------------------------
# section runners (each returns a result dict)

def _record(name, verdict=None, expect="pass", extra=None, error=None):
    rec = {"section": name, "expect": expect}
    if verdict is not None:
        rec["verdict"] = verdict.to_json() if hasattr(verdict, "to_json") else verdict
        rec["passed"] = bool(verdict)
        rec["ok"] = bool(verdict) == (expect == "pass")
    if error is not None:
        rec["error"] = error
        rec["ok"] = False
    if extra:
        rec.update(extra)
    return rec


def _run_morse(sp, cfg, seed, jobs, out_dir, regen):
    Z = _make_target(sp, cfg["target"], cfg["length"])
    if cfg["gauge"] == "derive":
        gauge = morse.derived_gauge(cfg["c1"], cfg["c2"], cfg["d1"], cfg["d2"],
                                    cfg["kappa"])
    else:
        gauge = morse.MorseGauge.constant(float(cfg["gauge"]))
    v = morse.test_kappa_morse(sp, Z, cfg["kappa"], cfg["kappa_prime"],
                               cfg["r"], cfg["big_r"], cfg["q"], cfg["big_q"],
                               cfg["probes"], seed, gauge)
    return _record("morse", v, cfg["expect"])


def _run_contract(sp, cfg, seed, jobs, out_dir, regen):
    Z = _make_target(sp, cfg["target"], cfg["length"])
    proj = _target_projection(sp, Z)
    consts, v = morse.test_kappa_contracting(sp, Z, proj, cfg["kappa"],
                                             cfg["c1"], cfg["samples"], seed)
    return _record("contract", v, cfg["expect"],
                   extra={"C1": consts.C1, "C2": consts.C2})


def _run_excursion(sp, cfg, seed, jobs, out_dir, regen):
    relhyp.require_relhyp(sp)
    gamma = relhyp.excursion_ray(sp, cfg["syllables"], _sizes_fn(cfg["sizes"]))
    constants = relhyp.default_constants(sp)
    if cfg["contracting"]:
        consts, v = relhyp.test_excursion_contracting(
            sp, gamma, cfg["kappa"], cfg["samples"], seed, constants=constants)
        extra = {"C2": consts.C2}
    else:
        rows, E, v = relhyp.excursion_profile(sp, gamma, constants.D0,
                                              cfg["kappa"])
        extra = {"E": E}
        randwalk.write_excursion_csv(os.path.join(out_dir, "excursion.csv"),
                                     sp, gamma, constants.D0, cfg["kappa"])
    return _record("excursion", v, cfg["expect"], extra=extra)


def _run_walk(sp, cfg, seed, jobs, out_dir, regen):
    mu = _step_measure(sp, cfg["support"])
    paths = randwalk.sample_paths(sp, mu, cfg["n"], cfg["count"], seed)
    stat = cfg["statistic"]
    extra = {"statistic": stat, "n": cfg["n"], "count": cfg["count"]}
    randwalk.write_walk_stats_csv(os.path.join(out_dir, "walk_stats.csv"),
                                  paths, jobs=jobs)
    if stat == "drift":
        rep = randwalk.drift(paths, jobs=jobs)
        ok = cfg["lo"] <= rep.ell <= cfg["hi"] and rep.subadditive
        v = morse.Verdict(ok, test="drift", margin=rep.ell,
                          parameters={"ci": list(rep.ci),
                                      "subadditive": rep.subadditive},
                          seed=seed, space=sp.kind)
        extra["ell"] = rep.ell
    elif stat == "progress_tail":
        ell = cfg["ell"] if cfg["ell"] > 0 else randwalk.drift(paths, jobs=jobs).ell
        rows, v = randwalk.progress_tail(paths, ell, cfg["fraction"], jobs=jobs)
        extra["ell"] = ell
    elif stat == "peripheral_growth":
        rows, v = randwalk.peripheral_projection_growth(
            paths, jobs=jobs, lo=2, hi=cfg["n"])
    elif stat == "tracking":
        proxies = [randwalk.limit_ray_proxy(sp, p) for p in paths]
        rows, v1, v2 = randwalk.tracking_profile(paths, proxies, jobs=jobs)
        randwalk.write_tracking_csv(os.path.join(out_dir, "tracking.csv"), rows)
        v = morse.Verdict(bool(v1) and bool(v2), test="tracking",
                          margin=min(v1.margin, v2.margin),
                          parameters={"sublinear": v1.to_json(),
                                      "log2": v2.to_json()},
                          seed=seed, space=sp.kind)
    elif stat == "hitting":
        hist = randwalk.hitting_histogram(sp, paths, jobs=jobs)
        v = morse.Verdict(abs(sum(hist.values()) - 1.0) < 1e-9, test="hitting",
                          parameters={"histogram": hist}, seed=seed,
                          space=sp.kind)
        extra["histogram"] = hist
    elif stat == "excursion":
        kappa = sublinear.by_tag("log")
        _, v = randwalk.excursion_of_walk_ray(sp, paths, kappa, jobs=jobs)
    else:
        raise ConfigError(f"unknown walk statistic {stat!r}")
    return _record("walk", v, cfg["expect"], extra=extra)


def _run_gauge(sp, cfg, seed, jobs, out_dir, regen):
    der = morse.derive_gauge(cfg["q"], cfg["big_q"], cfg["c1"], cfg["c2"],
                             cfg["d1"], cfg["d2"], cfg["kappa"])
    v = morse.Verdict(True, test="gauge", margin=der.m_Z,
                      parameters={"m_Z": der.m_Z, "m0": der.m0, "m1": der.m1,
                                  "m2": der.m2, "m3": der.m3, "m4": der.m4,
                                  "A": der.A, "kappa": cfg["kappa"].tag},
                      seed=seed, space=sp.kind)
    return _record("gauge", v, "pass", extra={"m_Z": der.m_Z})


def _run_surgery(sp, cfg, seed, jobs, out_dir, regen):
    if not sp.is_group:
        raise ConfigError("surgery needs a group space")
    seeds = load_surgery_fixtures(out_dir, sp, cfg["fixtures"], seed,
                                  regen=regen)
    r, R = cfg["r"], cfg["big_r"]
    gamma = space.axis_ray(sp, int(R) + 2)
    z_R = gamma.vertex(space.first_time_at_norm(gamma, int(R)))
    failures = 0
    for s in seeds:
        # a genuinely non-geodesic alpha ending on gamma at norm R
        alpha = morse.probe_family(sp, z_R, 2.0, 4, 1, s)[0]
        try:
            spliced = morse.surgery(sp, gamma, alpha, r, R)
        except Exception:
            failures += 1
            continue
        if spliced.q > 9 * alpha.q + 1e-9 or spliced.Q > alpha.Q + 1e-9:
            failures += 1
    v = morse.Verdict(failures == 0, test="surgery", margin=-failures,
                      parameters={"fixtures": len(seeds), "r": r, "R": R},
                      seed=seed, space=sp.kind)
    return _record("surgery", v, cfg["expect"], extra={"failures": failures})


def _random_pairs(sp, count, radius, seed):
    pairs = []
    for i in range(count):
        rng = rng_for(seed, 13, i)
        pts = []
        for _ in range(2):
            acc = sp.right_acc(sp.identity)
            for _ in range(rng.randint(0, radius)):
                acc.push(rng.choice(sp.gens))
            pts.append(acc.value())
        pairs.append(tuple(pts))
    return pairs


def _run_distance_formula(sp, cfg, seed, jobs, out_dir, regen):
    relhyp.require_relhyp(sp)
    pairs = _random_pairs(sp, cfg["pairs"], cfg["radius"], seed)
    fit = relhyp.fit_distance_formula(sp, pairs, cfg["k"])
    extra = {"M": fit.M, "A": fit.A, "K": fit.K}
    ok = True
    if cfg["k2"]:
        fit2 = relhyp.fit_distance_formula(sp, pairs, cfg["k2"])
        extra["M2"] = fit2.M
        ok = abs(fit2.M - fit.M) / max(fit.M, 1e-12) < 0.10
    v = morse.Verdict(ok, test="distance_formula", margin=fit.M,
                      parameters=extra, seed=seed, space=sp.kind)
    return _record("distance_formula", v, cfg["expect"], extra=extra)


_RUNNERS = {
    "morse": _run_morse,
    "contract": _run_contract,
    "excursion": _run_excursion,
    "walk": _run_walk,
    "gauge": _run_gauge,
    "surgery": _run_surgery,
    "distance_formula": _run_distance_formula,
}


# ---------------------------------------------------------------------------
# orchestration

def run_experiment(config, tests=None, seed=None, jobs=None, out=None,
                   regen_fixtures=False):
    """Run the selected sections and write `summary.json`; returns
    (summary dict, exit code)."""
    sp = space.build_space(config.space_spec)
    seed = config.seed if seed is None else seed
    jobs = config.jobs if jobs is None else jobs
    out_dir = config.out if out is None else out
    os.makedirs(out_dir, exist_ok=True)
    results = []
    for name in (tests if tests is not None else config.tests):
        cfg = config.sections.get(name)
        if cfg is None:
            results.append(_record(name, error=f"no [{name}] section"))
            continue
        runner = _RUNNERS[name]
        try:
            results.append(runner(sp, cfg, seed, jobs, out_dir, regen_fixtures))
        except (Inconclusive, PreconditionError, DomainError,
                ConfigError) as e:
            results.append(_record(name, expect=cfg.get("expect", "pass"),
                                   error=f"{type(e).__name__}: {e}"))
    ok = bool(results) and all(r.get("ok", False) for r in results)
    summary = {
        "version": __version__,
        "space": config.space_spec,
        "seed": seed,
        "results": results,
        "ok": ok,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary, 0 if ok else 1


def _parser():
    p = argparse.ArgumentParser(prog="coarselab",
                                description="coarse-geometry experiment runner")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    names = {
        "morse-test": "morse",
        "contract-test": "contract",
        "excursion": "excursion",
        "walk": "walk",
        "gauge": "gauge",
        "surgery": "surgery",
        "distance-formula": "distance_formula",
        "run": None,
    }
    for cmd in names:
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--regen-fixtures", action="store_true")
        sp.set_defaults(section=names[cmd])
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        config = validate_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    seed = args.seed
    if seed is None and "COARSELAB_SEED" in os.environ:
        seed = int(os.environ["COARSELAB_SEED"])
    tests = None if args.section is None else [args.section]
    try:
        summary, code = run_experiment(config, tests=tests, seed=seed,
                                       jobs=args.jobs, out=args.out,
                                       regen_fixtures=args.regen_fixtures)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    for r in summary["results"]:
        state = "ok" if r.get("ok") else "NOT OK"
        detail = r.get("error") or \
            ("pass" if r.get("passed") else "fail") + f" (expect {r['expect']})"
        print(f"{r['section']}: {state} [{detail}]")
    print(f"summary: {'ok' if summary['ok'] else 'NOT OK'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
