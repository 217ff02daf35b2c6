"""Config ingestion, experiment orchestration and result emission."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .bounds import Box, bounds_table, symbol_a_table, symbol_table
from .experiments import (
    GridParams,
    Scenario,
    SweepSpec,
    duhamel_bound_table,
    make_scenario,
    riemann_lebesgue_probe,
    state_batch,
    sweep_n,
    sweep_omega,
)
from .grid import sample, to_modes
from .operators import Fan, KineticSpec, OffsetGaussian, Sampled, project
from .propagators import (
    SchemeConfig,
    ident_check,
    propagate_work,
    reference_work,
    work_norms,
)
from .resolvent import (
    default_zeta,
    limres1_check,
    resolv_limit_check,
    spectral_cut_state,
    to_basis,
)
from .states import build_state
from .tables import Table, emit, pass_flag, slope

log = logging.getLogger("rotaprop")

EXIT_OK, EXIT_FAIL, EXIT_UNDER = 0, 1, 2
EXIT_SCHEMA, EXIT_MISSING = 64, 65

SUBCOMMANDS = {
    "propagate": ("propagate",),
    "sweep-omega": ("sweep_omega", "riemann_lebesgue"),
    "sweep-n": ("sweep_n",),
    "duhamel": ("duhamel",),
    "ident": ("ident",),
    "resolvent": ("resolvent",),
    "limres1": ("limres1",),
    "bounds": ("bounds",),
    "symbol": ("symbol",),
}
SUBCOMMANDS["all"] = tuple(k for v in SUBCOMMANDS.values() for k in v)

_SCENARIO_FREE = {"bounds", "symbol"}
_INCREASING = {"sweep_omega": "omegas", "riemann_lebesgue": "omegas", "resolvent": "omegas", "limres1": "omegas"}


class ConfigError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def load_schema() -> dict:
    text = resources.files("rotaprop").joinpath("schema/experiment.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def default_config_path() -> Path:
    return Path(str(resources.files("rotaprop").joinpath("configs/default.json")))


def load_config(path: str | os.PathLike) -> tuple[dict, bytes]:
    """Read, schema-validate and cross-check a config; nothing is computed here."""
    try:
        raw = Path(path).read_bytes()
        cfg = json.loads(raw)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}", EXIT_SCHEMA) from exc
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"schema violation at '{where}': {exc.message}", EXIT_SCHEMA) from exc

    for kind, entries in cfg["experiments"].items():
        for i, entry in enumerate(entries):
            key = _INCREASING.get(kind)
            if key and np.any(np.diff(entry[key]) <= 0):
                raise ConfigError(f"{kind}[{i}].{key} must be strictly increasing", EXIT_SCHEMA)
            if kind in _SCENARIO_FREE:
                continue
            if entry["scenario"] not in cfg["scenarios"]:
                raise ConfigError(f"{kind}[{i}] refers to unknown scenario {entry['scenario']!r}", EXIT_MISSING)
    return cfg, raw


def kinetic_from(spec: dict | None) -> KineticSpec:
    spec = spec or {"kind": "nonrelativistic"}
    if spec["kind"] == "power":
        return KineticSpec.power_law(spec["beta"])
    return KineticSpec.nonrelativistic(spec.get("mass", 1.0))


def potential_from(spec: dict):
    kind = spec["type"]
    args = {k: v for k, v in spec.items() if k != "type"}
    if kind == "offset_gaussian":
        return OffsetGaussian(**args)
    if kind == "fan":
        return Fan(**args)
    return Sampled(np.asarray(args["values"], dtype=float))


@dataclass
class RunManifest:
    config_sha256: str
    version: str
    subcommand: str
    seed: int
    experiments: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def record(self, name: str, status: str, seconds: float, outputs: list[Path], detail: str = "") -> None:
        self.experiments[name] = {"status": status, "seconds": round(seconds, 3),
                                  "outputs": [p.name for p in outputs], "detail": detail}
        self.outputs.extend(p.name for p in outputs)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)
        return path

    def exit_code(self) -> int:
        states = [e["status"] for e in self.experiments.values()]
        if any(s in ("fail", "error") for s in states):
            return EXIT_FAIL
        if "under_resolved" in states:
            return EXIT_UNDER
        return EXIT_OK


class Runner:
    def __init__(self, cfg: dict, out_dir: Path, workers: int, seed: int):
        self.cfg = cfg
        self.out_dir = out_dir
        self.workers = workers
        self.seed = seed
        self._scenarios: dict[str, Scenario] = {}
        self._pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def pool_map(self, fn, items):
        items = list(items)
        if self._pool is None:
            return map(fn, items)
        return self._pool.map(fn, items)

    def scenario(self, name: str) -> Scenario:
        if name not in self._scenarios:
            sc = self.cfg["scenarios"][name]
            self._scenarios[name] = make_scenario(name, GridParams(**sc["grid"]), kinetic_from(sc.get("kinetic")),
                                                  potential_from(sc["potential"]))
        return self._scenarios[name]

    def stem(self, kind: str, entry: dict, index: int) -> str:
        entries = self.cfg["experiments"][kind]
        label = entry.get("scenario")
        same = [e for e in entries if e.get("scenario") == label]
        parts = [kind] + ([label] if label else [])
        if len(same) > 1:
            parts.append(str(index))
        return "_".join(parts)

    # one handler per experiment kind; each returns a list of tables

    def run_propagate(self, e: dict) -> list[Table]:
        sc = self.scenario(e["scenario"])
        states = tuple(e.get("states", ("gauss_l0", "gauss_l2", "gauss_mixed")))
        cfg = sc.config(e["scheme"], e["omega"], e.get("T", 1.0), t0=e.get("t0", 0.0), n=e.get("n", 1),
                        n_sub=e.get("n_sub", 64), K_quad=e.get("K_quad", 8),
                        taylor_tol=e.get("taylor_tol", 1e-12))
        work = state_batch(sc, states, self.seed)
        out, diag = propagate_work(cfg, work)
        ref = reference_work(cfg, work, cfg.t0, cfg.t0 + cfg.T, 1024)
        norms = work_norms(out)
        dev = work_norms(out - ref)
        table = Table("propagate", ["scenario", "scheme", "state_id", "norm", "norm_drift",
                                    "deviation_from_reference", "pass"])
        growth = math.exp(cfg.T * sc.w_norm) if cfg.scheme == "u_lin" else None
        for k, sid in enumerate(states):
            drift = abs(norms[k] - 1.0)
            ok = norms[k] <= growth + 1e-10 if growth else drift <= 1e-10 * max(1, cfg.n)
            table.add(**{"scenario": sc.name, "scheme": cfg.scheme, "state_id": sid, "norm": float(norms[k]),
                         "norm_drift": float(drift), "deviation_from_reference": float(dev[k]),
                         "pass": pass_flag(ok)})
        table.notes.update({k: v for k, v in diag.items() if k != "taylor_orders"})
        if diag.get("taylor_orders"):
            table.notes["max_taylor_order"] = max(diag["taylor_orders"])
        return [table]

    def _sweep_spec(self, e: dict, **extra) -> SweepSpec:
        kw = {k: e[k] for k in ("T", "t0", "n_sub_ref", "resolution", "n_sub", "K_quad", "t0_alt") if k in e}
        if "states" in e:
            kw["states"] = tuple(e["states"])
        return SweepSpec(e["scenario"], seed=self.seed, **kw, **extra)

    def run_sweep_omega(self, e: dict) -> list[Table]:
        spec = self._sweep_spec(e, omegas=tuple(float(w) for w in e["omegas"]))
        return [sweep_omega(spec, self.scenario(e["scenario"]), self.pool_map)]

    def run_sweep_n(self, e: dict) -> list[Table]:
        spec = self._sweep_spec(e, ns=tuple(e["ns"]), omega_n=float(e.get("omega", 4.0)))
        return [sweep_n(spec, self.scenario(e["scenario"]), self.pool_map)]

    def run_riemann_lebesgue(self, e: dict) -> list[Table]:
        return [riemann_lebesgue_probe(self.scenario(e["scenario"]), e["j"], e["ell"], e["omegas"],
                                       T=e.get("T", 1.0), n=e.get("n", 1), k=e.get("k", 0),
                                       state=e.get("state", "gauss_l0"), seed=self.seed)]

    def run_duhamel(self, e: dict) -> list[Table]:
        kw = {k: e[k] for k in ("n_sub_ref", "n_sub", "K_quad") if k in e}
        if "states" in e:
            kw["states"] = tuple(e["states"])
        return [duhamel_bound_table(self.scenario(e["scenario"]), tuple(e["dts"]), omega=e.get("omega", 4.0),
                                    seed=self.seed, pool_map=self.pool_map, **kw)]

    def run_ident(self, e: dict) -> list[Table]:
        sc = self.scenario(e["scenario"])
        psi = build_state(sc.grid, e.get("state", "gauss_mixed"), self.seed)
        steps = e.get("steps", [256, 512, 1024, 2048, 4096])
        diffs = list(self.pool_map(lambda n: ident_check(psi, e["t"], e.get("t1", 0.0), e["omega"], sc.potential, n),
                                   steps))
        table = Table("ident", ["steps", "difference"])
        for n, d in zip(steps, diffs):
            table.add(steps=int(n), difference=float(d))
        order = -slope(steps, diffs)
        table.notes["observed_order"] = order
        table.checks["order_1.9"] = bool(order >= 1.9)
        if max(steps) >= 4096:
            table.checks["final_below_1e-8"] = bool(diffs[-1] < 1e-8)
        return [table]

    def run_resolvent(self, e: dict) -> list[Table]:
        sc = self.scenario(e["scenario"])
        zeta = e.get("zeta", default_zeta(sc.potential))
        n_phi = e.get("n_phi", 16)
        phis = 2 * np.pi * np.arange(n_phi) / n_phi
        rhs = to_basis(build_state(sc.grid, e.get("state", "gauss_l0"), self.seed))
        return [resolv_limit_check(sc.grid, sc.kinetic, sc.potential, e.get("ell", 0), zeta, e["omegas"], phis,
                                   rhs, self.pool_map)]

    def run_limres1(self, e: dict) -> list[Table]:
        sc = self.scenario(e["scenario"])
        j, ell = e["j"], e.get("ell", 0)
        zeta = e.get("zeta", default_zeta(None))
        mu_max = e.get("mu_max")
        g = sc.grid
        # base: Gaussian in angular mode j, r^|j| e^{i j phi} e^{-r^2/2}
        base = sample(g, lambda x, y: (x + 1j * np.sign(j) * y) ** abs(j) * np.exp(-(x * x + y * y) / 2))
        if mu_max is None:
            rhs = to_basis(project(to_modes(base), j))
        else:
            rhs = spectral_cut_state(g, sc.kinetic, sc.potential, base, j, mu_max)
        rhs = rhs / np.linalg.norm(rhs)
        return [limres1_check(g, sc.kinetic, sc.potential, ell, zeta, e["omegas"], rhs, mu_max)]

    def run_bounds(self, e: dict) -> list[Table]:
        box = Box(e.get("box_side", 4.0), e.get("box_N", 512))
        return [bounds_table([tuple(c) for c in e["centers"]], a=e.get("a", 0.5), omega=e.get("omega", 1.0),
                             box=box, n_states=e.get("n_states", 32), seed=self.seed,
                             extra_a=tuple(e.get("extra_a", (0.05,))), pool_map=self.pool_map)]

    def run_symbol(self, e: dict) -> list[Table]:
        tables = [symbol_table(e["pbar_norms"], e.get("a", 1.0))]
        if "a_values" in e:
            tables.append(symbol_a_table(e["pbar_norms"], e["a_values"]))
        return tables


def run(config_path: str | os.PathLike, subcommand: str, out_dir: str | None = None,
        workers: int | None = None, seed: int | None = None) -> int:
    """Validate, execute the experiments of ``subcommand`` and write outputs; returns the exit status."""
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    try:
        cfg, raw = load_config(config_path)
    except ConfigError as exc:
        log.error("%s", exc)
        return exc.code

    out = Path(out_dir or os.environ.get("ROTAPROP_OUT") or cfg.get("output_dir", "rotaprop-out"))
    workers = int(workers or os.environ.get("ROTAPROP_WORKERS") or cfg.get("workers", 1))
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    out.mkdir(parents=True, exist_ok=True)

    manifest = RunManifest(hashlib.sha256(raw).hexdigest(), __version__, subcommand, seed)
    runner = Runner(cfg, out, workers, seed)
    try:
        for kind in SUBCOMMANDS[subcommand]:
            for i, entry in enumerate(cfg["experiments"].get(kind, [])):
                stem = runner.stem(kind, entry, i)
                start = time.perf_counter()
                written: list[Path] = []
                try:
                    tables = getattr(runner, f"run_{kind}")(entry)
                    for t in tables:
                        name = stem if t.name == kind else stem.replace(kind, t.name, 1)
                        written.extend(emit(t, out / f"{name}.csv"))
                    status = _worst([t.status for t in tables])
                    detail = "; ".join(f"{t.name}: {c}" for t in tables for c, ok in t.checks.items() if not ok)
                except Exception as exc:  # recorded, the run continues
                    log.exception("%s failed", stem)
                    status, detail = "error", f"{type(exc).__name__}: {exc}"
                manifest.record(stem, status, time.perf_counter() - start, written, detail)
                log.info("%-40s %s", stem, status)
    finally:
        runner.close()
        manifest.write(out)
    return manifest.exit_code()


def _worst(states: list[str]) -> str:
    for s in ("error", "fail", "under_resolved"):
        if s in states:
            return s
    return "pass"
