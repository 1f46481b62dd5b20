"""Study configuration, the sweep driver, and file export.

A study is described by one JSON file: geometry, diffusivities, kinetics,
initial data, time horizon, the list of scale parameters, refinements, and
output options.  Running a study solves the channel-resolved problem for
every scale parameter, solves the limit model once, computes the
unfolding-based error norms per scale, and writes a report CSV, all field
snapshots, and a manifest with content hashes.  Everything is rebuildable:
the `report` entry point re-derives the report from the stored fields and
the config echoed in the manifest, byte for byte.
"""

import hashlib
import json
import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import (
    BULK_M,
    BULK_P,
    CHAN,
    ChannelProfile,
    build_micro_geometry,
    build_reference_cell,
)
from .grid import Field, build_cell_grid, build_micro_grid
from .kinetics import InitialData, KineticsSpec
from .macrosim import InterfaceLayout, MacroSimulation, MacroState
from .microsim import DiffusionSpec, KineticsBundle, MicroSimulation, MicroState
from .twoscale import (
    TwoScaleField,
    TwoScaleReport,
    Unfolder,
    apriori_norm,
    calibrate_trace_constant,
    shift_diagnostic,
    trace_inequality_diagnostic,
    ts_error,
)

SCHEMA_VERSION = 1
_TAG_NAMES = {BULK_P: "bulk+", BULK_M: "bulk-", CHAN: "channel"}


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _need(mapping, key, path):
    if key not in mapping:
        raise ConfigError(f"{path}.{key} required" if path else f"{key} required")
    return mapping[key]


def _frac_value(raw, path) -> Fraction:
    try:
        return Fraction(str(raw))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{path}: not a rational number ({raw!r})") from exc


@dataclass
class StudyConfig:
    echo: dict           # fully defaulted config, JSON-serializable
    profile: ChannelProfile
    cell: object
    H: Fraction
    diffusion: DiffusionSpec
    kinetics: KineticsBundle
    initial: InitialData
    epsilons: list       # Fractions, strictly decreasing
    T: float
    dt: float
    k: int
    m: int
    n_sigma: int
    snapshot_stride: int
    shift_l: int
    shift_h: float
    theta: float
    output_dir: str
    seed: int


def _kinetics_spec(raw, path) -> KineticsSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    kind = _need(raw, "kind", path)
    params = {key: val for key, val in raw.items() if key not in ("kind", "modulation")}
    required = {
        "zero": (),
        "constant": ("value",),
        "linear_decay": ("lam",),
        "logistic_clamped": ("r", "u_cap", "clamp"),
        "exchange": ("kappa", "u_ext"),
        "tabulated": ("u", "rate"),
    }
    if kind not in required:
        raise ConfigError(f"{path}.kind: unknown kinetics kind {kind!r}")
    for name in required[kind]:
        _need(params, name, path)
    modulation = None
    if raw.get("modulation") is not None:
        mod = raw["modulation"]
        modulation = (_need(mod, "kind", f"{path}.modulation"),
                      float(_need(mod, "amplitude", f"{path}.modulation")))
    try:
        return KineticsSpec(kind, params, modulation)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _initial_fn(raw, path, channel=False):
    kind = _need(raw, "kind", path)
    if kind == "constant":
        v = float(_need(raw, "value", path))
        if channel:
            return lambda xb, yb, yn: v
        return lambda x, y: v
    if kind == "cosine_xbar" and not channel:
        base = float(_need(raw, "base", path))
        amp = float(_need(raw, "amplitude", path))
        freq = int(raw.get("frequency", 1))
        return lambda x, y: base + amp * math.cos(freq * math.pi * x)
    if kind == "affine_yn" and channel:
        base = float(_need(raw, "base", path))
        slope = float(_need(raw, "slope", path))
        return lambda xb, yb, yn: base + slope * yn
    if kind == "affine_yn_cosine_xbar" and channel:
        base = float(_need(raw, "base", path))
        slope = float(_need(raw, "slope", path))
        amp = float(_need(raw, "amplitude", path))
        freq = int(raw.get("frequency", 1))
        return lambda xb, yb, yn: (base + slope * yn) * (
            1.0 + amp * math.cos(freq * math.pi * xb)
        )
    raise ConfigError(f"{path}.kind: unknown initial-data kind {kind!r}")


def parse_config(raw: dict) -> StudyConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a JSON object")
    if int(raw.get("schema", SCHEMA_VERSION)) != SCHEMA_VERSION:
        raise ConfigError(f"schema: unsupported version {raw.get('schema')}")

    geo = _need(raw, "geometry", "")
    H = _frac_value(_need(geo, "H", "geometry"), "geometry.H")
    prof_raw = _need(geo, "profile", "geometry")
    segs = _need(prof_raw, "segments", "geometry.profile")
    try:
        profile = ChannelProfile.from_pairs(
            [
                (
                    (
                        _frac_value(_need(s, "interval", f"geometry.profile.segments[{i}]")[0],
                                    f"geometry.profile.segments[{i}].interval[0]"),
                        _frac_value(s["interval"][1], f"geometry.profile.segments[{i}].interval[1]"),
                    ),
                    _frac_value(_need(s, "width", f"geometry.profile.segments[{i}]"),
                                f"geometry.profile.segments[{i}].width"),
                )
                for i, s in enumerate(segs)
            ]
        )
    except ValueError as exc:
        raise ConfigError(f"geometry.profile: {exc}") from exc
    cell = build_reference_cell(profile)

    dif = _need(raw, "diffusivity", "")
    d_plus = float(_need(dif, "bulk_plus", "diffusivity"))
    d_minus = float(_need(dif, "bulk_minus", "diffusivity"))
    chan = _need(dif, "channel", "diffusivity")
    if len(chan) != len(profile.segments):
        raise ConfigError(
            f"diffusivity.channel: need one (d_ybar, d_yn) pair per profile segment "
            f"({len(profile.segments)}), got {len(chan)}"
        )
    try:
        diffusion = DiffusionSpec(d_plus, d_minus, tuple((float(a), float(b)) for a, b in chan))
    except ValueError as exc:
        raise ConfigError(f"diffusivity: {exc}") from exc

    kin_raw = _need(raw, "kinetics", "")
    kinetics = KineticsBundle(
        f_plus=_kinetics_spec(_need(kin_raw, "f_plus", "kinetics"), "kinetics.f_plus"),
        f_minus=_kinetics_spec(_need(kin_raw, "f_minus", "kinetics"), "kinetics.f_minus"),
        g=_kinetics_spec(_need(kin_raw, "g", "kinetics"), "kinetics.g"),
        h=_kinetics_spec(_need(kin_raw, "h", "kinetics"), "kinetics.h"),
    )

    ini = _need(raw, "initial", "")
    initial = InitialData(
        u_plus=_initial_fn(_need(ini, "bulk_plus", "initial"), "initial.bulk_plus"),
        u_minus=_initial_fn(_need(ini, "bulk_minus", "initial"), "initial.bulk_minus"),
        u_channel=_initial_fn(_need(ini, "channel", "initial"), "initial.channel", channel=True),
    )

    eps_raw = _need(raw, "epsilon", "")
    if not eps_raw:
        raise ConfigError("epsilon: need at least one value")
    epsilons = []
    for i, e in enumerate(eps_raw):
        f = _frac_value(e, f"epsilon[{i}]")
        if f <= 0 or (1 / f).denominator != 1:
            raise ConfigError(f"epsilon[{i}]: 1/eps must be a positive integer, got {e!r}")
        if f >= H:
            raise ConfigError(f"epsilon[{i}]: eps must be smaller than geometry.H")
        epsilons.append(f)
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ConfigError("epsilon: values must be strictly decreasing")

    tim = _need(raw, "time", "")
    T = float(_need(tim, "T", "time"))
    dt_raw = tim.get("dt", {"rule": "eps_min_over", "factor": 8})
    rule = dt_raw.get("rule", "eps_min_over")
    if rule == "eps_min_over":
        dt = float(min(epsilons)) / float(dt_raw.get("factor", 8))
    elif rule == "fixed":
        dt = float(_need(dt_raw, "value", "time.dt"))
    else:
        raise ConfigError(f"time.dt.rule: unknown rule {rule!r}")
    if dt <= 0 or T < 0:
        raise ConfigError("time: need dt > 0 and T >= 0")
    n_steps = round(T / dt)
    if abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigError(f"time: T={T} is not an integer multiple of dt={dt}")

    ref = raw.get("refinement", {})
    k = int(ref.get("k", 4))
    m = int(ref.get("m", k))
    n_sigma = int(ref.get("n_sigma", max(32, int(1 / min(epsilons)))))
    if k != m:
        raise ConfigError("refinement: unfolding needs k == m")
    align = profile.alignment
    if k % align:
        raise ConfigError(
            f"refinement.k: {k} not divisible by the profile alignment {align} "
            "(a channel wall would fall inside a cell)"
        )
    if n_sigma * min(epsilons) < 1:
        raise ConfigError("refinement.n_sigma: interface nodes must be at least as fine "
                          "as the smallest epsilon columns")

    stride = int(raw.get("snapshot_stride", 4))
    if stride < 1:
        raise ConfigError("snapshot_stride: must be >= 1")

    diag = raw.get("diagnostics", {})
    shift_l = int(diag.get("shift_l", 1))
    shift_h = float(diag.get("shift_h", 0.125))
    theta = float(diag.get("theta", 1.0))

    echo = {
        "schema": SCHEMA_VERSION,
        "geometry": {
            "H": str(H),
            "profile": {
                "segments": [
                    {"interval": [str(lo), str(hi)], "width": str(w)}
                    for (lo, hi), w in profile.segments
                ]
            },
        },
        "diffusivity": {
            "bulk_plus": d_plus,
            "bulk_minus": d_minus,
            "channel": [[a, b] for a, b in diffusion.channel],
        },
        "kinetics": {
            name: _echo_kinetics(spec)
            for name, spec in (
                ("f_plus", kinetics.f_plus),
                ("f_minus", kinetics.f_minus),
                ("g", kinetics.g),
                ("h", kinetics.h),
            )
        },
        "initial": {key: dict(val) for key, val in (
            ("bulk_plus", _need(ini, "bulk_plus", "initial")),
            ("bulk_minus", _need(ini, "bulk_minus", "initial")),
            ("channel", _need(ini, "channel", "initial")),
        )},
        "time": {"T": T, "dt": {"rule": "fixed", "value": dt}},
        "epsilon": [str(e) for e in epsilons],
        "refinement": {"k": k, "m": m, "n_sigma": n_sigma},
        "snapshot_stride": stride,
        "diagnostics": {"shift_l": shift_l, "shift_h": shift_h, "theta": theta},
        "output_dir": raw.get("output_dir", "out"),
        "seed": int(raw.get("seed", 0)),
    }
    return StudyConfig(
        echo=echo,
        profile=profile,
        cell=cell,
        H=H,
        diffusion=diffusion,
        kinetics=kinetics,
        initial=initial,
        epsilons=epsilons,
        T=T,
        dt=dt,
        k=k,
        m=m,
        n_sigma=n_sigma,
        snapshot_stride=stride,
        shift_l=shift_l,
        shift_h=shift_h,
        theta=theta,
        output_dir=echo["output_dir"],
        seed=echo["seed"],
    )


def _echo_kinetics(spec: KineticsSpec) -> dict:
    out = {"kind": spec.kind}
    out.update(spec.params)
    if spec.modulation is not None:
        out["modulation"] = {"kind": spec.modulation[0], "amplitude": spec.modulation[1]}
    return out


def load_config(path) -> StudyConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw)


# ---------------------------------------------------------------------------
# study execution

def run_micro_study(cfg: StudyConfig, eps: Fraction):
    geom = build_micro_geometry(eps, cfg.H, cfg.cell)
    grid = build_micro_grid(geom, cfg.k)
    sim = MicroSimulation(geom, grid, cfg.diffusion, cfg.kinetics)
    snaps = sim.run(cfg.initial, cfg.T, cfg.dt, cfg.snapshot_stride)
    return geom, grid, sim, snaps


def run_macro_study(cfg: StudyConfig):
    layout = InterfaceLayout(n_sigma=cfg.n_sigma, m=cfg.m)
    sim = MacroSimulation(cfg.cell, float(cfg.H), layout, cfg.diffusion, cfg.kinetics)
    snaps = sim.run(cfg.initial, cfg.T, cfg.dt, cfg.snapshot_stride)
    return sim, snaps


def compute_report(cfg: StudyConfig, micro_runs, macro_sim, macro_snaps) -> TwoScaleReport:
    """Error norms and diagnostics from trajectories (used by run and report)."""
    cell_grid = build_cell_grid(cfg.cell, cfg.m)
    trace_const = calibrate_trace_constant(cell_grid)
    rep = TwoScaleReport([], [], [], [], [], [], [])
    for eps, (geom, grid, snaps) in zip(cfg.epsilons, micro_runs):
        uf = Unfolder(geom, grid, cell_grid)
        errs = ts_error(snaps, macro_snaps, uf, macro_sim)
        ratio, _, _ = shift_diagnostic(snaps, geom, grid, cfg.shift_l, cfg.shift_h)
        lhs, rhs = trace_inequality_diagnostic(
            snaps[-1].u, cfg.theta, uf, constant=trace_const
        )
        rep.eps.append(float(eps))
        rep.e_chan.append(errs["E_chan"])
        rep.e_bulk_plus.append(errs["E_bulk_plus"])
        rep.e_bulk_minus.append(errs["E_bulk_minus"])
        rep.e_wall.append(errs["E_N"])
        rep.apriori.append(apriori_norm(snaps))
        rep.shift_ratio.append(ratio)
        rep.trace_ratio.append(lhs / rhs if rhs > 0 else 0.0)
    return rep


REPORT_HEADER = "eps,E_chan,E_bulk_plus,E_bulk_minus,E_N,apriori_norm,shift_ratio"


def report_csv_text(rep: TwoScaleReport) -> str:
    lines = [REPORT_HEADER]
    for row in rep.rows():
        lines.append(",".join(_fmt(x) for x in row))
    return "\n".join(lines) + "\n"


# -- field CSV serialization -------------------------------------------------

def micro_field_csv(grid, state: MicroState) -> str:
    lines = ["xbar,xn,region,value"]
    for x, y, tag, v in zip(grid.cell_x, grid.cell_y, grid.cell_tag, state.values):
        lines.append(f"{_fmt(x)},{_fmt(y)},{_TAG_NAMES[int(tag)]},{_fmt(v)}")
    return "\n".join(lines) + "\n"


def macro_bulk_csv(sim: MacroSimulation, state: MacroState) -> str:
    lines = ["xbar,xn,region,value"]
    for g, vals, name in (
        (sim.grid_p, state.bulk_plus, "bulk+"),
        (sim.grid_m, state.bulk_minus, "bulk-"),
    ):
        for x, y, v in zip(g.cell_x, g.cell_y, vals):
            lines.append(f"{_fmt(x)},{_fmt(y)},{name},{_fmt(v)}")
    return "\n".join(lines) + "\n"


def macro_cells_csv(sim: MacroSimulation, state: MacroState) -> str:
    lines = ["node,xbar_node,ybar,yn,value"]
    cg = sim.cell_grid
    for j, xb in enumerate(sim.layout.nodes):
        for yb, yn, v in zip(cg.cell_x, cg.cell_y, state.cells[j]):
            lines.append(f"{j},{_fmt(xb)},{_fmt(yb)},{_fmt(yn)},{_fmt(v)}")
    return "\n".join(lines) + "\n"


def macro_traces_csv(sim: MacroSimulation, state: MacroState) -> str:
    lines = ["node,xbar_node,v_plus,v_minus,F_plus,F_minus"]
    fp, fm = sim.cell_flux(state)
    for j, xb in enumerate(sim.layout.nodes):
        lines.append(
            f"{j},{_fmt(xb)},{_fmt(state.v_plus[j])},{_fmt(state.v_minus[j])},"
            f"{_fmt(fp[j])},{_fmt(fm[j])}"
        )
    return "\n".join(lines) + "\n"


def _read_csv_column(text, column):
    lines = text.strip().split("\n")
    header = lines[0].split(",")
    idx = header.index(column)
    return np.array([float(line.split(",")[idx]) for line in lines[1:]])


# -- manifest ----------------------------------------------------------------

def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class StudyWriter:
    def __init__(self, out_dir):
        self.out = Path(out_dir)
        (self.out / "fields").mkdir(parents=True, exist_ok=True)
        self.files = {}

    def write(self, relpath, text):
        data = text.encode()
        (self.out / relpath).write_bytes(data)
        self.files[str(relpath)] = _sha256(data)


def run_study(cfg: StudyConfig, out_dir=None, threads=1):
    """Full sweep: micro per eps, macro once, error report, files + manifest."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    writer = StudyWriter(out)
    timings = {}

    t0 = _time.perf_counter()
    macro_sim, macro_snaps = run_macro_study(cfg)
    timings["macro"] = _time.perf_counter() - t0

    def one_eps(eps):
        t = _time.perf_counter()
        geom, grid, sim, snaps = run_micro_study(cfg, eps)
        return eps, geom, grid, snaps, _time.perf_counter() - t

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one_eps, cfg.epsilons))
    else:
        results = [one_eps(e) for e in cfg.epsilons]

    micro_runs = []
    for eps, geom, grid, snaps, secs in results:
        timings[f"micro eps={eps}"] = secs
        micro_runs.append((geom, grid, snaps))
        for idx, state in enumerate(snaps):
            writer.write(
                f"fields/micro_eps{int(1 / eps)}_s{idx:04d}.csv",
                micro_field_csv(grid, state),
            )

    for idx, state in enumerate(macro_snaps):
        writer.write(f"fields/macro_bulk_s{idx:04d}.csv", macro_bulk_csv(macro_sim, state))
        writer.write(f"fields/macro_cells_s{idx:04d}.csv", macro_cells_csv(macro_sim, state))
        writer.write(f"fields/macro_traces_s{idx:04d}.csv", macro_traces_csv(macro_sim, state))

    rep = compute_report(cfg, micro_runs, macro_sim, macro_snaps)
    writer.write("report.csv", report_csv_text(rep))

    manifest = {
        "schema": SCHEMA_VERSION,
        "config": cfg.echo,
        "versions": _versions(),
        "snapshot_times": [s.t for s in macro_snaps],
        "timings": timings,
        "files": writer.files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return rep, manifest


def _versions():
    import platform
    import scipy

    from . import __version__

    return {
        "chanhom": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


# ---------------------------------------------------------------------------
# report re-derivation from stored fields

def rederive_report(study_dir):
    """Rebuild grids from the manifest's config echo, reload fields, recompute."""
    out = Path(study_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    cfg = parse_config(manifest["config"])
    times = manifest["snapshot_times"]

    layout = InterfaceLayout(n_sigma=cfg.n_sigma, m=cfg.m)
    macro_sim = MacroSimulation(cfg.cell, float(cfg.H), layout, cfg.diffusion, cfg.kinetics)
    macro_snaps = []
    for idx, t in enumerate(times):
        u = np.zeros(macro_sim.n)
        bulk = (out / f"fields/macro_bulk_s{idx:04d}.csv").read_text()
        vals = _read_csv_column(bulk, "value")
        u[: macro_sim.nbp] = vals[: macro_sim.nbp]
        u[macro_sim.nbp : macro_sim.ovp] = vals[macro_sim.nbp :]
        traces = (out / f"fields/macro_traces_s{idx:04d}.csv").read_text()
        u[macro_sim.ovp : macro_sim.ovm] = _read_csv_column(traces, "v_plus")
        u[macro_sim.ovm : macro_sim.oc] = _read_csv_column(traces, "v_minus")
        cells = (out / f"fields/macro_cells_s{idx:04d}.csv").read_text()
        u[macro_sim.oc :] = _read_csv_column(cells, "value")
        macro_snaps.append(MacroState(t=t, u=u, dt=cfg.dt, sim=macro_sim))

    micro_runs = []
    for eps in cfg.epsilons:
        geom = build_micro_geometry(eps, cfg.H, cfg.cell)
        grid = build_micro_grid(geom, cfg.k)
        snaps = []
        for idx, t in enumerate(times):
            text = (out / f"fields/micro_eps{int(1/eps)}_s{idx:04d}.csv").read_text()
            vals = _read_csv_column(text, "value")
            snaps.append(MicroState(t=t, u=Field(grid, vals, time=t), dt=cfg.dt))
        micro_runs.append((geom, grid, snaps))

    rep = compute_report(cfg, micro_runs, macro_sim, macro_snaps)
    (out / "report.csv").write_text(report_csv_text(rep))
    return rep


# ---------------------------------------------------------------------------
# operator identity verification

def _chan_face_map(uf: Unfolder):
    """Channel-channel micro faces paired with their reference-cell distances."""
    grid, cg = uf.grid, uf.cell_grid
    pos = {int(c): i for i, c in enumerate(uf.chan_ids)}
    inv = {
        int(c): (col, i)
        for col in range(uf.columns.shape[0])
        for i, c in enumerate(uf.columns[col])
    }
    ref_dist = {}
    for fs in cg.faces:
        for a, b, da, db in zip(fs.a, fs.b, fs.dist_a, fs.dist_b):
            if cg.cell_tag[a] == CHAN and cg.cell_tag[b] == CHAN:
                ref_dist[(pos[int(a)], pos[int(b)])] = float(da + db)
    rows = []
    for fs in grid.faces:
        for a, b, da, db in zip(fs.a, fs.b, fs.dist_a, fs.dist_b):
            if grid.cell_tag[a] != CHAN or grid.cell_tag[b] != CHAN:
                continue
            col, ia = inv[int(a)]
            col_b, ib = inv[int(b)]
            if col != col_b:
                continue
            rows.append((int(a), int(b), col, ia, ib, float(da + db), ref_dist[(ia, ib)]))
    a, b, col, ia, ib, dmic, dref = (np.array(x) for x in zip(*rows))
    return a.astype(int), b.astype(int), col.astype(int), ia.astype(int), ib.astype(int), dmic, dref


def verify_operators(cfg: StudyConfig, n_fields=100, tol=1e-12):
    """Max relative residual of the unfolding identities over random fields."""
    rng = np.random.default_rng(cfg.seed)
    cell_grid = build_cell_grid(cfg.cell, cfg.m)
    worst = {}
    for eps in cfg.epsilons:
        geom = build_micro_geometry(eps, cfg.H, cfg.cell)
        grid = build_micro_grid(geom, cfg.k)
        uf = Unfolder(geom, grid, cell_grid)
        chan = grid.cell_tag == CHAN
        fa, fb, fcol, fia, fib, dmic, dref = _chan_face_map(uf)
        res = dict.fromkeys(
            ("inner_product", "boundary_norm", "gradient_commutation", "adjoint", "round_trip"),
            0.0,
        )
        inv_eps = 1.0 / float(eps)
        for _ in range(n_fields):
            v = Field(grid, rng.normal(size=grid.n_cells))
            w = Field(grid, rng.normal(size=grid.n_cells))
            tv = uf.unfold(v)

            # residuals are measured against the Cauchy-Schwarz scale of the
            # pairing; the raw value of a random inner product can cancel
            lhs = uf.ts_inner(tv, uf.unfold(w))
            rhs = inv_eps * float(np.dot(grid.cell_vol[chan], v.values[chan] * w.values[chan]))
            nv = np.sqrt(inv_eps * float(np.dot(grid.cell_vol[chan], v.values[chan] ** 2)))
            nw = np.sqrt(inv_eps * float(np.dot(grid.cell_vol[chan], w.values[chan] ** 2)))
            res["inner_product"] = max(res["inner_product"], abs(lhs - rhs) / (nv * nw))

            tr = uf.wall_trace(v)
            tb = uf.unfold_boundary(tr)
            lhs = uf.wall_inner(tb, tb)
            rhs = uf.wall_norm_sq_micro(tr)
            res["boundary_norm"] = max(res["boundary_norm"], abs(lhs - rhs) / abs(rhs))

            lhs_g = (tv.values[fcol, fib] - tv.values[fcol, fia]) / dref
            rhs_g = float(eps) * (v.values[fb] - v.values[fa]) / dmic
            scale = np.maximum(np.maximum(np.abs(lhs_g), np.abs(rhs_g)), 1e-300)
            res["gradient_commutation"] = max(
                res["gradient_commutation"], float(np.max(np.abs(lhs_g - rhs_g) / scale))
            )

            phi = TwoScaleField(
                eps=uf.eps, cell_grid=uf.cell_grid, values=rng.normal(size=uf.columns.shape)
            )
            lhs = uf.ts_inner(tv, phi)
            rhs = inv_eps * float(
                np.dot(grid.cell_vol[chan], v.values[chan] * uf.average(phi).values[chan])
            )
            res["adjoint"] = max(res["adjoint"], abs(lhs - rhs) / (nv * uf.ts_norm(phi)))

            back = uf.average(tv)
            num = float(np.max(np.abs(back.values[chan] - v.values[chan])))
            den = float(np.max(np.abs(v.values[chan]))) or 1.0
            res["round_trip"] = max(res["round_trip"], num / den)
        worst[str(eps)] = res
    flat_max = max(v for res in worst.values() for v in res.values())
    return worst, flat_max, flat_max <= tol
