"""Run configuration, ensemble CSV files, synthetic data and archive persistence.

Dataset CSV: one row per grid box with columns ``location, grid_x, grid_y,
latitude, longitude, elevation`` followed by ``run{r}_var{j}`` (1-based) for
every member and variable.  Covariates are z-scored on load and become the
fixed-effect design; the random-effect design is a single intercept column.

The binary archive layout is documented in ``docs/archive_format.md``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from mvmrf import __version__
from mvmrf.errors import ArchiveFormatError, ConfigError, DataError
from mvmrf.lattice import AdjacencyOrder, GridLattice, StackedLattice, build_grid_lattice
from mvmrf.model import EnsembleDataset, PriorSpec, standardize
from mvmrf.precision import (
    DependenceParams,
    assemble_precision,
    check_positive_definite,
    param_names,
)
from mvmrf.sampler import PosteriorArchive, SamplerConfig, mh_param_names
from mvmrf.sparse_chol import factorize, sample_gmrf

COVARIATE_COLUMNS = ("latitude", "longitude", "elevation")
BASE_COLUMNS = ("location", "grid_x", "grid_y") + COVARIATE_COLUMNS


def atomic_write(path: str | os.PathLike, data: bytes | str) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnalysisSpec:
    # "VAR:DIRECTION:THRESHOLD" with THRESHOLD a number or "median"
    probabilities: tuple[str, ...] = ()
    # each entry is a tuple of the same condition strings, all of which must hold
    joint: tuple[tuple[str, ...], ...] = ()
    clusters: int = 0
    linkage: str = "average"
    contour_boxes: tuple[int, ...] = ()
    contour_level: float = 0.95
    contour_resolution: int = 64
    # dicts with cond_var, target_var, target_event ("lower"/"upper"), scope
    conditional: tuple[dict, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["probabilities"] = list(self.probabilities)
        d["joint"] = [list(j) for j in self.joint]
        d["contour_boxes"] = list(self.contour_boxes)
        d["conditional"] = [dict(c) for c in self.conditional]
        return d


@dataclass(frozen=True)
class SimulationSpec:
    m: int = 3
    seed: int = 0
    alpha: tuple = ()
    beta_bar: tuple = ()
    sigma2: tuple = ()
    sigma2_b: float = 0.1
    dep: dict = field(default_factory=dict)
    tau2: tuple = ()
    h_bar_sd: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("alpha", "beta_bar", "sigma2", "tau2"):
            d[k] = np.asarray(d[k], dtype=float).tolist()
        return d


@dataclass(frozen=True)
class RunConfig:
    nx: int
    ny: int
    order: str = AdjacencyOrder.ROOK.value
    variables: tuple[dict, ...] = ()
    dataset: str | None = None
    output: str = "out"
    prior: PriorSpec = field(default_factory=PriorSpec)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    simulate: SimulationSpec | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    @property
    def p(self) -> int:
        return len(self.variables)

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(v["name"] for v in self.variables)

    def lattice(self) -> StackedLattice:
        return StackedLattice(build_grid_lattice(self.nx, self.ny, self.order), self.p)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path

    def to_dict(self) -> dict:
        prior = asdict(self.prior)
        prior["dep_box"] = self.prior.box(self.p)
        prior["dep_box"] = {k: list(v) for k, v in prior["dep_box"].items()}
        return {
            "lattice": {"nx": self.nx, "ny": self.ny, "order": self.order},
            "variables": [dict(v) for v in self.variables],
            "dataset": self.dataset,
            "prior": prior,
            "sampler": self.sampler.to_dict(),
            "analysis": self.analysis.to_dict(),
            "simulate": None if self.simulate is None else self.simulate.to_dict(),
        }

    def hash(self) -> str:
        """sha256 of the canonical effective config; the output directory is not part of it."""
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()

    def with_overrides(self, *, seed: int | None = None, chains: int | None = None,
                       output: str | None = None) -> "RunConfig":
        sampler = self.sampler
        if seed is not None or chains is not None:
            sampler = SamplerConfig(**{
                **self.sampler.to_dict(),
                **({"seed": seed} if seed is not None else {}),
                **({"n_chains": chains} if chains is not None else {}),
            })
        kw = {**{f: getattr(self, f) for f in self.__dataclass_fields__}, "sampler": sampler}
        if output is not None:
            kw["output"] = output
        return RunConfig(**kw)


def _section(raw: dict, key: str, cls, allowed_types=dict):
    sub = raw.get(key) or {}
    if not isinstance(sub, allowed_types):
        raise ConfigError(f"'{key}' must be a mapping")
    try:
        return cls(**sub)
    except TypeError as exc:
        raise ConfigError(f"bad '{key}' section: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad '{key}' section: {exc}") from exc


def parse_config(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    known = {"lattice", "variables", "dataset", "output", "prior", "sampler", "analysis", "simulate"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    lat = raw.get("lattice")
    if not isinstance(lat, dict) or "nx" not in lat or "ny" not in lat:
        raise ConfigError("'lattice' must give nx and ny")
    variables = raw.get("variables") or [{"name": "var1"}]
    variables = tuple({"name": str(v["name"]), "unit": str(v.get("unit", ""))} if isinstance(v, dict)
                      else {"name": str(v), "unit": ""} for v in variables)
    try:
        nx, ny = int(lat["nx"]), int(lat["ny"])
        order = AdjacencyOrder(lat.get("order", AdjacencyOrder.ROOK.value)).value
        build_grid_lattice(nx, ny, order)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad lattice: {exc}") from exc
    p = len(variables)
    prior = _section(raw, "prior", PriorSpec)
    if prior.dep_box is not None:
        try:
            box = {k: (float(v[0]), float(v[1])) for k, v in prior.dep_box.items()}
            missing = set(param_names(p)) - set(box)
            if missing or set(box) - set(param_names(p)):
                raise ValueError(f"dep_box must name exactly {param_names(p)}")
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"bad prior.dep_box: {exc}") from exc
        prior = PriorSpec(**{**asdict(prior), "dep_box": box})
    sampler_raw = dict(raw.get("sampler") or {})
    if p != 2 and "joint_block" not in sampler_raw:
        sampler_raw["joint_block"] = ()
    sampler = _section({"sampler": sampler_raw}, "sampler", SamplerConfig)
    bad = set(sampler.joint_block) - set(mh_param_names(p))
    if bad:
        raise ConfigError(f"sampler.joint_block names unknown parameters {sorted(bad)}")
    analysis_raw = dict(raw.get("analysis") or {})
    for key in ("probabilities", "contour_boxes", "conditional"):
        if key in analysis_raw:
            analysis_raw[key] = tuple(analysis_raw[key])
    if "joint" in analysis_raw:
        analysis_raw["joint"] = tuple(tuple(j) for j in analysis_raw["joint"])
    analysis = _section({"analysis": analysis_raw}, "analysis", AnalysisSpec)
    simulate = None
    if raw.get("simulate") is not None:
        simulate = _section(raw, "simulate", SimulationSpec)
    cfg = RunConfig(
        nx=nx, ny=ny, order=order, variables=variables,
        dataset=raw.get("dataset"), output=str(raw.get("output", "out")),
        prior=prior, sampler=sampler, analysis=analysis, simulate=simulate,
        base_dir=Path(base_dir),
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    n = cfg.nx * cfg.ny
    for spec in cfg.analysis.probabilities:
        parse_condition(spec, cfg.p)
    for group in cfg.analysis.joint:
        for spec in group:
            parse_condition(spec, cfg.p)
    if cfg.analysis.clusters < 0 or cfg.analysis.clusters > n:
        raise ConfigError(f"analysis.clusters must lie in [0, {n}]")
    if cfg.analysis.linkage not in ("average", "complete"):
        raise ConfigError("analysis.linkage must be 'average' or 'complete'")
    if any(not 0 <= b < n for b in cfg.analysis.contour_boxes):
        raise ConfigError(f"analysis.contour_boxes must index grid boxes in [0, {n})")
    if cfg.analysis.contour_boxes and cfg.p != 2:
        raise ConfigError("contours need exactly two variables")
    if not 0 < cfg.analysis.contour_level < 1:
        raise ConfigError("analysis.contour_level must lie in (0, 1)")
    for c in cfg.analysis.conditional:
        try:
            if not (0 <= int(c["cond_var"]) < cfg.p and 0 <= int(c["target_var"]) < cfg.p):
                raise ConfigError("conditional variables out of range")
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad conditional spec {c}: {exc}") from exc
    if cfg.dataset is not None:
        path = cfg.resolve(cfg.dataset)
        if cfg.simulate is None and not path.exists():
            raise ConfigError(f"dataset {path} does not exist")
    if cfg.simulate is not None:
        truth_from_spec(cfg.simulate, cfg.p)


def load_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_config(raw, path.parent)


def parse_condition(spec: str, p: int) -> tuple[int, str, float | str]:
    """Parse ``"VAR:DIRECTION:THRESHOLD"`` (e.g. ``"0:above:median"``)."""
    parts = str(spec).split(":")
    if len(parts) != 3:
        raise ConfigError(f"condition {spec!r} must look like VAR:DIRECTION:THRESHOLD")
    var_s, direction, thr = parts
    try:
        var = int(var_s)
    except ValueError as exc:
        raise ConfigError(f"condition {spec!r}: variable must be an integer index") from exc
    if not 0 <= var < p:
        raise ConfigError(f"condition {spec!r}: variable index out of range for p={p}")
    if direction not in ("above", "below"):
        raise ConfigError(f"condition {spec!r}: direction must be 'above' or 'below'")
    if thr != "median":
        try:
            thr = float(thr)
        except ValueError as exc:
            raise ConfigError(f"condition {spec!r}: threshold must be a number or 'median'") from exc
    return var, direction, thr


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def synthetic_covariates(grid: GridLattice) -> np.ndarray:
    """Deterministic (latitude, longitude, elevation) for a synthetic grid."""
    idx = np.arange(grid.n)
    col, row = idx % grid.nx, idx // grid.nx
    lat = 30.0 + 0.5 * row
    lon = -125.0 + 0.5 * col
    elev = 1500.0 + 800.0 * np.sin(col / 3.0) * np.cos(row / 4.0) + 5.0 * col
    return np.column_stack([lat, lon, elev])


def dataset_from_covariates(lattice: StackedLattice, y: np.ndarray, covariates: np.ndarray,
                            variable_names=()) -> EnsembleDataset:
    return EnsembleDataset(
        lattice=lattice,
        y=y,
        X1=standardize(covariates),
        X2=np.ones((lattice.n, 1)),
        variable_names=tuple(variable_names),
        covariates=np.asarray(covariates, dtype=np.float64),
    )


def write_ensemble(path: str | os.PathLike, data: EnsembleDataset) -> None:
    cov = data.covariates if data.covariates is not None else synthetic_covariates(data.lattice.grid)
    header = list(BASE_COLUMNS) + [f"run{r + 1}_var{j + 1}" for r in range(data.m) for j in range(data.p)]
    lines = [",".join(header)]
    grid = data.lattice.grid
    for i in range(data.n):
        gx, gy = grid.coords(i)
        vals = [str(i), str(gx), str(gy)] + [repr(float(v)) for v in cov[i]]
        vals += [repr(float(data.y[r, j, i])) for r in range(data.m) for j in range(data.p)]
        lines.append(",".join(vals))
    atomic_write(path, "\n".join(lines) + "\n")


def load_ensemble(path: str | os.PathLike, config: RunConfig | None = None, *,
                  nx: int | None = None, ny: int | None = None, p: int | None = None) -> EnsembleDataset:
    """Read and validate an ensemble CSV; dimensions come from ``config`` or keywords."""
    if config is not None:
        nx, ny, p = config.nx, config.ny, config.p
        order = config.order
        names = config.variable_names
    else:
        order, names = AdjacencyOrder.ROOK.value, ()
    if nx is None or ny is None or p is None:
        raise ValueError("load_ensemble needs nx, ny and p (or a config)")
    grid = build_grid_lattice(nx, ny, order)
    n = grid.n
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise DataError(f"dataset {path} not found") from exc
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if tuple(header[: len(BASE_COLUMNS)]) != BASE_COLUMNS:
        raise DataError(f"{path}: header must start with {','.join(BASE_COLUMNS)}")
    resp = header[len(BASE_COLUMNS):]
    if len(resp) == 0 or len(resp) % p:
        raise DataError(f"{path}: {len(resp)} response columns is not a multiple of p={p}")
    m = len(resp) // p
    expected = [f"run{r + 1}_var{j + 1}" for r in range(m) for j in range(p)]
    if resp != expected:
        raise DataError(f"{path}: response columns must be {','.join(expected)}")
    body = [r for r in rows[1:] if r]
    cov = np.full((n, 3), np.nan)
    y = np.full((m, p, n), np.nan)
    seen = np.zeros(n, dtype=bool)
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            i, gx, gy = int(row[0]), int(row[1]), int(row[2])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: location/grid_x/grid_y must be integers") from exc
        if not 0 <= i < n:
            raise DataError(f"{path}:{lineno}: location {i} outside [0, {n})")
        if seen[i]:
            raise DataError(f"{path}:{lineno}: duplicate row for grid box {i}")
        if grid.coords(i) != (gx, gy):
            raise DataError(f"{path}:{lineno}: grid box {i} should be at (x={grid.coords(i)[0]}, "
                            f"y={grid.coords(i)[1]}), file says ({gx}, {gy})")
        seen[i] = True
        values = []
        for col, raw in zip(header[3:], row[3:]):
            try:
                v = float(raw)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: grid box {i} field {col!r} is not a number") from exc
            if not math.isfinite(v):
                raise DataError(f"{path}:{lineno}: grid box {i} field {col!r} is not finite ({raw})")
            values.append(v)
        cov[i] = values[:3]
        y[:, :, i] = np.asarray(values[3:]).reshape(m, p)
    if not seen.all():
        missing = np.flatnonzero(~seen)
        raise DataError(f"{path}: missing grid boxes {missing[:10].tolist()}"
                        + (" ..." if missing.size > 10 else ""))
    return dataset_from_covariates(StackedLattice(grid, p), y, cov, names)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationTruth:
    alpha: np.ndarray
    beta_bar: np.ndarray
    sigma2: np.ndarray
    sigma2_b: float
    dep: DependenceParams
    h_bar_sd: float = 0.0
    include_spatial: bool = True

    def to_dict(self) -> dict:
        return {
            "alpha": np.asarray(self.alpha).tolist(),
            "beta_bar": np.asarray(self.beta_bar).tolist(),
            "sigma2": np.asarray(self.sigma2).tolist(),
            "sigma2_b": float(self.sigma2_b),
            "dep": self.dep.as_dict(),
            "h_bar_sd": float(self.h_bar_sd),
            "include_spatial": self.include_spatial,
        }


def truth_from_spec(spec: SimulationSpec, p: int) -> SimulationTruth:
    names = param_names(p)
    try:
        theta = [float(spec.dep.get(nm, 0.0)) for nm in names]
        unknown = set(spec.dep) - set(names)
        if unknown:
            raise ValueError(f"unknown dependence parameters {sorted(unknown)}")
        tau2 = np.asarray(spec.tau2 or np.ones(p), dtype=float)
        dep = DependenceParams.from_vector(theta, tau2)
        alpha = np.asarray(spec.alpha or np.zeros((p, 3)), dtype=float).reshape(p, -1)
        beta_bar = np.asarray(spec.beta_bar or np.zeros((p, 1)), dtype=float).reshape(p, -1)
        sigma2 = np.asarray(spec.sigma2 or np.ones(p), dtype=float).reshape(p)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad simulate section: {exc}") from exc
    if alpha.shape[1] != 3 or beta_bar.shape[1] != 1:
        raise ConfigError("simulate.alpha must be p x 3 and simulate.beta_bar p x 1")
    if spec.m < 1:
        raise ConfigError("simulate.m must be at least 1")
    return SimulationTruth(alpha, beta_bar, sigma2, float(spec.sigma2_b), dep, float(spec.h_bar_sd))


def simulate_dataset(truth: SimulationTruth, lattice: StackedLattice, m: int, seed: int,
                     variable_names=(), covariates: np.ndarray | None = None
                     ) -> tuple[EnsembleDataset, dict]:
    """Forward-simulate an ensemble from the hierarchical model.

    Returns the dataset and a truth record (parameters plus the drawn
    ``h_bar``, ``beta_r`` and ``h_r``) for recovery checks.
    """
    p, n = lattice.p, lattice.n
    alpha = np.asarray(truth.alpha, dtype=float)
    beta_bar = np.asarray(truth.beta_bar, dtype=float)
    sigma2 = np.asarray(truth.sigma2, dtype=float)
    if truth.dep.p != p or alpha.shape[0] != p or beta_bar.shape[0] != p or sigma2.shape != (p,):
        raise ValueError("truth parameters do not match the lattice's number of variables")
    if np.any(sigma2 < 0) or truth.sigma2_b < 0 or truth.h_bar_sd < 0:
        raise ValueError("variances must be non-negative")
    if m < 1:
        raise ValueError("m must be at least 1")
    rng = np.random.default_rng(seed)
    cov = synthetic_covariates(lattice.grid) if covariates is None else np.asarray(covariates, float)
    X1 = standardize(cov)
    X2 = np.ones((n, 1))
    if alpha.shape[1] != X1.shape[1]:
        raise ValueError(f"alpha has {alpha.shape[1]} columns, covariates have {X1.shape[1]}")

    h_bar = truth.h_bar_sd * rng.standard_normal(lattice.dim)
    beta_r = beta_bar[None] + math.sqrt(truth.sigma2_b) * rng.standard_normal((m, p, beta_bar.shape[1]))
    if truth.include_spatial:
        Q = assemble_precision(lattice, truth.dep)
        fac = factorize(Q)
        if fac is None:
            raise ValueError("truth dependence parameters do not give a positive-definite precision")
        h_r = sample_gmrf(fac, h_bar, rng, size=m)
    else:
        h_r = np.tile(h_bar, (m, 1))
    mean = (alpha @ X1.T)[None] + np.einsum("nq,mpq->mpn", X2, beta_r) + lattice.unstack(h_r)
    noise = rng.standard_normal((m, p, n)) * np.sqrt(sigma2)[None, :, None]
    y = mean + noise
    data = dataset_from_covariates(lattice, y, cov, variable_names)
    record = truth.to_dict()
    record.update({
        "m": m,
        "seed": seed,
        "nx": lattice.grid.nx,
        "ny": lattice.grid.ny,
        "p": p,
        "h_bar": h_bar.tolist(),
        "beta_r": beta_r.tolist(),
        "h_r": h_r.tolist(),
    })
    return data, record


def check_truth_valid(truth: SimulationTruth, lattice: StackedLattice) -> bool:
    return check_positive_definite(assemble_precision(lattice, truth.dep))


# ---------------------------------------------------------------------------
# archive files
# ---------------------------------------------------------------------------

ARCHIVE_MAGIC = b"MVMRFARC"
FOOTER_MAGIC = b"MVMRFEND"
ARCHIVE_VERSION = 1


def archive_to_bytes(archive: PosteriorArchive, config: RunConfig | dict | None = None) -> bytes:
    cfg = config.to_dict() if isinstance(config, RunConfig) else config
    header = {
        "format_version": ARCHIVE_VERSION,
        "created_by": f"mvmrf {__version__}",
        "meta": archive.meta,
        "config": cfg,
        "config_hash": hashlib.sha256(canonical_json(cfg).encode()).hexdigest() if cfg is not None else None,
        "groups": sorted(archive.groups),
    }
    hbytes = canonical_json(header).encode("utf-8")
    parts = [ARCHIVE_MAGIC, struct.pack("<B", ARCHIVE_VERSION), struct.pack("<Q", len(hbytes)), hbytes]
    names = sorted(archive.groups)
    parts.append(struct.pack("<I", len(names)))
    rows = []
    for name in names:
        g = np.asarray(archive.groups[name], dtype="<f8")
        k, s, c = g.shape
        nb = name.encode("utf-8")
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<III", k, s, c)]
        # column-major: each column's k*s samples are contiguous
        parts.append(np.ascontiguousarray(g.reshape(k * s, c).T).tobytes())
        rows.append(k * s)
    body = b"".join(parts)
    footer = [FOOTER_MAGIC, struct.pack("<I", len(names))]
    footer += [struct.pack("<Q", r) for r in rows]
    footer.append(hashlib.sha256(body).digest())
    return body + b"".join(footer)


def archive_from_bytes(buf: bytes) -> tuple[PosteriorArchive, dict]:
    """Parse archive bytes; returns the archive and the full header."""
    if len(buf) < 17 or buf[:8] != ARCHIVE_MAGIC:
        raise ArchiveFormatError("not an mvmrf archive (bad magic)")
    version = buf[8]
    if version != ARCHIVE_VERSION:
        raise ArchiveFormatError(f"unsupported archive version {version}")
    try:
        (hlen,) = struct.unpack_from("<Q", buf, 9)
        pos = 17
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (ng,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        groups = {}
        for _ in range(ng):
            (nl,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nl].decode("utf-8")
            pos += nl
            k, s, c = struct.unpack_from("<III", buf, pos)
            pos += 12
            nbytes = 8 * k * s * c
            if pos + nbytes > len(buf):
                raise ArchiveFormatError("archive truncated inside a data block")
            cols = np.frombuffer(buf, dtype="<f8", count=k * s * c, offset=pos).reshape(c, k * s)
            groups[name] = cols.T.reshape(k, s, c).astype(np.float64)
            pos += nbytes
        body_end = pos
        if buf[pos:pos + 8] != FOOTER_MAGIC:
            raise ArchiveFormatError("missing footer")
        pos += 8
        (nf,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        counts = struct.unpack_from(f"<{nf}Q", buf, pos)
        pos += 8 * nf
        digest = buf[pos:pos + 32]
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveFormatError(f"corrupt archive: {exc}") from exc
    if pos + 32 != len(buf):
        raise ArchiveFormatError("trailing bytes after footer")
    if hashlib.sha256(buf[:body_end]).digest() != digest:
        raise ArchiveFormatError("checksum mismatch")
    if nf != ng or list(counts) != [g.shape[0] * g.shape[1] for g in (groups[n] for n in sorted(groups))]:
        raise ArchiveFormatError("footer sample counts do not match the payload")
    meta = header["meta"]
    for g in groups.values():
        if g.shape[:2] != (meta["n_chains"], meta["n_saved"]):
            raise ArchiveFormatError("header dimensions do not match the payload")
    return PosteriorArchive(groups, meta), header


def write_archive(path: str | os.PathLike, archive: PosteriorArchive,
                  config: RunConfig | dict | None = None) -> None:
    atomic_write(path, archive_to_bytes(archive, config))


def read_archive(path: str | os.PathLike) -> tuple[PosteriorArchive, dict]:
    try:
        buf = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise ArchiveFormatError(f"archive {path} not found") from exc
    return archive_from_bytes(buf)
