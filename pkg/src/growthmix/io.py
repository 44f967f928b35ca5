"""File formats: cohort CSV, truth sidecar, draws container, manifests.

All writers format floats with shortest round-trip ``repr`` and fixed key
ordering so identical inputs and seeds reproduce identical bytes; the only
run-dependent manifest field is the wall-clock timing.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ChildRecord, Cohort

COHORT_HEADER = ["child_id", "age_years", "haz"]
HAZ_OUTLIER_BOUND = 6.0
DRAWS_MAGIC = b"GROWTHMIX-DRAWS-1\n"


class ValidationError(ValueError):
    """User-input problem; the CLI maps it to exit code 2."""


def _fmt(x) -> str:
    return repr(float(x))


def read_cohort_csv(path, horizon: float, n_knots: int,
                    allow_outliers: bool = False):
    """Parse a cohort CSV into a Cohort plus an ingestion report.

    Rows are ``child_id,age_years,haz``; order is free.  Ages strictly
    outside [0, horizon] are errors.  HAZ values outside +-6 are dropped
    (standard outlier screen) unless ``allow_outliers``; a child losing all
    rows is dropped with a warning in the report.
    """
    path = Path(path)
    by_child: dict[str, list[tuple[float, float]]] = {}
    seen_ids: set[str] = set()
    n_outliers = 0
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"{path}: cannot open ({exc})") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}:1: empty file") from None
        if [h.strip() for h in header] != COHORT_HEADER:
            raise ValidationError(
                f"{path}:1: expected header {','.join(COHORT_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            child_id = row[0].strip()
            if not child_id:
                raise ValidationError(f"{path}:{lineno}: empty child_id")
            try:
                age = float(row[1])
                haz = float(row[2])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric age or haz") from None
            if not (np.isfinite(age) and np.isfinite(haz)):
                raise ValidationError(f"{path}:{lineno}: non-finite age or haz")
            if age < 0.0 or age > horizon:
                raise ValidationError(
                    f"{path}:{lineno}: age {age} outside [0, {horizon}]")
            seen_ids.add(child_id)
            if not allow_outliers and abs(haz) > HAZ_OUTLIER_BOUND:
                n_outliers += 1
                continue
            by_child.setdefault(child_id, []).append((age, haz))

    dropped_children = sorted(seen_ids - set(by_child))
    children = []
    for cid, rows in by_child.items():
        if not rows:
            continue
        rows.sort()
        ages = np.array([r[0] for r in rows])
        haz = np.array([r[1] for r in rows])
        children.append(ChildRecord(cid, ages, haz))
    if not children:
        raise ValidationError(f"{path}: no usable observations")
    cohort = Cohort(tuple(children), horizon, n_knots)
    report = {
        "n_children": cohort.n_children,
        "n_rows": int(sum(ch.n_obs for ch in children)),
        "n_outliers_dropped": n_outliers,
        "children_dropped": dropped_children,
    }
    return cohort, report


def write_cohort_csv(path, cohort: Cohort) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(COHORT_HEADER)
        for child in cohort.children:
            for t, z in zip(child.times, child.haz):
                writer.writerow([child.child_id, _fmt(t), _fmt(z)])


def write_truth_csv(path, sim) -> None:
    """Truth sidecar: group label, intercept, velocities and the child's
    (random-regime) change points."""
    n_knots = sim.xi_random.shape[1]
    p = sim.beta.shape[1]
    header = (["child_id", "group"] + [f"beta_{k}" for k in range(p)]
              + [f"xi_{k}" for k in range(1, n_knots + 1)])
    header.insert(2, "alpha")
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for i, child in enumerate(sim.d_fixed.children):
            row = [child.child_id, str(int(sim.s_true[i])), _fmt(sim.alpha[i])]
            row += [_fmt(v) for v in sim.beta[i]]
            row += [_fmt(v) for v in sim.xi_random[i]]
            writer.writerow(row)


def read_truth_csv(path) -> dict[str, int]:
    """Map child_id -> true group label from a truth sidecar."""
    path = Path(path)
    out: dict[str, int] = {}
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0] != "child_id" or "group" not in header:
            raise ValidationError(f"{path}:1: not a truth sidecar")
        gcol = header.index("group")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out[row[0]] = int(row[gcol])
            except (ValueError, IndexError):
                raise ValidationError(f"{path}:{lineno}: malformed truth row") from None
    return out


# ---------------------------------------------------------------------------
# draws container: self-describing binary (JSON header + raw little-endian
# buffers) written via a single deterministic code path


def write_draws(path, output) -> None:
    """Serialise a ChainOutput to the draws container."""
    cfg = output.config
    arrays = {
        "s": output.s.astype("<i4"),
        "g": output.g.astype("<i4"),
        "alpha": output.alpha.astype("<f8"),
        "beta": output.beta.astype("<f8"),
        "xi": output.xi.astype("<f8"),
        "mu_alpha": output.mu_alpha.astype("<f8"),
        "sigma2_alpha": output.sigma2_alpha.astype("<f8"),
        "sigma2_eps": output.sigma2_eps.astype("<f8"),
        "lam": output.lam.astype("<f8"),
        "comp_mu": output.comp_mu.astype("<f8"),
        "comp_sigma": output.comp_sigma.astype("<f8"),
        "comp_weight": output.comp_weight.astype("<f8"),
        "comp_offsets": output.comp_offsets.astype("<i8"),
        "g_trace": output.g_trace.astype("<i4"),
        "knot_accept": output.knot_accept.astype("<f8"),
    }
    meta = {
        "child_ids": list(output.child_ids),
        "horizon": float(output.horizon),
        "n_knots": int(output.xi.shape[2]),
        "config": {
            "iterations": cfg.iterations, "burnin": cfg.burnin,
            "thin": cfg.thin, "seed": cfg.seed, "knot_mode": cfg.knot_mode,
            "fixed_knots": (list(map(float, cfg.fixed_knots))
                            if cfg.fixed_knots is not None else None),
        },
        "arrays": [
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}
            for name, arr in arrays.items()
        ],
    }
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as handle:
        handle.write(DRAWS_MAGIC)
        handle.write(len(header).to_bytes(8, "little"))
        handle.write(header)
        for arr in arrays.values():
            handle.write(np.ascontiguousarray(arr).tobytes())


def read_draws(path):
    """Read a draws container back into (arrays dict, metadata dict)."""
    path = Path(path)
    with path.open("rb") as handle:
        magic = handle.read(len(DRAWS_MAGIC))
        if magic != DRAWS_MAGIC:
            raise ValidationError(f"{path}: not a draws container")
        header_len = int.from_bytes(handle.read(8), "little")
        meta = json.loads(handle.read(header_len).decode("utf-8"))
        arrays = {}
        for spec in meta["arrays"]:
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            dtype = np.dtype(spec["dtype"])
            buf = handle.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise ValidationError(f"{path}: truncated array {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype=dtype).reshape(spec["shape"]).copy()
    return arrays, meta


# ---------------------------------------------------------------------------
# run manifests


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(outdir, command: str, config: dict, seed, inputs: dict,
                   outputs: list[str], timing_s: float,
                   extra: dict | None = None) -> Path:
    """Write the single manifest.json for an output directory."""
    from . import __version__

    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(k): sha256_file(v) for k, v in inputs.items()},
        "outputs": sorted(outputs),
        "versions": {
            "growthmix": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "timing_s": timing_s,
    }
    if extra:
        manifest.update(extra)
    path = Path(outdir) / "manifest.json"
    with path.open("w", encoding="utf-8") as handle:
        json.dump(manifest, handle, sort_keys=True, indent=2)
        handle.write("\n")
    return path


def write_table(path, header: list[str], rows) -> None:
    """CSV writer that formats floats reproducibly."""
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                _fmt(v) if isinstance(v, (float, np.floating)) else str(v)
                for v in row
            ])


# ---------------------------------------------------------------------------
# flat key = value config files (a small toml-like subset)


def parse_kv_config(path) -> dict:
    """Parse ``key = value`` lines: numbers, booleans, quoted strings and
    bracketed numeric lists; ``#`` starts a comment."""
    path = Path(path)
    out: dict = {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"{path}: cannot open ({exc})") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        out[key] = _parse_value(value, f"{path}:{lineno}")
    return out


def _parse_value(value: str, where: str):
    if value.startswith("[") and value.endswith("]"):
        body = value[1:-1].strip()
        if not body:
            return []
        return [_parse_scalar(part.strip(), where) for part in body.split(",")]
    return _parse_scalar(value, where)


def _parse_scalar(value: str, where: str):
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
        return value[1:-1]
    low = value.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        raise ValidationError(f"{where}: cannot parse value {value!r}") from None
