"""File formats: datasets, ground truth, basis caches, posterior outputs,
cluster tables, and PGM map rendering.

All binary blocks are raw little-endian values with documented layouts, so
outputs are bit-exact and reproducible across platforms.  Dataset arrays are
stored subject-major (subject is the slow axis, masked-voxel index the fast
axis); masks are one byte per lattice point in scan order with the last axis
fastest.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .kernels import KLBasis, select_truncation
from .types import GridDomain, HyperParams, ImageDataset

__all__ = [
    "write_dataset", "read_dataset",
    "write_truth", "read_truth",
    "grid_hash", "save_basis", "load_basis",
    "save_posterior", "load_summary_arrays",
    "write_pgm", "write_cluster_csv", "write_metrics_csv",
]


def _write_f64(path: Path, arr: np.ndarray):
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_f64(path: Path, shape) -> np.ndarray:
    data = np.frombuffer(path.read_bytes(), dtype="<f8")
    return data.reshape(shape).copy()


# ----------------------------------------------------------------- datasets

def write_dataset(out_dir, name: str, grid: GridDomain, ds: ImageDataset) -> Path:
    """Write a dataset as {name}.json plus raw mask/y1/y2 binaries."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = {
        "dims": list(grid.dims),
        "n": int(ds.n),
        "mask_file": f"{name}.mask.bin",
        "y1_file": f"{name}.y1.bin",
        "y2_file": f"{name}.y2.bin",
        "dtype": "f64le",
        "order": "subject-major",
    }
    (out_dir / header["mask_file"]).write_bytes(
        grid.mask.reshape(-1).astype(np.uint8).tobytes()
    )
    _write_f64(out_dir / header["y1_file"], ds.y1)
    _write_f64(out_dir / header["y2_file"], ds.y2)
    path = out_dir / f"{name}.json"
    path.write_text(json.dumps(header, indent=2) + "\n")
    return path


def read_dataset(header_path) -> tuple:
    """Read a dataset header and its binaries; returns (grid, dataset)."""
    header_path = Path(header_path)
    if not header_path.exists():
        raise FileNotFoundError(f"dataset header not found: {header_path}")
    header = json.loads(header_path.read_text())
    for key in ("dims", "n", "mask_file", "y1_file", "y2_file", "dtype", "order"):
        if key not in header:
            raise ValueError(f"dataset header missing key {key!r}: {header_path}")
    if header["dtype"] != "f64le" or header["order"] != "subject-major":
        raise ValueError("unsupported dataset encoding")
    dims = tuple(int(s) for s in header["dims"])
    base = header_path.parent
    mask_bytes = (base / header["mask_file"]).read_bytes()
    mask = np.frombuffer(mask_bytes, dtype=np.uint8).reshape(dims).astype(bool)
    grid = GridDomain.regular(dims, mask=mask)
    n = int(header["n"])
    y1 = _read_f64(base / header["y1_file"], (n, grid.m))
    y2 = _read_f64(base / header["y2_file"], (n, grid.m))
    return grid, ImageDataset(n=n, y1=y1, y2=y2, normalized=False)


# ----------------------------------------------------------------- truth

def write_truth(out_dir, name: str, truth) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = {
        "sign_file": f"{name}.sign.bin",
        "rho_file": f"{name}.rho.bin",
        "sign_dtype": "i8",
        "rho_dtype": "f64le",
        "m": int(truth.sign.size),
    }
    (out_dir / header["sign_file"]).write_bytes(truth.sign.astype(np.int8).tobytes())
    _write_f64(out_dir / header["rho_file"], truth.rho)
    path = out_dir / f"{name}.truth.json"
    path.write_text(json.dumps(header, indent=2) + "\n")
    return path


def read_truth(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"truth file not found: {path}")
    header = json.loads(path.read_text())
    base = path.parent
    sign = np.frombuffer((base / header["sign_file"]).read_bytes(), dtype=np.int8).copy()
    rho = _read_f64(base / header["rho_file"], (header["m"],))
    return {"sign": sign, "rho": rho}


# ------------------------------------------------------------- basis cache

def grid_hash(grid: GridDomain) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(grid.dims, dtype="<i8").tobytes())
    h.update(grid.mask.reshape(-1).astype(np.uint8).tobytes())
    h.update(np.ascontiguousarray(grid.coords, dtype="<f8").tobytes())
    return h.hexdigest()


def save_basis(prefix, basis: KLBasis, grid: GridDomain, hp: HyperParams):
    """Cache eigenpairs as {prefix}.json + {prefix}.bin (lambda, then psi
    column-by-column)."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "m": int(basis.m),
        "L": int(basis.L),
        "gamma1": float(hp.gamma1),
        "gamma2": float(hp.gamma2),
        "grid_hash": grid_hash(grid),
    }
    blob = np.concatenate([basis.lam, basis.psi.reshape(-1, order="F")])
    _write_f64(Path(str(prefix) + ".bin"), blob)
    Path(str(prefix) + ".json").write_text(json.dumps(header, indent=2) + "\n")


def load_basis(prefix, grid: GridDomain, hp: HyperParams) -> KLBasis | None:
    """Reload a cached basis when the header matches and it is long enough to
    reach the configured variance target; returns None otherwise."""
    prefix = Path(prefix)
    hpath = Path(str(prefix) + ".json")
    bpath = Path(str(prefix) + ".bin")
    if not (hpath.exists() and bpath.exists()):
        return None
    header = json.loads(hpath.read_text())
    if (header.get("m") != grid.m
            or header.get("gamma1") != hp.gamma1
            or header.get("gamma2") != hp.gamma2
            or header.get("grid_hash") != grid_hash(grid)):
        return None
    L_stored = int(header["L"])
    blob = np.frombuffer(bpath.read_bytes(), dtype="<f8")
    lam = blob[:L_stored].copy()
    psi = blob[L_stored:].reshape((grid.m, L_stored), order="F").copy()
    L = select_truncation(lam, hp.kl_variance_target)
    if lam[:L].sum() / lam.sum() + 1e-12 < hp.kl_variance_target:
        return None
    frac = float(lam[:L].sum() / lam.sum())
    return KLBasis(L=L, lam=lam[:L], psi=np.ascontiguousarray(psi[:, :L]),
                   variance_fraction=frac)


# -------------------------------------------------------- posterior outputs

def save_posterior(out_dir, name: str, samples, summary, grid: GridDomain,
                   diagnostics: dict | None = None) -> Path:
    """Write the kept-draw blocks, per-voxel summaries, and a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "c": f"{name}.c.bin",
        "omega": f"{name}.omega.bin",
        "rho": f"{name}.rho.bin",
        "pip_plus": f"{name}.pip_plus.bin",
        "pip_minus": f"{name}.pip_minus.bin",
        "mean_rho": f"{name}.mean_rho.bin",
        "sd_rho": f"{name}.sd_rho.bin",
        "sign": f"{name}.sign.bin",
        "log_joint": f"{name}.log_joint.bin",
        "mask": f"{name}.mask.bin",
    }
    _write_f64(out_dir / files["c"], samples.c)
    _write_f64(out_dir / files["omega"], samples.omega)
    _write_f64(out_dir / files["rho"], samples.rho)
    _write_f64(out_dir / files["pip_plus"], summary.pip_plus)
    _write_f64(out_dir / files["pip_minus"], summary.pip_minus)
    _write_f64(out_dir / files["mean_rho"], summary.mean_rho)
    _write_f64(out_dir / files["sd_rho"], summary.sd_rho)
    (out_dir / files["sign"]).write_bytes(summary.sign_map.astype(np.int8).tobytes())
    _write_f64(out_dir / files["log_joint"], samples.log_joint)
    (out_dir / files["mask"]).write_bytes(grid.mask.reshape(-1).astype(np.uint8).tobytes())
    manifest = {
        "version": 1,
        "n_kept": int(samples.n_kept),
        "L": int(samples.c.shape[1]),
        "m": int(summary.pip_plus.size),
        "dims": list(grid.dims),
        "pip_threshold": float(summary.pip_threshold),
        "layout": "kept-iteration-major, f64le",
        "files": files,
    }
    if diagnostics is not None:
        manifest["diagnostics"] = diagnostics
    path = out_dir / f"{name}.posterior.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_summary_arrays(manifest_path) -> dict:
    """Load the per-voxel summary blocks plus grid geometry from a manifest."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"posterior manifest not found: {manifest_path}")
    man = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    files = man["files"]
    m = int(man["m"])
    dims = tuple(int(s) for s in man["dims"])
    mask = np.frombuffer((base / files["mask"]).read_bytes(), dtype=np.uint8)
    out = {
        "dims": dims,
        "mask": mask.reshape(dims).astype(bool),
        "pip_plus": _read_f64(base / files["pip_plus"], (m,)),
        "pip_minus": _read_f64(base / files["pip_minus"], (m,)),
        "mean_rho": _read_f64(base / files["mean_rho"], (m,)),
        "sd_rho": _read_f64(base / files["sd_rho"], (m,)),
        "sign": np.frombuffer((base / files["sign"]).read_bytes(), dtype=np.int8).copy(),
        "pip_threshold": float(man.get("pip_threshold", 0.5)),
        "manifest": man,
    }
    return out


# ------------------------------------------------------------------- render

def write_pgm(path, image: np.ndarray):
    """Write one 8-bit grayscale image as binary PGM (P5)."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM rendering expects a 2-d image")
    img = np.clip(np.round(img), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_cluster_csv(path, report):
    lines = ["sign,size,center,mean_rho,sd_rho,mean_pip"]
    for cl in report:
        center = ";".join(f"{x:.6f}" for x in cl.center)
        lines.append(f"{cl.sign},{cl.size},{center},{cl.mean_rho:.6f},"
                     f"{cl.sd_rho:.6f},{cl.mean_pip:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_metrics_csv(path, results: dict):
    lines = ["sign,sensitivity,specificity,fdr,tp,fp,fn,tn"]
    for label, row in results.items():
        lines.append(f"{label},{row['sensitivity']:.6f},{row['specificity']:.6f},"
                     f"{row['fdr']:.6f},{row['tp']},{row['fp']},{row['fn']},{row['tn']}")
    Path(path).write_text("\n".join(lines) + "\n")
