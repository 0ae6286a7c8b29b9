"""Download and cache the MNIST-family image datasets.

Both datasets are pulled from npm package tarballs, which mirror the
original files: ``mnist-data`` ships the four IDX files verbatim and
``fashion-mnist`` ships per-class JSON arrays of pixel values.  Everything is
converted to IDX under the data root (``$NES_LAB_DATA`` or
``~/.cache/nes_lab``).
"""

from __future__ import annotations

import io
import json
import logging
import os
import shutil
import tarfile
import urllib.request
from pathlib import Path

import numpy as np

from .datasets import Dataset, Provenance, load_idx, write_idx

log = logging.getLogger(__name__)

REGISTRY = "https://registry.npmjs.org"
PACKAGES = {
    "mnist": ("mnist-data", "1.2.6"),
    "fashion": ("fashion-mnist", "1.1.0"),
}
IDX_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def data_root() -> Path:
    return Path(os.environ.get("NES_LAB_DATA", Path.home() / ".cache" / "nes_lab"))


def _tarball(name: str) -> bytes:
    pkg, version = PACKAGES[name]
    registry = os.environ.get("NES_LAB_NPM_REGISTRY", REGISTRY).rstrip("/")
    url = f"{registry}/{pkg}/-/{pkg}-{version}.tgz"
    log.info("downloading %s", url)
    with urllib.request.urlopen(url, timeout=120) as resp:
        return resp.read()


def _have(dest: Path) -> bool:
    return all((dest / f).exists() for pair in IDX_NAMES.values() for f in pair)


def fetch(name: str, root: Path | None = None, force: bool = False) -> Path:
    """Make sure ``name`` ('mnist' or 'fashion') exists as IDX files; return its directory."""
    if name not in PACKAGES:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(PACKAGES)}")
    dest = (root or data_root()) / name
    if _have(dest) and not force:
        return dest
    dest.mkdir(parents=True, exist_ok=True)
    blob = _tarball(name)
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        if name == "mnist":
            _extract_mnist(tar, dest)
        else:
            _extract_fashion(tar, dest)
    return dest


def _extract_mnist(tar: tarfile.TarFile, dest: Path) -> None:
    wanted = {f for pair in IDX_NAMES.values() for f in pair}
    for member in tar.getmembers():
        base = os.path.basename(member.name)
        if base in wanted and member.isfile():
            with tar.extractfile(member) as src, open(dest / base, "wb") as out:
                shutil.copyfileobj(src, out)


def _extract_fashion(tar: tarfile.TarFile, dest: Path) -> None:
    images, labels = [], []
    for k in range(10):
        member = tar.getmember(f"package/src/clothes/{k}.json")
        with tar.extractfile(member) as fh:
            rows = json.load(fh)["data"]
        # a couple of entries in the package are empty placeholders
        rows = [r for r in rows if len(r) == 784]
        images.append(np.asarray(rows, dtype=np.uint8).reshape(-1, 28, 28))
        labels.append(np.full(len(rows), k, dtype=np.uint8))
    X = np.concatenate(images)
    y = np.concatenate(labels)
    # the package has no train/test split; keep the conventional 60k/10k sizes
    perm = np.random.default_rng(0).permutation(len(y))
    X, y = X[perm], y[perm]
    cut = len(y) - 10000
    (ti, tl), (ei, el) = IDX_NAMES["train"], IDX_NAMES["test"]
    write_idx(dest / ti, dest / tl, X[:cut], y[:cut])
    write_idx(dest / ei, dest / el, X[cut:], y[cut:])


def load_family(name: str, root: Path | None = None, download: bool = True) -> Dataset:
    """Pool the train and test halves of an MNIST-family dataset (70k images)."""
    dest = (root or data_root()) / name
    if not _have(dest):
        if not download:
            raise FileNotFoundError(f"{name} IDX files not found under {dest}")
        fetch(name, root)
    parts = [load_idx(dest / a, dest / b, c=10) for a, b in IDX_NAMES.values()]
    X = np.concatenate([p.features for p in parts])
    y = np.concatenate([p.clean_labels for p in parts])
    return Dataset(X, y, 10, provenance=Provenance(name))
