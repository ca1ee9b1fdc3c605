"""Tab-separated case manifests: ``id  img  myo  fib  [extra...]``, paths relative to the manifest."""
import os

from .errors import FormatError, InvalidArgumentError
from .volgrid import read_case, write_case

NAME = "manifest.tsv"


def write_cases(out_dir, cases, ids=None, extra=None):
    """Write each (Volume, MaskSet) as a VOL1 triple and list them in ``out_dir/manifest.tsv``."""
    os.makedirs(out_dir, exist_ok=True)
    ids = ids or [f"case{i:04d}" for i in range(len(cases))]
    if len(set(ids)) != len(ids):
        raise InvalidArgumentError("case ids must be unique")
    lines = []
    for i, (cid, (vol, masks)) in enumerate(zip(ids, cases)):
        paths = write_case(os.path.join(out_dir, cid), vol, masks)
        cols = [cid] + [os.path.basename(p) for p in paths]
        if extra is not None:
            cols += list(extra[i])
        lines.append("\t".join(cols))
    path = os.path.join(out_dir, NAME)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_manifest(path):
    """Return ``[(id, img_path, myo_path, fib_path, extra_cols), ...]`` with absolute paths."""
    if os.path.isdir(path):
        path = os.path.join(path, NAME)
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) < 4:
                raise FormatError(f"manifest line {lineno}", "expected id, img, myo, fib columns")
            entries.append((cols[0], *(os.path.join(base, c) for c in cols[1:4]), cols[4:]))
    return entries


def read_cases(path):
    """Load ``(ids, [(Volume, MaskSet), ...])`` from a manifest file or its directory."""
    ids, cases = [], []
    for cid, img, _, _, _ in read_manifest(path):
        ids.append(cid)
        cases.append(read_case(img[: -len("_img.vol")]))
    return ids, cases
