"""Text checkpoints: the shared refinement forest plus one file per slab.

``forest.txt`` records the macro construction and the ordered split log;
replaying it reproduces identical cell and vertex ids, so a slab file only
needs the cell-id cut of each mesh and the coefficient vectors.  Floats are
written with repr (loss-free round trip).

Field order per slab file (version 1):
    n, t_prev, t_cur, k, newton_res,
    prev_cells, prev_coeffs, cur_cells, cur_coeffs
with each array as one whitespace-separated line after a "<name> <count>"
header.  Slab 0 stores the initial state in the ``cur`` slots and leaves
``prev`` empty.
"""
import os

import numpy as np

from acfem.fem import FeFunction, FeSpace
from acfem.mesh import Rect, TriMesh, build_macro_mesh
from acfem.stepper import TimeSlab

FOREST_MAGIC = "acfem-forest v1"
SLAB_MAGIC = "acfem-slab v1"


class CheckpointError(RuntimeError):
    pass


def write_forest(forest, path):
    if forest.domain is None or forest.subdivisions is None:
        raise CheckpointError("forest lacks macro construction metadata")
    d = forest.domain
    with open(path, "w") as f:
        f.write(FOREST_MAGIC + "\n")
        f.write(f"domain {d.x0!r} {d.y0!r} {d.x1!r} {d.y1!r}\n")
        f.write(f"subdivisions {forest.subdivisions[0]} {forest.subdivisions[1]}\n")
        f.write(f"splits {len(forest.split_log)}\n")
        for t in forest.split_log:
            f.write(f"{t}\n")


def replay_forest(path):
    """Rebuild the forest by replaying the split log; ids are reproduced."""
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != FOREST_MAGIC:
        raise CheckpointError(f"{path}: not a forest checkpoint")
    dom = lines[1].split()
    if dom[0] != "domain":
        raise CheckpointError(f"{path}: malformed domain line")
    rect = Rect(*(float(v) for v in dom[1:5]))
    sub = lines[2].split()
    mesh = build_macro_mesh(rect, (int(sub[1]), int(sub[2])))
    forest = mesh.forest
    count = int(lines[3].split()[1])
    for ln in lines[4:4 + count]:
        forest.split(int(ln))
    return forest


def _write_array(f, name, arr, fmt):
    arr = np.asarray(arr)
    f.write(f"{name} {arr.size}\n")
    f.write(" ".join(fmt(v) for v in arr.ravel()) + "\n")


def write_slab(path, slab):
    with open(path, "w") as f:
        f.write(SLAB_MAGIC + "\n")
        f.write(f"n {slab.n}\n")
        f.write(f"t_prev {slab.t_prev!r}\n")
        f.write(f"t_cur {slab.t_cur!r}\n")
        f.write(f"k {slab.k!r}\n")
        f.write(f"newton_res {slab.newton_residual!r}\n")
        _write_array(f, "prev_cells", slab.prev.mesh.cell_ids, str)
        _write_array(f, "prev_coeffs", slab.prev.coeffs, lambda v: repr(float(v)))
        _write_array(f, "cur_cells", slab.cur.mesh.cell_ids, str)
        _write_array(f, "cur_coeffs", slab.cur.coeffs, lambda v: repr(float(v)))


def write_initial(path, U0):
    """Initial state stored as a degenerate slab (n = 0, empty prev)."""
    with open(path, "w") as f:
        f.write(SLAB_MAGIC + "\n")
        f.write("n 0\n")
        f.write("t_prev 0.0\nt_cur 0.0\nk 0.0\nnewton_res 0.0\n")
        _write_array(f, "prev_cells", np.array([], dtype=np.int64), str)
        _write_array(f, "prev_coeffs", np.array([]), lambda v: repr(float(v)))
        _write_array(f, "cur_cells", U0.mesh.cell_ids, str)
        _write_array(f, "cur_coeffs", U0.coeffs, lambda v: repr(float(v)))


class SpaceCache:
    """Shares one FeSpace per mesh cut, so reloaded slabs alias meshes."""

    def __init__(self, forest):
        self.forest = forest
        self._spaces = {}

    def space_for(self, cell_ids):
        key = tuple(int(c) for c in cell_ids)
        if key not in self._spaces:
            self._spaces[key] = FeSpace(TriMesh(self.forest, np.array(key,
                                                                      dtype=np.int64)))
        return self._spaces[key]


def _read_blocks(path):
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != SLAB_MAGIC:
        raise CheckpointError(f"{path}: not a slab checkpoint")
    scalars = {}
    arrays = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        name = parts[0]
        if name in ("prev_cells", "prev_coeffs", "cur_cells", "cur_coeffs"):
            count = int(parts[1])
            vals = lines[i + 1].split() if count else []
            if len(vals) != count:
                raise CheckpointError(f"{path}: corrupt block {name}")
            arrays[name] = vals
            i += 2
        else:
            scalars[name] = parts[1]
            i += 1
    return scalars, arrays


def read_slab(path, cache):
    """Reconstruct a TimeSlab (or the initial state for n = 0)."""
    scalars, arrays = _read_blocks(path)
    n = int(scalars["n"])
    cur_space = cache.space_for([int(v) for v in arrays["cur_cells"]])
    cur = FeFunction(cur_space, np.array([float(v) for v in arrays["cur_coeffs"]]))
    if n == 0:
        return cur
    prev_space = cache.space_for([int(v) for v in arrays["prev_cells"]])
    prev = FeFunction(prev_space, np.array([float(v) for v in arrays["prev_coeffs"]]))
    return TimeSlab(n=n, t_prev=float(scalars["t_prev"]),
                    t_cur=float(scalars["t_cur"]), k=float(scalars["k"]),
                    prev=prev, cur=cur,
                    newton_residual=float(scalars["newton_res"]))


def save_run(directory, forest, U0, slabs):
    os.makedirs(directory, exist_ok=True)
    write_forest(forest, os.path.join(directory, "forest.txt"))
    write_initial(os.path.join(directory, "slab_0000.txt"), U0)
    for slab in slabs:
        write_slab(os.path.join(directory, f"slab_{slab.n:04d}.txt"), slab)


def load_run(directory):
    """Returns (U0, slabs) reconstructed from a checkpoint directory."""
    forest_path = os.path.join(directory, "forest.txt")
    if not os.path.exists(forest_path):
        raise CheckpointError(f"missing {forest_path}")
    forest = replay_forest(forest_path)
    cache = SpaceCache(forest)
    init_path = os.path.join(directory, "slab_0000.txt")
    if not os.path.exists(init_path):
        raise CheckpointError(f"missing {init_path}")
    U0 = read_slab(init_path, cache)
    slabs = []
    n = 1
    while True:
        path = os.path.join(directory, f"slab_{n:04d}.txt")
        if not os.path.exists(path):
            break
        slabs.append(read_slab(path, cache))
        n += 1
    return U0, slabs
