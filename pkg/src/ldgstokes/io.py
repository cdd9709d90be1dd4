"""Solution files in plain text or little-endian binary.

Both formats store the basis convention, degree, grid and the raw
element-major coefficients ``[u_1 .. u_d, p]`` per element, each component
holding ``(p+1)^d`` coefficients of the orthonormal tensor Legendre basis.

Binary layout (all little-endian)::

    8s   magic b"LDGSOL1\\0"
    u4   dim
    u4   degree
    u4   n          (elements per axis)
    u4   ncomp      (dim + 1)
    u4   nb         ((degree+1)^dim)
    u4   len(basis) followed by that many ASCII bytes
    f8 * n^dim * ncomp * nb   coefficients

Text layout: ``# key = value`` header lines, then one coefficient per line
written with ``repr`` precision.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

BASIS_NAME = "orthonormal-tensor-legendre"
MAGIC = b"LDGSOL1\0"


@dataclass
class SolutionFile:
    dim: int
    degree: int
    n: int
    coeffs: np.ndarray        # flat element-major vector
    basis: str = BASIS_NAME

    @property
    def nb(self):
        return (self.degree + 1) ** self.dim

    @property
    def ncomp(self):
        return self.dim + 1

    def __post_init__(self):
        self.coeffs = np.ascontiguousarray(self.coeffs, dtype=float).reshape(-1)
        want = self.n ** self.dim * self.ncomp * self.nb
        if self.coeffs.shape[0] != want:
            raise ValueError(f"expected {want} coefficients, got {self.coeffs.shape[0]}")


def write_binary(path, sol: SolutionFile):
    name = sol.basis.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<6I", sol.dim, sol.degree, sol.n, sol.ncomp, sol.nb, len(name)))
        fh.write(name)
        fh.write(sol.coeffs.astype("<f8").tobytes())


def read_binary(path) -> SolutionFile:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a solution file")
        dim, degree, n, ncomp, nb, ln = struct.unpack("<6I", fh.read(24))
        basis = fh.read(ln).decode("ascii")
        data = np.frombuffer(fh.read(), dtype="<f8").astype(float)
    sol = SolutionFile(dim, degree, n, data, basis)
    if (sol.ncomp, sol.nb) != (ncomp, nb):
        raise ValueError(f"{path}: inconsistent header")
    return sol


def write_text(path, sol: SolutionFile):
    with open(path, "w") as fh:
        fh.write(f"# basis = {sol.basis}\n# dim = {sol.dim}\n# degree = {sol.degree}\n")
        fh.write(f"# n = {sol.n}\n# layout = element-major [u_1..u_d, p]\n")
        for v in sol.coeffs:
            fh.write(f"{float(v)!r}\n")


def read_text(path) -> SolutionFile:
    meta = {}
    vals = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                meta[key.strip()] = val.strip()
            else:
                vals.append(float(line))
    try:
        return SolutionFile(int(meta["dim"]), int(meta["degree"]), int(meta["n"]),
                            np.array(vals), meta.get("basis", BASIS_NAME))
    except KeyError as err:
        raise ValueError(f"{path}: missing header field {err}") from None


def write_solution(path, sol: SolutionFile, fmt=None):
    fmt = fmt or ("text" if str(path).endswith(".txt") else "binary")
    (write_text if fmt == "text" else write_binary)(path, sol)


def read_solution(path) -> SolutionFile:
    with open(path, "rb") as fh:
        head = fh.read(8)
    return read_binary(path) if head == MAGIC else read_text(path)
