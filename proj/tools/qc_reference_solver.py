#!/usr/bin/env python3
"""External solver adapter reference implementation.

Reads the plain-text conic problem format written by the library (see
docs/solver_exchange.md), solves it with cvxpy, and writes the solution file
back. Usage:

    qc_reference_solver.py <problem-file> <solution-file>
"""
import sys

import numpy as np
import scipy.sparse as sp


def read_problem(path):
    tok = open(path).read().split()
    it = iter(tok)

    def expect(tag):
        t = next(it)
        if t != tag:
            raise SystemExit(f"expected {tag}, got {t}")

    expect("FORGE-SOCP")
    if int(next(it)) != 1:
        raise SystemExit("unsupported version")
    expect("VARS")
    n = int(next(it))

    def read_vec(length):
        v = np.zeros(length)
        nnz = int(next(it))
        for _ in range(nnz):
            i = int(next(it))
            v[i] = float(next(it))
        return v

    def read_mat(rows, nnz):
        r, c, x = [], [], []
        for _ in range(nnz):
            r.append(int(next(it)))
            c.append(int(next(it)))
            x.append(float(next(it)))
        return sp.csc_matrix((x, (r, c)), shape=(rows, n))

    expect("OBJ")
    obj = read_vec(n)
    expect("AEQ")
    p, nnz = int(next(it)), int(next(it))
    a = read_mat(p, nnz)
    expect("BEQ")
    b = read_vec(p)
    expect("GCONE")
    m, nnz = int(next(it)), int(next(it))
    g = read_mat(m, nnz)
    expect("HCONE")
    h = read_vec(m)
    expect("CONES")
    cones = []
    for _ in range(int(next(it))):
        kind = next(it)
        size = int(next(it))
        cones.append((kind, size))
    expect("BOUNDS")
    for _ in range(int(next(it))):
        next(it), next(it), next(it)
    expect("END")
    return n, obj, a, b, g, h, cones


def main():
    prob_path, sol_path = sys.argv[1], sys.argv[2]
    n, obj, a, b, g, h, cones = read_problem(prob_path)

    import cvxpy as cp

    x = cp.Variable(n)
    cons = []
    if a.shape[0]:
        cons.append(a @ x == b)
    at = 0
    for kind, size in cones:
        gs = g[at:at + size, :]
        hs = h[at:at + size]
        if kind == "N":
            cons.append(hs - gs @ x >= 0)
        else:
            cons.append(cp.SOC(hs[0] - gs[0, :] @ x, hs[1:] - gs[1:, :] @ x))
        at += size
    prob = cp.Problem(cp.Minimize(obj @ x), cons)
    try:
        prob.solve(solver=cp.ECOS, abstol=1e-9, reltol=1e-9, feastol=1e-9)
    except Exception:
        prob.solve(solver=cp.CLARABEL)

    status_map = {
        "optimal": "optimal",
        "optimal_inaccurate": "optimal",
        "infeasible": "primal_infeasible",
        "infeasible_inaccurate": "primal_infeasible",
        "unbounded": "dual_infeasible",
        "unbounded_inaccurate": "dual_infeasible",
    }
    status = status_map.get(prob.status, "numerical")

    xv = x.value if x.value is not None else np.zeros(n)
    yv = np.zeros(a.shape[0])
    zv = np.zeros(g.shape[0])
    ci = 0
    if a.shape[0]:
        dv = cons[0].dual_value
        if dv is not None:
            yv = -np.asarray(dv).ravel()
        ci = 1
    at = 0
    for kind, size in cones:
        dv = cons[ci].dual_value
        if dv is not None:
            if kind == "N":
                zv[at:at + size] = np.asarray(dv, dtype=float).ravel()
            else:
                if isinstance(dv, (list, tuple)):
                    parts = [np.atleast_1d(np.asarray(p, dtype=float)).ravel() for p in dv]
                    flat = np.concatenate(parts)
                else:
                    flat = np.asarray(dv, dtype=float).ravel()
                zv[at:at + size] = flat[:size]
        ci += 1
        at += size
    sv = h - g @ xv if x.value is not None else np.zeros(g.shape[0])

    with open(sol_path, "w") as f:
        f.write("FORGE-SOL 1\n")
        f.write(f"STATUS {status}\n")
        f.write(f"OBJ {float(obj @ xv):.17g}\n")
        f.write("ITER 0\n")
        for tag, vec in (("X", xv), ("Y", yv), ("Z", zv), ("S", sv)):
            f.write(f"{tag} {len(vec)}\n")
            for v in vec:
                f.write(f"{float(v):.17g}\n")
        f.write("END\n")


if __name__ == "__main__":
    main()
