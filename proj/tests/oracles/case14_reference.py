#!/usr/bin/env python3
"""Reference AC power flow used to freeze oracle values into test_acpf.cpp.

Independent of the C++ implementation: complex-injection mismatch Newton with
numerical Jacobian, reading the MATPOWER case directly.

Usage: python3 case14_reference.py ../../data/pglib/pglib_opf_case14_ieee.m
"""
import re
import sys

import numpy as np


def parse_case(path):
    text = open(path).read()
    text = re.sub(r"%.*", "", text)

    def matrix(name):
        m = re.search(r"mpc\.%s\s*=\s*\[(.*?)\];" % name, text, re.S)
        rows = []
        for line in m.group(1).replace(";", "\n").splitlines():
            vals = line.split()
            if vals:
                rows.append([float(v) for v in vals])
        return np.array(rows)

    base = float(re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)\s*;", text).group(1))
    return base, matrix("bus"), matrix("gen"), matrix("branch")


def ybus(base, bus, branch):
    n = len(bus)
    ids = {int(b[0]): i for i, b in enumerate(bus)}
    y = np.zeros((n, n), dtype=complex)
    for row in branch:
        if row[10] <= 0:
            continue
        f, t = ids[int(row[0])], ids[int(row[1])]
        ys = 1.0 / complex(row[2], row[3])
        bc = 1j * row[4] / 2.0
        tau = row[8] if row[8] != 0 else 1.0
        shift = np.exp(1j * np.deg2rad(row[9]))
        y[f, f] += (ys + bc) / tau**2
        y[f, t] += -ys / (tau * np.conj(shift))
        y[t, f] += -ys / (tau * shift)
        y[t, t] += ys + bc
    for i, row in enumerate(bus):
        y[i, i] += complex(row[4], row[5]) / base
    return y, ids


def solve(path):
    base, bus, gen, branch = parse_case(path)
    y, ids = ybus(base, bus, branch)
    n = len(bus)
    kinds = bus[:, 1].astype(int)
    slack = int(np.where(kinds == 3)[0][0])
    pv = [i for i in range(n) if kinds[i] == 2]
    pq = [i for i in range(n) if kinds[i] == 1]

    s_spec = -(bus[:, 2] + 1j * bus[:, 3]) / base
    vset = np.ones(n)
    for row in gen:
        if row[7] <= 0:
            continue
        i = ids[int(row[0])]
        if i != slack:
            s_spec[i] += row[1] / base
        vset[i] = min(max(row[5], bus[i, 12]), bus[i, 11])

    v = np.ones(n, dtype=complex)
    v[slack] = vset[slack]
    for i in pv:
        v[i] = vset[i]

    unknown_ang = [i for i in range(n) if i != slack]
    unknown_mag = pq

    def residual(v):
        s_calc = v * np.conj(y @ v)
        mism = s_calc - s_spec
        out = [mism[i].real for i in unknown_ang]
        out += [mism[i].imag for i in unknown_mag]
        return np.array(out)

    def pack(v):
        return np.concatenate([np.angle(v)[unknown_ang], np.abs(v)[unknown_mag]])

    def unpack(z):
        ang = np.zeros(n)
        mag = vset.copy()
        ang[unknown_ang] = z[: len(unknown_ang)]
        mag[unknown_mag] = z[len(unknown_ang):]
        return mag * np.exp(1j * ang)

    z = pack(v)
    for _ in range(60):
        r = residual(unpack(z))
        if np.max(np.abs(r)) < 1e-12:
            break
        jac = np.zeros((len(z), len(z)))
        h = 1e-7
        for j in range(len(z)):
            zp = z.copy()
            zp[j] += h
            zm = z.copy()
            zm[j] -= h
            jac[:, j] = (residual(unpack(zp)) - residual(unpack(zm))) / (2 * h)
        z = z - np.linalg.solve(jac, r)
    v = unpack(z)
    s_calc = v * np.conj(y @ v)
    mism = np.max(np.abs(residual(v)))
    return v, mism, slack, s_calc, bus, base


if __name__ == "__main__":
    v, mism, slack, s_calc, bus, base = solve(sys.argv[1])
    print("max newton residual: %.3e" % mism)
    print("// frozen reference values")
    for i in range(len(v)):
        print("  {%.12f, %.12f}," % (abs(v[i]), np.angle(v[i])))
    slack_p = s_calc[slack].real + bus[slack, 2] / base
    print("slack P: %.12f" % slack_p)
