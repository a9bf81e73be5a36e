"""Partial-derivative jet algebra for analytic tensor fields.

A *jet stack* for a rank-p covariant tensor field T is a list ``J`` where
``J[q]`` holds every order-q partial derivative,

    J[q][l1, ..., lq, i1, ..., ip] = d_{l1} ... d_{lq} T_{i1...ip},

with the q derivative axes leading (symmetric under exchange) and the p
tensor axes trailing.  The helpers here build jet stacks for a small
catalog of analytic fields (Gaussians, affine scalars, 1-d profiles
composed with affine maps), combine them with the Leibniz rule, and turn
partial jets into covariant-derivative jets using Christoffel jets.

Everything is exact to rounding when the input jets are exact, which is
what keeps high-order derivative ladders out of finite-difference noise.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.polynomial import hermite as npherm

from . import spacetime as st


# ---------------------------------------------------------------------------
# Christoffel jets
# ---------------------------------------------------------------------------

def gamma_jets(spec: st.MetricSpec, x, order: int = 2):
    """Jet stack of the Christoffel symbols up to the given partial order.

    Entry q has shape (4,)*q + (4, 4, 4) holding d^q Gamma^m_{ij} with the
    derivative axes leading.
    """
    x = np.asarray(x, dtype=float)
    out = [st._christoffel(spec, x)]
    if order >= 1:
        out.append(st._christoffel_partials(spec, x))
    if order >= 2:
        out.append(st.christoffel_second_partials(spec, x))
    if order >= 3:
        raise ValueError("Christoffel jets available up to second partials only")
    return out


# ---------------------------------------------------------------------------
# covariant derivatives from partial jets
# ---------------------------------------------------------------------------

def _gamma_contract(Gj, Tj, s, p):
    """Contract a Christoffel jet with tensor-slot s of a tensor jet.

    Gj has axes (bg..., c, a, i) = d^qg Gamma^c_{a i}; Tj has axes
    (bt..., i_0..i_{p-1}).  Returns d^qgGamma^c_{a i_s} d^qtT_{..c..} with
    axes ordered (bg..., bt..., a, i_0..i_{p-1}).
    """
    qg = Gj.ndim - 3
    qt = Tj.ndim - p
    out = np.tensordot(Gj, Tj, axes=([qg], [qt + s]))
    # out axes: (bg.., a, i_s, bt.., i-rest)
    src = list(range(out.ndim))
    dst = [0] * out.ndim
    for k in range(qg):
        dst[k] = k
    dst[qg] = qg + qt          # a
    dst[qg + 1] = qg + qt + 1 + s  # i_s back into place
    for k in range(qt):
        dst[qg + 2 + k] = qg + k
    rest = [j for j in range(p) if j != s]
    for k, j in enumerate(rest):
        dst[qg + 2 + qt + k] = qg + qt + 1 + j
    return np.moveaxis(out, src, dst)


def cov_deriv_jets(gjets, T, p):
    """Jet stack of nabla T for a rank-p covariant tensor.

    The new covariant index is placed first among the tensor axes, so
    entry q of the result has shape (4,)*q + (4,)*(p+1) holding
    d^q (nabla_a T_{i1..ip}).  The stack shortens by one order.
    """
    out = []
    for q in range(len(T) - 1):
        # d_a enters as one more partial index; the trailing partial axis
        # of T[q+1] becomes the covariant index a.
        Kq = T[q + 1].copy()
        for s in range(p):
            for ng in range(q + 1):
                if ng >= len(gjets):
                    raise ValueError("Christoffel jets too shallow for this order")
                base = _gamma_contract(gjets[ng], T[q - ng], s, p)
                for S in itertools.combinations(range(q), ng):
                    rest = [i for i in range(q) if i not in S]
                    Kq -= np.moveaxis(base, list(range(q)), list(S) + rest)
        out.append(Kq)
    return out


def sym_leading_axes(T, k):
    """Symmetrize the first k axes of T (average over permutations)."""
    if k < 2:
        return T
    out = np.zeros_like(T)
    perms = list(itertools.permutations(range(k)))
    tail = list(range(k, T.ndim))
    for perm in perms:
        out += np.transpose(T, list(perm) + tail)
    return out / len(perms)


def nested_cov_values(gjets, tjets, p, kmax):
    """Values of T, nabla T, ..., nabla^kmax T from a partial jet stack.

    Returns a list V with V[k] of shape (4,)*k + (4,)*p: the *unsymmetrized*
    k-th nested covariant derivative, derivative axes leading (outermost
    derivative first).  Requires len(tjets) > kmax.
    """
    if len(tjets) <= kmax:
        raise ValueError("jet stack too shallow for the requested depth")
    vals = [tjets[0]]
    cur, rank = tjets, p
    for _ in range(kmax):
        cur = cov_deriv_jets(gjets, cur, rank)
        rank += 1
        vals.append(cur[0])
    return vals


# ---------------------------------------------------------------------------
# finite-difference jets (fallback strategy)
# ---------------------------------------------------------------------------

def fd_jets(func, x, order: int, h: float = 1e-3):
    """Jet stack of an arbitrary field by nested central differences.

    Accurate to O(h^2) per derivative order; use only where analytic jets
    are unavailable.
    """
    x = np.asarray(x, dtype=float)

    def jet(pt, q):
        if q == 0:
            return np.asarray(func(pt), dtype=float)
        rows = []
        for l in range(4):
            xp, xm = np.array(pt), np.array(pt)
            xp[l] += h
            xm[l] -= h
            rows.append((jet(xp, q - 1) - jet(xm, q - 1)) / (2.0 * h))
        return np.stack(rows, axis=0)

    return [jet(x, q) for q in range(order + 1)]


# ---------------------------------------------------------------------------
# analytic scalar jets
# ---------------------------------------------------------------------------

def const_jets(T, order: int):
    """Jet stack of a constant tensor field."""
    T = np.asarray(T, dtype=float)
    out = [T]
    for q in range(1, order + 1):
        out.append(np.zeros((4,) * q + T.shape))
    return out


def affine_jets(x, L, c: float, order: int):
    """Jet stack of the affine scalar l(x) = L . x + c."""
    x = np.asarray(x, dtype=float)
    L = np.asarray(L, dtype=float)
    out = [np.asarray(float(L @ x + c))]
    if order >= 1:
        out.append(L.copy())
    for q in range(2, order + 1):
        out.append(np.zeros((4,) * q))
    return out


def gaussian_jets(x, center, widths, order: int):
    """Jet stack of exp(-sum_i ((x_i - c_i)/w_i)^2 / 2), any order.

    The field is separable, so every mixed partial factorizes into 1-d
    Gaussian derivatives; those are Hermite polynomials times the value,
    d^m/du^m e^{-u^2} = (-1)^m H_m(u) e^{-u^2} with u = (x-c)/(w sqrt 2).
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(center, dtype=float)
    w = np.asarray(widths, dtype=float)
    u = (x - c) / (w * np.sqrt(2.0))
    F = float(np.exp(-np.sum(u ** 2)))
    # ratio[a, m] = (d^m/dx_a^m of the axis-a factor) / (axis-a factor)
    ratio = np.empty((4, order + 1))
    for m in range(order + 1):
        coef = np.zeros(m + 1)
        coef[m] = 1.0
        ratio[:, m] = (-1.0 / (w * np.sqrt(2.0))) ** m * npherm.hermval(u, coef)
    out = [np.asarray(F)]
    for q in range(1, order + 1):
        T = np.empty((4,) * q)
        for idx in itertools.product(range(4), repeat=q):
            counts = [idx.count(a) for a in range(4)]
            T[idx] = np.prod([ratio[a, counts[a]] for a in range(4)])
        out.append(T * F)
    return out


def profile_jets(derivs1d, L, order: int):
    """Jet stack of psi(l(x)) given 1-d derivatives of psi at u = l(x).

    derivs1d = [psi(u), psi'(u), ...] and L is the (constant) gradient of
    the affine map l, so d^q psi(l(x)) = psi^(q)(u) L x ... x L.
    """
    L = np.asarray(L, dtype=float)
    out = [np.asarray(float(derivs1d[0]))]
    outer = np.asarray(1.0)
    for q in range(1, order + 1):
        outer = np.multiply.outer(outer, L) if q > 1 else L
        out.append(float(derivs1d[q]) * outer)
    return out


# ---------------------------------------------------------------------------
# Leibniz combination
# ---------------------------------------------------------------------------

def jet_outer(A, B, pa: int, pb: int):
    """Jet stack of the outer product A x B via the Leibniz rule.

    A and B are jet stacks of tensors with pa and pb trailing tensor axes;
    the result has pa + pb tensor axes (A's first) and as many orders as
    the shorter input.
    """
    qmax = min(len(A), len(B)) - 1
    out = []
    for q in range(qmax + 1):
        Cq = None
        for ng in range(q + 1):
            base = np.multiply.outer(A[ng], B[q - ng])
            # axes: (bA(ng), Ia(pa), bB(q-ng), Ib(pb)) -> bring bB after bA
            nb = q - ng
            if nb and (ng + pa):
                base = np.moveaxis(
                    base,
                    [ng + pa + i for i in range(nb)],
                    [ng + i for i in range(nb)],
                )
            for S in itertools.combinations(range(q), ng):
                rest = [i for i in range(q) if i not in S]
                term = np.moveaxis(base, list(range(q)), list(S) + rest)
                Cq = term.copy() if Cq is None else Cq + term
        out.append(np.asarray(Cq))
    return out


def jet_contract_const(A, M, axis: int, p: int):
    """Contract tensor axis ``axis`` of every jet order with constant M.

    M is 1-d (removes the axis) or 2-d (M[new, old] replaces it).
    """
    M = np.asarray(M, dtype=float)
    out = []
    for q, Aq in enumerate(A):
        ax = q + axis
        if M.ndim == 1:
            out.append(np.tensordot(Aq, M, axes=([ax], [0])))
        else:
            res = np.tensordot(Aq, M, axes=([ax], [1]))
            out.append(np.moveaxis(res, -1, ax))
    return out


def jet_add(A, B):
    return [a + b for a, b in zip(A, B)]


def jet_scalar_mul(A, c: float):
    return [c * a for a in A]
