"""Worldline multipoles: action on test tensors, split, component extraction.

A multipole of order n over a worldline C is represented by component
arrays zeta^{mu... a1..ak}(sigma), k = 0..n, with the mu-block stored in
chart components and the derivative block in the spatial frame (a = 1..3),
which builds the Dixon-vector orthogonality in by construction.  Its
action on a rank-m test tensor phi is

    J[phi] = sum_k (-1)^k / k!  integral  zeta^{mu.. r1..rk}
             (sym nabla^k_{r1..rk} phi_{mu..})|_C(sigma)  dsigma.

The split isolates the pure order-r part through the alternating sum over
radial derivatives, and extraction recovers individual components with
flat-top test tensors concentrated on the worldline.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import simpson

from . import jets
from . import spacetime as st
from . import worldline as wl


class UnsupportedOrder(ValueError):
    """Finite-difference derivative strategy capped at three derivatives."""


class NoConvergence(RuntimeError):
    """Extraction ladder failed to settle."""


class GridTooCoarse(UserWarning):
    """Simpson refinement disagreement above tolerance."""


_FD_CAP = 3


# ---------------------------------------------------------------------------
# test tensors
# ---------------------------------------------------------------------------

@dataclass
class TestTensor:
    """Rank-m covariant test field with a derivative strategy.

    ``func(x)`` returns the (4,)*rank component array at a chart point.
    If ``jet`` is provided it must return the partial-derivative jet stack
    ``jet(x, order)`` (see jets module); otherwise derivatives fall back
    to nested central differences with step ``h_fd``, capped at third
    order.  ``sigma_support`` optionally bounds the worldline-parameter
    window outside which the field vanishes, letting quadratures skip
    dead samples.
    """

    rank: int
    func: callable
    jet: callable = None
    h_fd: float = 1e-3
    sigma_support: tuple = None

    def jet_stack(self, x, order: int):
        if self.jet is not None:
            return self.jet(x, order)
        if order > _FD_CAP:
            raise UnsupportedOrder(
                f"finite-difference strategy supports at most {_FD_CAP} derivatives"
            )
        return jets.fd_jets(self.func, x, order, self.h_fd)

    def alive(self, sigma: float) -> bool:
        if self.sigma_support is None:
            return True
        lo, hi = self.sigma_support
        return lo <= sigma <= hi


def sym_cov_derivs(spec: st.MetricSpec, phi: TestTensor, x, kmax: int):
    """Symmetrized covariant derivatives [phi, nabla phi, ..., nabla^kmax phi].

    Entry k has shape (4,)*k + (4,)*rank with the symmetrized derivative
    indices leading.
    """
    tjets = phi.jet_stack(x, kmax)
    gjets = jets.gamma_jets(spec, x, min(2, max(0, kmax - 1)))
    vals = jets.nested_cov_values(gjets, tjets, phi.rank, kmax)
    return [jets.sym_leading_axes(v, k) for k, v in enumerate(vals)]


def sym_cov_deriv(spec: st.MetricSpec, phi: TestTensor, k: int, x, directions=None):
    """Single symmetrized covariant derivative; optionally contracted.

    ``directions`` is an iterable of k vectors contracted into the
    derivative slots, yielding the component array (or, for rank-0
    contraction patterns, a number).
    """
    D = sym_cov_derivs(spec, phi, x, k)[k]
    if directions is None:
        return D
    for u in directions:
        D = np.tensordot(np.asarray(u, dtype=float), D, axes=([0], [0]))
    return D


def gaussian_poly_tensor(rank: int, const, linear, x_ref, center, widths,
                         sigma_support=None) -> TestTensor:
    """Analytic rank-m field (const + linear . (x - x_ref)) * Gaussian.

    ``const`` has shape (4,)*rank, ``linear`` shape (4,)*rank + (4,), and
    the Gaussian factor is exp(-sum_i ((x_i - c_i)/w_i)^2 / 2).  Carries
    exact jets to fourth order.
    """
    const = np.asarray(const, dtype=float)
    linear = np.asarray(linear, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    center = np.asarray(center, dtype=float)
    widths = np.asarray(widths, dtype=float)

    def value(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            F = float(np.exp(-0.5 * np.sum(((x - center) / widths) ** 2)))
            return (const + linear @ (x - x_ref)) * F
        # batched evaluation over leading axes
        F = np.exp(-0.5 * np.sum(((x - center) / widths) ** 2, axis=-1))
        lin = np.tensordot(x - x_ref, linear, axes=([-1], [rank]))
        return (const + lin) * F.reshape(F.shape + (1,) * rank)

    def jet(x, order):
        poly = jets.const_jets(const, order)
        for nu in range(4):
            L = np.zeros(4)
            L[nu] = 1.0
            piece = jets.jet_outer(
                jets.affine_jets(x, L, -float(x_ref[nu]), order),
                jets.const_jets(linear[..., nu], order), 0, rank,
            )
            poly = jets.jet_add(poly, piece)
        gauss = jets.gaussian_jets(x, center, widths, order)
        return jets.jet_outer(gauss, poly, 0, rank)

    return TestTensor(rank=rank, func=value, jet=jet, sigma_support=sigma_support)


# ---------------------------------------------------------------------------
# flat-top profile
# ---------------------------------------------------------------------------

@dataclass
class FlatTopBump:
    """Even compact profile with psi(0) = 1, a flat plateau and unit integral.

    psi = 1 on |z| <= w_flat, zero beyond w_sup, and on the ramp a smooth
    step down plus a polynomial bump whose amplitude is tuned so the total
    integral is one (for w_flat < 1/2 the tail dips negative).  The join
    is C^order, so derivatives up to ``order`` are continuous everywhere.
    """

    w_flat: float = 0.25
    w_sup: float = 1.0
    order: int = 5

    def __post_init__(self):
        if not 0.0 < self.w_flat < self.w_sup:
            raise ValueError("need 0 < w_flat < w_sup")
        o = self.order
        u = Polynomial([0.0, 1.0])
        core = u ** o * (1.0 - u) ** o
        step = core.integ()
        step = step / step(1.0)          # C^o smoothstep, 0 -> 1
        bump = (u * (1.0 - u)) ** (o + 1)
        L = self.w_sup - self.w_flat
        down = 1.0 - step
        int_down = down.integ()(1.0) - down.integ()(0.0)
        int_bump = bump.integ()(1.0) - bump.integ()(0.0)
        tau = (0.5 - self.w_flat - L * int_down) / (L * int_bump)
        ramp = down + tau * bump
        self._ramp = [ramp]
        for _ in range(o):
            self._ramp.append(self._ramp[-1].deriv())
        self.tail_amplitude = tau

    def value(self, z):
        z = np.abs(np.asarray(z, dtype=float))
        u = (z - self.w_flat) / (self.w_sup - self.w_flat)
        out = np.where(
            z <= self.w_flat, 1.0,
            np.where(z >= self.w_sup, 0.0, self._ramp[0](np.clip(u, 0.0, 1.0))),
        )
        return out if out.ndim else float(out)

    def derivs(self, z: float, q: int):
        """[psi(z), psi'(z), ..., psi^(q)(z)] at a scalar point."""
        if q > self.order:
            raise UnsupportedOrder(
                f"profile is C^{self.order}; cannot take {q} derivatives")
        az = abs(z)
        if az <= self.w_flat:
            return [1.0] + [0.0] * q
        if az >= self.w_sup:
            return [0.0] * (q + 1)
        L = self.w_sup - self.w_flat
        u = (az - self.w_flat) / L
        sgn = 1.0 if z >= 0 else -1.0
        return [float(self._ramp[j](u)) * sgn ** j / L ** j for j in range(q + 1)]

    def integral(self) -> float:
        zs = np.linspace(-self.w_sup, self.w_sup, 4001)
        return float(simpson(self.value(zs), x=zs))


# ---------------------------------------------------------------------------
# component containers
# ---------------------------------------------------------------------------

@dataclass
class DixonComponents:
    """Multipole component arrays on the worldline's sigma grid.

    ``orders[k]`` has shape (n_sigma,) + (4,)*rank + (3,)*k: the mu-block
    in chart components, the derivative block in spatial frame components
    (index a - 1 for frame vector e_a).  Symmetry in the derivative block,
    and the stress-energy mu-block symmetry when ``stress_energy`` is set,
    are enforced on construction.
    """

    frame: wl.WorldlineFrame
    rank: int
    orders: dict
    stress_energy: bool = True
    _chart: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n = len(self.frame.sigma)
        for k, arr in list(self.orders.items()):
            arr = np.asarray(arr, dtype=float)
            want = (n,) + (4,) * self.rank + (3,) * k
            if arr.shape != want:
                raise ValueError(f"order-{k} array has shape {arr.shape}, want {want}")
            if k >= 2:
                block = list(range(1 + self.rank, 1 + self.rank + k))
                arr = _sym_axes(arr, block)
            if self.stress_energy and self.rank == 2:
                arr = 0.5 * (arr + np.swapaxes(arr, 1, 2))
            self.orders[k] = arr

    @property
    def max_order(self) -> int:
        return max(self.orders)

    def chart(self, k: int) -> np.ndarray:
        """Component arrays with the derivative block in chart indices."""
        if k not in self._chart:
            arr = self.orders[k]
            e_sp = self.frame.e[:, 1:, :]  # (n, 3, 4)
            for _ in range(k):
                # rotate the leading spatial axis to the back, contract it
                # there; k passes restore the original slot order in chart
                arr = np.moveaxis(arr, 1 + self.rank, -1)
                arr = np.einsum("i...a,iam->i...m", arr, e_sp)
            self._chart[k] = arr
        return self._chart[k]

    def orthogonality_residual(self) -> float:
        """Max |N_r zeta^{.. r ..}| over orders and derivative slots."""
        worst = 0.0
        for k in self.orders:
            if k == 0:
                continue
            zc = self.chart(k)
            for slot in range(k):
                ax = 1 + self.rank + slot
                res = np.einsum(
                    "i...m,im->i...", np.moveaxis(zc, ax, -1), self.frame.N
                )
                worst = max(worst, float(np.max(np.abs(res))))
        return worst

    def scale(self) -> float:
        return max(float(np.max(np.abs(a))) for a in self.orders.values())

    def to_json(self, path):
        doc = {
            "index_map": (
                "orders[k] flattened C-order from shape (n_sigma, 4**rank, 3**k); "
                "mu-block chart components, derivative block spatial frame "
                "components (a-1 for frame vector e_a)"
            ),
            "rank": self.rank,
            "sigma": self.frame.sigma.tolist(),
            "orders": {str(k): np.asarray(v).ravel().tolist() for k, v in self.orders.items()},
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True)


def _sym_axes(arr, axes):
    out = np.zeros_like(arr)
    perms = list(itertools.permutations(axes))
    for perm in perms:
        src = list(range(arr.ndim))
        for a, p in zip(axes, perm):
            src[a] = p
        out += np.transpose(arr, src)
    return out / len(perms)


# ---------------------------------------------------------------------------
# action, split, extraction
# ---------------------------------------------------------------------------

def action_density(J: DixonComponents, phi: TestTensor) -> np.ndarray:
    """Per-sample sigma integrand of the action J[phi], shape (n_sigma,)."""
    sig = J.frame.sigma
    n = J.max_order
    m = J.rank
    vals = np.zeros(len(sig))
    for i, s in enumerate(sig):
        if not phi.alive(s):
            continue
        x = J.frame.C.x[i]
        D = sym_cov_derivs(J.frame.spec, phi, x, n)
        acc = 0.0
        for k, _ in J.orders.items():
            zc = J.chart(k)[i]
            zc_axes = list(range(m, m + k)) + list(range(m))
            d_axes = list(range(k)) + list(range(k, k + m))
            acc += (-1.0) ** k / math.factorial(k) * float(
                np.tensordot(zc, D[k], axes=(zc_axes, d_axes))
            )
        vals[i] = acc
    return vals


def apply(J: DixonComponents, phi: TestTensor, tol_grid: float = 1e-6) -> float:
    """Action J[phi]: sigma quadrature of the contracted derivative tower."""
    sig = J.frame.sigma
    vals = action_density(J, phi)
    fine = float(simpson(vals, x=sig))
    if len(sig) >= 5 and (len(sig) - 1) % 2 == 0:
        coarse = float(simpson(vals[::2], x=sig[::2]))
        if abs(fine - coarse) > tol_grid * (1.0 + abs(fine)):
            warnings.warn(
                f"sigma grid refinement changes J[phi] by {abs(fine - coarse):.3e}",
                GridTooCoarse,
            )
    return fine


def radial_power_tensor(frame: wl.WorldlineFrame, phi: TestTensor, k: int) -> TestTensor:
    """The field nabla_R^k phi = R^{r1}..R^{rk} sym nabla^k_{r1..rk} phi.

    For a static worldline with an analytic phi the jets are assembled in
    closed form (the radial field is affine there); otherwise the result
    carries only a value callable and derivatives fall back to finite
    differences.
    """
    if k == 0:
        return phi
    spec = frame.spec
    m = phi.rank

    def value(x):
        R = wl.radial_vector(spec, frame, x)
        D = sym_cov_derivs(spec, phi, x, k)[k]
        for _ in range(k):
            D = np.tensordot(R, D, axes=([0], [0]))
        return D

    if not (frame.is_static() and phi.jet is not None):
        return TestTensor(rank=m, func=value, h_fd=phi.h_fd,
                          sigma_support=phi.sigma_support)

    x0 = frame.C.x[0]
    E = frame.e[0]                      # rows e_0..e_3
    Th = np.linalg.inv(E).T             # dual coframe rows theta^0..theta^3

    def jet(x, order):
        tjets = phi.jet(x, order + k)
        # flat static chart: covariant = partial; reinterpret the first k
        # derivative axes of each jet entry as tensor axes of sym d^k phi
        Dj = tjets[k:]
        total = None
        for a_idx in itertools.product(range(1, 4), repeat=k):
            term = Dj
            for j, a in enumerate(a_idx):
                term = jets.jet_contract_const(term, E[a], axis=k - 1 - j, p=None)
            # now term is the scalar-slot-contracted jet stack of rank m
            mono = jets.affine_jets(x, Th[a_idx[0]], -float(Th[a_idx[0]] @ x0), order)
            for a in a_idx[1:]:
                za = jets.affine_jets(x, Th[a], -float(Th[a] @ x0), order)
                mono = jets.jet_outer(mono, za, 0, 0)
            piece = jets.jet_outer(mono, term, 0, m)
            total = piece if total is None else jets.jet_add(total, piece)
        return total

    return TestTensor(rank=m, func=value, jet=jet, sigma_support=phi.sigma_support)


def dixon_split(J: DixonComponents, phi: TestTensor, r: int,
                tol_grid: float = 1e-6) -> float:
    """Pure order-r action J_(r)[phi] via the alternating radial-derivative sum."""
    n = J.max_order
    if r > n:
        return 0.0
    total = 0.0
    for k in range(r, n + 1):
        coeff = (-1.0) ** (k - r) / (math.factorial(k - r) * math.factorial(r))
        total += coeff * apply(J, radial_power_tensor(J.frame, phi, k), tol_grid)
    return total


@dataclass
class ExtractionResult:
    value: float
    rate: float
    estimates: np.ndarray
    eps: np.ndarray


DEFAULT_EPS_LADDER = (0.2, 0.1, 0.05, 0.025)


def extraction_test_tensor(frame: wl.WorldlineFrame, sigma0: float, nu, a_indices,
                           eps: float, profile: FlatTopBump = None,
                           profile_z: FlatTopBump = None) -> TestTensor:
    """Flat-top test tensor concentrating J_(k) onto one component at sigma0.

    ``nu`` is the chart multi-index selecting the mu-block component and
    ``a_indices`` the spatial frame indices (1..3) of the derivative block.
    """
    profile = profile or FlatTopBump()
    profile_z = profile_z or profile
    spec = frame.spec
    m = len(nu)
    k = len(a_indices)
    pref = (-1.0) ** k / eps
    lo, hi = sigma0 - eps * profile.w_sup, sigma0 + eps * profile.w_sup

    def value(x):
        sig, z = wl.adapted_coords(spec, frame, x)
        w = profile.value((sig - sigma0) / eps)
        if w == 0.0:
            return np.zeros((4,) * m)
        for a in range(3):
            w *= profile_z.value(z[a])
        if w == 0.0:
            return np.zeros((4,) * m)
        mono = 1.0
        for a in a_indices:
            mono *= z[a - 1]
        Pi = wl.pibar_field(spec, frame, x)
        out = 1.0
        for j in range(m):
            out = np.multiply.outer(out, Pi[nu[j]])
        return pref * mono * w * out

    if not frame.is_static():
        return TestTensor(rank=m, func=value, sigma_support=(lo, hi))

    x0 = frame.C.x[0]
    E = frame.e[0]
    Th = np.linalg.inv(E).T
    s_off = float(frame.C.s[0])
    # affine adapted coordinates: sigma(x) = theta^0.(x - x0) + s_off,
    # z^a(x) = theta^a.(x - x0)
    Lsig = Th[0]

    ind = 1.0
    delta = np.eye(4)
    for j in range(m):
        ind = np.multiply.outer(ind, delta[nu[j]])

    def jet(x, order):
        sig = float(Lsig @ (x - x0)) + s_off
        u = (sig - sigma0) / eps
        stack = jets.profile_jets(profile.derivs(u, order), Lsig / eps, order)
        for a in range(3):
            za = float(Th[a + 1] @ (x - x0))
            pz = jets.profile_jets(profile_z.derivs(za, order), Th[a + 1], order)
            stack = jets.jet_outer(stack, pz, 0, 0)
        for a in a_indices:
            mono = jets.affine_jets(x, Th[a], -float(Th[a] @ x0), order)
            stack = jets.jet_outer(stack, mono, 0, 0)
        stack = jets.jet_outer(stack, jets.const_jets(ind, order), 0, m)
        return jets.jet_scalar_mul(stack, pref)

    return TestTensor(rank=m, func=value, jet=jet, sigma_support=(lo, hi))


def extract_component(J: DixonComponents, sigma0: float, nu, a_indices,
                      eps_ladder=DEFAULT_EPS_LADDER,
                      profile: FlatTopBump = None,
                      profile_z: FlatTopBump = None,
                      tol_grid: float = 1e-6) -> ExtractionResult:
    """Recover zeta^{nu a1..ak}(sigma0) by the flat-top extraction limit.

    Evaluates the order-k split on the extraction test tensor for each
    epsilon, measures the convergence rate from successive differences
    and Richardson-extrapolates to epsilon -> 0.
    """
    eps = np.asarray(sorted(eps_ladder, reverse=True), dtype=float)
    if len(eps) < 2:
        raise ValueError("epsilon ladder needs at least two rungs")
    k = len(a_indices)
    est = np.array([
        dixon_split(
            J,
            extraction_test_tensor(J.frame, sigma0, nu, a_indices, e, profile, profile_z),
            k, tol_grid,
        )
        for e in eps
    ])
    diffs = np.abs(np.diff(est))
    floor = 1e-12 * (1.0 + float(np.max(np.abs(est))))
    if np.all(diffs <= floor):
        return ExtractionResult(float(est[-1]), np.inf, est, eps)
    if diffs[-1] > diffs[0] + floor:
        raise NoConvergence(
            f"extraction estimates diverge along the ladder: {est.tolist()}"
        )
    rates = []
    for j in range(len(eps) - 2):
        num, den = diffs[j], diffs[j + 1]
        ratio = eps[j] / eps[j + 1]
        if den > floor and num > floor:
            rates.append(math.log(num / den) / math.log(ratio))
    rate = float(np.median(rates)) if rates else np.inf
    if rates and rate > 0:
        gain = (eps[-2] / eps[-1]) ** rate - 1.0
        value = float(est[-1] + (est[-1] - est[-2]) / gain)
    else:
        value = float(est[-1])
    return ExtractionResult(value, rate, est, eps)
