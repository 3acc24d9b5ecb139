"""Ready-made systems: the certified descent example and random families.

The certification example is a one-parameter, one-perturbation training
run designed so the attacker saturates from the first step: its gradient
coordinate stays strictly positive and the ball clamp is active, so the
realized outer step is affine on the whole reachable tube.  That puts
the lifted model in the exact regime (degree one, empty discarded
levels) while the reference trajectory is still the genuine sign-and-
clamp iteration.  `exact_regime_margins` measures how far the run sits
from the regime boundary; the margins are part of the design, not an
assumption.

Random families feed the oracle and bound tests: coefficient maps drawn
at controlled norms and rescaled until the majorant certifies the
requested contraction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    AffineGradient,
    CoupledState,
    MultiPoly,
    PolynomialMapCoeffs,
    StepMonitor,
    StepSchedule,
    TruncatedMapExpansion,
    exact_outer_step,
    folded_poly_step,
    recentre_polys,
    structural_step_polys,
)

__all__ = [
    "CertifyInstance",
    "certify_instance",
    "FoldedInstance",
    "folded_demo_instance",
    "random_coeff_map",
    "random_contractive",
    "RandomSystem",
]


# ----------------------------------------------------------------------
# the certification example


@dataclass
class CertifyInstance:
    """Saturated-regime training run with an affine realized step."""

    sched: StepSchedule
    grads: AffineGradient
    v0: CoupledState
    center: np.ndarray
    scale: np.ndarray
    tau_s: float
    tau_c: float
    big_l: float
    lam: float | None = None
    uses_fold: bool = False
    _cache: list[CoupledState] | None = field(default=None, repr=False)

    def exact_states(self) -> list[CoupledState]:
        if self._cache is None:
            states = [self.v0]
            for t in range(self.sched.t_window):
                states.append(exact_outer_step(states[-1], t, self.sched,
                                               self.grads))
            self._cache = states
        return self._cache

    def fresh_monitor(self):
        return None

    def exact_regime_margins(self) -> dict:
        """Distance from the sign flip and from leaving the clamp.

        sign margin: min_t g_delta(v(t)) coordinate-wise, must stay > 0.
        clamp margin: min_t (delta + eta_delta - eps), must stay >= 0 so
        the clamp pins delta at the ball radius every step.
        """
        sched, grads = self.sched, self.grads
        sign_margin = math.inf
        clamp_margin = math.inf
        for t, v in enumerate(self.exact_states()[:-1]):
            g = grads.exact_g_delta(v.vector)
            sign_margin = min(sign_margin, float(g.min()))
            reach = v.delta + sched.eta_delta[t] * np.sign(g) - sched.eps_ball
            clamp_margin = min(clamp_margin, float(reach.min()))
        return {"sign_margin": sign_margin, "clamp_margin": clamp_margin,
                "ok": sign_margin > 0.0 and clamp_margin >= 0.0}

    def realized_affine_polys(self) -> list[MultiPoly]:
        """The outer step on the saturated tube, coordinate by coordinate.

        delta+ is the constant eps_ball vector; u+ = u - eta_u g_u(eps, u).
        Valid precisely where exact_regime_margins reports ok.
        """
        sched, grads = self.sched, self.grads
        m, n, d = grads.m, grads.n, grads.d
        eps = sched.eps_ball
        # empty window: the step map is never applied, any rate serves
        eta = float(sched.eta_u[0]) if sched.eta_u.size else 0.0
        polys = [MultiPoly.affine(d, np.zeros(d), eps) for _ in range(m)]
        dplus = np.full(m, eps)
        for i in range(n):
            lin = np.zeros(d)
            lin[m + i] = 1.0
            lin[m:] -= eta * grads.a_u[i, m:]
            const = -eta * (grads.a_u[i, :m] @ dplus + grads.b_u[i])
            polys.append(MultiPoly.affine(d, lin, const))
        return polys

    def build_expansion(self, p_s, p_c, cap: int) -> PolynomialMapCoeffs:
        eta_u = self.sched.eta_u
        if eta_u.size and not np.allclose(eta_u, eta_u[0]):
            raise ValueError("the realized step assumes a uniform learner rate")
        polys = recentre_polys(self.realized_affine_polys(), self.center,
                               self.scale)
        return PolynomialMapCoeffs.from_coordinate_polys(polys)


def certify_instance(t_window: int = 50) -> CertifyInstance:
    """One-parameter run whose attacker saturates from step one.

    eta_delta = 2 eps, so a single sign step crosses the ball; the loss
    gradient in delta keeps a constant sign on the tube, and the learner
    contracts at rate 0.7 toward the robust optimum at delta = eps.
    """
    eps = 0.02
    sched = StepSchedule.uniform(t_window, eps_ball=eps, eta_delta=0.04,
                                 eta_u=0.1, alpha=1.0)
    grads = AffineGradient(
        a_delta=np.array([[0.3, 0.0]]),
        b_delta=np.array([1.0]),
        a_u=np.array([[0.5, 3.0]]),
        b_u=np.array([-0.55]),
    )
    v0 = CoupledState(np.array([eps]), np.array([0.199]))
    center = np.array([eps, 0.0])
    scale = np.array([45.0, 1.5])
    return CertifyInstance(sched=sched, grads=grads, v0=v0, center=center,
                           scale=scale, tau_s=0.7, tau_c=0.8, big_l=6.0,
                           lam=1.25)


# ----------------------------------------------------------------------
# folded variant


@dataclass
class FoldedInstance:
    """Same coupled run, stepped through the designed surrogates.

    `fixed_polys` short-circuits the per-budget design with handmade
    low-degree surrogates; their declared accuracies come from direct
    measurement over the admissible region, so the budgets they satisfy
    are whatever those measurements support.
    """

    sched: StepSchedule
    grads: AffineGradient
    v0: CoupledState
    center: np.ndarray
    scale: np.ndarray
    tau_s: float
    tau_c: float
    big_l: float
    lam: float | None = None
    uses_fold: bool = True
    fixed_polys: tuple | None = None
    expansion_radius: float = 1.0
    max_expand_degree: int = 60

    declared_delta_s: float = 0.05
    declared_delta_c: float = 0.05

    def design_polys(self, delta_s: float, delta_c: float):
        from .polyapprox import (ClipSpec, SignSpec, clip_checks,
                                 design_clip_poly, design_sign_poly,
                                 sign_checks, verify_poly_spec)

        if self.fixed_polys is not None:
            # fixed surrogates carry measured certificates at the declared
            # accuracies, not at whatever the caller budgeted
            from dataclasses import replace
            p_s, p_c = self.fixed_polys
            cert_s = verify_poly_spec(
                p_s, sign_checks(SignSpec(1.0, self.tau_s, self.declared_delta_s)))
            cert_c = verify_poly_spec(
                p_c, clip_checks(ClipSpec(self.big_l, self.tau_c,
                                          self.declared_delta_c)))
            return replace(p_s, certificate=cert_s), replace(p_c, certificate=cert_c)
        p_s = design_sign_poly(SignSpec(1.0, self.tau_s, delta_s))
        p_c = design_clip_poly(ClipSpec(self.big_l, self.tau_c, delta_c))
        return p_s, p_c

    def exact_states(self) -> list[CoupledState]:
        states = [self.v0]
        for t in range(self.sched.t_window):
            states.append(exact_outer_step(states[-1], t, self.sched, self.grads))
        return states

    def folded_states(self, p_s, p_c, monitor: StepMonitor | None = None):
        states = [self.v0]
        for t in range(self.sched.t_window):
            states.append(folded_poly_step(states[-1], t, self.sched,
                                           self.grads, p_s, p_c, monitor))
        return states

    def fresh_monitor(self) -> StepMonitor:
        return StepMonitor(self.tau_s, self.tau_c, self.big_l)

    def build_expansion(self, p_s, p_c, cap: int) -> PolynomialMapCoeffs:
        polys = structural_step_polys(0, self.sched, self.grads, p_s, p_c)
        polys = recentre_polys(polys, self.center, self.scale)
        coeffs = PolynomialMapCoeffs.from_coordinate_polys(polys, tol=1e-14)
        if coeffs.degree > self.max_expand_degree:
            raise ValueError("surrogate degrees too high for direct expansion")
        return coeffs


def folded_demo_instance(t_window: int = 6) -> FoldedInstance:
    """Low-degree folded run in the saturated attacker regime.

    Saturation is what makes the window contract: on the flat part of the
    clamp the folded step loses its delta-derivative, so the majorant is
    dominated by the learner rate.  The cubic sign and degree-13 clamp
    surrogates are a few percent accurate on the visited regions.  This
    exercises the folded machinery; it is not a tight certificate.
    """
    from .polyapprox import OddPolynomial

    base = certify_instance(t_window)
    sched = StepSchedule.uniform(t_window, eps_ball=base.sched.eps_ball,
                                 eta_delta=0.04, eta_u=0.1, alpha=1.2)
    p_s = OddPolynomial(np.array([1.1932, -0.2339]), halfwidth=1.0)
    p_c = OddPolynomial(np.array([
        1.2673167, -0.40685606, 0.22602583, -0.14315523,
        0.09384986, -0.0607401, 0.03718076]), halfwidth=6.0)
    return FoldedInstance(
        sched=sched, grads=base.grads, v0=base.v0,
        center=base.center, scale=base.scale,
        tau_s=0.7, tau_c=0.8, big_l=6.0, lam=1.25,
        fixed_polys=(p_s, p_c))


# ----------------------------------------------------------------------
# random families


def _exponents(d: int, ell: int):
    for cuts in itertools.combinations_with_replacement(range(d), ell):
        beta = [0] * d
        for i in cuts:
            beta[i] += 1
        yield tuple(beta)


def random_coeff_map(rng: np.random.Generator, d: int, degree: int,
                     lin_norm: float = 0.5, const_norm: float = 0.02,
                     high_norm: float = 0.1) -> PolynomialMapCoeffs:
    """Dense random coefficients at controlled per-degree norms."""
    terms: dict[int, dict[tuple[int, ...], np.ndarray]] = {}
    for ell in range(degree + 1):
        block = {beta: rng.standard_normal(d) for beta in _exponents(d, ell)}
        terms[ell] = block
    coeffs = PolynomialMapCoeffs(d, terms)
    norms = coeffs.norm_bounds()
    targets = [const_norm, lin_norm] + [high_norm / math.factorial(ell)
                                        for ell in range(2, degree + 1)]
    for ell in range(degree + 1):
        if norms[ell] == 0.0:
            continue
        factor = targets[ell] / norms[ell]
        for beta in coeffs.terms.get(ell, {}):
            coeffs.terms[ell][beta] *= factor
    return coeffs


@dataclass(frozen=True)
class RandomSystem:
    coeffs: PolynomialMapCoeffs
    v0: np.ndarray
    t_window: int
    n_levels: int
    rho: float

    def trajectory(self) -> np.ndarray:
        out = np.empty((self.t_window + 1, self.coeffs.d))
        out[0] = self.v0
        for t in range(self.t_window):
            out[t + 1] = self.coeffs.evaluate(out[t])
        return out


def random_contractive(rng: np.random.Generator, d_max: int = 3,
                       degree_max: int = 3, n_levels_max: int = 4,
                       t_max: int = 20, rho_target: float = 0.95,
                       degree: int | None = None) -> RandomSystem:
    """Draw a coefficient map and shrink it until the majorant certifies.

    Shrinking every order above zero by a common factor drives the
    majorant norm down geometrically, so the loop always terminates.
    """
    from .carleman import majorant_and_contractivity

    d = int(rng.integers(1, d_max + 1))
    deg = int(degree if degree is not None else rng.integers(1, degree_max + 1))
    n_levels = int(rng.integers(max(2, deg), n_levels_max + 1)) \
        if n_levels_max >= max(2, deg) else n_levels_max
    t_window = int(rng.integers(1, t_max + 1))
    coeffs = random_coeff_map(rng, d, deg)
    for _ in range(200):
        rho = majorant_and_contractivity(coeffs, n_levels).rho
        if rho <= rho_target:
            break
        for ell, block in coeffs.terms.items():
            if ell == 0:
                continue
            for beta in block:
                block[beta] *= 0.7
    else:
        raise RuntimeError("rescaling failed to certify contraction")
    v0 = rng.standard_normal(d)
    v0 *= 0.2 / max(np.linalg.norm(v0), 1e-12)
    return RandomSystem(coeffs, v0, t_window, n_levels, float(rho))
