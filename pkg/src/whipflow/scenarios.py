"""Initial-data constructors, mollification, and the time-reversal tools.

Every builder produces a pinned state whose discrete tangents are unit
length or shorter (chords of a unit-speed curve never exceed the arc), so
the admissibility bound on the stretch holds before mollification by
construction.  Mollification smooths the tangent field and tapers it to
zero near both ends, which is the discrete counterpart of approximating by
smooth compactly supported data: zero slope at the free end, identically
pinned tail at the fixed end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diagnostics import (GeneralizedResidual, constitutive_tension,
                          generalized_residual)
from .errors import ContractError, ShapeError, UnderResolvedError
from .flow import (ArcState, GravitySpec, StepperConfig, Trajectory, evolve)
from .grid import Grid
from .regmap import RegParams, RegularizedMap
from .tension import TensionProfile

KINDS = (
    "vertical_down",
    "vertical_up",
    "straight_angle",
    "quarter_circle",
    "helix",
    "random_lipschitz",
)


@dataclass(frozen=True)
class ScenarioSpec:
    """Which curve to build and how to smooth it.

    ``angle`` is the pin angle of the straight scenario, ``geom_eps`` and
    ``alpha0`` parameterize the helix (radius geom_eps*sin(alpha0), pitch
    angle alpha0), ``seed`` drives the random unit-tangent field.
    """

    kind: str
    angle: float = np.pi / 4
    geom_eps: float = 0.1
    alpha0: float = np.pi / 2
    seed: int = 0
    mollify_radius: float = 0.0
    taper_width: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; choose from {KINDS}")
        if self.mollify_radius < 0.0 or self.taper_width < 0.0:
            raise ValueError("mollify_radius and taper_width must be nonnegative")


def _perp_frame(g_vec: np.ndarray) -> tuple[np.ndarray, ...]:
    """Deterministic orthonormal complement of the gravity direction."""
    d = g_vec.shape[0]
    if d == 2:
        return (np.array([-g_vec[1], g_vec[0]]),)
    pivot = np.zeros(3)
    pivot[int(np.argmin(np.abs(g_vec)))] = 1.0
    p1 = pivot - np.dot(pivot, g_vec) * g_vec
    p1 /= np.linalg.norm(p1)
    p2 = np.cross(g_vec, p1)
    return p1, p2


def _positions_from_tangents(grid: Grid, tangents: np.ndarray) -> np.ndarray:
    """Integrate a midpoint tangent field from the pinned end, so that the
    last node is exactly the origin."""
    positions = np.zeros((grid.n_nodes, tangents.shape[1]))
    positions[:-1] = -grid.h * np.cumsum(tangents[::-1], axis=0)[::-1]
    return positions


def build(spec: ScenarioSpec, grid: Grid, g: GravitySpec) -> ArcState:
    """Construct the initial curve of a scenario on a grid."""
    s = grid.nodes
    g_vec = g.direction
    d = g.dim

    if spec.kind == "vertical_down":
        positions = np.outer(1.0 - s, g_vec)
    elif spec.kind == "vertical_up":
        positions = np.outer(s - 1.0, g_vec)
    elif spec.kind == "straight_angle":
        p1 = _perp_frame(g_vec)[0]
        direction = np.cos(spec.angle) * g_vec + np.sin(spec.angle) * p1
        positions = np.outer(1.0 - s, direction)
    elif spec.kind == "quarter_circle":
        # unit-speed arc, pinned end tangent orthogonal to gravity
        radius = 2.0 / np.pi
        p1 = _perp_frame(g_vec)[0]
        phi = 0.5 * np.pi * (1.0 - s)
        positions = radius * (
            np.outer(np.sin(phi), p1) + np.outer(1.0 - np.cos(phi), g_vec)
        )
    elif spec.kind == "helix":
        if d != 3:
            raise ShapeError("the helix scenario needs ambient dimension 3")
        p1, p2 = _perp_frame(g_vec)
        eps = spec.geom_eps
        amp = eps * np.sin(spec.alpha0)
        positions = (
            np.outer(amp * (np.cos(s / eps) - np.cos(1.0 / eps)), p1)
            + np.outer(amp * (np.sin(s / eps) - np.sin(1.0 / eps)), p2)
            + np.outer((1.0 - s) * np.cos(spec.alpha0), g_vec)
        )
    elif spec.kind == "random_lipschitz":
        rng = np.random.default_rng(spec.seed)
        mids = grid.midpoints
        base = rng.normal(size=d)
        field = np.tile(1.5 * base / np.linalg.norm(base), (grid.n_cells, 1))
        for k in range(1, 6):
            scale = 0.5 / k
            field += np.outer(np.cos(k * np.pi * mids), scale * rng.normal(size=d))
            field += np.outer(np.sin(k * np.pi * mids), scale * rng.normal(size=d))
        norms = np.linalg.norm(field, axis=1)
        tangents = field / np.maximum(norms, 1e-12)[:, None]
        excess = np.linalg.norm(tangents, axis=1).max()
        if excess > 1.0:
            tangents = tangents / excess
        positions = _positions_from_tangents(grid, tangents)
    else:  # pragma: no cover - guarded in ScenarioSpec
        raise ValueError(spec.kind)

    return ArcState(grid=grid, positions=positions, time=0.0)


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x ** 3 * (10.0 + x * (-15.0 + 6.0 * x))


def mollify(state: ArcState, spec: ScenarioSpec) -> ArcState:
    """Smooth a state's tangent field and taper it to zero near both ends.

    The tangents are extended oddly below the free end and evenly beyond
    the pinned end (the latter is what odd reflection of the positions
    about s = 1 does to the derivative), convolved with a normalized
    polynomial bump of radius ``mollify_radius``, multiplied by a
    smooth-step cutoff that vanishes identically within a quarter of
    ``taper_width`` of either end, and re-integrated from the pin.  The
    tangent sup-norm never increases (the bump is a probability kernel and
    the cutoff is at most one), so admissible data stay admissible; a
    rescale guard enforces the unit bound anyway.
    """
    delta = spec.mollify_radius
    width = spec.taper_width
    grid = state.grid
    h = grid.h
    if not (delta > 0.0):
        raise ValueError("mollify needs a positive mollify_radius")
    if delta < 2.0 * h or width < 2.0 * h:
        raise UnderResolvedError(
            f"mollify_radius and taper_width must be at least 2h = {2*h:.3g}"
        )
    u = state.tangents
    n = grid.n_cells

    m = max(int(np.floor((delta - 1e-12) / h)), 1)
    offsets = np.arange(-m, m + 1) * h
    kernel = (1.0 - (offsets / delta) ** 2) ** 3
    kernel /= kernel.sum()

    left = -u[:m][::-1]
    right = u[n - m:][::-1]
    padded = np.vstack([left, u, right])
    smooth = np.column_stack(
        [np.convolve(padded[:, c], kernel, mode="valid") for c in range(u.shape[1])]
    )

    mids = grid.midpoints
    cutoff = _smoothstep((mids - 0.25 * width) / (0.5 * width)) \
        * _smoothstep(((1.0 - mids) - 0.25 * width) / (0.5 * width))
    tapered = smooth * cutoff[:, None]

    excess = np.linalg.norm(tapered, axis=1).max()
    if excess > 1.0:
        tapered = tapered / excess

    positions = _positions_from_tangents(grid, tapered)
    return ArcState(grid=grid, positions=positions, time=state.time)


def backward_transform(traj: Trajectory, g: GravitySpec) -> Trajectory:
    """Map a forward run computed under the opposite gravity to a solution
    backwards in time under ``g``: reverse time, negate the tension.

    Applying the transform twice restores the input bitwise.
    """
    if traj.tensions is None:
        raise ContractError("backward_transform needs tensions along the run")
    if not np.array_equal(traj.gravity.direction, -g.direction):
        raise ContractError(
            "trajectory gravity must be the exact opposite of the target gravity"
        )
    states = tuple(
        ArcState(grid=s.grid, positions=s.positions, time=-s.time)
        for s in reversed(traj.states)
    )
    tensions = tuple(
        TensionProfile(grid=p.grid, values=-p.values)
        for p in reversed(traj.tensions)
    )
    return Trajectory(states=states, gravity=g, tensions=tensions)


@dataclass(frozen=True)
class BranchingPair:
    """Two generalized trajectories from the upright state."""

    falling: Trajectory
    stationary: Trajectory
    falling_residual: GeneralizedResidual
    stationary_residual: GeneralizedResidual
    separation: float


def stationary_upright(grid: Grid, g: GravitySpec) -> tuple[ArcState, TensionProfile]:
    """The upright equilibrium state with its (nonpositive) tension."""
    state = ArcState(grid=grid, positions=np.outer(grid.nodes - 1.0, g.direction))
    tension = TensionProfile(grid=grid, values=-grid.nodes)
    return state, tension


def branching_pair(
    horizon: float,
    eps: float,
    grid: Grid,
    g: GravitySpec,
    cfg: Optional[StepperConfig] = None,
) -> BranchingPair:
    """Demonstrate non-uniqueness from the upright state.

    Trajectory one evolves the (mollified) upright state under the
    regularized flow, which cannot hold the compressive tension and drops
    toward the downward equilibrium; trajectory two holds the exact
    upright pair fixed, which satisfies the weak-solution conditions
    identically.  Returns both with their residuals and the L2 distance of
    the endpoints at the horizon.
    """
    if not (horizon > 0.0):
        raise ValueError("horizon must be positive")
    if cfg is None:
        cfg = StepperConfig(dt_init=1e-4, dt_min=1e-10, dt_max=0.02)
    rmap = RegularizedMap(RegParams(eps), dim=g.dim)
    h = grid.h
    spec = ScenarioSpec(
        kind="vertical_up",
        mollify_radius=max(0.02, 2.0 * h),
        taper_width=max(0.04, 2.0 * h),
    )
    init = mollify(build(spec, grid, g), spec)

    # the falling run pairs with the multiplier it actually realizes,
    # which is nonnegative by construction
    states = [init]
    tensions = [constitutive_tension(init, rmap)]

    def observer(state, dt, iters):
        states.append(state)
        tensions.append(constitutive_tension(state, rmap))

    evolve(init, horizon, rmap, g, cfg, observer=observer)
    falling = Trajectory(states=tuple(states), gravity=g, tensions=tuple(tensions))

    up_state, up_tension = stationary_upright(grid, g)
    frozen_states = []
    frozen_tensions = []
    for t in (0.0, 0.5 * horizon, horizon):
        frozen_states.append(
            ArcState(grid=grid, positions=up_state.positions, time=t)
        )
        frozen_tensions.append(up_tension)
    stationary = Trajectory(
        states=tuple(frozen_states), gravity=g, tensions=tuple(frozen_tensions)
    )

    diff = falling.states[-1].positions - up_state.positions
    separation = float(
        np.sqrt(grid.quad_trapezoid(np.sum(diff * diff, axis=1)))
    )
    return BranchingPair(
        falling=falling,
        stationary=stationary,
        falling_residual=generalized_residual(falling.pairs(), g),
        stationary_residual=generalized_residual(stationary.pairs(), g),
        separation=separation,
    )
