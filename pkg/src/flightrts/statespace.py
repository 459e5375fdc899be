"""State-space models with additive input and output noise.

A model describes ``xdot = f(x, u - w, theta)`` and ``y = g(x, u, theta) + v``.
Continuous models are stepped with fixed-step RK4 between samples; discrete
models return the next state from ``f`` directly, which is what the linear
test systems use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DivergenceError, LinearizationError

Array = np.ndarray
ModelFn = Callable[[Array, Array, Array], Array]


@dataclass(frozen=True)
class StateSpaceModel:
    n_x: int
    n_u: int
    n_y: int
    f: ModelFn
    g: ModelFn
    theta: Array = field(default_factory=lambda: np.empty(0))
    dfdx: ModelFn | None = None
    dfdu: ModelFn | None = None
    dgdx: ModelFn | None = None
    discrete: bool = False
    state_names: Sequence[str] = ()
    input_names: Sequence[str] = ()
    output_names: Sequence[str] = ()
    # outputs whose innovations are wrapped to (-pi, pi]
    angular_outputs: Sequence[int] = ()
    # inputs that never appear in data tables, with their constant value
    fixed_inputs: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for attr, n in (("state_names", self.n_x), ("input_names", self.n_u), ("output_names", self.n_y)):
            names = tuple(getattr(self, attr))
            if not names:
                prefix = attr[0]
                names = tuple(f"{prefix}{i}" for i in range(n))
            if len(names) != n:
                raise ValueError(f"{attr} has {len(names)} entries, expected {n}")
            object.__setattr__(self, attr, names)
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "angular_outputs", tuple(int(i) for i in self.angular_outputs))

    @property
    def n_theta(self) -> int:
        return self.theta.size

    @property
    def measured_inputs(self) -> tuple[str, ...]:
        return tuple(n for n in self.input_names if n not in self.fixed_inputs)

    def inputs_from_table(self, table) -> Array:
        """``(n, n_u)`` input matrix; fixed inputs are filled with their constant."""
        cols = []
        for name in self.input_names:
            if name in self.fixed_inputs:
                cols.append(np.full(table.n, float(self.fixed_inputs[name])))
            else:
                cols.append(np.asarray(table[name], dtype=float))
        return np.column_stack(cols) if cols else np.zeros((table.n, 0))

    def outputs_from_table(self, table) -> Array:
        return table.matrix(self.output_names)


def _check_finite(x: Array, what: str, step=None):
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise DivergenceError(f"non-finite {what} at index {int(bad[0])}", step=step, index=int(bad[0]))


def propagate(model: StateSpaceModel, x, u, theta=None, dt: float = 1.0) -> Array:
    """Advance the state by one sample with the input held constant."""
    theta = model.theta if theta is None else theta
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if model.discrete:
        out = np.asarray(model.f(x, u, theta), dtype=float)
    else:
        if not dt > 0:
            raise ValueError("dt must be positive")
        f = model.f
        k1 = f(x, u, theta)
        k2 = f(x + 0.5 * dt * k1, u, theta)
        k3 = f(x + 0.5 * dt * k2, u, theta)
        k4 = f(x + dt * k3, u, theta)
        out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _check_finite(out, "state after propagation")
    return out


def _fd_step(v: Array) -> Array:
    return np.maximum(1e-6, 1e-6 * np.abs(v))


def finite_difference(fun: Callable[[Array], Array], v: Array) -> Array:
    """Central-difference Jacobian with step ``max(1e-6, 1e-6 |v_i|)``."""
    v = np.asarray(v, dtype=float)
    h = _fd_step(v)
    cols = []
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h[i]
        cols.append((np.asarray(fun(v + e)) - np.asarray(fun(v - e))) / (2.0 * h[i]))
    if not cols:
        return np.zeros((np.asarray(fun(v)).size, 0))
    return np.column_stack(cols)


def jacobian_state(model: StateSpaceModel, x, u, theta=None, which: str = "f") -> Array:
    """Jacobian of ``f`` or ``g`` with respect to the state."""
    theta = model.theta if theta is None else theta
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if which == "f":
        fn, analytic = model.f, model.dfdx
    elif which == "g":
        fn, analytic = model.g, model.dgdx
    else:
        raise ValueError("which must be 'f' or 'g'")
    if analytic is not None:
        J = np.asarray(analytic(x, u, theta), dtype=float)
    else:
        J = finite_difference(lambda z: fn(z, u, theta), x)
    if not np.isfinite(J).all():
        raise LinearizationError(f"non-finite entries in d{which}/dx")
    return J


def jacobian_input(model: StateSpaceModel, x, u, theta=None) -> Array:
    theta = model.theta if theta is None else theta
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if model.dfdu is not None:
        J = np.asarray(model.dfdu(x, u, theta), dtype=float)
    else:
        J = finite_difference(lambda z: model.f(x, z, theta), u)
    if not np.isfinite(J).all():
        raise LinearizationError("non-finite entries in df/du")
    return J


def rk4_transition(A: Array, dt: float) -> Array:
    """Fourth-order Taylor polynomial of ``exp(A dt)``, the exact RK4 map for linear ``f``."""
    n = A.shape[0]
    Ad = A * dt
    term = np.eye(n)
    phi = np.eye(n)
    for k in range(1, 5):
        term = term @ Ad / k
        phi = phi + term
    return phi


def discretize(model: StateSpaceModel, x, u, theta=None, dt: float = 1.0) -> tuple[Array, Array]:
    """Discrete transition Jacobian and input-noise gain at ``(x, u)``."""
    A = jacobian_state(model, x, u, theta, "f")
    B = jacobian_input(model, x, u, theta)
    if model.discrete:
        return A, B
    return rk4_transition(A, dt), dt * B
