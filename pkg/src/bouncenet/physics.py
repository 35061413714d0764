"""Rigid cube vs. ground-plane impulse simulator.

The state of the single body is packed into a flat float64 vector of 13
entries (position, unit quaternion ``w, x, y, z``, linear velocity, world
angular velocity) so that the inner loop can run under numba.  The public
functions accept and return :class:`RigidBodyState` values.

The contact solver is a small sequential-impulse scheme: an inelastic
projected Gauss-Seidel pass, a restitution pass, a blend between the two that
never lets kinetic energy grow, a Coulomb friction pass with per-contact
budgets, and a positional correction whose lift is paid for by the energy the
step dissipated.  As a result the mechanical energy is non-increasing from
one step to the next.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

STATE_FIELDS = ("position", "orientation", "linear_velocity", "angular_velocity")
_FIELD_SLICES = {
    "position": slice(0, 3),
    "orientation": slice(3, 7),
    "linear_velocity": slice(7, 10),
    "angular_velocity": slice(10, 13),
}

PENETRATION_TOLERANCE = 0.001
MAX_CONTACTS = 8


class SimulationError(RuntimeError):
    """Raised when the integrator meets a non-finite or invalid state."""


@dataclass(frozen=True)
class RigidBodyState:
    position: np.ndarray
    orientation: np.ndarray
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray

    def __post_init__(self):
        for name, size in (("position", 3), ("orientation", 4),
                           ("linear_velocity", 3), ("angular_velocity", 3)):
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            if arr.shape != (size,):
                raise ValueError(f"{name} must have {size} components")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def at_rest(cls, position, orientation=(1.0, 0.0, 0.0, 0.0)) -> "RigidBodyState":
        return cls(position, orientation, np.zeros(3), np.zeros(3))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation,
                               self.linear_velocity, self.angular_velocity])

    @classmethod
    def from_vector(cls, vec) -> "RigidBodyState":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[0:3], vec[3:7], vec[7:10], vec[10:13])

    def check_finite(self):
        for name in STATE_FIELDS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise SimulationError(f"non-finite value in state field '{name}'")


@dataclass(frozen=True)
class MaterialParams:
    mass: float
    restitution: float
    friction_coeff: float
    half_extent: float = 0.1

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")
        if not self.friction_coeff >= 0:
            raise ValueError("friction_coeff must be non-negative")
        if not self.half_extent > 0:
            raise ValueError("half_extent must be positive")

    @property
    def inertia(self) -> float:
        """Scalar moment of inertia of a solid cube (isotropic tensor)."""
        return self.mass * (2.0 * self.half_extent) ** 2 / 6.0

    def as_array(self) -> np.ndarray:
        return np.array([self.mass, self.restitution, self.friction_coeff,
                         self.half_extent], dtype=np.float64)


@dataclass(frozen=True)
class SimConfig:
    gravity: float = 9.81
    dt: float = 1.0 / 240.0
    frame_rate: float = 24.0
    max_frames: int = 240
    rest_threshold_speed: float = 0.01
    rest_threshold_angular_speed: float = 0.05
    rest_threshold_frames: int = 12
    solver_iterations: int = 16
    correction_factor: float = 1.0
    penetration_tolerance: float = PENETRATION_TOLERANCE
    # approach speeds below this are resolved inelastically (resting contact)
    bounce_threshold: float = 0.1

    def __post_init__(self):
        if self.max_frames < 1:
            raise ValueError("max_frames must be >= 1")
        if not (self.dt > 0 and self.frame_rate > 0):
            raise ValueError("dt and frame_rate must be positive")
        ratio = 1.0 / (self.frame_rate * self.dt)
        if round(ratio) < 1 or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError("dt must divide the frame period exactly")
        if self.solver_iterations < 1:
            raise ValueError("solver_iterations must be >= 1")

    @property
    def substeps(self) -> int:
        return int(round(1.0 / (self.frame_rate * self.dt)))

    def as_array(self) -> np.ndarray:
        return np.array([self.gravity, self.dt, self.penetration_tolerance,
                         self.correction_factor, float(self.solver_iterations),
                         self.bounce_threshold], dtype=np.float64)


@dataclass(frozen=True)
class Contact:
    position: np.ndarray  # world coordinates of the penetrating vertex
    depth: float          # positive when below the ground plane
    vertex: int = field(default=-1)


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _rotation_matrix(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    R = np.empty((3, 3))
    R[0, 0] = 1 - 2 * (y * y + z * z)
    R[0, 1] = 2 * (x * y - w * z)
    R[0, 2] = 2 * (x * z + w * y)
    R[1, 0] = 2 * (x * y + w * z)
    R[1, 1] = 1 - 2 * (x * x + z * z)
    R[1, 2] = 2 * (y * z - w * x)
    R[2, 0] = 2 * (x * z - w * y)
    R[2, 1] = 2 * (y * z + w * x)
    R[2, 2] = 1 - 2 * (x * x + y * y)
    return R


@njit(cache=True)
def _vertex_offsets(s, a):
    """World-frame offsets of the 8 cube vertices from the center of mass."""
    R = _rotation_matrix(s[3:7])
    out = np.empty((8, 3))
    k = 0
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                for r in range(3):
                    out[k, r] = a * (R[r, 0] * sx + R[r, 1] * sy + R[r, 2] * sz)
                k += 1
    return out


@njit(cache=True)
def _energy(s, m, a, g):
    inertia = m * (2.0 * a) ** 2 / 6.0
    v2 = s[7] * s[7] + s[8] * s[8] + s[9] * s[9]
    w2 = s[10] * s[10] + s[11] * s[11] + s[12] * s[12]
    return 0.5 * m * v2 + 0.5 * inertia * w2 + m * g * s[2]


@njit(cache=True)
def _kinetic(v, w, m, inertia):
    return 0.5 * m * (v[0] ** 2 + v[1] ** 2 + v[2] ** 2) + \
        0.5 * inertia * (w[0] ** 2 + w[1] ** 2 + w[2] ** 2)


@njit(cache=True)
def _point_velocity(v, w, r, out):
    out[0] = v[0] + w[1] * r[2] - w[2] * r[1]
    out[1] = v[1] + w[2] * r[0] - w[0] * r[2]
    out[2] = v[2] + w[0] * r[1] - w[1] * r[0]


@njit(cache=True)
def _apply_impulse(v, w, r, px, py, pz, inv_m, inv_i):
    v[0] += px * inv_m
    v[1] += py * inv_m
    v[2] += pz * inv_m
    w[0] += (r[1] * pz - r[2] * py) * inv_i
    w[1] += (r[2] * px - r[0] * pz) * inv_i
    w[2] += (r[0] * py - r[1] * px) * inv_i


@njit(cache=True)
def _friction_impulse(u, r, inv_m, inv_i, budget, out):
    """Tangential impulse that zeroes the slip ``u[:2]`` at lever arm ``r``,
    scaled down onto the Coulomb bound ``budget`` if needed.

    The clamped impulse shrinks the slip along its own direction, so it
    never reverses it and never adds kinetic energy.  Returns the magnitude.
    """
    k00 = inv_m + (r[1] * r[1] + r[2] * r[2]) * inv_i
    k11 = inv_m + (r[0] * r[0] + r[2] * r[2]) * inv_i
    k01 = -r[0] * r[1] * inv_i
    det = k00 * k11 - k01 * k01
    px = -(k11 * u[0] - k01 * u[1]) / det
    py = -(k00 * u[1] - k01 * u[0]) / det
    mag = math.sqrt(px * px + py * py)
    if mag > budget:
        scale = budget / mag if mag > 0.0 else 0.0
        px *= scale
        py *= scale
        mag = budget
    out[0] = px
    out[1] = py
    return mag


@njit(cache=True)
def _normal_pass(v, w, rs, k_n, targets, lam, n_c, iters, inv_m, inv_i):
    """Projected Gauss-Seidel on the normal rows with accumulated clamping."""
    u = np.empty(3)
    for _ in range(iters):
        for i in range(n_c):
            _point_velocity(v, w, rs[i], u)
            new = lam[i] + (targets[i] - u[2]) / k_n[i]
            if new < 0.0:
                new = 0.0
            d = new - lam[i]
            if d != 0.0:
                _apply_impulse(v, w, rs[i], 0.0, 0.0, d, inv_m, inv_i)
                lam[i] = new


@njit(cache=True)
def _solve_contacts(s, rs, depths, n_c, m, e, mu, a, g, dt, corr, iters,
                    bounce_threshold, e_start, half_step_bias, impulses_out):
    """Resolve ``n_c`` contacts in place on state ``s``.

    ``e_start`` is the mechanical energy at the start of the step; the blend
    factor and positional lift are chosen so the result never exceeds it.
    Writes the final normal impulse of each contact to ``impulses_out``.
    """
    inertia = m * (2.0 * a) ** 2 / 6.0
    inv_m = 1.0 / m
    inv_i = 1.0 / inertia
    v0 = s[7:10].copy()
    w0 = s[10:13].copy()
    u = np.empty(3)

    k_n = np.empty(n_c)
    approach = np.empty(n_c)
    for i in range(n_c):
        r = rs[i]
        k_n[i] = inv_m + (r[0] * r[0] + r[1] * r[1]) * inv_i
        if k_n[i] <= 0.0:
            return -1
        _point_velocity(v0, w0, r, u)
        approach[i] = u[2]

    # inelastic projection
    v_c = v0.copy()
    w_c = w0.copy()
    lam_c = np.zeros(n_c)
    zeros = np.zeros(n_c)
    _normal_pass(v_c, w_c, rs, k_n, zeros, lam_c, n_c, iters, inv_m, inv_i)

    # restitution targets on the end-of-step (node) velocity
    bias = 0.5 * g * dt if half_step_bias else 0.0
    targets = np.zeros(n_c)
    bouncing = False
    for i in range(n_c):
        if e > 0.0 and -approach[i] > bounce_threshold:
            targets[i] = -e * approach[i] + (1.0 + e) * bias
            bouncing = True

    v = v_c.copy()
    w = w_c.copy()
    lam = lam_c.copy()
    if bouncing:
        v_r = v0.copy()
        w_r = w0.copy()
        lam_r = np.zeros(n_c)
        _normal_pass(v_r, w_r, rs, k_n, targets, lam_r, n_c, iters, inv_m, inv_i)
        # kinetic energy along the blend v_c + t (v_r - v_c) is quadratic in t
        dv = v_r - v_c
        dw = w_r - w_c
        qa = 0.5 * m * (dv[0] ** 2 + dv[1] ** 2 + dv[2] ** 2) + \
            0.5 * inertia * (dw[0] ** 2 + dw[1] ** 2 + dw[2] ** 2)
        qb = m * (v_c[0] * dv[0] + v_c[1] * dv[1] + v_c[2] * dv[2]) + \
            inertia * (w_c[0] * dw[0] + w_c[1] * dw[1] + w_c[2] * dw[2])
        ke_c = _kinetic(v_c, w_c, m, inertia)
        allowed = e_start - m * g * s[2]
        t = 1.0
        if qa > 0.0 and ke_c + qb + qa > allowed:
            slack = allowed - ke_c
            if slack <= 0.0:
                t = 0.0
            else:
                t = (-qb + math.sqrt(qb * qb + 4.0 * qa * slack)) / (2.0 * qa)
                if t > 1.0:
                    t = 1.0
                if t < 0.0:
                    t = 0.0
        for k in range(3):
            v[k] = v_c[k] + t * dv[k]
            w[k] = w_c[k] + t * dw[k]
        for i in range(n_c):
            lam[i] = lam_c[i] + t * (lam_r[i] - lam_c[i])

    # Coulomb friction, each application shortens the tangential slip
    if mu > 0.0:
        used = np.zeros(n_c)
        p_t = np.empty(2)
        for _ in range(iters):
            for i in range(n_c):
                budget = mu * lam[i] - used[i]
                if budget <= 0.0:
                    continue
                r = rs[i]
                _point_velocity(v, w, r, u)
                if u[0] * u[0] + u[1] * u[1] < 1e-24:
                    continue
                jt = _friction_impulse(u, r, inv_m, inv_i, budget, p_t)
                _apply_impulse(v, w, r, p_t[0], p_t[1], 0.0, inv_m, inv_i)
                used[i] += jt
            # friction may turn a vertex back into the ground; push only
            # approaching points (each such push removes energy)
            for i in range(n_c):
                r = rs[i]
                _point_velocity(v, w, r, u)
                if u[2] < 0.0:
                    jn = -u[2] / k_n[i]
                    _apply_impulse(v, w, r, 0.0, 0.0, jn, inv_m, inv_i)
                    lam[i] += jn

    s[7:10] = v
    s[10:13] = w

    depth = 0.0
    for i in range(n_c):
        if depths[i] > depth:
            depth = depths[i]
    lift = corr * depth
    if g > 0.0 and lift > 0.0:
        budget = (e_start - _energy(s, m, a, g)) / (m * g)
        if budget < lift:
            lift = budget if budget > 0.0 else 0.0
    s[2] += lift

    for i in range(n_c):
        impulses_out[i] = lam[i]
    return n_c


@njit(cache=True)
def _integrate_free(s, g, dt):
    s[9] -= g * dt
    s[0] += s[7] * dt
    s[1] += s[8] * dt
    s[2] += s[9] * dt
    wx, wy, wz = s[10], s[11], s[12]
    speed = math.sqrt(wx * wx + wy * wy + wz * wz)
    if speed > 0.0:
        half = 0.5 * speed * dt
        sh = math.sin(half) / speed
        dw_, dx, dy, dz = math.cos(half), wx * sh, wy * sh, wz * sh
        qw, qx, qy, qz = s[3], s[4], s[5], s[6]
        s[3] = dw_ * qw - dx * qx - dy * qy - dz * qz
        s[4] = dw_ * qx + dx * qw + dy * qz - dz * qy
        s[5] = dw_ * qy - dx * qz + dy * qw + dz * qx
        s[6] = dw_ * qz + dx * qy - dy * qx + dz * qw
    norm = math.sqrt(s[3] ** 2 + s[4] ** 2 + s[5] ** 2 + s[6] ** 2)
    if speed > 0.0 or abs(norm - 1.0) > 1e-12:
        for k in range(3, 7):
            s[k] /= norm


@njit(cache=True)
def _gather_contacts(s, a, tol, rs, depths):
    offsets = _vertex_offsets(s, a)
    n_c = 0
    for k in range(8):
        z = s[2] + offsets[k, 2]
        if z < tol:
            rs[n_c, 0] = offsets[k, 0]
            rs[n_c, 1] = offsets[k, 1]
            rs[n_c, 2] = offsets[k, 2]
            depths[n_c] = -z
            n_c += 1
    return n_c


@njit(cache=True)
def _step_kernel(s_in, mat, cfg, impulses_out):
    m, e, mu, a = mat[0], mat[1], mat[2], mat[3]
    g, dt, tol, corr = cfg[0], cfg[1], cfg[2], cfg[3]
    iters = int(cfg[4])
    bounce_threshold = cfg[5]
    s = s_in.copy()
    e_start = _energy(s, m, a, g)
    _integrate_free(s, g, dt)
    rs = np.empty((MAX_CONTACTS, 3))
    depths = np.empty(MAX_CONTACTS)
    n_c = _gather_contacts(s, a, tol, rs, depths)
    status = 0
    if n_c > 0:
        status = _solve_contacts(s, rs, depths, n_c, m, e, mu, a, g, dt, corr,
                                 iters, bounce_threshold, e_start, True,
                                 impulses_out)
    return s, status


@njit(cache=True)
def _simulate_kernel(s0, mat, cfg, substeps, max_frames, rest_v, rest_w, rest_frames):
    """Returns (frame states, number of frames, error code, offending frame)."""
    out = np.empty((max_frames, 13))
    out[0] = s0
    s = s0.copy()
    impulses = np.empty(MAX_CONTACTS)
    still = 0
    n = 1
    while n < max_frames:
        for _ in range(substeps):
            s, status = _step_kernel(s, mat, cfg, impulses)
            if status < 0:
                return out, n, 2, n
        for k in range(13):
            if not np.isfinite(s[k]):
                return out, n, 1, n
        out[n] = s
        n += 1
        speed = math.sqrt(s[7] ** 2 + s[8] ** 2 + s[9] ** 2)
        spin = math.sqrt(s[10] ** 2 + s[11] ** 2 + s[12] ** 2)
        if speed < rest_v and spin < rest_w:
            still += 1
            if still >= rest_frames:
                break
        else:
            still = 0
    return out, n, 0, -1


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def quaternion_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """XYZ-extrinsic (roll about x, then pitch about y, then yaw about z)."""
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    return np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])


def rotation_matrix(orientation) -> np.ndarray:
    return _rotation_matrix(np.asarray(orientation, dtype=np.float64))


def vertex_positions(state: RigidBodyState, half_extent: float) -> np.ndarray:
    """World coordinates of the 8 cube vertices, shape (8, 3)."""
    offsets = _vertex_offsets(state.to_vector(), float(half_extent))
    return offsets + state.position


def lowest_point(state: RigidBodyState, half_extent: float) -> float:
    return float(vertex_positions(state, half_extent)[:, 2].min())


def mechanical_energy(state: RigidBodyState, material: MaterialParams,
                      gravity: float = 9.81) -> float:
    s = state.to_vector()
    return float(_energy(s, material.mass, material.half_extent, gravity))


def energies(states: np.ndarray, material: MaterialParams, gravity: float = 9.81) -> np.ndarray:
    """Mechanical energy of each row of a packed ``(n, 13)`` state array."""
    states = np.asarray(states)
    m = material.mass
    v2 = np.sum(states[:, 7:10] ** 2, axis=1)
    w2 = np.sum(states[:, 10:13] ** 2, axis=1)
    return 0.5 * m * v2 + 0.5 * material.inertia * w2 + m * gravity * states[:, 2]


def detect_contacts(state: RigidBodyState, material: MaterialParams,
                    tolerance: float = PENETRATION_TOLERANCE) -> list[Contact]:
    """Cube vertices lying below ``tolerance`` (world z), deepest data included."""
    verts = vertex_positions(state, material.half_extent)
    return [Contact(position=verts[k].copy(), depth=float(-verts[k, 2]), vertex=k)
            for k in range(8) if verts[k, 2] < tolerance]


def resolve_contact(state: RigidBodyState, contact: Contact, material: MaterialParams,
                    config: SimConfig | None = None) -> RigidBodyState:
    """Apply one contact's normal impulse, friction impulse and positional push.

    The normal impulse is ``-(1 + e) v_n / K`` computed from the current
    normal velocity of the contact point; friction opposes the tangential
    slip and is capped at ``mu`` times the normal impulse.  A separating
    contact leaves the state untouched.
    """
    config = config or SimConfig()
    s = state.to_vector()
    r = np.asarray(contact.position, dtype=np.float64) - state.position
    v, w = s[7:10].copy(), s[10:13].copy()
    u = np.empty(3)
    _point_velocity(v, w, r, u)
    if u[2] > 0.0:
        return state
    m, e, mu = material.mass, material.restitution, material.friction_coeff
    inv_m, inv_i = 1.0 / m, 1.0 / material.inertia
    k_n = inv_m + (r[0] ** 2 + r[1] ** 2) * inv_i
    if k_n <= 0.0:
        raise SimulationError("non-positive effective mass in contact")
    j = -(1.0 + e) * u[2] / k_n
    _apply_impulse(v, w, r, 0.0, 0.0, j, inv_m, inv_i)
    _point_velocity(v, w, r, u)
    if mu > 0.0 and math.hypot(u[0], u[1]) > 1e-12:
        p_t = np.empty(2)
        _friction_impulse(u, r, inv_m, inv_i, mu * j, p_t)
        _apply_impulse(v, w, r, p_t[0], p_t[1], 0.0, inv_m, inv_i)
    s[7:10], s[10:13] = v, w
    s[2] += config.correction_factor * max(contact.depth, 0.0)
    return RigidBodyState.from_vector(s)


def solve_contacts(state: RigidBodyState, contacts: list[Contact], material: MaterialParams,
                   config: SimConfig | None = None, energy_cap: float | None = None,
                   half_step_bias: bool = False):
    """Simultaneous resolution of several contacts.

    Returns the new state and the normal impulse applied at each contact.
    ``energy_cap`` bounds the post-resolution mechanical energy (defaults to
    the energy of ``state`` itself).
    """
    config = config or SimConfig()
    s = state.to_vector()
    n_c = len(contacts)
    if n_c == 0:
        return state, np.zeros(0)
    rs = np.array([np.asarray(c.position) - state.position for c in contacts], dtype=np.float64)
    depths = np.array([c.depth for c in contacts], dtype=np.float64)
    if energy_cap is None:
        energy_cap = mechanical_energy(state, material, config.gravity)
    impulses = np.empty(n_c)
    status = _solve_contacts(s, rs, depths, n_c, material.mass, material.restitution,
                             material.friction_coeff, material.half_extent,
                             config.gravity, config.dt, config.correction_factor,
                             config.solver_iterations, config.bounce_threshold,
                             float(energy_cap), half_step_bias, impulses)
    if status < 0:
        raise SimulationError("non-positive effective mass in contact")
    return RigidBodyState.from_vector(s), impulses


def step(state: RigidBodyState, material: MaterialParams, config: SimConfig | None = None,
         return_impulses: bool = False):
    """Advance the body by one substep ``config.dt``.

    Semi-implicit Euler (gravity into the velocity, then position, then the
    exact rotation for the current angular velocity), followed by contact
    resolution against the plane ``z = 0``.
    """
    config = config or SimConfig()
    state.check_finite()
    impulses = np.zeros(MAX_CONTACTS)
    s, status = _step_kernel(state.to_vector(), material.as_array(), config.as_array(), impulses)
    if status < 0:
        raise SimulationError("non-positive effective mass in contact")
    new = RigidBodyState.from_vector(s)
    new.check_finite()
    if return_impulses:
        return new, impulses[:max(status, 0)].copy()
    return new


def simulate_states(initial: RigidBodyState, material: MaterialParams,
                    config: SimConfig | None = None) -> np.ndarray:
    """Packed per-frame states, shape ``(n_frames, 13)``; row 0 is ``initial``."""
    config = config or SimConfig()
    initial.check_finite()
    if lowest_point(initial, material.half_extent) < 0.0:
        raise SimulationError("initial state penetrates the ground plane")
    out, n, err, where = _simulate_kernel(
        initial.to_vector(), material.as_array(), config.as_array(), config.substeps,
        config.max_frames, config.rest_threshold_speed, config.rest_threshold_angular_speed,
        config.rest_threshold_frames)
    if err == 1:
        bad = out[where - 1] if where > 0 else initial.to_vector()
        raise SimulationError(f"non-finite state reached at frame {where}: {bad}")
    if err == 2:
        raise SimulationError(f"non-positive effective mass at frame {where}")
    return out[:n].copy()


def initial_state(scenario) -> RigidBodyState:
    return RigidBodyState(
        scenario.initial_position,
        quaternion_from_euler(*scenario.initial_euler),
        scenario.initial_linear_velocity,
        scenario.initial_angular_velocity,
    )


def simulate_trajectory(scenario, config: SimConfig | None = None, return_states: bool = False):
    """Run one scenario to rest (or ``max_frames``) and record the COM path.

    Sampling starts at the physics take-over instant, one row per frame.
    """
    from .records import Trajectory

    config = config or SimConfig()
    start = initial_state(scenario)
    try:
        states = simulate_states(start, scenario.material, config)
    except SimulationError as exc:
        raise SimulationError(f"scenario seed {scenario.seed}: {exc}") from exc
    traj = Trajectory(states[:, 0:3], config.frame_rate, scenario.class_label, scenario.seed)
    if return_states:
        return traj, states
    return traj
