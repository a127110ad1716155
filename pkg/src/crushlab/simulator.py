"""Quasi-static bonded-cell uniaxial compression.

Cells carry translational DOFs only.  Shared faces are bonded by a bilinear
mixed-mode cohesive law (quadratic stress initiation, energy-weighted
breakage); broken faces and the rigid platens interact through a
compressive-only penalty with a Coulomb friction cap.  The upper platen is
displacement-controlled; each step solves static equilibrium with damage
frozen and updates damage afterwards (event stepping).

Units: mm, N, MPa (N/mm^2); energies in mJ (N*mm); stiffnesses K in N/mm^3;
fracture energies G in mJ/mm^2 (= N/mm).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import DisconnectedMesh, InvalidRecord, NonConvergence
from .tessellation import BOUNDARY_TAG, FragmentMesh

_TINY = 1e-300

# Proper rotations taking the named compression axis onto the platen normal (z).
AXIS_ROTATIONS = {
    "X": np.array([[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]),
    "Y": np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]),
    "Z": np.eye(3),
}

RECORD_SCHEMA = "crushlab/crush/v1"


@dataclass(frozen=True)
class CzmParams:
    """Cohesive-zone parameters (mode I / mode II)."""

    K_I: float          # N/mm^3
    K_II: float         # N/mm^3
    sigma_I_e: float    # MPa
    sigma_II_e: float   # MPa
    G_I: float          # mJ/mm^2
    G_II: float         # mJ/mm^2
    mu: float           # friction coefficient
    rho: float = 2650.0  # kg/m^3, carried for completeness

    def __post_init__(self):
        for name in ("K_I", "K_II", "sigma_I_e", "sigma_II_e", "G_I", "G_II"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must be in [0, 1]")
        # softening must extend past the elastic limit in both modes
        if 2.0 * self.G_I / self.sigma_I_e <= self.sigma_I_e / self.K_I:
            raise ValueError("mode I softening shorter than elastic limit")
        if 2.0 * self.G_II / self.sigma_II_e <= self.sigma_II_e / self.K_II:
            raise ValueError("mode II softening shorter than elastic limit")


@dataclass(frozen=True)
class LoadControl:
    """Displacement-controlled loading parameters."""

    du_frac: float = 1e-3          # platen step as a fraction of the initial gap
    max_steps: int = 2000
    drop_fraction: float = 0.35    # valid breakage = force drop from the peak
    eq_tol: float = 1e-9           # relative equilibrium residual
    max_state_iters: int = 60      # contact/friction fixed-point iterations
    friction_tol: float = 1e-8     # relative slip-force change tolerance
    damage_tol: float = 1e-9       # staggered damage-update convergence
    damage_increment: float = 0.05  # max damage growth per staggered solve
    max_damage_iters: int = 1500   # staggered solves per platen step (cascades)
    regularization: float = 1e-9   # diagonal spring, fraction of K_I * mean area
    stop_at_break: bool = True


@dataclass(frozen=True)
class CrushRecord:
    """One compression test: force curve, peak, strength, validity."""

    particle_id: str
    curve: tuple[tuple[float, float], ...]   # (platen gap mm, force N)
    peak_force: float                        # N
    gap_at_peak: float                       # mm
    strength: float                          # MPa = peak_force / gap_at_peak^2
    valid: bool
    steps_run: int
    converged: bool = True
    energy_imbalance: float = 0.0            # max relative balance error seen

    def to_obj(self) -> dict:
        return {"schema": RECORD_SCHEMA, "particle_id": self.particle_id,
                "curve": [[g, f] for g, f in self.curve],
                "peak_force": self.peak_force, "gap_at_peak": self.gap_at_peak,
                "strength": self.strength, "valid": self.valid,
                "steps_run": self.steps_run, "converged": self.converged,
                "energy_imbalance": self.energy_imbalance}

    @staticmethod
    def from_obj(obj: dict) -> "CrushRecord":
        from .errors import SchemaMismatch
        if obj.get("schema") != RECORD_SCHEMA:
            raise SchemaMismatch(f"expected {RECORD_SCHEMA}, got {obj.get('schema')!r}")
        return CrushRecord(particle_id=obj["particle_id"],
                           curve=tuple((g, f) for g, f in obj["curve"]),
                           peak_force=obj["peak_force"], gap_at_peak=obj["gap_at_peak"],
                           strength=obj["strength"], valid=obj["valid"],
                           steps_run=obj["steps_run"], converged=obj["converged"],
                           energy_imbalance=obj["energy_imbalance"])

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), sort_keys=True, separators=(",", ":"))


def strength(record: CrushRecord) -> float:
    """Peak force over squared platen gap at peak, MPa."""
    if not record.valid:
        raise InvalidRecord(f"record {record.particle_id} has no valid breakage")
    return record.strength


# --- cohesive law ----------------------------------------------------------

def czm_mixed_mode(czm: CzmParams, delta_n, delta_t_norm):
    """Per-bond effective quantities for the current mode mixity.

    Returns (delta_m, k_eff, delta0, deltaF, t0): effective opening, secant
    stiffness, onset and failure displacements, and onset traction, for a
    proportional path at the instantaneous mixity (pure mode I when closed).
    """
    delta_n = np.asarray(delta_n, dtype=float)
    delta_t_norm = np.asarray(delta_t_norm, dtype=float)
    dn_pos = np.maximum(delta_n, 0.0)
    dm = np.hypot(dn_pos, delta_t_norm)
    safe = np.maximum(dm, _TINY)
    c = np.where(dm > 0.0, dn_pos / safe, 1.0)
    s = np.where(dm > 0.0, delta_t_norm / safe, 0.0)
    k_eff = czm.K_I * c * c + czm.K_II * s * s
    inv_d0 = np.sqrt((czm.K_I * c / czm.sigma_I_e) ** 2
                     + (czm.K_II * s / czm.sigma_II_e) ** 2)
    delta0 = 1.0 / inv_d0
    mode2 = czm.K_II * s * s / k_eff
    g_mix = czm.G_I + (czm.G_II - czm.G_I) * mode2
    t0 = k_eff * delta0
    deltaF = 2.0 * g_mix / t0
    return dm, k_eff, delta0, deltaF, t0


def czm_damage(delta_m, delta0, deltaF):
    """Bilinear softening damage for effective opening delta_m (0 before onset)."""
    raw = deltaF * (delta_m - delta0) / (np.maximum(delta_m, _TINY) * (deltaF - delta0))
    return np.where(delta_m > delta0, np.clip(raw, 0.0, 1.0), 0.0)


def czm_dissipation(damage, delta0, deltaF, t0):
    """Energy per area dissipated at the given damage (G_mix at damage 1)."""
    dm = delta0 * deltaF / np.maximum(deltaF - damage * (deltaF - delta0), _TINY)
    t_env = t0 * (deltaF - dm) / (deltaF - delta0)
    diss = (0.5 * t0 * delta0 + 0.5 * (t0 + t_env) * (dm - delta0)
            - 0.5 * t_env * dm)
    return np.where(damage > 0.0, diss, 0.0)


def bond_pull_curve(czm: CzmParams, area: float, delta_end: float, n_steps: int = 2000):
    """Quasi-static pure-normal opening of a single bonded face.

    Returns (openings, forces): the sampled traction-separation response at
    `area`, with damage kept monotone exactly as in the full solver.
    """
    openings = np.linspace(0.0, delta_end, n_steps + 1)
    damage = 0.0
    forces = np.empty_like(openings)
    for k, dn in enumerate(openings):
        dm, k_eff, d0, dF, t0 = czm_mixed_mode(czm, dn, 0.0)
        damage = max(damage, float(czm_damage(dm, d0, dF)))
        forces[k] = (1.0 - damage) * czm.K_I * dn * area
    return openings, forces


# --- bonded system ---------------------------------------------------------

def _polygon_area_normal(pts: np.ndarray):
    rolled = np.roll(pts, -1, axis=0)
    n = np.cross(pts, rolled).sum(axis=0)
    norm = float(np.linalg.norm(n))
    return 0.5 * norm, n / norm


class _BondedSystem:
    """Assembled bond/contact state for one rotated mesh."""

    def __init__(self, mesh: FragmentMesh, axis: str, czm: CzmParams,
                 control: LoadControl):
        if axis not in AXIS_ROTATIONS:
            raise ValueError(f"axis must be X, Y or Z, got {axis!r}")
        if not mesh.is_connected():
            raise DisconnectedMesh("adjacency graph is not connected")
        R = AXIS_ROTATIONS[axis]
        self.czm = czm
        self.control = control
        self.n = mesh.n_cells

        # Bonds from shared faces (geometry rotated so the axis is z).
        bi, bj, areas, normals = [], [], [], []
        for i, j, poly in mesh.adjacency:
            area, normal = _polygon_area_normal(poly @ R.T)
            # orient i -> j using the seed direction
            direction = (mesh.seeds[j] - mesh.seeds[i]) @ R.T
            if normal @ direction < 0.0:
                normal = -normal
            bi.append(i)
            bj.append(j)
            areas.append(area)
            normals.append(normal)
        self.bi = np.asarray(bi, dtype=np.intp)
        self.bj = np.asarray(bj, dtype=np.intp)
        self.area = np.asarray(areas)
        self.normal = np.asarray(normals)
        self.m = len(bi)

        # Platen contact geometry per cell: extreme z and projected areas of
        # exterior faces facing each platen.
        self.r_top = np.empty(self.n)
        self.r_bot = np.empty(self.n)
        self.area_top = np.zeros(self.n)
        self.area_bot = np.zeros(self.n)
        for k, cell in enumerate(mesh.cells):
            verts = cell.vertices @ R.T
            z = verts[:, 2]
            self.r_top[k] = z.max()
            self.r_bot[k] = z.min()
            if cell.face_tags is None:
                continue
            for ring, tag in zip(cell.faces, cell.face_tags):
                if tag != BOUNDARY_TAG:
                    continue
                a, nrm = _polygon_area_normal(verts[list(ring)])
                if nrm[2] > 0.0:
                    self.area_top[k] += a * nrm[2]
                else:
                    self.area_bot[k] -= a * nrm[2]

        self.z_top0 = float(self.r_top.max())
        self.z_bot = float(self.r_bot.min())
        self.gap0 = self.z_top0 - self.z_bot

        # Mutable state.
        self.damage = np.zeros(self.m)
        self.broken = np.zeros(self.m, dtype=bool)
        self.bond_anchor = np.zeros((self.m, 3))   # friction anchor, broken bonds
        self.top_anchor = np.zeros((self.n, 2))
        self.bot_anchor = np.zeros((self.n, 2))
        self.diss_czm = np.zeros(self.m)           # mJ, monotone per bond
        self.diss_fric = 0.0
        self.u = np.zeros(3 * self.n)

        # Static assembly index pattern for the four 3x3 bond blocks.
        r3 = np.arange(3)
        shape = (self.m, 3, 3)
        rows_i = np.broadcast_to((3 * self.bi)[:, None, None] + r3[None, :, None], shape)
        cols_i = np.broadcast_to((3 * self.bi)[:, None, None] + r3[None, None, :], shape)
        rows_j = np.broadcast_to((3 * self.bj)[:, None, None] + r3[None, :, None], shape)
        cols_j = np.broadcast_to((3 * self.bj)[:, None, None] + r3[None, None, :], shape)
        self._rows = np.concatenate([rows_i, rows_j, rows_i, rows_j], axis=0).ravel()
        self._cols = np.concatenate([cols_i, cols_j, cols_j, cols_i], axis=0).ravel()
        self.reg = control.regularization * czm.K_I * float(self.area.mean())

    # -- state-dependent coefficient evaluation --

    def _bond_deltas(self, u):
        du = u.reshape(self.n, 3)
        delta = du[self.bj] - du[self.bi]
        dn = np.einsum("ij,ij->i", delta, self.normal)
        dt = delta - dn[:, None] * self.normal
        return delta, dn, dt

    def _classify(self, u):
        """Contact/friction/tension states at displacement u.

        Returns a dict of state arrays used by the assembler.
        """
        czm, n = self.czm, self.n
        _, dn, dt = self._bond_deltas(u)
        dt_rel = dt - self.bond_anchor
        state = {}
        state["dn"] = dn
        state["tension"] = dn >= 0.0
        contact = self.broken & (dn < 0.0)
        state["contact"] = contact
        fn_bond = np.where(contact, -czm.K_I * self.area * dn, 0.0)
        kt_full = czm.K_II * self.area
        rel_norm = np.linalg.norm(dt_rel, axis=1)
        trial_norm = kt_full * rel_norm
        cap = czm.mu * fn_bond
        slip = contact & (trial_norm > cap + 1e-300)
        state["bond_stick"] = contact & ~slip
        state["bond_slip"] = slip
        # slipping contacts use a secant tangential stiffness so the force
        # magnitude is exactly the Coulomb cap along the relative offset
        with np.errstate(invalid="ignore", divide="ignore"):
            k_sec = np.where(slip, cap / np.maximum(rel_norm, _TINY), 0.0)
        state["bond_kt"] = np.where(state["bond_stick"], kt_full, k_sec)
        with np.errstate(invalid="ignore", divide="ignore"):
            dirs = dt_rel / np.maximum(rel_norm, _TINY)[:, None]
        state["bond_slip_force"] = np.where(slip[:, None], cap[:, None] * dirs, 0.0)

        uxyz = u.reshape(n, 3)
        for name, r, areas, anchor, sgn, z_plane in (
                ("top", self.r_top, self.area_top, self.top_anchor, 1.0, self._z_top),
                ("bot", self.r_bot, self.area_bot, self.bot_anchor, -1.0, self.z_bot)):
            pen = sgn * (r + uxyz[:, 2] - z_plane)
            active = (pen > 0.0) & (areas > 0.0)
            fn = np.where(active, czm.K_I * areas * pen, 0.0)
            ktp_full = czm.K_II * areas
            rel_p = uxyz[:, :2] - anchor
            rel_pn = np.linalg.norm(rel_p, axis=1)
            cap_p = czm.mu * fn
            slip_p = active & (ktp_full * rel_pn > cap_p + 1e-300)
            with np.errstate(invalid="ignore", divide="ignore"):
                k_sec_p = np.where(slip_p, cap_p / np.maximum(rel_pn, _TINY), 0.0)
                dirs_p = rel_p / np.maximum(rel_pn, _TINY)[:, None]
            state[f"{name}_active"] = active
            state[f"{name}_stick"] = active & ~slip_p
            state[f"{name}_slip"] = slip_p
            state[f"{name}_kt"] = np.where(state[f"{name}_stick"], ktp_full, k_sec_p)
            state[f"{name}_slip_force"] = np.where(slip_p[:, None],
                                                   cap_p[:, None] * dirs_p, 0.0)
            state[f"{name}_fn"] = fn
        return state

    def _assemble(self, state):
        czm = self.czm
        kn = np.where(
            self.broken,
            np.where(state["contact"], czm.K_I * self.area, 0.0),
            np.where(state["tension"],
                     (1.0 - self.damage) * czm.K_I * self.area,
                     czm.K_I * self.area))
        kt = np.where(self.broken, state["bond_kt"],
                      (1.0 - self.damage) * czm.K_II * self.area)

        nn = self.normal[:, :, None] * self.normal[:, None, :]
        eye = np.eye(3)[None, :, :]
        S = kt[:, None, None] * eye + (kn - kt)[:, None, None] * nn
        data = np.concatenate([S, S, -S, -S], axis=0).ravel()

        f = np.zeros(3 * self.n)
        # friction anchors of broken bonds enter as constant spring offsets
        offs = state["bond_kt"] > 0.0
        if offs.any():
            fa = state["bond_kt"][offs, None] * self.bond_anchor[offs]
            np.add.at(f, (3 * self.bj[offs])[:, None] + np.arange(3), fa)
            np.add.at(f, (3 * self.bi[offs])[:, None] + np.arange(3), -fa)

        diag = np.full(3 * self.n, self.reg)
        for name, r, areas, anchor, sgn, z_plane in (
                ("top", self.r_top, self.area_top, self.top_anchor, 1.0, self._z_top),
                ("bot", self.r_bot, self.area_bot, self.bot_anchor, -1.0, self.z_bot)):
            active = state[f"{name}_active"]
            kc = np.where(active, czm.K_I * areas, 0.0)
            diag[2::3] += kc
            f[2::3] += -kc * (r - z_plane)
            ktp = state[f"{name}_kt"]
            diag[0::3] += ktp
            diag[1::3] += ktp
            f[0::3] += ktp * anchor[:, 0]
            f[1::3] += ktp * anchor[:, 1]

        rows = np.concatenate([self._rows, np.arange(3 * self.n)])
        cols = np.concatenate([self._cols, np.arange(3 * self.n)])
        vals = np.concatenate([data, diag])
        K = sparse.coo_matrix((vals, (rows, cols)),
                              shape=(3 * self.n, 3 * self.n)).tocsc()
        return K, f

    def equilibrate(self):
        """Fixed point over contact/friction states at frozen damage.

        Converged when the re-classified system is self-consistent, i.e. the
        nonlinear residual K(state(u)) u - f(state(u)) is below tolerance.
        """
        u = self.u
        state = self._classify(u)
        set_keys = ("tension", "contact", "bond_stick", "bond_slip",
                    "top_active", "top_stick", "top_slip",
                    "bot_active", "bot_stick", "bot_slip")
        omega = 1.0
        d_prev = None
        sets_stable = False
        for _ in range(self.control.max_state_iters):
            K, f = self._assemble(state)
            d = spsolve(K, f) - u
            # Irons-Tuck dynamic relaxation accelerates the slowly rotating
            # slip-direction fixed point once the active sets have settled.
            if d_prev is not None and sets_stable:
                dd = d - d_prev
                denom = float(dd @ dd)
                if denom > 0.0:
                    omega = -omega * float(d_prev @ dd) / denom
                omega = min(max(omega, 0.1), 10.0)
            else:
                omega = 1.0
            u = u + omega * d
            new_state = self._classify(u)
            K2, f2 = self._assemble(new_state)
            residual = K2 @ u - f2
            ref = max(float(np.abs(f2).max()), 1e-6)
            sets_stable = all(np.array_equal(new_state[k], state[k]) for k in set_keys)
            state = new_state
            d_prev = d
            if float(np.abs(residual).max()) <= self.control.eq_tol * ref:
                self.u = u
                return new_state
        raise NonConvergence("contact/friction fixed point did not settle")

    def advance(self, z_top):
        """Move the platen and stagger equilibrium/damage to consistency.

        Damage growth per stagger is capped so that instability cascades are
        traversed as a resolved sequence of frozen-damage equilibria; each
        (force, state) snapshot is a valid quasi-static sample at this platen
        position and is returned for curve recording.
        """
        self._z_top = z_top
        samples = []
        for _ in range(self.control.max_damage_iters):
            state = self.equilibrate()
            samples.append((self.platen_force(state), state))
            changed = self.update_damage(state)
            if changed <= self.control.damage_tol:
                return samples
        raise NonConvergence("damage stagger did not settle")

    def platen_force(self, state) -> float:
        return float(state["top_fn"].sum())

    def update_damage(self, state) -> float:
        """Monotone damage update from the converged displacements.

        Returns the largest damage increment, which drives the staggered
        loop in advance().
        """
        change = 0.0
        _, dn, dt = self._bond_deltas(self.u)
        dt_norm = np.linalg.norm(dt, axis=1)
        intact = ~self.broken
        if intact.any():
            dm, k_eff, d0, dF, t0 = czm_mixed_mode(self.czm, dn[intact], dt_norm[intact])
            d_new = np.maximum(self.damage[intact], czm_damage(dm, d0, dF))
            diss = self.area[intact] * czm_dissipation(d_new, d0, dF, t0)
            change = float(np.max(d_new - self.damage[intact], initial=0.0))
            self.damage[intact] = d_new
            self.diss_czm[intact] = np.maximum(self.diss_czm[intact], diss)
            newly = intact.copy()
            newly[intact] = d_new >= 1.0 - 1e-12
            if newly.any():
                self.broken |= newly
                self.damage[newly] = 1.0
                # friction anchors start at the current tangential offset
                self.bond_anchor[newly] = dt[newly]

        # friction anchor return-mapping + dissipation for slipping contacts
        czm = self.czm
        slip = state["bond_slip"]
        if slip.any():
            force = state["bond_slip_force"][slip]
            kt = czm.K_II * self.area[slip]
            new_anchor = dt[slip] - force / kt[:, None]
            delta_a = new_anchor - self.bond_anchor[slip]
            self.diss_fric += float(np.einsum("ij,ij->", force, delta_a))
            self.bond_anchor[slip] = new_anchor
        uxy = self.u.reshape(self.n, 3)[:, :2]
        for name, areas, anchor in (("top", self.area_top, self.top_anchor),
                                    ("bot", self.area_bot, self.bot_anchor)):
            slip_p = state[f"{name}_slip"]
            if slip_p.any():
                force = state[f"{name}_slip_force"][slip_p]
                kt = czm.K_II * areas[slip_p]
                new_anchor = uxy[slip_p] - force / kt[:, None]
                delta_a = new_anchor - anchor[slip_p]
                self.diss_fric += float(np.einsum("ij,ij->", force, delta_a))
                anchor[slip_p] = new_anchor
        return change

    def elastic_energy(self, state) -> float:
        czm = self.czm
        _, dn, dt = self._bond_deltas(self.u)
        dt_norm2 = np.einsum("ij,ij->i", dt, dt)
        e = 0.0
        intact = ~self.broken
        kn = np.where(state["tension"], (1.0 - self.damage) * czm.K_I,
                      czm.K_I) * self.area
        kt = (1.0 - self.damage) * czm.K_II * self.area
        e += 0.5 * float((kn[intact] * dn[intact] ** 2).sum())
        e += 0.5 * float((kt[intact] * dt_norm2[intact]).sum())
        contact = state["contact"]
        e += 0.5 * czm.K_I * float((self.area[contact] * dn[contact] ** 2).sum())
        for which in ("bond_stick", "bond_slip"):
            sel = state[which]
            if sel.any():
                rel = dt[sel] - self.bond_anchor[sel]
                e += 0.5 * czm.K_II * float((self.area[sel]
                                             * np.einsum("ij,ij->i", rel, rel)).sum())
        uxyz = self.u.reshape(self.n, 3)
        for name, r, areas, anchor, sgn, z_plane in (
                ("top", self.r_top, self.area_top, self.top_anchor, 1.0, self._z_top),
                ("bot", self.r_bot, self.area_bot, self.bot_anchor, -1.0, self.z_bot)):
            active = state[f"{name}_active"]
            pen = sgn * (r + uxyz[:, 2] - z_plane)
            e += 0.5 * czm.K_I * float((areas[active] * pen[active] ** 2).sum())
            for which in ("stick", "slip"):
                sel = state[f"{name}_{which}"]
                if sel.any():
                    rel = uxyz[sel, :2] - anchor[sel]
                    e += 0.5 * czm.K_II * float((areas[sel]
                                                 * np.einsum("ij,ij->i", rel, rel)).sum())
        e += 0.5 * self.reg * float(self.u @ self.u)
        return e


def simulate_crush(mesh: FragmentMesh, axis: str, czm: CzmParams,
                   control: LoadControl = LoadControl(),
                   particle_id: str = "particle",
                   return_trace: bool = False):
    """Compress the tessellated particle between rigid platens along `axis`."""
    sys_ = _BondedSystem(mesh, axis, czm, control)
    du = control.du_frac * sys_.gap0
    z_top = sys_.z_top0
    curve = [(sys_.gap0, 0.0)]
    trace = {"work": [0.0], "elastic": [0.0], "czm": [0.0], "friction": [0.0]}
    work = 0.0
    prev_force = 0.0
    peak = 0.0
    gap_at_peak = sys_.gap0
    imbalance = 0.0
    converged = True
    valid = False
    steps = 0

    for step in range(1, control.max_steps + 1):
        z_top -= du
        try:
            state = sys_.advance(z_top)
        except NonConvergence:
            converged = False
            break
        steps = step
        force = sys_.platen_force(state)
        work += 0.5 * (prev_force + force) * du
        prev_force = force
        gap = z_top - sys_.z_bot
        curve.append((gap, force))

        elastic = sys_.elastic_energy(state)
        dczm = float(sys_.diss_czm.sum())
        total = elastic + dczm + sys_.diss_fric
        ref = max(work, total, 1e-9)
        imbalance = max(imbalance, abs(work - total) / ref)
        if return_trace:
            trace["work"].append(work)
            trace["elastic"].append(elastic)
            trace["czm"].append(dczm)
            trace["friction"].append(sys_.diss_fric)

        if force > peak:
            peak = force
            gap_at_peak = gap
        elif peak > 0.0 and force <= (1.0 - control.drop_fraction) * peak:
            valid = True
            if control.stop_at_break:
                break

    sigma = peak / gap_at_peak ** 2 if gap_at_peak > 0 else 0.0
    record = CrushRecord(particle_id=particle_id, curve=tuple(curve),
                         peak_force=peak, gap_at_peak=gap_at_peak,
                         strength=sigma, valid=valid and converged,
                         steps_run=steps, converged=converged,
                         energy_imbalance=imbalance)
    if return_trace:
        return record, trace
    return record
