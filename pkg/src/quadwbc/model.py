"""Robot tree description and its plain-text file format.

A model is a kinematic tree of rigid links. Link 0 hangs on a floating
joint (free translation + rotation); every other link is connected to a
previously declared parent by a revolute joint. All link frames are
world-aligned at the zero configuration: joint placement is a pure
translation and orientation only ever comes from joint motion.

The file format is line oriented UTF-8 with four block kinds::

    link <name>           inertial data: mass, com, inertia
    joint <name>          topology: type, parent, child, axis, origin, group
    frame <name>          a point of interest: link, offset
    limits <joint-name>   position and torque limits: q, tau

Keys inside a block each live on one line.  `#` starts a comment.  SI
units throughout (m, kg, kg m^2, rad, N m).  See docs/model_format.md
for the full key list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FLOATING = "floating"
REVOLUTE = "revolute"

# Canonical frame names the controller layers look up.
FOOT_FRAMES = ("LF_foot", "RF_foot", "LH_foot", "RH_foot")
EE_FRAME = "ee"
BASE_FRAME = "base"


class ModelError(Exception):
    """Raised for parse errors (with line number) and invariant violations."""


@dataclass(frozen=True)
class Link:
    """One rigid body plus the joint that attaches it to its parent."""

    name: str
    index: int
    parent: int                 # -1 for the floating base
    joint_name: str
    joint_type: str             # FLOATING or REVOLUTE
    axis: np.ndarray | None     # unit axis in parent coordinates (revolute)
    origin: np.ndarray          # joint position in parent link coordinates
    mass: float
    com: np.ndarray             # centre of mass in link coordinates
    inertia: np.ndarray         # 3x3 rotational inertia about the com
    group: str                  # "base", "leg" or "arm"
    q_min: float
    q_max: float
    tau_min: float
    tau_max: float
    q_nominal: float
    dof: int                    # velocity index of the joint, -1 for base
    path_dofs: tuple[int, ...]  # revolute dof indices from root to this link


@dataclass(frozen=True)
class Frame:
    name: str
    link: int
    offset: np.ndarray          # fixed offset in link coordinates


@dataclass(frozen=True)
class RobotModel:
    """Parsed kinematic tree with a deterministic link ordering."""

    name: str
    links: tuple[Link, ...]
    frames: dict[str, Frame]
    n_l: int                    # leg joints
    n_a: int                    # arm joints

    @property
    def n_j(self) -> int:
        return self.n_l + self.n_a

    @property
    def nv(self) -> int:
        """Generalized-velocity dimension: 6 base dofs plus the joints."""
        return 6 + self.n_j

    @property
    def total_mass(self) -> float:
        return sum(l.mass for l in self.links)

    def link_index(self, name: str) -> int:
        for l in self.links:
            if l.name == name:
                return l.index
        raise ModelError(f"unknown link '{name}'")

    def joint_links(self) -> tuple[Link, ...]:
        """Links carried by revolute joints, in dof order."""
        return tuple(l for l in self.links if l.joint_type == REVOLUTE)

    def joint_limits(self) -> tuple[np.ndarray, np.ndarray]:
        js = self.joint_links()
        return (np.array([l.q_min for l in js]),
                np.array([l.q_max for l in js]))

    def torque_limits(self) -> tuple[np.ndarray, np.ndarray]:
        js = self.joint_links()
        return (np.array([l.tau_min for l in js]),
                np.array([l.tau_max for l in js]))

    def nominal_q(self) -> np.ndarray:
        return np.array([l.q_nominal for l in self.joint_links()])

    def arm_dofs(self) -> np.ndarray:
        """Velocity indices of the arm joints."""
        return np.array([6 + l.dof for l in self.joint_links()
                         if l.group == "arm"], dtype=int)

    def leg_dofs(self, foot_frame: str) -> np.ndarray:
        """Velocity indices of the revolute joints on the path to a foot."""
        fr = self.frames[foot_frame]
        return 6 + np.asarray(self.links[fr.link].path_dofs, dtype=int)


def _ro(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


class _Block:
    __slots__ = ("kind", "name", "line", "kv")

    def __init__(self, kind: str, name: str, line: int):
        self.kind = kind
        self.name = name
        self.line = line
        self.kv: dict[str, tuple[list[str], int]] = {}


def _parse_blocks(text: str) -> list[_Block]:
    blocks: list[_Block] = []
    current: _Block | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0]
        line = stripped.strip()
        if not line:
            continue
        tok = line.split()
        # block headers sit at column zero; keys are indented under them
        is_header = not stripped[0].isspace() and \
            tok[0] in ("link", "joint", "frame", "limits")
        if is_header:
            if len(tok) != 2:
                raise ModelError(f"line {lineno}: '{tok[0]}' block needs "
                                 f"exactly one name")
            current = _Block(tok[0], tok[1], lineno)
            blocks.append(current)
        else:
            if current is None:
                raise ModelError(f"line {lineno}: key '{tok[0]}' outside "
                                 f"any block")
            if tok[0] in current.kv:
                raise ModelError(f"line {lineno}: duplicate key '{tok[0]}' "
                                 f"in {current.kind} '{current.name}'")
            current.kv[tok[0]] = (tok[1:], lineno)
    return blocks


def _floats(block: _Block, key: str, n: int) -> np.ndarray:
    vals, lineno = block.kv[key]
    if len(vals) != n:
        raise ModelError(f"line {lineno}: '{key}' expects {n} numbers, "
                         f"got {len(vals)}")
    try:
        return np.array([float(v) for v in vals])
    except ValueError as e:
        raise ModelError(f"line {lineno}: bad number in '{key}': {e}") from e


def _require(block: _Block, key: str) -> None:
    if key not in block.kv:
        raise ModelError(f"line {block.line}: {block.kind} '{block.name}' "
                         f"is missing key '{key}'")


def _inertia_matrix(block: _Block) -> np.ndarray:
    vals, lineno = block.kv["inertia"]
    if len(vals) == 3:
        ixx, iyy, izz = (float(v) for v in vals)
        ixy = ixz = iyz = 0.0
    elif len(vals) == 6:
        ixx, iyy, izz, ixy, ixz, iyz = (float(v) for v in vals)
    else:
        raise ModelError(f"line {lineno}: 'inertia' expects 3 or 6 numbers")
    I = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    if np.any(np.linalg.eigvalsh(I) <= 0.0):
        raise ModelError(f"line {lineno}: inertia of '{block.name}' is not "
                         f"positive definite")
    return I


def loads_model(text: str, name: str = "model") -> RobotModel:
    """Parse a model from a string. See `load_model` for the invariants."""
    blocks = _parse_blocks(text)

    link_blocks = {b.name: b for b in blocks if b.kind == "link"}
    joint_blocks = [b for b in blocks if b.kind == "joint"]
    frame_blocks = [b for b in blocks if b.kind == "frame"]
    limit_blocks = {b.name: b for b in blocks if b.kind == "limits"}
    if len(link_blocks) != sum(1 for b in blocks if b.kind == "link"):
        dupes = [b.name for b in blocks if b.kind == "link"]
        dupes = sorted({n for n in dupes if dupes.count(n) > 1})
        raise ModelError(f"duplicate link block(s): {', '.join(dupes)}")

    # Joints are keyed by their child link; declaration order of the link
    # blocks fixes the link (and dof) ordering.
    joints_by_child: dict[str, _Block] = {}
    for jb in joint_blocks:
        _require(jb, "type")
        _require(jb, "child")
        child = jb.kv["child"][0][0]
        if child in joints_by_child:
            raise ModelError(f"line {jb.line}: link '{child}' already has "
                             f"a joint")
        joints_by_child[child] = jb

    floating = [jb for jb in joint_blocks if jb.kv["type"][0][0] == FLOATING]
    if len(floating) != 1:
        raise ModelError(f"model needs exactly one floating joint, "
                         f"found {len(floating)}")

    links: list[Link] = []
    index_of: dict[str, int] = {}
    dof_counter = 0
    groups_seen: list[str] = []

    for lb in link_blocks.values():
        # dict preserves declaration order (python 3.7+)
        lname = lb.name
        _require(lb, "mass")
        _require(lb, "com")
        _require(lb, "inertia")
        mass = float(_floats(lb, "mass", 1)[0])
        if mass <= 0.0:
            raise ModelError(f"line {lb.line}: link '{lname}' must have "
                             f"positive mass")
        com = _floats(lb, "com", 3)
        inertia = _inertia_matrix(lb)

        if lname not in joints_by_child:
            raise ModelError(f"line {lb.line}: link '{lname}' has no joint")
        jb = joints_by_child[lname]
        jtype = jb.kv["type"][0][0]
        if jtype not in (FLOATING, REVOLUTE):
            raise ModelError(f"line {jb.line}: unknown joint type '{jtype}'")

        if jtype == FLOATING:
            if links:
                raise ModelError(f"line {jb.line}: the floating joint must "
                                 f"carry the first declared link, not "
                                 f"'{lname}'")
            parent = -1
            axis = None
            origin = np.zeros(3)
            group = "base"
            dof = -1
            path: tuple[int, ...] = ()
            q_min = q_max = tau_min = tau_max = 0.0
            q_nom = 0.0
        else:
            _require(jb, "parent")
            _require(jb, "axis")
            _require(jb, "origin")
            pname = jb.kv["parent"][0][0]
            if pname not in index_of:
                raise ModelError(f"line {jb.line}: joint '{jb.name}' refers "
                                 f"to parent '{pname}' that is not declared "
                                 f"yet (parents must precede children)")
            parent = index_of[pname]
            axis = _floats(jb, "axis", 3)
            norm = float(np.linalg.norm(axis))
            if norm < 1e-12:
                raise ModelError(f"line {jb.line}: joint '{jb.name}' has a "
                                 f"zero axis")
            axis = axis / norm
            origin = _floats(jb, "origin", 3)
            group = jb.kv["group"][0][0] if "group" in jb.kv else "leg"
            if group not in ("leg", "arm"):
                raise ModelError(f"line {jb.line}: joint '{jb.name}' group "
                                 f"must be 'leg' or 'arm'")
            groups_seen.append(group)
            if group == "leg" and "arm" in groups_seen[:-1]:
                raise ModelError(f"line {jb.line}: leg joint '{jb.name}' "
                                 f"declared after an arm joint; legs must "
                                 f"come first")

            if jb.name not in limit_blocks:
                raise ModelError(f"line {jb.line}: joint '{jb.name}' has no "
                                 f"limits block")
            lim = limit_blocks[jb.name]
            _require(lim, "q")
            _require(lim, "tau")
            q_min, q_max = _floats(lim, "q", 2)
            tau_min, tau_max = _floats(lim, "tau", 2)
            if not q_min < q_max:
                raise ModelError(f"line {lim.line}: joint '{jb.name}' needs "
                                 f"q_min < q_max")
            if not tau_min < tau_max:
                raise ModelError(f"line {lim.line}: joint '{jb.name}' needs "
                                 f"tau_min < tau_max")
            q_nom = float(_floats(jb, "nominal", 1)[0]) \
                if "nominal" in jb.kv else 0.0
            if not (q_min <= q_nom <= q_max):
                raise ModelError(f"line {jb.line}: nominal angle of "
                                 f"'{jb.name}' violates its limits")
            dof = dof_counter
            dof_counter += 1
            path = links[parent].path_dofs + (dof,)

        links.append(Link(
            name=lname, index=len(links), parent=parent,
            joint_name=jb.name, joint_type=jtype,
            axis=None if axis is None else _ro(axis),
            origin=_ro(origin), mass=mass, com=_ro(com),
            inertia=_ro(inertia), group=group,
            q_min=float(q_min), q_max=float(q_max),
            tau_min=float(tau_min), tau_max=float(tau_max),
            q_nominal=float(q_nom), dof=dof, path_dofs=path))
        index_of[lname] = links[-1].index

    if not links:
        raise ModelError("model has no links")

    for jb in joint_blocks:
        child = jb.kv["child"][0][0]
        if child not in index_of:
            raise ModelError(f"line {jb.line}: joint '{jb.name}' refers to "
                             f"undeclared child link '{child}'")

    frames: dict[str, Frame] = {
        BASE_FRAME: Frame(BASE_FRAME, 0, _ro(np.zeros(3)))}
    for fb in frame_blocks:
        _require(fb, "link")
        _require(fb, "offset")
        lname = fb.kv["link"][0][0]
        if lname not in index_of:
            raise ModelError(f"line {fb.line}: frame '{fb.name}' refers to "
                             f"unknown link '{lname}'")
        if fb.name in frames:
            raise ModelError(f"line {fb.line}: duplicate frame '{fb.name}'")
        frames[fb.name] = Frame(fb.name, index_of[lname],
                                _ro(_floats(fb, "offset", 3)))

    n_l = sum(1 for l in links if l.group == "leg" and l.dof >= 0)
    n_a = sum(1 for l in links if l.group == "arm")
    return RobotModel(name=name, links=tuple(links), frames=frames,
                      n_l=n_l, n_a=n_a)


def load_model(path: str) -> RobotModel:
    """Load and validate a model file.

    Raises ModelError with the offending line number on malformed input,
    and names the offending link or joint on tree invariant violations
    (missing parents, non-positive masses, inverted limits, duplicate
    blocks, more than one floating joint).
    """
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    name = path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return loads_model(text, name=name)


def bundled_model_path(name: str = "hyq_arm") -> str:
    """Path of a model file shipped inside the package."""
    from importlib import resources
    return str(resources.files("quadwbc").joinpath(f"data/{name}.model"))


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(float(q @ q))
    if n < 1e-12:
        raise ValueError("degenerate quaternion")
    return q / n


@dataclass(frozen=True)
class GeneralizedState:
    """Floating-base state snapshot.

    The base pose is a world position plus a unit quaternion (w, x, y, z)
    rotating base coordinates into world coordinates.  Velocities are the
    world-frame linear and angular velocity of the base, so the
    generalized velocity stacks as [v_base, w_base, qd].
    """

    base_pos: np.ndarray        # (3,)
    base_quat: np.ndarray       # (4,) w first, unit norm
    q: np.ndarray               # (n_j,)
    base_lin_vel: np.ndarray    # (3,) world
    base_ang_vel: np.ndarray    # (3,) world
    qd: np.ndarray              # (n_j,)

    def __post_init__(self):
        for name in ("base_pos", "base_quat", "q",
                     "base_lin_vel", "base_ang_vel", "qd"):
            object.__setattr__(self, name, _ro(getattr(self, name)))
        if abs(float(self.base_quat @ self.base_quat) - 1.0) > 1e-9:
            raise ValueError("base quaternion must have unit norm")
        if self.q.shape != self.qd.shape:
            raise ValueError("q and qd length mismatch")

    @property
    def u(self) -> np.ndarray:
        """Generalized velocity [v_base, w_base, qd]."""
        return np.concatenate(
            [self.base_lin_vel, self.base_ang_vel, self.qd])

    @staticmethod
    def rest(model: RobotModel, base_pos=None, q=None) -> "GeneralizedState":
        n = model.n_j
        return GeneralizedState(
            base_pos=np.zeros(3) if base_pos is None else np.asarray(
                base_pos, dtype=float),
            base_quat=np.array([1.0, 0.0, 0.0, 0.0]),
            q=np.zeros(n) if q is None else np.asarray(q, dtype=float),
            base_lin_vel=np.zeros(3),
            base_ang_vel=np.zeros(3),
            qd=np.zeros(n))
