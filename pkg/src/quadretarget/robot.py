"""Robot morphology: kinematic tree, limits and lumped inertial data.

Only revolute and fixed joints are supported.  The dynamics stage uses a
single-rigid-body model, so the inertial data is lumped: total mass is
the sum of link masses and the inertia tensor combines the root link
inertia with point-mass parallel-axis terms for every other link at its
zero-configuration position.  Both values can be overridden.

Native robot JSON schema::

    {
      "name": "mini",
      "mass": 12.0,
      "inertia": [[...], [...], [...]],        # 3x3, kg m^2
      "joints": [
        {
          "name": "FL_hip_joint", "type": "revolute",
          "parent": "trunk", "child": "FL_hip",
          "axis": [1, 0, 0],
          "origin_xyz": [0.19, 0.047, 0], "origin_rpy": [0, 0, 0],
          "limit": [-0.9, 0.9], "torque_limit": 33.5, "velocity_limit": 21.0
        },
        ...
      ],
      "keypoints": [ {"name": "FL_hip", "link": "FL_hip", "offset": [0,0,0]}, ... ],
      "feet": ["FL_foot", "FR_foot", "RL_foot", "RR_foot"],
      "default_pose": [ ... ]                   # optional, M joint angles
    }

Keypoint names follow the canonical ordering of :mod:`quadretarget.motion`
(four hips, thighs, knees, feet; legs FL, FR, RL, RR).
"""

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .motion import (
    CANONICAL_KEYPOINT_NAMES,
    FOOT_INDEX,
    N_KEYPOINTS,
    PARENT_INDEX,
)
from .quatmath import quat_from_rpy, quat_mul, quat_rotate, quat_to_mat


class RobotModelError(ValueError):
    """Raised for malformed robot descriptions."""


@dataclass
class Joint:
    name: str
    parent_link: str
    child_link: str
    axis: np.ndarray
    origin_xyz: np.ndarray
    origin_rpy: np.ndarray
    limit: tuple
    torque_limit: float
    velocity_limit: float
    joint_type: str = "revolute"


@dataclass
class RobotModel:
    """Immutable kinematic/inertial description of one quadruped."""

    name: str
    mass: float
    body_inertia: np.ndarray
    joints: list
    keypoint_map: dict  # canonical keypoint name -> (link, offset)
    default_pose: np.ndarray | None = None

    # Derived, filled by _finalize.
    parent_index: np.ndarray = field(default=None, repr=False)
    foot_index: np.ndarray = field(default=None, repr=False)
    link_lengths: np.ndarray = field(default=None, repr=False)
    hip_offsets: np.ndarray = field(default=None, repr=False)
    joint_lower: np.ndarray = field(default=None, repr=False)
    joint_upper: np.ndarray = field(default=None, repr=False)
    torque_limits: np.ndarray = field(default=None, repr=False)
    velocity_limits: np.ndarray = field(default=None, repr=False)
    kin_joint_parent: np.ndarray = field(default=None, repr=False)
    kin_joint_axis: np.ndarray = field(default=None, repr=False)
    kin_joint_origin_t: np.ndarray = field(default=None, repr=False)
    kin_joint_origin_q: np.ndarray = field(default=None, repr=False)
    kin_kp_joint: np.ndarray = field(default=None, repr=False)
    kin_kp_offset: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._finalize()

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def complete(self) -> bool:
        return all(name in self.keypoint_map for name in CANONICAL_KEYPOINT_NAMES)

    def neutral_coord(self):
        from .kinematics import GeneralizedCoord

        joints = self.default_pose if self.default_pose is not None else np.zeros(self.dof)
        return GeneralizedCoord.identity(joints)

    def joint_names(self) -> list:
        return [j.name for j in self.joints]

    # -- construction ---------------------------------------------------

    def _finalize(self):
        self.mass = float(self.mass)
        if self.mass <= 0:
            raise RobotModelError(f"mass must be positive, got {self.mass}")
        self.body_inertia = np.asarray(self.body_inertia, dtype=float).reshape(3, 3)
        if not np.allclose(self.body_inertia, self.body_inertia.T, atol=1e-9):
            raise RobotModelError("inertia matrix must be symmetric")
        if np.any(np.linalg.eigvalsh(self.body_inertia) <= 0):
            raise RobotModelError("inertia matrix must be positive-definite")

        self._order_joints()
        self._pack_kinematics()  # splits off fixed joints; dof is set after this
        m = self.dof
        self.joint_lower = np.array([j.limit[0] for j in self.joints])
        self.joint_upper = np.array([j.limit[1] for j in self.joints])
        self.torque_limits = np.array([j.torque_limit for j in self.joints])
        self.velocity_limits = np.array([j.velocity_limit for j in self.joints])
        if m and (np.any(self.torque_limits <= 0) or np.any(self.velocity_limits <= 0)):
            raise RobotModelError("torque and velocity limits must be positive")
        if m and np.any(self.joint_lower > self.joint_upper):
            raise RobotModelError("joint lower limit exceeds upper limit")
        if self.default_pose is not None:
            self.default_pose = np.asarray(self.default_pose, dtype=float).reshape(m)

        self.parent_index = PARENT_INDEX.copy()
        self.foot_index = FOOT_INDEX.copy()
        if self.complete:
            self._derive_geometry()

    def _order_joints(self):
        """Topological joint order (parents first), stable in input order."""
        links = {j.parent_link for j in self.joints} | {j.child_link for j in self.joints}
        child_of = {}
        for j in self.joints:
            if j.child_link in child_of:
                raise RobotModelError(
                    f"link '{j.child_link}' has two parent joints; kinematic graph is not a tree"
                )
            child_of[j.child_link] = j
        roots = [l for l in sorted(links) if l not in child_of]
        if len(roots) != 1:
            raise RobotModelError(
                f"kinematic tree must have exactly one root link, found {roots or 'a cycle'}"
            )
        self.root_link = roots[0]
        placed = {self.root_link}
        ordered = []
        pending = list(self.joints)
        while pending:
            progress = False
            remaining = []
            for j in pending:
                if j.parent_link in placed:
                    placed.add(j.child_link)
                    ordered.append(j)
                    progress = True
                else:
                    remaining.append(j)
            if not progress:
                names = [j.name for j in remaining]
                raise RobotModelError(f"kinematic loop or orphan joints detected: {names}")
            pending = remaining
        self.joints = ordered

    def _pack_kinematics(self):
        revolute = [j for j in self.joints if j.joint_type == "revolute"]
        fixed = [j for j in self.joints if j.joint_type == "fixed"]
        all_joints = self.joints
        self.joints = revolute  # dof counts revolute joints only
        self._fixed_joints = fixed
        by_child = {j.child_link: j for j in all_joints}
        rev_idx = {j.name: i for i, j in enumerate(revolute)}

        m = len(revolute)
        self.kin_joint_parent = np.full(m, -1, dtype=np.int64)
        self.kin_joint_axis = np.zeros((m, 3))
        self.kin_joint_origin_t = np.zeros((m, 3))
        self.kin_joint_origin_q = np.zeros((m, 4))
        for i, j in enumerate(revolute):
            axis = np.asarray(j.axis, dtype=float)
            norm = np.linalg.norm(axis)
            if norm < 1e-9:
                raise RobotModelError(f"joint '{j.name}' has a zero axis")
            self.kin_joint_axis[i] = axis / norm
            # Fold fixed-joint chains between this joint and its nearest
            # revolute ancestor into the origin transform.
            t = j.origin_xyz.astype(float).copy()
            q = quat_from_rpy(*j.origin_rpy)
            cur = j.parent_link
            parent = -1
            while cur != self.root_link:
                pj = by_child.get(cur)
                if pj is None:
                    raise RobotModelError(f"link '{cur}' is not connected to the tree")
                if pj.joint_type == "revolute":
                    parent = rev_idx[pj.name]
                    break
                pq = quat_from_rpy(*pj.origin_rpy)
                t = pj.origin_xyz + quat_rotate(pq, t)
                q = quat_mul(pq, q)
                cur = pj.parent_link
            self.kin_joint_parent[i] = parent
            self.kin_joint_origin_t[i] = t
            self.kin_joint_origin_q[i] = q

        self.kin_kp_joint = np.full(N_KEYPOINTS, -2, dtype=np.int64)
        self.kin_kp_offset = np.zeros((N_KEYPOINTS, 3))
        link_frames = self._zero_config_link_frames(all_joints)
        for idx, name in enumerate(CANONICAL_KEYPOINT_NAMES):
            if name not in self.keypoint_map:
                continue
            link, offset = self.keypoint_map[name]
            if link not in link_frames:
                raise RobotModelError(f"keypoint '{name}' references unknown link '{link}'")
            t = np.asarray(offset, dtype=float).copy()
            cur = link
            parent = -1
            while cur != self.root_link:
                pj = by_child[cur]
                if pj.joint_type == "revolute":
                    parent = rev_idx[pj.name]
                    break
                pq = quat_from_rpy(*pj.origin_rpy)
                t = pj.origin_xyz + quat_rotate(pq, t)
                cur = pj.parent_link
            self.kin_kp_joint[idx] = parent
            self.kin_kp_offset[idx] = t

    def _zero_config_link_frames(self, all_joints):
        """Zero-configuration world transform of every link frame."""
        frames = {self.root_link: (np.zeros(3), np.array([1.0, 0, 0, 0]))}
        pending = list(all_joints)
        while pending:
            remaining = []
            for j in pending:
                if j.parent_link in frames:
                    pt, pq = frames[j.parent_link]
                    jq = quat_from_rpy(*j.origin_rpy)
                    frames[j.child_link] = (pt + quat_rotate(pq, j.origin_xyz), quat_mul(pq, jq))
                else:
                    remaining.append(j)
            if len(remaining) == len(pending):
                break
            pending = remaining
        return frames

    def _derive_geometry(self):
        from .kinematics import GeneralizedCoord, fk

        q0 = self.neutral_coord()
        kp0 = fk(self, q0)
        probe = GeneralizedCoord.identity(
            np.clip(q0.joints + 0.37, self.joint_lower, self.joint_upper)
        )
        kp1 = fk(self, probe)

        self.link_lengths = np.empty(N_KEYPOINTS)
        for j in range(N_KEYPOINTS):
            par = PARENT_INDEX[j]
            base0 = np.zeros(3) if par < 0 else kp0[par]
            base1 = np.zeros(3) if par < 0 else kp1[par]
            d0 = float(np.linalg.norm(kp0[j] - base0))
            d1 = float(np.linalg.norm(kp1[j] - base1))
            if abs(d0 - d1) > 1e-9:
                raise RobotModelError(
                    f"keypoint '{CANONICAL_KEYPOINT_NAMES[j]}' is not rigidly "
                    f"attached to its parent keypoint ({d0:.6g} vs {d1:.6g} m)"
                )
            if d0 <= 1e-9:
                raise RobotModelError(
                    f"segment length for keypoint '{CANONICAL_KEYPOINT_NAMES[j]}' "
                    f"must be positive, got {d0:.6g}"
                )
            self.link_lengths[j] = d0

        parent_links = {j.parent_link for j in self.joints} | {
            j.parent_link for j in self._fixed_joints
        }
        for fi in FOOT_INDEX:
            link = self.keypoint_map[CANONICAL_KEYPOINT_NAMES[fi]][0]
            if link in parent_links:
                raise RobotModelError(
                    f"foot keypoint '{CANONICAL_KEYPOINT_NAMES[fi]}' must sit on a "
                    f"leaf link, but '{link}' has child joints"
                )
        self.hip_offsets = kp0[FOOT_INDEX].copy()

    def leg_length(self, leg: int) -> float:
        """Thigh plus shank length of one leg (hip pitch to foot reach)."""
        return float(self.link_lengths[8 + leg] + self.link_lengths[12 + leg])


def _parse_floats(text, n, what):
    try:
        vals = [float(v) for v in text.split()]
    except (AttributeError, ValueError) as exc:
        raise RobotModelError(f"cannot parse {what}: {text!r}") from exc
    if len(vals) != n:
        raise RobotModelError(f"{what} needs {n} numbers, got {text!r}")
    return np.array(vals)


_URDF_SUFFIX_TO_GROUP = {"hip": "hip", "thigh": "thigh", "calf": "knee", "foot": "foot"}


def parse_urdf_subset(
    xml_text: str,
    keypoint_links: dict | None = None,
    mass_override: float | None = None,
    inertia_override: np.ndarray | None = None,
    default_pose: np.ndarray | None = None,
) -> RobotModel:
    """Parse the supported URDF subset (revolute + fixed joints).

    Keypoints are discovered from link-name suffixes (``_hip``,
    ``_thigh``, ``_calf``, ``_foot`` with ``FL/FR/RL/RR`` prefixes);
    ``keypoint_links`` overrides that table with a mapping from canonical
    keypoint name to link name.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise RobotModelError(f"malformed URDF XML: {exc}") from exc
    if root.tag != "robot":
        raise RobotModelError(f"expected <robot> root element, got <{root.tag}>")
    name = root.get("name", "robot")

    links = {}
    for link in root.findall("link"):
        lname = link.get("name")
        if lname is None:
            raise RobotModelError("link without a name")
        inertial = link.find("inertial")
        mass = 0.0
        inertia = np.zeros((3, 3))
        origin = np.zeros(3)
        if inertial is not None:
            mass_el = inertial.find("mass")
            if mass_el is not None:
                mass = float(mass_el.get("value", 0.0))
            io = inertial.find("origin")
            if io is not None and io.get("xyz"):
                origin = _parse_floats(io.get("xyz"), 3, f"inertial origin of '{lname}'")
            ie = inertial.find("inertia")
            if ie is not None:
                ixx = float(ie.get("ixx", 0))
                iyy = float(ie.get("iyy", 0))
                izz = float(ie.get("izz", 0))
                ixy = float(ie.get("ixy", 0))
                ixz = float(ie.get("ixz", 0))
                iyz = float(ie.get("iyz", 0))
                inertia = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
        links[lname] = (mass, inertia, origin)

    joints = []
    for joint in root.findall("joint"):
        jname = joint.get("name", "<unnamed>")
        jtype = joint.get("type")
        if jtype not in ("revolute", "fixed"):
            raise RobotModelError(f"joint '{jname}': unsupported type '{jtype}'")
        parent = joint.find("parent")
        child = joint.find("child")
        if parent is None or child is None:
            raise RobotModelError(f"joint '{jname}' is missing parent/child")
        origin = joint.find("origin")
        xyz = np.zeros(3)
        rpy = np.zeros(3)
        if origin is not None:
            if origin.get("xyz"):
                xyz = _parse_floats(origin.get("xyz"), 3, f"origin of '{jname}'")
            if origin.get("rpy"):
                rpy = _parse_floats(origin.get("rpy"), 3, f"rpy of '{jname}'")
        axis = np.array([1.0, 0, 0])
        limit = (0.0, 0.0)
        torque = velocity = 1.0
        if jtype == "revolute":
            axis_el = joint.find("axis")
            if axis_el is not None:
                axis = _parse_floats(axis_el.get("xyz"), 3, f"axis of '{jname}'")
            limit_el = joint.find("limit")
            if limit_el is None:
                raise RobotModelError(f"revolute joint '{jname}' is missing its <limit> element")
            try:
                limit = (float(limit_el.get("lower")), float(limit_el.get("upper")))
                torque = float(limit_el.get("effort"))
                velocity = float(limit_el.get("velocity"))
            except (TypeError, ValueError) as exc:
                raise RobotModelError(
                    f"revolute joint '{jname}' needs lower/upper/effort/velocity limits"
                ) from exc
        joints.append(
            Joint(jname, parent.get("link"), child.get("link"), axis, xyz, rpy,
                  limit, torque, velocity, jtype)
        )

    keypoint_map = {}
    if keypoint_links is None:
        for lname in links:
            parts = lname.rsplit("_", 1)
            if len(parts) == 2 and parts[0] in ("FL", "FR", "RL", "RR"):
                group = _URDF_SUFFIX_TO_GROUP.get(parts[1])
                if group is not None:
                    keypoint_map[f"{parts[0]}_{group}"] = (lname, np.zeros(3))
    else:
        for kp_name, lname in keypoint_links.items():
            if kp_name not in CANONICAL_KEYPOINT_NAMES:
                raise RobotModelError(f"unknown keypoint name '{kp_name}'")
            keypoint_map[kp_name] = (lname, np.zeros(3))

    mass, inertia = _lump_inertial(links, joints, mass_override, inertia_override)
    return RobotModel(
        name=name,
        mass=mass,
        body_inertia=inertia,
        joints=joints,
        keypoint_map=keypoint_map,
        default_pose=default_pose,
    )


def _lump_inertial(links, joints, mass_override, inertia_override):
    child_links = {j.child_link for j in joints}
    roots = [l for l in links if l not in child_links]
    root = roots[0] if roots else None

    # Zero-config world position of each link frame.
    frames = {root: (np.zeros(3), np.array([1.0, 0, 0, 0]))}
    pending = list(joints)
    while pending:
        remaining = []
        for j in pending:
            if j.parent_link in frames:
                pt, pq = frames[j.parent_link]
                jq = quat_from_rpy(*j.origin_rpy)
                frames[j.child_link] = (pt + quat_rotate(pq, j.origin_xyz), quat_mul(pq, jq))
            else:
                remaining.append(j)
        if len(remaining) == len(pending):
            break
        pending = remaining

    total_mass = 0.0
    inertia = np.zeros((3, 3))
    for lname, (m, iner, com) in links.items():
        total_mass += m
        if lname == root:
            inertia = inertia + iner
            continue
        if m > 0 and lname in frames:
            pt, pq = frames[lname]
            r = pt + quat_rotate(pq, com)
            rot = quat_to_mat(pq)
            inertia = inertia + rot @ iner @ rot.T
            inertia = inertia + m * (float(r @ r) * np.eye(3) - np.outer(r, r))
    if mass_override is not None:
        total_mass = float(mass_override)
    if inertia_override is not None:
        inertia = np.asarray(inertia_override, dtype=float).reshape(3, 3)
    if total_mass <= 0:
        raise RobotModelError("URDF has no positive link mass; pass mass_override")
    if np.any(np.linalg.eigvalsh((inertia + inertia.T) / 2) <= 0):
        raise RobotModelError("lumped inertia is not positive-definite; pass inertia_override")
    return total_mass, (inertia + inertia.T) / 2


def load_robot_json(path) -> RobotModel:
    """Load a robot from the native JSON schema (see module docstring)."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise RobotModelError(
                f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}"
            ) from exc
    try:
        model = robot_from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise RobotModelError(f"{path}: bad robot description ({exc})") from exc
    if not model.complete:
        missing = [n for n in CANONICAL_KEYPOINT_NAMES if n not in model.keypoint_map]
        raise RobotModelError(f"{path}: keypoints missing: {missing}")
    feet = doc.get("feet")
    expected = [CANONICAL_KEYPOINT_NAMES[i] for i in FOOT_INDEX]
    if feet is not None and list(feet) != expected:
        raise RobotModelError(f"{path}: 'feet' must be {expected}, got {feet}")
    return model


def robot_from_dict(doc: dict) -> RobotModel:
    joints = [
        Joint(
            name=j["name"],
            parent_link=j["parent"],
            child_link=j["child"],
            axis=np.asarray(j.get("axis", [1, 0, 0]), dtype=float),
            origin_xyz=np.asarray(j.get("origin_xyz", [0, 0, 0]), dtype=float),
            origin_rpy=np.asarray(j.get("origin_rpy", [0, 0, 0]), dtype=float),
            limit=tuple(j.get("limit", (0.0, 0.0))),
            torque_limit=float(j.get("torque_limit", 1.0)),
            velocity_limit=float(j.get("velocity_limit", 1.0)),
            joint_type=j.get("type", "revolute"),
        )
        for j in doc["joints"]
    ]
    keypoint_map = {
        k["name"]: (k["link"], np.asarray(k.get("offset", [0, 0, 0]), dtype=float))
        for k in doc.get("keypoints", [])
    }
    default_pose = doc.get("default_pose")
    return RobotModel(
        name=doc.get("name", "robot"),
        mass=float(doc["mass"]),
        body_inertia=np.asarray(doc["inertia"], dtype=float),
        joints=joints,
        keypoint_map=keypoint_map,
        default_pose=None if default_pose is None else np.asarray(default_pose, dtype=float),
    )


def robot_to_dict(model: RobotModel) -> dict:
    joints = [
        {
            "name": j.name,
            "type": j.joint_type,
            "parent": j.parent_link,
            "child": j.child_link,
            "axis": list(map(float, j.axis)),
            "origin_xyz": list(map(float, j.origin_xyz)),
            "origin_rpy": list(map(float, j.origin_rpy)),
            "limit": [float(j.limit[0]), float(j.limit[1])],
            "torque_limit": float(j.torque_limit),
            "velocity_limit": float(j.velocity_limit),
        }
        for j in list(model.joints) + list(model._fixed_joints)
    ]
    doc = {
        "name": model.name,
        "mass": model.mass,
        "inertia": model.body_inertia.tolist(),
        "joints": joints,
        "keypoints": [
            {"name": n, "link": model.keypoint_map[n][0],
             "offset": list(map(float, model.keypoint_map[n][1]))}
            for n in CANONICAL_KEYPOINT_NAMES if n in model.keypoint_map
        ],
        "feet": [CANONICAL_KEYPOINT_NAMES[i] for i in FOOT_INDEX],
    }
    if model.default_pose is not None:
        doc["default_pose"] = model.default_pose.tolist()
    return doc
