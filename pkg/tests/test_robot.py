import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fixture_gen import mini_robot, mini_robot_dict, mini_robot_urdf
from quadretarget.kinematics import GeneralizedCoord, fk
from quadretarget.robot import (
    RobotModelError,
    load_robot_json,
    parse_urdf_subset,
    robot_from_dict,
    robot_to_dict,
)

SINGLE_LEG_URDF = """
<robot name="oneleg">
  <link name="trunk"/>
  <link name="FL_hip"/>
  <link name="FL_thigh"/>
  <link name="FL_calf"/>
  <link name="FL_foot"/>
  <joint name="FL_hip_joint" type="revolute">
    <parent link="trunk"/><child link="FL_hip"/>
    <origin xyz="0 0 0"/><axis xyz="1 0 0"/>
    <limit lower="-1" upper="1" effort="20" velocity="10"/>
  </joint>
  <joint name="FL_thigh_joint" type="revolute">
    <parent link="FL_hip"/><child link="FL_thigh"/>
    <origin xyz="0 0.05 0"/><axis xyz="0 1 0"/>
    <limit lower="-2" upper="2" effort="20" velocity="10"/>
  </joint>
  <joint name="FL_calf_joint" type="revolute">
    <parent link="FL_thigh"/><child link="FL_calf"/>
    <origin xyz="0 0 -0.2"/><axis xyz="0 1 0"/>
    <limit lower="-2.5" upper="-0.1" effort="20" velocity="10"/>
  </joint>
  <joint name="FL_foot_joint" type="fixed">
    <parent link="FL_calf"/><child link="FL_foot"/>
    <origin xyz="0 0 -0.2"/>
  </joint>
</robot>
"""


class TestUrdfParsing:
    def test_single_leg_lengths_read_off_origins(self):
        model = parse_urdf_subset(SINGLE_LEG_URDF, mass_override=5.0,
                                  inertia_override=np.eye(3) * 0.1)
        assert not model.complete
        assert model.dof == 3
        # Thigh->knee and knee->foot separations match the origin offsets.
        by_name = {j.name: j for j in model.joints}
        assert abs(by_name["FL_calf_joint"].origin_xyz[2]) == pytest.approx(0.2)
        assert model.keypoint_map["FL_knee"][0] == "FL_calf"
        # Fixed foot joint is folded into the keypoint offset.
        kp_idx = 12  # FL_foot canonical index
        assert model.kin_kp_offset[kp_idx][2] == pytest.approx(-0.2)

    def test_kinematic_loop_rejected(self):
        urdf = SINGLE_LEG_URDF.replace(
            '<parent link="FL_calf"/><child link="FL_foot"/>',
            '<parent link="FL_calf"/><child link="trunk"/>',
        )
        with pytest.raises(RobotModelError, match="tree|loop"):
            parse_urdf_subset(urdf, mass_override=5.0, inertia_override=np.eye(3) * 0.1)

    def test_full_quadruped_covers_all_keypoints(self):
        model = parse_urdf_subset(mini_robot_urdf())
        assert model.complete
        assert model.dof == 12
        assert len(model.keypoint_map) == 16

    def test_missing_limit_rejected(self):
        urdf = SINGLE_LEG_URDF.replace(
            '<limit lower="-1" upper="1" effort="20" velocity="10"/>', "", 1
        )
        with pytest.raises(RobotModelError, match="limit"):
            parse_urdf_subset(urdf)

    def test_unsupported_joint_type(self):
        urdf = SINGLE_LEG_URDF.replace('type="fixed"', 'type="prismatic"')
        with pytest.raises(RobotModelError, match="unsupported"):
            parse_urdf_subset(urdf)

    def test_malformed_xml(self):
        with pytest.raises(RobotModelError, match="malformed"):
            parse_urdf_subset("<robot><link none")

    def test_parse_deterministic(self):
        text = mini_robot_urdf()
        a = parse_urdf_subset(text)
        b = parse_urdf_subset(text)
        assert a.joint_names() == b.joint_names()
        assert np.array_equal(a.link_lengths, b.link_lengths)
        assert np.array_equal(a.kin_joint_origin_t, b.kin_joint_origin_t)


class TestRobotJson:
    def test_minimal_valid_json(self, tmp_path):
        path = tmp_path / "robot.json"
        path.write_text(json.dumps(mini_robot_dict()))
        model = load_robot_json(path)
        assert model.complete
        assert model.mass == pytest.approx(12.0)

    def test_zero_link_length_rejected(self):
        doc = mini_robot_dict()
        # Collapse the thigh offset so hip and thigh keypoints coincide.
        for j in doc["joints"]:
            if j["name"] == "FL_thigh_joint":
                j["origin_xyz"] = [0.0, 0.0, 0.0]
        with pytest.raises(RobotModelError, match="positive"):
            robot_from_dict(doc)

    def test_bad_inertia_rejected(self):
        doc = mini_robot_dict()
        doc["inertia"] = (-np.eye(3)).tolist()
        with pytest.raises(RobotModelError, match="positive-definite"):
            robot_from_dict(doc)

    def test_wrong_feet_order_rejected(self, tmp_path):
        doc = mini_robot_dict()
        doc["feet"] = ["FR_foot", "FL_foot", "RL_foot", "RR_foot"]
        path = tmp_path / "robot.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(RobotModelError, match="feet"):
            load_robot_json(path)

    def test_json_urdf_cross_format_fk(self):
        json_model = mini_robot()
        urdf_model = parse_urdf_subset(mini_robot_urdf())
        rng = np.random.default_rng(5)
        for _ in range(10):
            joints = rng.uniform(json_model.joint_lower, json_model.joint_upper)
            q = GeneralizedCoord(rng.normal(size=3),
                                 np.array([1.0, 0, 0, 0]), joints)
            assert np.allclose(fk(json_model, q), fk(urdf_model, q), atol=1e-9)

    def test_roundtrip_via_dict(self):
        model = mini_robot()
        back = robot_from_dict(robot_to_dict(model))
        q = model.neutral_coord()
        assert np.allclose(fk(model, q), fk(back, q), atol=1e-12)


class TestModelInvariants:
    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_reachability_bound(self, seed):
        model = mini_robot()
        rng = np.random.default_rng(seed)
        joints = rng.uniform(model.joint_lower, model.joint_upper)
        q = GeneralizedCoord.identity(joints)
        kp = fk(model, q)
        for leg in range(4):
            hip = kp[leg]
            foot = kp[12 + leg]
            max_reach = (model.link_lengths[4 + leg] + model.link_lengths[8 + leg]
                         + model.link_lengths[12 + leg])
            assert np.linalg.norm(foot - hip) <= max_reach + 1e-9

    def test_parent_index_topological(self):
        model = mini_robot()
        for j, parent in enumerate(model.parent_index):
            assert parent < j

    def test_link_lengths_positive(self):
        model = mini_robot()
        assert np.all(model.link_lengths > 0)

    def test_foot_keypoints_are_leaves(self):
        doc = mini_robot_dict()
        doc["joints"].append({
            "name": "tail", "type": "fixed", "parent": "FL_foot",
            "child": "tail_link", "origin_xyz": [0, 0, -0.05],
        })
        with pytest.raises(RobotModelError, match="leaf"):
            robot_from_dict(doc)
