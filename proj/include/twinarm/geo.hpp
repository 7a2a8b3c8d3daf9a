// Copyright 2026 The TwinArm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Rigid-body geometry kernel: unit quaternions, poses, rigid transforms and
// the interpolation / error primitives built on them.

#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace twinarm {

template <typename Scalar>
using Vector3T = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3T = Eigen::Matrix<Scalar, 3, 3>;

/// Rotation stored as a quaternion with unit norm. The norm is restored after
/// every construction and product, so |q| = 1 holds to round-off.
template <typename Scalar>
class UnitQuaternion {
 public:
  using Vector3 = Vector3T<Scalar>;
  using Matrix3 = Matrix3T<Scalar>;

  UnitQuaternion() : q_(Eigen::Quaternion<Scalar>::Identity()) {}

  /// Throws std::invalid_argument for a zero or non-finite input.
  UnitQuaternion(Scalar w, Scalar x, Scalar y, Scalar z) : q_(w, x, y, z) {
    normalize();
  }

  explicit UnitQuaternion(const Eigen::Quaternion<Scalar>& q) : q_(q) {
    normalize();
  }

  static UnitQuaternion identity() { return UnitQuaternion(); }

  /// Rotation of `angle` radians about `axis` (axis need not be unit).
  static UnitQuaternion from_axis_angle(const Vector3& axis, Scalar angle) {
    const Scalar n = axis.norm();
    if (!(n > Scalar(0))) {
      throw std::invalid_argument("from_axis_angle: zero axis");
    }
    const Scalar half = angle / Scalar(2);
    const Vector3 v = axis / n * std::sin(half);
    return UnitQuaternion(std::cos(half), v.x(), v.y(), v.z());
  }

  static UnitQuaternion from_matrix(const Matrix3& r) {
    return UnitQuaternion(Eigen::Quaternion<Scalar>(r));
  }

  Scalar w() const { return q_.w(); }
  Scalar x() const { return q_.x(); }
  Scalar y() const { return q_.y(); }
  Scalar z() const { return q_.z(); }
  Vector3 vec() const { return q_.vec(); }
  Eigen::Matrix<Scalar, 4, 1> coeffs_wxyz() const {
    return {q_.w(), q_.x(), q_.y(), q_.z()};
  }

  const Eigen::Quaternion<Scalar>& eigen() const { return q_; }
  Matrix3 matrix() const { return q_.toRotationMatrix(); }

  UnitQuaternion conjugate() const { return UnitQuaternion(q_.conjugate()); }
  UnitQuaternion inverse() const { return conjugate(); }

  /// The antipode; the same rotation.
  UnitQuaternion operator-() const {
    return UnitQuaternion(-q_.w(), -q_.x(), -q_.y(), -q_.z());
  }

  Vector3 rotate(const Vector3& v) const { return q_ * v; }

  /// 4-vector dot product.
  Scalar dot(const UnitQuaternion& o) const {
    return q_.w() * o.q_.w() + q_.x() * o.q_.x() + q_.y() * o.q_.y() +
           q_.z() * o.q_.z();
  }

  friend UnitQuaternion operator*(const UnitQuaternion& a,
                                  const UnitQuaternion& b) {
    return UnitQuaternion(a.q_ * b.q_);
  }

  friend bool operator==(const UnitQuaternion& a, const UnitQuaternion& b) {
    return a.q_.coeffs() == b.q_.coeffs();
  }

 private:
  // Inputs already unit to within a few ulps are left untouched so that
  // products with an exact identity reproduce their operand bit for bit.
  void normalize() {
    const Scalar n2 = q_.squaredNorm();
    if (!std::isfinite(n2) || !(n2 > Scalar(0))) {
      throw std::invalid_argument("UnitQuaternion: zero or non-finite input");
    }
    constexpr Scalar kTol = Scalar(8) * std::numeric_limits<Scalar>::epsilon();
    if (std::abs(n2 - Scalar(1)) > kTol) {
      q_.coeffs() /= std::sqrt(n2);
    }
  }

  Eigen::Quaternion<Scalar> q_;
};

template <typename Scalar>
struct PoseT {
  Vector3T<Scalar> position = Vector3T<Scalar>::Zero();
  UnitQuaternion<Scalar> orientation;

  Matrix3T<Scalar> rotation_matrix() const { return orientation.matrix(); }

  friend bool operator==(const PoseT& a, const PoseT& b) {
    return a.position == b.position && a.orientation == b.orientation;
  }
};

/// Rigid transform x -> R x + t. A Transform named a_T_b maps coordinates in
/// frame b to frame a.
template <typename Scalar>
struct TransformT {
  UnitQuaternion<Scalar> rotation;
  Vector3T<Scalar> translation = Vector3T<Scalar>::Zero();

  static TransformT identity() { return {}; }

  Vector3T<Scalar> apply(const Vector3T<Scalar>& p) const {
    return rotation.rotate(p) + translation;
  }

  Eigen::Matrix<Scalar, 4, 4> matrix() const {
    Eigen::Matrix<Scalar, 4, 4> m = Eigen::Matrix<Scalar, 4, 4>::Identity();
    m.template topLeftCorner<3, 3>() = rotation.matrix();
    m.template topRightCorner<3, 1>() = translation;
    return m;
  }
};

// ---------------------------------------------------------------------------
// Free functions
// ---------------------------------------------------------------------------

template <typename Scalar>
TransformT<Scalar> compose(const TransformT<Scalar>& a,
                           const TransformT<Scalar>& b) {
  return {a.rotation * b.rotation, a.rotation.rotate(b.translation) +
                                       a.translation};
}

template <typename Scalar>
TransformT<Scalar> operator*(const TransformT<Scalar>& a,
                             const TransformT<Scalar>& b) {
  return compose(a, b);
}

template <typename Scalar>
TransformT<Scalar> invert(const TransformT<Scalar>& t) {
  const UnitQuaternion<Scalar> r_inv = t.rotation.inverse();
  return {r_inv, -r_inv.rotate(t.translation)};
}

/// A pose expressed in frame a is the transform a_T_body.
template <typename Scalar>
TransformT<Scalar> to_transform(const PoseT<Scalar>& p) {
  return {p.orientation, p.position};
}

template <typename Scalar>
PoseT<Scalar> to_pose(const TransformT<Scalar>& t) {
  return {t.translation, t.rotation};
}

/// Re-expresses `pose` (given in frame b) in frame a.
template <typename Scalar>
PoseT<Scalar> transform_pose(const TransformT<Scalar>& a_T_b,
                             const PoseT<Scalar>& pose) {
  return to_pose(compose(a_T_b, to_transform(pose)));
}

template <typename Scalar>
Vector3T<Scalar> lerp(const Vector3T<Scalar>& p1, const Vector3T<Scalar>& p2,
                      Scalar alpha) {
  return (Scalar(1) - alpha) * p1 + alpha * p2;
}

/// Returns q_target or its antipode, whichever has non-negative dot product
/// with q_prev.
template <typename Scalar>
UnitQuaternion<Scalar> hemisphere_align(const UnitQuaternion<Scalar>& q_prev,
                                        const UnitQuaternion<Scalar>& q_target) {
  return q_prev.dot(q_target) < Scalar(0) ? -q_target : q_target;
}

/// Half-angle between the two quaternions as 4-vectors, in [0, pi].
/// Computed as 2 atan2(|a - b|, |a + b|), which stays accurate where
/// acos(a . b) loses digits near 0 and pi.
template <typename Scalar>
Scalar quaternion_arc(const UnitQuaternion<Scalar>& a,
                      const UnitQuaternion<Scalar>& b) {
  const auto ca = a.coeffs_wxyz();
  const auto cb = b.coeffs_wxyz();
  return Scalar(2) * std::atan2((ca - cb).norm(), (ca + cb).norm());
}

/// Threshold below which slerp falls back to normalized linear blending.
template <typename Scalar>
constexpr Scalar kSlerpLinearThreshold = Scalar(1e-7);

/// Great-circle interpolation. Expects hemisphere_align to have been applied.
template <typename Scalar>
UnitQuaternion<Scalar> slerp(const UnitQuaternion<Scalar>& q_prev,
                             const UnitQuaternion<Scalar>& q_target,
                             Scalar alpha) {
  if (alpha == Scalar(0)) return q_prev;
  if (alpha == Scalar(1)) return q_target;
  const auto a = q_prev.coeffs_wxyz();
  const auto b = q_target.coeffs_wxyz();
  const Scalar theta = quaternion_arc(q_prev, q_target);
  Eigen::Matrix<Scalar, 4, 1> c;
  if (theta < kSlerpLinearThreshold<Scalar>) {
    c = (Scalar(1) - alpha) * a + alpha * b;
  } else {
    const Scalar s = std::sin(theta);
    c = std::sin((Scalar(1) - alpha) * theta) / s * a +
        std::sin(alpha * theta) / s * b;
  }
  return UnitQuaternion<Scalar>(c[0], c[1], c[2], c[3]);
}

/// Rotation angle between two orientations, 2 acos(|q1 . q2|) in [0, pi].
/// Evaluated through the relative rotation for accuracy at small angles.
template <typename Scalar>
Scalar geodesic_distance(const UnitQuaternion<Scalar>& q1,
                         const UnitQuaternion<Scalar>& q2) {
  const Eigen::Quaternion<Scalar> rel = q1.eigen().conjugate() * q2.eigen();
  return Scalar(2) * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

/// Translation distance and rotation angle between two poses.
template <typename Scalar>
struct PoseErrorT {
  Scalar position = 0;
  Scalar angle = 0;
};

template <typename Scalar>
PoseErrorT<Scalar> pose_error(const PoseT<Scalar>& a, const PoseT<Scalar>& b) {
  return {(a.position - b.position).norm(),
          geodesic_distance(a.orientation, b.orientation)};
}

/// Rotation vector (axis * angle) of q, with angle in [0, pi].
template <typename Scalar>
Vector3T<Scalar> rotation_vector(const UnitQuaternion<Scalar>& q) {
  const UnitQuaternion<Scalar> p = q.w() < Scalar(0) ? -q : q;
  const Vector3T<Scalar> v = p.vec();
  const Scalar s = v.norm();
  if (s < Scalar(1e-12)) return Scalar(2) * v;
  return v / s * (Scalar(2) * std::atan2(s, p.w()));
}

using Quat = UnitQuaternion<double>;
using Vec3 = Vector3T<double>;
using Mat3 = Matrix3T<double>;
using Pose = PoseT<double>;
using Transform = TransformT<double>;
using PoseError = PoseErrorT<double>;

/// The probe (imaging) arm and the needle arm.
enum class Arm { kProbe = 0, kNeedle = 1 };

inline constexpr int kNumArms = 2;

inline const char* arm_name(Arm a) {
  return a == Arm::kProbe ? "probe" : "needle";
}

inline int arm_index(Arm a) { return static_cast<int>(a); }

/// Small fixed pair indexed by Arm.
template <typename T>
struct ArmPair {
  T probe{};
  T needle{};

  T& operator[](Arm a) { return a == Arm::kProbe ? probe : needle; }
  const T& operator[](Arm a) const { return a == Arm::kProbe ? probe : needle; }

  friend bool operator==(const ArmPair&, const ArmPair&) = default;
};

inline constexpr Arm kArms[kNumArms] = {Arm::kProbe, Arm::kNeedle};

}  // namespace twinarm
