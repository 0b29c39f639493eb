#pragma once

// Rotation helpers templated on the scalar so the same code serves plain
// doubles and forward-mode jets. Quaternions are stored (w, x, y, z).

#include <cmath>
#include <type_traits>

#include <Eigen/Core>

namespace fsplat {

template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T>
using Quat = Eigen::Matrix<T, 4, 1>;

template <typename T>
double value_of(const T& x) {
    if constexpr (std::is_arithmetic_v<T>) {
        return static_cast<double>(x);
    } else {
        return x.a;
    }
}

// Below this angle Rodrigues switches to its Taylor expansion.
inline constexpr double kSmallAngle = 1e-6;

template <typename T>
Mat3<T> skew(const Vec3<T>& v) {
    Mat3<T> k;
    k << T(0), -v(2), v(1), v(2), T(0), -v(0), -v(1), v(0), T(0);
    return k;
}

template <typename T>
Mat3<T> axis_angle_to_matrix(const Vec3<T>& aa) {
    using std::cos;
    using std::sin;
    using std::sqrt;
    const T theta2 = aa.squaredNorm();
    T a;
    T b;
    if (value_of(theta2) < kSmallAngle * kSmallAngle) {
        a = T(1) - theta2 / T(6);
        b = T(0.5) - theta2 / T(24);
    } else {
        const T theta = sqrt(theta2);
        a = sin(theta) / theta;
        b = (T(1) - cos(theta)) / theta2;
    }
    const Mat3<T> k = skew(aa);
    return Mat3<T>::Identity() + a * k + b * (k * k);
}

template <typename T>
Quat<T> quat_multiply(const Quat<T>& p, const Quat<T>& q) {
    Quat<T> r;
    r(0) = p(0) * q(0) - p(1) * q(1) - p(2) * q(2) - p(3) * q(3);
    r(1) = p(0) * q(1) + p(1) * q(0) + p(2) * q(3) - p(3) * q(2);
    r(2) = p(0) * q(2) - p(1) * q(3) + p(2) * q(0) + p(3) * q(1);
    r(3) = p(0) * q(3) + p(1) * q(2) - p(2) * q(1) + p(3) * q(0);
    return r;
}

// Rotation matrix of a unit quaternion (no normalization performed).
template <typename T>
Mat3<T> quat_to_matrix(const Quat<T>& q) {
    const T w = q(0), x = q(1), y = q(2), z = q(3);
    Mat3<T> r;
    r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
        T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
        T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
    return r;
}

// Shepperd's method; picks the numerically largest pivot.
template <typename T>
Quat<T> matrix_to_quat(const Mat3<T>& m) {
    using std::sqrt;
    const double tr = value_of(m(0, 0)) + value_of(m(1, 1)) + value_of(m(2, 2));
    const double d0 = value_of(m(0, 0));
    const double d1 = value_of(m(1, 1));
    const double d2 = value_of(m(2, 2));
    Quat<T> q;
    if (tr >= d0 && tr >= d1 && tr >= d2) {
        const T s = sqrt(T(1) + m(0, 0) + m(1, 1) + m(2, 2)) * T(2);
        q(0) = T(0.25) * s;
        q(1) = (m(2, 1) - m(1, 2)) / s;
        q(2) = (m(0, 2) - m(2, 0)) / s;
        q(3) = (m(1, 0) - m(0, 1)) / s;
    } else if (d0 >= d1 && d0 >= d2) {
        const T s = sqrt(T(1) + m(0, 0) - m(1, 1) - m(2, 2)) * T(2);
        q(0) = (m(2, 1) - m(1, 2)) / s;
        q(1) = T(0.25) * s;
        q(2) = (m(0, 1) + m(1, 0)) / s;
        q(3) = (m(0, 2) + m(2, 0)) / s;
    } else if (d1 >= d2) {
        const T s = sqrt(T(1) + m(1, 1) - m(0, 0) - m(2, 2)) * T(2);
        q(0) = (m(0, 2) - m(2, 0)) / s;
        q(1) = (m(0, 1) + m(1, 0)) / s;
        q(2) = T(0.25) * s;
        q(3) = (m(1, 2) + m(2, 1)) / s;
    } else {
        const T s = sqrt(T(1) + m(2, 2) - m(0, 0) - m(1, 1)) * T(2);
        q(0) = (m(1, 0) - m(0, 1)) / s;
        q(1) = (m(0, 2) + m(2, 0)) / s;
        q(2) = (m(1, 2) + m(2, 1)) / s;
        q(3) = T(0.25) * s;
    }
    return q;
}

// Vector-Jacobian product of quat_to_matrix: given dL/dR, returns dL/dq.
inline Quat<double> quat_to_matrix_vjp(const Quat<double>& q, const Mat3<double>& dr) {
    const double w = q(0), x = q(1), y = q(2), z = q(3);
    Quat<double> g;
    g(0) = 2.0 * (-z * dr(0, 1) + y * dr(0, 2) + z * dr(1, 0) - x * dr(1, 2) - y * dr(2, 0) + x * dr(2, 1));
    g(1) = 2.0 * (y * dr(0, 1) + z * dr(0, 2) + y * dr(1, 0) - 2.0 * x * dr(1, 1) - w * dr(1, 2) + z * dr(2, 0) +
                  w * dr(2, 1) - 2.0 * x * dr(2, 2));
    g(2) = 2.0 * (-2.0 * y * dr(0, 0) + x * dr(0, 1) + w * dr(0, 2) + x * dr(1, 0) + z * dr(1, 2) - w * dr(2, 0) +
                  z * dr(2, 1) - 2.0 * y * dr(2, 2));
    g(3) = 2.0 * (-2.0 * z * dr(0, 0) - w * dr(0, 1) + x * dr(0, 2) + w * dr(1, 0) - 2.0 * z * dr(1, 1) +
                  y * dr(1, 2) + x * dr(2, 0) + y * dr(2, 1));
    return g;
}

// Gradients of quat_multiply(p, q) given dL/d(pq).
inline void quat_multiply_vjp(const Quat<double>& p, const Quat<double>& q, const Quat<double>& dr,
                              Quat<double>& dp, Quat<double>& dq) {
    // r = L(p) q = R(q) p, so dq = L(p)^T dr and dp = R(q)^T dr.
    Eigen::Matrix4d lp;
    lp << p(0), -p(1), -p(2), -p(3), p(1), p(0), -p(3), p(2), p(2), p(3), p(0), -p(1), p(3), -p(2), p(1), p(0);
    Eigen::Matrix4d rq;
    rq << q(0), -q(1), -q(2), -q(3), q(1), q(0), q(3), -q(2), q(2), -q(3), q(0), q(1), q(3), q(2), -q(1), q(0);
    dq = lp.transpose() * dr;
    dp = rq.transpose() * dr;
}

// Gradient through q_hat = q / |q|.
inline Quat<double> normalize_vjp(const Quat<double>& q, const Quat<double>& dq_hat) {
    const double n = q.norm();
    const Quat<double> qh = q / n;
    return (dq_hat - qh * qh.dot(dq_hat)) / n;
}

}  // namespace fsplat
