#pragma once

// Minimal 3-vector / 3x3-matrix arithmetic used by the periodic geometry.
// Row convention throughout: lattice rows are cell edge vectors, Cartesian
// position x = f * L (row vector times matrix).

#include <array>
#include <cmath>

namespace xtalflow {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

// Row vector times row-matrix: result_j = sum_i f_i * m[i][j].
inline Vec3 row_times_mat(const Vec3& f, const Mat3& m) {
    Vec3 out{0.0, 0.0, 0.0};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out[j] += f[i] * m[i][j];
    return out;
}

inline double determinant(const Mat3& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

inline Mat3 inverse(const Mat3& m) {
    const double det = determinant(m);
    Mat3 inv;
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    return inv;
}

inline Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 out{};
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < 3; ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

inline Mat3 transpose(const Mat3& m) {
    Mat3 out;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out[i][j] = m[j][i];
    return out;
}

// Wrap a fractional coordinate into [0, 1).
inline double wrap_frac(double x) {
    double w = x - std::floor(x);
    if (w >= 1.0) w -= 1.0;  // guards against -1e-18 flooring to -1
    return w;
}

inline Vec3 wrap_frac(const Vec3& f) { return {wrap_frac(f[0]), wrap_frac(f[1]), wrap_frac(f[2])}; }

// Wrap a fractional difference into [-0.5, 0.5) per axis (nearest image).
inline double wrap_half(double d) {
    double w = d - std::round(d);
    if (w < -0.5) w += 1.0;
    if (w >= 0.5) w -= 1.0;
    return w;
}

inline Vec3 wrap_half(const Vec3& d) { return {wrap_half(d[0]), wrap_half(d[1]), wrap_half(d[2])}; }

}  // namespace xtalflow
