#pragma once

#include <cmath>
#include <stdexcept>

namespace maf {

struct DegenerateRotation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kDegenerateNorm = 1e-8;

// 6D rotation layout: r[0..2] is the first column direction, r[3..5] the
// second. Output R is row-major 3x3 with columns b1, b2, b1 x b2.
template <class S>
void rot6d_forward(const S* r, S* R) {
  const S n1 = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
  if (!(n1 >= S(kDegenerateNorm))) throw DegenerateRotation("6D rotation: first column ~ 0");
  const S b1[3] = {r[0] / n1, r[1] / n1, r[2] / n1};
  const S d = b1[0] * r[3] + b1[1] * r[4] + b1[2] * r[5];
  const S u[3] = {r[3] - d * b1[0], r[4] - d * b1[1], r[5] - d * b1[2]};
  const S n2 = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
  if (!(n2 >= S(kDegenerateNorm)))
    throw DegenerateRotation("6D rotation: columns parallel or second column ~ 0");
  const S b2[3] = {u[0] / n2, u[1] / n2, u[2] / n2};
  const S b3[3] = {b1[1] * b2[2] - b1[2] * b2[1], b1[2] * b2[0] - b1[0] * b2[2],
                   b1[0] * b2[1] - b1[1] * b2[0]};
  for (int i = 0; i < 3; ++i) {
    R[i * 3 + 0] = b1[i];
    R[i * 3 + 1] = b2[i];
    R[i * 3 + 2] = b3[i];
  }
}

/// Accumulates dL/dr given dL/dR (row-major).
template <class S>
void rot6d_backward(const S* r, const S* dR, S* dr) {
  auto dot = [](const S* a, const S* b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; };
  auto cross = [](const S* a, const S* b, S* o) {
    o[0] = a[1] * b[2] - a[2] * b[1];
    o[1] = a[2] * b[0] - a[0] * b[2];
    o[2] = a[0] * b[1] - a[1] * b[0];
  };
  const S n1 = std::sqrt(dot(r, r));
  const S b1[3] = {r[0] / n1, r[1] / n1, r[2] / n1};
  const S* a2 = r + 3;
  const S d = dot(b1, a2);
  const S u[3] = {a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]};
  const S n2 = std::sqrt(dot(u, u));
  const S b2[3] = {u[0] / n2, u[1] / n2, u[2] / n2};

  S g1[3], g2[3], g3[3];
  for (int i = 0; i < 3; ++i) {
    g1[i] = dR[i * 3 + 0];
    g2[i] = dR[i * 3 + 1];
    g3[i] = dR[i * 3 + 2];
  }
  // b3 = b1 x b2
  S t[3];
  cross(b2, g3, t);
  for (int i = 0; i < 3; ++i) g1[i] += t[i];
  cross(g3, b1, t);
  for (int i = 0; i < 3; ++i) g2[i] += t[i];
  // b2 = u / |u|
  const S pb2 = dot(b2, g2);
  S gu[3];
  for (int i = 0; i < 3; ++i) gu[i] = (g2[i] - b2[i] * pb2) / n2;
  // u = a2 - (b1.a2) b1
  const S pu = dot(b1, gu);
  for (int i = 0; i < 3; ++i) {
    dr[3 + i] += gu[i] - b1[i] * pu;
    g1[i] -= d * gu[i] + a2[i] * pu;
  }
  // b1 = a1 / |a1|
  const S pb1 = dot(b1, g1);
  for (int i = 0; i < 3; ++i) dr[i] += (g1[i] - b1[i] * pb1) / n1;
}

}  // namespace maf
