#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "maf/tensor.hpp"

namespace maf {

struct DegenerateAlignment : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SimilarityTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  double scale = 1.0;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return scale * rotation * x + translation; }
};

struct Alignment {
  SimilarityTransform transform;
  Tensor<double> aligned;  // transform applied to X
};

/// Least-squares similarity (rotation with det +1) taking X onto Y.
Alignment procrustes_align(const Tensor<double>& X, const Tensor<double>& Y);

constexpr double kMillimetersPerMeter = 1000.0;

/// Mean joint distance after subtracting each set's root joint, in mm.
double mpjpe(const Tensor<double>& pred, const Tensor<double>& gt, int root = 0);
/// Mean joint distance after Procrustes alignment of pred onto gt, in mm.
double pa_mpjpe(const Tensor<double>& pred, const Tensor<double>& gt);
/// Mean vertex distance without alignment, in mm.
double pve(const Tensor<double>& pred, const Tensor<double>& gt);

/// Keypoint similarity in pixel units: sum_i exp(-d_i^2 / (2 area kappa_i^2)) v_i / sum_i v_i.
double oks(const Tensor<double>& pred, const Tensor<double>& gt, double area,
           const std::vector<double>& kappa, const std::vector<double>& visibility = {});

struct ApResult {
  double ap = 0, ap50 = 0, ap75 = 0;
};

/// Single-person protocol: AP at a threshold is the fraction of samples whose
/// OKS exceeds it; AP averages thresholds 0.50, 0.55, ..., 0.95.
ApResult oks_ap(const std::vector<double>& oks_values);
std::vector<double> oks_thresholds();

struct SegScores {
  double fb_accuracy = 0, fb_f1 = 0, part_accuracy = 0, part_f1 = 0;
};

/// Confusion counts accumulated over any number of label maps (0 = background).
class SegCounter {
 public:
  explicit SegCounter(int parts);
  void add(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt);
  /// f1 of a class absent from both prediction and truth counts as 1; part f1
  /// averages classes 1..P.
  SegScores scores() const;

 private:
  int parts_;
  long pixels_ = 0, fb_match_ = 0, part_match_ = 0;
  std::vector<long> tp_, fp_, fn_;  // index 0 is the foreground-vs-background class
};

SegScores seg_scores(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
                     int parts);

}  // namespace maf
