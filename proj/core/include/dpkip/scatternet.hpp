#pragma once

#include <complex>
#include <memory>
#include <vector>

#include <Eigen/Core>

namespace dpkip {

/// Precomputed Morlet filter bank in the frequency domain for a fixed
/// image size. Band-pass filters psi_{j,theta} for j in [0,J), theta in
/// [0,L); one low-pass phi at scale 2^J. The frequency responses of the
/// (complex, analytic) Morlet wavelets are real-valued on the grid, so
/// they are stored as real arrays, row-major [y*W + x].
///
/// Invariants enforced at build time:
///  - every psi has an exactly zero DC bin (zero mean in space),
///  - the low-pass DC bin is positive,
///  - the Littlewood-Paley sum
///      |phi(w)|^2 + sum_{j,t} (|psi(w)|^2 + |psi(-w)|^2) / 2
///    lies in [0.3, 1.0] for all w, which makes the transform
///    non-expansive.
class FilterBank {
 public:
  int height() const { return height_; }
  int width() const { return width_; }
  int scales() const { return scales_; }        // J
  int orientations() const { return orients_; } // L
  int subsampling() const { return 1 << scales_; }
  int out_height() const { return height_ >> scales_; }
  int out_width() const { return width_ >> scales_; }

  // Scattering coefficient count per input channel:
  // 1 + J*L + L^2 * J*(J-1)/2.
  int coeff_count() const;
  // Feature vector length for a `channels`-channel image.
  int feature_length(int channels) const;

  const std::vector<double>& psi_hat(int j, int l) const {
    return psi_[j * orients_ + l];
  }
  const std::vector<double>& phi_hat() const { return phi_; }

  struct FftPlans;  // opaque; defined with the FFT backend

 private:
  friend FilterBank build_filter_bank(int, int, int, int);
  friend class detail_fft_access;

  int height_ = 0, width_ = 0, scales_ = 0, orients_ = 0;
  std::vector<std::vector<double>> psi_;  // [j*L + l], each height*width
  std::vector<double> phi_;

  std::shared_ptr<FftPlans> plans_;  // shared, immutable after build
};

FilterBank build_filter_bank(int height, int width, int scales = 2,
                             int orientations = 8);

/// phi_S(x) = A |W2 |W1 x||  for a row-major flattened `channels` x H x W
/// image. Output layout: for each channel, coefficient maps of size
/// (H/2^J) x (W/2^J) ordered as: order 0, order 1 by (j1,theta1), order 2
/// by (j1,theta1,j2,theta2) with j2 > j1.
Eigen::VectorXd scatter_forward(const Eigen::VectorXd& image, int channels,
                                const FilterBank& bank);

/// Adjoint of the linearization of scatter_forward at `image`, applied to
/// `cotangent`. Modulus subgradient at |z| < 1e-20 is taken as zero.
Eigen::VectorXd scatter_vjp(const Eigen::VectorXd& image, int channels,
                            const FilterBank& bank,
                            const Eigen::VectorXd& cotangent);

/// Reusable VJP at a fixed linearization point. Construction runs the
/// forward pass once and keeps the intermediates; apply() is then cheap
/// relative to a full re-linearization, and apply_rows() maps a whole
/// matrix of cotangents (one per row).
class ScatterVjpOp {
 public:
  ScatterVjpOp(const FilterBank& bank, const Eigen::VectorXd& image,
               int channels);
  ~ScatterVjpOp();
  ScatterVjpOp(ScatterVjpOp&&) noexcept;
  ScatterVjpOp& operator=(ScatterVjpOp&&) noexcept;

  const Eigen::VectorXd& features() const;
  Eigen::VectorXd apply(const Eigen::VectorXd& cotangent) const;
  // cotangents: N x feature_length; returns N x (channels*H*W).
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& cotangents) const;

  struct Impl;  // opaque linearization state

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace dpkip
