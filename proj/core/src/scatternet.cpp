#include "dpkip/scatternet.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dpkip/errors.hpp"

namespace dpkip {

namespace {

using cplx = std::complex<double>;

constexpr double kModulusFloor = 1e-20;

// Mother-wavelet parameterization: center frequency 3*pi/4 at scale 0,
// dilation 2^j, rotation theta = l*pi/L, slant 0.5. The envelope width
// sigma0 keeps the Littlewood-Paley sum within [0.3, 1.0] after the
// global band-pass rescale below.
constexpr double kXi0 = 3.0 * std::numbers::pi / 4.0;
constexpr double kSigma0 = 0.6;
constexpr double kSlant = 0.5;
constexpr int kAliases = 2;

}  // namespace

struct FilterBank::FftPlans {
  int h = 0, w = 0;
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;

  FftPlans(int height, int width) : h(height), w(width) {
    std::vector<cplx> a(static_cast<size_t>(h) * w), b(a.size());
    auto* pa = reinterpret_cast<fftw_complex*>(a.data());
    auto* pb = reinterpret_cast<fftw_complex*>(b.data());
    // FFTW_ESTIMATE keeps the plan choice independent of runtime timing,
    // so transform results are reproducible run to run.
    fwd = fftw_plan_dft_2d(h, w, pa, pb, FFTW_FORWARD,
                           FFTW_ESTIMATE | FFTW_UNALIGNED);
    bwd = fftw_plan_dft_2d(h, w, pa, pb, FFTW_BACKWARD,
                           FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  ~FftPlans() {
    if (fwd) fftw_destroy_plan(fwd);
    if (bwd) fftw_destroy_plan(bwd);
  }
  FftPlans(const FftPlans&) = delete;
  FftPlans& operator=(const FftPlans&) = delete;

  void forward(const cplx* in, cplx* out) const {
    fftw_execute_dft(fwd,
                     reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
  }
  // Normalized inverse (divides by h*w) so inverse(forward(x)) == x.
  void inverse(const cplx* in, cplx* out) const {
    fftw_execute_dft(bwd,
                     reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
    const double scale = 1.0 / (static_cast<double>(h) * w);
    const size_t n = static_cast<size_t>(h) * w;
    for (size_t i = 0; i < n; ++i) out[i] *= scale;
  }
};

class detail_fft_access {
 public:
  static const FilterBank::FftPlans& plans(const FilterBank& b) {
    return *b.plans_;
  }
};

namespace {

const FilterBank::FftPlans& plans_of(const FilterBank& b) {
  return detail_fft_access::plans(b);
}

// Frequency response of a 2-D Gabor envelope (Gaussian modulated at
// frequency xi in direction theta), periodized over the sampling lattice.
std::vector<double> gabor_hat(int H, int W, double sigma, double xi,
                              double theta, double slant) {
  std::vector<double> out(static_cast<size_t>(H) * W, 0.0);
  const double c = std::cos(theta), s = std::sin(theta);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int y = 0; y < H; ++y) {
    double wy0 = two_pi * (y <= H / 2 ? y : y - H) / H;
    for (int x = 0; x < W; ++x) {
      double wx0 = two_pi * (x <= W / 2 ? x : x - W) / W;
      double acc = 0.0;
      for (int ay = -kAliases; ay <= kAliases; ++ay) {
        for (int ax = -kAliases; ax <= kAliases; ++ax) {
          double wy = wy0 + two_pi * ay;
          double wx = wx0 + two_pi * ax;
          double w1 = c * wx + s * wy;   // along the wavelet axis
          double w2 = -s * wx + c * wy;  // perpendicular
          double q = sigma * sigma * (w1 - xi) * (w1 - xi) +
                     (sigma / slant) * (sigma / slant) * w2 * w2;
          acc += std::exp(-0.5 * q);
        }
      }
      out[static_cast<size_t>(y) * W + x] = acc;
    }
  }
  return out;
}

size_t neg_index(int y, int x, int H, int W) {
  int ny = (H - y) % H;
  int nx = (W - x) % W;
  return static_cast<size_t>(ny) * W + nx;
}

}  // namespace

int FilterBank::coeff_count() const {
  int J = scales_, L = orients_;
  return 1 + J * L + L * L * J * (J - 1) / 2;
}

int FilterBank::feature_length(int channels) const {
  return channels * coeff_count() * out_height() * out_width();
}

FilterBank build_filter_bank(int height, int width, int scales,
                             int orientations) {
  if (scales < 1 || orientations < 1)
    throw ConfigError("filter bank needs scales >= 1 and orientations >= 1");
  const int sub = 1 << scales;
  if (height % sub != 0 || width % sub != 0)
    throw ConfigError("image size " + std::to_string(height) + "x" +
                      std::to_string(width) + " not divisible by 2^J = " +
                      std::to_string(sub));

  FilterBank bank;
  bank.height_ = height;
  bank.width_ = width;
  bank.scales_ = scales;
  bank.orients_ = orientations;
  const size_t n = static_cast<size_t>(height) * width;

  for (int j = 0; j < scales; ++j) {
    const double sigma = kSigma0 * (1 << j);
    const double xi = kXi0 / (1 << j);
    for (int l = 0; l < orientations; ++l) {
      const double theta = std::numbers::pi * l / orientations;
      auto centered = gabor_hat(height, width, sigma, xi, theta, kSlant);
      auto baseline = gabor_hat(height, width, sigma, 0.0, theta, kSlant);
      // Gaussian correction so the DC bin is exactly zero.
      const double beta = centered[0] / baseline[0];
      std::vector<double> psi(n);
      for (size_t i = 0; i < n; ++i) psi[i] = centered[i] - beta * baseline[i];
      psi[0] = 0.0;
      bank.psi_.push_back(std::move(psi));
    }
  }
  auto phi = gabor_hat(height, width, kSigma0 * sub, 0.0, 0.0, 1.0);
  const double phi_dc = phi[0];
  for (auto& v : phi) v /= phi_dc;
  bank.phi_ = std::move(phi);

  // Rescale the band-pass filters so the Littlewood-Paley sum peaks at 1
  // (non-expansiveness) while keeping the low-pass fixed.
  double gamma2 = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < n; ++i) {
    int y = static_cast<int>(i) / width, x = static_cast<int>(i) % width;
    double lp = 0.0;
    for (const auto& psi : bank.psi_) {
      double a = psi[i];
      double b = psi[neg_index(y, x, height, width)];
      lp += 0.5 * (a * a + b * b);
    }
    double s = bank.phi_[i] * bank.phi_[i];
    if (lp > 1e-12) gamma2 = std::min(gamma2, (1.0 - s) / lp);
  }
  const double gamma = std::sqrt(gamma2 * (1.0 - 1e-9));
  for (auto& psi : bank.psi_)
    for (auto& v : psi) v *= gamma;

  bank.plans_ = std::make_shared<FilterBank::FftPlans>(height, width);
  return bank;
}

// ---------------------------------------------------------------------------
// Forward / VJP
// ---------------------------------------------------------------------------

struct ScatterVjpOp::Impl {
  const FilterBank* bank = nullptr;
  int channels = 0;
  Eigen::VectorXd feats;

  // Per channel: phase of U1 and fft(|U1|) per (j1,l1); phase of U2 per
  // order-2 path, ordered by (j1,l1,j2,l2). Phases are z/|z|, zero below
  // the modulus floor.
  struct ChannelState {
    std::vector<std::vector<cplx>> phase1;
    std::vector<std::vector<cplx>> m1_hat;
    std::vector<std::vector<cplx>> phase2;
  };
  std::vector<ChannelState> state;
};

namespace {

std::vector<cplx> phase_of(const std::vector<cplx>& z) {
  std::vector<cplx> p(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    double a = std::abs(z[i]);
    p[i] = a < kModulusFloor ? cplx(0.0, 0.0) : z[i] / a;
  }
  return p;
}

void subsample_to(const std::vector<cplx>& spatial, int H, int W, int sub,
                  double* out) {
  int oh = H / sub, ow = W / sub;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      out[y * ow + x] =
          spatial[static_cast<size_t>(y) * sub * W + x * sub].real();
}

void mul_real(const std::vector<cplx>& in, const std::vector<double>& f,
              std::vector<cplx>& out) {
  for (size_t i = 0; i < in.size(); ++i) out[i] = in[i] * f[i];
}

void mul_real_add(const std::vector<cplx>& in, const std::vector<double>& f,
                  std::vector<cplx>& acc) {
  for (size_t i = 0; i < in.size(); ++i) acc[i] += in[i] * f[i];
}

// A(m) = subsample(phi * m): low-pass convolve `m_hat` (frequency domain)
// then 2^J subsample; writes out_height*out_width reals.
void average_from_freq(const FilterBank& bank, const std::vector<cplx>& m_hat,
                       std::vector<cplx>& t1, std::vector<cplx>& t2,
                       double* out) {
  mul_real(m_hat, bank.phi_hat(), t1);
  plans_of(bank).inverse(t1.data(), t2.data());
  subsample_to(t2, bank.height(), bank.width(), bank.subsampling(), out);
}

// Adjoint of A, result accumulated as a frequency-domain cotangent.
void average_adjoint_freq(const FilterBank& bank, const double* cot,
                          std::vector<cplx>& up, std::vector<cplx>& out_freq) {
  const int H = bank.height(), W = bank.width(), sub = bank.subsampling();
  const int oh = H / sub, ow = W / sub;
  std::fill(up.begin(), up.end(), cplx(0, 0));
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      up[static_cast<size_t>(y) * sub * W + x * sub] = cot[y * ow + x];
  plans_of(bank).forward(up.data(), out_freq.data());
  const auto& phi = bank.phi_hat();
  for (size_t i = 0; i < out_freq.size(); ++i) out_freq[i] *= phi[i];
}

// Forward scattering of one channel. Coefficient maps are written at
// their block offsets in `out`; when `st` is non-null the linearization
// state is recorded for the adjoint.
void forward_channel(const FilterBank& bank, const double* img, double* out,
                     ScatterVjpOp::Impl::ChannelState* st) {
  const auto& pl = plans_of(bank);
  const int H = bank.height(), W = bank.width();
  const int J = bank.scales(), L = bank.orientations();
  const size_t n = static_cast<size_t>(H) * W;
  const int block = bank.out_height() * bank.out_width();

  std::vector<cplx> x(n), x_hat(n), t1(n), t2(n), u(n), m_hat(n);
  for (size_t i = 0; i < n; ++i) x[i] = img[i];
  pl.forward(x.data(), x_hat.data());

  int coeff = 0;
  average_from_freq(bank, x_hat, t1, t2, out);  // order 0
  ++coeff;

  // Order-2 blocks start after all order-1 blocks.
  int order2_coeff = 1 + J * L;

  for (int j1 = 0; j1 < J; ++j1) {
    for (int l1 = 0; l1 < L; ++l1) {
      mul_real(x_hat, bank.psi_hat(j1, l1), t1);
      pl.inverse(t1.data(), u.data());  // U1
      std::vector<cplx> m1(n);
      for (size_t i = 0; i < n; ++i) m1[i] = std::abs(u[i]);
      pl.forward(m1.data(), m_hat.data());
      average_from_freq(bank, m_hat, t1, t2, out + coeff * block);
      ++coeff;

      if (st) {
        st->phase1.push_back(phase_of(u));
        st->m1_hat.push_back(m_hat);
      }

      for (int j2 = j1 + 1; j2 < J; ++j2) {
        for (int l2 = 0; l2 < L; ++l2) {
          mul_real(m_hat, bank.psi_hat(j2, l2), t1);
          pl.inverse(t1.data(), u.data());  // U2
          std::vector<cplx> m2(n);
          for (size_t i = 0; i < n; ++i) m2[i] = std::abs(u[i]);
          pl.forward(m2.data(), t1.data());
          average_from_freq(bank, t1, t2, m2 /*reuse*/, out + order2_coeff * block);
          ++order2_coeff;
          if (st) st->phase2.push_back(phase_of(u));
        }
      }
    }
  }
}

void vjp_channel(const FilterBank& bank,
                 const ScatterVjpOp::Impl::ChannelState& st, const double* cot,
                 double* grad) {
  const auto& pl = plans_of(bank);
  const int H = bank.height(), W = bank.width();
  const int J = bank.scales(), L = bank.orientations();
  const size_t n = static_cast<size_t>(H) * W;
  const int block = bank.out_height() * bank.out_width();

  std::vector<cplx> up(n), freq(n), t(n), xbar_hat(n, cplx(0, 0));

  // Order 0.
  average_adjoint_freq(bank, cot, up, freq);
  for (size_t i = 0; i < n; ++i) xbar_hat[i] += freq[i];

  // Frequency-domain cotangents on each M1 = |U1|.
  std::vector<std::vector<cplx>> m1_bar;
  m1_bar.reserve(static_cast<size_t>(J) * L);
  for (int p = 0; p < J * L; ++p) {
    average_adjoint_freq(bank, cot + (1 + p) * block, up, freq);
    m1_bar.push_back(freq);
  }

  // Order-2 paths feed back into their M1.
  int order2_coeff = 1 + J * L;
  int path = 0;
  int p1 = 0;
  for (int j1 = 0; j1 < J; ++j1) {
    for (int l1 = 0; l1 < L; ++l1, ++p1) {
      for (int j2 = j1 + 1; j2 < J; ++j2) {
        for (int l2 = 0; l2 < L; ++l2, ++path) {
          average_adjoint_freq(bank, cot + order2_coeff * block, up, freq);
          ++order2_coeff;
          pl.inverse(freq.data(), t.data());  // spatial cotangent on M2
          const auto& ph2 = st.phase2[path];
          for (size_t i = 0; i < n; ++i) t[i] = t[i].real() * ph2[i];
          pl.forward(t.data(), freq.data());
          mul_real_add(freq, bank.psi_hat(j2, l2), m1_bar[p1]);
        }
      }
    }
  }

  // Through each modulus |U1| and band-pass back to the input.
  p1 = 0;
  for (int j1 = 0; j1 < J; ++j1) {
    for (int l1 = 0; l1 < L; ++l1, ++p1) {
      pl.inverse(m1_bar[p1].data(), t.data());
      const auto& ph1 = st.phase1[p1];
      for (size_t i = 0; i < n; ++i) t[i] = t[i].real() * ph1[i];
      pl.forward(t.data(), freq.data());
      mul_real_add(freq, bank.psi_hat(j1, l1), xbar_hat);
    }
  }

  pl.inverse(xbar_hat.data(), t.data());
  for (size_t i = 0; i < n; ++i) grad[i] = t[i].real();
}

void check_image_shape(const FilterBank& bank, const Eigen::VectorXd& image,
                       int channels) {
  if (channels < 1 ||
      image.size() != static_cast<Eigen::Index>(channels) * bank.height() *
                          bank.width())
    throw DataError("image length " + std::to_string(image.size()) +
                    " does not match " + std::to_string(channels) + "x" +
                    std::to_string(bank.height()) + "x" +
                    std::to_string(bank.width()));
}

}  // namespace

Eigen::VectorXd scatter_forward(const Eigen::VectorXd& image, int channels,
                                const FilterBank& bank) {
  check_image_shape(bank, image, channels);
  const int per_channel = bank.feature_length(1);
  const int pixels = bank.height() * bank.width();
  Eigen::VectorXd out(static_cast<Eigen::Index>(channels) * per_channel);
  for (int c = 0; c < channels; ++c)
    forward_channel(bank, image.data() + c * pixels,
                    out.data() + c * per_channel, nullptr);
  return out;
}

ScatterVjpOp::ScatterVjpOp(const FilterBank& bank, const Eigen::VectorXd& image,
                           int channels)
    : impl_(std::make_unique<Impl>()) {
  check_image_shape(bank, image, channels);
  impl_->bank = &bank;
  impl_->channels = channels;
  const int per_channel = bank.feature_length(1);
  const int pixels = bank.height() * bank.width();
  impl_->feats.resize(static_cast<Eigen::Index>(channels) * per_channel);
  impl_->state.resize(channels);
  for (int c = 0; c < channels; ++c)
    forward_channel(bank, image.data() + c * pixels,
                    impl_->feats.data() + c * per_channel, &impl_->state[c]);
}

ScatterVjpOp::~ScatterVjpOp() = default;
ScatterVjpOp::ScatterVjpOp(ScatterVjpOp&&) noexcept = default;
ScatterVjpOp& ScatterVjpOp::operator=(ScatterVjpOp&&) noexcept = default;

const Eigen::VectorXd& ScatterVjpOp::features() const { return impl_->feats; }

Eigen::VectorXd ScatterVjpOp::apply(const Eigen::VectorXd& cotangent) const {
  const FilterBank& bank = *impl_->bank;
  const int per_channel = bank.feature_length(1);
  const int pixels = bank.height() * bank.width();
  if (cotangent.size() !=
      static_cast<Eigen::Index>(impl_->channels) * per_channel)
    throw DataError("cotangent length does not match scattering output");
  Eigen::VectorXd grad(static_cast<Eigen::Index>(impl_->channels) * pixels);
  for (int c = 0; c < impl_->channels; ++c)
    vjp_channel(bank, impl_->state[c], cotangent.data() + c * per_channel,
                grad.data() + c * pixels);
  return grad;
}

Eigen::MatrixXd ScatterVjpOp::apply_rows(const Eigen::MatrixXd& cotangents) const {
  const FilterBank& bank = *impl_->bank;
  const int pixels = bank.height() * bank.width();
  Eigen::MatrixXd out(cotangents.rows(),
                      static_cast<Eigen::Index>(impl_->channels) * pixels);
  Eigen::VectorXd row;
  for (Eigen::Index r = 0; r < cotangents.rows(); ++r) {
    row = cotangents.row(r);
    out.row(r) = apply(row);
  }
  return out;
}

Eigen::VectorXd scatter_vjp(const Eigen::VectorXd& image, int channels,
                            const FilterBank& bank,
                            const Eigen::VectorXd& cotangent) {
  return ScatterVjpOp(bank, image, channels).apply(cotangent);
}

}  // namespace dpkip
