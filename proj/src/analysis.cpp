#include "odegan/analysis.hpp"

#include <algorithm>
#include <sstream>

namespace odegan {

using Cplx = std::complex<double>;
using Eigen::Index;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;

namespace {

constexpr double kDeflationTol = 1e-10;
constexpr int kMaxSweepsPerEigenvalue = 60;

void reduce_to_hessenberg(MatrixXcd& h) {
  const Index n = h.rows();
  for (Index k = 0; k + 2 < n; ++k) {
    const VectorXcd x = h.col(k).segment(k + 1, n - k - 1);
    const double xnorm = x.norm();
    if (xnorm == 0.0) continue;
    const double aabs = std::abs(x(0));
    const Cplx phase = aabs == 0.0 ? Cplx(1.0, 0.0) : x(0) / aabs;
    VectorXcd v = x;
    v(0) += phase * xnorm;
    const double v2 = v.squaredNorm();
    if (v2 == 0.0) continue;
    const Cplx scale(2.0 / v2, 0.0);

    auto rows = h.block(k + 1, k, n - k - 1, n - k);
    const Eigen::RowVectorXcd w = v.adjoint() * rows;
    rows -= (scale * v) * w;
    auto cols = h.block(0, k + 1, n, n - k - 1);
    const VectorXcd u = cols * v;
    cols -= u * (scale * v).adjoint();
    for (Index i = k + 2; i < n; ++i) h(i, k) = 0.0;
  }
}

struct Givens {
  double c = 1.0;
  Cplx s{0.0, 0.0};
};

// Rotation [[c, s], [-conj(s), c]] zeroing b against a.
Givens make_givens(Cplx a, Cplx b) {
  const double nb = std::abs(b);
  if (nb == 0.0) return {1.0, Cplx(0.0, 0.0)};
  const double na = std::abs(a);
  if (na == 0.0) return {0.0, std::conj(b) / nb};
  const double t = std::hypot(na, nb);
  return {na / t, (a / na) * std::conj(b) / (t)};
}

std::pair<Cplx, Cplx> eig2(Cplx a, Cplx b, Cplx c, Cplx d) {
  const Cplx half = (a + d) / 2.0;
  const Cplx disc = std::sqrt((a - d) * (a - d) / 4.0 + b * c);
  return {half + disc, half - disc};
}

Cplx wilkinson_shift(const MatrixXcd& h, Index hi) {
  const auto [l1, l2] = eig2(h(hi - 2, hi - 2), h(hi - 2, hi - 1), h(hi - 1, hi - 2),
                             h(hi - 1, hi - 1));
  const Cplx d = h(hi - 1, hi - 1);
  return std::abs(l1 - d) < std::abs(l2 - d) ? l1 : l2;
}

// One explicit shifted QR sweep on the active window [lo, hi).
void qr_sweep(MatrixXcd& h, Index lo, Index hi, Cplx shift, std::vector<Givens>& rots) {
  for (Index i = lo; i < hi; ++i) h(i, i) -= shift;
  rots.clear();
  for (Index k = lo; k + 1 < hi; ++k) {
    const Givens g = make_givens(h(k, k), h(k + 1, k));
    rots.push_back(g);
    for (Index j = k; j < hi; ++j) {
      const Cplx a = h(k, j);
      const Cplx b = h(k + 1, j);
      h(k, j) = g.c * a + g.s * b;
      h(k + 1, j) = -std::conj(g.s) * a + g.c * b;
    }
    h(k + 1, k) = 0.0;
  }
  for (Index k = lo; k + 1 < hi; ++k) {
    const Givens g = rots[static_cast<std::size_t>(k - lo)];
    const Index rmax = std::min(k + 2, hi - 1);
    for (Index i = lo; i <= rmax; ++i) {
      const Cplx a = h(i, k);
      const Cplx b = h(i, k + 1);
      h(i, k) = g.c * a + std::conj(g.s) * b;
      h(i, k + 1) = -g.s * a + g.c * b;
    }
  }
  for (Index i = lo; i < hi; ++i) h(i, i) += shift;
}

}  // namespace

double EigenSpectrum::min_real() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& v : values) m = std::min(m, v.real());
  return m;
}

double EigenSpectrum::max_abs_real() const {
  double m = 0.0;
  for (const auto& v : values) m = std::max(m, std::abs(v.real()));
  return m;
}

double EigenSpectrum::min_modulus() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& v : values) m = std::min(m, std::abs(v));
  return m;
}

double EigenSpectrum::max_modulus() const {
  double m = 0.0;
  for (const auto& v : values) m = std::max(m, std::abs(v));
  return m;
}

EigenSpectrum eigen_spectrum(const MatrixXd& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("eigen_spectrum: square matrix required");
  const Index n = m.rows();
  if (n == 0) throw std::invalid_argument("eigen_spectrum: empty matrix");
  if (n > ad::kDenseGuard) {
    throw ad::GuardError("eigen_spectrum: dimension exceeds the dense guard");
  }
  EigenSpectrum out;
  out.values.reserve(static_cast<std::size_t>(n));
  if (n == 1) {
    out.values.emplace_back(m(0, 0), 0.0);
    return out;
  }

  MatrixXcd h = m.cast<Cplx>();
  reduce_to_hessenberg(h);

  const long cap = kMaxSweepsPerEigenvalue * static_cast<long>(n);
  long total_sweeps = 0;
  int sweeps_in_block = 0;
  std::vector<Givens> rots;
  Index hi = n;
  while (hi > 0) {
    if (hi == 1) {
      out.values.push_back(h(0, 0));
      break;
    }
    Index lo = hi - 1;
    while (lo > 0) {
      const double sub = std::abs(h(lo, lo - 1));
      const double diag = std::abs(h(lo - 1, lo - 1)) + std::abs(h(lo, lo));
      if (sub <= kDeflationTol * (diag > 0.0 ? diag : 1.0)) {
        h(lo, lo - 1) = 0.0;
        break;
      }
      --lo;
    }
    if (lo == hi - 1) {
      out.values.push_back(h(hi - 1, hi - 1));
      --hi;
      sweeps_in_block = 0;
      continue;
    }
    if (lo == hi - 2) {
      const auto [l1, l2] =
          eig2(h(lo, lo), h(lo, hi - 1), h(hi - 1, lo), h(hi - 1, hi - 1));
      out.values.push_back(l1);
      out.values.push_back(l2);
      hi -= 2;
      sweeps_in_block = 0;
      continue;
    }
    if (++total_sweeps > cap) {
      throw std::runtime_error(
          "eigen_spectrum: QR iteration did not converge within the sweep cap");
    }
    Cplx shift;
    if (++sweeps_in_block % 12 == 0) {
      shift = h(hi - 1, hi - 1) + Cplx(0.75 * std::abs(h(hi - 1, hi - 2)), 0.0);
    } else {
      shift = wilkinson_shift(h, hi);
    }
    qr_sweep(h, lo, hi, shift, rots);
  }
  return out;
}

double min_symmetric_eigenvalue(const MatrixXd& m) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("min_symmetric_eigenvalue: square matrix required");
  }
  const MatrixXd sym = (m + m.transpose()) / 2.0;
  return eigen_spectrum(sym).min_real();
}

std::pair<double, double> singular_value_range(const MatrixXd& m) {
  const MatrixXd gram =
      m.rows() <= m.cols() ? MatrixXd(m * m.transpose()) : MatrixXd(m.transpose() * m);
  const EigenSpectrum s = eigen_spectrum(gram);
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (const auto& v : s.values) {
    lo = std::min(lo, v.real());
    hi = std::max(hi, v.real());
  }
  return {std::sqrt(std::max(0.0, lo)), std::sqrt(std::max(0.0, hi))};
}

const char* to_string(NashVerdict v) {
  switch (v) {
    case NashVerdict::ConvergesLocally: return "ConvergesLocally";
    case NashVerdict::Inconclusive: return "Inconclusive";
    case NashVerdict::NonHyperbolic: return "NonHyperbolic";
  }
  return "Unknown";
}

NashCheckReport check_differential_nash(const LinearGameBlocks& blocks, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("check_differential_nash: tol must be positive");
  const MatrixXd h = linear_dynamics_matrix(blocks);

  NashCheckReport r;
  r.a_min_eig = min_symmetric_eigenvalue(blocks.a);
  r.a_psd = r.a_min_eig >= -tol;
  r.c_min_eig = min_symmetric_eigenvalue(blocks.c);
  r.c_psd = r.c_min_eig >= -tol;

  const auto [smin, smax] = singular_value_range(blocks.b);
  r.b_sigma_min = smin;
  r.b_full_rank = smax > 0.0 && smin > 1e-8 * smax;

  const EigenSpectrum spec = eigen_spectrum(h);
  r.min_real_part = spec.min_real();
  r.h_invertible = spec.min_modulus() > tol * std::max(1.0, spec.max_modulus());

  const bool hypotheses = r.b_full_rank && ((r.a_min_eig > tol && r.c_min_eig >= -tol) ||
                                            (r.a_min_eig >= -tol && r.c_min_eig > tol));
  if (spec.max_abs_real() < tol) {
    r.verdict = NashVerdict::NonHyperbolic;
  } else if (hypotheses && r.min_real_part > 0.0) {
    r.verdict = NashVerdict::ConvergesLocally;
  } else {
    r.verdict = NashVerdict::Inconclusive;
  }
  return r;
}

std::string describe(const NashCheckReport& r) {
  std::ostringstream os;
  os << "a_min_eig " << r.a_min_eig << " psd " << (r.a_psd ? "yes" : "no") << '\n'
     << "c_min_eig " << r.c_min_eig << " psd " << (r.c_psd ? "yes" : "no") << '\n'
     << "b_sigma_min " << r.b_sigma_min << " full_rank " << (r.b_full_rank ? "yes" : "no")
     << '\n'
     << "h_invertible " << (r.h_invertible ? "yes" : "no") << '\n'
     << "min_real_part " << r.min_real_part << '\n'
     << "verdict " << to_string(r.verdict) << '\n';
  return os.str();
}

std::pair<double, double> toy_analytic_solution(double epsilon, std::pair<double, double> init,
                                                double t) {
  if (!(epsilon >= 0.0 && epsilon < 2.0)) {
    throw std::invalid_argument("toy_analytic_solution: epsilon must lie in [0, 2)");
  }
  const double omega = std::sqrt(4.0 - epsilon * epsilon) / 2.0;
  const auto [theta0, phi0] = init;
  const double a0 = theta0;
  const double b0 = (phi0 - epsilon * theta0 / 2.0) / omega;
  const double a1 = phi0;
  const double b1 = (-theta0 + epsilon * phi0 / 2.0) / omega;
  const double decay = std::exp(-epsilon * t / 2.0);
  const double cs = std::cos(omega * t);
  const double sn = std::sin(omega * t);
  return {decay * (a0 * cs + b0 * sn), decay * (a1 * cs + b1 * sn)};
}

MatrixXd jacobian_at(const ToyGame& game, const GameState& s) {
  return game.dynamics_jacobian(s);
}

MatrixXd jacobian_at(const LinearGameBlocks& blocks) { return linear_dynamics_matrix(blocks); }

MatrixXd jacobian_at(const GanGame& game, const GameState& s, const GanBatch& batch) {
  return game.dynamics_jacobian(s, batch);
}

OffdiagReport offdiag_opposites_check(const MatrixXd& h, Index n, Index m, double tol) {
  if (h.rows() != n + m || h.cols() != n + m) {
    throw std::invalid_argument("offdiag_opposites_check: split does not match the matrix");
  }
  OffdiagReport r;
  r.max_deviation =
      (h.topRightCorner(n, m) + h.bottomLeftCorner(m, n).transpose()).cwiseAbs().maxCoeff();
  r.opposite = r.max_deviation < tol;
  return r;
}

PsdCheckReport discriminator_hessian_psd_check(const GanGame& game, const GameState& s,
                                               const GanBatch& batch, double tol) {
  PsdCheckReport r;
  if (game.discriminator_spec().activation == Activation::Sigmoid) {
    r.status = PsdCheckStatus::SkippedNonPiecewiseLinear;
    r.note = "sigmoid activations violate the piecewise-linear hypothesis; check skipped";
    return r;
  }
  const MatrixXd hess = game.disc_loss_hessian(s, batch);
  r.status = PsdCheckStatus::Checked;
  r.min_eigenvalue = min_symmetric_eigenvalue(hess);
  r.psd = r.min_eigenvalue >= -tol;
  return r;
}

}  // namespace odegan
