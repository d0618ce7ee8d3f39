#include "hybridsep/metrics.h"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace hybridsep::metrics {

namespace {

void check_pair(const dsp::Waveform& a, const dsp::Waveform& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
}

double ratio_db(double signal, double noise) {
  if (noise <= 0.0) return kSdrCapDb;
  return std::min(kSdrCapDb, 10.0 * std::log10(signal / noise));
}

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& set) {
  if (set.empty()) throw std::invalid_argument("fad: empty embedding set");
  const size_t d = set[0].size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(d));
  for (size_t i = 0; i < set.size(); ++i) {
    if (set[i].size() != d) throw std::invalid_argument("fad: inconsistent embedding dimension");
    for (size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = set[i][j];
  }
  return m;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::VectorXd& mu) {
  Eigen::MatrixXd c = x.rowwise() - mu.transpose();
  Eigen::MatrixXd cov = (c.transpose() * c) / std::max<double>(1.0, static_cast<double>(x.rows() - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const double top = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  if (x.rows() <= x.cols() || es.eigenvalues().minCoeff() <= 1e-12 * top)
    cov += 1e-6 * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
  return cov;
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double sdr(const dsp::Waveform& reference, const dsp::Waveform& estimate) {
  check_pair(reference, estimate);
  double s = 0.0, e = 0.0;
  for (int64_t i = 0; i < reference.size(); ++i) {
    s += reference.samples[i] * reference.samples[i];
    const double d = reference.samples[i] - estimate.samples[i];
    e += d * d;
  }
  if (s <= 0.0) throw std::invalid_argument("sdr: reference has zero energy");
  return ratio_db(s, e);
}

double si_sdr(const dsp::Waveform& reference, const dsp::Waveform& estimate) {
  check_pair(reference, estimate);
  double rr = 0.0, re = 0.0;
  for (int64_t i = 0; i < reference.size(); ++i) {
    rr += reference.samples[i] * reference.samples[i];
    re += reference.samples[i] * estimate.samples[i];
  }
  if (rr <= 0.0) throw std::invalid_argument("si_sdr: reference has zero energy");
  const double alpha = re / rr;
  double s = 0.0, e = 0.0;
  for (int64_t i = 0; i < reference.size(); ++i) {
    const double t = alpha * reference.samples[i];
    s += t * t;
    e += (t - estimate.samples[i]) * (t - estimate.samples[i]);
  }
  if (s <= 0.0) return -kSdrCapDb;
  return ratio_db(s, e);
}

double sdri(const dsp::Waveform& reference, const dsp::Waveform& estimate, const dsp::Waveform& mixture,
            bool scale_invariant) {
  if (scale_invariant) return si_sdr(reference, estimate) - si_sdr(reference, mixture);
  return sdr(reference, estimate) - sdr(reference, mixture);
}

double clap_score(const dsp::Waveform& estimate, const std::string& query, const encoders::EncoderSuite& suite) {
  return 100.0 * encoders::cosine(suite.encode_audio(estimate).values, suite.encode_text(query).values);
}

double clap_score_a(const dsp::Waveform& estimate, const dsp::Waveform& target, const encoders::EncoderSuite& suite) {
  return 100.0 * encoders::cosine(suite.encode_audio(estimate).values, suite.encode_audio(target).values);
}

double fad(const std::vector<std::vector<double>>& set_a, const std::vector<std::vector<double>>& set_b) {
  Eigen::MatrixXd a = to_matrix(set_a), b = to_matrix(set_b);
  if (a.cols() != b.cols()) throw std::invalid_argument("fad: embedding dimensions differ");
  Eigen::VectorXd mu_a = a.colwise().mean(), mu_b = b.colwise().mean();
  Eigen::MatrixXd sa = covariance(a, mu_a), sb = covariance(b, mu_b);
  Eigen::MatrixXd ra = sqrt_psd(sa);
  Eigen::MatrixXd cross = sqrt_psd(ra * sb * ra);
  const double d = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross.trace();
  return std::max(0.0, d);
}

}  // namespace hybridsep::metrics
