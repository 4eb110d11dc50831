#include "mos/alignment.hpp"

#include <cmath>

namespace mos {

namespace {

void check_dimensions(std::span<const EmbeddingSample> samples) {
  if (samples.empty()) fail(ErrorCode::Data, "alignment: empty sample list");
  const auto d = samples.front().feature.size();
  for (const auto& s : samples) {
    if (s.feature.size() != d) fail(ErrorCode::Data, "alignment: feature dimension mismatch");
  }
}

}  // namespace

ClassStatistics class_statistics(std::span<const EmbeddingSample> samples) {
  check_dimensions(samples);
  const auto d = samples.front().feature.size();

  ClassStatistics out;
  for (const auto& s : samples) {
    auto& st = out.by_identity[s.identity];
    st.identity = s.identity;
    if (s.modality == Modality::Optical) {
      if (st.n_opt++ == 0) st.mu_opt = Vec::Zero(d);
      st.mu_opt += s.feature;
    } else {
      if (st.n_sar++ == 0) st.mu_sar = Vec::Zero(d);
      st.mu_sar += s.feature;
    }
  }
  for (auto& [id, st] : out.by_identity) {
    if (st.n_opt > 0) {
      st.mu_opt /= st.n_opt;
      st.var_opt = Vec::Zero(d);
    }
    if (st.n_sar > 0) {
      st.mu_sar /= st.n_sar;
      st.var_sar = Vec::Zero(d);
    }
  }
  for (const auto& s : samples) {
    auto& st = out.by_identity[s.identity];
    if (s.modality == Modality::Optical)
      st.var_opt += (s.feature - st.mu_opt).cwiseAbs2();
    else
      st.var_sar += (s.feature - st.mu_sar).cwiseAbs2();
  }
  for (auto& [id, st] : out.by_identity) {
    if (st.n_opt > 0) st.var_opt /= st.n_opt;
    if (st.n_sar > 0) st.var_sar /= st.n_sar;
    if (st.dual()) out.valid.push_back(id);
  }
  return out;
}

double cmal_loss(const ClassStatistics& stats) {
  if (stats.valid.empty()) return 0.0;
  double total = 0.0;
  for (int id : stats.valid) {
    const auto& st = stats.by_identity.at(id);
    total += (st.mu_opt - st.mu_sar).squaredNorm() + (st.var_opt - st.var_sar).squaredNorm();
  }
  return total / static_cast<double>(stats.valid.size());
}

std::vector<Vec> cmal_gradient(std::span<const EmbeddingSample> samples) {
  const auto stats = class_statistics(samples);
  const auto d = samples.front().feature.size();
  std::vector<Vec> grads(samples.size(), Vec::Zero(d));
  if (stats.valid.empty()) return grads;

  const double inv_c = 1.0 / static_cast<double>(stats.valid.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& st = stats.by_identity.at(s.identity);
    if (!st.dual()) continue;
    // d mu / d f = 1/n;  d var / d f = (2/n)(f - mu)  (the mu-dependence sums to zero)
    const bool opt = s.modality == Modality::Optical;
    const double n = opt ? st.n_opt : st.n_sar;
    const double sign = opt ? 1.0 : -1.0;
    const Vec& mu = opt ? st.mu_opt : st.mu_sar;
    const Vec mean_diff = st.mu_opt - st.mu_sar;
    const Vec var_diff = st.var_opt - st.var_sar;
    grads[i] = sign * inv_c * (2.0 / n) * (mean_diff + 2.0 * var_diff.cwiseProduct(s.feature - mu));
  }
  return grads;
}

double centroid_gap(const ClassStatistics& stats) {
  if (stats.valid.empty()) return 0.0;
  double total = 0.0;
  for (int id : stats.valid) {
    const auto& st = stats.by_identity.at(id);
    total += (st.mu_opt - st.mu_sar).norm();
  }
  return total / static_cast<double>(stats.valid.size());
}

namespace {

void check_gaussian(const GaussianSpec& g) {
  const auto d = g.mean.size();
  if (g.covariance.rows() != d || g.covariance.cols() != d) fail(ErrorCode::Data, "w2: covariance shape mismatch");
  if ((g.covariance - g.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    fail(ErrorCode::Numeric, "w2: covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> eig(g.covariance, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10) fail(ErrorCode::Numeric, "w2: covariance is not positive semi-definite");
}

}  // namespace

Mat sqrt_psd(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(m);
  const Vec roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

double w2_gaussian(const GaussianSpec& p, const GaussianSpec& q) {
  if (p.mean.size() != q.mean.size()) fail(ErrorCode::Data, "w2: dimension mismatch");
  check_gaussian(p);
  check_gaussian(q);

  const Mat root_q = sqrt_psd(q.covariance);
  Mat cross = root_q * p.covariance * root_q;
  cross = 0.5 * (cross + cross.transpose());
  const double trace = p.covariance.trace() + q.covariance.trace() - 2.0 * sqrt_psd(cross).trace();
  const double value = (p.mean - q.mean).squaredNorm() + trace;
  if (value < -1e-9) fail(ErrorCode::Numeric, "w2: negative distance beyond tolerance");
  return std::max(value, 0.0);
}

double w2_diagonal(const Vec& mu1, const Vec& sigma1, const Vec& mu2, const Vec& sigma2) {
  const auto d = mu1.size();
  if (sigma1.size() != d || mu2.size() != d || sigma2.size() != d) fail(ErrorCode::Data, "w2: dimension mismatch");
  if (sigma1.size() > 0 && (sigma1.minCoeff() < 0.0 || sigma2.minCoeff() < 0.0))
    fail(ErrorCode::Data, "w2: negative standard deviation");
  return (mu1 - mu2).squaredNorm() + (sigma1 - sigma2).squaredNorm();
}

}  // namespace mos
