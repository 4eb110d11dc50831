#pragma once

#include <map>
#include <span>
#include <vector>

#include "mos/common.hpp"

namespace mos {

/// One feature vector with its label and modality.
struct EmbeddingSample {
  Vec feature;
  int identity = 1;
  Modality modality = Modality::Optical;
};

/// Per-identity, per-modality first and second moments. Variances use
/// population (1/n) normalization. A side with n == 0 has empty vectors.
struct ClassModalityStats {
  int identity = 1;
  Vec mu_opt, mu_sar;
  Vec var_opt, var_sar;
  int n_opt = 0;
  int n_sar = 0;

  bool dual() const { return n_opt > 0 && n_sar > 0; }
};

struct ClassStatistics {
  std::map<int, ClassModalityStats> by_identity;  // ascending identity
  std::vector<int> valid;                         // identities with both modalities, ascending
};

ClassStatistics class_statistics(std::span<const EmbeddingSample> samples);

/// Class-wise modality alignment loss: mean over valid identities of
/// ||mu_opt - mu_sar||^2 + ||var_opt - var_sar||^2. Zero when no identity is valid.
double cmal_loss(const ClassStatistics& stats);

/// d(cmal_loss)/d(feature_i) for every input sample, in input order.
/// Samples of identities outside the valid set receive zero.
std::vector<Vec> cmal_gradient(std::span<const EmbeddingSample> samples);

/// Mean over valid identities of ||mu_opt - mu_sar||_2 (not squared).
double centroid_gap(const ClassStatistics& stats);

struct GaussianSpec {
  Vec mean;
  Mat covariance;
};

/// Closed-form squared 2-Wasserstein distance between Gaussians, with matrix
/// square roots taken by symmetric eigendecomposition.
double w2_gaussian(const GaussianSpec& p, const GaussianSpec& q);

/// Diagonal-covariance form: ||mu1 - mu2||^2 + ||sigma1 - sigma2||^2.
double w2_diagonal(const Vec& mu1, const Vec& sigma1, const Vec& mu2, const Vec& sigma2);

/// Symmetric PSD square root; eigenvalues clamped at zero.
Mat sqrt_psd(const Mat& m);

}  // namespace mos
