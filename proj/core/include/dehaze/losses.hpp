#pragma once

// Generator objective terms and the discriminator objective.
//
//   adversarial  mean over scales of mean log(1 - D(I, G(I)))
//   perceptual   ||phi(G(I)) - phi(J)||^2 / (C H W), averaged over the batch
//   style        ||gram(phi(G(I))) - gram(phi(J))||_F^2, averaged over the batch
//   feature_reg  ||E_k(I) - E_k(J)||_1, averaged over the batch
//   total        g1 * adversarial + g2 * perceptual + g3 * style + g4 * feature_reg
//
// Scores are clamped to [1e-7, 1 - 1e-7] before every logarithm.

#include <vector>

#include "dehaze/discriminator.hpp"
#include "dehaze/extractor.hpp"
#include "dehaze/generator.hpp"

namespace dehaze::losses {

inline constexpr double kScoreEpsilon = 1e-7;

enum class AdversarialVariant {
  Saturating,     // log(1 - D), as in the original objective
  NonSaturating,  // -log(D)
};

enum class L1Reduction {
  SumPerSample,    // sum over elements, mean over batch
  MeanPerElement,  // mean over every element
};

struct LossWeights {
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  double gamma3 = 50.0;
  double gamma4 = 0.01;

  /// Throws ConfigError on any negative or non-finite weight.
  void validate() const;
};

struct LossBreakdown {
  double adversarial = 0.0;
  double perceptual = 0.0;
  double style = 0.0;
  double feature_reg = 0.0;
  double total = 0.0;
};

/// Weighted sum of the four terms. Throws ConfigError for negative weights.
LossBreakdown generator_loss(const LossWeights& weights, double adversarial, double perceptual, double style,
                             double feature_reg);

template <typename T>
Var<T> adversarial_loss(const ScoreMaps<T>& scores, AdversarialVariant variant = AdversarialVariant::Saturating);

/// Negated discriminator objective: mean of -[log(1 - fake) + log(real)].
template <typename T>
Var<T> discriminator_loss(const ScoreMaps<T>& fake, const ScoreMaps<T>& real);

/// Per-sample mean squared feature difference, averaged over the batch.
template <typename T>
Var<T> feature_mse(const Var<T>& output_features, const Var<T>& target_features);

template <typename T>
Var<T> perceptual_loss(const FeatureExtractor<T>& extractor, const Var<T>& output, const Var<T>& target);

/// N x 1 x C x C Gram matrices psi psi^T / (C H W) of N x C x H x W features.
template <typename T>
Var<T> gram_matrix(const Var<T>& features);

template <typename T>
Var<T> style_from_features(const Var<T>& output_features, const Var<T>& target_features);

template <typename T>
Var<T> style_loss(const FeatureExtractor<T>& extractor, const Var<T>& output, const Var<T>& target);

template <typename T>
Var<T> feature_reg_loss(const Var<T>& hazy_features, const Var<T>& clean_features,
                        L1Reduction reduction = L1Reduction::SumPerSample);

/// Differentiable total with the same weights as generator_loss().
template <typename T>
Var<T> weighted_total(const LossWeights& weights, const Var<T>& adversarial, const Var<T>& perceptual,
                      const Var<T>& style, const Var<T>& feature_reg);

/// C x C Gram matrix of a single feature map, row-major.
struct GramMatrix {
  int channels = 0;
  std::vector<double> data;

  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * channels + j]; }
};

GramMatrix gram(const FeatureMap& features);

double feature_reg_loss(const FeatureMap& hazy, const FeatureMap& clean,
                        L1Reduction reduction = L1Reduction::SumPerSample);

}  // namespace dehaze::losses
