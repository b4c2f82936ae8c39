#include "dehaze/losses.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace dehaze::losses {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw InvalidArgument(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// Mean over scales of the per-scale mean of f(s); f' fills the gradient.
template <typename T, typename F, typename DF>
Var<T> mean_over_scales(const ScoreMaps<T>& scores, F f, DF df) {
  double total = 0.0;
  for (const auto& s : scores) {
    if (!s.defined() || s.value().empty()) throw InvalidArgument("score map is empty");
    double acc = 0.0;
    for (T v : s.value().span()) acc += f(static_cast<double>(v));
    total += acc / static_cast<double>(s.value().size());
  }
  total /= static_cast<double>(kScales);
  std::vector<Var<T>> inputs(scores.begin(), scores.end());
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(total)), inputs, [scores, df](const Tensor<T>& g) {
    for (const auto& s : scores) {
      if (!s.requires_grad()) continue;
      const double k = static_cast<double>(g[0]) / (static_cast<double>(s.value().size()) * kScales);
      auto& gs = s.node()->grad_buffer();
      for (std::size_t i = 0; i < gs.size(); ++i) {
        gs[i] += static_cast<T>(k * df(static_cast<double>(s.value()[i])));
      }
    }
  });
}

bool inside(double s) { return s > kScoreEpsilon && s < 1.0 - kScoreEpsilon; }
double clamp_score(double s) { return std::clamp(s, kScoreEpsilon, 1.0 - kScoreEpsilon); }

// sum((a - b)^2) / divisor
template <typename T>
Var<T> squared_distance(const Var<T>& a, const Var<T>& b, double divisor) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const double d = static_cast<double>(a.value()[i]) - static_cast<double>(b.value()[i]);
    acc += d * d;
  }
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(acc / divisor)), {a, b},
                        [a, b, divisor](const Tensor<T>& g) {
                          const double k = 2.0 * static_cast<double>(g[0]) / divisor;
                          const auto& av = a.value();
                          const auto& bv = b.value();
                          T* ga = a.requires_grad() ? a.node()->grad_buffer().data() : nullptr;
                          T* gb = b.requires_grad() ? b.node()->grad_buffer().data() : nullptr;
                          for (std::size_t i = 0; i < av.size(); ++i) {
                            const T d = static_cast<T>(k * (static_cast<double>(av[i]) - static_cast<double>(bv[i])));
                            if (ga) ga[i] += d;
                            if (gb) gb[i] -= d;
                          }
                        });
}

}  // namespace

void LossWeights::validate() const {
  for (double g : {gamma1, gamma2, gamma3, gamma4}) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("loss weights must be finite and non-negative");
  }
}

LossBreakdown generator_loss(const LossWeights& weights, double adversarial, double perceptual, double style,
                             double feature_reg) {
  weights.validate();
  LossBreakdown b{adversarial, perceptual, style, feature_reg, 0.0};
  b.total = weights.gamma1 * adversarial + weights.gamma2 * perceptual + weights.gamma3 * style +
            weights.gamma4 * feature_reg;
  return b;
}

template <typename T>
Var<T> adversarial_loss(const ScoreMaps<T>& scores, AdversarialVariant variant) {
  if (variant == AdversarialVariant::Saturating) {
    return mean_over_scales<T>(
        scores, [](double s) { return std::log(1.0 - clamp_score(s)); },
        [](double s) { return inside(s) ? -1.0 / (1.0 - s) : 0.0; });
  }
  return mean_over_scales<T>(
      scores, [](double s) { return -std::log(clamp_score(s)); },
      [](double s) { return inside(s) ? -1.0 / s : 0.0; });
}

template <typename T>
Var<T> discriminator_loss(const ScoreMaps<T>& fake, const ScoreMaps<T>& real) {
  for (std::size_t m = 0; m < kScales; ++m) {
    require_same(fake[m].shape(), real[m].shape(), "discriminator_loss");
  }
  Var<T> f = mean_over_scales<T>(
      fake, [](double s) { return -std::log(1.0 - clamp_score(s)); },
      [](double s) { return inside(s) ? 1.0 / (1.0 - s) : 0.0; });
  Var<T> r = mean_over_scales<T>(
      real, [](double s) { return -std::log(clamp_score(s)); },
      [](double s) { return inside(s) ? -1.0 / s : 0.0; });
  const double ones[] = {1.0, 1.0};
  return ops::weighted_sum<T>({f, r}, ones);
}

template <typename T>
Var<T> feature_mse(const Var<T>& output_features, const Var<T>& target_features) {
  require_same(output_features.shape(), target_features.shape(), "perceptual_loss");
  return squared_distance(output_features, target_features, static_cast<double>(output_features.value().size()));
}

template <typename T>
Var<T> perceptual_loss(const FeatureExtractor<T>& extractor, const Var<T>& output, const Var<T>& target) {
  require_same(output.shape(), target.shape(), "perceptual_loss");
  return feature_mse(extractor.features(output), extractor.features(target));
}

template <typename T>
Var<T> gram_matrix(const Var<T>& features) {
  const Shape s = features.shape();
  const int C = s.c;
  const int P = static_cast<int>(s.plane());
  const double norm = static_cast<double>(C) * P;
  Tensor<T> out(Shape{s.n, 1, C, C});
  for (int n = 0; n < s.n; ++n) {
    Eigen::Map<const RowMat<T>> psi(features.value().sample(n), C, P);
    Eigen::Map<RowMat<T>> g(out.sample(n), C, C);
    g.noalias() = psi * psi.transpose();
    g /= static_cast<T>(norm);
  }
  return make_result<T>(std::move(out), {features}, [features, norm](const Tensor<T>& gout) {
    const Shape s = features.shape();
    const int C = s.c;
    const int P = static_cast<int>(s.plane());
    auto& gx = features.node()->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      Eigen::Map<const RowMat<T>> psi(features.value().sample(n), C, P);
      Eigen::Map<const RowMat<T>> dg(gout.sample(n), C, C);
      Eigen::Map<RowMat<T>> dpsi(gx.sample(n), C, P);
      const RowMat<T> sym = (dg + dg.transpose()) / static_cast<T>(norm);
      dpsi.noalias() += sym * psi;
    }
  });
}

template <typename T>
Var<T> style_from_features(const Var<T>& output_features, const Var<T>& target_features) {
  require_same(output_features.shape(), target_features.shape(), "style_loss");
  return squared_distance(gram_matrix(output_features), gram_matrix(target_features),
                          static_cast<double>(output_features.shape().n));
}

template <typename T>
Var<T> style_loss(const FeatureExtractor<T>& extractor, const Var<T>& output, const Var<T>& target) {
  require_same(output.shape(), target.shape(), "style_loss");
  return style_from_features(extractor.features(output), extractor.features(target));
}

template <typename T>
Var<T> feature_reg_loss(const Var<T>& hazy_features, const Var<T>& clean_features, L1Reduction reduction) {
  require_same(hazy_features.shape(), clean_features.shape(), "feature_reg_loss");
  const auto& a = hazy_features.value();
  const auto& b = clean_features.value();
  const double divisor = reduction == L1Reduction::SumPerSample ? static_cast<double>(a.shape().n)
                                                                : static_cast<double>(a.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(acc / divisor)), {hazy_features, clean_features},
                        [hazy_features, clean_features, divisor](const Tensor<T>& g) {
                          const T k = static_cast<T>(static_cast<double>(g[0]) / divisor);
                          const auto& a = hazy_features.value();
                          const auto& b = clean_features.value();
                          T* ga = hazy_features.requires_grad() ? hazy_features.node()->grad_buffer().data() : nullptr;
                          T* gb = clean_features.requires_grad() ? clean_features.node()->grad_buffer().data() : nullptr;
                          for (std::size_t i = 0; i < a.size(); ++i) {
                            const T d = a[i] > b[i] ? k : (a[i] < b[i] ? -k : T(0));
                            if (ga) ga[i] += d;
                            if (gb) gb[i] -= d;
                          }
                        });
}

template <typename T>
Var<T> weighted_total(const LossWeights& weights, const Var<T>& adversarial, const Var<T>& perceptual,
                      const Var<T>& style, const Var<T>& feature_reg) {
  weights.validate();
  const double w[] = {weights.gamma1, weights.gamma2, weights.gamma3, weights.gamma4};
  return ops::weighted_sum<T>({adversarial, perceptual, style, feature_reg}, w);
}

GramMatrix gram(const FeatureMap& features) {
  const Shape s = features.data.shape();
  const int C = s.c;
  const std::size_t P = s.plane();
  GramMatrix g{C, std::vector<double>(static_cast<std::size_t>(C) * C, 0.0)};
  const double norm = static_cast<double>(C) * static_cast<double>(P);
  const float* psi = features.data.sample(0);
  for (int i = 0; i < C; ++i) {
    for (int j = i; j < C; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < P; ++p) acc += static_cast<double>(psi[i * P + p]) * psi[j * P + p];
      g.data[static_cast<std::size_t>(i) * C + j] = acc / norm;
      g.data[static_cast<std::size_t>(j) * C + i] = acc / norm;
    }
  }
  return g;
}

double feature_reg_loss(const FeatureMap& hazy, const FeatureMap& clean, L1Reduction reduction) {
  return feature_reg_loss<double>(Var<double>(hazy.data.cast<double>()), Var<double>(clean.data.cast<double>()),
                                  reduction)
      .value()
      .item();
}

#define DEHAZE_INSTANTIATE_LOSSES(T)                                                                     \
  template Var<T> adversarial_loss<T>(const ScoreMaps<T>&, AdversarialVariant);                          \
  template Var<T> discriminator_loss<T>(const ScoreMaps<T>&, const ScoreMaps<T>&);                       \
  template Var<T> feature_mse<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> perceptual_loss<T>(const FeatureExtractor<T>&, const Var<T>&, const Var<T>&);          \
  template Var<T> gram_matrix<T>(const Var<T>&);                                                         \
  template Var<T> style_from_features<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> style_loss<T>(const FeatureExtractor<T>&, const Var<T>&, const Var<T>&);               \
  template Var<T> feature_reg_loss<T>(const Var<T>&, const Var<T>&, L1Reduction);                        \
  template Var<T> weighted_total<T>(const LossWeights&, const Var<T>&, const Var<T>&, const Var<T>&,     \
                                    const Var<T>&);

DEHAZE_INSTANTIATE_LOSSES(float)
DEHAZE_INSTANTIATE_LOSSES(double)

#undef DEHAZE_INSTANTIATE_LOSSES

}  // namespace dehaze::losses
