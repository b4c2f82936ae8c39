#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dehaze/layers.hpp"

namespace dehaze {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-3;  // decoupled: p <- p * (1 - lr * weight_decay)
};

/// Adam with decoupled weight decay. Parameters whose gradient was never
/// populated are left untouched for that step.
template <typename T>
class Adam {
 public:
  Adam(std::vector<NamedParam<T>> params, AdamConfig config);

  void zero_grad();
  void step(double lr);

  std::int64_t steps() const noexcept { return steps_; }
  const std::vector<NamedParam<T>>& params() const noexcept { return params_; }

  /// Moments go under "<prefix><param>.adam_m" / ".adam_v"; the step count under meta "<prefix>adam_steps".
  void save(Archive& archive, const std::string& prefix) const;
  void load(const Archive& archive, const std::string& prefix);

 private:
  std::vector<NamedParam<T>> params_;
  AdamConfig config_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::int64_t steps_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace dehaze
