#include "dehaze/optim.hpp"

#include <cmath>

namespace dehaze {

template <typename T>
Adam<T>::Adam(std::vector<NamedParam<T>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (const auto& p : params_) p.var.zero_grad();
}

template <typename T>
void Adam<T>::step(double lr) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(config_.beta1, t)));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(config_.beta2, t)));
  const T eps = static_cast<T>(config_.epsilon);
  const T rate = static_cast<T>(lr);
  const T decay = static_cast<T>(1.0 - lr * config_.weight_decay);

  for (std::size_t k = 0; k < params_.size(); ++k) {
    const Tensor<T>& g = params_[k].var.grad();
    if (g.empty()) continue;
    Tensor<T>& p = params_[k].var.mutable_value();
    T* m = m_[k].data();
    T* v = v_[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] * c1;
      const T vhat = v[i] * c2;
      p[i] = p[i] * decay - rate * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
void Adam<T>::save(Archive& archive, const std::string& prefix) const {
  archive.set_meta(prefix + "adam_steps", std::to_string(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    archive.put(params_[k].name + ".adam_m", m_[k].template cast<float>());
    archive.put(params_[k].name + ".adam_v", v_[k].template cast<float>());
  }
}

template <typename T>
void Adam<T>::load(const Archive& archive, const std::string& prefix) {
  steps_ = std::stoll(archive.require_meta(prefix + "adam_steps"));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const Tensor<float>& m = archive.get(params_[k].name + ".adam_m");
    const Tensor<float>& v = archive.get(params_[k].name + ".adam_v");
    if (!(m.shape() == m_[k].shape()) || !(v.shape() == v_[k].shape())) {
      throw IoError("optimizer state shape mismatch for " + params_[k].name);
    }
    m_[k] = m.template cast<T>();
    v_[k] = v.template cast<T>();
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace dehaze
