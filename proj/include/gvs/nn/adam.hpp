#pragma once

// Adam with bias correction, one instance per network.

#include <cmath>
#include <cstdint>
#include <vector>

#include "gvs/nn/params.hpp"

namespace gvs::nn {

template <typename T>
class Adam {
  public:
    Adam() = default;
    explicit Adam(std::int64_t param_count, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.assign(static_cast<std::size_t>(param_count), T{0});
        v_.assign(static_cast<std::size_t>(param_count), T{0});
    }

    /// One update from the gradients currently held in the store.
    void step(ParamStore<T>& store, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
        for (std::size_t i = 0; i < m_.size(); ++i) {
            const T g = store.grad[i];
            m_[i] = b1 * m_[i] + (T{1} - b1) * g;
            v_[i] = b2 * v_[i] + (T{1} - b2) * g * g;
            const double mhat = static_cast<double>(m_[i]) / bc1;
            const double vhat = static_cast<double>(v_[i]) / bc2;
            store.value[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
        }
    }

    std::int64_t steps_taken() const { return t_; }
    std::vector<T>& moment1() { return m_; }
    std::vector<T>& moment2() { return v_; }
    const std::vector<T>& moment1() const { return m_; }
    const std::vector<T>& moment2() const { return v_; }
    void restore(std::vector<T> m, std::vector<T> v, std::int64_t t) {
        m_ = std::move(m);
        v_ = std::move(v);
        t_ = t;
    }

  private:
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::int64_t t_ = 0;
    std::vector<T> m_, v_;
};

}  // namespace gvs::nn
