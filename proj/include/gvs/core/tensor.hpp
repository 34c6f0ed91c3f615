#pragma once

// Dense row-major tensor of rank <= 4. Network activations use the
// channels-last convention (N, H, W, C); plain image stacks are (N, H, W, 1).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gvs {

template <typename T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
        std::int64_t n = 1;
        for (auto d : shape_) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
            n *= d;
        }
        data_.assign(static_cast<std::size_t>(n), T{0});
    }

    Tensor(std::vector<std::int64_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        std::int64_t n = 1;
        for (auto d : shape_) n *= d;
        if (static_cast<std::size_t>(n) != data_.size())
            throw std::invalid_argument("Tensor: shape/data size mismatch");
    }

    static Tensor full(std::vector<std::int64_t> shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // (n, h, w, c) accessor for rank-4 tensors.
    T& at(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c) {
        return data_[static_cast<std::size_t>(((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c)];
    }
    const T& at(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c) const {
        return data_[static_cast<std::size_t>(((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    T min() const { return *std::min_element(data_.begin(), data_.end()); }
    T max() const { return *std::max_element(data_.begin(), data_.end()); }

    double sum() const {
        double s = 0.0;
        for (const T& v : data_) s += static_cast<double>(v);
        return s;
    }
    double mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape_[i]);
        return s + ")";
    }

  private:
    std::vector<std::int64_t> shape_;
    std::vector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(who) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

}  // namespace gvs
