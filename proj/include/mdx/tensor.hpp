#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mdx {

// Dense row-major N-dimensional array of doubles. Value type: copies are
// deep, there is no aliasing. Rank-0 tensors (empty shape) hold one scalar.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape);  // zero-filled
    Tensor(std::vector<std::int64_t> shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor full(std::vector<std::int64_t> shape, double v);

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }

    // Convenience accessors for the common ranks.
    double at2(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
    double& at2(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
    double at3(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    double& at3(std::int64_t i, std::int64_t j, std::int64_t k) {
        return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    double min_value() const;
    double max_value() const;
    double sum() const;

    std::string shape_str() const;  // "[2,3,4]"

    bool operator==(const Tensor& other) const { return shape_ == other.shape_ && data_ == other.data_; }

  private:
    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
};

std::int64_t shape_product(const std::vector<std::int64_t>& shape);
std::string shape_to_string(const std::vector<std::int64_t>& shape);

}  // namespace mdx
