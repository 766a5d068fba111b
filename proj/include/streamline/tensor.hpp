#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace streamline {

class Rng;

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Dense row-major float32 tensor with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor scalar(float v) { return Tensor({1}, std::vector<float>{v}); }
    static Tensor randn(Shape shape, float stddev, Rng& rng);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // Rows/cols treat the tensor as a matrix [prod(leading dims) x last dim].
    std::size_t rows() const;
    std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }
    float& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    float at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    std::span<const float> row(std::size_t r) const { return data().subspan(r * cols(), cols()); }
    std::span<float> row(std::size_t r) { return data().subspan(r * cols(), cols()); }

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

    // Bitwise equality of shape and payload.
    bool bit_equal(const Tensor& other) const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

} // namespace streamline
