#ifndef DRDM_TENSOR_HPP
#define DRDM_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace drdm {

struct invalid_input : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct checkpoint_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major tensor with a runtime shape.
template <typename S>
struct Tensor {
    std::vector<int> shape;
    std::vector<S> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> sh) : shape(std::move(sh)), v(count(shape), S(0)) {}
    Tensor(std::vector<int> sh, std::vector<S> data) : shape(std::move(sh)), v(std::move(data)) {
        if (static_cast<std::int64_t>(v.size()) != count(shape))
            throw invalid_input("tensor: data size does not match shape");
    }

    static std::int64_t count(const std::vector<int>& sh) {
        std::int64_t n = 1;
        for (int d : sh) {
            if (d <= 0) throw invalid_input("tensor: non-positive dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> sh) { return Tensor(std::move(sh)); }
    static Tensor full(std::vector<int> sh, S value) {
        Tensor t(std::move(sh));
        std::fill(t.v.begin(), t.v.end(), value);
        return t;
    }

    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    S* data() { return v.data(); }
    const S* data() const { return v.data(); }

    S& operator[](std::int64_t i) { return v[static_cast<size_t>(i)]; }
    const S& operator[](std::int64_t i) const { return v[static_cast<size_t>(i)]; }

    // 3-D accessor for [C,H,W] layouts.
    S& at(int c, int y, int x) {
        return v[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    const S& at(int c, int y, int x) const {
        return v[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    // 2-D accessor for [rows, cols].
    S& at(int r, int c) { return v[static_cast<size_t>(r) * shape[1] + c]; }
    const S& at(int r, int c) const { return v[static_cast<size_t>(r) * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (const S& x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
        return out;
    }
};

template <typename S>
inline std::string shape_str(const Tensor<S>& t) {
    std::string s = "[";
    for (size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

}  // namespace drdm

#endif  // DRDM_TENSOR_HPP
