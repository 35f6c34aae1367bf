#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace qmixlab {

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace ad {

using Shape = std::vector<int>;

inline long numel(const Shape& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major array of doubles, rank 0..2.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape sh, std::vector<double> d) : shape(std::move(sh)), data(std::move(d)) {
        if (numel(shape) != static_cast<long>(data.size()))
            throw Error("tensor: shape " + shape_str(shape) + " does not match data length " +
                        std::to_string(data.size()));
    }

    static Tensor zeros(Shape sh) {
        std::vector<double> d(static_cast<size_t>(numel(sh)), 0.0);
        return Tensor(std::move(sh), std::move(d));
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor vec(std::vector<double> d) {
        Shape sh{static_cast<int>(d.size())};
        return Tensor(std::move(sh), std::move(d));
    }
    static Tensor mat(int rows, int cols, std::vector<double> d) {
        return Tensor({rows, cols}, std::move(d));
    }
    static Tensor onehot(int n, int hot, double v = 1.0) {
        Tensor t = zeros({n});
        t.data[static_cast<size_t>(hot)] = v;
        return t;
    }

    long size() const { return static_cast<long>(data.size()); }
    int rows() const { return shape.size() == 2 ? shape[0] : 1; }
    int cols() const { return shape.size() == 2 ? shape[1] : shape[0]; }
    double& at(int i) { return data[static_cast<size_t>(i)]; }
    double at(int i) const { return data[static_cast<size_t>(i)]; }
    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    bool finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline int argmax(const Tensor& t) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(t.size()); ++i)
        if (t.at(i) > t.at(best)) best = i;
    return best;
}

}  // namespace ad
}  // namespace qmixlab
