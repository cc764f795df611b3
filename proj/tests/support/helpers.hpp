#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "attendseg/random.hpp"
#include "attendseg/tensor.hpp"
#include "oracle/reference_ops.hpp"

namespace testing_support {

using attendseg::BasicTensor;
using attendseg::Rng;
using attendseg::Shape;

template <typename T>
BasicTensor<T> random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    BasicTensor<T> t(s);
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
oracle::Nhwc<T> to_oracle(const BasicTensor<T>& t) {
    oracle::Nhwc<T> o(t.dim(0), t.dim(1), t.dim(2), t.dim(3));
    o.v.assign(t.data().begin(), t.data().end());
    return o;
}

template <typename T>
std::vector<T> values(const BasicTensor<T>& t) {
    return {t.data().begin(), t.data().end()};
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
template <typename T>
double rel_error(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (double(a[i]) - double(b[i])) * (double(a[i]) - double(b[i]));
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    const double scale = std::sqrt(std::max(na, nb));
    return scale == 0 ? 0.0 : std::sqrt(diff) / scale;
}

/// Central finite differences of a scalar function of `x`, step h.
inline BasicTensor<double> numeric_grad(BasicTensor<double> x, const std::function<double(const BasicTensor<double>&)>& f,
                                        double h = 1e-5) {
    BasicTensor<double> g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

/// Projection sum(y * r), the scalar used to probe gradients.
inline double dot(const BasicTensor<double>& y, const BasicTensor<double>& r) {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("attendseg_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testing_support
