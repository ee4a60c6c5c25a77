#pragma once

// Dense double-precision kernels used by every network in the project.
// A scalar reference table is always available; an AVX2/FMA table is
// compiled on x86-64 and selected at runtime when the CPU supports it.
// Setting SPO_KERNELS=scalar in the environment forces the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace spo::kernels {

struct KernelTable {
    std::string_view name;

    // sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // y = W x + bias   (W is rows x cols, row-major; bias may be null)
    void (*gemv)(const double* w, const double* x, const double* bias, double* y,
                 std::size_t rows, std::size_t cols);
    // out += W^T g
    void (*gemv_t_acc)(const double* w, const double* g, double* out,
                       std::size_t rows, std::size_t cols);
    // gw += g x^T
    void (*ger_acc)(const double* g, const double* x, double* gw,
                    std::size_t rows, std::size_t cols);
};

const KernelTable& scalar();

// nullptr when the variant was not compiled in or the CPU lacks the ISA.
const KernelTable* avx2();

// Table chosen once per process.
const KernelTable& active();

// Span conveniences over the active table.
inline double dot(std::span<const double> a, std::span<const double> b) {
    return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace spo::kernels
