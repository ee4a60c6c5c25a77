#include "spo/kernels.hpp"

namespace spo::kernels {
namespace {

double dot_ref(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_ref(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_ref(const double* w, const double* x, const double* bias, double* y,
              std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        double s = bias ? bias[r] : 0.0;
        const double* row = w + r * cols;
        for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
        y[r] = s;
    }
}

void gemv_t_acc_ref(const double* w, const double* g, double* out,
                    std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        const double* row = w + r * cols;
        for (std::size_t c = 0; c < cols; ++c) out[c] += gr * row[c];
    }
}

void ger_acc_ref(const double* g, const double* x, double* gw,
                 std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        double* row = gw + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += gr * x[c];
    }
}

}  // namespace

const KernelTable& scalar() {
    static const KernelTable table{"scalar", dot_ref, axpy_ref, gemv_ref,
                                   gemv_t_acc_ref, ger_acc_ref};
    return table;
}

}  // namespace spo::kernels
