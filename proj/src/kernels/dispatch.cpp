#include <cstdlib>
#include <string_view>

#include "spo/kernels.hpp"

namespace spo::kernels {

#if defined(SPO_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

const KernelTable* avx2() {
#if defined(SPO_HAVE_AVX2)
    static const bool supported = [] {
        __builtin_cpu_init();
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    }();
    return supported ? &avx2_table() : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable& active() {
    static const KernelTable& table = []() -> const KernelTable& {
        const char* env = std::getenv("SPO_KERNELS");
        if (env != nullptr && std::string_view(env) == "scalar") return scalar();
        if (const KernelTable* t = avx2()) return *t;
        return scalar();
    }();
    return table;
}

}  // namespace spo::kernels
