#include <cstdlib>
#include <string_view>

#include "koopwind/kernels.hpp"

namespace koopwind::kernels {

#ifndef KOOPWIND_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return avx2_table() != nullptr && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

Isa initial_isa() {
    if (const char* env = std::getenv("KOOPWIND_ISA")) {
        if (std::string_view(env) == "scalar") return Isa::Scalar;
    }
    return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;
}

struct Selection {
    Isa isa = initial_isa();
    const KernelTable* table = isa == Isa::Avx2 ? avx2_table() : &scalar_table();
};

Selection& selection() {
    static Selection s;
    return s;
}

}  // namespace

Isa active_isa() { return selection().isa; }

bool set_isa(Isa isa) {
    if (isa == Isa::Avx2 && !cpu_has_avx2()) return false;
    selection().isa = isa;
    selection().table = isa == Isa::Avx2 ? avx2_table() : &scalar_table();
    return true;
}

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

const KernelTable& active() { return *selection().table; }

}  // namespace koopwind::kernels
