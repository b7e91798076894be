// Compares the serial reference kernels against the OpenMP versions and
// verifies bit-identical outputs while timing both.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <omp.h>
#include <vector>

#include "mdp/kernels.hpp"
#include "mdp/rng.hpp"

using namespace mdp;

namespace {

double now() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::vector<double> randvec(size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

template <class F> double time_best(F f, int reps) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        const double t0 = now();
        f();
        best = std::min(best, now() - t0);
    }
    return best;
}

bool identical(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

} // namespace

int main() {
    const size_t H = 128, W = 128, Cin = 16, Cout = 32;
    const int reps = 5;
    Rng rng(42);
    auto x = randvec(H * W * Cin, rng);
    auto w = randvec(3 * 3 * Cin * Cout, rng);
    auto b = randvec(Cout, rng);
    auto gy = randvec(H * W * Cout, rng);

    std::printf("threads: %d, image %zux%zux%zu -> %zu channels, best of %d\n",
                omp_get_max_threads(), H, W, Cin, Cout, reps);
    std::printf("%-24s %10s %10s %8s %s\n", "kernel", "serial_ms", "omp_ms",
                "speedup", "bitwise");

    auto row = [&](const char* name, auto serial, auto par,
                   const std::vector<double>& out_s,
                   const std::vector<double>& out_p) {
        const double ts = time_best(serial, reps);
        const double tp = time_best(par, reps);
        std::printf("%-24s %10.2f %10.2f %7.2fx %s\n", name, ts * 1e3,
                    tp * 1e3, ts / tp, identical(out_s, out_p) ? "yes" : "NO");
        return identical(out_s, out_p);
    };

    bool ok = true;
    {
        std::vector<double> ys(H * W * Cout), yp(H * W * Cout);
        ok &= row(
            "conv3x3_forward",
            [&] { ref::conv3x3_forward(x.data(), w.data(), b.data(), ys.data(), H, W, Cin, Cout, 1); },
            [&] { par::conv3x3_forward(x.data(), w.data(), b.data(), yp.data(), H, W, Cin, Cout, 1); },
            ys, yp);
    }
    {
        std::vector<double> gxs(H * W * Cin), gxp(H * W * Cin);
        ok &= row(
            "conv3x3_backward_input",
            [&] { ref::conv3x3_backward_input(gy.data(), w.data(), gxs.data(), H, W, Cin, Cout, 1); },
            [&] { par::conv3x3_backward_input(gy.data(), w.data(), gxp.data(), H, W, Cin, Cout, 1); },
            gxs, gxp);
    }
    {
        std::vector<double> gws(w.size()), gbs(Cout), gwp(w.size()), gbp(Cout);
        ok &= row(
            "conv3x3_backward_params",
            [&] { ref::conv3x3_backward_params(x.data(), gy.data(), gws.data(), gbs.data(), H, W, Cin, Cout, 1); },
            [&] { par::conv3x3_backward_params(x.data(), gy.data(), gwp.data(), gbp.data(), H, W, Cin, Cout, 1); },
            gws, gwp);
    }
    {
        auto pw = randvec(Cin * Cout, rng);
        std::vector<double> ys(H * W * Cout), yp(H * W * Cout);
        ok &= row(
            "pointwise_forward",
            [&] { ref::pointwise_forward(x.data(), pw.data(), b.data(), ys.data(), H * W, Cin, Cout); },
            [&] { par::pointwise_forward(x.data(), pw.data(), b.data(), yp.data(), H * W, Cin, Cout); },
            ys, yp);
    }
    if (!ok) {
        std::printf("MISMATCH between serial and parallel kernels\n");
        return 1;
    }
    return 0;
}
