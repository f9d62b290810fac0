// Timing comparison of the serial reference kernels against the OpenMP
// forms, plus a bitwise equality check on every compared buffer.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "duv/kernels.hpp"
#include "duv/rng.hpp"

using namespace duv;
using Clock = std::chrono::steady_clock;

namespace {

double bench(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / reps;
}

std::vector<double> random_buffer(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

void report(const char* name, double serial_ms, double parallel_ms, bool identical) {
    std::printf("%-24s serial %8.3f ms   openmp %8.3f ms   speedup %5.2fx   %s\n", name,
                serial_ms, parallel_ms, serial_ms / parallel_ms,
                identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("built without openmp; both columns run the serial form\n");
#endif
    Rng rng(1);
    const int reps = 20;

    {
        const int n = 64, d_in = 256, d_out = 256;
        auto x = random_buffer(static_cast<std::size_t>(n) * d_in, rng);
        auto w = random_buffer(static_cast<std::size_t>(d_in) * d_out, rng);
        std::vector<double> a(static_cast<std::size_t>(n) * d_out);
        std::vector<double> b(a.size());
        double ts = bench([&] { kernels::matmul_serial(x.data(), w.data(), a.data(), n, d_in,
                                                       d_out); },
                          reps);
        double tp = bench([&] { kernels::matmul(x.data(), w.data(), b.data(), n, d_in, d_out); },
                          reps);
        report("matmul 64x256x256", ts, tp, std::memcmp(a.data(), b.data(), a.size() * 8) == 0);
    }
    {
        const int n = 64, d_in = 256, d_out = 256;
        auto x = random_buffer(static_cast<std::size_t>(n) * d_in, rng);
        auto g = random_buffer(static_cast<std::size_t>(n) * d_out, rng);
        std::vector<double> a(static_cast<std::size_t>(d_in) * d_out);
        std::vector<double> b(a.size());
        double ts = bench([&] { kernels::matmul_at_b_serial(x.data(), g.data(), a.data(), n,
                                                            d_in, d_out); },
                          reps);
        double tp = bench([&] { kernels::matmul_at_b(x.data(), g.data(), b.data(), n, d_in,
                                                     d_out); },
                          reps);
        report("matmul_at_b", ts, tp, std::memcmp(a.data(), b.data(), a.size() * 8) == 0);
    }
    {
        const int n = 64, d_in = 256, d_out = 256;
        auto g = random_buffer(static_cast<std::size_t>(n) * d_out, rng);
        auto w = random_buffer(static_cast<std::size_t>(d_in) * d_out, rng);
        std::vector<double> a(static_cast<std::size_t>(n) * d_in);
        std::vector<double> b(a.size());
        double ts = bench([&] { kernels::matmul_a_bt_serial(g.data(), w.data(), a.data(), n,
                                                            d_in, d_out); },
                          reps);
        double tp = bench([&] { kernels::matmul_a_bt(g.data(), w.data(), b.data(), n, d_in,
                                                     d_out); },
                          reps);
        report("matmul_a_bt", ts, tp, std::memcmp(a.data(), b.data(), a.size() * 8) == 0);
    }

    const int n = 8, c = 16, h = 32, w = 32, f = 16, stride = 1, pad = 1;
    const int ho = kernels::conv2d_out_extent(h, stride, pad);
    const int wo = kernels::conv2d_out_extent(w, stride, pad);
    auto x = random_buffer(static_cast<std::size_t>(n) * c * h * w, rng);
    auto k = random_buffer(static_cast<std::size_t>(f) * c * 9, rng);
    auto gout = random_buffer(static_cast<std::size_t>(n) * f * ho * wo, rng);
    {
        std::vector<double> a(static_cast<std::size_t>(n) * f * ho * wo);
        std::vector<double> b(a.size());
        double ts = bench([&] { kernels::conv2d_serial(x.data(), k.data(), a.data(), n, c, h, w,
                                                       f, stride, pad, ho, wo); },
                          reps);
        double tp = bench([&] { kernels::conv2d(x.data(), k.data(), b.data(), n, c, h, w, f,
                                                stride, pad, ho, wo); },
                          reps);
        report("conv2d 8x16x32x32", ts, tp, std::memcmp(a.data(), b.data(), a.size() * 8) == 0);
    }
    {
        std::vector<double> a(x.size());
        std::vector<double> b(x.size());
        double ts = bench([&] { kernels::conv2d_grad_input_serial(gout.data(), k.data(), a.data(),
                                                                  n, c, h, w, f, stride, pad, ho,
                                                                  wo); },
                          reps);
        double tp = bench([&] { kernels::conv2d_grad_input(gout.data(), k.data(), b.data(), n, c,
                                                           h, w, f, stride, pad, ho, wo); },
                          reps);
        report("conv2d_grad_input", ts, tp, std::memcmp(a.data(), b.data(), a.size() * 8) == 0);
    }
    {
        std::vector<double> a(k.size(), 0.0);
        std::vector<double> b(k.size(), 0.0);
        double ts = bench([&] {
            std::fill(a.begin(), a.end(), 0.0);
            kernels::conv2d_grad_kernel_serial(x.data(), gout.data(), a.data(), n, c, h, w, f,
                                               stride, pad, ho, wo);
        }, reps);
        double tp = bench([&] {
            std::fill(b.begin(), b.end(), 0.0);
            kernels::conv2d_grad_kernel(x.data(), gout.data(), b.data(), n, c, h, w, f, stride,
                                        pad, ho, wo);
        }, reps);
        report("conv2d_grad_kernel", ts, tp, std::memcmp(a.data(), b.data(), a.size() * 8) == 0);
    }
    return 0;
}
