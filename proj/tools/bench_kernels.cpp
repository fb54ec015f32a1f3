// Times the OpenMP kernels against their serial reference definitions.
// The two paths must agree elementwise; the table reports the speedup.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "mdda/kernels.hpp"
#include "mdda/rng.hpp"

using namespace mdda;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int runs) {
    std::vector<double> ms;
    fn();  // warm-up
    for (int i = 0; i < runs; ++i) {
        const auto t0 = Clock::now();
        fn();
        const auto t1 = Clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    return ms[ms.size() / 2];
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

void fill(std::vector<float>& v, Rng& rng) {
    for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
}

void bench_conv(int n, int cin, int hw, int cout, int k, int runs) {
    const auto d = kernels::ConvDims::make(n, cin, hw, hw, cout, k, 1, k / 2, 1);
    Rng rng(1);
    std::vector<float> x(static_cast<size_t>(n) * cin * hw * hw), w(static_cast<size_t>(cout) * cin * k * k),
        b(cout), ys(static_cast<size_t>(n) * cout * d.oh * d.ow), yp(ys.size());
    fill(x, rng);
    fill(w, rng);
    fill(b, rng);
    const double ser = time_ms([&] { kernels::serial::conv2d_forward(d, x.data(), w.data(), b.data(), ys.data()); }, runs);
    const double par = time_ms([&] { kernels::par::conv2d_forward(d, x.data(), w.data(), b.data(), yp.data()); }, runs);
    const double diff = max_abs_diff(ys, yp);
    const double gmac = static_cast<double>(n) * cout * cin * k * k * d.oh * d.ow / 1e9;
    std::printf("conv2d  %dx%dx%dx%d -> %d ch, k=%d   serial %8.2f ms   omp %8.2f ms   x%.2f   max|diff| %.2e   (%.2f GMAC)\n",
                n, cin, hw, hw, cout, k, ser, par, ser / par, diff, gmac);
}

void bench_matmul(int batch, int r, int inner, int c, int runs) {
    Rng rng(2);
    std::vector<float> a(static_cast<size_t>(batch) * r * inner), b(static_cast<size_t>(batch) * inner * c),
        ys(static_cast<size_t>(batch) * r * c), yp(ys.size());
    fill(a, rng);
    fill(b, rng);
    const double ser = time_ms([&] { kernels::serial::matmul(batch, r, inner, c, a.data(), b.data(), ys.data()); }, runs);
    const double par = time_ms([&] { kernels::par::matmul(batch, r, inner, c, a.data(), b.data(), yp.data()); }, runs);
    const double diff = max_abs_diff(ys, yp);
    std::printf("matmul  %d x (%dx%d)(%dx%d)          serial %8.2f ms   omp %8.2f ms   x%.2f   max|diff| %.2e\n",
                batch, r, inner, inner, c, ser, par, ser / par, diff);
}

}  // namespace

int main(int argc, char** argv) {
    int runs = 5;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--runs" && i + 1 < argc) runs = std::atoi(argv[++i]);
        else if (arg == "--threads" && i + 1 < argc) set_threads(std::atoi(argv[++i]));
        else {
            std::fprintf(stderr, "usage: bench_kernels [--runs N] [--threads N]\n");
            return 1;
        }
    }
    std::printf("threads: %d, runs per measurement: %d (median reported)\n\n", effective_threads(), runs);
    bench_conv(1, 32, 64, 32, 3, runs);
    bench_conv(4, 16, 32, 32, 3, runs);
    bench_conv(1, 64, 32, 64, 3, runs);
    bench_conv(1, 3, 128, 48, 3, runs);
    std::printf("\n");
    bench_matmul(1, 256, 256, 256, runs);
    bench_matmul(8, 64, 1024, 64, runs);
    return 0;
}
