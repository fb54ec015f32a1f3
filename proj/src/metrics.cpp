#include "mdda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace mdda {

double psnr(const TP<float>& a, const TP<float>& b) {
    if (!(a->shape == b->shape))
        throw DimError("psnr: " + a->shape.str() + " vs " + b->shape.str());
    double mse = 0.0;
    for (size_t i = 0; i < a->size(); ++i) {
        const double d = static_cast<double>(a->data[i]) - static_cast<double>(b->data[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a->size());
    if (mse == 0.0) return kPsnrCapDb;
    return std::min(10.0 * std::log10(1.0 / mse), kPsnrCapDb);
}

namespace {

// 11-tap Gaussian, sigma 1.5, normalized.
std::vector<double> gaussian_window() {
    std::vector<double> w(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5.0;
        w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Separable windowed mean over the valid region of one channel plane.
std::vector<double> window_filter(const std::vector<double>& img, int h, int w,
                                  const std::vector<double>& win) {
    const int k = static_cast<int>(win.size());
    const int oh = h - k + 1, ow = w - k + 1;
    std::vector<double> rowpass(static_cast<size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int j = 0; j < k; ++j) acc += win[j] * img[static_cast<size_t>(y) * w + x + j];
            rowpass[static_cast<size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int j = 0; j < k; ++j) acc += win[j] * rowpass[static_cast<size_t>(y + j) * ow + x];
            out[static_cast<size_t>(y) * ow + x] = acc;
        }
    return out;
}

double ssim_channel(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
    static const std::vector<double> win = gaussian_window();
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // (K1*L)^2, (K2*L)^2 with L=1
    const size_t n = a.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (size_t i = 0; i < n; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = window_filter(a, h, w, win);
    const auto mu_b = window_filter(b, h, w, win);
    const auto m_aa = window_filter(aa, h, w, win);
    const auto m_bb = window_filter(bb, h, w, win);
    const auto m_ab = window_filter(ab, h, w, win);
    double total = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

}  // namespace

double ssim(const TP<float>& a, const TP<float>& b) {
    if (!(a->shape == b->shape))
        throw DimError("ssim: " + a->shape.str() + " vs " + b->shape.str());
    const int h = a->shape.h, w = a->shape.w;
    if (std::min(h, w) < 11)
        throw DimError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                       " smaller than the 11x11 window");
    const size_t plane = static_cast<size_t>(h) * w;
    double total = 0.0;
    const int planes = a->shape.n * a->shape.c;
    for (int p = 0; p < planes; ++p) {
        std::vector<double> pa(plane), pb(plane);
        for (size_t i = 0; i < plane; ++i) {
            pa[i] = a->data[static_cast<size_t>(p) * plane + i];
            pb[i] = b->data[static_cast<size_t>(p) * plane + i];
        }
        total += ssim_channel(pa, pb, h, w);
    }
    return total / planes;
}

TP<float> rgb_to_y(const TP<float>& img) {
    if (img->shape.c != 3)
        throw DimError("rgb_to_y: need 3 channels, got " + img->shape.str());
    const auto& s = img->shape;
    auto y = make_tensor<float>(s.n, 1, s.h, s.w);
    const size_t plane = static_cast<size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (size_t i = 0; i < plane; ++i) {
            const size_t base = static_cast<size_t>(n) * 3 * plane;
            const double r = img->data[base + i];
            const double g = img->data[base + plane + i];
            const double b = img->data[base + 2 * plane + i];
            y->data[static_cast<size_t>(n) * plane + i] =
                static_cast<float>((65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0);
        }
    return y;
}

double EvalReport::mean_psnr() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.psnr_db;
    return entries.empty() ? 0.0 : s / static_cast<double>(entries.size());
}

double EvalReport::mean_ssim() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.ssim;
    return entries.empty() ? 0.0 : s / static_cast<double>(entries.size());
}

EvalEntry evaluate_pair(const TP<float>& restored, const TP<float>& clean,
                        ChannelMode mode, const std::string& path) {
    EvalEntry e;
    e.path = path;
    if (mode == ChannelMode::kY) {
        const auto ry = rgb_to_y(restored);
        const auto cy = rgb_to_y(clean);
        e.psnr_db = psnr(ry, cy);
        e.ssim = ssim(ry, cy);
    } else {
        e.psnr_db = psnr(restored, clean);
        e.ssim = ssim(restored, clean);
    }
    return e;
}

void write_eval_csv(const EvalReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path + "'");
    f << "path,psnr_db,ssim\n";
    for (const auto& e : report.entries) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f,%.6f", e.psnr_db, e.ssim);
        f << e.path << "," << buf << "\n";
    }
}

}  // namespace mdda
