#include "rftlab/fft.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rftlab {

namespace {

// Twiddle table for one extent: w[k] = exp(sign * 2 pi i k / n), k < n.
struct Twiddle {
    std::vector<double> re, im;
    explicit Twiddle(int n, double sign) : re(n), im(n) {
        for (int k = 0; k < n; ++k) {
            const double ang = sign * 2.0 * std::numbers::pi * k / n;
            re[k] = std::cos(ang);
            im[k] = std::sin(ang);
        }
    }
};

// In-place-free 1-D DFT of each row of an H x W complex grid, then of each
// column, sharing the same direction. The twiddle index uses (j*k) mod n so
// table error does not accumulate with the angle.
void transform_rows(std::vector<double>& re, std::vector<double>& im, int h, int w,
                    const Twiddle& tw) {
    std::vector<double> out_re(w), out_im(w);
    for (int r = 0; r < h; ++r) {
        double* row_re = re.data() + static_cast<std::size_t>(r) * w;
        double* row_im = im.data() + static_cast<std::size_t>(r) * w;
        for (int k = 0; k < w; ++k) {
            double sr = 0.0, si = 0.0;
            std::size_t t = 0;
            for (int j = 0; j < w; ++j) {
                sr += row_re[j] * tw.re[t] - row_im[j] * tw.im[t];
                si += row_re[j] * tw.im[t] + row_im[j] * tw.re[t];
                t += k;
                if (t >= static_cast<std::size_t>(w)) t -= w;
            }
            out_re[k] = sr;
            out_im[k] = si;
        }
        std::copy(out_re.begin(), out_re.end(), row_re);
        std::copy(out_im.begin(), out_im.end(), row_im);
    }
}

void transform_cols(std::vector<double>& re, std::vector<double>& im, int h, int w,
                    const Twiddle& tw) {
    std::vector<double> out_re(h), out_im(h);
    for (int c = 0; c < w; ++c) {
        for (int k = 0; k < h; ++k) {
            double sr = 0.0, si = 0.0;
            std::size_t t = 0;
            for (int j = 0; j < h; ++j) {
                const std::size_t p = static_cast<std::size_t>(j) * w + c;
                sr += re[p] * tw.re[t] - im[p] * tw.im[t];
                si += re[p] * tw.im[t] + im[p] * tw.re[t];
                t += k;
                if (t >= static_cast<std::size_t>(h)) t -= h;
            }
            out_re[k] = sr;
            out_im[k] = si;
        }
        for (int k = 0; k < h; ++k) {
            const std::size_t p = static_cast<std::size_t>(k) * w + c;
            re[p] = out_re[k];
            im[p] = out_im[k];
        }
    }
}

}  // namespace

ComplexGrid dft2(const Tensor& image) {
    const auto& s = image.shape();
    if (s.size() != 2 || s[0] < 1 || s[1] < 1) {
        throw std::invalid_argument("dft2: expected [H,W] tensor, got " + shape_str(s));
    }
    const int h = s[0], w = s[1];
    ComplexGrid g(h, w);
    g.re = image.values();
    const Twiddle tw_w(w, -1.0), tw_h(h, -1.0);
    transform_rows(g.re, g.im, h, w, tw_w);
    transform_cols(g.re, g.im, h, w, tw_h);
    return g;
}

Tensor idft2(const ComplexGrid& spec, double* max_imag_residue) {
    const int h = spec.height, w = spec.width;
    if (h < 1 || w < 1 || spec.re.size() != static_cast<std::size_t>(h) * w ||
        spec.im.size() != spec.re.size()) {
        throw std::invalid_argument("idft2: inconsistent grid extents");
    }
    std::vector<double> re = spec.re, im = spec.im;
    const Twiddle tw_w(w, +1.0), tw_h(h, +1.0);
    transform_rows(re, im, h, w, tw_w);
    transform_cols(re, im, h, w, tw_h);
    const double norm = 1.0 / (static_cast<double>(h) * w);
    double max_im = 0.0;
    for (std::size_t i = 0; i < re.size(); ++i) {
        re[i] *= norm;
        im[i] *= norm;
        max_im = std::max(max_im, std::fabs(im[i]));
    }
    if (max_imag_residue) *max_imag_residue = max_im;
    return Tensor::from({h, w}, std::move(re));
}

}  // namespace rftlab
