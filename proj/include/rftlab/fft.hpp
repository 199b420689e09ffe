#pragma once

#include <vector>

#include "rftlab/tensor.hpp"

namespace rftlab {

/// Dense complex H x W grid, the Fourier-domain counterpart of an image plane.
struct ComplexGrid {
    int height = 0;
    int width = 0;
    std::vector<double> re;  // H*W row-major
    std::vector<double> im;

    ComplexGrid() = default;
    ComplexGrid(int h, int w)
        : height(h),
          width(w),
          re(static_cast<std::size_t>(h) * w, 0.0),
          im(static_cast<std::size_t>(h) * w, 0.0) {}

    std::size_t idx(int u, int v) const { return static_cast<std::size_t>(u) * width + v; }
    double energy(int u, int v) const {
        const std::size_t i = idx(u, v);
        return re[i] * re[i] + im[i] * im[i];
    }
};

/// Unnormalized forward 2-D DFT of an [H,W] tensor:
///   X(u,v) = sum_{a,b} x(a,b) exp(-2 pi i (ua/H + vb/W)).
/// Row-column decomposition of naive 1-D transforms; O(HW(H+W)).
ComplexGrid dft2(const Tensor& image);

/// Inverse of dft2 with the 1/(HW) normalization. Returns the real part;
/// when `max_imag_residue` is non-null it receives the largest |Im| of the
/// reconstruction (near zero for Hermitian-symmetric spectra).
Tensor idft2(const ComplexGrid& spec, double* max_imag_residue = nullptr);

}  // namespace rftlab
