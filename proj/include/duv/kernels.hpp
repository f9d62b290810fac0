#pragma once

#include <cstddef>

// Dense inner loops behind the autodiff ops. Each kernel exists in a
// serial reference form and an OpenMP form. The parallel form splits work
// over independent output elements only; every output is accumulated in
// the same order as the serial form, so results are bit-identical for any
// thread count.
namespace duv::kernels {

// out[n, j] = sum_i x[n, i] * w[i, j]
void matmul_serial(const double* x, const double* w, double* out, int n, int d_in, int d_out);
void matmul(const double* x, const double* w, double* out, int n, int d_in, int d_out);

// out[i, j] = sum_n x[n, i] * g[n, j]   (x^T g, used for weight gradients)
void matmul_at_b_serial(const double* x, const double* g, double* out, int n, int d_in,
                        int d_out);
void matmul_at_b(const double* x, const double* g, double* out, int n, int d_in, int d_out);

// out[n, i] = sum_j g[n, j] * w[i, j]   (g w^T, used for input gradients)
void matmul_a_bt_serial(const double* g, const double* w, double* out, int n, int d_in,
                        int d_out);
void matmul_a_bt(const double* g, const double* w, double* out, int n, int d_in, int d_out);

// 3x3 cross-correlation, x: [N,C,H,W], k: [F,C,3,3], out: [N,F,HO,WO].
void conv2d_serial(const double* x, const double* k, double* out, int n, int c, int h, int w,
                   int f, int stride, int pad, int ho, int wo);
void conv2d(const double* x, const double* k, double* out, int n, int c, int h, int w, int f,
            int stride, int pad, int ho, int wo);

// dL/dx for conv2d. gout: [N,F,HO,WO].
void conv2d_grad_input_serial(const double* gout, const double* k, double* gx, int n, int c,
                              int h, int w, int f, int stride, int pad, int ho, int wo);
void conv2d_grad_input(const double* gout, const double* k, double* gx, int n, int c, int h,
                       int w, int f, int stride, int pad, int ho, int wo);

// dL/dk for conv2d. Accumulates into gk (caller zero-fills).
void conv2d_grad_kernel_serial(const double* x, const double* gout, double* gk, int n, int c,
                               int h, int w, int f, int stride, int pad, int ho, int wo);
void conv2d_grad_kernel(const double* x, const double* gout, double* gk, int n, int c, int h,
                        int w, int f, int stride, int pad, int ho, int wo);

int conv2d_out_extent(int extent, int stride, int pad);

}  // namespace duv::kernels
