#include "duv/kernels.hpp"

namespace duv::kernels {

int conv2d_out_extent(int extent, int stride, int pad) {
    return (extent + 2 * pad - 3) / stride + 1;
}

void matmul_serial(const double* x, const double* w, double* out, int n, int d_in, int d_out) {
    for (int r = 0; r < n; ++r) {
        for (int j = 0; j < d_out; ++j) {
            double acc = 0.0;
            for (int i = 0; i < d_in; ++i) {
                acc += x[r * d_in + i] * w[i * d_out + j];
            }
            out[r * d_out + j] = acc;
        }
    }
}

void matmul(const double* x, const double* w, double* out, int n, int d_in, int d_out) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < n; ++r) {
        for (int j = 0; j < d_out; ++j) {
            double acc = 0.0;
            for (int i = 0; i < d_in; ++i) {
                acc += x[r * d_in + i] * w[i * d_out + j];
            }
            out[r * d_out + j] = acc;
        }
    }
}

void matmul_at_b_serial(const double* x, const double* g, double* out, int n, int d_in,
                        int d_out) {
    for (int i = 0; i < d_in; ++i) {
        for (int j = 0; j < d_out; ++j) {
            double acc = 0.0;
            for (int r = 0; r < n; ++r) {
                acc += x[r * d_in + i] * g[r * d_out + j];
            }
            out[i * d_out + j] = acc;
        }
    }
}

void matmul_at_b(const double* x, const double* g, double* out, int n, int d_in, int d_out) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < d_in; ++i) {
        for (int j = 0; j < d_out; ++j) {
            double acc = 0.0;
            for (int r = 0; r < n; ++r) {
                acc += x[r * d_in + i] * g[r * d_out + j];
            }
            out[i * d_out + j] = acc;
        }
    }
}

void matmul_a_bt_serial(const double* g, const double* w, double* out, int n, int d_in,
                        int d_out) {
    for (int r = 0; r < n; ++r) {
        for (int i = 0; i < d_in; ++i) {
            double acc = 0.0;
            for (int j = 0; j < d_out; ++j) {
                acc += g[r * d_out + j] * w[i * d_out + j];
            }
            out[r * d_in + i] = acc;
        }
    }
}

void matmul_a_bt(const double* g, const double* w, double* out, int n, int d_in, int d_out) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < n; ++r) {
        for (int i = 0; i < d_in; ++i) {
            double acc = 0.0;
            for (int j = 0; j < d_out; ++j) {
                acc += g[r * d_out + j] * w[i * d_out + j];
            }
            out[r * d_in + i] = acc;
        }
    }
}

namespace {

inline double conv_out_at(const double* x, const double* k, int c, int h, int w, int stride,
                          int pad, int ni, int fi, int oy, int ox) {
    double acc = 0.0;
    int iy0 = oy * stride - pad;
    int ix0 = ox * stride - pad;
    for (int ci = 0; ci < c; ++ci) {
        const double* xp = x + (static_cast<std::size_t>(ni) * c + ci) * h * w;
        const double* kp = k + (static_cast<std::size_t>(fi) * c + ci) * 9;
        for (int ky = 0; ky < 3; ++ky) {
            int iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
                int ix = ix0 + kx;
                if (ix < 0 || ix >= w) continue;
                acc += xp[iy * w + ix] * kp[ky * 3 + kx];
            }
        }
    }
    return acc;
}

}  // namespace

void conv2d_serial(const double* x, const double* k, double* out, int n, int c, int h, int w,
                   int f, int stride, int pad, int ho, int wo) {
    for (int ni = 0; ni < n; ++ni) {
        for (int fi = 0; fi < f; ++fi) {
            double* op = out + (static_cast<std::size_t>(ni) * f + fi) * ho * wo;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    op[oy * wo + ox] = conv_out_at(x, k, c, h, w, stride, pad, ni, fi, oy, ox);
                }
            }
        }
    }
}

void conv2d(const double* x, const double* k, double* out, int n, int c, int h, int w, int f,
            int stride, int pad, int ho, int wo) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int fi = 0; fi < f; ++fi) {
            double* op = out + (static_cast<std::size_t>(ni) * f + fi) * ho * wo;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    op[oy * wo + ox] = conv_out_at(x, k, c, h, w, stride, pad, ni, fi, oy, ox);
                }
            }
        }
    }
}

namespace {

// Gather form of the input gradient: each input pixel sums contributions
// from the output positions whose window covers it.
inline double conv_gx_at(const double* gout, const double* k, int c, int f, int stride,
                         int pad, int ho, int wo, int ni, int ci, int iy, int ix) {
    double acc = 0.0;
    for (int fi = 0; fi < f; ++fi) {
        const double* gp = gout + (static_cast<std::size_t>(ni) * f + fi) * ho * wo;
        const double* kp = k + (static_cast<std::size_t>(fi) * c + ci) * 9;
        for (int ky = 0; ky < 3; ++ky) {
            int num_y = iy + pad - ky;
            if (num_y < 0 || num_y % stride != 0) continue;
            int oy = num_y / stride;
            if (oy >= ho) continue;
            for (int kx = 0; kx < 3; ++kx) {
                int num_x = ix + pad - kx;
                if (num_x < 0 || num_x % stride != 0) continue;
                int ox = num_x / stride;
                if (ox >= wo) continue;
                acc += gp[oy * wo + ox] * kp[ky * 3 + kx];
            }
        }
    }
    return acc;
}

}  // namespace

void conv2d_grad_input_serial(const double* gout, const double* k, double* gx, int n, int c,
                              int h, int w, int f, int stride, int pad, int ho, int wo) {
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            double* gp = gx + (static_cast<std::size_t>(ni) * c + ci) * h * w;
            for (int iy = 0; iy < h; ++iy) {
                for (int ix = 0; ix < w; ++ix) {
                    gp[iy * w + ix] +=
                        conv_gx_at(gout, k, c, f, stride, pad, ho, wo, ni, ci, iy, ix);
                }
            }
        }
    }
}

void conv2d_grad_input(const double* gout, const double* k, double* gx, int n, int c, int h,
                       int w, int f, int stride, int pad, int ho, int wo) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            double* gp = gx + (static_cast<std::size_t>(ni) * c + ci) * h * w;
            for (int iy = 0; iy < h; ++iy) {
                for (int ix = 0; ix < w; ++ix) {
                    gp[iy * w + ix] +=
                        conv_gx_at(gout, k, c, f, stride, pad, ho, wo, ni, ci, iy, ix);
                }
            }
        }
    }
}

namespace {

inline double conv_gk_at(const double* x, const double* gout, int c, int h, int w, int f,
                         int stride, int pad, int ho, int wo, int n, int fi, int ci, int ky,
                         int kx) {
    double acc = 0.0;
    for (int ni = 0; ni < n; ++ni) {
        const double* xp = x + (static_cast<std::size_t>(ni) * c + ci) * h * w;
        const double* gp = gout + (static_cast<std::size_t>(ni) * f + fi) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < wo; ++ox) {
                int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= w) continue;
                acc += xp[iy * w + ix] * gp[oy * wo + ox];
            }
        }
    }
    return acc;
}

}  // namespace

void conv2d_grad_kernel_serial(const double* x, const double* gout, double* gk, int n, int c,
                               int h, int w, int f, int stride, int pad, int ho, int wo) {
    for (int fi = 0; fi < f; ++fi) {
        for (int ci = 0; ci < c; ++ci) {
            double* kp = gk + (static_cast<std::size_t>(fi) * c + ci) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    kp[ky * 3 + kx] +=
                        conv_gk_at(x, gout, c, h, w, f, stride, pad, ho, wo, n, fi, ci, ky, kx);
                }
            }
        }
    }
}

void conv2d_grad_kernel(const double* x, const double* gout, double* gk, int n, int c, int h,
                        int w, int f, int stride, int pad, int ho, int wo) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int fi = 0; fi < f; ++fi) {
        for (int ci = 0; ci < c; ++ci) {
            double* kp = gk + (static_cast<std::size_t>(fi) * c + ci) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    kp[ky * 3 + kx] +=
                        conv_gk_at(x, gout, c, h, w, f, stride, pad, ho, wo, n, fi, ci, ky, kx);
                }
            }
        }
    }
}

}  // namespace duv::kernels
