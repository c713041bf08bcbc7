#include "mdx/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mdx::kernels {

namespace {
std::atomic<bool> g_parallel{true};

// Work below this many fused multiply-adds is not worth a parallel region.
constexpr std::int64_t kGrain = 1 << 15;
}  // namespace

bool parallel_enabled() {
#ifdef _OPENMP
    return g_parallel.load(std::memory_order_relaxed);
#else
    return false;
#endif
}

void set_parallel_enabled(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// ---------------------------------------------------------------------------
// Serial reference kernels.
// ---------------------------------------------------------------------------

namespace serial {

void matmul(const double* a, const double* b, double* c,
            std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        std::fill(crow, crow + n, 0.0);
        const double* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

void conv2d(const double* x, const double* w, const double* bias, double* y,
            std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
            std::int64_t ksize, std::int64_t pad) {
    for (std::int64_t oy = 0; oy < h; ++oy) {
        for (std::int64_t ox = 0; ox < wd; ++ox) {
            double* yout = y + (oy * wd + ox) * co;
            for (std::int64_t o = 0; o < co; ++o) yout[o] = bias ? bias[o] : 0.0;
            for (std::int64_t ky = 0; ky < ksize; ++ky) {
                const std::int64_t iy = oy + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (std::int64_t kx = 0; kx < ksize; ++kx) {
                    const std::int64_t ix = ox + kx - pad;
                    if (ix < 0 || ix >= wd) continue;
                    const double* xin = x + (iy * wd + ix) * ci;
                    const double* wk = w + ((ky * ksize + kx) * ci) * co;
                    for (std::int64_t c = 0; c < ci; ++c) {
                        const double xv = xin[c];
                        const double* wrow = wk + c * co;
                        for (std::int64_t o = 0; o < co; ++o) yout[o] += xv * wrow[o];
                    }
                }
            }
        }
    }
}

// dx(iy,ix,c) = sum over (ky,kx,o) of dy(iy-ky+pad, ix-kx+pad, o) * w(ky,kx,c,o).
void conv2d_grad_input(const double* dy, const double* w, double* dx,
                       std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
                       std::int64_t ksize, std::int64_t pad) {
    for (std::int64_t iy = 0; iy < h; ++iy) {
        for (std::int64_t ix = 0; ix < wd; ++ix) {
            double* dxp = dx + (iy * wd + ix) * ci;
            std::fill(dxp, dxp + ci, 0.0);
            for (std::int64_t ky = 0; ky < ksize; ++ky) {
                const std::int64_t oy = iy - ky + pad;
                if (oy < 0 || oy >= h) continue;
                for (std::int64_t kx = 0; kx < ksize; ++kx) {
                    const std::int64_t ox = ix - kx + pad;
                    if (ox < 0 || ox >= wd) continue;
                    const double* dyp = dy + (oy * wd + ox) * co;
                    const double* wk = w + ((ky * ksize + kx) * ci) * co;
                    for (std::int64_t c = 0; c < ci; ++c) {
                        const double* wrow = wk + c * co;
                        double acc = 0.0;
                        for (std::int64_t o = 0; o < co; ++o) acc += dyp[o] * wrow[o];
                        dxp[c] += acc;
                    }
                }
            }
        }
    }
}

void conv2d_grad_weights(const double* x, const double* dy, double* dw, double* db,
                         std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
                         std::int64_t ksize, std::int64_t pad) {
    for (std::int64_t ky = 0; ky < ksize; ++ky) {
        for (std::int64_t kx = 0; kx < ksize; ++kx) {
            for (std::int64_t c = 0; c < ci; ++c) {
                double* dwrow = dw + ((ky * ksize + kx) * ci + c) * co;
                std::fill(dwrow, dwrow + co, 0.0);
                for (std::int64_t oy = 0; oy < h; ++oy) {
                    const std::int64_t iy = oy + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (std::int64_t ox = 0; ox < wd; ++ox) {
                        const std::int64_t ix = ox + kx - pad;
                        if (ix < 0 || ix >= wd) continue;
                        const double xv = x[(iy * wd + ix) * ci + c];
                        const double* dyp = dy + (oy * wd + ox) * co;
                        for (std::int64_t o = 0; o < co; ++o) dwrow[o] += xv * dyp[o];
                    }
                }
            }
        }
    }
    if (db) {
        for (std::int64_t o = 0; o < co; ++o) {
            double acc = 0.0;
            for (std::int64_t p = 0; p < h * wd; ++p) acc += dy[p * co + o];
            db[o] = acc;
        }
    }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP kernels. Each parallel loop owns a disjoint slice of the output and
// accumulates in the same order as the serial reference.
// ---------------------------------------------------------------------------

namespace parallel {

void matmul(const double* a, const double* b, double* c,
            std::int64_t m, std::int64_t k, std::int64_t n) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        std::fill(crow, crow + n, 0.0);
        const double* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::int64_t m, std::int64_t k, std::int64_t n) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

void conv2d(const double* x, const double* w, const double* bias, double* y,
            std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
            std::int64_t ksize, std::int64_t pad) {
#pragma omp parallel for schedule(static)
    for (std::int64_t oy = 0; oy < h; ++oy) {
        for (std::int64_t ox = 0; ox < wd; ++ox) {
            double* yout = y + (oy * wd + ox) * co;
            for (std::int64_t o = 0; o < co; ++o) yout[o] = bias ? bias[o] : 0.0;
            for (std::int64_t ky = 0; ky < ksize; ++ky) {
                const std::int64_t iy = oy + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (std::int64_t kx = 0; kx < ksize; ++kx) {
                    const std::int64_t ix = ox + kx - pad;
                    if (ix < 0 || ix >= wd) continue;
                    const double* xin = x + (iy * wd + ix) * ci;
                    const double* wk = w + ((ky * ksize + kx) * ci) * co;
                    for (std::int64_t c = 0; c < ci; ++c) {
                        const double xv = xin[c];
                        const double* wrow = wk + c * co;
                        for (std::int64_t o = 0; o < co; ++o) yout[o] += xv * wrow[o];
                    }
                }
            }
        }
    }
}

void conv2d_grad_input(const double* dy, const double* w, double* dx,
                       std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
                       std::int64_t ksize, std::int64_t pad) {
#pragma omp parallel for schedule(static)
    for (std::int64_t iy = 0; iy < h; ++iy) {
        for (std::int64_t ix = 0; ix < wd; ++ix) {
            double* dxp = dx + (iy * wd + ix) * ci;
            std::fill(dxp, dxp + ci, 0.0);
            for (std::int64_t ky = 0; ky < ksize; ++ky) {
                const std::int64_t oy = iy - ky + pad;
                if (oy < 0 || oy >= h) continue;
                for (std::int64_t kx = 0; kx < ksize; ++kx) {
                    const std::int64_t ox = ix - kx + pad;
                    if (ox < 0 || ox >= wd) continue;
                    const double* dyp = dy + (oy * wd + ox) * co;
                    const double* wk = w + ((ky * ksize + kx) * ci) * co;
                    for (std::int64_t c = 0; c < ci; ++c) {
                        const double* wrow = wk + c * co;
                        double acc = 0.0;
                        for (std::int64_t o = 0; o < co; ++o) acc += dyp[o] * wrow[o];
                        dxp[c] += acc;
                    }
                }
            }
        }
    }
}

void conv2d_grad_weights(const double* x, const double* dy, double* dw, double* db,
                         std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
                         std::int64_t ksize, std::int64_t pad) {
    const std::int64_t taps = ksize * ksize * ci;
#pragma omp parallel for schedule(static)
    for (std::int64_t t = 0; t < taps; ++t) {
        const std::int64_t ky = t / (ksize * ci);
        const std::int64_t kx = (t / ci) % ksize;
        const std::int64_t c = t % ci;
        double* dwrow = dw + t * co;
        std::fill(dwrow, dwrow + co, 0.0);
        for (std::int64_t oy = 0; oy < h; ++oy) {
            const std::int64_t iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t ox = 0; ox < wd; ++ox) {
                const std::int64_t ix = ox + kx - pad;
                if (ix < 0 || ix >= wd) continue;
                const double xv = x[(iy * wd + ix) * ci + c];
                const double* dyp = dy + (oy * wd + ox) * co;
                for (std::int64_t o = 0; o < co; ++o) dwrow[o] += xv * dyp[o];
            }
        }
    }
    if (db) {
#pragma omp parallel for schedule(static)
        for (std::int64_t o = 0; o < co; ++o) {
            double acc = 0.0;
            for (std::int64_t p = 0; p < h * wd; ++p) acc += dy[p * co + o];
            db[o] = acc;
        }
    }
}

}  // namespace parallel

// ---------------------------------------------------------------------------
// Dispatch.
// ---------------------------------------------------------------------------

void matmul(const double* a, const double* b, double* c,
            std::int64_t m, std::int64_t k, std::int64_t n) {
    if (parallel_enabled() && m * k * n >= kGrain && m > 1) {
        parallel::matmul(a, b, c, m, k, n);
    } else {
        serial::matmul(a, b, c, m, k, n);
    }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::int64_t m, std::int64_t k, std::int64_t n) {
    if (parallel_enabled() && m * k * n >= kGrain && m > 1) {
        parallel::matmul_nt(a, b, c, m, k, n);
    } else {
        serial::matmul_nt(a, b, c, m, k, n);
    }
}

void conv2d(const double* x, const double* w, const double* bias, double* y,
            std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
            std::int64_t ksize, std::int64_t pad) {
    if (parallel_enabled() && h * wd * ci * co * ksize * ksize >= kGrain && h > 1) {
        parallel::conv2d(x, w, bias, y, h, wd, ci, co, ksize, pad);
    } else {
        serial::conv2d(x, w, bias, y, h, wd, ci, co, ksize, pad);
    }
}

void conv2d_grad_input(const double* dy, const double* w, double* dx,
                       std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
                       std::int64_t ksize, std::int64_t pad) {
    if (parallel_enabled() && h * wd * ci * co * ksize * ksize >= kGrain && h > 1) {
        parallel::conv2d_grad_input(dy, w, dx, h, wd, ci, co, ksize, pad);
    } else {
        serial::conv2d_grad_input(dy, w, dx, h, wd, ci, co, ksize, pad);
    }
}

void conv2d_grad_weights(const double* x, const double* dy, double* dw, double* db,
                         std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
                         std::int64_t ksize, std::int64_t pad) {
    if (parallel_enabled() && h * wd * ci * co * ksize * ksize >= kGrain && ksize * ksize * ci > 1) {
        parallel::conv2d_grad_weights(x, dy, dw, db, h, wd, ci, co, ksize, pad);
    } else {
        serial::conv2d_grad_weights(x, dy, dw, db, h, wd, ci, co, ksize, pad);
    }
}

}  // namespace mdx::kernels
