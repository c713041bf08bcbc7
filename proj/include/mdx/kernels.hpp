#pragma once

#include <cstdint>

namespace mdx::kernels {

// Hot inner loops behind the tensor ops. Every kernel exists twice: a serial
// reference in kernels::serial and an OpenMP variant in kernels::parallel.
// Both compute each output element with the same fixed-order inner
// accumulation, so results are bit-identical regardless of thread count.
// The unqualified functions dispatch on a work-size threshold.
//
// Layouts (row-major):
//   matmul        a: (m,k)        b: (k,n)          c: (m,n)
//   matmul_nt     a: (m,k)        b: (n,k)          c: (m,n)   c = a * b^T
//   conv2d        x: (H,W,Ci)     w: (K,K,Ci,Co)    y: (H,W,Co), stride 1,
//                 zero padding `pad`, bias b: (Co) optional (nullptr).
//   conv2d_grad_input    dy: (H,W,Co) -> dx: (H,W,Ci)   (gather form)
//   conv2d_grad_weights  accumulates dw: (K,K,Ci,Co) and db: (Co)

bool parallel_enabled();
void set_parallel_enabled(bool on);
int thread_count();

namespace serial {
void matmul(const double* a, const double* b, double* c,
            std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_nt(const double* a, const double* b, double* c,
               std::int64_t m, std::int64_t k, std::int64_t n);
void conv2d(const double* x, const double* w, const double* bias, double* y,
            std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
            std::int64_t ksize, std::int64_t pad);
void conv2d_grad_input(const double* dy, const double* w, double* dx,
                       std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
                       std::int64_t ksize, std::int64_t pad);
void conv2d_grad_weights(const double* x, const double* dy, double* dw, double* db,
                         std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
                         std::int64_t ksize, std::int64_t pad);
}  // namespace serial

namespace parallel {
void matmul(const double* a, const double* b, double* c,
            std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_nt(const double* a, const double* b, double* c,
               std::int64_t m, std::int64_t k, std::int64_t n);
void conv2d(const double* x, const double* w, const double* bias, double* y,
            std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
            std::int64_t ksize, std::int64_t pad);
void conv2d_grad_input(const double* dy, const double* w, double* dx,
                       std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
                       std::int64_t ksize, std::int64_t pad);
void conv2d_grad_weights(const double* x, const double* dy, double* dw, double* db,
                         std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
                         std::int64_t ksize, std::int64_t pad);
}  // namespace parallel

void matmul(const double* a, const double* b, double* c,
            std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_nt(const double* a, const double* b, double* c,
               std::int64_t m, std::int64_t k, std::int64_t n);
void conv2d(const double* x, const double* w, const double* bias, double* y,
            std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
            std::int64_t ksize, std::int64_t pad);
void conv2d_grad_input(const double* dy, const double* w, double* dx,
                       std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
                       std::int64_t ksize, std::int64_t pad);
void conv2d_grad_weights(const double* x, const double* dy, double* dw, double* db,
                         std::int64_t h, std::int64_t wd, std::int64_t ci, std::int64_t co,
                         std::int64_t ksize, std::int64_t pad);

}  // namespace mdx::kernels
