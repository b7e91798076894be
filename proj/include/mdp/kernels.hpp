#pragma once
// Hot inner loops, HWC layout. Each kernel exists twice: a plain serial
// reference under mdp::ref and an OpenMP version under mdp::par. The graph
// executes the par versions; tests compare them element-wise against ref.
//
// Parallel loops run over independent output elements (gather form), so par
// results are bit-identical to ref.

#include <cstddef>

namespace mdp::detail {

// One output row of a 3x3 conv. x: [H,W,Cin], w: [3,3,Cin,Cout], b: [Cout],
// y: [Ho,Wo,Cout]. Zero padding 1, H and W divisible by stride.
inline void conv3x3_row(const double* x, const double* w, const double* b,
                        double* y, size_t H, size_t W, size_t Cin, size_t Cout,
                        size_t stride, size_t oi) {
    const size_t Wo = W / stride;
    for (size_t oj = 0; oj < Wo; ++oj) {
        double* out = y + (oi * Wo + oj) * Cout;
        for (size_t co = 0; co < Cout; ++co) out[co] = b[co];
        for (size_t di = 0; di < 3; ++di) {
            const long ii = static_cast<long>(oi * stride + di) - 1;
            if (ii < 0 || ii >= static_cast<long>(H)) continue;
            for (size_t dj = 0; dj < 3; ++dj) {
                const long jj = static_cast<long>(oj * stride + dj) - 1;
                if (jj < 0 || jj >= static_cast<long>(W)) continue;
                const double* xp = x + (ii * W + jj) * Cin;
                const double* wp = w + (di * 3 + dj) * Cin * Cout;
                for (size_t ci = 0; ci < Cin; ++ci) {
                    const double xv = xp[ci];
                    const double* wrow = wp + ci * Cout;
                    for (size_t co = 0; co < Cout; ++co)
                        out[co] += xv * wrow[co];
                }
            }
        }
    }
}

// Gradient w.r.t. one input row, gather form: dx(i,j,ci) sums over the
// output positions whose receptive field covers (i,j).
inline void conv3x3_dx_row(const double* dy, const double* w, double* dx,
                           size_t H, size_t W, size_t Cin, size_t Cout,
                           size_t stride, size_t i) {
    const size_t Ho = H / stride, Wo = W / stride;
    for (size_t j = 0; j < W; ++j) {
        double* dxp = dx + (i * W + j) * Cin;
        for (size_t ci = 0; ci < Cin; ++ci) dxp[ci] = 0.0;
        for (size_t di = 0; di < 3; ++di) {
            const long num_i = static_cast<long>(i) + 1 - static_cast<long>(di);
            if (num_i < 0 || num_i % static_cast<long>(stride)) continue;
            const long oi = num_i / static_cast<long>(stride);
            if (oi >= static_cast<long>(Ho)) continue;
            for (size_t dj = 0; dj < 3; ++dj) {
                const long num_j = static_cast<long>(j) + 1 - static_cast<long>(dj);
                if (num_j < 0 || num_j % static_cast<long>(stride)) continue;
                const long oj = num_j / static_cast<long>(stride);
                if (oj >= static_cast<long>(Wo)) continue;
                const double* dyp = dy + (oi * Wo + oj) * Cout;
                const double* wp = w + (di * 3 + dj) * Cin * Cout;
                for (size_t ci = 0; ci < Cin; ++ci) {
                    const double* wrow = wp + ci * Cout;
                    double acc = 0.0;
                    for (size_t co = 0; co < Cout; ++co)
                        acc += dyp[co] * wrow[co];
                    dxp[ci] += acc;
                }
            }
        }
    }
}

// Gradient w.r.t. one filter tap (di,dj): dw slice [Cin,Cout], gathered over
// all output pixels touching that tap. Taps are independent.
inline void conv3x3_dw_tap(const double* x, const double* dy, double* dw,
                           size_t H, size_t W, size_t Cin, size_t Cout,
                           size_t stride, size_t di, size_t dj) {
    const size_t Ho = H / stride, Wo = W / stride;
    double* dwp = dw + (di * 3 + dj) * Cin * Cout;
    for (size_t k = 0; k < Cin * Cout; ++k) dwp[k] = 0.0;
    for (size_t oi = 0; oi < Ho; ++oi) {
        const long ii = static_cast<long>(oi * stride + di) - 1;
        if (ii < 0 || ii >= static_cast<long>(H)) continue;
        for (size_t oj = 0; oj < Wo; ++oj) {
            const long jj = static_cast<long>(oj * stride + dj) - 1;
            if (jj < 0 || jj >= static_cast<long>(W)) continue;
            const double* xp = x + (ii * W + jj) * Cin;
            const double* dyp = dy + (oi * Wo + oj) * Cout;
            for (size_t ci = 0; ci < Cin; ++ci) {
                const double xv = xp[ci];
                double* dwrow = dwp + ci * Cout;
                for (size_t co = 0; co < Cout; ++co)
                    dwrow[co] += xv * dyp[co];
            }
        }
    }
}

inline void conv3x3_db(const double* dy, double* db, size_t P, size_t Cout) {
    for (size_t co = 0; co < Cout; ++co) db[co] = 0.0;
    for (size_t p = 0; p < P; ++p) {
        const double* dyp = dy + p * Cout;
        for (size_t co = 0; co < Cout; ++co) db[co] += dyp[co];
    }
}

inline void pointwise_row(const double* x, const double* w, const double* b,
                          double* y, size_t Cin, size_t Cout, size_t p) {
    const double* xp = x + p * Cin;
    double* yp = y + p * Cout;
    for (size_t co = 0; co < Cout; ++co) yp[co] = b[co];
    for (size_t ci = 0; ci < Cin; ++ci) {
        const double xv = xp[ci];
        const double* wrow = w + ci * Cout;
        for (size_t co = 0; co < Cout; ++co) yp[co] += xv * wrow[co];
    }
}

inline void pointwise_dx_row(const double* dy, const double* w, double* dx,
                             size_t Cin, size_t Cout, size_t p) {
    const double* dyp = dy + p * Cout;
    double* dxp = dx + p * Cin;
    for (size_t ci = 0; ci < Cin; ++ci) {
        const double* wrow = w + ci * Cout;
        double acc = 0.0;
        for (size_t co = 0; co < Cout; ++co) acc += dyp[co] * wrow[co];
        dxp[ci] = acc;
    }
}

} // namespace mdp::detail

namespace mdp::ref {

inline void conv3x3_forward(const double* x, const double* w, const double* b,
                            double* y, size_t H, size_t W, size_t Cin,
                            size_t Cout, size_t stride) {
    for (size_t oi = 0; oi < H / stride; ++oi)
        detail::conv3x3_row(x, w, b, y, H, W, Cin, Cout, stride, oi);
}

inline void conv3x3_backward_input(const double* dy, const double* w,
                                   double* dx, size_t H, size_t W, size_t Cin,
                                   size_t Cout, size_t stride) {
    for (size_t i = 0; i < H; ++i)
        detail::conv3x3_dx_row(dy, w, dx, H, W, Cin, Cout, stride, i);
}

inline void conv3x3_backward_params(const double* x, const double* dy,
                                    double* dw, double* db, size_t H, size_t W,
                                    size_t Cin, size_t Cout, size_t stride) {
    for (size_t t = 0; t < 9; ++t)
        detail::conv3x3_dw_tap(x, dy, dw, H, W, Cin, Cout, stride, t / 3, t % 3);
    detail::conv3x3_db(dy, db, (H / stride) * (W / stride), Cout);
}

// y(p,:) = x(p,:) * w + b over P pixels, w: [Cin,Cout].
inline void pointwise_forward(const double* x, const double* w, const double* b,
                              double* y, size_t P, size_t Cin, size_t Cout) {
    for (size_t p = 0; p < P; ++p)
        detail::pointwise_row(x, w, b, y, Cin, Cout, p);
}

inline void pointwise_backward_input(const double* dy, const double* w,
                                     double* dx, size_t P, size_t Cin,
                                     size_t Cout) {
    for (size_t p = 0; p < P; ++p)
        detail::pointwise_dx_row(dy, w, dx, Cin, Cout, p);
}

inline void pointwise_backward_params(const double* x, const double* dy,
                                      double* dw, double* db, size_t P,
                                      size_t Cin, size_t Cout) {
    for (size_t k = 0; k < Cin * Cout; ++k) dw[k] = 0.0;
    for (size_t co = 0; co < Cout; ++co) db[co] = 0.0;
    for (size_t p = 0; p < P; ++p) {
        const double* xp = x + p * Cin;
        const double* dyp = dy + p * Cout;
        for (size_t co = 0; co < Cout; ++co) db[co] += dyp[co];
        for (size_t ci = 0; ci < Cin; ++ci) {
            const double xv = xp[ci];
            double* dwrow = dw + ci * Cout;
            for (size_t co = 0; co < Cout; ++co) dwrow[co] += xv * dyp[co];
        }
    }
}

} // namespace mdp::ref

namespace mdp::par {

inline void conv3x3_forward(const double* x, const double* w, const double* b,
                            double* y, size_t H, size_t W, size_t Cin,
                            size_t Cout, size_t stride) {
    const long Ho = static_cast<long>(H / stride);
#pragma omp parallel for schedule(static)
    for (long oi = 0; oi < Ho; ++oi)
        detail::conv3x3_row(x, w, b, y, H, W, Cin, Cout, stride,
                            static_cast<size_t>(oi));
}

inline void conv3x3_backward_input(const double* dy, const double* w,
                                   double* dx, size_t H, size_t W, size_t Cin,
                                   size_t Cout, size_t stride) {
    const long Hl = static_cast<long>(H);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < Hl; ++i)
        detail::conv3x3_dx_row(dy, w, dx, H, W, Cin, Cout, stride,
                               static_cast<size_t>(i));
}

inline void conv3x3_backward_params(const double* x, const double* dy,
                                    double* dw, double* db, size_t H, size_t W,
                                    size_t Cin, size_t Cout, size_t stride) {
#pragma omp parallel for schedule(static)
    for (long t = 0; t < 9; ++t)
        detail::conv3x3_dw_tap(x, dy, dw, H, W, Cin, Cout, stride,
                               static_cast<size_t>(t) / 3,
                               static_cast<size_t>(t) % 3);
    detail::conv3x3_db(dy, db, (H / stride) * (W / stride), Cout);
}

inline void pointwise_forward(const double* x, const double* w, const double* b,
                              double* y, size_t P, size_t Cin, size_t Cout) {
    const long Pl = static_cast<long>(P);
#pragma omp parallel for schedule(static)
    for (long p = 0; p < Pl; ++p)
        detail::pointwise_row(x, w, b, y, Cin, Cout, static_cast<size_t>(p));
}

inline void pointwise_backward_input(const double* dy, const double* w,
                                     double* dx, size_t P, size_t Cin,
                                     size_t Cout) {
    const long Pl = static_cast<long>(P);
#pragma omp parallel for schedule(static)
    for (long p = 0; p < Pl; ++p)
        detail::pointwise_dx_row(dy, w, dx, Cin, Cout, static_cast<size_t>(p));
}

// Weight reduction over pixels has no cheap deterministic parallel split by
// output element, so the params pass stays serial.
inline void pointwise_backward_params(const double* x, const double* dy,
                                      double* dw, double* db, size_t P,
                                      size_t Cin, size_t Cout) {
    ref::pointwise_backward_params(x, dy, dw, db, P, Cin, Cout);
}

} // namespace mdp::par
