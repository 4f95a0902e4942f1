#include "mmnas/nn.hpp"

#include <algorithm>
#include <cmath>
#include <array>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace mmnas {

namespace {

using detail::grad_buffer;
using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

void check_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                " tensor, got shape " + shape_str(t.shape()));
  }
}

struct ConvDims {
  std::int64_t batch, cin, cout, cin_g, cout_g, groups;
  std::int64_t in[3], k[3], out[3];
  std::int64_t stride, pad, dil;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Conv3dSpec& sp) {
  check_rank("conv3d", x, 5);
  check_rank("conv3d", w, 5);
  ConvDims d{};
  d.batch = static_cast<std::int64_t>(x.dim(0));
  d.cin = static_cast<std::int64_t>(x.dim(1));
  d.cout = static_cast<std::int64_t>(w.dim(0));
  d.groups = static_cast<std::int64_t>(sp.groups);
  d.stride = static_cast<std::int64_t>(sp.stride);
  d.pad = static_cast<std::int64_t>(sp.pad);
  d.dil = static_cast<std::int64_t>(sp.dilation);
  if (d.groups < 1 || d.cin % d.groups != 0 || d.cout % d.groups != 0) {
    throw std::invalid_argument("conv3d: groups " + std::to_string(d.groups) +
                                " incompatible with channels " + std::to_string(d.cin) + "->" +
                                std::to_string(d.cout));
  }
  d.cin_g = d.cin / d.groups;
  d.cout_g = d.cout / d.groups;
  if (static_cast<std::int64_t>(w.dim(1)) != d.cin_g) {
    throw std::invalid_argument("conv3d: weight shape " + shape_str(w.shape()) +
                                " does not match input channels " + std::to_string(d.cin) +
                                " with groups " + std::to_string(d.groups));
  }
  if (d.stride < 1 || d.dil < 1) throw std::invalid_argument("conv3d: stride/dilation must be >= 1");
  for (int a = 0; a < 3; ++a) {
    d.in[a] = static_cast<std::int64_t>(x.dim(2 + a));
    d.k[a] = static_cast<std::int64_t>(w.dim(2 + a));
    std::int64_t span = d.in[a] + 2 * d.pad - d.dil * (d.k[a] - 1) - 1;
    if (span < 0) {
      throw std::invalid_argument("conv3d: kernel does not fit input shape " + shape_str(x.shape()));
    }
    d.out[a] = span / d.stride + 1;
  }
  return d;
}

/// Row length limit for the on-stack accumulator of the fast path.
constexpr std::int64_t kMaxRow = 512;

/// True when output dims equal input dims with stride 1; the row-centric
/// kernels below handle only this (dominant) case.
bool same_shape_conv(const ConvDims& d) {
  return d.stride == 1 && d.out[0] == d.in[0] && d.out[1] == d.in[1] && d.out[2] == d.in[2] &&
         d.in[2] <= kMaxRow;
}

// --- fast path: stride 1, output shape == input shape -----------------------
// Each output (or input-gradient) row is produced in one pass with the
// accumulator held on the stack, so kernel taps never re-read or re-write
// partial sums through memory.

void conv3d_same_forward(const ConvDims& d, const double* xd, const double* wd, double* od) {
  const std::int64_t D = d.in[0], H = d.in[1], W = d.in[2];
  const std::int64_t plane = D * H * W;
  const std::int64_t ksz = d.k[0] * d.k[1] * d.k[2];
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t g = 0; g < d.groups; ++g) {
      for (std::int64_t co = g * d.cout_g; co < (g + 1) * d.cout_g; ++co) {
        double* outp = od + (b * d.cout + co) * plane;
        for (std::int64_t oz = 0; oz < D; ++oz) {
          for (std::int64_t oy = 0; oy < H; ++oy) {
            double acc[kMaxRow];
            for (std::int64_t i = 0; i < W; ++i) acc[i] = 0.0;
            for (std::int64_t cl = 0; cl < d.cin_g; ++cl) {
              const double* xp = xd + (b * d.cin + g * d.cin_g + cl) * plane;
              const double* wk = wd + (co * d.cin_g + cl) * ksz;
              for (std::int64_t kz = 0; kz < d.k[0]; ++kz) {
                const std::int64_t iz = oz + kz * d.dil - d.pad;
                if (iz < 0 || iz >= D) continue;
                for (std::int64_t ky = 0; ky < d.k[1]; ++ky) {
                  const std::int64_t iy = oy + ky * d.dil - d.pad;
                  if (iy < 0 || iy >= H) continue;
                  const double* __restrict xrow = xp + (iz * H + iy) * W;
                  const double* wrow = wk + (kz * d.k[1] + ky) * d.k[2];
                  for (std::int64_t kx = 0; kx < d.k[2]; ++kx) {
                    const double wv = wrow[kx];
                    const std::int64_t shift = kx * d.dil - d.pad;
                    const std::int64_t x0 = shift < 0 ? -shift : 0;
                    const std::int64_t x1 = shift > 0 ? W - shift : W;
                    double* __restrict arow = acc + x0;
                    const double* __restrict xs = xrow + x0 + shift;
                    const std::int64_t n = x1 - x0;
                    for (std::int64_t i = 0; i < n; ++i) arow[i] += wv * xs[i];
                  }
                }
              }
            }
            double* orow = outp + (oz * H + oy) * W;
            for (std::int64_t i = 0; i < W; ++i) orow[i] += acc[i];
          }
        }
      }
    }
  }
}

void conv3d_same_backward(const ConvDims& d, const double* xd, const double* wd, const double* og,
                          double* xg, double* wg) {
  const std::int64_t D = d.in[0], H = d.in[1], W = d.in[2];
  const std::int64_t plane = D * H * W;
  const std::int64_t ksz = d.k[0] * d.k[1] * d.k[2];
  if (xg != nullptr) {
    for (std::int64_t b = 0; b < d.batch; ++b) {
      for (std::int64_t g = 0; g < d.groups; ++g) {
        for (std::int64_t cl = 0; cl < d.cin_g; ++cl) {
          double* xgp = xg + (b * d.cin + g * d.cin_g + cl) * plane;
          for (std::int64_t iz = 0; iz < D; ++iz) {
            for (std::int64_t iy = 0; iy < H; ++iy) {
              double acc[kMaxRow];
              for (std::int64_t i = 0; i < W; ++i) acc[i] = 0.0;
              for (std::int64_t co = g * d.cout_g; co < (g + 1) * d.cout_g; ++co) {
                const double* gp = og + (b * d.cout + co) * plane;
                const double* wk = wd + (co * d.cin_g + cl) * ksz;
                for (std::int64_t kz = 0; kz < d.k[0]; ++kz) {
                  const std::int64_t oz = iz + d.pad - kz * d.dil;
                  if (oz < 0 || oz >= D) continue;
                  for (std::int64_t ky = 0; ky < d.k[1]; ++ky) {
                    const std::int64_t oy = iy + d.pad - ky * d.dil;
                    if (oy < 0 || oy >= H) continue;
                    const double* __restrict grow = gp + (oz * H + oy) * W;
                    const double* wrow = wk + (kz * d.k[1] + ky) * d.k[2];
                    for (std::int64_t kx = 0; kx < d.k[2]; ++kx) {
                      const double wv = wrow[kx];
                      const std::int64_t shift = kx * d.dil - d.pad;
                      // ox = ix - shift must lie in [0, W)
                      const std::int64_t x0 = shift > 0 ? shift : 0;
                      const std::int64_t x1 = shift < 0 ? W + shift : W;
                      double* __restrict arow = acc + x0;
                      const double* __restrict gs = grow + x0 - shift;
                      const std::int64_t n = x1 - x0;
                      for (std::int64_t i = 0; i < n; ++i) arow[i] += wv * gs[i];
                    }
                  }
                }
              }
              double* xrow = xgp + (iz * H + iy) * W;
              for (std::int64_t i = 0; i < W; ++i) xrow[i] += acc[i];
            }
          }
        }
      }
    }
  }
  if (wg != nullptr) {
    for (std::int64_t b = 0; b < d.batch; ++b) {
      for (std::int64_t g = 0; g < d.groups; ++g) {
        for (std::int64_t co = g * d.cout_g; co < (g + 1) * d.cout_g; ++co) {
          const double* gp = og + (b * d.cout + co) * plane;
          for (std::int64_t cl = 0; cl < d.cin_g; ++cl) {
            const double* xp = xd + (b * d.cin + g * d.cin_g + cl) * plane;
            double* wk = wg + (co * d.cin_g + cl) * ksz;
            for (std::int64_t kz = 0; kz < d.k[0]; ++kz) {
              for (std::int64_t ky = 0; ky < d.k[1]; ++ky) {
                double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
                for (std::int64_t oz = 0; oz < D; ++oz) {
                  const std::int64_t iz = oz + kz * d.dil - d.pad;
                  if (iz < 0 || iz >= D) continue;
                  for (std::int64_t oy = 0; oy < H; ++oy) {
                    const std::int64_t iy = oy + ky * d.dil - d.pad;
                    if (iy < 0 || iy >= H) continue;
                    const double* grow = gp + (oz * H + oy) * W;
                    const double* xrow = xp + (iz * H + iy) * W;
                    for (std::int64_t kx = 0; kx < d.k[2]; ++kx) {
                      const std::int64_t shift = kx * d.dil - d.pad;
                      const std::int64_t x0 = shift < 0 ? -shift : 0;
                      const std::int64_t x1 = shift > 0 ? W - shift : W;
                      const double* __restrict gr = grow + x0;
                      const double* __restrict xs = xrow + x0 + shift;
                      const std::int64_t n = x1 - x0;
                      double dot = 0.0;
                      for (std::int64_t i = 0; i < n; ++i) dot += gr[i] * xs[i];
                      acc[kx] += dot;
                    }
                  }
                }
                for (std::int64_t kx = 0; kx < d.k[2]; ++kx) {
                  wk[(kz * d.k[1] + ky) * d.k[2] + kx] += acc[kx];
                }
              }
            }
          }
        }
      }
    }
  }
}

// --- general path (strided / shape-changing convs) ---------------------------

/// Valid output range [o0, o1] for one kernel tap: 0 <= o*stride - pad + off < size.
inline void tap_range(std::int64_t size, std::int64_t out_size, std::int64_t stride,
                      std::int64_t pad, std::int64_t off, std::int64_t& o0, std::int64_t& o1) {
  std::int64_t lo = pad - off;
  o0 = lo <= 0 ? 0 : (lo + stride - 1) / stride;
  std::int64_t hi = size - 1 + pad - off;
  o1 = hi < 0 ? -1 : std::min(out_size - 1, hi / stride);
}

void conv3d_forward_kernel(const ConvDims& d, const double* xd, const double* wd, double* od) {
  if (same_shape_conv(d)) {
    conv3d_same_forward(d, xd, wd, od);
    return;
  }
  const std::int64_t D = d.in[0], H = d.in[1], W = d.in[2];
  const std::int64_t OD = d.out[0], OH = d.out[1], OW = d.out[2];
  const std::int64_t in_plane = D * H * W, out_plane = OD * OH * OW;
  const std::int64_t ksz = d.k[0] * d.k[1] * d.k[2];
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t g = 0; g < d.groups; ++g) {
      for (std::int64_t co = g * d.cout_g; co < (g + 1) * d.cout_g; ++co) {
        double* outp = od + (b * d.cout + co) * out_plane;
        for (std::int64_t cl = 0; cl < d.cin_g; ++cl) {
          const double* xp = xd + (b * d.cin + g * d.cin_g + cl) * in_plane;
          const double* wk = wd + (co * d.cin_g + cl) * ksz;
          for (std::int64_t kz = 0; kz < d.k[0]; ++kz) {
            std::int64_t z0, z1;
            tap_range(D, OD, d.stride, d.pad, kz * d.dil, z0, z1);
            for (std::int64_t ky = 0; ky < d.k[1]; ++ky) {
              std::int64_t y0, y1;
              tap_range(H, OH, d.stride, d.pad, ky * d.dil, y0, y1);
              for (std::int64_t kx = 0; kx < d.k[2]; ++kx) {
                const double wv = wk[(kz * d.k[1] + ky) * d.k[2] + kx];
                std::int64_t x0, x1;
                tap_range(W, OW, d.stride, d.pad, kx * d.dil, x0, x1);
                if (x1 < x0) continue;
                for (std::int64_t oz = z0; oz <= z1; ++oz) {
                  const std::int64_t iz = oz * d.stride - d.pad + kz * d.dil;
                  for (std::int64_t oy = y0; oy <= y1; ++oy) {
                    const std::int64_t iy = oy * d.stride - d.pad + ky * d.dil;
                    const double* xrow = xp + (iz * H + iy) * W;
                    double* orow = outp + (oz * OH + oy) * OW;
                    for (std::int64_t ox = x0; ox <= x1; ++ox) {
                      orow[ox] += wv * xrow[ox * d.stride - d.pad + kx * d.dil];
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

void conv3d_backward_kernel(const ConvDims& d, const double* xd, const double* wd,
                            const double* og, double* xg, double* wg) {
  if (same_shape_conv(d)) {
    conv3d_same_backward(d, xd, wd, og, xg, wg);
    return;
  }
  const std::int64_t D = d.in[0], H = d.in[1], W = d.in[2];
  const std::int64_t OD = d.out[0], OH = d.out[1], OW = d.out[2];
  const std::int64_t in_plane = D * H * W, out_plane = OD * OH * OW;
  const std::int64_t ksz = d.k[0] * d.k[1] * d.k[2];
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t g = 0; g < d.groups; ++g) {
      for (std::int64_t co = g * d.cout_g; co < (g + 1) * d.cout_g; ++co) {
        const double* gp = og + (b * d.cout + co) * out_plane;
        for (std::int64_t cl = 0; cl < d.cin_g; ++cl) {
          const double* xp = xd + (b * d.cin + g * d.cin_g + cl) * in_plane;
          double* xgp = xg == nullptr ? nullptr : xg + (b * d.cin + g * d.cin_g + cl) * in_plane;
          const double* wk = wd + (co * d.cin_g + cl) * ksz;
          double* wgk = wg == nullptr ? nullptr : wg + (co * d.cin_g + cl) * ksz;
          for (std::int64_t kz = 0; kz < d.k[0]; ++kz) {
            std::int64_t z0, z1;
            tap_range(D, OD, d.stride, d.pad, kz * d.dil, z0, z1);
            for (std::int64_t ky = 0; ky < d.k[1]; ++ky) {
              std::int64_t y0, y1;
              tap_range(H, OH, d.stride, d.pad, ky * d.dil, y0, y1);
              for (std::int64_t kx = 0; kx < d.k[2]; ++kx) {
                std::int64_t x0, x1;
                tap_range(W, OW, d.stride, d.pad, kx * d.dil, x0, x1);
                if (x1 < x0) continue;
                const double wv = wk[(kz * d.k[1] + ky) * d.k[2] + kx];
                double acc = 0.0;
                for (std::int64_t oz = z0; oz <= z1; ++oz) {
                  const std::int64_t iz = oz * d.stride - d.pad + kz * d.dil;
                  for (std::int64_t oy = y0; oy <= y1; ++oy) {
                    const std::int64_t iy = oy * d.stride - d.pad + ky * d.dil;
                    const std::int64_t row = (iz * H + iy) * W - d.pad + kx * d.dil;
                    const double* grow = gp + (oz * OH + oy) * OW;
                    if (xgp != nullptr) {
                      for (std::int64_t ox = x0; ox <= x1; ++ox) {
                        xgp[row + ox * d.stride] += wv * grow[ox];
                      }
                    }
                    if (wgk != nullptr) {
                      for (std::int64_t ox = x0; ox <= x1; ++ox) {
                        acc += xp[row + ox * d.stride] * grow[ox];
                      }
                    }
                  }
                }
                if (wgk != nullptr) wgk[(kz * d.k[1] + ky) * d.k[2] + kx] += acc;
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& weight, const Conv3dSpec& spec) {
  const ConvDims d = conv_dims(x, weight, spec);
  const bool rg = x.requires_grad() || weight.requires_grad();
  Tensor out = Tensor::zeros({static_cast<std::size_t>(d.batch), static_cast<std::size_t>(d.cout),
                              static_cast<std::size_t>(d.out[0]), static_cast<std::size_t>(d.out[1]),
                              static_cast<std::size_t>(d.out[2])},
                             rg);
  conv3d_forward_kernel(d, x.values().data(), weight.values().data(), out.values().data());
  if (rg && Tape::active()) {
    auto xn = x.node();
    auto wn = weight.node();
    auto on = out.node();
    Tape::active()->record([d, xn, wn, on] {
      const double* og = grad_buffer(*on).data();
      double* xg = xn->requires_grad ? grad_buffer(*xn).data() : nullptr;
      double* wg = wn->requires_grad ? grad_buffer(*wn).data() : nullptr;
      conv3d_backward_kernel(d, xn->data.data(), wn->data.data(), og, xg, wg);
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check_rank("linear", x, 2);
  check_rank("linear", weight, 2);
  check_rank("linear", bias, 1);
  const std::size_t batch = x.dim(0), in = x.dim(1);
  const std::size_t out_f = weight.dim(0);
  if (weight.dim(1) != in || bias.dim(0) != out_f) {
    throw std::invalid_argument("linear: dimension mismatch x" + shape_str(x.shape()) + " weight" +
                                shape_str(weight.shape()) + " bias" + shape_str(bias.shape()));
  }
  const bool rg = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
  Tensor out = Tensor::zeros({batch, out_f}, rg);
  const double* xd = x.values().data();
  const double* wd = weight.values().data();
  const double* bd = bias.values().data();
  double* od = out.values().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out_f; ++o) {
      double acc = bd[o];
      const double* xr = xd + b * in;
      const double* wr = wd + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      od[b * out_f + o] = acc;
    }
  }
  if (rg && Tape::active()) {
    auto xn = x.node(), wn = weight.node(), bn = bias.node(), on = out.node();
    Tape::active()->record([xn, wn, bn, on, batch, in, out_f] {
      const double* g = grad_buffer(*on).data();
      if (xn->requires_grad) {
        double* xg = grad_buffer(*xn).data();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t o = 0; o < out_f; ++o) {
            const double gv = g[b * out_f + o];
            const double* wr = wn->data.data() + o * in;
            double* xr = xg + b * in;
            for (std::size_t i = 0; i < in; ++i) xr[i] += gv * wr[i];
          }
        }
      }
      if (wn->requires_grad) {
        double* wg = grad_buffer(*wn).data();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t o = 0; o < out_f; ++o) {
            const double gv = g[b * out_f + o];
            const double* xr = xn->data.data() + b * in;
            double* wr = wg + o * in;
            for (std::size_t i = 0; i < in; ++i) wr[i] += gv * xr[i];
          }
        }
      }
      if (bn->requires_grad) {
        double* bg = grad_buffer(*bn).data();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t o = 0; o < out_f; ++o) bg[o] += g[b * out_f + o];
        }
      }
    });
  }
  return out;
}

Tensor normalize3d(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_rank("normalize3d", x, 5);
  check_rank("normalize3d", gamma, 1);
  check_rank("normalize3d", beta, 1);
  const std::size_t batch = x.dim(0), ch = x.dim(1);
  const std::size_t spatial = x.dim(2) * x.dim(3) * x.dim(4);
  if (batch < 1 || spatial == 0) throw std::invalid_argument("normalize3d: zero spatial extent");
  if (gamma.dim(0) != ch || beta.dim(0) != ch) {
    throw std::invalid_argument("normalize3d: affine shape " + shape_str(gamma.shape()) +
                                " does not match channels " + std::to_string(ch));
  }
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  Tensor out = Tensor::zeros(x.shape(), rg);
  const std::size_t n = batch * spatial;
  const double* xd = x.values().data();
  double* od = out.values().data();
  const double* gm = gamma.values().data();
  const double* bt = beta.values().data();
  std::vector<double> mean(ch, 0.0), inv_std(ch, 0.0);
  for (std::size_t c = 0; c < ch; ++c) {
    double m = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xp = xd + (b * ch + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) m += xp[i];
    }
    m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xp = xd + (b * ch + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double dv = xp[i] - m;
        var += dv * dv;
      }
    }
    var /= static_cast<double>(n);
    mean[c] = m;
    inv_std[c] = 1.0 / std::sqrt(var + eps);
    const double a = gm[c] * inv_std[c];
    const double shift = bt[c] - a * m;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xp = xd + (b * ch + c) * spatial;
      double* op = od + (b * ch + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) op[i] = a * xp[i] + shift;
    }
  }
  if (rg && Tape::active()) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    Tape::active()->record([xn, gn, bn, on, batch, ch, spatial, n, mean, inv_std] {
      const double* g = grad_buffer(*on).data();
      const double* xd2 = xn->data.data();
      for (std::size_t c = 0; c < ch; ++c) {
        const double m = mean[c], is = inv_std[c];
        double sum_g = 0.0, sum_gx = 0.0;  // sum of dy and of dy * xhat
        for (std::size_t b = 0; b < batch; ++b) {
          const double* gp = g + (b * ch + c) * spatial;
          const double* xp = xd2 + (b * ch + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            sum_g += gp[i];
            sum_gx += gp[i] * (xp[i] - m) * is;
          }
        }
        if (bn->requires_grad) grad_buffer(*bn)[c] += sum_g;
        if (gn->requires_grad) grad_buffer(*gn)[c] += sum_gx;
        if (xn->requires_grad) {
          double* xg = grad_buffer(*xn).data();
          const double gv = gn->data[c];
          const double k = gv * is / static_cast<double>(n);
          for (std::size_t b = 0; b < batch; ++b) {
            const double* gp = g + (b * ch + c) * spatial;
            const double* xp = xd2 + (b * ch + c) * spatial;
            double* xgp = xg + (b * ch + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              const double xhat = (xp[i] - m) * is;
              xgp[i] += k * (static_cast<double>(n) * gp[i] - sum_g - xhat * sum_gx);
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor pool3d(PoolMode mode, const Tensor& x, std::size_t kernel, std::size_t stride,
              std::size_t pad) {
  check_rank("pool3d", x, 5);
  const std::int64_t B = static_cast<std::int64_t>(x.dim(0));
  const std::int64_t C = static_cast<std::int64_t>(x.dim(1));
  const std::int64_t k = static_cast<std::int64_t>(kernel);
  const std::int64_t s = static_cast<std::int64_t>(stride);
  const std::int64_t p = static_cast<std::int64_t>(pad);
  std::int64_t in[3], out[3];
  for (int a = 0; a < 3; ++a) {
    in[a] = static_cast<std::int64_t>(x.dim(2 + a));
    std::int64_t span = in[a] + 2 * p - k;
    if (span < 0) throw std::invalid_argument("pool3d: kernel larger than padded input");
    out[a] = span / s + 1;
  }
  const bool rg = x.requires_grad();
  Tensor outt = Tensor::zeros({static_cast<std::size_t>(B), static_cast<std::size_t>(C),
                               static_cast<std::size_t>(out[0]), static_cast<std::size_t>(out[1]),
                               static_cast<std::size_t>(out[2])},
                              rg);
  const double* xd = x.values().data();
  double* od = outt.values().data();
  const std::int64_t in_plane = in[0] * in[1] * in[2];
  const std::int64_t out_plane = out[0] * out[1] * out[2];
  // max pooling records the winning input index per output voxel
  std::vector<std::int64_t> argmax;
  if (mode == PoolMode::max) argmax.assign(static_cast<std::size_t>(B * C * out_plane), -1);
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* xp = xd + bc * in_plane;
    double* op = od + bc * out_plane;
    for (std::int64_t oz = 0; oz < out[0]; ++oz) {
      const std::int64_t z0 = std::max<std::int64_t>(0, oz * s - p);
      const std::int64_t z1 = std::min(in[0] - 1, oz * s - p + k - 1);
      for (std::int64_t oy = 0; oy < out[1]; ++oy) {
        const std::int64_t y0 = std::max<std::int64_t>(0, oy * s - p);
        const std::int64_t y1 = std::min(in[1] - 1, oy * s - p + k - 1);
        for (std::int64_t ox = 0; ox < out[2]; ++ox) {
          const std::int64_t x0 = std::max<std::int64_t>(0, ox * s - p);
          const std::int64_t x1 = std::min(in[2] - 1, ox * s - p + k - 1);
          const std::int64_t oidx = (oz * out[1] + oy) * out[2] + ox;
          if (mode == PoolMode::max) {
            double best = -std::numeric_limits<double>::infinity();
            std::int64_t besti = -1;
            for (std::int64_t iz = z0; iz <= z1; ++iz) {
              for (std::int64_t iy = y0; iy <= y1; ++iy) {
                const double* xrow = xp + (iz * in[1] + iy) * in[2];
                for (std::int64_t ix = x0; ix <= x1; ++ix) {
                  if (xrow[ix] > best) {
                    best = xrow[ix];
                    besti = (iz * in[1] + iy) * in[2] + ix;
                  }
                }
              }
            }
            op[oidx] = best;
            argmax[static_cast<std::size_t>(bc * out_plane + oidx)] = besti;
          } else {
            double acc = 0.0;
            for (std::int64_t iz = z0; iz <= z1; ++iz) {
              for (std::int64_t iy = y0; iy <= y1; ++iy) {
                const double* xrow = xp + (iz * in[1] + iy) * in[2];
                for (std::int64_t ix = x0; ix <= x1; ++ix) acc += xrow[ix];
              }
            }
            const std::int64_t count = (z1 - z0 + 1) * (y1 - y0 + 1) * (x1 - x0 + 1);
            op[oidx] = acc / static_cast<double>(count);
          }
        }
      }
    }
  }
  if (rg && Tape::active()) {
    auto xn = x.node(), on = outt.node();
    std::array<std::int64_t, 3> inz{in[0], in[1], in[2]}, outz{out[0], out[1], out[2]};
    Tape::active()->record([xn, on, mode, argmax = std::move(argmax), B, C, k, s, p, inz, outz] {
      const double* g = grad_buffer(*on).data();
      double* xg = grad_buffer(*xn).data();
      const std::int64_t in_plane2 = inz[0] * inz[1] * inz[2];
      const std::int64_t out_plane2 = outz[0] * outz[1] * outz[2];
      for (std::int64_t bc = 0; bc < B * C; ++bc) {
        const double* gp = g + bc * out_plane2;
        double* xgp = xg + bc * in_plane2;
        if (mode == PoolMode::max) {
          const std::int64_t* am = argmax.data() + bc * out_plane2;
          for (std::int64_t o = 0; o < out_plane2; ++o) xgp[am[o]] += gp[o];
        } else {
          for (std::int64_t oz = 0; oz < outz[0]; ++oz) {
            const std::int64_t z0 = std::max<std::int64_t>(0, oz * s - p);
            const std::int64_t z1 = std::min(inz[0] - 1, oz * s - p + k - 1);
            for (std::int64_t oy = 0; oy < outz[1]; ++oy) {
              const std::int64_t y0 = std::max<std::int64_t>(0, oy * s - p);
              const std::int64_t y1 = std::min(inz[1] - 1, oy * s - p + k - 1);
              for (std::int64_t ox = 0; ox < outz[2]; ++ox) {
                const std::int64_t x0 = std::max<std::int64_t>(0, ox * s - p);
                const std::int64_t x1 = std::min(inz[2] - 1, ox * s - p + k - 1);
                const std::int64_t count = (z1 - z0 + 1) * (y1 - y0 + 1) * (x1 - x0 + 1);
                const double gv = gp[(oz * outz[1] + oy) * outz[2] + ox] / static_cast<double>(count);
                for (std::int64_t iz = z0; iz <= z1; ++iz) {
                  for (std::int64_t iy = y0; iy <= y1; ++iy) {
                    double* xrow = xgp + (iz * inz[1] + iy) * inz[2];
                    for (std::int64_t ix = x0; ix <= x1; ++ix) xrow[ix] += gv;
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return outt;
}

Tensor global_avg_pool(const Tensor& x) {
  check_rank("global_avg_pool", x, 5);
  const std::size_t batch = x.dim(0), ch = x.dim(1);
  const std::size_t spatial = x.dim(2) * x.dim(3) * x.dim(4);
  Tensor out = Tensor::zeros({batch, ch}, x.requires_grad());
  const double* xd = x.values().data();
  double* od = out.values().data();
  for (std::size_t bc = 0; bc < batch * ch; ++bc) {
    double acc = 0.0;
    const double* xp = xd + bc * spatial;
    for (std::size_t i = 0; i < spatial; ++i) acc += xp[i];
    od[bc] = acc / static_cast<double>(spatial);
  }
  if (x.requires_grad() && Tape::active()) {
    auto xn = x.node(), on = out.node();
    Tape::active()->record([xn, on, batch, ch, spatial] {
      const double* g = grad_buffer(*on).data();
      double* xg = grad_buffer(*xn).data();
      const double inv = 1.0 / static_cast<double>(spatial);
      for (std::size_t bc = 0; bc < batch * ch; ++bc) {
        const double gv = g[bc] * inv;
        double* xp = xg + bc * spatial;
        for (std::size_t i = 0; i < spatial; ++i) xp[i] += gv;
      }
    });
  }
  return out;
}

Tensor concat_channels(std::span<const Tensor> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input");
  check_rank("concat_channels", xs[0], 5);
  const std::size_t batch = xs[0].dim(0);
  const std::size_t spatial = xs[0].dim(2) * xs[0].dim(3) * xs[0].dim(4);
  std::size_t total_ch = 0;
  bool rg = false;
  for (const Tensor& t : xs) {
    check_rank("concat_channels", t, 5);
    if (t.dim(0) != batch || t.dim(2) != xs[0].dim(2) || t.dim(3) != xs[0].dim(3) ||
        t.dim(4) != xs[0].dim(4)) {
      throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(xs[0].shape()) +
                                  " vs " + shape_str(t.shape()));
    }
    total_ch += t.dim(1);
    rg = rg || t.requires_grad();
  }
  Tensor out = Tensor::zeros({batch, total_ch, xs[0].dim(2), xs[0].dim(3), xs[0].dim(4)}, rg);
  double* od = out.values().data();
  std::size_t ch_off = 0;
  for (const Tensor& t : xs) {
    const std::size_t tc = t.dim(1);
    const double* td = t.values().data();
    for (std::size_t b = 0; b < batch; ++b) {
      double* dst = od + (b * total_ch + ch_off) * spatial;
      const double* src = td + b * tc * spatial;
      std::copy(src, src + tc * spatial, dst);
    }
    ch_off += tc;
  }
  if (rg && Tape::active()) {
    std::vector<NodePtr> ins;
    ins.reserve(xs.size());
    for (const Tensor& t : xs) ins.push_back(t.node());
    auto on = out.node();
    Tape::active()->record([ins, on, batch, total_ch, spatial] {
      const double* g = grad_buffer(*on).data();
      std::size_t off = 0;
      for (const auto& in : ins) {
        const std::size_t tc = in->shape[1];
        if (in->requires_grad) {
          double* tg = grad_buffer(*in).data();
          for (std::size_t b = 0; b < batch; ++b) {
            const double* src = g + (b * total_ch + off) * spatial;
            double* dst = tg + b * tc * spatial;
            for (std::size_t i = 0; i < tc * spatial; ++i) dst[i] += src[i];
          }
        }
        off += tc;
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_rank("softmax_cross_entropy", logits, 2);
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch " + std::to_string(batch));
  }
  for (int lb : labels) {
    if (lb < 0 || static_cast<std::size_t>(lb) >= classes) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(lb) +
                                  " out of range [0, " + std::to_string(classes) + ")");
    }
  }
  Tensor out = Tensor::zeros({1}, logits.requires_grad());
  const double* ld = logits.values().data();
  std::vector<double> probs(batch * classes);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = ld + b * classes;
    double mx = row[0];
    for (std::size_t k = 1; k < classes; ++k) mx = std::max(mx, row[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < classes; ++k) sum += std::exp(row[k] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t k = 0; k < classes; ++k) probs[b * classes + k] = std::exp(row[k] - lse);
    loss += lse - row[labels[b]];
  }
  out.values()[0] = loss / static_cast<double>(batch);
  if (logits.requires_grad() && Tape::active()) {
    auto ln = logits.node(), on = out.node();
    std::vector<int> labels_copy(labels.begin(), labels.end());
    Tape::active()->record([ln, on, probs = std::move(probs), labels_copy, batch, classes] {
      const double g = grad_buffer(*on)[0] / static_cast<double>(batch);
      double* lg = grad_buffer(*ln).data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t k = 0; k < classes; ++k) {
          const double onehot = (static_cast<std::size_t>(labels_copy[b]) == k) ? 1.0 : 0.0;
          lg[b * classes + k] += g * (probs[b * classes + k] - onehot);
        }
      }
    });
  }
  return out;
}

Tensor softmax_vector(const Tensor& logits) {
  check_rank("softmax_vector", logits, 1);
  const std::size_t n = logits.dim(0);
  Tensor out = Tensor::zeros({n}, logits.requires_grad());
  const double* ld = logits.values().data();
  double* od = out.values().data();
  double mx = ld[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, ld[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    od[i] = std::exp(ld[i] - mx);
    sum += od[i];
  }
  for (std::size_t i = 0; i < n; ++i) od[i] /= sum;
  if (logits.requires_grad() && Tape::active()) {
    auto ln = logits.node(), on = out.node();
    Tape::active()->record([ln, on, n] {
      const double* g = grad_buffer(*on).data();
      const double* y = on->data.data();
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
      double* lg = grad_buffer(*ln).data();
      for (std::size_t i = 0; i < n; ++i) lg[i] += y[i] * (g[i] - dot);
    });
  }
  return out;
}

Tensor weighted_sum(const Tensor& weights, std::span<const Tensor> items) {
  check_rank("weighted_sum", weights, 1);
  if (items.empty()) throw std::invalid_argument("weighted_sum: empty item list");
  if (weights.dim(0) != items.size()) {
    throw std::invalid_argument("weighted_sum: " + std::to_string(weights.dim(0)) +
                                " weights for " + std::to_string(items.size()) + " items");
  }
  bool rg = weights.requires_grad();
  for (const Tensor& t : items) {
    if (t.shape() != items[0].shape()) {
      throw std::invalid_argument("weighted_sum: item shape mismatch " + shape_str(items[0].shape()) +
                                  " vs " + shape_str(t.shape()));
    }
    rg = rg || t.requires_grad();
  }
  Tensor out = Tensor::zeros(items[0].shape(), rg);
  double* od = out.values().data();
  const double* wd = weights.values().data();
  const std::size_t n = out.numel();
  for (std::size_t j = 0; j < items.size(); ++j) {
    const double w = wd[j];
    const double* td = items[j].values().data();
    for (std::size_t i = 0; i < n; ++i) od[i] += w * td[i];
  }
  if (rg && Tape::active()) {
    auto wn = weights.node(), on = out.node();
    std::vector<NodePtr> ins;
    ins.reserve(items.size());
    for (const Tensor& t : items) ins.push_back(t.node());
    Tape::active()->record([wn, on, ins, n] {
      const double* g = grad_buffer(*on).data();
      for (std::size_t j = 0; j < ins.size(); ++j) {
        if (wn->requires_grad) {
          double acc = 0.0;
          const double* td = ins[j]->data.data();
          for (std::size_t i = 0; i < n; ++i) acc += g[i] * td[i];
          grad_buffer(*wn)[j] += acc;
        }
        if (ins[j]->requires_grad) {
          const double w = wn->data[j];
          double* tg = grad_buffer(*ins[j]).data();
          for (std::size_t i = 0; i < n; ++i) tg[i] += w * g[i];
        }
      }
    });
  }
  return out;
}

std::vector<double> softmax_rows(const Tensor& logits) {
  check_rank("softmax_rows", logits, 2);
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<double> probs(batch * classes);
  const double* ld = logits.values().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = ld + b * classes;
    double mx = row[0];
    for (std::size_t k = 1; k < classes; ++k) mx = std::max(mx, row[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      probs[b * classes + k] = std::exp(row[k] - mx);
      sum += probs[b * classes + k];
    }
    for (std::size_t k = 0; k < classes; ++k) probs[b * classes + k] /= sum;
  }
  return probs;
}

}  // namespace mmnas
