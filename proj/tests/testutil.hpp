#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mmnas/nn.hpp"
#include "mmnas/rng.hpp"
#include "mmnas/tensor.hpp"

namespace mmnas::testutil {

/// Scale-aware relative error: absolute below 1, relative above.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

/// Central finite difference of f with respect to one in-place slot.
inline double finite_diff(const std::function<double()>& f, double* slot, double h = 1e-5) {
  const double saved = *slot;
  *slot = saved + h;
  const double up = f();
  *slot = saved - h;
  const double down = f();
  *slot = saved;
  return (up - down) / (2.0 * h);
}

/// Worst relative error between the analytic gradient of `loss_fn` w.r.t.
/// `target` and central finite differences, over every element (or a probe
/// subset when `stride` > 1).
inline double max_grad_rel_err(const std::function<Tensor()>& loss_fn, Tensor& target,
                               std::size_t stride = 1, double h = 1e-5) {
  target.zero_grad();
  double analytic_loss;
  {
    Tape tape;
    Tensor loss = loss_fn();
    analytic_loss = loss.value();
    tape.backward(loss);
  }
  (void)analytic_loss;
  std::vector<double> grad(target.has_grad() ? std::vector<double>(target.grad().begin(), target.grad().end())
                                             : std::vector<double>(target.numel(), 0.0));
  auto eval = [&] { return loss_fn().value(); };
  double worst = 0.0;
  auto vals = target.values();
  for (std::size_t i = 0; i < vals.size(); i += stride) {
    const double fd = finite_diff(eval, &vals[i], h);
    worst = std::max(worst, rel_err(grad[i], fd));
  }
  target.zero_grad();
  return worst;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Direct 7-loop convolution, the independent reference for conv3d.
inline Tensor conv3d_reference(const Tensor& x, const Tensor& w, const Conv3dSpec& sp) {
  const std::size_t B = x.dim(0), Cin = x.dim(1);
  const std::size_t Cout = w.dim(0);
  const std::size_t groups = sp.groups;
  const std::size_t cin_g = Cin / groups, cout_g = Cout / groups;
  const long D = static_cast<long>(x.dim(2)), H = static_cast<long>(x.dim(3)),
             W = static_cast<long>(x.dim(4));
  const long kd = static_cast<long>(w.dim(2)), kh = static_cast<long>(w.dim(3)),
             kw = static_cast<long>(w.dim(4));
  const long s = static_cast<long>(sp.stride), p = static_cast<long>(sp.pad),
             dil = static_cast<long>(sp.dilation);
  const long OD = (D + 2 * p - dil * (kd - 1) - 1) / s + 1;
  const long OH = (H + 2 * p - dil * (kh - 1) - 1) / s + 1;
  const long OW = (W + 2 * p - dil * (kw - 1) - 1) / s + 1;
  Tensor out = Tensor::zeros({B, Cout, static_cast<std::size_t>(OD), static_cast<std::size_t>(OH),
                              static_cast<std::size_t>(OW)});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Cout; ++co) {
      const std::size_t g = co / cout_g;
      for (long oz = 0; oz < OD; ++oz) {
        for (long oy = 0; oy < OH; ++oy) {
          for (long ox = 0; ox < OW; ++ox) {
            double acc = 0.0;
            for (std::size_t cl = 0; cl < cin_g; ++cl) {
              for (long kz = 0; kz < kd; ++kz) {
                for (long ky = 0; ky < kh; ++ky) {
                  for (long kx = 0; kx < kw; ++kx) {
                    const long iz = oz * s - p + kz * dil;
                    const long iy = oy * s - p + ky * dil;
                    const long ix = ox * s - p + kx * dil;
                    if (iz < 0 || iz >= D || iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                    const double xv =
                        x.values()[(((b * Cin + g * cin_g + cl) * D + iz) * H + iy) * W + ix];
                    const double wv =
                        w.values()[(((co * cin_g + cl) * kd + kz) * kh + ky) * kw + kx];
                    acc += xv * wv;
                  }
                }
              }
            }
            out.values()[(((b * Cout + co) * OD + oz) * OH + oy) * OW + ox] = acc;
          }
        }
      }
    }
  }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) worst = std::max(worst, std::abs(av[i] - bv[i]));
  return worst;
}

}  // namespace mmnas::testutil
