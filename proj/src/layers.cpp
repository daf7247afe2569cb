#include "neufa/layers.hpp"

#include <algorithm>
#include <cmath>

namespace neufa {

using detail::NodePtr;

namespace {

double sigm(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& filters, const Tensor& bias, bool same_padding) {
  if (input.ndim() != 3 || filters.ndim() != 4)
    throw DimensionError("conv2d: expected input [C x H x W] and filters [O x C x kh x kw], got " +
                         shape_str(input.shape()) + " and " + shape_str(filters.shape()));
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = filters.dim(0), kh = filters.dim(2), kw = filters.dim(3);
  if (filters.dim(1) != cin)
    throw DimensionError("conv2d: filters " + shape_str(filters.shape()) + " do not match input " +
                         shape_str(input.shape()));
  if (bias.numel() != cout) throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " for " +
                                                 std::to_string(cout) + " filters");
  if (same_padding && (kh % 2 == 0 || kw % 2 == 0))
    throw ConfigError("conv2d: same padding needs odd kernel extents, got " + std::to_string(kh) + "x" +
                      std::to_string(kw));
  if (!same_padding && (kh > h || kw > w))
    throw DimensionError("conv2d: kernel larger than input without padding");

  const std::ptrdiff_t ph = same_padding ? static_cast<std::ptrdiff_t>(kh / 2) : 0;
  const std::ptrdiff_t pw = same_padding ? static_cast<std::ptrdiff_t>(kw / 2) : 0;
  const std::size_t oh = same_padding ? h : h - kh + 1;
  const std::size_t ow = same_padding ? w : w - kw + 1;

  // Visits every (output cell row, tap) pair that lands inside the input; the
  // callback receives contiguous output/input row segments of length `len`.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - ph;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - pw;
          const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -shift);
          const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ow),
                                                             static_cast<std::ptrdiff_t>(w) - shift);
          if (x1 <= x0) continue;
          fn(ky, kx, oy, static_cast<std::size_t>(iy), static_cast<std::size_t>(x0),
             static_cast<std::size_t>(x0 + shift), static_cast<std::size_t>(x1 - x0));
        }
      }
  };

  const double* in = input.data().data();
  const double* flt = filters.data().data();
  std::vector<double> out(cout * oh * ow);
  for (std::size_t co = 0; co < cout; ++co) std::fill_n(out.data() + co * oh * ow, oh * ow, bias[co]);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* wk = flt + ((co * cin + ci) * kh) * kw;
      const double* src = in + ci * h * w;
      double* dst = out.data() + co * oh * ow;
      for_each_tap([&](std::size_t ky, std::size_t kx, std::size_t oy, std::size_t iy, std::size_t ox, std::size_t ix,
                       std::size_t len) {
        const double wv = wk[ky * kw + kx];
        double* d = dst + oy * ow + ox;
        const double* s = src + iy * w + ix;
        for (std::size_t i = 0; i < len; ++i) d[i] += wv * s[i];
      });
    }

  NodePtr inn = input.node(), fn = filters.node(), bn = bias.node();
  return make_result({cout, oh, ow}, std::move(out), {input, filters, bias},
                     [=](const std::vector<double>& g) {
                       if (bn->requires_grad) {
                         auto& gb = bn->grad_buffer();
                         for (std::size_t co = 0; co < cout; ++co)
                           for (std::size_t i = 0; i < oh * ow; ++i) gb[co] += g[co * oh * ow + i];
                       }
                       const bool need_in = inn->requires_grad, need_f = fn->requires_grad;
                       if (!need_in && !need_f) return;
                       double* gin = need_in ? inn->grad_buffer().data() : nullptr;
                       double* gf = need_f ? fn->grad_buffer().data() : nullptr;
                       const double* inv = inn->value.data();
                       const double* fv = fn->value.data();
                       for (std::size_t co = 0; co < cout; ++co)
                         for (std::size_t ci = 0; ci < cin; ++ci) {
                           const std::size_t kbase = ((co * cin + ci) * kh) * kw;
                           const double* go = g.data() + co * oh * ow;
                           for_each_tap([&](std::size_t ky, std::size_t kx, std::size_t oy, std::size_t iy,
                                            std::size_t ox, std::size_t ix, std::size_t len) {
                             const double* gseg = go + oy * ow + ox;
                             if (gf) {
                               const double* s = inv + ci * h * w + iy * w + ix;
                               double acc = 0.0;
                               for (std::size_t i = 0; i < len; ++i) acc += gseg[i] * s[i];
                               gf[kbase + ky * kw + kx] += acc;
                             }
                             if (gin) {
                               const double wv = fv[kbase + ky * kw + kx];
                               double* d = gin + ci * h * w + iy * w + ix;
                               for (std::size_t i = 0; i < len; ++i) d[i] += wv * gseg[i];
                             }
                           });
                         }
                     });
}

Tensor gru(const Tensor& seq, const GruWeights& wts, bool reverse) {
  if (seq.ndim() != 2) throw DimensionError("gru: sequence must be [T x d], got " + shape_str(seq.shape()));
  const std::size_t steps = seq.dim(0), din = seq.dim(1);
  if (wts.wh.ndim() != 2 || wts.wh.dim(1) != 3 * wts.wh.dim(0))
    throw DimensionError("gru: recurrent weights must be [H x 3H], got " + shape_str(wts.wh.shape()));
  const std::size_t hid = wts.wh.dim(0), g3 = 3 * hid;
  if (wts.wx.shape() != Shape{din, g3})
    throw DimensionError("gru: input weights " + shape_str(wts.wx.shape()) + " do not match input " +
                         shape_str(seq.shape()) + " with hidden " + std::to_string(hid));
  if (wts.bx.numel() != g3 || wts.bh.numel() != g3) throw DimensionError("gru: bias extents must be 3H");

  // Cache per step: r, z, n, (h Wh_n + bh_n), previous state.
  struct Cache {
    std::vector<double> r, z, n, hn, hprev, gx;
  };
  auto cache = std::make_shared<Cache>();
  cache->r.resize(steps * hid);
  cache->z.resize(steps * hid);
  cache->n.resize(steps * hid);
  cache->hn.resize(steps * hid);
  cache->hprev.resize(steps * hid);

  const double* x = seq.data().data();
  const double* wx = wts.wx.data().data();
  const double* wh = wts.wh.data().data();
  std::vector<double> gx(steps * g3);
  for (std::size_t t = 0; t < steps; ++t) std::copy_n(wts.bx.data().data(), g3, gx.data() + t * g3);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t p = 0; p < din; ++p) {
      const double xv = x[t * din + p];
      if (xv == 0.0) continue;
      const double* row = wx + p * g3;
      double* o = gx.data() + t * g3;
      for (std::size_t j = 0; j < g3; ++j) o[j] += xv * row[j];
    }

  std::vector<double> out(steps * hid);
  std::vector<double> h(hid, 0.0), gh(g3);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    std::copy_n(wts.bh.data().data(), g3, gh.data());
    for (std::size_t p = 0; p < hid; ++p) {
      const double hv = h[p];
      if (hv == 0.0) continue;
      const double* row = wh + p * g3;
      for (std::size_t j = 0; j < g3; ++j) gh[j] += hv * row[j];
    }
    const double* gxt = gx.data() + t * g3;
    for (std::size_t j = 0; j < hid; ++j) {
      const double r = sigm(gxt[j] + gh[j]);
      const double z = sigm(gxt[hid + j] + gh[hid + j]);
      const double n = std::tanh(gxt[2 * hid + j] + r * gh[2 * hid + j]);
      cache->r[t * hid + j] = r;
      cache->z[t * hid + j] = z;
      cache->n[t * hid + j] = n;
      cache->hn[t * hid + j] = gh[2 * hid + j];
      cache->hprev[t * hid + j] = h[j];
      h[j] = (1.0 - z) * n + z * h[j];
      out[t * hid + j] = h[j];
    }
  }

  NodePtr sn = seq.node(), wxn = wts.wx.node(), whn = wts.wh.node(), bxn = wts.bx.node(), bhn = wts.bh.node();
  return make_result(
      {steps, hid}, std::move(out), {seq, wts.wx, wts.wh, wts.bx, wts.bh},
      [=](const std::vector<double>& g) {
        std::vector<double> dgx(steps * g3, 0.0);
        std::vector<double> carry(hid, 0.0), dgh(g3), dh(hid);
        const double* whv = whn->value.data();
        double* dwh = whn->requires_grad ? whn->grad_buffer().data() : nullptr;
        double* dbh = bhn->requires_grad ? bhn->grad_buffer().data() : nullptr;
        for (std::size_t s = 0; s < steps; ++s) {
          const std::size_t t = reverse ? s : steps - 1 - s;  // opposite of forward order
          const std::size_t o = t * hid;
          for (std::size_t j = 0; j < hid; ++j) dh[j] = g[o + j] + carry[j];
          double* dgxt = dgx.data() + t * g3;
          for (std::size_t j = 0; j < hid; ++j) {
            const double r = cache->r[o + j], z = cache->z[o + j], n = cache->n[o + j];
            const double hp = cache->hprev[o + j];
            const double dz = dh[j] * (hp - n);
            const double dn = dh[j] * (1.0 - z);
            carry[j] = dh[j] * z;
            const double dn_pre = dn * (1.0 - n * n);
            const double dr = dn_pre * cache->hn[o + j];
            const double dr_pre = dr * r * (1.0 - r);
            const double dz_pre = dz * z * (1.0 - z);
            dgxt[j] = dr_pre;
            dgxt[hid + j] = dz_pre;
            dgxt[2 * hid + j] = dn_pre;
            dgh[j] = dr_pre;
            dgh[hid + j] = dz_pre;
            dgh[2 * hid + j] = dn_pre * r;
          }
          if (dbh)
            for (std::size_t j = 0; j < g3; ++j) dbh[j] += dgh[j];
          const double* hp = cache->hprev.data() + o;
          for (std::size_t p = 0; p < hid; ++p) {
            const double* row = whv + p * g3;
            double acc = 0.0;
            for (std::size_t j = 0; j < g3; ++j) acc += dgh[j] * row[j];
            carry[p] += acc;
            if (dwh && hp[p] != 0.0) {
              double* drow = dwh + p * g3;
              for (std::size_t j = 0; j < g3; ++j) drow[j] += hp[p] * dgh[j];
            }
          }
        }
        if (bxn->requires_grad) {
          auto& db = bxn->grad_buffer();
          for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t j = 0; j < g3; ++j) db[j] += dgx[t * g3 + j];
        }
        if (wxn->requires_grad) {
          auto& dw = wxn->grad_buffer();
          const double* xv = sn->value.data();
          for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t p = 0; p < din; ++p) {
              const double v = xv[t * din + p];
              if (v == 0.0) continue;
              double* drow = dw.data() + p * g3;
              const double* src = dgx.data() + t * g3;
              for (std::size_t j = 0; j < g3; ++j) drow[j] += v * src[j];
            }
        }
        if (sn->requires_grad) {
          auto& dx = sn->grad_buffer();
          const double* wxv = wxn->value.data();
          for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t p = 0; p < din; ++p) {
              const double* row = wxv + p * g3;
              const double* src = dgx.data() + t * g3;
              double acc = 0.0;
              for (std::size_t j = 0; j < g3; ++j) acc += src[j] * row[j];
              dx[t * din + p] += acc;
            }
        }
      });
}

Tensor bigru(const Tensor& seq, const GruWeights& forward, const GruWeights& backward) {
  return concat({gru(seq, forward, false), gru(seq, backward, true)}, 1);
}

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, BatchStats* stats) {
  if (x.ndim() != 2) throw DimensionError("batch_norm: expected [C x N], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), n = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c)
    throw DimensionError("batch_norm: affine parameters do not match " + std::to_string(c) + " channels");
  auto xhat = std::make_shared<std::vector<double>>(c * n);
  auto inv_std = std::make_shared<std::vector<double>>(c);
  std::vector<double> y(c * n);
  BatchStats local;
  local.mean.resize(c);
  local.var.resize(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* row = x.data().data() + ch * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += row[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(n);
    local.mean[ch] = mu;
    local.var[ch] = var;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[ch] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const double xh = (row[i] - mu) * is;
      (*xhat)[ch * n + i] = xh;
      y[ch * n + i] = gamma[ch] * xh + beta[ch];
    }
  }
  if (stats) *stats = std::move(local);
  NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_result({c, n}, std::move(y), {x, gamma, beta}, [=](const std::vector<double>& g) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* gr = g.data() + ch * n;
      const double* xh = xhat->data() + ch * n;
      double sg = 0.0, sgx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sg += gr[i];
        sgx += gr[i] * xh[i];
      }
      if (bn->requires_grad) bn->grad_buffer()[ch] += sg;
      if (gn->requires_grad) gn->grad_buffer()[ch] += sgx;
      if (xn->requires_grad) {
        auto& gx = xn->grad_buffer();
        const double k = gn->value[ch] * (*inv_std)[ch] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          gx[ch * n + i] += k * (static_cast<double>(n) * gr[i] - sg - xh[i] * sgx);
      }
    }
  });
}

Tensor batch_norm_infer(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::span<const double> mean,
                        std::span<const double> var, double eps) {
  if (x.ndim() != 2) throw DimensionError("batch_norm: expected [C x N], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), n = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c || mean.size() != c || var.size() != c)
    throw DimensionError("batch_norm: statistics do not match " + std::to_string(c) + " channels");
  auto xhat = std::make_shared<std::vector<double>>(c * n);
  auto inv_std = std::make_shared<std::vector<double>>(c);
  std::vector<double> y(c * n);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double is = 1.0 / std::sqrt(var[ch] + eps);
    (*inv_std)[ch] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const double xh = (x[ch * n + i] - mean[ch]) * is;
      (*xhat)[ch * n + i] = xh;
      y[ch * n + i] = gamma[ch] * xh + beta[ch];
    }
  }
  NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_result({c, n}, std::move(y), {x, gamma, beta}, [=](const std::vector<double>& g) {
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < n; ++i) {
        const double gr = g[ch * n + i];
        if (bn->requires_grad) bn->grad_buffer()[ch] += gr;
        if (gn->requires_grad) gn->grad_buffer()[ch] += gr * (*xhat)[ch * n + i];
        if (xn->requires_grad) xn->grad_buffer()[ch * n + i] += gr * gn->value[ch] * (*inv_std)[ch];
      }
  });
}

}  // namespace neufa
