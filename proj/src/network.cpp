#include "sra/network.hpp"

#include <cmath>
#include <string>

namespace sra {

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
void accumulate(Tensor<Scalar>& dst, const Tensor<Scalar>& src) {
  if (dst.empty()) {
    dst = src;
  } else {
    dst.values() += src.values();
  }
}

struct ConvGeometry {
  Index n, c, h, w;      // input
  Index o, ho, wo;       // output
  Index k, s, p, groups;
  Index cg() const { return c / groups; }
  Index og() const { return o / groups; }
  Index col_rows() const { return cg() * k * k; }
  Index col_cols() const { return n * ho * wo; }
};

ConvGeometry conv_geometry(const LayerSpec& l, const Shape& in) {
  ConvGeometry g{in[0], in[1], in[2], in[3], l.out, 0, 0, l.kernel, l.stride, l.padding, l.groups};
  g.ho = (g.h + 2 * g.p - g.k) / g.s + 1;
  g.wo = (g.w + 2 * g.p - g.k) / g.s + 1;
  return g;
}

// Unfolds input channels [group*cg, (group+1)*cg) into a (cg*k*k, n*ho*wo) matrix.
template <typename Scalar>
void im2col(const Tensor<Scalar>& x, const ConvGeometry& g, Index group, RowMatrix<Scalar>& cols) {
  cols.resize(g.col_rows(), g.col_cols());
  const Scalar* src = x.data();
  const Index plane = g.h * g.w;
  const Index out_plane = g.ho * g.wo;
  for (Index ci = 0; ci < g.cg(); ++ci) {
    const Index c = group * g.cg() + ci;
    for (Index kh = 0; kh < g.k; ++kh) {
      for (Index kw = 0; kw < g.k; ++kw) {
        Scalar* row = cols.row((ci * g.k + kh) * g.k + kw).data();
        for (Index n = 0; n < g.n; ++n) {
          const Scalar* img = src + (n * g.c + c) * plane;
          Scalar* dst = row + n * out_plane;
          for (Index oh = 0; oh < g.ho; ++oh) {
            const Index ih = oh * g.s - g.p + kh;
            Scalar* drow = dst + oh * g.wo;
            if (ih < 0 || ih >= g.h) {
              std::fill(drow, drow + g.wo, Scalar(0));
              continue;
            }
            for (Index ow = 0; ow < g.wo; ++ow) {
              const Index iw = ow * g.s - g.p + kw;
              drow[ow] = (iw < 0 || iw >= g.w) ? Scalar(0) : img[ih * g.w + iw];
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Index group, Tensor<Scalar>& dx) {
  Scalar* dst = dx.data();
  const Index plane = g.h * g.w;
  const Index out_plane = g.ho * g.wo;
  for (Index ci = 0; ci < g.cg(); ++ci) {
    const Index c = group * g.cg() + ci;
    for (Index kh = 0; kh < g.k; ++kh) {
      for (Index kw = 0; kw < g.k; ++kw) {
        const Scalar* row = cols.row((ci * g.k + kh) * g.k + kw).data();
        for (Index n = 0; n < g.n; ++n) {
          Scalar* img = dst + (n * g.c + c) * plane;
          const Scalar* srow = row + n * out_plane;
          for (Index oh = 0; oh < g.ho; ++oh) {
            const Index ih = oh * g.s - g.p + kh;
            if (ih < 0 || ih >= g.h) continue;
            for (Index ow = 0; ow < g.wo; ++ow) {
              const Index iw = ow * g.s - g.p + kw;
              if (iw >= 0 && iw < g.w) img[ih * g.w + iw] += srow[oh * g.wo + ow];
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> conv_forward(const LayerSpec& l, const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                            const Tensor<Scalar>& bias) {
  const ConvGeometry g = conv_geometry(l, x.shape());
  Tensor<Scalar> y({g.n, g.o, g.ho, g.wo});
  RowMatrix<Scalar> cols;
  RowMatrix<Scalar> prod;
  const Index out_plane = g.ho * g.wo;
  const auto w = weight.matrix(g.o, g.col_rows());
  for (Index grp = 0; grp < g.groups; ++grp) {
    im2col(x, g, grp, cols);
    prod.noalias() = w.middleRows(grp * g.og(), g.og()) * cols;
    for (Index n = 0; n < g.n; ++n) {
      for (Index oi = 0; oi < g.og(); ++oi) {
        const Index o = grp * g.og() + oi;
        Scalar* dst = y.data() + (n * g.o + o) * out_plane;
        const Scalar* src = prod.row(oi).data() + n * out_plane;
        const Scalar b = bias[o];
        for (Index i = 0; i < out_plane; ++i) dst[i] = src[i] + b;
      }
    }
  }
  return y;
}

template <typename Scalar>
void conv_backward(const LayerSpec& l, const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                   const Tensor<Scalar>& dy, Tensor<Scalar>* dweight, Tensor<Scalar>* dbias,
                   Tensor<Scalar>* dx) {
  const ConvGeometry g = conv_geometry(l, x.shape());
  const Index out_plane = g.ho * g.wo;
  const auto w = weight.matrix(g.o, g.col_rows());
  RowMatrix<Scalar> cols, dcols;
  RowMatrix<Scalar> dyg(g.og(), g.col_cols());
  if (dx) *dx = Tensor<Scalar>(x.shape());
  for (Index grp = 0; grp < g.groups; ++grp) {
    for (Index oi = 0; oi < g.og(); ++oi) {
      const Index o = grp * g.og() + oi;
      for (Index n = 0; n < g.n; ++n) {
        const Scalar* src = dy.data() + (n * g.o + o) * out_plane;
        std::copy(src, src + out_plane, dyg.row(oi).data() + n * out_plane);
      }
    }
    if (dweight) {
      im2col(x, g, grp, cols);
      auto dw = dweight->matrix(g.o, g.col_rows());
      dw.middleRows(grp * g.og(), g.og()).noalias() = dyg * cols.transpose();
      for (Index oi = 0; oi < g.og(); ++oi) (*dbias)[grp * g.og() + oi] = dyg.row(oi).sum();
    }
    if (dx) {
      dcols.noalias() = w.middleRows(grp * g.og(), g.og()).transpose() * dyg;
      col2im(dcols, g, grp, *dx);
    }
  }
}

// Views an (N, C) or (N, C, H, W) tensor as N x C x S.
struct BnView {
  Index n, c, s;
};

BnView bn_view(const Shape& shape) {
  BnView v{shape[0], shape[1], 1};
  for (std::size_t i = 2; i < shape.size(); ++i) v.s *= shape[i];
  return v;
}

template <typename Scalar>
Tensor<Scalar> pool_forward(const LayerSpec& l, const Tensor<Scalar>& x, std::vector<Index>* argmax) {
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index ho = (h - l.kernel) / l.stride + 1, wo = (w - l.kernel) / l.stride + 1;
  Tensor<Scalar> y({n, c, ho, wo});
  const bool is_max = l.kind == LayerKind::maxpool;
  if (is_max && argmax) argmax->assign(static_cast<std::size_t>(y.size()), 0);
  const Scalar inv_area = Scalar(1) / static_cast<Scalar>(l.kernel * l.kernel);
  Index out_i = 0;
  for (Index plane = 0; plane < n * c; ++plane) {
    const Scalar* img = x.data() + plane * h * w;
    for (Index oh = 0; oh < ho; ++oh) {
      for (Index ow = 0; ow < wo; ++ow, ++out_i) {
        const Index r0 = oh * l.stride, c0 = ow * l.stride;
        if (is_max) {
          // Strict comparison in row-major scan order: ties go to the first index.
          Index best = r0 * w + c0;
          Scalar best_v = img[best];
          for (Index r = r0; r < r0 + l.kernel; ++r) {
            for (Index cc = c0; cc < c0 + l.kernel; ++cc) {
              if (img[r * w + cc] > best_v) {
                best_v = img[r * w + cc];
                best = r * w + cc;
              }
            }
          }
          y[out_i] = best_v;
          if (argmax) (*argmax)[static_cast<std::size_t>(out_i)] = plane * h * w + best;
        } else {
          Scalar acc = 0;
          for (Index r = r0; r < r0 + l.kernel; ++r) {
            for (Index cc = c0; cc < c0 + l.kernel; ++cc) acc += img[r * w + cc];
          }
          y[out_i] = acc * inv_area;
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> avgpool_backward(const LayerSpec& l, const Shape& in_shape, const Tensor<Scalar>& dy) {
  Tensor<Scalar> dx(in_shape);
  const Index n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
  const Index ho = dy.dim(2), wo = dy.dim(3);
  const Scalar inv_area = Scalar(1) / static_cast<Scalar>(l.kernel * l.kernel);
  Index out_i = 0;
  for (Index plane = 0; plane < n * c; ++plane) {
    Scalar* img = dx.data() + plane * h * w;
    for (Index oh = 0; oh < ho; ++oh) {
      for (Index ow = 0; ow < wo; ++ow, ++out_i) {
        const Scalar g = dy[out_i] * inv_area;
        for (Index r = oh * l.stride; r < oh * l.stride + l.kernel; ++r) {
          for (Index cc = ow * l.stride; cc < ow * l.stride + l.kernel; ++cc) img[r * w + cc] += g;
        }
      }
    }
  }
  return dx;
}

Shape with_batch(Index n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

template <typename Scalar>
void check_finite(const Tensor<Scalar>& t, std::size_t layer, const char* what) {
  if (!t.all_finite()) {
    throw NumericError(std::string("non-finite ") + what + " at layer " + std::to_string(layer));
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> forward(const Arch& arch, const ParamSet<Scalar>& params, const Tensor<Scalar>& batch,
                       Mode mode, ForwardCache<Scalar>* cache) {
  using Vec = typename ForwardCache<Scalar>::Vec;
  const auto shapes = layer_output_shapes(arch);
  if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != arch.input_shape()) {
    throw ShapeError("batch shape " + shape_string(batch.shape()) + " does not match model input " +
                     shape_string(arch.input_shape()));
  }
  if (!batch.all_finite()) throw NumericError("non-finite input batch");
  const Index n = batch.dim(0);
  const std::size_t num_layers = arch.layers.size();

  Tensor<Scalar> x = batch;
  if (!arch.input_mean.empty()) {
    const Index plane = arch.height * arch.width;
    for (Index i = 0; i < n; ++i) {
      for (Index c = 0; c < arch.channels; ++c) {
        auto seg = x.values().segment((i * arch.channels + c) * plane, plane);
        seg = (seg - static_cast<Scalar>(arch.input_mean[static_cast<std::size_t>(c)])) /
              static_cast<Scalar>(arch.input_std[static_cast<std::size_t>(c)]);
      }
    }
  }

  ForwardCache<Scalar> local;
  ForwardCache<Scalar>& c = cache ? *cache : local;
  c = ForwardCache<Scalar>{};
  c.mode = mode;
  c.outputs.resize(num_layers);
  c.bn_mean.resize(num_layers);
  c.bn_inv_std.resize(num_layers);
  c.bn_batch_var.resize(num_layers);
  c.argmax.resize(num_layers);
  c.input = std::move(x);

  for (std::size_t i = 0; i < num_layers; ++i) {
    const LayerSpec& l = arch.layers[i];
    const Tensor<Scalar>& in = i == 0 ? c.input : c.outputs[i - 1];
    const auto li = static_cast<Index>(i);
    Tensor<Scalar> out;
    switch (l.kind) {
      case LayerKind::dense: {
        const auto& w = params.at(li, ParamRole::weight);
        const auto& b = params.at(li, ParamRole::bias);
        out = Tensor<Scalar>({n, l.out});
        out.matrix(n, l.out).noalias() = in.matrix(n, l.in) * w.matrix(l.out, l.in).transpose();
        out.matrix(n, l.out).rowwise() += b.values().matrix().transpose();
        break;
      }
      case LayerKind::conv2d:
        out = conv_forward(l, in, params.at(li, ParamRole::weight), params.at(li, ParamRole::bias));
        break;
      case LayerKind::batchnorm: {
        const BnView v = bn_view(in.shape());
        const auto& gamma = params.at(li, ParamRole::bn_scale);
        const auto& beta = params.at(li, ParamRole::bn_shift);
        Vec mean(v.c), var(v.c);
        if (mode == Mode::train) {
          const auto count = static_cast<Scalar>(v.n * v.s);
          mean.setZero();
          var.setZero();
          for (Index b = 0; b < v.n; ++b) {
            for (Index ch = 0; ch < v.c; ++ch) mean[ch] += in.values().segment((b * v.c + ch) * v.s, v.s).sum();
          }
          mean /= count;
          for (Index b = 0; b < v.n; ++b) {
            for (Index ch = 0; ch < v.c; ++ch) {
              var[ch] += (in.values().segment((b * v.c + ch) * v.s, v.s) - mean[ch]).square().sum();
            }
          }
          var /= count;
          c.bn_batch_var[i] = var;
        } else {
          mean = params.at(li, ParamRole::bn_mean).values();
          var = params.at(li, ParamRole::bn_var).values();
        }
        Vec inv_std = (var + static_cast<Scalar>(kBatchNormEps)).rsqrt();
        out = Tensor<Scalar>(in.shape());
        for (Index b = 0; b < v.n; ++b) {
          for (Index ch = 0; ch < v.c; ++ch) {
            const Index off = (b * v.c + ch) * v.s;
            out.values().segment(off, v.s) =
                (in.values().segment(off, v.s) - mean[ch]) * (inv_std[ch] * gamma[ch]) + beta[ch];
          }
        }
        c.bn_mean[i] = std::move(mean);
        c.bn_inv_std[i] = std::move(inv_std);
        break;
      }
      case LayerKind::relu:
        out = Tensor<Scalar>(in.shape());
        out.values() = in.values().max(Scalar(0));
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        out = pool_forward(l, in, &c.argmax[i]);
        break;
      case LayerKind::flatten:
        out = in.reshaped(with_batch(n, shapes[i]));
        break;
      case LayerKind::residual_add:
        out = in;
        out.values() += c.outputs[static_cast<std::size_t>(l.source)].values();
        break;
    }
    check_finite(out, i, "activation");
    c.outputs[i] = std::move(out);
  }
  return c.outputs.back();
}

template <typename Scalar>
Gradients<Scalar> backward(const Arch& arch, const ParamSet<Scalar>& params,
                           const ForwardCache<Scalar>& cache, const Tensor<Scalar>& grad_output,
                           Tensor<Scalar>* input_grad, bool param_grads) {
  const std::size_t num_layers = arch.layers.size();
  if (cache.outputs.size() != num_layers) throw Error("backward: missing or mismatched forward cache");
  if (grad_output.shape() != cache.outputs.back().shape()) {
    throw ShapeError("backward: gradient shape " + shape_string(grad_output.shape()) +
                     " does not match logits " + shape_string(cache.outputs.back().shape()));
  }
  Gradients<Scalar> grads;
  if (param_grads) grads = Gradients<Scalar>::zeros(arch, /*trainable_only=*/true);
  const Index n = grad_output.dim(0);

  std::vector<Tensor<Scalar>> dout(num_layers);
  dout.back() = grad_output;
  Tensor<Scalar> dinput;

  for (std::size_t ii = num_layers; ii-- > 0;) {
    const LayerSpec& l = arch.layers[ii];
    const auto li = static_cast<Index>(ii);
    const Tensor<Scalar>& in = ii == 0 ? cache.input : cache.outputs[ii - 1];
    const bool need_dx = ii > 0 || input_grad != nullptr;
    Tensor<Scalar>& dy = dout[ii];
    if (dy.empty()) dy = Tensor<Scalar>(cache.outputs[ii].shape());
    Tensor<Scalar> dx;
    switch (l.kind) {
      case LayerKind::dense: {
        const auto& w = params.at(li, ParamRole::weight);
        const auto dym = dy.matrix(n, l.out);
        if (param_grads) {
          grads.at(li, ParamRole::weight).matrix(l.out, l.in).noalias() = dym.transpose() * in.matrix(n, l.in);
          grads.at(li, ParamRole::bias).values() = dym.colwise().sum().transpose().array();
        }
        if (need_dx) {
          dx = Tensor<Scalar>(in.shape());
          dx.matrix(n, l.in).noalias() = dym * w.matrix(l.out, l.in);
        }
        break;
      }
      case LayerKind::conv2d:
        conv_backward(l, in, params.at(li, ParamRole::weight), dy,
                      param_grads ? &grads.at(li, ParamRole::weight) : nullptr,
                      param_grads ? &grads.at(li, ParamRole::bias) : nullptr, need_dx ? &dx : nullptr);
        break;
      case LayerKind::batchnorm: {
        const BnView v = bn_view(in.shape());
        const auto& gamma = params.at(li, ParamRole::bn_scale);
        const auto& mean = cache.bn_mean[ii];
        const auto& inv_std = cache.bn_inv_std[ii];
        const auto count = static_cast<Scalar>(v.n * v.s);
        Eigen::Array<Scalar, Eigen::Dynamic, 1> sum_dy = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(v.c);
        Eigen::Array<Scalar, Eigen::Dynamic, 1> sum_dy_xhat = sum_dy;
        for (Index b = 0; b < v.n; ++b) {
          for (Index ch = 0; ch < v.c; ++ch) {
            const Index off = (b * v.c + ch) * v.s;
            auto g = dy.values().segment(off, v.s);
            sum_dy[ch] += g.sum();
            sum_dy_xhat[ch] += (g * (in.values().segment(off, v.s) - mean[ch])).sum() * inv_std[ch];
          }
        }
        if (param_grads) {
          grads.at(li, ParamRole::bn_scale).values() = sum_dy_xhat;
          grads.at(li, ParamRole::bn_shift).values() = sum_dy;
        }
        if (need_dx) {
          dx = Tensor<Scalar>(in.shape());
          for (Index b = 0; b < v.n; ++b) {
            for (Index ch = 0; ch < v.c; ++ch) {
              const Index off = (b * v.c + ch) * v.s;
              auto g = dy.values().segment(off, v.s);
              if (cache.mode == Mode::train) {
                auto xhat = (in.values().segment(off, v.s) - mean[ch]) * inv_std[ch];
                dx.values().segment(off, v.s) =
                    (gamma[ch] * inv_std[ch] / count) * (count * g - sum_dy[ch] - xhat * sum_dy_xhat[ch]);
              } else {
                dx.values().segment(off, v.s) = g * (gamma[ch] * inv_std[ch]);
              }
            }
          }
        }
        break;
      }
      case LayerKind::relu:
        if (need_dx) {
          dx = Tensor<Scalar>(in.shape());
          dx.values() = (in.values() > Scalar(0)).select(dy.values(), Scalar(0));
        }
        break;
      case LayerKind::maxpool:
        if (need_dx) {
          dx = Tensor<Scalar>(in.shape());
          const auto& arg = cache.argmax[ii];
          for (std::size_t k = 0; k < arg.size(); ++k) dx[arg[k]] += dy[static_cast<Index>(k)];
        }
        break;
      case LayerKind::avgpool:
        if (need_dx) dx = avgpool_backward(l, in.shape(), dy);
        break;
      case LayerKind::flatten:
        if (need_dx) dx = dy.reshaped(in.shape());
        break;
      case LayerKind::residual_add:
        accumulate(dout[static_cast<std::size_t>(l.source)], dy);
        if (need_dx) dx = dy;
        break;
    }
    if (ii > 0) {
      accumulate(dout[ii - 1], dx);
    } else if (input_grad) {
      dinput = std::move(dx);
    }
    dy = Tensor<Scalar>();  // release
  }

  if (input_grad) {
    if (!arch.input_mean.empty()) {
      const Index plane = arch.height * arch.width;
      for (Index i = 0; i < n; ++i) {
        for (Index ch = 0; ch < arch.channels; ++ch) {
          dinput.values().segment((i * arch.channels + ch) * plane, plane) /=
              static_cast<Scalar>(arch.input_std[static_cast<std::size_t>(ch)]);
        }
      }
    }
    if (!dinput.all_finite()) throw NumericError("non-finite input gradient");
    *input_grad = std::move(dinput);
  }
  if (param_grads && !grads.all_finite()) throw NumericError("non-finite parameter gradient");
  return grads;
}

template <typename Scalar>
void update_running_stats(const Arch& arch, ParamSet<Scalar>& params, const ForwardCache<Scalar>& cache,
                          double momentum) {
  if (cache.mode != Mode::train) throw Error("running stats need a train-mode cache");
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (arch.layers[i].kind != LayerKind::batchnorm) continue;
    const auto li = static_cast<Index>(i);
    const Tensor<Scalar>& in = i == 0 ? cache.input : cache.outputs[i - 1];
    const BnView v = bn_view(in.shape());
    const Index count = v.n * v.s;
    const Scalar unbias = count > 1 ? static_cast<Scalar>(count) / static_cast<Scalar>(count - 1) : Scalar(1);
    const auto m = static_cast<Scalar>(momentum);
    auto& rm = params.at(li, ParamRole::bn_mean).values();
    auto& rv = params.at(li, ParamRole::bn_var).values();
    rm = (Scalar(1) - m) * rm + m * cache.bn_mean[i];
    rv = (Scalar(1) - m) * rv + m * cache.bn_batch_var[i] * unbias;
  }
}

template Tensor<float> forward(const Arch&, const ParamSet<float>&, const Tensor<float>&, Mode,
                               ForwardCache<float>*);
template Tensor<double> forward(const Arch&, const ParamSet<double>&, const Tensor<double>&, Mode,
                                ForwardCache<double>*);
template Gradients<float> backward(const Arch&, const ParamSet<float>&, const ForwardCache<float>&,
                                   const Tensor<float>&, Tensor<float>*, bool);
template Gradients<double> backward(const Arch&, const ParamSet<double>&, const ForwardCache<double>&,
                                    const Tensor<double>&, Tensor<double>*, bool);
template void update_running_stats(const Arch&, ParamSet<float>&, const ForwardCache<float>&, double);
template void update_running_stats(const Arch&, ParamSet<double>&, const ForwardCache<double>&, double);

}  // namespace sra
