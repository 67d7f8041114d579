#include "transtailor/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace transtailor::ops {

namespace {

using detail::Node;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

struct ConvGeometry {
  int n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  int patch() const { return cin * kh * kw; }
  int positions() const { return ho * wo; }
};

void im2col(const ConvGeometry& g, const float* x, std::vector<float>& col) {
  const int cols = g.n * g.positions();
  col.assign(static_cast<std::size_t>(g.patch()) * cols, 0.0f);
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        float* row = col.data() + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * cols;
        for (int n = 0; n < g.n; ++n) {
          const float* plane = x + (static_cast<std::size_t>(n) * g.cin + c) * g.h * g.w;
          float* dst = row + static_cast<std::size_t>(n) * g.positions();
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.h) continue;
            for (int ow = 0; ow < g.wo; ++ow) {
              const int iw = ow * g.stride - g.pad + kj;
              if (iw >= 0 && iw < g.w) dst[oh * g.wo + ow] = plane[ih * g.w + iw];
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const std::vector<float>& col, float* dx) {
  const int cols = g.n * g.positions();
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const float* row =
            col.data() + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * cols;
        for (int n = 0; n < g.n; ++n) {
          float* plane = dx + (static_cast<std::size_t>(n) * g.cin + c) * g.h * g.w;
          const float* src = row + static_cast<std::size_t>(n) * g.positions();
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.h) continue;
            for (int ow = 0; ow < g.wo; ++ow) {
              const int iw = ow * g.stride - g.pad + kj;
              if (iw >= 0 && iw < g.w) plane[ih * g.w + iw] += src[oh * g.wo + ow];
            }
          }
        }
      }
    }
  }
}

int conv_extent(int in, int k, int stride, int pad, const char* axis) {
  const int span = in + 2 * pad - k;
  if (span < 0 || span % stride != 0) {
    throw ShapeError(std::string("conv2d: non-integer or empty output ") + axis + " extent (in=" +
                     std::to_string(in) + ", kernel=" + std::to_string(k) + ", stride=" +
                     std::to_string(stride) + ", padding=" + std::to_string(pad) + ")");
  }
  return span / stride + 1;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  require_rank(bias, 1, "conv2d bias");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >= 1, padding >= 0");
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) +
                     " channels but weight expects " + std::to_string(weight.dim(1)) +
                     " (input " + shape_str(input.shape()) + ", weight " +
                     shape_str(weight.shape()) + ")");
  }
  if (bias.dim(0) != weight.dim(0)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  ConvGeometry g{};
  g.n = static_cast<int>(input.dim(0));
  g.cin = static_cast<int>(input.dim(1));
  g.h = static_cast<int>(input.dim(2));
  g.w = static_cast<int>(input.dim(3));
  g.cout = static_cast<int>(weight.dim(0));
  g.kh = static_cast<int>(weight.dim(2));
  g.kw = static_cast<int>(weight.dim(3));
  g.stride = stride;
  g.pad = padding;
  g.ho = conv_extent(g.h, g.kh, stride, padding, "height");
  g.wo = conv_extent(g.w, g.kw, stride, padding, "width");

  const int k = g.patch();
  const int cols = g.n * g.positions();
  std::vector<float> col;
  im2col(g, input.data().data(), col);
  std::vector<float> mat(static_cast<std::size_t>(g.cout) * cols);
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, g.cout, cols, k, 1.0f,
              weight.data().data(), k, col.data(), cols, 0.0f, mat.data(), cols);

  std::vector<float> out(static_cast<std::size_t>(g.n) * g.cout * g.positions());
  const float* b = bias.data().data();
  for (int n = 0; n < g.n; ++n) {
    for (int co = 0; co < g.cout; ++co) {
      const float* src = mat.data() + static_cast<std::size_t>(co) * cols +
                         static_cast<std::size_t>(n) * g.positions();
      float* dst = out.data() + (static_cast<std::size_t>(n) * g.cout + co) * g.positions();
      for (int p = 0; p < g.positions(); ++p) dst[p] = src[p] + b[co];
    }
  }

  Node* xn = input.node().get();
  Node* wn = weight.node().get();
  Node* bn = bias.node().get();
  auto backward = [g, xn, wn, bn](std::span<const float> gout) {
    const int k = g.patch();
    const int cols = g.n * g.positions();
    std::vector<float> gmat(static_cast<std::size_t>(g.cout) * cols);
    for (int n = 0; n < g.n; ++n) {
      for (int co = 0; co < g.cout; ++co) {
        const float* src = gout.data() + (static_cast<std::size_t>(n) * g.cout + co) * g.positions();
        float* dst = gmat.data() + static_cast<std::size_t>(co) * cols +
                     static_cast<std::size_t>(n) * g.positions();
        std::copy(src, src + g.positions(), dst);
      }
    }
    if (bn->requires_grad) {
      auto& db = bn->ensure_grad();
      for (int co = 0; co < g.cout; ++co) {
        float acc = 0.0f;
        const float* row = gmat.data() + static_cast<std::size_t>(co) * cols;
        for (int p = 0; p < cols; ++p) acc += row[p];
        db[co] += acc;
      }
    }
    if (wn->requires_grad) {
      std::vector<float> col;
      im2col(g, xn->data.data(), col);
      auto& dw = wn->ensure_grad();
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, g.cout, k, cols, 1.0f, gmat.data(),
                  cols, col.data(), cols, 1.0f, dw.data(), k);
    }
    if (xn->requires_grad) {
      std::vector<float> dcol(static_cast<std::size_t>(k) * cols);
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, cols, g.cout, 1.0f,
                  wn->data.data(), k, gmat.data(), cols, 0.0f, dcol.data(), cols);
      col2im_add(g, dcol, xn->ensure_grad().data());
    }
  };
  return Tensor::make_result({g.n, g.cout, g.ho, g.wo}, std::move(out), "conv2d",
                             {input, weight, bias}, std::move(backward));
}

Tensor relu(const Tensor& x) {
  auto in = x.data();
  std::vector<float> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
  Node* xn = x.node().get();
  auto backward = [xn](std::span<const float> gout) {
    auto& dx = xn->ensure_grad();
    for (std::size_t i = 0; i < gout.size(); ++i) {
      if (xn->data[i] > 0.0f) dx[i] += gout[i];
    }
  };
  return Tensor::make_result(x.shape(), std::move(out), "relu", {x}, std::move(backward));
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride) {
  require_rank(x, 4, "max_pool2d input");
  if (kernel < 1 || stride < 1) throw ShapeError("max_pool2d: kernel and stride must be >= 1");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < kernel || w < kernel) {
    throw ShapeError("max_pool2d: window " + std::to_string(kernel) + " exceeds input " +
                     shape_str(x.shape()));
  }
  const auto ho = (h - kernel) / stride + 1;
  const auto wo = (w - kernel) / stride + 1;
  std::vector<float> out(static_cast<std::size_t>(n * c * ho * wo));
  std::vector<std::int64_t> argmax(out.size());
  auto in = x.data();
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* src = in.data() + plane * h * w;
    for (std::int64_t oh = 0; oh < ho; ++oh) {
      for (std::int64_t ow = 0; ow < wo; ++ow) {
        float best = -std::numeric_limits<float>::infinity();
        std::int64_t best_idx = 0;
        for (int ki = 0; ki < kernel; ++ki) {
          for (int kj = 0; kj < kernel; ++kj) {
            const auto idx = (oh * stride + ki) * w + (ow * stride + kj);
            if (src[idx] > best) {
              best = src[idx];
              best_idx = idx;
            }
          }
        }
        const auto o = (plane * ho + oh) * wo + ow;
        out[o] = best;
        argmax[o] = plane * h * w + best_idx;
      }
    }
  }
  Node* xn = x.node().get();
  auto backward = [xn, argmax = std::move(argmax)](std::span<const float> gout) {
    auto& dx = xn->ensure_grad();
    for (std::size_t i = 0; i < gout.size(); ++i) dx[argmax[i]] += gout[i];
  };
  return Tensor::make_result({n, c, ho, wo}, std::move(out), "max_pool2d", {x},
                             std::move(backward));
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool input");
  const auto n = x.dim(0), c = x.dim(1), area = x.dim(2) * x.dim(3);
  std::vector<float> out(static_cast<std::size_t>(n * c));
  auto in = x.data();
  const float inv = 1.0f / static_cast<float>(area);
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    float acc = 0.0f;
    for (std::int64_t i = 0; i < area; ++i) acc += in[plane * area + i];
    out[plane] = acc * inv;
  }
  Node* xn = x.node().get();
  auto backward = [xn, area, inv](std::span<const float> gout) {
    auto& dx = xn->ensure_grad();
    for (std::size_t plane = 0; plane < gout.size(); ++plane) {
      const float gv = gout[plane] * inv;
      for (std::int64_t i = 0; i < area; ++i) dx[plane * area + i] += gv;
    }
  };
  return Tensor::make_result({n, c}, std::move(out), "global_avg_pool", {x}, std::move(backward));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  require_rank(bias, 1, "linear bias");
  if (x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input features " + std::to_string(x.dim(1)) +
                     " do not match weight " + shape_str(weight.shape()));
  }
  if (bias.dim(0) != weight.dim(0)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  const int n = static_cast<int>(x.dim(0));
  const int in = static_cast<int>(x.dim(1));
  const int out_f = static_cast<int>(weight.dim(0));
  std::vector<float> out(static_cast<std::size_t>(n) * out_f);
  const float* b = bias.data().data();
  for (int i = 0; i < n; ++i) std::copy(b, b + out_f, out.data() + static_cast<std::size_t>(i) * out_f);
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, n, out_f, in, 1.0f, x.data().data(), in,
              weight.data().data(), in, 1.0f, out.data(), out_f);

  Node* xn = x.node().get();
  Node* wn = weight.node().get();
  Node* bn = bias.node().get();
  auto backward = [n, in, out_f, xn, wn, bn](std::span<const float> gout) {
    if (xn->requires_grad) {
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, n, in, out_f, 1.0f, gout.data(),
                  out_f, wn->data.data(), in, 1.0f, xn->ensure_grad().data(), in);
    }
    if (wn->requires_grad) {
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, out_f, in, n, 1.0f, gout.data(), out_f,
                  xn->data.data(), in, 1.0f, wn->ensure_grad().data(), in);
    }
    if (bn->requires_grad) {
      auto& db = bn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        for (int o = 0; o < out_f; ++o) db[o] += gout[static_cast<std::size_t>(i) * out_f + o];
      }
    }
  };
  return Tensor::make_result({n, out_f}, std::move(out), "linear", {x, weight, bias},
                             std::move(backward));
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy logits");
  const auto n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(n));
  }
  auto z = logits.data();
  std::vector<float> probs(z.size());
  float loss = 0.0f;
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || label >= k) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(label) +
                       " outside [0," + std::to_string(k) + ")");
    }
    const float* row = z.data() + i * k;
    const float mx = *std::max_element(row, row + k);
    float denom = 0.0f;
    for (std::int64_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(row[j] - mx);
      denom += probs[i * k + j];
    }
    for (std::int64_t j = 0; j < k; ++j) probs[i * k + j] /= denom;
    loss += -(row[label] - mx - std::log(denom));
  }
  loss /= static_cast<float>(n);

  Node* zn = logits.node().get();
  std::vector<int> targets(labels.begin(), labels.end());
  auto backward = [zn, n, k, probs = std::move(probs),
                   targets = std::move(targets)](std::span<const float> gout) {
    auto& dz = zn->ensure_grad();
    const float g = gout[0] / static_cast<float>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < k; ++j) {
        const float onehot = (j == targets[i]) ? 1.0f : 0.0f;
        dz[i * k + j] += g * (probs[i * k + j] - onehot);
      }
    }
  };
  return Tensor::make_result({1}, {loss}, "softmax_cross_entropy", {logits}, std::move(backward));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.data();
  auto y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  auto backward = [an, bn](std::span<const float> gout) {
    for (Node* node : {an, bn}) {
      if (!node->requires_grad) continue;
      auto& d = node->ensure_grad();
      for (std::size_t i = 0; i < gout.size(); ++i) d[i] += gout[i];
    }
  };
  return Tensor::make_result(a.shape(), std::move(out), "add", {a, b}, std::move(backward));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data();
  auto y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  auto backward = [an, bn](std::span<const float> gout) {
    if (an->requires_grad) {
      auto& d = an->ensure_grad();
      for (std::size_t i = 0; i < gout.size(); ++i) d[i] += gout[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& d = bn->ensure_grad();
      for (std::size_t i = 0; i < gout.size(); ++i) d[i] += gout[i] * an->data[i];
    }
  };
  return Tensor::make_result(a.shape(), std::move(out), "mul", {a, b}, std::move(backward));
}

Tensor channel_scale(const Tensor& x, const Tensor& scale) {
  if (x.rank() < 2) throw ShapeError("channel_scale: input must have a channel axis");
  require_rank(scale, 1, "channel_scale factors");
  const auto n = x.dim(0), c = x.dim(1);
  if (scale.dim(0) != c) {
    throw ShapeError("channel_scale: " + std::to_string(scale.dim(0)) + " factors for " +
                     std::to_string(c) + " channels");
  }
  const auto inner = x.numel() / (n * c);
  auto in = x.data();
  auto s = scale.data();
  std::vector<float> out(in.size());
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto base = (i * c + ch) * inner;
      for (std::int64_t p = 0; p < inner; ++p) out[base + p] = in[base + p] * s[ch];
    }
  }
  Node* xn = x.node().get();
  Node* sn = scale.node().get();
  auto backward = [xn, sn, n, c, inner](std::span<const float> gout) {
    if (xn->requires_grad) {
      auto& dx = xn->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const auto base = (i * c + ch) * inner;
          const float sv = sn->data[ch];
          for (std::int64_t p = 0; p < inner; ++p) dx[base + p] += gout[base + p] * sv;
        }
      }
    }
    if (sn->requires_grad) {
      auto& ds = sn->ensure_grad();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        float acc = 0.0f;
        for (std::int64_t i = 0; i < n; ++i) {
          const auto base = (i * c + ch) * inner;
          for (std::int64_t p = 0; p < inner; ++p) acc += gout[base + p] * xn->data[base + p];
        }
        ds[ch] += acc;
      }
    }
  };
  return Tensor::make_result(x.shape(), std::move(out), "channel_scale", {x, scale},
                             std::move(backward));
}

Tensor sum(const Tensor& x) {
  float acc = 0.0f;
  for (float v : x.data()) acc += v;
  Node* xn = x.node().get();
  auto backward = [xn](std::span<const float> gout) {
    auto& dx = xn->ensure_grad();
    for (auto& d : dx) d += gout[0];
  };
  return Tensor::make_result({1}, {acc}, "sum", {x}, std::move(backward));
}

Tensor scale(const Tensor& x, float factor) {
  auto in = x.data();
  std::vector<float> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
  Node* xn = x.node().get();
  auto backward = [xn, factor](std::span<const float> gout) {
    auto& dx = xn->ensure_grad();
    for (std::size_t i = 0; i < gout.size(); ++i) dx[i] += gout[i] * factor;
  };
  return Tensor::make_result(x.shape(), std::move(out), "scale", {x}, std::move(backward));
}

}  // namespace transtailor::ops
