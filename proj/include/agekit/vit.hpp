#pragma once

// Small pre-norm vision transformer (DeiT layout) with explicit reverse-mode
// gradients. Single-channel input, learned [CLS] token and positional
// embeddings, final-layer [CLS] attention exposed per head.
//
// Everything is templated on the scalar type: training runs in float, the
// gradient check in double.

#include "agekit/core.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

namespace agekit {

struct ViTConfig {
  int image_size = 224;
  int patch_size = 16;
  int embed_dim = 96;
  int depth = 4;
  int num_heads = 6;
  double mlp_ratio = 4.0;
  int num_register_tokens = 0;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int tokens() const { return num_patches() + 1; }
  int head_dim() const { return embed_dim / num_heads; }
  int mlp_hidden() const { return static_cast<int>(std::lround(embed_dim * mlp_ratio)); }

  void validate() const {
    if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0)
      throw ConfigError("image_size must be a positive multiple of patch_size");
    if (num_heads <= 0 || embed_dim <= 0 || embed_dim % num_heads != 0)
      throw ConfigError("embed_dim must be a positive multiple of num_heads");
    if (depth <= 0) throw ConfigError("depth must be positive");
    if (mlp_hidden() <= 0) throw ConfigError("mlp_ratio too small");
    if (num_register_tokens != 0) throw ConfigError("register tokens are not supported");
  }

  bool operator==(const ViTConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
struct BlockParams {
  Mat<T> ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
  Mat<T> ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;

  template <class Self, class F>
  static void visit(Self& self, const std::string& p, F&& f) {
    f(p + "ln1.g", self.ln1_g);
    f(p + "ln1.b", self.ln1_b);
    f(p + "attn.qkv.w", self.qkv_w);
    f(p + "attn.qkv.b", self.qkv_b);
    f(p + "attn.proj.w", self.proj_w);
    f(p + "attn.proj.b", self.proj_b);
    f(p + "ln2.g", self.ln2_g);
    f(p + "ln2.b", self.ln2_b);
    f(p + "mlp.fc1.w", self.fc1_w);
    f(p + "mlp.fc1.b", self.fc1_b);
    f(p + "mlp.fc2.w", self.fc2_w);
    f(p + "mlp.fc2.b", self.fc2_b);
  }
};

template <typename T>
struct VitParams {
  Mat<T> patch_w, patch_b, cls_token, pos_embed;
  std::vector<BlockParams<T>> blocks;
  Mat<T> norm_g, norm_b;

  template <class Self, class F>
  static void visit(Self& self, const std::string& p, F&& f) {
    f(p + "patch_embed.w", self.patch_w);
    f(p + "patch_embed.b", self.patch_b);
    f(p + "cls_token", self.cls_token);
    f(p + "pos_embed", self.pos_embed);
    for (std::size_t i = 0; i < self.blocks.size(); ++i)
      BlockParams<T>::visit(self.blocks[i], p + "blocks." + std::to_string(i) + ".", f);
    f(p + "norm.g", self.norm_g);
    f(p + "norm.b", self.norm_b);
  }
};

/// Linear classification head on the [CLS] embedding.
template <typename T>
struct ClassifierParams {
  VitParams<T> backbone;
  Mat<T> head_w, head_b;

  template <class Self, class F>
  static void visit(Self& self, const std::string& p, F&& f) {
    VitParams<T>::visit(self.backbone, p + "backbone.", f);
    f(p + "head.w", self.head_w);
    f(p + "head.b", self.head_b);
  }
};

/// Projection head: MLP, L2 normalization, then a bias-free output layer
/// whose columns are weight-normalized (unit direction, fixed gain 1).
template <typename T>
struct ProjectionHeadParams {
  Mat<T> fc1_w, fc1_b, fc2_w, fc2_b, last_w;

  template <class Self, class F>
  static void visit(Self& self, const std::string& p, F&& f) {
    f(p + "fc1.w", self.fc1_w);
    f(p + "fc1.b", self.fc1_b);
    f(p + "fc2.w", self.fc2_w);
    f(p + "fc2.b", self.fc2_b);
    f(p + "last.w", self.last_w);
  }
};

template <typename T>
struct DinoNetParams {
  VitParams<T> backbone;
  ProjectionHeadParams<T> head;

  template <class Self, class F>
  static void visit(Self& self, const std::string& p, F&& f) {
    VitParams<T>::visit(self.backbone, p + "backbone.", f);
    ProjectionHeadParams<T>::visit(self.head, p + "head.", f);
  }
};

// Generic helpers over anything exposing a static visit().

template <class P, class F>
void for_each_tensor(P& params, F&& f) {
  P::visit(params, "", f);
}

template <typename T, class P>
std::vector<std::pair<std::string, Mat<T>*>> named_tensors(P& params) {
  std::vector<std::pair<std::string, Mat<T>*>> out;
  P::visit(params, "", [&](const std::string& n, Mat<T>& m) { out.emplace_back(n, &m); });
  return out;
}

template <typename T, class P>
std::vector<std::pair<std::string, const Mat<T>*>> named_tensors(const P& params) {
  std::vector<std::pair<std::string, const Mat<T>*>> out;
  P::visit(params, "", [&](const std::string& n, const Mat<T>& m) { out.emplace_back(n, &m); });
  return out;
}

template <class P>
P zeros_like(const P& params) {
  P z = params;
  P::visit(z, "", [](const std::string&, auto& m) { m.setZero(); });
  return z;
}

template <class P>
std::size_t parameter_count(const P& params) {
  std::size_t n = 0;
  P::visit(params, "", [&](const std::string&, const auto& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <class P>
bool params_finite(const P& params) {
  bool ok = true;
  P::visit(params, "", [&](const std::string&, const auto& m) { ok = ok && m.allFinite(); });
  return ok;
}

/// Elementwise a += scale * b over matching tensors.
template <typename T, class P>
void axpy(P& a, const P& b, T scale) {
  auto da = named_tensors<T>(a);
  auto db = named_tensors<T>(b);
  for (std::size_t i = 0; i < da.size(); ++i) *da[i].second += scale * *db[i].second;
}

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

template <typename T>
Mat<T> trunc_normal(int rows, int cols, double std, Rng& rng) {
  std::normal_distribution<double> nd(0.0, std);
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double v;
    do v = nd(rng);
    while (std::abs(v) > 2 * std);
    m.data()[i] = static_cast<T>(v);
  }
  return m;
}

}  // namespace detail

/// Truncated-normal initialization (cut at 2 std). Linear and patch weights
/// use std 1/sqrt(fan_in) unless `std` is positive, in which case every
/// weight uses it; [CLS] and positional embeddings use 0.02. Biases are zero,
/// LayerNorm gains one.
template <typename T>
VitParams<T> init_vit(const ViTConfig& cfg, Rng& rng, double std = -1) {
  cfg.validate();
  const int D = cfg.embed_dim, P2 = cfg.patch_size * cfg.patch_size, H = cfg.mlp_hidden();
  auto w = [&](int fan_in, int fan_out) {
    return detail::trunc_normal<T>(fan_in, fan_out, std > 0 ? std : 1.0 / std::sqrt(fan_in), rng);
  };
  const double emb_std = std > 0 ? std : 0.02;
  VitParams<T> p;
  p.patch_w = w(P2, D);
  p.patch_b = Mat<T>::Zero(1, D);
  p.cls_token = detail::trunc_normal<T>(1, D, emb_std, rng);
  p.pos_embed = detail::trunc_normal<T>(cfg.tokens(), D, emb_std, rng);
  for (int l = 0; l < cfg.depth; ++l) {
    BlockParams<T> b;
    b.ln1_g = Mat<T>::Ones(1, D);
    b.ln1_b = Mat<T>::Zero(1, D);
    b.qkv_w = w(D, 3 * D);
    b.qkv_b = Mat<T>::Zero(1, 3 * D);
    b.proj_w = w(D, D);
    b.proj_b = Mat<T>::Zero(1, D);
    b.ln2_g = Mat<T>::Ones(1, D);
    b.ln2_b = Mat<T>::Zero(1, D);
    b.fc1_w = w(D, H);
    b.fc1_b = Mat<T>::Zero(1, H);
    b.fc2_w = w(H, D);
    b.fc2_b = Mat<T>::Zero(1, D);
    p.blocks.push_back(std::move(b));
  }
  p.norm_g = Mat<T>::Ones(1, D);
  p.norm_b = Mat<T>::Zero(1, D);
  return p;
}

template <typename T>
ClassifierParams<T> init_classifier(const VitParams<T>& backbone, int num_classes, Rng& rng) {
  ClassifierParams<T> c;
  c.backbone = backbone;
  c.head_w = detail::trunc_normal<T>(static_cast<int>(backbone.norm_g.cols()), num_classes, 0.02, rng);
  c.head_b = Mat<T>::Zero(1, num_classes);
  return c;
}

template <typename T>
ProjectionHeadParams<T> init_projection_head(int embed_dim, int hidden, int bottleneck, int out_dim, Rng& rng) {
  ProjectionHeadParams<T> h;
  h.fc1_w = detail::trunc_normal<T>(embed_dim, hidden, 1.0 / std::sqrt(embed_dim), rng);
  h.fc1_b = Mat<T>::Zero(1, hidden);
  h.fc2_w = detail::trunc_normal<T>(hidden, bottleneck, 1.0 / std::sqrt(hidden), rng);
  h.fc2_b = Mat<T>::Zero(1, bottleneck);
  h.last_w = detail::trunc_normal<T>(bottleneck, out_dim, 1.0 / std::sqrt(bottleneck), rng);
  return h;
}

// ---------------------------------------------------------------------------
// Primitives

/// Splits an image into non-overlapping patches, one flattened patch per
/// row, patches in row-major grid order.
template <typename T, typename Derived>
Mat<T> patchify(const Eigen::MatrixBase<Derived>& image, int patch_size) {
  const auto rows = image.rows(), cols = image.cols();
  if (patch_size <= 0 || rows % patch_size != 0 || cols % patch_size != 0)
    throw ShapeError("image " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " is not divisible into patches of " + std::to_string(patch_size));
  const auto gr = rows / patch_size, gc = cols / patch_size;
  Mat<T> out(gr * gc, patch_size * patch_size);
  for (Eigen::Index pr = 0; pr < gr; ++pr)
    for (Eigen::Index pc = 0; pc < gc; ++pc)
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          out(pr * gc + pc, y * patch_size + x) = static_cast<T>(image(pr * patch_size + y, pc * patch_size + x));
  return out;
}

template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, LayerNormCache<T>* cache, T eps = T(1e-6)) {
  const auto n = x.cols();
  Mat<T> xhat(x.rows(), n);
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).eval();
    const T var = centered.square().sum() / static_cast<T>(n);
    rstd(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = centered * rstd(r);
  }
  Mat<T> y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const LayerNormCache<T>& c, const Mat<T>& g, Mat<T>& dg, Mat<T>& db) {
  const auto n = static_cast<T>(dy.cols());
  dg.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  Mat<T> dxhat = dy.array().rowwise() * g.row(0).array();
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const T m1 = dxhat.row(r).sum() / n;
    const T m2 = dxhat.row(r).dot(c.xhat.row(r)) / n;
    dx.row(r) = c.rstd(r) * (dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2);
  }
  return dx;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

template <typename T>
void softmax_rows_inplace(Mat<T>& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const T mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}

/// Bilinear resampling matrix (dst_grid² × src_grid²) with half-pixel
/// centers; used to adapt positional embeddings to other crop sizes.
template <typename T>
Mat<T> grid_resample_matrix(int src_grid, int dst_grid) {
  Mat<T> m = Mat<T>::Zero(dst_grid * dst_grid, src_grid * src_grid);
  const double scale = static_cast<double>(src_grid) / dst_grid;
  auto axis = [&](int i, int& i0, int& i1, double& w) {
    const double f = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(src_grid - 1));
    i0 = static_cast<int>(f);
    i1 = std::min(i0 + 1, src_grid - 1);
    w = f - i0;
  };
  for (int r = 0; r < dst_grid; ++r) {
    int y0, y1;
    double wy;
    axis(r, y0, y1, wy);
    for (int c = 0; c < dst_grid; ++c) {
      int x0, x1;
      double wx;
      axis(c, x0, x1, wx);
      const int row = r * dst_grid + c;
      m(row, y0 * src_grid + x0) += static_cast<T>((1 - wy) * (1 - wx));
      m(row, y0 * src_grid + x1) += static_cast<T>((1 - wy) * wx);
      m(row, y1 * src_grid + x0) += static_cast<T>(wy * (1 - wx));
      m(row, y1 * src_grid + x1) += static_cast<T>(wy * wx);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
struct BlockCache {
  Mat<T> a, qkv, o, b, h, g;
  LayerNormCache<T> ln1, ln2;
  std::vector<Mat<T>> attn;  // per head, tokens × tokens
};

template <typename T>
struct VitCache {
  Mat<T> patches;
  int grid = 0;
  Mat<T> pos_resample;  // empty when grid matches the configured grid
  std::vector<BlockCache<T>> blocks;
  LayerNormCache<T> norm;  // [CLS] row only
};

/// Per-head [CLS]-query attention of one layer, reshaped to the patch grid.
struct AttentionHeadMaps {
  int layer = 0;
  std::vector<Mat<double>> maps;      // num_heads × (grid × grid)
  std::vector<double> cls_self_attention;  // per head, mass on [CLS] itself
};

namespace detail {

template <typename T>
void check_finite(const VitParams<T>& p) {
  if (!params_finite(p)) throw NumericError("non-finite backbone parameters");
}

template <typename T>
AttentionHeadMaps to_head_maps(const BlockCache<T>& bc, int layer, int grid) {
  AttentionHeadMaps out;
  out.layer = layer;
  for (const auto& a : bc.attn) {
    Mat<double> m(grid, grid);
    for (int i = 0; i < grid * grid; ++i) m(i / grid, i % grid) = static_cast<double>(a(0, i + 1));
    out.maps.push_back(std::move(m));
    out.cls_self_attention.push_back(static_cast<double>(a(0, 0)));
  }
  return out;
}

}  // namespace detail

/// Runs the backbone on one square image whose side is any multiple of the
/// patch size (positional embeddings are bilinearly resampled when the grid
/// differs from the configured one). Returns the normalized [CLS] embedding
/// (1 × embed_dim). `cache` is filled for backward when non-null.
template <typename T, typename Derived>
Mat<T> vit_embed(const VitParams<T>& p, const ViTConfig& cfg, const Eigen::MatrixBase<Derived>& image,
                 VitCache<T>* cache = nullptr, AttentionHeadMaps* final_attention = nullptr) {
  if (image.rows() != image.cols()) throw ShapeError("backbone expects square images");
  const int D = cfg.embed_dim, nh = cfg.num_heads, dh = cfg.head_dim();
  VitCache<T> local;
  VitCache<T>& c = cache ? *cache : local;
  c.patches = patchify<T>(image, cfg.patch_size);
  c.grid = static_cast<int>(image.rows()) / cfg.patch_size;
  const int N = c.grid * c.grid, Tn = N + 1;

  Mat<T> x(Tn, D);
  x.row(0) = p.cls_token.row(0) + p.pos_embed.row(0);
  Mat<T> emb = (c.patches * p.patch_w).rowwise() + p.patch_b.row(0);
  if (c.grid == cfg.grid()) {
    c.pos_resample.resize(0, 0);
    x.bottomRows(N) = emb + p.pos_embed.bottomRows(N);
  } else {
    c.pos_resample = grid_resample_matrix<T>(cfg.grid(), c.grid);
    x.bottomRows(N) = emb + c.pos_resample * p.pos_embed.bottomRows(cfg.num_patches());
  }

  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  c.blocks.resize(p.blocks.size());
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    const auto& bp = p.blocks[l];
    auto& bc = c.blocks[l];
    bc.a = layer_norm(x, bp.ln1_g, bp.ln1_b, &bc.ln1);
    bc.qkv = (bc.a * bp.qkv_w).rowwise() + bp.qkv_b.row(0);
    bc.o.resize(Tn, D);
    bc.attn.resize(nh);
    for (int h = 0; h < nh; ++h) {
      const auto q = bc.qkv.middleCols(h * dh, dh);
      const auto k = bc.qkv.middleCols(D + h * dh, dh);
      const auto v = bc.qkv.middleCols(2 * D + h * dh, dh);
      Mat<T> s = (q * k.transpose()) * scale;
      softmax_rows_inplace(s);
      bc.o.middleCols(h * dh, dh) = s * v;
      bc.attn[h] = std::move(s);
    }
    x += (bc.o * bp.proj_w).rowwise() + bp.proj_b.row(0);
    bc.b = layer_norm(x, bp.ln2_g, bp.ln2_b, &bc.ln2);
    bc.h = (bc.b * bp.fc1_w).rowwise() + bp.fc1_b.row(0);
    bc.g = bc.h.unaryExpr([](T v) { return gelu(v); });
    x += (bc.g * bp.fc2_w).rowwise() + bp.fc2_b.row(0);
  }
  if (final_attention && !c.blocks.empty())
    *final_attention = detail::to_head_maps(c.blocks.back(), static_cast<int>(c.blocks.size()) - 1, c.grid);
  Mat<T> cls = x.topRows(1);
  return layer_norm(cls, p.norm_g, p.norm_b, &c.norm);
}

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(embedding).
template <typename T>
void vit_backward(const VitParams<T>& p, const ViTConfig& cfg, const VitCache<T>& c, const Mat<T>& d_embed,
                  VitParams<T>& grad) {
  const int D = cfg.embed_dim, nh = cfg.num_heads, dh = cfg.head_dim();
  const int N = c.grid * c.grid, Tn = N + 1;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  Mat<T> dx = Mat<T>::Zero(Tn, D);
  dx.topRows(1) = layer_norm_backward(d_embed, c.norm, p.norm_g, grad.norm_g, grad.norm_b);

  for (int l = static_cast<int>(p.blocks.size()) - 1; l >= 0; --l) {
    const auto& bp = p.blocks[l];
    const auto& bc = c.blocks[l];
    auto& bg = grad.blocks[l];

    // MLP branch.
    bg.fc2_w.noalias() += bc.g.transpose() * dx;
    bg.fc2_b.row(0) += dx.colwise().sum();
    Mat<T> dh_pre = dx * bp.fc2_w.transpose();
    dh_pre.array() *= bc.h.unaryExpr([](T v) { return gelu_grad(v); }).array();
    bg.fc1_w.noalias() += bc.b.transpose() * dh_pre;
    bg.fc1_b.row(0) += dh_pre.colwise().sum();
    Mat<T> db = dh_pre * bp.fc1_w.transpose();
    dx += layer_norm_backward(db, bc.ln2, bp.ln2_g, bg.ln2_g, bg.ln2_b);

    // Attention branch.
    bg.proj_w.noalias() += bc.o.transpose() * dx;
    bg.proj_b.row(0) += dx.colwise().sum();
    Mat<T> d_o = dx * bp.proj_w.transpose();
    Mat<T> dqkv(Tn, 3 * D);
    for (int h = 0; h < nh; ++h) {
      const auto& a = bc.attn[h];
      const auto q = bc.qkv.middleCols(h * dh, dh);
      const auto k = bc.qkv.middleCols(D + h * dh, dh);
      const auto v = bc.qkv.middleCols(2 * D + h * dh, dh);
      const auto doh = d_o.middleCols(h * dh, dh);
      Mat<T> da = doh * v.transpose();
      dqkv.middleCols(2 * D + h * dh, dh) = a.transpose() * doh;
      const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = (da.array() * a.array()).rowwise().sum();
      Mat<T> ds = (a.array() * (da.array().colwise() - rowdot.array())) * scale;
      dqkv.middleCols(h * dh, dh) = ds * k;
      dqkv.middleCols(D + h * dh, dh) = ds.transpose() * q;
    }
    bg.qkv_w.noalias() += bc.a.transpose() * dqkv;
    bg.qkv_b.row(0) += dqkv.colwise().sum();
    Mat<T> da_in = dqkv * bp.qkv_w.transpose();
    dx += layer_norm_backward(da_in, bc.ln1, bp.ln1_g, bg.ln1_g, bg.ln1_b);
  }

  // Embedding layer.
  grad.cls_token.row(0) += dx.row(0);
  grad.pos_embed.row(0) += dx.row(0);
  const auto dpatch = dx.bottomRows(N);
  if (c.pos_resample.size() == 0)
    grad.pos_embed.bottomRows(N) += dpatch;
  else
    grad.pos_embed.bottomRows(cfg.num_patches()) += c.pos_resample.transpose() * dpatch;
  grad.patch_w.noalias() += c.patches.transpose() * dpatch;
  grad.patch_b.row(0) += dpatch.colwise().sum();
}

// ---------------------------------------------------------------------------
// Heads

template <typename T>
Mat<T> classifier_logits(const ClassifierParams<T>& p, const Mat<T>& embed) {
  return (embed * p.head_w).rowwise() + p.head_b.row(0);
}

template <typename T>
struct ProjectionCache {
  Mat<T> in, h, g, z;
  T norm = 0;
  Mat<T> u;
  Mat<T> w_hat;                            // column-normalized last layer
  Eigen::Matrix<T, 1, Eigen::Dynamic> col_norm;
};

template <typename T>
Mat<T> projection_forward(const ProjectionHeadParams<T>& p, const Mat<T>& embed, ProjectionCache<T>* cache = nullptr) {
  ProjectionCache<T> local;
  auto& c = cache ? *cache : local;
  c.in = embed;
  c.h = (embed * p.fc1_w).rowwise() + p.fc1_b.row(0);
  c.g = c.h.unaryExpr([](T v) { return gelu(v); });
  c.z = (c.g * p.fc2_w).rowwise() + p.fc2_b.row(0);
  c.norm = std::max(c.z.norm(), T(1e-12));
  c.u = c.z / c.norm;
  c.col_norm = p.last_w.colwise().norm().cwiseMax(T(1e-12));
  c.w_hat = p.last_w.array().rowwise() / c.col_norm.array();
  return c.u * c.w_hat;
}

/// Returns d(loss)/d(embedding); accumulates head gradients.
template <typename T>
Mat<T> projection_backward(const ProjectionHeadParams<T>& p, const ProjectionCache<T>& c, const Mat<T>& d_out,
                           ProjectionHeadParams<T>& grad) {
  // logit_k = u . v_k / |v_k|  =>  d/dv_k = (u - (u . v̂_k) v̂_k) / |v_k|
  const Mat<T> proj = c.u * c.w_hat;  // u . v̂_k per column
  const Mat<T> ut_d = c.u.transpose() * d_out;
  grad.last_w.array() +=
      (ut_d.array() - c.w_hat.array().rowwise() * (proj.array() * d_out.array()).row(0)).rowwise() /
      c.col_norm.array();
  Mat<T> du = d_out * c.w_hat.transpose();
  Mat<T> dz = (du - c.u * c.u.cwiseProduct(du).sum()) / c.norm;
  grad.fc2_w.noalias() += c.g.transpose() * dz;
  grad.fc2_b.row(0) += dz.row(0);
  Mat<T> dh = (dz * p.fc2_w.transpose()).cwiseProduct(c.h.unaryExpr([](T v) { return gelu_grad(v); }));
  grad.fc1_w.noalias() += c.in.transpose() * dh;
  grad.fc1_b.row(0) += dh.row(0);
  return dh * p.fc1_w.transpose();
}

// ---------------------------------------------------------------------------
// Batch API

struct ForwardResult {
  Mat<float> embeddings;                          // batch × embed_dim
  std::vector<AttentionHeadMaps> final_attention;  // one per image when captured
};

/// Embeds a batch of images at the configured resolution.
template <typename T>
ForwardResult forward(const std::vector<Image>& images, const VitParams<T>& params, const ViTConfig& cfg,
                      bool capture_attention) {
  detail::check_finite(params);
  ForwardResult out;
  out.embeddings.resize(static_cast<Eigen::Index>(images.size()), cfg.embed_dim);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    if (img.rows() != cfg.image_size || img.cols() != cfg.image_size)
      throw ShapeError("image " + std::to_string(img.rows()) + "x" + std::to_string(img.cols()) +
                       " does not match configured size " + std::to_string(cfg.image_size));
    AttentionHeadMaps maps;
    const Mat<T> e = vit_embed<T>(params, cfg, img.cast<T>().eval(), nullptr, capture_attention ? &maps : nullptr);
    out.embeddings.row(static_cast<Eigen::Index>(i)) = e.row(0).template cast<float>();
    if (capture_attention) out.final_attention.push_back(std::move(maps));
  }
  return out;
}

}  // namespace agekit
