#include "faithscope/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace faithscope {
namespace {

// Forward-mode dual number: value plus one directional derivative.
struct Dual {
  double v = 0.0;
  double d = 0.0;

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
  Dual(double value, double tangent) : v(value), d(tangent) {}

  Dual& operator+=(const Dual& o) {
    v += o.v;
    d += o.d;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    d -= o.d;
    return *this;
  }
  friend Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend Dual operator-(Dual a, const Dual& b) { return a -= b; }
  friend Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
  friend Dual operator/(const Dual& a, const Dual& b) {
    return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
  }
};

Dual sqrt(const Dual& x) {
  const double s = std::sqrt(x.v);
  return {s, x.d / (2.0 * s)};
}
Dual tanh(const Dual& x) {
  const double t = std::tanh(x.v);
  return {t, x.d * (1.0 - t * t)};
}
Dual exp(const Dual& x) {
  const double e = std::exp(x.v);
  return {e, x.d * e};
}

double value_of(double x) { return x; }
double value_of(float x) { return x; }
double value_of(const Dual& x) { return x.v; }

template <typename A>
A gelu(const A& u) {
  using std::tanh;
  const double c = std::sqrt(2.0 / std::numbers::pi);
  const A inner = A(c) * (u + A(0.044715) * u * u * u);
  return A(0.5) * u * (A(1.0) + tanh(inner));
}

// Shared transformer arithmetic. A is the activation scalar, W the weight scalar.
template <typename A, typename W>
class Kernel {
 public:
  Kernel(const ModelConfig& cfg, const Weights<W>& w) : cfg_(cfg), w_(w) {}

  void embed(std::span<const TokenId> tokens, Matrix<A>& x) const {
    const std::size_t d = cfg_.d_model;
    x = Matrix<A>(tokens.size(), d);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        x(i, k) = A(w_.token_embedding(tokens[i], k)) + A(w_.position_embedding(i, k));
      }
    }
  }

  void layer_norm(std::span<const A> x, const std::vector<W>& scale, const std::vector<W>& shift,
                  std::span<A> out) const {
    using std::sqrt;
    const std::size_t d = x.size();
    A mean(0.0);
    for (const A& v : x) mean += v;
    mean = mean / A(static_cast<double>(d));
    A var(0.0);
    for (const A& v : x) var += (v - mean) * (v - mean);
    var = var / A(static_cast<double>(d));
    const A denom = sqrt(var + A(cfg_.norm_eps));
    for (std::size_t k = 0; k < d; ++k) out[k] = (x[k] - mean) / denom * A(scale[k]) + A(shift[k]);
  }

  // y = W x + b for W [rows x cols].
  static void affine(const Matrix<W>& m, const std::vector<W>& b, std::span<const A> x, std::span<A> y) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      A acc(b[r]);
      auto row = m.row(r);
      for (std::size_t c = 0; c < m.cols(); ++c) acc += A(row[c]) * x[c];
      y[r] = acc;
    }
  }

  void block(std::size_t l, Matrix<A>& x) const {
    using std::exp;
    using std::sqrt;
    const auto& b = w_.blocks[l];
    const std::size_t n = x.rows();
    const std::size_t d = cfg_.d_model;
    const std::size_t hd = cfg_.head_dim();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Matrix<A> normed(n, d), q(n, d), k(n, d), v(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      layer_norm(x.row(i), b.ln1_scale, b.ln1_shift, normed.row(i));
      affine(b.wq, b.bq, normed.row(i), q.row(i));
      affine(b.wk, b.bk, normed.row(i), k.row(i));
      affine(b.wv, b.bv, normed.row(i), v.row(i));
    }
    Matrix<A> mixed(n, d);
    std::vector<A> scores(n);
    for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t i = 0; i < n; ++i) {
        double max_score = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          A s(0.0);
          for (std::size_t c = 0; c < hd; ++c) s += q(i, off + c) * k(j, off + c);
          scores[j] = s * A(inv_scale);
          max_score = std::max(max_score, value_of(scores[j]));
        }
        A total(0.0);
        for (std::size_t j = 0; j <= i; ++j) {
          scores[j] = exp(scores[j] - A(max_score));
          total += scores[j];
        }
        for (std::size_t c = 0; c < hd; ++c) {
          A acc(0.0);
          for (std::size_t j = 0; j <= i; ++j) acc += scores[j] * v(j, off + c);
          mixed(i, off + c) = acc / total;
        }
      }
    }
    std::vector<A> attn_out(d), up(cfg_.d_ff), down(d), normed2(d);
    for (std::size_t i = 0; i < n; ++i) {
      affine(b.wo, b.bo, mixed.row(i), attn_out);
      auto xi = x.row(i);
      for (std::size_t c = 0; c < d; ++c) xi[c] += attn_out[c];
      layer_norm(xi, b.ln2_scale, b.ln2_shift, normed2);
      affine(b.w_up, b.b_up, normed2, up);
      for (auto& u : up) u = gelu(u);
      affine(b.w_down, b.b_down, up, down);
      for (std::size_t c = 0; c < d; ++c) xi[c] += down[c];
    }
  }

  void logits(std::span<const A> h, std::span<A> out) const {
    std::vector<A> normed(h.begin(), h.end());
    if (cfg_.final_norm) layer_norm(h, w_.final_scale, w_.final_shift, normed);
    affine(w_.unembedding, w_.output_bias, normed, out);
  }

 private:
  const ModelConfig& cfg_;
  const Weights<W>& w_;
};

void check_tokens(const ModelBundle& bundle, std::span<const TokenId> tokens) {
  const auto& cfg = bundle.config();
  FS_CHECK(!tokens.empty(), ErrorCode::ShapeMismatch, "token sequence is empty");
  FS_CHECK(tokens.size() <= cfg.max_seq, ErrorCode::ShapeMismatch,
           "sequence length " + std::to_string(tokens.size()) + " exceeds max_seq " + std::to_string(cfg.max_seq));
  for (TokenId t : tokens) {
    FS_CHECK(t >= 0 && static_cast<std::size_t>(t) < cfg.vocab_size, ErrorCode::ShapeMismatch,
             "token id " + std::to_string(t) + " outside vocabulary");
  }
}

template <typename T>
void check_hook(const ModelConfig& cfg, std::size_t seq_len, const Hook<T>& hook) {
  FS_CHECK(hook.layer <= cfg.n_layers, ErrorCode::PositionOutOfRange,
           "hook layer " + std::to_string(hook.layer) + " > n_layers");
  for (std::size_t p : hook.positions) {
    FS_CHECK(p < seq_len, ErrorCode::PositionOutOfRange,
             "hook position " + std::to_string(p) + " outside sequence of length " + std::to_string(seq_len));
  }
  if (hook.action == HookAction::overwrite) {
    FS_CHECK(hook.vectors.size() == hook.positions.size(), ErrorCode::ShapeMismatch,
             "overwrite hook needs one vector per position");
    for (const auto& v : hook.vectors) {
      FS_CHECK(v.size() == cfg.d_model, ErrorCode::ShapeMismatch, "overwrite vector length != d_model");
    }
  }
}

template <typename T>
void apply_overwrites(std::size_t layer, std::span<const Hook<T>> hooks, Matrix<T>& x) {
  for (const auto& hook : hooks) {
    if (hook.layer != layer || hook.action != HookAction::overwrite) continue;
    for (std::size_t k = 0; k < hook.positions.size(); ++k) {
      std::copy(hook.vectors[k].begin(), hook.vectors[k].end(), x.row(hook.positions[k]).begin());
    }
  }
}

}  // namespace

template <typename T>
ActivationTrace<T> forward(const ModelBundle& bundle, std::span<const TokenId> tokens,
                           std::span<const Hook<T>> hooks) {
  check_tokens(bundle, tokens);
  const auto& cfg = bundle.config();
  for (const auto& h : hooks) check_hook(cfg, tokens.size(), h);

  Kernel<T, T> kernel(cfg, bundle.weights<T>());
  ActivationTrace<T> trace;
  trace.hidden.reserve(cfg.n_layers + 1);
  Matrix<T> x;
  kernel.embed(tokens, x);
  apply_overwrites<T>(0, hooks, x);
  trace.hidden.push_back(x);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    kernel.block(l, x);
    apply_overwrites<T>(l + 1, hooks, x);
    trace.hidden.push_back(x);
  }
  trace.final_logits = Matrix<T>(tokens.size(), cfg.vocab_size);
  for (std::size_t i = 0; i < tokens.size(); ++i) kernel.logits(x.row(i), trace.final_logits.row(i));
  return trace;
}

template ActivationTrace<float> forward<float>(const ModelBundle&, std::span<const TokenId>,
                                               std::span<const Hook<float>>);
template ActivationTrace<double> forward<double>(const ModelBundle&, std::span<const TokenId>,
                                                 std::span<const Hook<double>>);

std::vector<double> last_logits(const ModelBundle& bundle, std::span<const TokenId> tokens,
                                std::span<const Hook<double>> hooks, Precision precision) {
  if (precision == Precision::f64) {
    auto trace = forward<double>(bundle, tokens, hooks);
    auto row = trace.last_logits();
    return {row.begin(), row.end()};
  }
  std::vector<Hook<float>> narrowed;
  narrowed.reserve(hooks.size());
  for (const auto& h : hooks) {
    Hook<float> f{h.layer, h.positions, h.action, {}};
    for (const auto& v : h.vectors) f.vectors.emplace_back(v.begin(), v.end());
    narrowed.push_back(std::move(f));
  }
  auto trace = forward<float>(bundle, tokens, narrowed);
  auto row = trace.last_logits();
  return {row.begin(), row.end()};
}

std::vector<double> logit_lens(std::span<const double> h, const ModelBundle& bundle) {
  const auto& w = bundle.weights<double>().unembedding;
  FS_CHECK(h.size() == w.cols(), ErrorCode::ShapeMismatch, "logit_lens: vector length != d_model");
  std::vector<double> out(w.rows());
  for (std::size_t v = 0; v < w.rows(); ++v) {
    auto row = w.row(v);
    double acc = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) acc += row[k] * h[k];
    out[v] = acc;
  }
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  FS_CHECK(!logits.empty(), ErrorCode::ShapeMismatch, "log_softmax of empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double l : logits) total += std::exp(l - m);
  const double lse = m + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  FS_CHECK(!logits.empty(), ErrorCode::ShapeMismatch, "softmax of empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += out[i] = std::exp(logits[i] - m);
  for (double& p : out) p /= total;
  return out;
}

HiddenGradient gradient_wrt_hidden(const ModelBundle& bundle, std::span<const TokenId> tokens,
                                   const Hook<double>& patch, Readout readout) {
  const auto& cfg = bundle.config();
  FS_CHECK(patch.action == HookAction::overwrite, ErrorCode::InvalidArgument,
           "gradient_wrt_hidden needs an overwrite hook");
  check_tokens(bundle, tokens);
  check_hook(cfg, tokens.size(), patch);
  FS_CHECK(readout.position < tokens.size(), ErrorCode::PositionOutOfRange, "readout position outside sequence");
  FS_CHECK(readout.token >= 0 && static_cast<std::size_t>(readout.token) < cfg.vocab_size,
           ErrorCode::ShapeMismatch, "readout token outside vocabulary");

  HiddenGradient result;
  result.per_position.assign(patch.positions.size(), std::vector<double>(cfg.d_model, 0.0));
  const bool any_visible = std::any_of(patch.positions.begin(), patch.positions.end(),
                                       [&](std::size_t p) { return p <= readout.position; });
  if (!any_visible) {
    result.readout_before_patch = true;
    return result;
  }

  // Causality: nothing after the readout position matters.
  const std::size_t n = readout.position + 1;
  const std::span<const TokenId> prefix = tokens.first(n);
  std::vector<Hook<double>> hooks{patch};
  auto& kept = hooks.front();
  kept.positions.clear();
  kept.vectors.clear();
  for (std::size_t k = 0; k < patch.positions.size(); ++k) {
    if (patch.positions[k] < n) {
      kept.positions.push_back(patch.positions[k]);
      kept.vectors.push_back(patch.vectors[k]);
    }
  }
  const auto base = forward<double>(bundle, prefix, hooks);
  const Matrix<double>& start = base.hidden[patch.layer];
  const std::vector<double> probs = softmax(base.logits_at(readout.position));

  Kernel<Dual, double> kernel(cfg, bundle.weights<double>());
  Matrix<Dual> x;
  std::vector<Dual> logits(cfg.vocab_size);
  for (std::size_t k = 0; k < patch.positions.size(); ++k) {
    const std::size_t pos = patch.positions[k];
    if (pos >= n) continue;
    for (std::size_t c = 0; c < cfg.d_model; ++c) {
      x = Matrix<Dual>(n, cfg.d_model);
      for (std::size_t i = 0; i < start.size(); ++i) x.data()[i] = Dual(start.data()[i]);
      x(pos, c).d = 1.0;
      for (std::size_t l = patch.layer; l < cfg.n_layers; ++l) kernel.block(l, x);
      kernel.logits(x.row(readout.position), logits);
      double expected = 0.0;
      for (std::size_t y = 0; y < logits.size(); ++y) expected += probs[y] * logits[y].d;
      result.per_position[k][c] = logits[readout.token].d - expected;
    }
  }
  return result;
}

}  // namespace faithscope
