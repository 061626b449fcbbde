#include "churnkit/nn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "churnkit/rng.hpp"

namespace churnkit {

namespace {

void check_dropout(const std::optional<DropoutSpec>& dropout) {
  if (dropout && (dropout->p < 0.0 || dropout->p >= 1.0)) {
    throw std::invalid_argument("dropout probability must be in [0, 1)");
  }
}

bool dropout_active(const std::optional<DropoutSpec>& dropout) {
  return dropout && dropout->p > 0.0;
}

// x: batch x in, layer.w: out x in -> batch x out.
Matrix linear(const Matrix& x, const LayerParams& layer) {
  const std::size_t batch = x.rows(), in = x.cols(), out = layer.w.rows();
  Matrix y(batch, out);
  for (std::size_t r = 0; r < batch; ++r) {
    auto xr = x.row(r);
    auto yr = y.row(r);
    for (std::size_t j = 0; j < out; ++j) {
      auto wj = layer.w.row(j);
      double acc = layer.b[j];
      for (std::size_t k = 0; k < in; ++k) acc += xr[k] * wj[k];
      yr[j] = acc;
    }
  }
  return y;
}

struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre;    // pre-activation per layer
  std::vector<Matrix> act;    // post-ReLU (and dropout) per hidden layer
  std::vector<Matrix> masks;  // scaled dropout masks per hidden layer (may be empty)
  Matrix output;
};

ForwardCache forward_cached(const MlpParams& params, const Matrix& x,
                            const std::optional<DropoutSpec>& dropout) {
  if (params.layers.empty()) throw std::invalid_argument("uninitialised MLP");
  if (x.cols() != params.in_dim()) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) +
                                " features, network expects " +
                                std::to_string(params.in_dim()));
  }
  check_dropout(dropout);
  const bool use_mask = dropout_active(dropout);
  Rng rng = use_mask ? Rng::stream("dropout", {dropout->seed}) : Rng(0);
  const double keep_scale = use_mask ? 1.0 / (1.0 - dropout->p) : 1.0;

  ForwardCache cache;
  cache.input = x;
  const std::size_t n_layers = params.layers.size();
  const Matrix* cur = &cache.input;
  for (std::size_t l = 0; l < n_layers; ++l) {
    cache.pre.push_back(linear(*cur, params.layers[l]));
    if (l + 1 == n_layers) break;
    Matrix a = cache.pre.back();
    for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
    if (use_mask) {
      Matrix mask(a.rows(), a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) {
          mask(r, c) = rng.uniform01() >= dropout->p ? keep_scale : 0.0;
        }
      }
      for (std::size_t i = 0; i < a.data().size(); ++i) {
        a.data()[i] *= mask.data()[i];
      }
      cache.masks.push_back(std::move(mask));
    }
    cache.act.push_back(std::move(a));
    cur = &cache.act.back();
  }
  cache.output = cache.pre.back();
  return cache;
}

MlpParams zero_like(const MlpParams& shape) {
  MlpParams z;
  z.layers.reserve(shape.layers.size());
  for (const auto& layer : shape.layers) {
    z.layers.push_back({Matrix(layer.w.rows(), layer.w.cols()),
                        std::vector<double>(layer.b.size(), 0.0)});
  }
  return z;
}

// Backpropagates d(loss)/d(output) through the cached forward pass,
// accumulating into grads (which must already have the parameter shapes).
void backprop_accumulate(const MlpParams& params, const ForwardCache& cache,
                         const Matrix& d_out, MlpParams& grads) {
  const std::size_t n_layers = params.layers.size();
  Matrix delta = d_out;
  for (std::size_t li = n_layers; li-- > 0;) {
    const Matrix& in_act = li == 0 ? cache.input : cache.act[li - 1];
    auto& g = grads.layers[li];
    const std::size_t batch = delta.rows(), out = delta.cols(), in = in_act.cols();
    for (std::size_t r = 0; r < batch; ++r) {
      auto dr = delta.row(r);
      auto ar = in_act.row(r);
      for (std::size_t j = 0; j < out; ++j) {
        const double dv = dr[j];
        if (dv == 0.0) continue;
        auto gw = g.w.row(j);
        for (std::size_t k = 0; k < in; ++k) gw[k] += dv * ar[k];
        g.b[j] += dv;
      }
    }
    if (li == 0) break;
    Matrix d_in(batch, in);
    const Matrix& w = params.layers[li].w;
    for (std::size_t r = 0; r < batch; ++r) {
      auto dr = delta.row(r);
      auto di = d_in.row(r);
      for (std::size_t j = 0; j < out; ++j) {
        const double dv = dr[j];
        if (dv == 0.0) continue;
        auto wj = w.row(j);
        for (std::size_t k = 0; k < in; ++k) di[k] += dv * wj[k];
      }
    }
    // Gate through dropout, then ReLU, of the layer below.
    if (!cache.masks.empty()) {
      const Matrix& mask = cache.masks[li - 1];
      for (std::size_t i = 0; i < d_in.data().size(); ++i) {
        d_in.data()[i] *= mask.data()[i];
      }
    }
    const Matrix& pre = cache.pre[li - 1];
    for (std::size_t i = 0; i < d_in.data().size(); ++i) {
      if (pre.data()[i] <= 0.0) d_in.data()[i] = 0.0;
    }
    delta = std::move(d_in);
  }
}

std::size_t label_index(double label, std::size_t n_classes) {
  if (label != std::floor(label) || label < 0.0 ||
      label >= static_cast<double>(n_classes)) {
    throw std::invalid_argument("class label out of range");
  }
  return static_cast<std::size_t>(label);
}

// d(mean CE)/d(logits) = (softmax - onehot) / batch.
Matrix ce_output_grad(const Matrix& probs, std::span<const double> labels) {
  Matrix d = probs;
  const double inv_b = 1.0 / static_cast<double>(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    d(r, label_index(labels[r], probs.cols())) -= 1.0;
    for (double& v : d.row(r)) v *= inv_b;
  }
  return d;
}

// d(mean symKL(p, q))/d(self logits) for one row, q frozen:
//   0.5 * (p_k * [(log p_k - log q_k) - KL(p||q)] + p_k - q_k).
void symkl_self_grad_row(std::span<const double> p, std::span<const double> q,
                         double scale, std::span<double> out) {
  const std::size_t c = p.size();
  double kl_pq = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    kl_pq += p[k] * (std::log(std::max(p[k], kProbFloor)) -
                     std::log(std::max(q[k], kProbFloor)));
  }
  for (std::size_t k = 0; k < c; ++k) {
    const double log_ratio = std::log(std::max(p[k], kProbFloor)) -
                             std::log(std::max(q[k], kProbFloor));
    out[k] += scale * 0.5 * (p[k] * (log_ratio - kl_pq) + p[k] - q[k]);
  }
}

}  // namespace

MlpParams init_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  if (dims.size() < 2) {
    throw std::invalid_argument("init_mlp: need at least input and output dims");
  }
  for (std::size_t d : dims) {
    if (d == 0) throw std::invalid_argument("init_mlp: zero-width layer");
  }
  Rng rng = Rng::stream("init", {seed});
  MlpParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l], out = dims[l + 1];
    LayerParams layer{Matrix(out, in), std::vector<double>(out, 0.0)};
    const double limit =
        std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& v : layer.w.data()) {
      v = rng.uniform01() * 2.0 * limit - limit;
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

Matrix forward(const MlpParams& params, const Matrix& x,
               const std::optional<DropoutSpec>& dropout) {
  return forward_cached(params, x, dropout).output;
}

void softmax_rows_inplace(Matrix& logits) {
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  softmax_rows_inplace(p);
  return p;
}

double loss_ce(const Matrix& probs, std::span<const double> labels) {
  if (probs.rows() != labels.size()) {
    throw std::invalid_argument("loss_ce: batch size mismatch");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const std::size_t y = label_index(labels[r], probs.cols());
    total -= std::log(std::max(probs(r, y), kProbFloor));
  }
  return total / static_cast<double>(probs.rows());
}

double loss_mse(const Matrix& out, std::span<const double> targets) {
  if (out.cols() != 1) {
    throw std::invalid_argument("loss_mse: expected a single output column");
  }
  if (out.rows() != targets.size()) {
    throw std::invalid_argument("loss_mse: batch size mismatch");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const double e = out(r, 0) - targets[r];
    total += e * e;
  }
  return total / static_cast<double>(out.rows());
}

double loss_symkl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("loss_symkl: dimension mismatch");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double lp = std::log(std::max(p[k], kProbFloor));
    const double lq = std::log(std::max(q[k], kProbFloor));
    acc += (p[k] - q[k]) * (lp - lq);
  }
  return 0.5 * acc;
}

double symkl_mean(const Matrix& p, const Matrix& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) {
    throw std::invalid_argument("symkl_mean: shape mismatch");
  }
  if (p.rows() == 0) throw std::invalid_argument("symkl_mean: empty input");
  double acc = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    acc += loss_symkl(p.row(r), q.row(r));
  }
  return acc / static_cast<double>(p.rows());
}

LossGrads backward_ce(const MlpParams& params, const Matrix& x,
                      std::span<const double> labels,
                      const std::optional<DropoutSpec>& dropout) {
  ForwardCache cache = forward_cached(params, x, dropout);
  Matrix probs = softmax_rows(cache.output);
  LossGrads out;
  out.loss = loss_ce(probs, labels);
  out.grads = zero_like(params);
  Matrix d_out = ce_output_grad(probs, labels);
  backprop_accumulate(params, cache, d_out, out.grads);
  return out;
}

LossGrads backward_mse(const MlpParams& params, const Matrix& x,
                       std::span<const double> targets,
                       const std::optional<DropoutSpec>& dropout) {
  ForwardCache cache = forward_cached(params, x, dropout);
  LossGrads out;
  out.loss = loss_mse(cache.output, targets);
  out.grads = zero_like(params);
  Matrix d_out(cache.output.rows(), 1);
  const double inv_b = 1.0 / static_cast<double>(cache.output.rows());
  for (std::size_t r = 0; r < cache.output.rows(); ++r) {
    d_out(r, 0) = 2.0 * (cache.output(r, 0) - targets[r]) * inv_b;
  }
  backprop_accumulate(params, cache, d_out, out.grads);
  return out;
}

LossGrads backward_symkl(const MlpParams& params, const Matrix& x,
                         const Matrix& partner_probs) {
  ForwardCache cache = forward_cached(params, x, {});
  Matrix probs = softmax_rows(cache.output);
  if (partner_probs.rows() != probs.rows() ||
      partner_probs.cols() != probs.cols()) {
    throw std::invalid_argument("backward_symkl: partner shape mismatch");
  }
  LossGrads out;
  out.loss = symkl_mean(probs, partner_probs);
  out.grads = zero_like(params);
  Matrix d_out(probs.rows(), probs.cols());
  const double inv_b = 1.0 / static_cast<double>(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    symkl_self_grad_row(probs.row(r), partner_probs.row(r), inv_b, d_out.row(r));
  }
  backprop_accumulate(params, cache, d_out, out.grads);
  return out;
}

TwinGrads backward_twin(const MlpParams& a, const MlpParams& b,
                        const Matrix& xa, std::span<const double> ya,
                        const Matrix& xb, std::span<const double> yb,
                        double lambda, Task task) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  TwinGrads out;
  out.grads_a = zero_like(a);
  out.grads_b = zero_like(b);
  ForwardCache a_on_a = forward_cached(a, xa, {});
  ForwardCache b_on_b = forward_cached(b, xb, {});
  const double inv_ba = 1.0 / static_cast<double>(xa.rows());
  const double inv_bb = 1.0 / static_cast<double>(xb.rows());

  if (task == Task::binary_classification) {
    Matrix p_aa = softmax_rows(a_on_a.output);
    Matrix p_bb = softmax_rows(b_on_b.output);
    out.loss = loss_ce(p_aa, ya) + loss_ce(p_bb, yb);
    Matrix d_aa = ce_output_grad(p_aa, ya);
    Matrix d_bb = ce_output_grad(p_bb, yb);
    if (lambda > 0.0) {
      ForwardCache a_on_b = forward_cached(a, xb, {});
      ForwardCache b_on_a = forward_cached(b, xa, {});
      Matrix p_ab = softmax_rows(a_on_b.output);
      Matrix p_ba = softmax_rows(b_on_a.output);
      out.loss += lambda * 0.5 * (symkl_mean(p_aa, p_ba) + symkl_mean(p_ab, p_bb));
      Matrix d_ab(p_ab.rows(), p_ab.cols());
      Matrix d_ba(p_ba.rows(), p_ba.cols());
      for (std::size_t r = 0; r < xa.rows(); ++r) {
        symkl_self_grad_row(p_aa.row(r), p_ba.row(r), lambda * 0.5 * inv_ba,
                            d_aa.row(r));
        symkl_self_grad_row(p_ba.row(r), p_aa.row(r), lambda * 0.5 * inv_ba,
                            d_ba.row(r));
      }
      for (std::size_t r = 0; r < xb.rows(); ++r) {
        symkl_self_grad_row(p_ab.row(r), p_bb.row(r), lambda * 0.5 * inv_bb,
                            d_ab.row(r));
        symkl_self_grad_row(p_bb.row(r), p_ab.row(r), lambda * 0.5 * inv_bb,
                            d_bb.row(r));
      }
      backprop_accumulate(a, a_on_b, d_ab, out.grads_a);
      backprop_accumulate(b, b_on_a, d_ba, out.grads_b);
    }
    backprop_accumulate(a, a_on_a, d_aa, out.grads_a);
    backprop_accumulate(b, b_on_b, d_bb, out.grads_b);
  } else {
    out.loss = loss_mse(a_on_a.output, ya) + loss_mse(b_on_b.output, yb);
    Matrix d_aa(xa.rows(), 1);
    Matrix d_bb(xb.rows(), 1);
    for (std::size_t r = 0; r < xa.rows(); ++r) {
      d_aa(r, 0) = 2.0 * (a_on_a.output(r, 0) - ya[r]) * inv_ba;
    }
    for (std::size_t r = 0; r < xb.rows(); ++r) {
      d_bb(r, 0) = 2.0 * (b_on_b.output(r, 0) - yb[r]) * inv_bb;
    }
    if (lambda > 0.0) {
      ForwardCache a_on_b = forward_cached(a, xb, {});
      ForwardCache b_on_a = forward_cached(b, xa, {});
      Matrix d_ab(xb.rows(), 1);
      Matrix d_ba(xa.rows(), 1);
      double pair_a = 0.0, pair_b = 0.0;
      for (std::size_t r = 0; r < xa.rows(); ++r) {
        const double diff = a_on_a.output(r, 0) - b_on_a.output(r, 0);
        pair_a += diff * diff;
        d_aa(r, 0) += lambda * 0.5 * 2.0 * diff * inv_ba;
        d_ba(r, 0) -= lambda * 0.5 * 2.0 * diff * inv_ba;
      }
      for (std::size_t r = 0; r < xb.rows(); ++r) {
        const double diff = a_on_b.output(r, 0) - b_on_b.output(r, 0);
        pair_b += diff * diff;
        d_ab(r, 0) += lambda * 0.5 * 2.0 * diff * inv_bb;
        d_bb(r, 0) -= lambda * 0.5 * 2.0 * diff * inv_bb;
      }
      out.loss += lambda * 0.5 * (pair_a * inv_ba + pair_b * inv_bb);
      backprop_accumulate(a, a_on_b, d_ab, out.grads_a);
      backprop_accumulate(b, b_on_a, d_ba, out.grads_b);
    }
    backprop_accumulate(a, a_on_a, d_aa, out.grads_a);
    backprop_accumulate(b, b_on_b, d_bb, out.grads_b);
  }
  return out;
}

double global_grad_norm(const MlpParams& grads) {
  double sq = 0.0;
  for (const auto& layer : grads.layers) {
    for (double v : layer.w.data()) sq += v * v;
    for (double v : layer.b) sq += v * v;
  }
  return std::sqrt(sq);
}

void clip_global_norm(MlpParams& grads, double clip_norm) {
  if (clip_norm <= 0.0) return;
  const double norm = global_grad_norm(grads);
  if (norm <= clip_norm) return;
  const double scale = clip_norm / norm;
  for (auto& layer : grads.layers) {
    for (double& v : layer.w.data()) v *= scale;
    for (double& v : layer.b) v *= scale;
  }
}

OptimizerState make_optimizer_state(const MlpParams& shape) {
  OptimizerState st;
  st.m = zero_like(shape);
  st.v = zero_like(shape);
  return st;
}

namespace {

void adamw_update(std::span<double> p, std::span<double> m, std::span<double> v,
                  std::span<const double> g, double lr, double wd,
                  double bias1, double bias2) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] *= 1.0 - lr * wd;
    m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
    v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
    const double mh = m[i] / bias1;
    const double vh = v[i] / bias2;
    p[i] -= lr * mh / (std::sqrt(vh) + kEps);
  }
}

}  // namespace

void optimizer_step(MlpParams& params, OptimizerState& state,
                    const MlpParams& grads, const TrainConfig& cfg) {
  if (cfg.optimizer == OptimizerKind::sgd) {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      auto& pw = params.layers[l].w.data();
      const auto& gw = grads.layers[l].w.data();
      for (std::size_t i = 0; i < pw.size(); ++i) pw[i] -= cfg.learning_rate * gw[i];
      auto& pb = params.layers[l].b;
      const auto& gb = grads.layers[l].b;
      for (std::size_t i = 0; i < pb.size(); ++i) pb[i] -= cfg.learning_rate * gb[i];
    }
    ++state.step;
    return;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(0.9, t);
  const double bias2 = 1.0 - std::pow(0.999, t);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    adamw_update(params.layers[l].w.data(), state.m.layers[l].w.data(),
                 state.v.layers[l].w.data(), grads.layers[l].w.data(),
                 cfg.learning_rate, cfg.weight_decay, bias1, bias2);
    adamw_update(params.layers[l].b, state.m.layers[l].b, state.v.layers[l].b,
                 grads.layers[l].b, cfg.learning_rate, cfg.weight_decay, bias1,
                 bias2);
  }
}

void swa_update(SwaAccumulator& acc, const MlpParams& params) {
  if (acc.count == 0) {
    acc.mean = params;
    acc.count = 1;
    return;
  }
  const double inv = 1.0 / static_cast<double>(acc.count + 1);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& mw = acc.mean.layers[l].w.data();
    const auto& pw = params.layers[l].w.data();
    for (std::size_t i = 0; i < mw.size(); ++i) mw[i] += (pw[i] - mw[i]) * inv;
    auto& mb = acc.mean.layers[l].b;
    const auto& pb = params.layers[l].b;
    for (std::size_t i = 0; i < mb.size(); ++i) mb[i] += (pb[i] - mb[i]) * inv;
  }
  ++acc.count;
}

namespace {

std::string fmt_full(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

void save_params(const MlpParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << "churnkit-mlp v1 " << params.layers.size() << "\n";
  for (const auto& layer : params.layers) {
    out << "layer " << layer.w.rows() << " " << layer.w.cols() << "\n";
    for (std::size_t r = 0; r < layer.w.rows(); ++r) {
      auto row = layer.w.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        out << (c ? " " : "") << fmt_full(row[c]);
      }
      out << "\n";
    }
    out << "bias";
    for (double v : layer.b) out << " " << fmt_full(v);
    out << "\n";
  }
}

MlpParams load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string magic, version;
  std::size_t n_layers = 0;
  if (!(in >> magic >> version >> n_layers) || magic != "churnkit-mlp" ||
      version != "v1") {
    throw std::invalid_argument("unrecognised checkpoint format: " + path);
  }
  MlpParams p;
  for (std::size_t l = 0; l < n_layers; ++l) {
    std::string tag;
    std::size_t out = 0, inw = 0;
    if (!(in >> tag >> out >> inw) || tag != "layer") {
      throw std::invalid_argument("corrupt checkpoint layer header: " + path);
    }
    LayerParams layer{Matrix(out, inw), std::vector<double>(out, 0.0)};
    for (double& v : layer.w.data()) {
      if (!(in >> v)) throw std::invalid_argument("corrupt checkpoint weights");
    }
    if (!(in >> tag) || tag != "bias") {
      throw std::invalid_argument("corrupt checkpoint bias header");
    }
    for (double& v : layer.b) {
      if (!(in >> v)) throw std::invalid_argument("corrupt checkpoint bias");
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

}  // namespace churnkit
