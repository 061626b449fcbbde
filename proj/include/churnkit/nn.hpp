#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "churnkit/dataio.hpp"
#include "churnkit/matrix.hpp"

namespace churnkit {

// Probabilities are clamped at this floor before any logarithm.
inline constexpr double kProbFloor = 1e-12;

struct LayerParams {
  Matrix w;               // out x in, row-major
  std::vector<double> b;  // out
  bool operator==(const LayerParams&) const = default;
};

// Fully-connected ReLU network: dims = [in, hidden..., out]. The output layer
// is linear (logits for classification, a scalar for regression).
struct MlpParams {
  std::vector<LayerParams> layers;
  std::size_t in_dim() const { return layers.front().w.cols(); }
  std::size_t out_dim() const { return layers.back().w.rows(); }
  bool operator==(const MlpParams&) const = default;
};

enum class OptimizerKind { adamw, sgd };

struct TrainConfig {
  std::vector<std::size_t> hidden_dims{256, 256};
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  double dropout_p = 0.0;
  OptimizerKind optimizer = OptimizerKind::adamw;
};

// Glorot-uniform weights (+/- sqrt(6/(fan_in+fan_out))), zero biases, drawn
// layer by layer in row-major order from stream ("init", seed).
MlpParams init_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed);

// Inverted dropout on hidden activations: keep with probability 1-p and scale
// kept units by 1/(1-p). Masks are a pure function of seed (row-major draw
// order per hidden layer), so any forward pass is reproducible.
struct DropoutSpec {
  double p = 0.0;
  std::uint64_t seed = 0;
};

Matrix forward(const MlpParams& params, const Matrix& x,
               const std::optional<DropoutSpec>& dropout = {});

void softmax_rows_inplace(Matrix& logits);
Matrix softmax_rows(const Matrix& logits);

// Mean negative log-likelihood of the labelled class (probabilities clamped).
double loss_ce(const Matrix& probs, std::span<const double> labels);
// Mean squared error over a column of scalar outputs.
double loss_mse(const Matrix& out, std::span<const double> targets);
// Symmetrised KL for one pair of distributions: 0.5*[KL(p||q) + KL(q||p)].
double loss_symkl(std::span<const double> p, std::span<const double> q);
// Mean of loss_symkl over matching rows.
double symkl_mean(const Matrix& p, const Matrix& q);

struct LossGrads {
  double loss = 0.0;
  MlpParams grads;  // same shapes as the parameters
};

// Exact analytic gradients (no autograd). Each returns the batch-mean loss
// and d(loss)/d(params).
LossGrads backward_ce(const MlpParams& params, const Matrix& x,
                      std::span<const double> labels,
                      const std::optional<DropoutSpec>& dropout = {});
LossGrads backward_mse(const MlpParams& params, const Matrix& x,
                       std::span<const double> targets,
                       const std::optional<DropoutSpec>& dropout = {});
// Gradient of mean symmetrised KL against a frozen partner's probabilities;
// only the self network receives gradients.
LossGrads backward_symkl(const MlpParams& params, const Matrix& x,
                         const Matrix& partner_probs);

// Joint consistency-training objective for one step: each net pays its own
// data loss on its own batch plus lambda * 0.5 * [divergence on batch A +
// divergence on batch B], with gradients flowing into both nets. For
// regression the data loss is MSE and the divergence is the MSE between the
// two heads' outputs.
struct TwinGrads {
  double loss = 0.0;
  MlpParams grads_a, grads_b;
};

TwinGrads backward_twin(const MlpParams& a, const MlpParams& b,
                        const Matrix& xa, std::span<const double> ya,
                        const Matrix& xb, std::span<const double> yb,
                        double lambda, Task task);

double global_grad_norm(const MlpParams& grads);
// Scales gradients by clip_norm/norm when the global L2 norm exceeds
// clip_norm; leaves them bitwise untouched otherwise.
void clip_global_norm(MlpParams& grads, double clip_norm);

// AdamW (beta1 0.9, beta2 0.999, eps 1e-8) with decoupled weight decay
// applied as p *= (1 - lr*wd) before the moment update; or plain SGD.
struct OptimizerState {
  MlpParams m, v;
  std::size_t step = 0;
};

OptimizerState make_optimizer_state(const MlpParams& shape);
void optimizer_step(MlpParams& params, OptimizerState& state,
                    const MlpParams& grads, const TrainConfig& cfg);

// Running average of parameter snapshots (stochastic weight averaging).
struct SwaAccumulator {
  MlpParams mean;
  std::size_t count = 0;
};

void swa_update(SwaAccumulator& acc, const MlpParams& params);

// Versioned text checkpoint; numbers round-trip exactly.
void save_params(const MlpParams& params, const std::string& path);
MlpParams load_params(const std::string& path);

}  // namespace churnkit
