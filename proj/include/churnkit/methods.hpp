#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "churnkit/dataio.hpp"
#include "churnkit/nn.hpp"

namespace churnkit {

enum class MethodKind { erm, swa, mc_dropout, deep_ensemble, bagging, twin };
enum class OverlapMode { disjoint, bootstrap, shared };

struct MethodSpec {
  MethodKind kind = MethodKind::erm;
  std::size_t ensemble_size = 5;  // K for bagging / deep ensemble
  std::size_t mc_passes = 20;     // T for MC dropout inference
  double lambda = 0.0;            // twin consistency weight
  OverlapMode overlap = OverlapMode::bootstrap;
  TrainConfig train;
};

std::string method_label(const MethodSpec& spec);
const char* method_kind_name(MethodKind kind);
const char* overlap_mode_name(OverlapMode mode);

// Trained model plus its inference rule. members holds 1 network (erm, swa,
// mc_dropout), 2 (twin), or K (bagging, deep ensemble); classification
// inference averages member softmax outputs, regression averages scalars.
// MC dropout instead averages mc_passes mask-seeded stochastic forwards of
// its single network (mask stream keyed by (train_seed, pass)).
struct Predictor {
  MethodKind kind = MethodKind::erm;
  Task task = Task::binary_classification;
  std::vector<MlpParams> members;
  double dropout_p = 0.0;
  std::size_t mc_passes = 0;
  std::uint64_t train_seed = 0;
};

// Seed-key discipline shared by every trainer: member m of train seed s draws
// its bootstrap from stream ("bootstrap", combine(s, m)), its weights from
// ("init", combine(s, m)), and its epoch orders from ("shuffle", s, m, epoch).
// ERM is member 0, so bagging K=1 reproduces it bit-for-bit, and twin heads
// are members 0 and 1, so twin at lambda=0 in bootstrap mode reproduces
// bagging K=2 bit-for-bit.
Predictor train_erm(const Dataset& ds, const IndexList& pool,
                    const TrainConfig& cfg, std::uint64_t train_seed);
Predictor train_swa(const Dataset& ds, const IndexList& pool,
                    const TrainConfig& cfg, std::uint64_t train_seed);
Predictor train_mc_dropout(const Dataset& ds, const IndexList& pool,
                           const TrainConfig& cfg, std::uint64_t train_seed,
                           std::size_t mc_passes = 20);
Predictor train_deep_ensemble(const Dataset& ds, const IndexList& pool,
                              const TrainConfig& cfg, std::uint64_t train_seed,
                              std::size_t k);
Predictor train_bagging(const Dataset& ds, const IndexList& pool,
                        const TrainConfig& cfg, std::uint64_t train_seed,
                        std::size_t k);

struct TwinDiagnostics {
  double mean_loader_overlap = 0.0;  // shared-unique fraction, mean over epochs
  std::size_t zipped_batches = 0;    // per-epoch batch count
};

Predictor train_twin(const Dataset& ds, const IndexList& pool,
                     const TrainConfig& cfg, std::uint64_t train_seed,
                     double lambda, OverlapMode mode = OverlapMode::bootstrap,
                     TwinDiagnostics* diag = nullptr);

Predictor train_method(const Dataset& ds, const IndexList& pool,
                       const MethodSpec& spec, std::uint64_t train_seed);

// classification: n x 2 rows on the simplex; regression: n x 1.
Matrix predict(const Predictor& p, const Matrix& x);
// One member's prediction under the same output convention.
Matrix predict_single(const MlpParams& params, Task task, const Matrix& x);

// Reconstructs the twin loader draws for the given keys (no training) and
// returns the mean per-epoch shared-unique overlap fraction.
double twin_loader_overlap(const IndexList& pool, std::uint64_t train_seed,
                           OverlapMode mode, std::size_t epochs);

}  // namespace churnkit
