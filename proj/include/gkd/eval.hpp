// Copyright (c) 2026 The GKD Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gkd/datagen.hpp"
#include "gkd/models.hpp"
#include "gkd/qsd.hpp"

namespace gkd::eval {

// K x K counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  // Adds cm[label, pred] for every pixel whose label is not ignore_index.
  // Throws DimensionError on length mismatch and ValidationError on classes
  // outside [0, K).
  void update(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> label,
              int ignore_index = data::kIgnoreIndex);

  std::size_t classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
  std::uint64_t total() const;
  // TP / (TP + FP + FN) per class; empty for classes with zero union.
  std::vector<std::optional<double>> class_iou() const;
  void merge(const ConfusionMatrix& other);

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

// Mean IoU over classes with nonzero union. Throws ValidationError when the
// matrix is empty.
double miou(const ConfusionMatrix& cm);

struct DomainReport {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string domain;
  bool seen = false;
  std::size_t samples = 0;
  double miou = 0.0;
  std::vector<std::optional<double>> class_iou;
};

// Labeled samples only; unlabeled ones are skipped. Samples are grouped by
// domain in first-appearance order.
std::vector<DomainReport> evaluate_samples(const models::Encoder& encoder, const models::Decoder& decoder,
                                           const std::vector<const data::Sample*>& samples,
                                           const std::string& run_id = "", std::uint64_t seed = 0);

// One report per domain of the requested splits; source domains are flagged
// seen, target domains unseen.
std::vector<DomainReport> evaluate_domains(const models::Encoder& encoder, const models::Decoder& decoder,
                                           const data::Corpus& corpus, std::span<const data::Split> splits,
                                           const std::string& run_id = "", std::uint64_t seed = 0);

// Arithmetic mean over unseen (or seen) reports; NaN when there are none.
double unseen_average(const std::vector<DomainReport>& reports);
double seen_average(const std::vector<DomainReport>& reports);

std::string reports_csv(const std::vector<DomainReport>& reports, bool header = true);
std::string reports_json(const std::vector<DomainReport>& reports);

struct AttentionDiagnostics {
  double diagonal_mass = 0.0;  // mean_i softmax(W)[i, i]
  double row_entropy = 0.0;    // mean Shannon entropy (nats) of the rows
};

// Computed from the QSD attention map of the head's feature path.
AttentionDiagnostics attention_diagnostics(const qsd::QsdHead& head, const ad::Tensor& v_s,
                                           const ad::Tensor& v_t);
// Same statistics for an arbitrary logit map [B, N, N].
AttentionDiagnostics attention_stats(const ad::Tensor& logits);

// Affine map student -> teacher width.
struct Projection {
  std::size_t in = 0, out = 0;
  std::vector<double> weight;  // [in, out]
  std::vector<double> bias;    // [out]

  std::vector<double> apply(std::span<const double> rows) const;
};

// Least squares fit of teacher rows onto student rows (with intercept) and a
// small ridge term for conditioning.
Projection fit_projection(std::span<const double> student, std::span<const double> teacher, std::size_t in,
                          std::size_t out, double ridge = 1e-6);

struct DistanceSummary {
  std::size_t count = 0;
  double mean = 0.0, median = 0.0, p10 = 0.0, p25 = 0.0, p75 = 0.0, p90 = 0.0, max = 0.0;
};

// Per-row Euclidean distances between projected student rows and teacher
// rows, summarised.
DistanceSummary feature_distance_stats(std::span<const double> student, std::span<const double> teacher,
                                       const Projection& projection);
DistanceSummary summarize(std::vector<double> distances);

// All patch tokens of `samples` as a row-major [count * N, C] matrix.
std::vector<double> collect_tokens(const models::Encoder& encoder, const std::vector<const data::Sample*>& samples);

struct CurveStats {
  std::size_t length = 0;
  double diff_variance = 0.0;  // variance of first differences
  std::size_t spikes = 0;      // steps with loss[i] > 1.05 * loss[i-1]
};

CurveStats curve_stats(std::span<const double> curve);

struct CurveComparison {
  CurveStats a, b;
};

// Both curves must be nonempty and equally long (ValidationError otherwise).
CurveComparison loss_curve_stats(std::span<const double> a, std::span<const double> b);

}  // namespace gkd::eval
