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

#include "gkd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "gkd/errors.hpp"
#include "gkd/ops.hpp"

namespace gkd::eval {

using ad::Tensor;

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ValidationError("confusion matrix needs at least one class");
}

void ConfusionMatrix::update(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> label,
                             int ignore_index) {
  if (pred.size() != label.size()) {
    throw DimensionError("confusion_update: prediction has " + std::to_string(pred.size()) + " pixels, labels " +
                         std::to_string(label.size()));
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (static_cast<int>(label[i]) == ignore_index) continue;
    if (label[i] >= k_ || pred[i] >= k_) {
      throw ValidationError("confusion_update: class out of range at pixel " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (static_cast<int>(label[i]) == ignore_index) continue;
    ++counts_[label[i] * k_ + pred[i]];
  }
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::vector<std::optional<double>> ConfusionMatrix::class_iou() const {
  std::vector<std::optional<double>> out(k_);
  for (std::size_t c = 0; c < k_; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < k_; ++j) {
      row += at(c, j);
      col += at(j, c);
    }
    const auto tp = at(c, c);
    const auto uni = row + col - tp;
    if (uni > 0) out[c] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return out;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw DimensionError("confusion matrices have different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

namespace {

using u128 = unsigned __int128;

u128 gcd128(u128 a, u128 b) {
  while (b != 0) {
    const u128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

}  // namespace

double miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ValidationError("miou: confusion matrix is empty, metric undefined");
  // Exact rational mean of TP_c / U_c, rounded once; long double fallback on
  // 128-bit overflow.
  u128 num = 0, den = 1;
  bool exact = true;
  long double approx = 0.0L;
  std::size_t n = 0;
  const std::size_t k = cm.classes();
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t tp = cm.at(c, c), uni = row + col - tp;
    if (uni == 0) continue;
    ++n;
    approx += static_cast<long double>(tp) / static_cast<long double>(uni);
    if (!exact) continue;
    u128 l = 0, a = 0, b = 0;
    if (__builtin_mul_overflow(den / gcd128(den, uni), u128{uni}, &l) || __builtin_mul_overflow(num, l / den, &a) || __builtin_mul_overflow(u128{tp}, l / uni, &b) ||
        __builtin_add_overflow(a, b, &num)) {
      exact = false;
      continue;
    }
    den = l;
    const u128 g = gcd128(num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }
  if (exact && !__builtin_mul_overflow(den, u128{n}, &den)) {
    const u128 g = gcd128(num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  }
  return static_cast<double>(approx / static_cast<long double>(n));
}

std::vector<DomainReport> evaluate_samples(const models::Encoder& encoder, const models::Decoder& decoder,
                                           const std::vector<const data::Sample*>& samples, const std::string& run_id,
                                           std::uint64_t seed) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const data::Sample*>> by_domain;
  for (const auto* s : samples) {
    if (!s->labels) continue;
    if (!by_domain.count(s->domain_id)) order.push_back(s->domain_id);
    by_domain[s->domain_id].push_back(s);
  }
  std::vector<DomainReport> out;
  for (const auto& domain : order) {
    const auto& group = by_domain[domain];
    ConfusionMatrix cm(decoder.classes);
    for (std::size_t off = 0; off < group.size(); off += 32) {
      const std::vector<const data::Sample*> chunk(group.begin() + off,
                                                   group.begin() + std::min(group.size(), off + 32));
      const auto pred =
          models::argmax_labels(models::decode(decoder, models::encode(encoder, data::stack_images(chunk)).tokens));
      const std::size_t px = chunk.front()->size * chunk.front()->size;
      for (std::size_t i = 0; i < chunk.size(); ++i) cm.update(std::span(pred).subspan(i * px, px), *chunk[i]->labels);
    }
    DomainReport r;
    r.run_id = run_id;
    r.seed = seed;
    r.domain = domain;
    r.seen = group.front()->split != data::Split::kTarget;
    r.samples = group.size();
    r.miou = miou(cm);
    r.class_iou = cm.class_iou();
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<DomainReport> evaluate_domains(const models::Encoder& encoder, const models::Decoder& decoder,
                                           const data::Corpus& corpus, std::span<const data::Split> splits,
                                           const std::string& run_id, std::uint64_t seed) {
  if (splits.empty()) throw ValidationError("evaluate_domains: no split requested");
  std::vector<const data::Sample*> samples;
  for (auto split : splits) {
    const auto& list = corpus.split(split);
    if (list.empty()) throw ValidationError(std::string("evaluate_domains: split '") + data::split_name(split) + "' is empty");
    bool any_labeled = false;
    for (const auto& s : list) {
      any_labeled = any_labeled || s.labels.has_value();
      samples.push_back(&s);
    }
    if (!any_labeled) {
      throw ValidationError(std::string("evaluate_domains: split '") + data::split_name(split) + "' has no labels");
    }
  }
  return evaluate_samples(encoder, decoder, samples, run_id, seed);
}

namespace {

double average(const std::vector<DomainReport>& reports, bool seen) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : reports) {
    if (r.seen != seen) continue;
    sum += r.miou;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

double unseen_average(const std::vector<DomainReport>& reports) { return average(reports, false); }
double seen_average(const std::vector<DomainReport>& reports) { return average(reports, true); }

std::string reports_csv(const std::vector<DomainReport>& reports, bool header) {
  std::ostringstream out;
  out.precision(17);
  if (header) out << "run_id,seed,domain,seen,samples,miou,iou_0,iou_1,iou_2,iou_3,iou_4\n";
  for (const auto& r : reports) {
    out << r.run_id << ',' << r.seed << ',' << r.domain << ',' << (r.seen ? "seen" : "unseen") << ',' << r.samples
        << ',' << r.miou;
    for (const auto& iou : r.class_iou) {
      out << ',';
      if (iou) out << *iou;
    }
    out << '\n';
  }
  return out.str();
}

std::string reports_json(const std::vector<DomainReport>& reports) {
  nlohmann::ordered_json domains = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json ious = nlohmann::ordered_json::array();
    for (const auto& iou : r.class_iou) ious.push_back(iou ? nlohmann::ordered_json(*iou) : nlohmann::ordered_json());
    domains.push_back({{"run_id", r.run_id},
                       {"seed", r.seed},
                       {"domain", r.domain},
                       {"seen", r.seen},
                       {"samples", r.samples},
                       {"miou", r.miou},
                       {"class_iou", ious}});
  }
  auto json_num = [](double v) { return std::isnan(v) ? nlohmann::ordered_json() : nlohmann::ordered_json(v); };
  nlohmann::ordered_json j = {{"domains", domains},
                              {"seen_average", json_num(seen_average(reports))},
                              {"unseen_average", json_num(unseen_average(reports))}};
  return j.dump(2);
}

AttentionDiagnostics attention_stats(const Tensor& logits) {
  if (logits.rank() != 3 || logits.dim(1) != logits.dim(2)) {
    throw DimensionError("attention_stats: expected [B, N, N], got " + ad::shape_str(logits.shape()));
  }
  const Tensor p = ad::softmax(logits.requires_grad() ? logits.detach() : logits, -1);
  const std::size_t b = logits.dim(0), n = logits.dim(1);
  const auto v = p.values();
  double diag = 0.0, ent = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t r = 0; r < n; ++r) {
      const double* row = v.data() + (i * n + r) * n;
      diag += row[r];
      for (std::size_t c = 0; c < n; ++c) {
        if (row[c] > 0.0) ent -= row[c] * std::log(row[c]);
      }
    }
  }
  const double rows = static_cast<double>(b * n);
  return {diag / rows, std::max(0.0, ent / rows)};
}

AttentionDiagnostics attention_diagnostics(const qsd::QsdHead& head, const Tensor& v_s, const Tensor& v_t) {
  return attention_stats(qsd::attention_map(head, v_s, v_t));
}

std::vector<double> Projection::apply(std::span<const double> rows) const {
  if (rows.size() % in != 0) throw DimensionError("projection: row width mismatch");
  const std::size_t m = rows.size() / in;
  std::vector<double> out(m * this->out);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < this->out; ++j) {
      double acc = bias[j];
      for (std::size_t k = 0; k < in; ++k) acc += rows[r * in + k] * weight[k * this->out + j];
      out[r * this->out + j] = acc;
    }
  }
  return out;
}

Projection fit_projection(std::span<const double> student, std::span<const double> teacher, std::size_t in,
                          std::size_t out, double ridge) {
  if (in == 0 || out == 0 || student.size() % in || teacher.size() % out || student.size() / in != teacher.size() / out) {
    throw DimensionError("fit_projection: row counts differ");
  }
  const std::size_t m = student.size() / in;
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Mat x(m, in + 1);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t k = 0; k < in; ++k) x(r, k) = student[r * in + k];
    x(r, in) = 1.0;
  }
  const Eigen::Map<const Mat> y(teacher.data(), m, out);
  Mat gram = x.transpose() * x;
  gram.diagonal().array() += ridge * static_cast<double>(m);
  const Mat w = gram.ldlt().solve(x.transpose() * y);
  Projection p{in, out, std::vector<double>(in * out), std::vector<double>(out)};
  for (std::size_t k = 0; k < in; ++k) {
    for (std::size_t j = 0; j < out; ++j) p.weight[k * out + j] = w(k, j);
  }
  for (std::size_t j = 0; j < out; ++j) p.bias[j] = w(in, j);
  return p;
}

DistanceSummary summarize(std::vector<double> d) {
  DistanceSummary s;
  s.count = d.size();
  if (d.empty()) return s;
  std::sort(d.begin(), d.end());
  auto pct = [&](double q) {
    const double pos = q * static_cast<double>(d.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, d.size() - 1);
    return d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
  };
  double sum = 0.0;
  for (double v : d) sum += v;
  s.mean = sum / static_cast<double>(d.size());
  s.median = pct(0.5);
  s.p10 = pct(0.1);
  s.p25 = pct(0.25);
  s.p75 = pct(0.75);
  s.p90 = pct(0.9);
  s.max = d.back();
  return s;
}

DistanceSummary feature_distance_stats(std::span<const double> student, std::span<const double> teacher,
                                       const Projection& projection) {
  const auto proj = projection.apply(student);
  if (proj.size() != teacher.size()) throw DimensionError("feature_distance_stats: row counts differ");
  const std::size_t c = projection.out, m = teacher.size() / c;
  std::vector<double> d(m);
  for (std::size_t r = 0; r < m; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double diff = proj[r * c + j] - teacher[r * c + j];
      acc += diff * diff;
    }
    d[r] = std::sqrt(acc);
  }
  return summarize(std::move(d));
}

std::vector<double> collect_tokens(const models::Encoder& encoder, const std::vector<const data::Sample*>& samples) {
  std::vector<double> out;
  for (std::size_t off = 0; off < samples.size(); off += 32) {
    const std::vector<const data::Sample*> chunk(samples.begin() + off,
                                                 samples.begin() + std::min(samples.size(), off + 32));
    const ad::Tensor tok = models::encode(encoder, data::stack_images(chunk)).tokens;
    out.insert(out.end(), tok.values().begin(), tok.values().end());
  }
  return out;
}

CurveStats curve_stats(std::span<const double> curve) {
  CurveStats s;
  s.length = curve.size();
  if (curve.size() < 2) return s;
  const std::size_t n = curve.size() - 1;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += curve[i + 1] - curve[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = curve[i + 1] - curve[i] - mean;
    var += d * d;
    if (curve[i + 1] > 1.05 * curve[i]) ++s.spikes;
  }
  s.diff_variance = var / static_cast<double>(n);
  return s;
}

CurveComparison loss_curve_stats(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty() || a.size() != b.size()) {
    throw ValidationError("loss_curve_stats: curves cover different step ranges (" + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()) + ")");
  }
  return {curve_stats(a), curve_stats(b)};
}

}  // namespace gkd::eval
