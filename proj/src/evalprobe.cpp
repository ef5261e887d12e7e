#include "sevcon/evalprobe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sevcon/util.hpp"

namespace sevcon {

void validate(const ProbeConfig& config) {
  if (config.epochs == 0) throw ConfigError("probe epochs must be positive");
  if (config.batch_size == 0) throw ConfigError("probe batch size must be positive");
  validate(config.sgd);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor extract_features(const Backbone& backbone, const Dataset& data) {
  if (data.samples.empty()) throw Error("extract_features: empty dataset " + data.name);
  const std::size_t chunk = 256;
  const std::size_t d = backbone.config.embedding_dim;
  Tensor out({data.size(), d});
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    std::vector<Tensor> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(data.samples[i].image);
    const Tensor f = embed_batch(backbone, to_batch(images));
    std::copy(f.values().begin(), f.values().end(), out.data() + start * d);
  }
  return out;
}

Tensor biomarker_targets(const Dataset& data, std::optional<std::size_t> biomarker) {
  if (biomarker && *biomarker >= kBiomarkerCount) throw ConfigError("biomarker index out of range");
  const std::size_t cols = biomarker ? 1 : kBiomarkerCount;
  Tensor t({data.size(), cols});
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.samples[i];
    if (!s.biomarkers) {
      throw ConfigError("dataset '" + data.name + "' has no biomarker labels (sample " + s.id + ")");
    }
    if (biomarker) {
      t[i] = (*s.biomarkers)[*biomarker];
    } else {
      for (std::size_t k = 0; k < kBiomarkerCount; ++k) t[i * cols + k] = (*s.biomarkers)[k];
    }
  }
  return t;
}

double sigmoid_bce(const Tensor& logits, const Tensor& targets, Tensor* gradient) {
  if (logits.shape() != targets.shape()) throw ShapeError("sigmoid_bce: shape mismatch");
  const double n = static_cast<double>(logits.size());
  double loss = 0.0;
  if (gradient) *gradient = Tensor(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    const double y = targets[i];
    // log(1 + e^x) - y x, evaluated stably
    loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    if (gradient) (*gradient)[i] = (sigmoid(x) - y) / n;
  }
  return loss / n;
}

ClassifierHead train_probe_on_features(ClassifierHead head, const Tensor& features,
                                       const Tensor& targets, const ProbeConfig& config,
                                       std::uint64_t seed) {
  validate(config);
  if (features.rank() != 2 || features.dim(1) != head.input_dim) {
    throw ShapeError("train_probe: features " + shape_string(features.shape()) +
                     " do not match head input " + std::to_string(head.input_dim));
  }
  if (targets.rank() != 2 || targets.dim(0) != features.dim(0) || targets.dim(1) != head.output_dim) {
    throw ShapeError("train_probe: targets " + shape_string(targets.shape()) +
                     " do not match head output " + std::to_string(head.output_dim));
  }
  const std::size_t n = features.dim(0);
  const std::size_t d = features.dim(1);
  const std::size_t k = targets.dim(1);
  SgdState optimizer{config.sgd, {}};
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const std::size_t b = end - start;
      Tensor x({b, d});
      Tensor y({b, k});
      for (std::size_t i = 0; i < b; ++i) {
        std::copy_n(features.data() + order[start + i] * d, d, x.data() + i * d);
        std::copy_n(targets.data() + order[start + i] * k, k, y.data() + i * k);
      }
      const Tensor logits = head.net.forward(x);
      Tensor grad;
      const double loss = sigmoid_bce(logits, y, &grad);
      if (!std::isfinite(loss)) throw NumericalError("train_probe: non-finite loss");
      head.net.backward(grad);
      auto params = head.net.parameters();
      sgd_step(optimizer, params);
    }
  }
  for (std::size_t i = 0; i < head.net.size(); ++i) head.net.layer(i).clear_cache();
  return head;
}

ClassifierHead train_probe(const Backbone& backbone, ClassifierHead head, const Dataset& train,
                           std::optional<std::size_t> biomarker, const ProbeConfig& config,
                           std::uint64_t seed) {
  if (train.samples.empty()) throw Error("train_probe: labeled set is empty");
  const Tensor targets = biomarker_targets(train, biomarker);
  const Tensor features = extract_features(backbone, train);
  return train_probe_on_features(std::move(head), features, targets, config, seed);
}

ProbeResult evaluate(const Backbone& backbone,
                     const std::array<ClassifierHead, kBiomarkerCount>& binary_heads,
                     const ClassifierHead& multilabel_head,
                     const std::array<Dataset, kBiomarkerCount>& binary_tests,
                     const Dataset& multilabel_test) {
  ProbeResult result;
  for (std::size_t b = 0; b < kBiomarkerCount; ++b) {
    const Dataset& test = binary_tests[b];
    const Tensor targets = biomarker_targets(test, b);
    const Tensor logits = binary_heads[b].net.infer(extract_features(backbone, test));
    std::vector<std::uint8_t> labels(test.size()), preds(test.size());
    std::vector<double> scores(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      labels[i] = targets[i] > 0.5;
      scores[i] = sigmoid(logits[i]);
      preds[i] = scores[i] >= 0.5;
    }
    BiomarkerResult r;
    r.name = biomarker_name(b);
    r.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    r.negatives = labels.size() - r.positives;
    if (r.positives != r.negatives) {
      result.warnings.push_back(r.name + " test set is unbalanced (" + std::to_string(r.positives) +
                                " positive / " + std::to_string(r.negatives) + " negative)");
    }
    r.accuracy = accuracy(preds, labels);
    r.f1 = f1(preds, labels);
    if (r.f1 == 0.0 && r.positives == 0) {
      result.warnings.push_back(r.name + ": no positives, F1 defined as 0");
    }
    r.auc = roc_auc(scores, labels);
    result.binary.push_back(r);
  }

  const Tensor targets = biomarker_targets(multilabel_test, std::nullopt);
  const Tensor logits = multilabel_head.net.infer(extract_features(backbone, multilabel_test));
  if (logits.dim(1) != kBiomarkerCount) throw ShapeError("multi-label head must have 5 outputs");
  double sum = 0.0;
  for (std::size_t k = 0; k < kBiomarkerCount; ++k) {
    std::vector<double> scores(multilabel_test.size());
    std::vector<std::uint8_t> labels(multilabel_test.size());
    for (std::size_t i = 0; i < multilabel_test.size(); ++i) {
      scores[i] = logits[i * kBiomarkerCount + k];
      labels[i] = targets[i * kBiomarkerCount + k] > 0.5;
    }
    const double auc = roc_auc(scores, labels);
    result.multilabel_auc.push_back(auc);
    sum += auc;
  }
  result.mean_auc = sum / static_cast<double>(kBiomarkerCount);
  return result;
}

nlohmann::json to_json(const ProbeResult& result) {
  nlohmann::json j;
  j["binary"] = nlohmann::json::array();
  for (const auto& b : result.binary) {
    j["binary"].push_back({{"name", b.name},
                           {"accuracy", b.accuracy},
                           {"f1", b.f1},
                           {"auc", b.auc},
                           {"positives", b.positives},
                           {"negatives", b.negatives}});
  }
  j["multilabel_auc"] = result.multilabel_auc;
  j["mean_auc"] = result.mean_auc;
  j["provenance"] = result.provenance;
  j["warnings"] = result.warnings;
  return j;
}

ProbeResult probe_result_from_json(const nlohmann::json& j) {
  ProbeResult r;
  for (const auto& b : j.at("binary")) {
    BiomarkerResult br;
    br.name = b.at("name").get<std::string>();
    br.accuracy = b.at("accuracy").get<double>();
    br.f1 = b.at("f1").get<double>();
    br.auc = b.at("auc").get<double>();
    br.positives = b.at("positives").get<std::size_t>();
    br.negatives = b.at("negatives").get<std::size_t>();
    r.binary.push_back(br);
  }
  r.multilabel_auc = j.at("multilabel_auc").get<std::vector<double>>();
  r.mean_auc = j.at("mean_auc").get<double>();
  r.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

}  // namespace sevcon
