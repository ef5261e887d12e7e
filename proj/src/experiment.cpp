#include "sevcon/experiment.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cereal/archives/portable_binary.hpp>
#include <cereal/types/map.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/vector.hpp>

#include "sevcon/util.hpp"

namespace sevcon {

// ---------------------------------------------------------------- config fields

namespace {

template <typename T>
T parse_number(const std::string& text, const std::string& where) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError(where + ": cannot parse '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& text, const std::string& where) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(where + ": expected true or false, got '" + text + "'");
}

std::vector<std::size_t> parse_list(const std::string& text, const std::string& where) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError(where + ": empty list element");
    out.push_back(parse_number<std::size_t>(item.substr(b, e - b + 1), where));
  }
  if (out.empty()) throw ConfigError(where + ": empty list");
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field field(std::string section, std::string key, T& (*ref)(ExperimentConfig&)) {
  Field f{std::move(section), std::move(key), nullptr, nullptr};
  f.get = [ref](const ExperimentConfig& c) -> std::string {
    const T& v = ref(const_cast<ExperimentConfig&>(c));
    if constexpr (std::is_same_v<T, bool>) {
      return v ? "true" : "false";
    } else if constexpr (std::is_same_v<T, double>) {
      return format_double(v);
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s;
    } else {
      return std::to_string(v);
    }
  };
  f.set = [ref](ExperimentConfig& c, const std::string& text, const std::string& where) {
    T& v = ref(c);
    if constexpr (std::is_same_v<T, bool>) {
      v = parse_bool(text, where);
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      v = parse_list(text, where);
    } else {
      v = parse_number<T>(text, where);
    }
  };
  return f;
}

#define SEVCON_FIELD(section, key, type, member) \
  field<type>(section, key, [](ExperimentConfig& c) -> type& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SEVCON_FIELD("run", "seed", std::uint64_t, seed),

      SEVCON_FIELD("data", "image_side", std::size_t, synth.image_side),
      SEVCON_FIELD("data", "layer_count", std::size_t, synth.layer_count),
      SEVCON_FIELD("data", "layer_contrast", double, synth.layer_contrast),
      SEVCON_FIELD("data", "noise_std", double, synth.noise_std),
      SEVCON_FIELD("data", "healthy", std::size_t, n_healthy),
      SEVCON_FIELD("data", "heldout", std::size_t, n_heldout),
      SEVCON_FIELD("data", "unlabeled", std::size_t, n_unlabeled),
      SEVCON_FIELD("data", "severity_max", std::uint32_t, severity_max),
      SEVCON_FIELD("data", "train", std::size_t, n_train),
      SEVCON_FIELD("data", "test_per_biomarker", std::size_t, n_test_per_biomarker),

      SEVCON_FIELD("gradcon", "alpha", double, gradcon.alpha),
      SEVCON_FIELD("gradcon", "epochs", std::size_t, gradcon.epochs),
      SEVCON_FIELD("gradcon", "batch_size", std::size_t, gradcon.batch_size),
      SEVCON_FIELD("gradcon", "learning_rate", double, gradcon.sgd.learning_rate),
      SEVCON_FIELD("gradcon", "momentum", double, gradcon.sgd.momentum),
      SEVCON_FIELD("gradcon", "hvp_step", double, gradcon.hvp_step),
      SEVCON_FIELD("gradcon", "heldout_evals", std::size_t, gradcon.heldout_evals),
      SEVCON_FIELD("gradcon", "latent_dim", std::size_t, latent_dim),

      SEVCON_FIELD("labels", "bins", std::vector<std::size_t>, bins),
      SEVCON_FIELD("labels", "report_k", std::size_t, report_k),

      SEVCON_FIELD("backbone", "embedding_dim", std::size_t, embedding_dim),
      SEVCON_FIELD("backbone", "base_channels", std::size_t, base_channels),
      SEVCON_FIELD("backbone", "projection_hidden", std::size_t, projection_hidden),
      SEVCON_FIELD("backbone", "projection_dim", std::size_t, projection_dim),

      SEVCON_FIELD("augment", "crop", bool, augment.crop),
      SEVCON_FIELD("augment", "crop_scale_min", double, augment.crop_scale_min),
      SEVCON_FIELD("augment", "crop_scale_max", double, augment.crop_scale_max),
      SEVCON_FIELD("augment", "crop_ratio_min", double, augment.crop_ratio_min),
      SEVCON_FIELD("augment", "crop_ratio_max", double, augment.crop_ratio_max),
      SEVCON_FIELD("augment", "flip_probability", double, augment.flip_probability),
      SEVCON_FIELD("augment", "brightness", double, augment.brightness),
      SEVCON_FIELD("augment", "contrast", double, augment.contrast),

      SEVCON_FIELD("pretrain", "temperature", double, pretrain.temperature),
      SEVCON_FIELD("pretrain", "batch_size", std::size_t, pretrain.batch_size),
      SEVCON_FIELD("pretrain", "epochs", std::size_t, pretrain.epochs),
      SEVCON_FIELD("pretrain", "learning_rate", double, pretrain.sgd.learning_rate),
      SEVCON_FIELD("pretrain", "momentum", double, pretrain.sgd.momentum),
      SEVCON_FIELD("pretrain", "balanced_sampler", bool, pretrain.balanced_sampler),

      SEVCON_FIELD("probe", "epochs", std::size_t, probe.epochs),
      SEVCON_FIELD("probe", "batch_size", std::size_t, probe.batch_size),
      SEVCON_FIELD("probe", "learning_rate", double, probe.sgd.learning_rate),
      SEVCON_FIELD("probe", "momentum", double, probe.sgd.momentum),

      SEVCON_FIELD("baselines", "classifier_epochs", std::size_t, classifier.epochs),
      SEVCON_FIELD("baselines", "classifier_batch_size", std::size_t, classifier.batch_size),
      SEVCON_FIELD("baselines", "classifier_learning_rate", double, classifier.sgd.learning_rate),
      SEVCON_FIELD("baselines", "classifier_momentum", double, classifier.sgd.momentum),
      SEVCON_FIELD("baselines", "odin_temperature", double, odin_temperature),
      SEVCON_FIELD("baselines", "odin_epsilon", double, odin_epsilon),
      SEVCON_FIELD("baselines", "mahalanobis_epsilon", double, mahalanobis_epsilon),
      SEVCON_FIELD("baselines", "ablation_bins", std::size_t, ablation_bins),
  };
  return table;
}

#undef SEVCON_FIELD

const Field& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return f;
  }
  bool known_section = false;
  for (const auto& f : fields()) known_section |= f.section == section;
  if (!known_section) throw ConfigError("unknown config section [" + section + "]");
  throw ConfigError("unknown config key '" + key + "' in section [" + section + "]");
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  // Desk-scale settings where the defaults of the individual modules do not fit.
  gradcon.sgd.learning_rate = 0.05;
  probe.sgd.learning_rate = 0.01;
  classifier.sgd.learning_rate = 0.01;
}

void validate(const ExperimentConfig& c) {
  validate(c.synth);
  validate(c.gradcon);
  validate(c.augment);
  validate(c.pretrain);
  validate(c.probe);
  validate(c.classifier);
  if (c.n_healthy == 0 || c.n_heldout == 0 || c.n_unlabeled == 0 || c.n_train == 0) {
    throw ConfigError("[data] sizes must be positive");
  }
  if (c.n_test_per_biomarker == 0 || c.n_test_per_biomarker % 2 != 0) {
    throw ConfigError("[data] test_per_biomarker must be a positive even number");
  }
  if (c.severity_max == 0) throw ConfigError("[data] severity_max must be at least 1");
  if (c.latent_dim < 4) throw ConfigError("[gradcon] latent_dim must be at least 4");
  for (auto n : c.bins) {
    if (n == 0 || n > c.n_unlabeled) {
      throw ConfigError("[labels] bins must lie in [1, unlabeled], got " + std::to_string(n));
    }
  }
  if (c.ablation_bins == 0 || c.ablation_bins > c.n_unlabeled) {
    throw ConfigError("[baselines] ablation_bins must lie in [1, unlabeled]");
  }
  if (c.report_k == 0) throw ConfigError("[labels] report_k must be positive");
  if (c.embedding_dim == 0 || c.base_channels == 0 || c.projection_hidden == 0 ||
      c.projection_dim == 0) {
    throw ConfigError("[backbone] dimensions must be positive");
  }
  if (!(c.odin_temperature > 0.0)) throw ConfigError("[baselines] odin_temperature must be positive");
  if (!(c.odin_epsilon >= 0.0)) throw ConfigError("[baselines] odin_epsilon must be non-negative");
  if (!(c.mahalanobis_epsilon >= 0.0)) {
    throw ConfigError("[baselines] mahalanobis_epsilon must be non-negative");
  }
}

ExperimentConfig parse_config(const std::string& ini_text, const std::vector<std::string>& overrides) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig config;
  for (const auto& [section, keys] : tree) {
    if (keys.empty()) throw ConfigError("config key '" + section + "' must sit inside a [section]");
    for (const auto& [key, value] : keys) {
      const Field& f = find_field(section, key);
      f.set(config, value.data(), section + "." + key);
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("override '" + o + "' must look like section.key=value");
    }
    const Field& f = find_field(o.substr(0, dot), o.substr(dot + 1, eq - dot - 1));
    f.set(config, o.substr(eq + 1), o.substr(0, eq));
  }
  validate(config);
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const MissingArtifactError&) {
    throw ConfigError("config file not found: " + path.string());
  }
  return parse_config(text, overrides);
}

std::string to_ini(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::string config_hash(const ExperimentConfig& config) { return hex64(fnv1a(to_ini(config))); }

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[] = "SVCK";

struct TensorRecord {
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  template <class Archive>
  void serialize(Archive& ar) {
    ar(shape, data);
  }
};

TensorRecord record_of(const Tensor& t) {
  TensorRecord r;
  for (auto d : t.shape()) r.shape.push_back(d);
  r.data.assign(t.values().begin(), t.values().end());
  return r;
}

Tensor tensor_of(const TensorRecord& r) {
  Shape shape(r.shape.begin(), r.shape.end());
  return Tensor(std::move(shape), r.data);
}

void expect_kind(const Checkpoint& c, const std::string& kind) {
  if (c.kind != kind) {
    throw ConfigError("checkpoint holds a '" + c.kind + "', expected a '" + kind + "'");
  }
}

const std::string& meta(const Checkpoint& c, const std::string& key) {
  const auto it = c.meta.find(key);
  if (it == c.meta.end()) throw Error("checkpoint is missing metadata '" + key + "'");
  return it->second;
}

std::size_t meta_size(const Checkpoint& c, const std::string& key) {
  return parse_number<std::size_t>(meta(c, key), "checkpoint " + key);
}

double meta_double(const Checkpoint& c, const std::string& key) {
  return parse_number<double>(meta(c, key), "checkpoint " + key);
}

void put_network(Checkpoint& c, const std::string& prefix, const Sequential& net) {
  const auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.tensors.emplace_back(prefix + "/" + std::to_string(i) + "/" + params[i]->name, params[i]->value);
  }
}

// Copies tensors "<prefix>/<i>/<name>" into the parameters of `net`, checking
// names and shapes.
void take_network(const Checkpoint& c, const std::string& prefix, Sequential& net) {
  auto params = net.parameters();
  std::size_t found = 0;
  for (const auto& [name, value] : c.tensors) {
    if (name.rfind(prefix + "/", 0) != 0) continue;
    const std::string rest = name.substr(prefix.size() + 1);
    const std::size_t i = parse_number<std::size_t>(rest.substr(0, rest.find('/')), name);
    if (i >= params.size()) throw ShapeError("checkpoint tensor " + name + " has no parameter");
    if (rest.substr(rest.find('/') + 1) != params[i]->name) {
      throw ShapeError("checkpoint tensor " + name + " does not match parameter " + params[i]->name);
    }
    if (value.shape() != params[i]->value.shape()) {
      throw ShapeError("checkpoint tensor " + name + " has shape " + shape_string(value.shape()) +
                       ", model expects " + shape_string(params[i]->value.shape()));
    }
    params[i]->value = value;
    ++found;
  }
  if (found != params.size()) {
    throw ShapeError("checkpoint provides " + std::to_string(found) + " of " +
                     std::to_string(params.size()) + " '" + prefix + "' parameters");
  }
}

std::string combination_string(const Biomarkers& b) {
  std::string s;
  for (auto v : b) s += v ? '1' : '0';
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::vector<std::string> names;
  std::vector<TensorRecord> tensors, velocity;
  for (const auto& [name, t] : c.tensors) {
    names.push_back(name);
    tensors.push_back(record_of(t));
  }
  for (const auto& v : c.velocity) velocity.push_back(record_of(v));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  cereal::PortableBinaryOutputArchive ar(out);
  ar(c.format_version, c.kind, c.config_hash, c.seed, c.epoch, c.meta, names,
     tensors, velocity);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
  Checkpoint c;
  char magic[4] = {};
  std::vector<std::string> names;
  std::vector<TensorRecord> tensors, velocity;
  try {
    if (!in.read(magic, 4) || std::string(magic, 4) != kMagic) {
      throw Error("not a checkpoint file: " + path.string());
    }
    cereal::PortableBinaryInputArchive ar(in);
    ar(c.format_version);
    if (c.format_version != kCheckpointVersion) {
      throw Error("checkpoint " + path.string() + " has format version " +
                  std::to_string(c.format_version) + ", expected " +
                  std::to_string(kCheckpointVersion));
    }
    ar(c.kind, c.config_hash, c.seed, c.epoch, c.meta, names, tensors, velocity);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  if (names.size() != tensors.size()) throw Error("corrupt checkpoint " + path.string());
  for (std::size_t i = 0; i < names.size(); ++i) c.tensors.emplace_back(names[i], tensor_of(tensors[i]));
  for (const auto& v : velocity) c.velocity.push_back(tensor_of(v));
  return c;
}

Checkpoint to_checkpoint(const Autoencoder& model) {
  Checkpoint c;
  c.kind = "autoencoder";
  c.meta["image_side"] = std::to_string(model.image_side);
  c.meta["latent_dim"] = std::to_string(model.latent_dim);
  put_network(c, "encoder", model.encoder);
  put_network(c, "decoder", model.decoder);
  return c;
}

Autoencoder autoencoder_from(const Checkpoint& c) {
  expect_kind(c, "autoencoder");
  Autoencoder m = build_autoencoder(meta_size(c, "image_side"), meta_size(c, "latent_dim"), 0);
  take_network(c, "encoder", m.encoder);
  take_network(c, "decoder", m.decoder);
  return m;
}

Checkpoint to_checkpoint(const ReferenceGradients& reference) {
  Checkpoint c;
  c.kind = "reference_gradients";
  c.meta["count"] = std::to_string(reference.count);
  for (std::size_t l = 0; l < reference.mean.size(); ++l) {
    c.tensors.emplace_back("layer/" + std::to_string(l), reference.mean[l]);
  }
  return c;
}

ReferenceGradients reference_from(const Checkpoint& c) {
  expect_kind(c, "reference_gradients");
  ReferenceGradients r;
  r.count = meta_size(c, "count");
  for (const auto& [name, t] : c.tensors) r.mean.push_back(t);
  return r;
}

Checkpoint to_checkpoint(const Backbone& backbone) {
  Checkpoint c;
  c.kind = "backbone";
  const auto& b = backbone.config;
  c.meta["image_side"] = std::to_string(b.image_side);
  c.meta["embedding_dim"] = std::to_string(b.embedding_dim);
  c.meta["base_channels"] = std::to_string(b.base_channels);
  c.meta["bias"] = b.bias ? "1" : "0";
  c.meta["input_mean"] = format_double(b.input_mean);
  c.meta["input_std"] = format_double(b.input_std);
  put_network(c, "net", backbone.net);
  return c;
}

namespace {

BackboneConfig backbone_config_from(const Checkpoint& c) {
  BackboneConfig b;
  b.image_side = meta_size(c, "image_side");
  b.embedding_dim = meta_size(c, "embedding_dim");
  b.base_channels = meta_size(c, "base_channels");
  b.bias = meta(c, "bias") == "1";
  b.input_mean = meta_double(c, "input_mean");
  b.input_std = meta_double(c, "input_std");
  return b;
}

void put_backbone_meta(Checkpoint& c, const BackboneConfig& b) {
  c.meta["image_side"] = std::to_string(b.image_side);
  c.meta["embedding_dim"] = std::to_string(b.embedding_dim);
  c.meta["base_channels"] = std::to_string(b.base_channels);
  c.meta["bias"] = b.bias ? "1" : "0";
  c.meta["input_mean"] = format_double(b.input_mean);
  c.meta["input_std"] = format_double(b.input_std);
}

}  // namespace

Backbone backbone_from(const Checkpoint& c) {
  expect_kind(c, "backbone");
  Backbone b = build_backbone(backbone_config_from(c), 0);
  take_network(c, "net", b.net);
  return b;
}

Checkpoint to_checkpoint(const ProjectionHead& head) {
  Checkpoint c;
  c.kind = "projection_head";
  c.meta["input_dim"] = std::to_string(head.input_dim);
  c.meta["hidden_dim"] = std::to_string(head.hidden_dim);
  c.meta["output_dim"] = std::to_string(head.output_dim);
  c.meta["bias"] = head.net.parameters().size() > 2 ? "1" : "0";
  put_network(c, "net", head.net);
  return c;
}

ProjectionHead projection_head_from(const Checkpoint& c) {
  expect_kind(c, "projection_head");
  ProjectionHead h = build_projection_head(meta_size(c, "input_dim"), meta_size(c, "hidden_dim"),
                                           meta_size(c, "output_dim"), 0, meta(c, "bias") == "1");
  take_network(c, "net", h.net);
  return h;
}

Checkpoint to_checkpoint(const ClassifierHead& head) {
  Checkpoint c;
  c.kind = "classifier_head";
  c.meta["input_dim"] = std::to_string(head.input_dim);
  c.meta["output_dim"] = std::to_string(head.output_dim);
  put_network(c, "net", head.net);
  return c;
}

ClassifierHead classifier_head_from(const Checkpoint& c) {
  expect_kind(c, "classifier_head");
  ClassifierHead h = build_classifier_head(meta_size(c, "input_dim"), meta_size(c, "output_dim"), 0);
  take_network(c, "net", h.net);
  return h;
}

Checkpoint to_checkpoint(const SupervisedClassifier& clf) {
  Checkpoint c;
  c.kind = "supervised_classifier";
  put_backbone_meta(c, clf.backbone.config);
  std::string combos;
  for (std::size_t i = 0; i < clf.combinations.size(); ++i) {
    combos += (i ? ";" : "") + combination_string(clf.combinations[i]);
  }
  c.meta["combinations"] = combos;
  put_network(c, "backbone", clf.backbone.net);
  put_network(c, "multilabel", clf.multilabel.net);
  put_network(c, "combination", clf.combination.net);
  return c;
}

SupervisedClassifier supervised_classifier_from(const Checkpoint& c) {
  expect_kind(c, "supervised_classifier");
  SupervisedClassifier clf;
  clf.backbone = build_backbone(backbone_config_from(c), 0);
  std::stringstream ss(meta(c, "combinations"));
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.size() != kBiomarkerCount) throw Error("checkpoint: bad label combination '" + item + "'");
    Biomarkers b{};
    for (std::size_t k = 0; k < kBiomarkerCount; ++k) b[k] = item[k] == '1';
    clf.combinations.push_back(b);
  }
  const std::size_t d = clf.backbone.config.embedding_dim;
  clf.multilabel = build_classifier_head(d, kBiomarkerCount, 0);
  clf.combination = build_classifier_head(d, clf.combinations.size(), 0);
  take_network(c, "backbone", clf.backbone.net);
  take_network(c, "multilabel", clf.multilabel.net);
  take_network(c, "combination", clf.combination.net);
  return clf;
}

}  // namespace sevcon
