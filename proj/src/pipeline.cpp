#include "sevcon/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "sevcon/labeling.hpp"
#include "sevcon/util.hpp"

namespace sevcon {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kScoreChunk = 256;

// ---------------------------------------------------------------- stamps

fs::path stamp_path(const fs::path& dir) { return dir / "stamp.json"; }

void write_stamp(const RunContext& ctx, const fs::path& dir, const std::string& stage,
                 std::uint64_t stage_seed) {
  json j;
  j["stage"] = stage;
  j["config_hash"] = ctx.hash;
  j["seed"] = ctx.config.seed;
  j["stage_seed"] = stage_seed;
  write_text_file(stamp_path(dir), j.dump(2) + "\n");
}

bool is_current(const RunContext& ctx, const fs::path& dir) {
  if (!fs::exists(stamp_path(dir))) return false;
  const auto j = json::parse(read_text_file(stamp_path(dir)));
  return j.value("config_hash", "") == ctx.hash;
}

// Fails unless `dir` holds a finished stage produced under the current config.
void require(const RunContext& ctx, const fs::path& dir, const std::string& producer) {
  if (!fs::exists(stamp_path(dir))) {
    throw MissingArtifactError("missing " + fs::relative(dir, ctx.root).string() +
                               "/ in run directory " + ctx.root.string() + "; run `sevcon " +
                               producer + "` first");
  }
  const auto j = json::parse(read_text_file(stamp_path(dir)));
  const std::string found = j.value("config_hash", "");
  if (found != ctx.hash) {
    const std::string msg = fs::relative(dir, ctx.root).string() + " was produced with config " +
                            found + " but the current config is " + ctx.hash;
    if (!ctx.force) throw ConfigError(msg + "; rerun `sevcon " + producer + "` or pass --force");
    spdlog::warn("{} (continuing because of --force)", msg);
  }
}

// ---------------------------------------------------------------- paths

fs::path data_dir(const RunContext& ctx) { return ctx.root / "data"; }
fs::path gradcon_dir(const RunContext& ctx) { return ctx.root / "gradcon"; }
fs::path score_dir(const RunContext& ctx, const std::string& scorer) {
  return ctx.root / "scores" / scorer;
}
fs::path label_dir(const RunContext& ctx, const std::string& scorer, std::size_t n) {
  return ctx.root / "labels" / (scorer + "_n" + std::to_string(n));
}
fs::path pretrain_dir(const RunContext& ctx, const std::string& method) {
  return ctx.root / "pretrain" / method;
}
fs::path probe_dir(const RunContext& ctx, const std::string& method) {
  return ctx.root / "probe" / method;
}
fs::path eval_dir(const RunContext& ctx, const std::string& method) {
  return ctx.root / "eval" / method;
}

// ---------------------------------------------------------------- helpers

Dataset load_split(const RunContext& ctx, const std::string& name) {
  return load_dataset(data_dir(ctx) / name);
}

std::string test_split_name(std::size_t biomarker) { return "test_" + biomarker_name(biomarker); }

BackboneConfig backbone_config(const RunContext& ctx) {
  const auto stats = json::parse(read_text_file(data_dir(ctx) / "stats.json"));
  BackboneConfig b;
  b.image_side = ctx.config.synth.image_side;
  b.embedding_dim = ctx.config.embedding_dim;
  b.base_channels = ctx.config.base_channels;
  b.input_mean = stats.at("pixel_mean").get<double>();
  b.input_std = stats.at("pixel_std").get<double>();
  return b;
}

Backbone initial_backbone(const RunContext& ctx) {
  return build_backbone(backbone_config(ctx), ctx.stage_seed("backbone-init"));
}

Tensor stack_images(std::span<const Tensor> images) {
  if (images.empty()) throw ShapeError("cannot stack zero images");
  const std::size_t s = images[0].shape()[0];
  Tensor out({images.size(), 1, s, s});
  auto dst = out.values().begin();
  for (const auto& img : images) dst = std::copy(img.values().begin(), img.values().end(), dst);
  return out;
}

Checkpoint stamped(Checkpoint c, const RunContext& ctx, std::uint64_t seed, std::uint64_t epoch) {
  c.config_hash = ctx.hash;
  c.seed = seed;
  c.epoch = epoch;
  return c;
}

// Checks a loaded checkpoint against the current configuration.
Checkpoint load_current(const RunContext& ctx, const fs::path& path, const std::string& producer) {
  Checkpoint c = load_checkpoint(path);
  if (c.config_hash != ctx.hash && !ctx.force) {
    throw ConfigError(path.string() + " was written under config " + c.config_hash +
                      "; rerun `sevcon " + producer + "` or pass --force");
  }
  return c;
}

struct ScoreRow {
  std::string id;
  std::optional<double> l_recon;
  std::optional<double> l_grad;
  double severity = 0.0;
};

void write_scores(const fs::path& path, const std::vector<ScoreRow>& rows) {
  std::ostringstream csv;
  csv << "sample_id,l_recon,l_grad,severity\n";
  for (const auto& r : rows) {
    csv << r.id << ',' << (r.l_recon ? format_double(*r.l_recon) : "") << ','
        << (r.l_grad ? format_double(*r.l_grad) : "") << ',' << format_double(r.severity) << '\n';
  }
  write_text_file(path, csv.str());
}

std::vector<ScoreRow> read_scores(const fs::path& path) {
  const CsvTable t = read_csv(path);
  std::vector<ScoreRow> rows;
  const auto ci = t.column("sample_id"), cr = t.column("l_recon"), cg = t.column("l_grad"),
             cs = t.column("severity");
  for (const auto& row : t.rows) {
    ScoreRow r;
    r.id = row[ci];
    if (!row[cr].empty()) r.l_recon = std::stod(row[cr]);
    if (!row[cg].empty()) r.l_grad = std::stod(row[cg]);
    r.severity = std::stod(row[cs]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<double> severities(const std::vector<ScoreRow>& rows) {
  std::vector<double> s;
  for (const auto& r : rows) s.push_back(r.severity);
  return s;
}

std::optional<std::size_t> task_biomarker(const std::string& task) {
  if (task == "multilabel") return std::nullopt;
  for (std::size_t k = 0; k < kBiomarkerCount; ++k) {
    if (biomarker_name(k) == task) return k;
  }
  throw ConfigError("unknown probe task '" + task + "' (expected bio_a..bio_e or multilabel)");
}

std::string pretrain_command(const std::string& method) {
  if (method == "simclr") return "pretrain --mode simclr";
  const auto dash = method.rfind("-n");
  if (dash == std::string::npos) return "pretrain";
  return "pretrain --mode severity --scorer " + method.substr(0, dash) + " --bins " +
         method.substr(dash + 2);
}

Backbone method_backbone(const RunContext& ctx, const std::string& method) {
  if (method == "random") {
    require(ctx, data_dir(ctx), "gen-data");
    return initial_backbone(ctx);
  }
  const fs::path dir = pretrain_dir(ctx, method);
  require(ctx, dir, pretrain_command(method));
  return backbone_from(load_current(ctx, dir / "backbone.ckpt", "pretrain"));
}

SupervisedClassifier load_or_train_classifier(const RunContext& ctx) {
  const fs::path dir = ctx.root / "scores" / "classifier";
  if (is_current(ctx, dir)) {
    return supervised_classifier_from(load_current(ctx, dir / "classifier.ckpt", "score"));
  }
  const std::uint64_t seed = ctx.stage_seed("classifier");
  spdlog::info("training the supervised classifier for the baseline scorers");
  const Dataset train = load_split(ctx, "train");
  SupervisedClassifier clf = train_supervised_classifier(
      build_backbone(backbone_config(ctx), derive_seed(seed, "init")), train, ctx.config.classifier,
      seed);
  fs::create_directories(dir);
  save_checkpoint(dir / "classifier.ckpt",
                  stamped(to_checkpoint(clf), ctx, seed, ctx.config.classifier.epochs));
  write_stamp(ctx, dir, "classifier", seed);
  return clf;
}

std::vector<double> classifier_scores(const RunContext& ctx, const std::string& scorer,
                                      const Dataset& corpus) {
  const SupervisedClassifier clf = load_or_train_classifier(ctx);
  const auto images = corpus.images();
  const std::size_t s = ctx.config.synth.image_side;
  std::vector<double> out;
  out.reserve(images.size());
  if (scorer == "msp") {
    // One image per forward pass so the scores match the ODIN path exactly.
    for (const auto& img : images) {
      out.push_back(msp_score(combination_logits(clf, img.reshaped({1, 1, s, s})).values()));
    }
  } else if (scorer == "odin") {
    OdinScorer odin(clf, ctx.config.odin_temperature, ctx.config.odin_epsilon);
    for (const auto& img : images) out.push_back(odin.score(img));
  } else {
    const Dataset train = load_split(ctx, "train");
    const auto train_images = train.images();
    const Tensor features = classifier_features(clf, stack_images(train_images));
    const auto stats =
        fit_gaussian_stats(features, combination_classes(clf, train), ctx.config.mahalanobis_epsilon);
    for (std::size_t begin = 0; begin < images.size(); begin += kScoreChunk) {
      const std::size_t end = std::min(images.size(), begin + kScoreChunk);
      const Tensor f = classifier_features(
          clf, stack_images(std::span<const Tensor>(images).subspan(begin, end - begin)));
      const std::size_t d = f.shape()[1];
      for (std::size_t i = 0; i < end - begin; ++i) {
        out.push_back(mahalanobis_score(stats, std::span<const double>(f.values()).subspan(i * d, d)));
      }
    }
  }
  for (double v : out) {
    if (!std::isfinite(v)) throw NumericalError(scorer + " produced a non-finite score");
  }
  return out;
}

void ensure(const RunContext& ctx, const fs::path& dir, const std::function<void()>& stage) {
  if (!is_current(ctx, dir)) stage();
}

void ensure_method(const RunContext& ctx, const std::string& method) {
  for (const auto& task : kProbeTasks) {
    if (!fs::exists(probe_dir(ctx, method) / (task + ".ckpt")) ||
        !is_current(ctx, probe_dir(ctx, method))) {
      run_probe(ctx, method, task);
    }
  }
  ensure(ctx, eval_dir(ctx, method), [&] { run_evaluate(ctx, method); });
}

void ensure_label_method(const RunContext& ctx, const std::string& scorer, std::size_t n) {
  if (scorer == "severity") {
    ensure(ctx, gradcon_dir(ctx), [&] { run_train_gradcon(ctx); });
  }
  ensure(ctx, score_dir(ctx, scorer), [&] { run_score(ctx, scorer); });
  ensure(ctx, label_dir(ctx, scorer, n), [&] { run_make_labels(ctx, scorer, n); });
  ensure(ctx, pretrain_dir(ctx, method_name(scorer, n)),
         [&] { run_pretrain(ctx, "severity", scorer, n); });
  ensure_method(ctx, method_name(scorer, n));
}

ProbeResult load_eval(const RunContext& ctx, const std::string& method) {
  require(ctx, eval_dir(ctx, method), "evaluate --method " + method);
  return probe_result_from_json(json::parse(read_text_file(eval_dir(ctx, method) / "result.json")));
}

std::vector<std::string> table1_methods(const RunContext& ctx) {
  std::vector<std::string> methods{"random", "simclr"};
  for (auto n : ctx.config.bins) methods.push_back(method_name("severity", n));
  return methods;
}

}  // namespace

// ---------------------------------------------------------------- context

RunContext RunContext::open(const fs::path& root, const ExperimentConfig& config, bool force) {
  validate(config);
  RunContext ctx{root, config, config_hash(config), force};
  fs::create_directories(root);
  const fs::path ini = root / "config.ini";
  if (fs::exists(ini)) {
    const std::string existing = config_hash(parse_config(read_text_file(ini)));
    if (existing != ctx.hash) {
      if (!force) {
        throw ConfigError("run directory " + root.string() + " belongs to config " + existing +
                          " but the current config is " + ctx.hash +
                          "; use another --run-dir or pass --force");
      }
      spdlog::warn("config hash {} differs from the run directory's {}; --force given", ctx.hash,
                   existing);
      write_text_file(ini, to_ini(config));
    }
  } else {
    write_text_file(ini, to_ini(config));
  }
  return ctx;
}

std::uint64_t RunContext::stage_seed(const std::string& stage) const {
  return derive_seed(config.seed, stage);
}

std::string method_name(const std::string& scorer, std::size_t n_bins) {
  return scorer + "-n" + std::to_string(n_bins);
}

// ---------------------------------------------------------------- stages

void run_gen_data(const RunContext& ctx) {
  const auto& c = ctx.config;
  SynthConfig synth = c.synth;
  synth.seed = ctx.stage_seed("gen-data");
  spdlog::info("gen-data: {} healthy, {} held-out, {} unlabeled, {} labeled", c.n_healthy,
               c.n_heldout, c.n_unlabeled, c.n_train);
  const fs::path dir = data_dir(ctx);
  save_dataset(dir / "healthy", generate_healthy(c.n_healthy, synth, "healthy"), synth, ctx.hash);
  save_dataset(dir / "heldout", generate_healthy(c.n_heldout, synth, "heldout"), synth, ctx.hash);

  const UnlabeledCorpus corpus = generate_unlabeled(c.n_unlabeled, c.severity_max, synth);
  save_dataset(dir / "unlabeled", corpus.images, synth, ctx.hash);
  save_ground_truth(dir / "unlabeled_truth", corpus);

  const LabeledSplits splits = generate_labeled_splits(c.n_train, c.n_test_per_biomarker, synth);
  save_dataset(dir / "train", splits.train, synth, ctx.hash);
  for (std::size_t k = 0; k < kBiomarkerCount; ++k) {
    save_dataset(dir / test_split_name(k), splits.binary_test[k], synth, ctx.hash);
  }
  save_dataset(dir / "test_multilabel", splits.multilabel_test, synth, ctx.hash);

  // Input statistics for the backbones, taken from the unlabeled pool.
  double sum = 0.0, sq = 0.0, count = 0.0;
  for (const auto& s : corpus.images.samples) {
    for (double v : s.image.values()) {
      sum += v;
      sq += v * v;
    }
    count += static_cast<double>(s.image.size());
  }
  const double mean = sum / count;
  json stats;
  stats["config_hash"] = ctx.hash;
  stats["pixel_mean"] = mean;
  stats["pixel_std"] = std::sqrt(std::max(sq / count - mean * mean, 1e-12));
  write_text_file(dir / "stats.json", stats.dump(2) + "\n");
  write_stamp(ctx, dir, "gen-data", synth.seed);
}

void run_train_gradcon(const RunContext& ctx) {
  require(ctx, data_dir(ctx), "gen-data");
  const std::uint64_t seed = ctx.stage_seed("train-gradcon");
  const auto healthy = load_split(ctx, "healthy").images();
  const Dataset heldout = load_split(ctx, "heldout");
  const auto heldout_images = heldout.images();
  spdlog::info("train-gradcon: {} epochs on {} healthy images", ctx.config.gradcon.epochs,
               healthy.size());
  GradconResult r = train_gradcon(
      build_autoencoder(ctx.config.synth.image_side, ctx.config.latent_dim, derive_seed(seed, "init")),
      healthy, ctx.config.gradcon, derive_seed(seed, "train"), heldout_images);

  const fs::path dir = gradcon_dir(ctx);
  fs::create_directories(dir);
  save_checkpoint(dir / "autoencoder.ckpt",
                  stamped(to_checkpoint(r.model), ctx, seed, ctx.config.gradcon.epochs));
  save_checkpoint(dir / "reference.ckpt",
                  stamped(to_checkpoint(r.reference), ctx, seed, ctx.config.gradcon.epochs));

  std::ostringstream log;
  log << "epoch,mean_recon,mean_grad,heldout_recon,heldout_grad\n";
  for (const auto& e : r.log) {
    log << e.epoch << ',' << format_double(e.mean_recon) << ',' << format_double(e.mean_grad) << ','
        << (e.heldout_recon ? format_double(*e.heldout_recon) : "") << ','
        << (e.heldout_grad ? format_double(*e.heldout_grad) : "") << '\n';
  }
  write_text_file(dir / "log.csv", log.str());

  SeverityScorer scorer(r.model, r.reference, ctx.config.gradcon.alpha);
  const auto scores = scorer.score_all(heldout_images);
  std::vector<ScoreRow> rows;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    rows.push_back({heldout.samples[i].id, scores[i].l_recon, scores[i].l_grad, scores[i].value});
  }
  write_scores(dir / "heldout_scores.csv", rows);
  write_stamp(ctx, dir, "train-gradcon", seed);
}

void run_score(const RunContext& ctx, const std::string& scorer) {
  if (std::find(kScorers.begin(), kScorers.end(), scorer) == kScorers.end()) {
    throw ConfigError("unknown scorer '" + scorer + "' (expected severity, msp, odin or mahalanobis)");
  }
  require(ctx, data_dir(ctx), "gen-data");
  const Dataset corpus = load_split(ctx, "unlabeled");
  std::vector<ScoreRow> rows;
  std::uint64_t seed = 0;
  spdlog::info("score: {} on {} unlabeled images", scorer, corpus.size());
  if (scorer == "severity") {
    require(ctx, gradcon_dir(ctx), "train-gradcon");
    seed = ctx.stage_seed("train-gradcon");
    const Autoencoder model =
        autoencoder_from(load_current(ctx, gradcon_dir(ctx) / "autoencoder.ckpt", "train-gradcon"));
    const ReferenceGradients reference =
        reference_from(load_current(ctx, gradcon_dir(ctx) / "reference.ckpt", "train-gradcon"));
    SeverityScorer s(model, reference, ctx.config.gradcon.alpha);
    const auto scores = s.score_all(corpus.images());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!std::isfinite(scores[i].value)) {
        throw NumericalError("severity score of " + corpus.samples[i].id + " is not finite");
      }
      rows.push_back({corpus.samples[i].id, scores[i].l_recon, scores[i].l_grad, scores[i].value});
    }
  } else {
    seed = ctx.stage_seed("classifier");
    const auto scores = classifier_scores(ctx, scorer, corpus);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      rows.push_back({corpus.samples[i].id, std::nullopt, std::nullopt, scores[i]});
    }
  }
  const fs::path dir = score_dir(ctx, scorer);
  fs::create_directories(dir);
  write_scores(dir / "scores.csv", rows);
  write_stamp(ctx, dir, "score", seed);
}

void run_make_labels(const RunContext& ctx, const std::string& scorer, std::size_t n_bins) {
  require(ctx, score_dir(ctx, scorer), "score --scorer " + scorer);
  const auto rows = read_scores(score_dir(ctx, scorer) / "scores.csv");
  if (n_bins == 0 || n_bins > rows.size()) {
    throw ConfigError("--bins must lie in [1, " + std::to_string(rows.size()) + "], got " +
                      std::to_string(n_bins));
  }
  const auto s = severities(rows);
  const SeverityLabeling labeling = assign_severity_labels(s, n_bins);
  std::ostringstream csv;
  csv << "sample_id,severity,bin_label\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv << rows[i].id << ',' << format_double(rows[i].severity) << ',' << labeling.labels[i] << '\n';
  }
  const fs::path dir = label_dir(ctx, scorer, n_bins);
  fs::create_directories(dir);
  write_text_file(dir / "labels.csv", csv.str());
  write_stamp(ctx, dir, "make-labels", 0);
  spdlog::info("make-labels: {} samples into {} bins from {}", rows.size(), n_bins, scorer);
}

void run_pretrain(const RunContext& ctx, const std::string& mode, const std::string& scorer,
                  std::size_t n_bins) {
  if (mode != "severity" && mode != "simclr") {
    throw ConfigError("unknown pretrain mode '" + mode + "' (expected severity or simclr)");
  }
  require(ctx, data_dir(ctx), "gen-data");
  const Dataset corpus = load_split(ctx, "unlabeled");
  const auto images = corpus.images();
  std::vector<std::size_t> labels;
  std::string method = "simclr";
  if (mode == "severity") {
    method = method_name(scorer, n_bins);
    const fs::path ldir = label_dir(ctx, scorer, n_bins);
    require(ctx, ldir, "make-labels --scorer " + scorer + " --bins " + std::to_string(n_bins));
    const CsvTable t = read_csv(ldir / "labels.csv");
    if (t.rows.size() != corpus.size()) throw Error(ldir.string() + ": label count does not match the corpus");
    const auto ci = t.column("sample_id"), cb = t.column("bin_label");
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      if (t.rows[i][ci] != corpus.samples[i].id) throw Error(ldir.string() + ": labels out of order");
      labels.push_back(std::stoul(t.rows[i][cb]));
    }
  }
  const std::uint64_t seed = ctx.stage_seed("pretrain");
  Backbone backbone = initial_backbone(ctx);
  ProjectionHead head = build_projection_head(ctx.config.embedding_dim, ctx.config.projection_hidden,
                                              ctx.config.projection_dim,
                                              ctx.stage_seed("projection-init"));
  spdlog::info("pretrain: {} for {} epochs", method, ctx.config.pretrain.epochs);
  PretrainResult r =
      mode == "simclr"
          ? simclr_mode(std::move(backbone), std::move(head), images, ctx.config.augment,
                        ctx.config.pretrain, seed)
          : pretrain(std::move(backbone), std::move(head), images, labels, ctx.config.augment,
                     ctx.config.pretrain, seed);
  for (double l : r.epoch_loss) {
    if (!std::isfinite(l)) throw NumericalError("pretraining loss diverged for " + method);
  }
  const fs::path dir = pretrain_dir(ctx, method);
  fs::create_directories(dir);
  save_checkpoint(dir / "backbone.ckpt",
                  stamped(to_checkpoint(r.backbone), ctx, seed, ctx.config.pretrain.epochs));
  save_checkpoint(dir / "head.ckpt",
                  stamped(to_checkpoint(r.head), ctx, seed, ctx.config.pretrain.epochs));
  std::ostringstream loss;
  loss << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    loss << e + 1 << ',' << format_double(r.epoch_loss[e]) << '\n';
  }
  write_text_file(dir / "loss.csv", loss.str());
  write_stamp(ctx, dir, "pretrain", seed);
}

void run_probe(const RunContext& ctx, const std::string& method, const std::string& task) {
  const auto biomarker = task_biomarker(task);
  const Backbone backbone = method_backbone(ctx, method);
  const Dataset train = load_split(ctx, "train");
  const std::uint64_t seed = ctx.stage_seed("probe/" + task);
  ClassifierHead head = build_classifier_head(ctx.config.embedding_dim, biomarker ? 1 : kBiomarkerCount,
                                              derive_seed(seed, "init"));
  head = train_probe(backbone, std::move(head), train, biomarker, ctx.config.probe, seed);
  const fs::path dir = probe_dir(ctx, method);
  fs::create_directories(dir);
  save_checkpoint(dir / (task + ".ckpt"), stamped(to_checkpoint(head), ctx, seed, ctx.config.probe.epochs));
  write_stamp(ctx, dir, "probe", ctx.stage_seed("probe"));
  spdlog::info("probe: {} / {}", method, task);
}

void run_evaluate(const RunContext& ctx, const std::string& method) {
  const Backbone backbone = method_backbone(ctx, method);
  const fs::path pdir = probe_dir(ctx, method);
  require(ctx, pdir, "probe --method " + method);
  std::array<ClassifierHead, kBiomarkerCount> heads;
  std::array<Dataset, kBiomarkerCount> tests;
  for (std::size_t k = 0; k < kBiomarkerCount; ++k) {
    const fs::path ckpt = pdir / (biomarker_name(k) + ".ckpt");
    if (!fs::exists(ckpt)) {
      throw MissingArtifactError("missing " + ckpt.string() + "; run `sevcon probe --method " + method +
                                 " --task " + biomarker_name(k) + "` first");
    }
    heads[k] = classifier_head_from(load_current(ctx, ckpt, "probe"));
    tests[k] = load_split(ctx, test_split_name(k));
  }
  const fs::path ml = pdir / "multilabel.ckpt";
  if (!fs::exists(ml)) {
    throw MissingArtifactError("missing " + ml.string() + "; run `sevcon probe --method " + method +
                               " --task multilabel` first");
  }
  const ClassifierHead multilabel = classifier_head_from(load_current(ctx, ml, "probe"));
  ProbeResult r = evaluate(backbone, heads, multilabel, tests, load_split(ctx, "test_multilabel"));
  r.provenance["method"] = method;
  r.provenance["config_hash"] = ctx.hash;
  r.provenance["seed"] = std::to_string(ctx.config.seed);
  for (const auto& w : r.warnings) spdlog::warn("evaluate {}: {}", method, w);
  const fs::path dir = eval_dir(ctx, method);
  fs::create_directories(dir);
  write_text_file(dir / "result.json", to_json(r).dump(2) + "\n");
  write_stamp(ctx, dir, "evaluate", 0);
  spdlog::info("evaluate: {} mean AUC {:.4f}", method, r.mean_auc);
}

void run_ablate(const RunContext& ctx) {
  require(ctx, data_dir(ctx), "gen-data");
  const std::size_t n = ctx.config.ablation_bins;
  std::ostringstream csv;
  csv << "scorer,n_bins,mean_auc\n";
  for (const auto& scorer : kScorers) {
    ensure_label_method(ctx, scorer, n);
    const ProbeResult r = load_eval(ctx, method_name(scorer, n));
    csv << scorer << ',' << n << ',' << format_double(r.mean_auc) << '\n';
  }
  const fs::path dir = ctx.root / "ablate";
  fs::create_directories(dir);
  write_text_file(dir / "ablation.csv", csv.str());
  write_stamp(ctx, dir, "ablate", 0);
}

void run_report(const RunContext& ctx) {
  const auto methods = table1_methods(ctx);
  std::ostringstream t1, t1f;
  t1 << "method";
  t1f << "method";
  for (std::size_t k = 0; k < kBiomarkerCount; ++k) {
    t1 << ',' << biomarker_name(k);
    t1f << ',' << biomarker_name(k);
  }
  t1 << ",multi_label\n";
  t1f << '\n';
  for (const auto& m : methods) {
    const ProbeResult r = load_eval(ctx, m);
    t1 << m;
    t1f << m;
    for (const auto& b : r.binary) {
      t1 << ',' << format_double(b.accuracy);
      t1f << ',' << format_double(b.f1);
    }
    t1 << ',' << format_double(r.mean_auc) << '\n';
    t1f << '\n';
  }

  require(ctx, ctx.root / "ablate", "ablate");
  const std::string table2 = read_text_file(ctx.root / "ablate" / "ablation.csv");

  // Extreme bins of the finest-grained severity labeling that still holds k per bin.
  require(ctx, score_dir(ctx, "severity"), "score --scorer severity");
  const auto rows = read_scores(score_dir(ctx, "severity") / "scores.csv");
  const std::size_t n_bins = *std::min_element(ctx.config.bins.begin(), ctx.config.bins.end());
  const SeverityLabeling labeling = assign_severity_labels(severities(rows), n_bins);
  const std::uint64_t seed = ctx.stage_seed("report");
  const ExtremeBinReport extremes = extreme_bin_report(labeling, ctx.config.report_k, seed);
  const Dataset corpus = load_split(ctx, "unlabeled");
  const auto truth = load_ground_truth(data_dir(ctx) / "unlabeled_truth", corpus);
  const auto images = corpus.images();

  json ex;
  ex["scorer"] = "severity";
  ex["n_bins"] = n_bins;
  ex["k"] = extremes.k;
  ex["seed"] = extremes.seed;
  for (const auto& [key, ids] : {std::pair{"low", &extremes.low}, std::pair{"high", &extremes.high}}) {
    json list = json::array();
    for (auto i : *ids) {
      list.push_back({{"sample_id", rows[i].id},
                      {"severity_score", rows[i].severity},
                      {"bin_label", labeling.labels[i]},
                      {"true_lesions", truth[i].severity}});
    }
    ex[key] = list;
  }

  json prov;
  prov["config_hash"] = ctx.hash;
  prov["seed"] = ctx.config.seed;
  prov["config"] = to_ini(ctx.config);
  prov["table1_methods"] = methods;
  std::vector<fs::path> stamps;
  for (const auto& entry : fs::recursive_directory_iterator(ctx.root)) {
    if (entry.path().filename() == "stamp.json" &&
        entry.path().parent_path() != ctx.root / "report") {
      stamps.push_back(entry.path());
    }
  }
  std::sort(stamps.begin(), stamps.end());
  json stages = json::object();
  for (const auto& p : stamps) {
    stages[fs::relative(p.parent_path(), ctx.root).generic_string()] =
        json::parse(read_text_file(p));
  }
  prov["stages"] = stages;

  const fs::path dir = ctx.root / "report";
  fs::create_directories(dir);
  write_text_file(dir / "table1.csv", t1.str());
  write_text_file(dir / "table1_f1.csv", t1f.str());
  write_text_file(dir / "table2.csv", table2);
  write_text_file(dir / "contact_sheet.pgm", render_contact_sheet(extremes, images));
  write_text_file(dir / "extremes.json", ex.dump(2) + "\n");
  write_text_file(dir / "provenance.json", prov.dump(2) + "\n");
  write_stamp(ctx, dir, "report", seed);
  spdlog::info("report written to {}", dir.string());
}

void run_all(const RunContext& ctx) {
  ensure(ctx, data_dir(ctx), [&] { run_gen_data(ctx); });
  for (auto n : ctx.config.bins) ensure_label_method(ctx, "severity", n);
  ensure(ctx, pretrain_dir(ctx, "simclr"), [&] { run_pretrain(ctx, "simclr", "", 0); });
  ensure_method(ctx, "simclr");
  ensure_method(ctx, "random");
  ensure(ctx, ctx.root / "ablate", [&] { run_ablate(ctx); });
  run_report(ctx);
}

}  // namespace sevcon
