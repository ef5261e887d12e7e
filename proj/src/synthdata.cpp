#include "sevcon/synthdata.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sevcon/util.hpp"

namespace sevcon {

namespace {

constexpr char kImageMagic[4] = {'S', 'V', 'I', 'M'};
constexpr std::uint8_t kFloat64 = 1;

struct Geometry {
  double top0 = 0;
  double amplitude = 0;
  double frequency = 0;
  double phase = 0;
  double thickness = 0;
};

struct Bump {
  double center = 0;
  double width = 1;
  double height = 0;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

class Renderer {
 public:
  Renderer(const SynthConfig& config, std::uint64_t sample_seed)
      : config_(config), side_(static_cast<double>(config.image_side)),
        scale_(side_ / 32.0) {
    std::mt19937_64 rng(splitmix64(sample_seed ^ 0x1ULL));
    geo_.top0 = uniform(rng, 0.28, 0.38) * side_;
    geo_.amplitude = uniform(rng, 0.0, 0.05) * side_;
    geo_.frequency = uniform(rng, 0.5, 1.5) * 2.0 * std::numbers::pi / side_;
    geo_.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    geo_.thickness = uniform(rng, 0.30, 0.36) * side_;
  }

  double top(double x) const {
    double t = geo_.top0 + geo_.amplitude * std::sin(geo_.frequency * x + geo_.phase);
    for (const auto& b : bumps_) t -= b.height / 3.0 * bump_profile(b, x);
    return t;
  }

  double thickness(double x) const {
    double t = geo_.thickness;
    for (const auto& b : bumps_) t += b.height * bump_profile(b, x);
    return t;
  }

  void add_bump(const Bump& bump) { bumps_.push_back(bump); }

  Tensor base_image() const {
    const auto n = config_.image_side;
    Tensor img({n, n});
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        img[y * n + x] = base_intensity(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
      }
    }
    return img;
  }

  double scale() const { return scale_; }
  double side() const { return side_; }

 private:
  static double bump_profile(const Bump& b, double x) {
    const double u = (x - b.center) / b.width;
    return std::exp(-u * u);
  }

  double base_intensity(double x, double y) const {
    const double t = top(x);
    const double th = thickness(x);
    if (y < t) return 0.08;
    const double depth = (y - t) / th;
    if (depth < 1.0) {
      if (depth < 0.08) return 0.7;
      const double stripe =
          0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(config_.layer_count) * depth);
      return 0.35 + config_.layer_contrast * stripe;
    }
    const double below = y - (t + th);
    if (below < 1.8 * scale_) return 0.85;
    return 0.1 + 0.25 * std::exp(-below / (0.15 * side_));
  }

  SynthConfig config_;
  double side_;
  double scale_;
  Geometry geo_;
  std::vector<Bump> bumps_;
};

void paint_ellipse(Tensor& img, std::size_t n, double cx, double cy, double rx, double ry,
                   double value) {
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
      const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) img[y * n + x] = value;
    }
  }
}

void paint_curve(Tensor& img, std::size_t n, double x0, double x1, double thickness,
                 double value, const auto& curve_y) {
  for (std::size_t x = 0; x < n; ++x) {
    const double xc = static_cast<double>(x) + 0.5;
    if (xc < x0 || xc > x1) continue;
    const double yc = curve_y(xc);
    for (std::size_t y = 0; y < n; ++y) {
      const double d = static_cast<double>(y) + 0.5 - yc;
      if (d >= -thickness / 2.0 && d < thickness / 2.0) img[y * n + x] = value;
    }
  }
}

std::uint64_t sample_seed(const SynthConfig& config, std::string_view split, std::size_t index) {
  return splitmix64(derive_seed(config.seed, split) + index);
}

std::string make_id(const std::string& prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "-%06zu", index);
  return prefix + buf;
}

Biomarkers presence(const std::vector<Lesion>& lesions) {
  Biomarkers b{};
  for (auto l : lesions) b[static_cast<std::size_t>(l)] = 1;
  return b;
}

ImageSample labeled_sample(const SynthConfig& config, const std::string& split, std::size_t index,
                           const std::vector<Lesion>& lesions) {
  ImageSample s;
  s.id = make_id(split, index);
  s.image = render_image(config, sample_seed(config, split, index), lesions);
  s.biomarkers = presence(lesions);
  s.severity = static_cast<std::uint32_t>(lesions.size());
  return s;
}

// Each biomarker present with probability 1/2; `forced` pins one of them.
std::vector<Lesion> draw_lesion_set(std::mt19937_64& rng, int forced_index, bool forced_value) {
  std::vector<Lesion> lesions;
  std::bernoulli_distribution coin(0.5);
  for (std::size_t b = 0; b < kBiomarkerCount; ++b) {
    bool present = coin(rng);
    if (static_cast<int>(b) == forced_index) present = forced_value;
    if (present) lesions.push_back(static_cast<Lesion>(b));
  }
  return lesions;
}

}  // namespace

std::string biomarker_name(std::size_t index) {
  if (index >= kBiomarkerCount) throw Error("biomarker index out of range");
  return std::string("bio_") + static_cast<char>('a' + index);
}

std::string to_string(Lesion lesion) {
  switch (lesion) {
    case Lesion::fluid_blob: return "fluid-blob";
    case Lesion::bright_focus: return "bright-focus";
    case Lesion::detachment_line: return "detachment-line";
    case Lesion::thickening: return "thickening";
    case Lesion::epiretinal_band: return "epiretinal-band";
  }
  return "unknown";
}

void validate(const SynthConfig& config) {
  if (config.image_side != 32 && config.image_side != 64) {
    throw ConfigError("synthetic image side must be 32 or 64");
  }
  if (config.layer_count == 0) throw ConfigError("layer_count must be positive");
  if (!(config.noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  if (!(config.layer_contrast >= 0.0)) throw ConfigError("layer_contrast must be non-negative");
}

std::vector<Tensor> Dataset::images() const {
  std::vector<Tensor> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.image);
  return out;
}

Tensor render_image(const SynthConfig& config, std::uint64_t seed,
                    const std::vector<Lesion>& lesions) {
  validate(config);
  Renderer r(config, seed);
  const std::size_t n = config.image_side;
  const double s = r.scale();
  const double side = r.side();

  std::mt19937_64 lesion_rng(splitmix64(seed ^ 0x2ULL));
  struct Placed {
    Lesion kind;
    double a, b, c, d;
  };
  std::vector<Placed> placed;
  for (auto kind : lesions) {
    Placed p{kind, 0, 0, 0, 0};
    switch (kind) {
      case Lesion::fluid_blob:
        p = {kind, uniform(lesion_rng, 0.15, 0.85) * side, uniform(lesion_rng, 0.35, 0.7),
             uniform(lesion_rng, 2.5, 4.5) * s, uniform(lesion_rng, 1.8, 3.0) * s};
        break;
      case Lesion::bright_focus:
        p = {kind, uniform(lesion_rng, 0.1, 0.9) * side, uniform(lesion_rng, 0.2, 0.8),
             uniform(lesion_rng, 1.1, 1.6) * s, 0};
        break;
      case Lesion::detachment_line:
        p = {kind, uniform(lesion_rng, 0.0, 0.45) * side, uniform(lesion_rng, 0.35, 0.6) * side,
             uniform(lesion_rng, 3.0, 5.5) * s, 0};
        break;
      case Lesion::thickening:
        p = {kind, uniform(lesion_rng, 0.2, 0.8) * side, uniform(lesion_rng, 0.12, 0.2) * side,
             uniform(lesion_rng, 0.12, 0.2) * side, 0};
        r.add_bump(Bump{p.a, p.b, p.c});
        break;
      case Lesion::epiretinal_band:
        p = {kind, uniform(lesion_rng, 0.0, 0.5) * side, uniform(lesion_rng, 0.35, 0.5) * side,
             0, 0};
        break;
    }
    placed.push_back(p);
  }

  Tensor img = r.base_image();
  for (const auto& p : placed) {
    switch (p.kind) {
      case Lesion::fluid_blob: {
        const double cy = r.top(p.a) + p.b * r.thickness(p.a);
        paint_ellipse(img, n, p.a, cy, p.c, p.d, 0.06);
        break;
      }
      case Lesion::bright_focus: {
        const double cy = r.top(p.a) + p.b * r.thickness(p.a);
        paint_ellipse(img, n, p.a, cy, p.c, p.c, 0.97);
        break;
      }
      case Lesion::detachment_line:
        paint_curve(img, n, p.a, p.a + p.b, 1.0 * s, 0.75,
                    [&](double x) { return r.top(x) - p.c; });
        break;
      case Lesion::thickening:
        break;  // geometric; already applied through the bump
      case Lesion::epiretinal_band:
        paint_curve(img, n, p.a, p.a + p.b, 2.0 * s, 0.97,
                    [&](double x) { return r.top(x) - 1.0 * s; });
        break;
    }
  }

  std::mt19937_64 noise_rng(splitmix64(seed ^ 0x3ULL));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& v : img.values()) {
    v += config.noise_std * noise(noise_rng);
    v = std::clamp(v, 0.0, 1.0);
  }
  return img;
}

Dataset generate_healthy(std::size_t n, const SynthConfig& config, const std::string& name) {
  validate(config);
  Dataset d;
  d.name = name;
  d.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ImageSample s;
    s.id = make_id(name, i);
    s.image = render_image(config, sample_seed(config, name, i), {});
    s.biomarkers = Biomarkers{};
    s.severity = 0;
    d.samples.push_back(std::move(s));
  }
  return d;
}

UnlabeledCorpus generate_unlabeled(std::size_t n, std::uint32_t severity_max,
                                   const SynthConfig& config) {
  validate(config);
  const std::string split = "unlabeled";
  UnlabeledCorpus corpus;
  corpus.images.name = split;
  std::mt19937_64 rng(derive_seed(config.seed, "unlabeled/severity"));
  std::uniform_int_distribution<std::uint32_t> severity_dist(0, severity_max);
  std::uniform_int_distribution<int> type_dist(0, static_cast<int>(kBiomarkerCount) - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t severity = severity_dist(rng);
    std::vector<Lesion> lesions;
    for (std::uint32_t k = 0; k < severity; ++k) lesions.push_back(static_cast<Lesion>(type_dist(rng)));
    ImageSample s;
    s.id = make_id(split, i);
    s.image = render_image(config, sample_seed(config, split, i), lesions);
    corpus.images.samples.push_back(std::move(s));
    corpus.ground_truth.push_back(GroundTruth{severity, presence(lesions)});
  }
  return corpus;
}

LabeledSplits generate_labeled_splits(std::size_t n_train, std::size_t n_test_per_biomarker,
                                      const SynthConfig& config) {
  validate(config);
  if (n_test_per_biomarker % 2 != 0) {
    throw ConfigError("n_test_per_biomarker must be even for balanced test sets");
  }
  LabeledSplits splits;
  {
    splits.train.name = "train";
    std::mt19937_64 rng(derive_seed(config.seed, "train/lesions"));
    for (std::size_t i = 0; i < n_train; ++i) {
      splits.train.samples.push_back(labeled_sample(config, "train", i, draw_lesion_set(rng, -1, false)));
    }
  }
  for (std::size_t b = 0; b < kBiomarkerCount; ++b) {
    const std::string split = "test_" + biomarker_name(b);
    auto& d = splits.binary_test[b];
    d.name = split;
    std::mt19937_64 rng(derive_seed(config.seed, split + "/lesions"));
    for (std::size_t i = 0; i < n_test_per_biomarker; ++i) {
      const bool present = i < n_test_per_biomarker / 2;
      d.samples.push_back(
          labeled_sample(config, split, i, draw_lesion_set(rng, static_cast<int>(b), present)));
    }
  }
  {
    splits.multilabel_test.name = "test_multilabel";
    std::mt19937_64 rng(derive_seed(config.seed, "test_multilabel/lesions"));
    for (std::size_t i = 0; i < n_test_per_biomarker; ++i) {
      splits.multilabel_test.samples.push_back(
          labeled_sample(config, "test_multilabel", i, draw_lesion_set(rng, -1, false)));
    }
  }
  return splits;
}

// ---------------------------------------------------------------- persistence

void write_image_file(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2 || image.dim(0) != image.dim(1)) {
    throw ShapeError("write_image_file: expected a square image");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto side = static_cast<std::uint32_t>(image.dim(0));
  out.write(kImageMagic, 4);
  out.write(reinterpret_cast<const char*>(&side), sizeof(side));
  out.put(static_cast<char>(kFloat64));
  out.write(reinterpret_cast<const char*>(image.data()),
            static_cast<std::streamsize>(image.size() * sizeof(double)));
}

Tensor read_image_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open image " + path.string());
  char magic[4];
  std::uint32_t side = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&side), sizeof(side));
  const int type = in.get();
  if (!in || std::memcmp(magic, kImageMagic, 4) != 0 || type != kFloat64 || side == 0) {
    throw Error(path.string() + ": not a sevcon image file");
  }
  Tensor img({side, side});
  in.read(reinterpret_cast<char*>(img.data()),
          static_cast<std::streamsize>(img.size() * sizeof(double)));
  if (!in) throw Error(path.string() + ": truncated image payload");
  return img;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                  const SynthConfig& config, const std::string& config_hash) {
  std::filesystem::create_directories(dir / "images");
  nlohmann::json manifest;
  manifest["name"] = dataset.name;
  manifest["config_hash"] = config_hash;
  manifest["seed"] = config.seed;
  manifest["synth"] = {{"image_side", config.image_side},
                       {"layer_count", config.layer_count},
                       {"layer_contrast", config.layer_contrast},
                       {"noise_std", config.noise_std}};
  bool labelled = !dataset.samples.empty();
  std::vector<std::string> ids;
  for (const auto& s : dataset.samples) {
    ids.push_back(s.id);
    write_image_file(dir / "images" / (s.id + ".img"), s.image);
    labelled = labelled && s.biomarkers.has_value() && s.severity.has_value();
  }
  manifest["samples"] = ids;
  manifest["labelled"] = labelled;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");

  if (labelled) {
    std::ostringstream csv;
    csv << "sample_id";
    for (std::size_t b = 0; b < kBiomarkerCount; ++b) csv << ',' << biomarker_name(b);
    csv << ",severity\n";
    for (const auto& s : dataset.samples) {
      csv << s.id;
      for (auto v : *s.biomarkers) csv << ',' << static_cast<int>(v);
      csv << ',' << *s.severity << '\n';
    }
    write_text_file(dir / "labels.csv", csv.str());
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  Dataset d;
  d.name = manifest.at("name").get<std::string>();
  for (const auto& id : manifest.at("samples")) {
    ImageSample s;
    s.id = id.get<std::string>();
    s.image = read_image_file(dir / "images" / (s.id + ".img"));
    d.samples.push_back(std::move(s));
  }
  if (manifest.value("labelled", false)) {
    const auto table = read_csv(dir / "labels.csv");
    if (table.rows.size() != d.samples.size()) throw Error(dir.string() + ": labels/manifest size mismatch");
    const auto severity_col = table.column("severity");
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto& row = table.rows[i];
      if (row[0] != d.samples[i].id) throw Error(dir.string() + ": labels.csv out of order");
      Biomarkers b{};
      for (std::size_t k = 0; k < kBiomarkerCount; ++k) {
        b[k] = static_cast<std::uint8_t>(std::stoi(row[table.column(biomarker_name(k))]));
      }
      d.samples[i].biomarkers = b;
      d.samples[i].severity = static_cast<std::uint32_t>(std::stoul(row[severity_col]));
    }
  }
  return d;
}

void save_ground_truth(const std::filesystem::path& dir, const UnlabeledCorpus& corpus) {
  std::ostringstream csv;
  csv << "sample_id";
  for (std::size_t b = 0; b < kBiomarkerCount; ++b) csv << ',' << biomarker_name(b);
  csv << ",severity\n";
  for (std::size_t i = 0; i < corpus.images.samples.size(); ++i) {
    csv << corpus.images.samples[i].id;
    for (auto v : corpus.ground_truth[i].biomarkers) csv << ',' << static_cast<int>(v);
    csv << ',' << corpus.ground_truth[i].severity << '\n';
  }
  write_text_file(dir / "labels.csv", csv.str());
}

std::vector<GroundTruth> load_ground_truth(const std::filesystem::path& dir, const Dataset& images) {
  const auto table = read_csv(dir / "labels.csv");
  if (table.rows.size() != images.samples.size()) throw Error("ground truth size mismatch");
  std::vector<GroundTruth> out;
  const auto severity_col = table.column("severity");
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    if (row[0] != images.samples[i].id) throw Error("ground truth out of order");
    GroundTruth g;
    g.severity = static_cast<std::uint32_t>(std::stoul(row[severity_col]));
    for (std::size_t k = 0; k < kBiomarkerCount; ++k) {
      g.biomarkers[k] = static_cast<std::uint8_t>(std::stoi(row[table.column(biomarker_name(k))]));
    }
    out.push_back(g);
  }
  return out;
}

}  // namespace sevcon
