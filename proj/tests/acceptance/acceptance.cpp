// End-to-end acceptance check. Prints one PASS/FAIL line per criterion.
//
//   acceptance --cli <path to sevcon> --work <scratch dir>
//
// Run A is the default configuration driven through the CLI; run B is a small
// configuration with ODIN(T=1, eps=0), executed twice for the determinism checks.

#include <CLI11.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sevcon/contrastive.hpp"
#include "sevcon/experiment.hpp"
#include "sevcon/gradcon.hpp"
#include "sevcon/labeling.hpp"
#include "sevcon/metrics.hpp"
#include "sevcon/util.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace sevcon;
using namespace sevcon::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

std::string cli_path;

int run_cli(const fs::path& run_dir, const std::string& args) {
  const std::string cmd = "\"" + cli_path + "\" -q --run-dir \"" + run_dir.string() + "\" " + args;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void must(int code, const std::string& what) {
  if (code != 0) throw std::runtime_error(what + " exited with " + std::to_string(code));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- 1

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  auto note = [&](double err, const std::string& name) {
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  };
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(900 + seed);
    std::vector<std::pair<std::string, Sequential>> cases;
    {
      Sequential s;
      s.add<Dense>(5, 4);
      cases.emplace_back("dense", std::move(s));
    }
    {
      Sequential s;
      s.add<Conv2d>(2, 3, 3, 1);
      cases.emplace_back("conv2d", std::move(s));
    }
    {
      Sequential s;
      s.add<Conv2d>(2, 3, 3, 2);
      cases.emplace_back("strided conv2d", std::move(s));
    }
    {
      Sequential s;
      s.add<Upsample2x>();
      s.add<Conv2d>(2, 2, 3, 1);
      cases.emplace_back("upsample", std::move(s));
    }
    {
      Sequential s;
      s.add<Relu>();
      cases.emplace_back("relu", std::move(s));
    }
    {
      Sequential s;
      s.add<Sigmoid>();
      cases.emplace_back("sigmoid", std::move(s));
    }
    {
      Sequential s;
      s.add<Flatten>();
      s.add<Dense>(2 * 6 * 6, 3);
      s.add<Reshape>(Shape{3, 1, 1});
      cases.emplace_back("flatten/reshape", std::move(s));
    }
    for (auto& [name, net] : cases) {
      net.init(rng);
      const Tensor x = name == "dense" ? random_tensor({3, 5}, rng) : random_tensor({2, 2, 6, 6}, rng);
      const auto check = check_network_gradients(net, x, rng);
      note(check.max_parameter_error, name + " params");
      note(check.input_error, name + " input");
    }

    // Reconstruction loss with respect to the reconstruction.
    const Tensor target = random_tensor({2, 1, 5, 5}, rng, 0.0, 1.0);
    Tensor recon = random_tensor({2, 1, 5, 5}, rng, 0.0, 1.0);
    const Tensor analytic = reconstruction_loss_gradient(target, recon);
    const Tensor numeric =
        numeric_gradient(recon, [&] { return reconstruction_loss(target, recon); }, 1e-6);
    note(relative_error(analytic, numeric), "reconstruction loss");

    // SupCon with respect to the embeddings.
    for (double tau : {0.07, 1.0}) {
      const std::size_t b = 3 + seed;
      Tensor z = random_unit_rows(2 * b, 4, rng);
      std::vector<std::size_t> labels(2 * b);
      for (std::size_t i = 0; i < b; ++i) labels[i] = labels[i + b] = rng() % 2;
      const Tensor g = supcon_loss(z, labels, tau).gradient;
      const Tensor n = numeric_gradient(z, [&] { return supcon_loss(z, labels, tau).loss; }, 1e-6);
      note(relative_error(g, n), "supcon");
    }
  }
  const double t = seconds_since(t0);
  return {worst < 1e-4 && t < 60.0,
          fmt("max rel. error %.2e (%s), %.1f s", worst, worst_name.c_str(), t)};
}

// ---------------------------------------------------------------- 2

Outcome supcon_oracle() {
  std::mt19937_64 rng(2022);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + rng() % 16;
    const Tensor z = random_unit_rows(2 * b, 8, rng);
    std::vector<std::size_t> labels(2 * b);
    const std::size_t classes = 1 + rng() % 5;
    for (std::size_t i = 0; i < b; ++i) labels[i] = labels[i + b] = rng() % classes;
    const double tau = trial % 2 ? 0.07 : 0.5;
    worst = std::max(worst, std::abs(supcon_loss(z, labels, tau).loss - brute_force_supcon(z, labels, tau)));
  }
  const Tensor hand({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
  const std::vector<std::size_t> hl{0, 0, 1, 1};
  const double hand_value = supcon_loss(hand, hl, 1.0).loss;
  const double hand_err = std::abs(hand_value - (std::log(std::exp(1.0) + 2.0) - 1.0));
  return {worst <= 1e-9 && hand_err <= 1e-9 && std::abs(hand_value - 0.55144) < 1e-5,
          fmt("50 batches max |diff| %.2e, hand case %.5f", worst, hand_value)};
}

// ---------------------------------------------------------------- 3

Outcome binning() {
  std::mt19937_64 rng(31337);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::size_t failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 80;
    std::vector<double> s(n);
    for (auto& v : s) v = u(rng);
    std::size_t bins = 1 + rng() % n;
    if (trial % 10 == 0) bins = 1;
    if (trial % 10 == 1) bins = n;
    const SeverityLabeling l = assign_severity_labels(s, bins);
    bool ok = l.labels.size() == n && l.bin_sizes.size() == bins;
    std::vector<std::size_t> counts(bins, 0);
    for (auto lab : l.labels) {
      if (lab >= bins) ok = false;
      else ++counts[lab];
    }
    ok = ok && counts == l.bin_sizes;
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    ok = ok && *hi - *lo <= 1 && *lo >= 1;
    for (std::size_t i = 0; i < n && ok; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (s[i] < s[j] && l.labels[i] > l.labels[j]) ok = false;
      }
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> shuffled(n);
    for (std::size_t i = 0; i < n; ++i) shuffled[i] = s[perm[i]];
    const SeverityLabeling ls = assign_severity_labels(shuffled, bins);
    for (std::size_t i = 0; i < n; ++i) ok = ok && ls.labels[i] == l.labels[perm[i]];
    if (!ok) ++failures;
  }
  return {failures == 0, fmt("%zu of 1000 instances violate a property", failures)};
}

// ---------------------------------------------------------------- 4

Outcome gradcon_behavior(const fs::path& run, double stage_seconds) {
  const CsvTable held = read_csv(run / "gradcon" / "heldout_scores.csv");
  const CsvTable unl = read_csv(run / "scores" / "severity" / "scores.csv");
  const CsvTable truth = read_csv(run / "data" / "unlabeled_truth" / "labels.csv");
  std::vector<double> scores;
  std::vector<std::uint8_t> anomalous;
  for (const auto& r : held.rows) {
    scores.push_back(std::stod(r[held.column("severity")]));
    anomalous.push_back(0);
  }
  std::vector<double> corpus_scores, true_severity;
  for (std::size_t i = 0; i < unl.rows.size(); ++i) {
    const double s = std::stod(unl.rows[i][unl.column("severity")]);
    const double t = std::stod(truth.rows[i][truth.column("severity")]);
    corpus_scores.push_back(s);
    true_severity.push_back(t);
    if (t > 0) {
      scores.push_back(s);
      anomalous.push_back(1);
    }
  }
  const double auroc = roc_auc(scores, anomalous);
  const double rho = spearman(corpus_scores, true_severity);
  const CsvTable log = read_csv(run / "gradcon" / "log.csv");
  const double first = std::stod(log.rows.front()[log.column("heldout_grad")]);
  const double last = std::stod(log.rows.back()[log.column("heldout_grad")]);
  return {auroc >= 0.9 && rho >= 0.6 && last > first && stage_seconds <= 300.0,
          fmt("AUROC %.4f, Spearman %.4f, held-out L_grad %.4f -> %.4f, %.0f s", auroc, rho, first,
              last, stage_seconds)};
}

// ---------------------------------------------------------------- 5

double mean_auc(const fs::path& run, const std::string& method) {
  return nlohmann::json::parse(slurp(run / "eval" / method / "result.json")).at("mean_auc").get<double>();
}

Outcome pipeline_value(const fs::path& run, const ExperimentConfig& config, double total_seconds) {
  const double random = mean_auc(run, "random");
  const double simclr = mean_auc(run, "simclr");
  const std::string primary = "severity-n" + std::to_string(config.ablation_bins);
  const double severity = mean_auc(run, primary);
  std::string others;
  for (auto n : config.bins) {
    others += fmt(" n%zu=%.4f", n, mean_auc(run, "severity-n" + std::to_string(n)));
  }
  return {severity >= random + 0.05 && severity >= simclr && total_seconds <= 900.0,
          fmt("%s %.4f vs random %.4f, simclr %.4f (all:%s), run %.0f s", primary.c_str(), severity,
              random, simclr, others.c_str(), total_seconds)};
}

// ---------------------------------------------------------------- 6

Outcome ablation(const fs::path& run_a, const fs::path& b1, const fs::path& b2) {
  const CsvTable t = read_csv(run_a / "ablate" / "ablation.csv");
  std::vector<std::string> scorers;
  std::set<std::string> n_values;
  for (const auto& r : t.rows) {
    scorers.push_back(r[t.column("scorer")]);
    n_values.insert(r[t.column("n_bins")]);
  }
  const bool rows_ok = scorers == std::vector<std::string>{"severity", "msp", "odin", "mahalanobis"} &&
                       n_values.size() == 1;
  const bool deterministic = slurp(b1 / "ablate" / "ablation.csv") == slurp(b2 / "ablate" / "ablation.csv");
  const CsvTable tb = read_csv(b1 / "ablate" / "ablation.csv");
  std::string msp, odin;
  for (const auto& r : tb.rows) {
    if (r[0] == "msp") msp = r[tb.column("mean_auc")];
    if (r[0] == "odin") odin = r[tb.column("mean_auc")];
  }
  const bool scores_equal = slurp(b1 / "scores" / "msp" / "scores.csv") ==
                            slurp(b1 / "scores" / "odin" / "scores.csv");
  const bool odin_is_msp = !msp.empty() && msp == odin && scores_equal;
  std::string rows;
  for (const auto& r : t.rows) rows += " " + r[0] + "=" + r[t.column("mean_auc")].substr(0, 6);
  return {rows_ok && deterministic && odin_is_msp,
          fmt("rows:%s; rerun identical: %s; ODIN(T=1,eps=0) == MSP bitwise: %s", rows.c_str(),
              deterministic ? "yes" : "no", odin_is_msp ? "yes" : "no")};
}

// ---------------------------------------------------------------- 7

Outcome bin_sweep(const fs::path& run) {
  const CsvTable t = read_csv(run / "report" / "table1.csv");
  std::size_t severity_rows = 0;
  std::string names;
  for (const auto& r : t.rows) {
    if (r[0].rfind("severity-n", 0) == 0) {
      ++severity_rows;
      names += " " + r[0];
    }
  }
  return {severity_rows >= 3, fmt("%zu severity rows in table1.csv:%s", severity_rows, names.c_str())};
}

// ---------------------------------------------------------------- 8

Outcome metric_oracles() {
  std::mt19937_64 rng(8080);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 150;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = trial % 2 ? static_cast<double>(rng() % 10) : std::generate_canonical<double, 53>(rng);
      y[i] = rng() % 2;
    }
    y[0] = 0;
    y[1] = 1;
    if (roc_auc(s, y) != brute_force_auc(s, y)) ++mismatches;
  }
  using Bits = std::vector<std::uint8_t>;
  const bool hand = accuracy(Bits{1, 1, 0, 0}, Bits{1, 0, 1, 0}) == 0.5 &&
                    accuracy(Bits{1, 0, 1}, Bits{1, 0, 1}) == 1.0 &&
                    f1(Bits{1, 1, 0, 0}, Bits{1, 0, 1, 0}) == 0.5 &&
                    f1(Bits{1, 0, 1}, Bits{1, 0, 1}) == 1.0 &&
                    roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, Bits{1, 1, 0, 0}) == 1.0 &&
                    roc_auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, Bits{0, 1, 0, 1}) == 0.5;
  return {mismatches == 0 && hand,
          fmt("%zu of 200 AUC instances differ from the all-pairs count; hand values %s", mismatches,
              hand ? "match" : "differ")};
}

// ---------------------------------------------------------------- 9

// Loads each checkpoint, rebuilds the model, and saves it again: the bytes must not move.
bool resave_identical(const fs::path& path, const fs::path& scratch,
                      const std::function<Checkpoint(const Checkpoint&)>& rebuild) {
  const Checkpoint c = load_checkpoint(path);
  Checkpoint again = rebuild(c);
  again.config_hash = c.config_hash;
  again.seed = c.seed;
  again.epoch = c.epoch;
  save_checkpoint(scratch, again);
  return slurp(path) == slurp(scratch) && load_checkpoint(scratch) == c;
}

Outcome persistence(const fs::path& run_a, const fs::path& b1, const fs::path& b2,
                    const fs::path& scratch) {
  std::size_t identical = 0, compared = 0;
  for (const auto& name : {"table1.csv", "table1_f1.csv", "table2.csv", "extremes.json",
                           "contact_sheet.pgm"}) {
    ++compared;
    if (slurp(b1 / "report" / name) == slurp(b2 / "report" / name) &&
        !slurp(b1 / "report" / name).empty()) {
      ++identical;
    }
  }
  bool checkpoints = true;
  const fs::path tmp = scratch / "resave.ckpt";
  checkpoints &= resave_identical(run_a / "gradcon" / "autoencoder.ckpt", tmp,
                                  [](const Checkpoint& c) { return to_checkpoint(autoencoder_from(c)); });
  checkpoints &= resave_identical(run_a / "gradcon" / "reference.ckpt", tmp,
                                  [](const Checkpoint& c) { return to_checkpoint(reference_from(c)); });
  checkpoints &= resave_identical(run_a / "pretrain" / "simclr" / "backbone.ckpt", tmp,
                                  [](const Checkpoint& c) { return to_checkpoint(backbone_from(c)); });
  checkpoints &= resave_identical(run_a / "pretrain" / "simclr" / "head.ckpt", tmp, [](const Checkpoint& c) {
    return to_checkpoint(projection_head_from(c));
  });
  checkpoints &= resave_identical(run_a / "probe" / "simclr" / "multilabel.ckpt", tmp, [](const Checkpoint& c) {
    return to_checkpoint(classifier_head_from(c));
  });
  checkpoints &= resave_identical(run_a / "scores" / "classifier" / "classifier.ckpt", tmp,
                                  [](const Checkpoint& c) {
                                    return to_checkpoint(supervised_classifier_from(c));
                                  });
  return {identical == compared && checkpoints,
          fmt("%zu/%zu report files identical across reruns; 6 checkpoint kinds round-trip %s",
              identical, compared, checkpoints ? "bitwise" : "with differences")};
}

const char* kRunB =
    "[data]\nhealthy = 96\nheldout = 24\nunlabeled = 160\ntrain = 120\ntest_per_biomarker = 20\n\n"
    "[gradcon]\nepochs = 3\n\n"
    "[labels]\nbins = 8, 16, 32\nreport_k = 2\n\n"
    "[pretrain]\nepochs = 2\n\n"
    "[probe]\nepochs = 5\n\n"
    "[baselines]\nclassifier_epochs = 2\nablation_bins = 8\nodin_temperature = 1\nodin_epsilon = 0\n";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance"};
  std::string work;
  app.add_option("--cli", cli_path)->required();
  app.add_option("--work", work)->required();
  CLI11_PARSE(app, argc, argv);

  const fs::path root = fs::absolute(work);
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path run_a = root / "run_a";
  const fs::path b1 = root / "run_b1";
  const fs::path b2 = root / "run_b2";
  const fs::path small = root / "run_b.ini";
  write_text_file(small, kRunB);

  std::vector<std::pair<int, Outcome>> results;
  results.emplace_back(1, gradients());
  results.emplace_back(2, supcon_oracle());
  results.emplace_back(3, binning());
  results.emplace_back(8, metric_oracles());

  try {
    const auto t_all = Clock::now();
    must(run_cli(run_a, "gen-data"), "gen-data");
    const auto t_gc = Clock::now();
    must(run_cli(run_a, "train-gradcon"), "train-gradcon");
    must(run_cli(run_a, "score --scorer severity"), "score");
    const double gc_seconds = seconds_since(t_gc);
    must(run_cli(run_a, "all"), "all");
    const double total_seconds = seconds_since(t_all);
    const ExperimentConfig config = load_config(run_a / "config.ini");

    must(run_cli(b1, "--config \"" + small.string() + "\" all"), "run B (first)");
    must(run_cli(b2, "--config \"" + small.string() + "\" all"), "run B (second)");

    results.emplace_back(4, gradcon_behavior(run_a, gc_seconds));
    results.emplace_back(5, pipeline_value(run_a, config, total_seconds));
    results.emplace_back(6, ablation(run_a, b1, b2));
    results.emplace_back(7, bin_sweep(run_a));
    results.emplace_back(9, persistence(run_a, b1, b2, root));
  } catch (const std::exception& e) {
    std::printf("pipeline run failed: %s\n", e.what());
    for (int c = 4; c <= 9; ++c) {
      if (std::none_of(results.begin(), results.end(), [&](const auto& r) { return r.first == c; })) {
        results.emplace_back(c, Outcome{false, "not evaluated"});
      }
    }
  }

  std::sort(results.begin(), results.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  int failed = 0;
  std::ostringstream report;
  for (const auto& [criterion, outcome] : results) {
    report << "criterion " << criterion << ": " << (outcome.pass ? "PASS" : "FAIL") << "  "
           << outcome.detail << '\n';
    failed += outcome.pass ? 0 : 1;
  }
  std::fputs(report.str().c_str(), stdout);
  std::fflush(stdout);
  std::ofstream(root / "acceptance_report.txt") << report.str();
  return failed == 0 ? 0 : 1;
}
