// sevcon: severity-labeling and contrastive pretraining pipeline driver.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <string>
#include <vector>

#include "sevcon/pipeline.hpp"
#include "sevcon/util.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kMissing = 3, kNumerical = 4 };

sevcon::ExperimentConfig resolve_config(const std::filesystem::path& run_dir,
                                        const std::string& config_path,
                                        const std::vector<std::string>& sets) {
  if (!config_path.empty()) return sevcon::load_config(config_path, sets);
  if (std::filesystem::exists(run_dir / "config.ini")) {
    return sevcon::load_config(run_dir / "config.ini", sets);
  }
  return sevcon::parse_config("", sets);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Severity pseudo-labels for contrastive pretraining"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string run_dir;
  std::string config_path;
  std::vector<std::string> sets;
  bool force = false;
  bool quiet = false;
  app.add_option("--run-dir", run_dir, "Run directory")->required();
  app.add_option("--config", config_path,
                 "INI config (default: the run directory's config.ini, else built-in defaults)");
  app.add_option("--set", sets, "Override as section.key=value")->take_all();
  app.add_flag("--force", force, "Accept artifacts produced under another config hash");
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpora");
  auto* gradcon = app.add_subcommand("train-gradcon", "Train the gradient-constrained autoencoder");

  std::string scorer;
  auto* score = app.add_subcommand("score", "Score the unlabeled corpus");
  score->add_option("--scorer", scorer)->required()->check(
      CLI::IsMember({"severity", "msp", "odin", "mahalanobis"}));

  std::size_t bins = 0;
  std::string label_scorer = "severity";
  auto* labels = app.add_subcommand("make-labels", "Bin scores into severity labels");
  labels->add_option("--bins", bins)->required()->check(CLI::PositiveNumber);
  labels->add_option("--scorer", label_scorer, "Score source")
      ->check(CLI::IsMember({"severity", "msp", "odin", "mahalanobis"}))
      ->capture_default_str();

  std::string mode;
  std::size_t pre_bins = 0;
  std::string pre_scorer = "severity";
  auto* pre = app.add_subcommand("pretrain", "Contrastive pretraining of the backbone");
  pre->add_option("--mode", mode)->required()->check(CLI::IsMember({"severity", "simclr"}));
  pre->add_option("--bins", pre_bins, "Label granularity (severity mode)")->check(CLI::PositiveNumber);
  pre->add_option("--scorer", pre_scorer, "Label source (severity mode)")
      ->check(CLI::IsMember({"severity", "msp", "odin", "mahalanobis"}))
      ->capture_default_str();

  std::string method;
  std::string task;
  auto* probe = app.add_subcommand("probe", "Train a linear probe on a frozen backbone");
  probe->add_option("--method", method, "random, simclr or <scorer>-n<N>")->required();
  probe->add_option("--task", task)->required()->check(
      CLI::IsMember({"bio_a", "bio_b", "bio_c", "bio_d", "bio_e", "multilabel"}));

  std::string eval_method;
  auto* eval = app.add_subcommand("evaluate", "Evaluate the probes of one method");
  eval->add_option("--method", eval_method)->required();

  auto* ablate = app.add_subcommand("ablate", "Scorer ablation at a fixed bin count");
  auto* report = app.add_subcommand("report", "Render tables, contact sheet and provenance");
  auto* all = app.add_subcommand("all", "Run every stage that is not yet current");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");

  try {
    const auto config = resolve_config(run_dir, config_path, sets);
    const auto ctx = sevcon::RunContext::open(run_dir, config, force);
    if (*gen) {
      sevcon::run_gen_data(ctx);
    } else if (*gradcon) {
      sevcon::run_train_gradcon(ctx);
    } else if (*score) {
      sevcon::run_score(ctx, scorer);
    } else if (*labels) {
      sevcon::run_make_labels(ctx, label_scorer, bins);
    } else if (*pre) {
      if (mode == "severity" && pre_bins == 0) {
        throw sevcon::ConfigError("pretrain --mode severity needs --bins");
      }
      sevcon::run_pretrain(ctx, mode, pre_scorer, pre_bins);
    } else if (*probe) {
      sevcon::run_probe(ctx, method, task);
    } else if (*eval) {
      sevcon::run_evaluate(ctx, eval_method);
    } else if (*ablate) {
      sevcon::run_ablate(ctx);
    } else if (*report) {
      sevcon::run_report(ctx);
    } else if (*all) {
      sevcon::run_all(ctx);
    }
  } catch (const sevcon::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const sevcon::MissingArtifactError& e) {
    spdlog::error("{}", e.what());
    return kMissing;
  } catch (const sevcon::NumericalError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kOk;
}
