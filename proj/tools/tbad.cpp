// tbad: command-line driver for the dissection segmentation toolkit.
//
//   tbad phantom --n 20 --flt-fraction 0.7 --seed 1 --out data/
//   tbad ingest|preprocess|split --config run.toml
//   tbad train --config run.toml --fold 0 [--stage NAME]
//   tbad evaluate --config run.toml --fold 0
//   tbad report --config run.toml
//   tbad visualize --config run.toml --fold 0 --case phantom_003
//
// Exit status: 0 on success, 1 on any library error, 2 on usage errors.

#include <iostream>

#include <CLI11.hpp>

#include "tbad/commands.hpp"
#include "tbad/error.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Type-B aortic dissection segmentation toolkit"};
  app.require_subcommand(1);

  tbad::PhantomCommand phantom;
  std::string phantom_out = "data";
  auto* phantom_cmd = app.add_subcommand("phantom", "Generate a synthetic phantom cohort");
  phantom_cmd->add_option("--n", phantom.n, "Number of cases")->check(CLI::PositiveNumber);
  phantom_cmd->add_option("--flt-fraction", phantom.flt_fraction, "Fraction of cases with thrombus")
      ->check(CLI::Range(0.0, 1.0));
  phantom_cmd->add_option("--seed", phantom.seed, "Random seed");
  phantom_cmd->add_option("--out", phantom_out, "Output directory");

  std::string config;
  int fold = 0;
  std::string stage;
  std::string case_id;
  auto with_config = [&](CLI::App* cmd) { cmd->add_option("--config", config, "Run configuration (TOML)")->required(); };
  auto* ingest = app.add_subcommand("ingest", "Scan the data source and write manifest.json");
  with_config(ingest);
  auto* preprocess = app.add_subcommand("preprocess", "Clip, resample and crop every case");
  with_config(preprocess);
  auto* split = app.add_subcommand("split", "Write stratified splits.json");
  with_config(split);
  auto* train = app.add_subcommand("train", "Train the pipeline stages of one fold");
  with_config(train);
  train->add_option("--fold", fold, "Fold index")->check(CLI::NonNegativeNumber);
  train->add_option("--stage", stage, "Train only this stage");
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate one fold on its test cases");
  with_config(evaluate);
  evaluate->add_option("--fold", fold, "Fold index")->check(CLI::NonNegativeNumber);
  auto* report = app.add_subcommand("report", "Tables and training curves for the whole run");
  with_config(report);
  auto* visualize = app.add_subcommand("visualize", "Tri-planar overlay of ground truth and prediction");
  with_config(visualize);
  visualize->add_option("--fold", fold, "Fold index")->check(CLI::NonNegativeNumber);
  visualize->add_option("--case", case_id, "Case id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int status = app.exit(e);
    return status == 0 ? 0 : 2;
  }

  try {
    if (phantom_cmd->parsed()) {
      phantom.out = phantom_out;
      tbad::cmd_phantom(phantom, std::cout);
      return 0;
    }
    const tbad::RunConfig cfg = tbad::load_run_config(config);
    if (ingest->parsed()) tbad::cmd_ingest(cfg, std::cout);
    if (preprocess->parsed()) tbad::cmd_preprocess(cfg, std::cout);
    if (split->parsed()) tbad::cmd_split(cfg, std::cout);
    if (train->parsed())
      tbad::cmd_train(cfg, fold, stage.empty() ? std::nullopt : std::optional<std::string>(stage), std::cout);
    if (evaluate->parsed()) tbad::cmd_evaluate(cfg, fold, std::cout);
    if (report->parsed()) tbad::cmd_report(cfg, std::cout);
    if (visualize->parsed()) tbad::cmd_visualize(cfg, fold, case_id, std::cout);
  } catch (const tbad::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
