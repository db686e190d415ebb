#include <CLI11.hpp>

#include <iostream>

#include "rccr/commands.hpp"

namespace {

void add_common(CLI::App* app, rccr::cli::CommonOptions& o) {
  app->add_option("--config", o.config_path, "JSON run configuration");
  app->add_option("--set", o.overrides, "Override KEY=VALUE (repeatable), e.g. ablation.MB=false");
  app->add_option("--out", o.out_dir, "Output directory");
  app->add_option("--seed", o.seed, "Training seed (overrides train.seed)");
  app->add_option("--device", o.device, "Compute device (cpu)");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace rccr::cli;
  CLI::App app{"Regional contrastive consistency training harness"};
  app.require_subcommand(1);

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train one configuration");
  add_common(train_cmd, train.common);
  train_cmd->add_option("--resume", train.resume, "Checkpoint to resume from");

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate the teacher of a checkpoint on the target split");
  add_common(eval_cmd, eval.common);
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_flag("--compare-student", eval.compare_student, "Also report the student");
  eval_cmd->add_option("--limit", eval.limit, "Evaluate only the first N images");
  eval_cmd->add_option("--subset", eval.subset, "Class-subset convention: synthia16 or synthia13")
      ->check(CLI::IsMember({"", "synthia16", "synthia13"}));

  AblateOptions ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run an ablation sweep (rows x seeds)");
  add_common(ablate_cmd, ablate.common);
  ablate_cmd->add_option("--sweep", ablate.sweep_path, "Sweep spec JSON {rows, seeds, overrides}");
  ablate_cmd->add_option("--jobs", ablate.jobs, "Runs executed concurrently")->check(CLI::PositiveNumber);

  rccr::selftest::Options st;
  auto* self_cmd = app.add_subcommand("selftest", "Run the built-in property suites");
  self_cmd->add_option("--temperature", st.temperature, "Temperature used by the contrastive suite");
  self_cmd->add_option("--cases", st.oracle_cases, "Randomized oracle cases");
  self_cmd->add_option("--seed", st.seed, "Suite seed");

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write synthetic scenes as PPM/PGM plus manifests");
  add_common(gen_cmd, gen.common);
  gen_cmd->add_option("--count", gen.count, "Samples per domain");
  gen_cmd->add_option("--domain", gen.domain, "source, target or both");

  ExportOptions exp;
  auto* export_cmd = app.add_subcommand("export", "Flatten a run's metrics into CSV");
  export_cmd->add_option("--run", exp.run_dir, "Run directory")->required();
  export_cmd->add_option("--out", exp.out_dir, "Output directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  if (*train_cmd) return cmd_train(train, std::cout, std::cerr);
  if (*eval_cmd) return cmd_eval(eval, std::cout, std::cerr);
  if (*ablate_cmd) return cmd_ablate(ablate, std::cout, std::cerr);
  if (*self_cmd) return cmd_selftest(st, std::cout);
  if (*gen_cmd) return cmd_gen_data(gen, std::cout, std::cerr);
  if (*export_cmd) return cmd_export(exp, std::cout, std::cerr);
  return kConfigError;
}
