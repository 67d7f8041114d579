#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "transtailor/cli/commands.hpp"

namespace {

namespace cli = transtailor::cli;

enum ExitCode { kOk = 0, kRuntimeError = 1, kConfigError = 2, kDataError = 3, kVerifyFailed = 4 };

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> method;
  std::optional<double> budget;
  std::optional<std::string> tau;
};

void add_run_flags(CLI::App* cmd, Overrides& o, bool tailor_flags) {
  cmd->add_option("--config", o.config, "Run configuration (JSON)")->required();
  cmd->add_option("--seed", o.seed, "Override the run seed");
  cmd->add_option("--out", o.out, "Override the output directory");
  if (tailor_flags) {
    cmd->add_option("--method", o.method, "transtailor | ft | ft-full | l1 | source-taylor");
    cmd->add_option("--budget", o.budget, "FLOPs fraction removed per iteration");
    cmd->add_option("--tau", o.tau, "Stop threshold in accuracy points, or 'inf'");
  }
}

cli::RunConfig resolve(const Overrides& o) {
  cli::RunConfig cfg = cli::load_run_config(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.tailor.seed = *o.seed;
    cfg.target_task.seed = *o.seed;
  }
  if (o.out) cfg.out = *o.out;
  if (o.method) cfg.method = cli::parse_method(*o.method);
  if (o.budget) cfg.tailor.budget_fraction = *o.budget;
  if (o.tau) {
    if (*o.tau == "inf") {
      cfg.tailor.tau = transtailor::tailor::TailorConfig::kNeverStop;
    } else {
      try {
        cfg.tailor.tau = std::stod(*o.tau);
      } catch (const std::exception&) {
        throw transtailor::ConfigError("--tau: expected a number or 'inf', got '" + *o.tau + "'");
      }
    }
  }
  cfg.tailor.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Target-aware pruning and importance-aware fine-tuning of pretrained CNNs"};
  app.require_subcommand(1);

  Overrides pretrain_flags, tailor_flags;
  auto* pretrain = app.add_subcommand("pretrain", "Train the reference network on the source dataset");
  add_run_flags(pretrain, pretrain_flags, false);

  auto* tailor = app.add_subcommand("tailor", "Prune and fine-tune for the target task");
  add_run_flags(tailor, tailor_flags, true);

  std::vector<std::string> runs;
  std::string report_out = "report";
  auto* report = app.add_subcommand("report", "Merge run directories into CSV tables");
  report->add_option("runs", runs, "Run directories")->required();
  report->add_option("--out", report_out, "Directory for the CSV files");

  cli::VerifyOptions verify_options;
  auto* verify = app.add_subcommand("verify", "Run the gradient, equivalence and oracle checks");
  verify->add_option("--seed", verify_options.seed, "Seed for the randomized checks");
  verify->add_option("--gradient-trials", verify_options.gradient_trials, "Trials per op");
  verify->add_option("--equivalence-trials", verify_options.equivalence_trials,
                     "Random models per equivalence check");
  verify->add_option("--oracle-seeds", verify_options.oracle_seeds,
                     "Seeds for the Taylor-vs-oracle check; pass none to skip it")
      ->expected(0, -1);
  verify->add_option("--fault-op", verify_options.fault_op,
                     "Corrupt this op's backward pass (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*pretrain) {
      const auto result = cli::cmd_pretrain(resolve(pretrain_flags), std::cerr);
      std::cout << "checkpoint " << result.checkpoint.string() << " val_accuracy "
                << result.val_accuracy << '\n';
    } else if (*tailor) {
      const auto result = cli::cmd_tailor(resolve(tailor_flags), std::cerr);
      std::cout << "method " << result.final.method << " iteration " << result.final.iteration
                << " flops_reduction " << result.final.flops_reduction << " val_accuracy "
                << result.final.val_accuracy << " stop " << result.stop_reason << '\n';
    } else if (*report) {
      const auto r = cli::cmd_report({runs.begin(), runs.end()}, report_out);
      std::cout << "merged " << r.runs.size() << " runs into " << report_out << '\n';
    } else if (*verify) {
      return cli::cmd_verify(verify_options, std::cout) ? kOk : kVerifyFailed;
    }
  } catch (const transtailor::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const transtailor::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
