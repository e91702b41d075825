// steprl: experiment harness for dense-reward shaping on the modular-chain
// reasoning environment.
//
// Subcommands:
//   collect   build the reward-model dataset (rollouts + process annotation)
//   train-rm  fit the surrogate PRM and ORM on a collected dataset
//   train-rl  PPO training with the configured reward scheme
//   audit     sweep repetition probes against a frozen PRM (hacking curves)
//   eval      evaluate a policy checkpoint on the held-out question set
//
// Exit codes: 0 success, 2 config error, 3 runtime error.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "steprl/config.hpp"
#include "steprl/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "TOML-style config file");
  cmd->add_option("--set", args.overrides,
                  "override a config value, e.g. --set rewards.scheme=SR+PR");
}

steprl::ExperimentConfig make_config(const CommonArgs& args) {
  return steprl::load_config(args.config_path, args.overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dense-reward shaping experiments on a synthetic step-reasoning task"};
  app.require_subcommand(1);

  CommonArgs collect_args;
  CLI::App* collect = app.add_subcommand("collect", "build the reward-model dataset");
  add_common(collect, collect_args);

  CommonArgs train_rm_args;
  std::string collect_dir;
  CLI::App* train_rm = app.add_subcommand("train-rm", "train the surrogate PRM and ORM");
  add_common(train_rm, train_rm_args);
  train_rm->add_option("--collect-dir", collect_dir, "dataset directory (default <out>/collect)");

  CommonArgs train_rl_args;
  std::string rm_dir;
  std::string init_policy_path;
  CLI::App* train_rl = app.add_subcommand("train-rl", "run PPO with the configured scheme");
  add_common(train_rl, train_rl_args);
  train_rl->add_option("--rm-dir", rm_dir, "checkpoint directory (default <out>/rm)");
  train_rl->add_option("--init-policy", init_policy_path, "resume from a policy checkpoint");

  CommonArgs audit_args;
  std::string prm_path;
  CLI::App* audit = app.add_subcommand("audit", "run the repetition-probe sweep");
  add_common(audit, audit_args);
  audit->add_option("--prm", prm_path, "PRM checkpoint (default <out>/rm/prm.json)");

  CommonArgs eval_args;
  std::string policy_path;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a policy checkpoint");
  add_common(eval, eval_args);
  eval->add_option("--policy", policy_path, "policy checkpoint (default: initial policy)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (collect->parsed()) {
      const auto res = steprl::cmd_collect(make_config(collect_args));
      std::cout << "collect: " << res.solutions << " solutions, " << res.prefixes
                << " labeled prefixes -> " << res.dir << "\n";
    } else if (train_rm->parsed()) {
      const auto res = steprl::cmd_train_rm(make_config(train_rm_args), collect_dir);
      std::cout << "train-rm: prm loss " << steprl::format_double(res.prm_final_loss)
                << ", orm loss " << steprl::format_double(res.orm_final_loss) << " -> " << res.dir
                << "\n";
    } else if (train_rl->parsed()) {
      const auto res = steprl::cmd_train_rl(make_config(train_rl_args), rm_dir, init_policy_path);
      const auto& last = res.log.rows.back();
      std::cout << "train-rl: final greedy " << steprl::format_double(last.greedy_acc)
                << ", sampling " << steprl::format_double(last.sample_acc) << ", mean steps "
                << steprl::format_double(last.mean_steps) << " -> " << res.dir << "\n";
    } else if (audit->parsed()) {
      const auto res = steprl::cmd_audit(make_config(audit_args), prm_path);
      std::cout << "audit: " << res.rows.size() << " rows (eta "
                << steprl::format_double(res.eta_used) << ") -> " << res.dir << "\n";
    } else if (eval->parsed()) {
      const auto res = steprl::cmd_eval(make_config(eval_args), policy_path);
      std::cout << "eval: greedy " << steprl::format_double(res.report.greedy_acc) << ", sampling "
                << steprl::format_double(res.report.sampling_acc) << ", pass@" << res.report.k
                << " " << steprl::format_double(res.report.pass_at_k) << " -> " << res.dir << "\n";
    }
  } catch (const steprl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
