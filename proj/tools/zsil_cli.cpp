#include "zsil/config.hpp"
#include "zsil/experiment.hpp"
#include "zsil/format.hpp"
#include "zsil/learner.hpp"
#include "zsil/recovery.hpp"
#include "zsil/trainer.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
  auto* opt = cmd->add_option("--config", args.config_path, "experiment config file");
  if (config_required) opt->required();
  cmd->add_option("--seed", args.seed, "seed override");
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_option("--override", args.overrides, "key=value config override (repeatable)");
}

zsil::ExperimentConfig load_config(const CommonArgs& args) {
  zsil::KeyValueConfig kv;
  if (!args.config_path.empty()) kv = zsil::KeyValueConfig::from_file(args.config_path);
  for (const std::string& o : args.overrides) kv.apply_override(o);
  if (args.seed) kv.set("seed", std::to_string(*args.seed));
  return zsil::ExperimentConfig::from_kv(kv);
}

void print_report(const zsil::RunReport& report) {
  std::cout << "run dir: " << report.run_dir << '\n';
  for (std::size_t k = 0; k < report.avg_series.size(); ++k)
    std::cout << "  A_" << (k + 1) << " (" << report.classes_seen[k]
              << " classes) = " << zsil::format_fixed(report.avg_series[k], 2) << '\n';
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    auto comma = csv.find(',', pos);
    if (comma == std::string::npos) comma = csv.size();
    out.push_back(std::stod(csv.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zero-shot incremental learning engine"};
  app.require_subcommand(1);

  CommonArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "run one experiment");
  add_common(run_cmd, run_args);

  CommonArgs sweep_args;
  std::string sweep_param;
  std::string sweep_values;
  auto* sweep_cmd = app.add_subcommand("sweep", "run one experiment per parameter value");
  add_common(sweep_cmd, sweep_args);
  sweep_cmd->add_option("--param", sweep_param, "transfer_size | lambda | eta")->required();
  sweep_cmd->add_option("--values", sweep_values, "comma-separated values")->required();

  CommonArgs recover_args;
  std::string recover_ckpt;
  auto* recover_cmd = app.add_subcommand("recover", "export a transfer set from a checkpoint");
  add_common(recover_cmd, recover_args, false);
  recover_cmd->add_option("--checkpoint", recover_ckpt, "learner checkpoint")->required();

  CommonArgs eval_args;
  std::string eval_ckpt;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the configured test sets");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "learner checkpoint")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      const zsil::ExperimentConfig cfg = load_config(run_args);
      print_report(zsil::run_experiment(cfg, run_args.out));
    } else if (sweep_cmd->parsed()) {
      const zsil::ExperimentConfig cfg = load_config(sweep_args);
      const auto reports = zsil::run_sweep(cfg, zsil::sweep_param_from_name(sweep_param),
                                           parse_values(sweep_values), sweep_args.out);
      for (const auto& r : reports) print_report(r);
    } else if (recover_cmd->parsed()) {
      zsil::ConfusionMatrix cm;
      const zsil::Learner learner = zsil::load_checkpoint(recover_ckpt, &cm);
      if (cm.k() == 0) {
        std::cerr << "checkpoint carries no confusion matrix; nothing to recover from\n";
        return 1;
      }
      zsil::RecoveryConfig rc;
      if (!recover_args.config_path.empty() || !recover_args.overrides.empty())
        rc = load_config(recover_args).recovery;
      if (recover_args.seed) rc.seed = *recover_args.seed;
      const zsil::TransferSet set = zsil::recover_transfer_set(learner, cm, rc);
      zsil::export_transfer_set(set, recover_args.out);
      std::cout << "exported " << set.size() << " samples to " << recover_args.out << '\n';
    } else if (eval_cmd->parsed()) {
      const zsil::ExperimentConfig cfg = load_config(eval_args);
      const zsil::Learner learner = zsil::load_checkpoint(eval_ckpt);
      const zsil::TaskSequence stream = cfg.build_stream();
      double sum = 0.0;
      int counted = 0;
      for (std::size_t j = 0; j < stream.tasks.size(); ++j) {
        bool ready = true;
        for (int c : stream.tasks[j].classes) ready = ready && learner.is_seen(c);
        if (!ready) continue;
        const double a = zsil::evaluate_accuracy(
            learner, stream.tasks[j].test, cfg.setting,
            cfg.setting == zsil::Setting::kTaskIL ? std::optional<int>(static_cast<int>(j))
                                                  : std::nullopt);
        std::cout << "task " << (j + 1) << ": " << zsil::format_fixed(a, 2) << "%\n";
        sum += a;
        ++counted;
      }
      if (counted == 0) {
        std::cerr << "checkpoint has seen none of the configured tasks\n";
        return 1;
      }
      std::cout << "average: " << zsil::format_fixed(sum / counted, 2) << "%\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
