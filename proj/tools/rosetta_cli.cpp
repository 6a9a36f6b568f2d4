// Command-line front end for sequential gated training and the bank reports.
//
//   rosetta_cli train-sequence --config <path> --out <dir>
//   rosetta_cli eval --bank <path> --task <id> --data <csv>
//   rosetta_cli gate-stats --bank <path> --a <id> --b <id>
//   rosetta_cli correlation-dump --bank <path> --a <id> --b <id>
//   rosetta_cli forgetting --metrics <csv>
//   rosetta_cli list-tasks --bank <path>
//
// Failures print a single line "error kind=<kind> message=<text>" on stderr
// and exit non-zero.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rosetta/harness.hpp"
#include "rosetta/lifecycle.hpp"
#include "rosetta/membank.hpp"

namespace {

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gated continual-learning engine"};
  app.require_subcommand(1);

  std::string config_path, out_dir, bank_path, data_path, metrics_path;
  std::uint64_t task = 0, task_a = 0, task_b = 0;

  auto* train = app.add_subcommand("train-sequence", "train a task sequence from a config file");
  train->add_option("--config", config_path, "experiment config (JSON)")->required();
  train->add_option("--out", out_dir, "output directory (overrides out_dir in the config)");

  auto* eval = app.add_subcommand("eval", "accuracy of a stored task on a labelled CSV");
  eval->add_option("--bank", bank_path)->required();
  eval->add_option("--task", task)->required();
  eval->add_option("--data", data_path)->required();

  auto* stats = app.add_subcommand("gate-stats", "gate occupancy of two stored tasks");
  stats->add_option("--bank", bank_path)->required();
  stats->add_option("--a", task_a)->required();
  stats->add_option("--b", task_b)->required();

  auto* corr = app.add_subcommand("correlation-dump", "prototype correlation table between two stored tasks");
  corr->add_option("--bank", bank_path)->required();
  corr->add_option("--a", task_a)->required();
  corr->add_option("--b", task_b)->required();

  auto* forget = app.add_subcommand("forgetting", "forgetting report from a metrics CSV");
  forget->add_option("--metrics", metrics_path)->required();

  auto* list = app.add_subcommand("list-tasks", "summaries of stored tasks");
  list->add_option("--bank", bank_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error kind=usage message=" << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    using namespace rosetta;
    if (*train) {
      auto cfg = parse_config(read_file(config_path));
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      if (cfg.out_dir.empty()) fail(ErrorKind::Config, "no output directory: pass --out or set out_dir");
      const auto res = run_sequence(cfg, cfg.out_dir);
      std::cout << metrics_csv(res.accuracy);
    } else if (*eval) {
      const auto bank = MemoryBank::load(bank_path);
      const auto net = reconstruct_network(bank);
      const auto data = parse_dataset_csv(read_file(data_path));
      const auto logits = infer(net, bank, task, data.inputs);
      std::cout << "task=" << task << " samples=" << data.size() << " accuracy=" << detail::exact(accuracy(logits, data.labels))
                << '\n';
    } else if (*stats) {
      std::cout << gate_stats_text(gate_stats(MemoryBank::load(bank_path), task_a, task_b));
    } else if (*corr) {
      std::cout << correlation_text(correlation_dump(MemoryBank::load(bank_path), task_a, task_b));
    } else if (*forget) {
      std::cout << forgetting_csv(forgetting_report(parse_metrics_csv(read_file(metrics_path))));
    } else if (*list) {
      std::cout << "task,num_classes,active_channels\n";
      for (const auto& s : MemoryBank::load(bank_path).list_tasks()) {
        std::cout << s.task_id << ',' << s.num_classes << ',';
        for (std::size_t l = 0; l < s.active_channels.size(); ++l) std::cout << (l ? "/" : "") << s.active_channels[l];
        std::cout << '\n';
      }
    }
  } catch (const rosetta::Error& e) {
    std::cerr << "error kind=" << rosetta::to_string(e.kind()) << " message=" << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error kind=internal message=" << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
