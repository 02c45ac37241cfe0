// Command-line front end for the experiment harness.
//
// Exit codes: 0 on success, 1 when some units failed or were left undone,
// 2 on configuration errors.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include <tslab/tslab.hpp>

namespace {

using namespace tslab;

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const param_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const format_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tslab: transfer-learning experiments on time-series tasks"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("-c,--config", config_path, "experiment config (JSON)")->required();

  auto* validate = app.add_subcommand("validate-config", "parse and validate the config, print a summary");

  auto* pretrain = app.add_subcommand("pretrain", "pretrain one architecture on one source dataset");
  std::string pre_arch, pre_dataset;
  pretrain->add_option("--arch", pre_arch, "architecture label")->required();
  pretrain->add_option("--dataset", pre_dataset, "source dataset name")->required();

  auto* baseline = app.add_subcommand("baseline", "train one referent (scratch) model");
  std::string base_arch, base_target;
  std::size_t base_size = 0, base_rerun = 0;
  baseline->add_option("--arch", base_arch)->required();
  baseline->add_option("--target", base_target)->required();
  baseline->add_option("--reduction", base_size, "training-set reduction size")->required();
  baseline->add_option("--rerun", base_rerun, "rerun index (0-based)");

  auto* finetune = app.add_subcommand("finetune", "fine-tune a bundle over the omega grid");
  std::string ft_arch, ft_target, ft_bundle;
  std::size_t ft_size = 0, ft_rerun = 0;
  finetune->add_option("--arch", ft_arch)->required();
  finetune->add_option("--bundle", ft_bundle, "weight bundle file")->required();
  finetune->add_option("--target", ft_target)->required();
  finetune->add_option("--reduction", ft_size)->required();
  finetune->add_option("--rerun", ft_rerun);

  auto* run = app.add_subcommand("run", "run the full experiment (resumable)");
  std::size_t run_max_units = std::numeric_limits<std::size_t>::max();
  run->add_option("--max-units", run_max_units, "stop after this many newly executed units");

  auto* report = app.add_subcommand("report", "tabulate results from the store");

  CLI11_PARSE(app, argc, argv);

  return run_guarded([&]() -> int {
    ExperimentConfig cfg = parse_config(config_path);
    validate_config(cfg);
    StoreLayout store{cfg.output_dir};

    if (validate->parsed()) {
      const auto pairs = scheduled_pairs(cfg);
      std::printf("config ok: %zu datasets, %zu architectures, %zu source->target pairs\n", cfg.datasets.size(),
                  cfg.architectures.size(), pairs.size());
      std::printf("schedule: %zu reruns x %zu reductions x %zu omega values\n", cfg.reruns,
                  cfg.reduction_sizes.size(), cfg.omega_grid.size());
      return 0;
    }

    if (pretrain->parsed()) {
      fs::create_directories(store.root);
      auto data = materialize_dataset(cfg.dataset(pre_dataset), store.datasets_dir());
      const fs::path bundle = cmd_pretrain(cfg, data, cfg.architecture(pre_arch), store);
      std::printf("bundle: %s\n", bundle.string().c_str());
      return 0;
    }

    if (baseline->parsed()) {
      fs::create_directories(store.root);
      auto data = materialize_dataset(cfg.dataset(base_target), store.datasets_dir());
      auto history = cmd_baseline(cfg, data, cfg.architecture(base_arch), base_size, base_rerun, store);
      std::printf("baseline test score: %.6g (%zu epochs)\n", history.final_test_score, history.epochs.size());
      return 0;
    }

    if (finetune->parsed()) {
      fs::create_directories(store.root);
      auto data = materialize_dataset(cfg.dataset(ft_target), store.datasets_dir());
      WeightBundle bundle = load_bundle(ft_bundle);
      for (std::size_t w = 0; w < cfg.omega_grid.size(); ++w) {
        auto history = cmd_finetune(cfg, bundle, data, cfg.architecture(ft_arch), ft_size, ft_rerun, w, store);
        std::printf("omega %.4g -> test score %.6g (%zu epochs)\n", cfg.omega_grid[w],
                    history.final_test_score, history.epochs.size());
      }
      return 0;
    }

    if (run->parsed()) {
      RunOptions options;
      options.max_units = run_max_units;
      RunStats stats = run_experiment(cfg, options);
      std::printf("run: %zu executed, %zu skipped (already complete), %zu failed, %zu deferred\n",
                  stats.executed, stats.skipped, stats.failed, stats.deferred);
      if (stats.complete()) {
        Report rep = report_from_store(cfg);
        write_report(rep, cfg);
        print_report(rep, std::cout);
      }
      return stats.failed > 0 || stats.deferred > 0 ? 1 : 0;
    }

    if (report->parsed()) {
      Report rep = report_from_store(cfg);
      write_report(rep, cfg);
      print_report(rep, std::cout);
      return rep.complete_cases == rep.total_cases ? 0 : 1;
    }

    return 2;
  });
}
