// Command-line driver: one subcommand per pipeline stage plus run-all.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stylemt/error.hpp"
#include "stylemt/pipeline.hpp"

namespace pl = stylemt::pipeline;

namespace {

struct Options {
  std::string config_file;
  std::string work_dir;
  std::vector<std::string> overrides;
  bool ablation = false;
};

pl::Config resolve(const Options& opt) {
  pl::Config config;
  if (!opt.config_file.empty()) config.load_file(opt.config_file);
  for (const auto& kv : opt.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw stylemt::ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!opt.work_dir.empty()) config.work_dir = opt.work_dir;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised text style transfer: word-level SMT initialization followed by "
               "classifier-rewarded iterative back-translation of two GRU attention models."};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config_file, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("-w,--work-dir", opt.work_dir, "work directory (overrides work_dir)");
    sub->add_option("-s,--set", opt.overrides, "override one configuration key, key=value")->take_all();
  };

  for (const auto& stage : pl::stage_names()) {
    if (stage == "backtranslate-ablation") continue;
    CLI::App* sub = app.add_subcommand(stage, "run the " + stage + " stage");
    add_common(sub);
    if (stage == "backtranslate") sub->add_flag("--ablation", opt.ablation, "train the reward-free control arm");
  }
  CLI::App* all = app.add_subcommand("run-all", "run every stage, skipping up-to-date ones");
  add_common(all);
  CLI::App* show = app.add_subcommand("show-config", "print the resolved configuration");
  add_common(show);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const pl::Config config = resolve(opt);
    CLI::App* chosen = app.get_subcommands().front();
    const std::string name = chosen->get_name();
    if (name == "show-config") {
      for (const auto& key : config.keys()) std::cout << key << " = " << config.get(key) << "\n";
      return 0;
    }
    pl::WorkLock lock(config.work_dir);
    pl::Pipeline pipeline(config, std::cerr);
    if (name == "run-all") {
      const pl::RunSummary summary = pipeline.run_all();
      for (const auto& s : summary.systems) {
        std::cout << s.system << "\taccuracy " << s.mean_accuracy();
        if (auto b = s.mean_bleu()) std::cout << "\tBLEU " << *b;
        std::cout << "\n";
      }
    } else {
      pipeline.run_stage(name == "backtranslate" && opt.ablation ? "backtranslate-ablation" : name);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return pl::exit_code_for(e);
  }
  return 0;
}
