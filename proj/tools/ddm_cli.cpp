#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "ddm/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Dynamic deviation measures on finite lattices"};
  app.require_subcommand(1, 1);

  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  app.add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out, "output directory (overrides the config)");
  app.add_option("--seed", seed, "random seed (overrides the config)");
  app.add_flag("--quiet", quiet, "do not print the summary");
  for (const auto& name : ddm::cli::commands()) app.add_subcommand(name)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : ddm::cli::Invalid;
  }

  ddm::cli::RunOptions opt;
  opt.seed = seed;
  if (!out.empty()) opt.out_dir = out;
  const std::string command = app.get_subcommands().front()->get_name();
  const auto result = ddm::cli::run(command, config, opt);
  if (!result.message.empty()) std::cerr << "ddm " << command << ": " << result.message << "\n";
  if (!quiet && !result.summary.empty()) std::cout << result.summary;
  return result.exit_code;
}
