// Command-line front end: preprocess, extract, match, train, eval.
//
// Settings come from a key = value config file (--config); flags override config keys.
// On failure a single JSON line {"error": kind, "message": ...} is written to stderr and
// the exit code is nonzero.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "xview/app.hpp"
#include "xview/config.hpp"
#include "xview/error.hpp"

namespace {

int report_error(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Cross-view ground-to-aerial matching toolkit"};
  cli.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> fov;
  std::optional<double> tested_fov;
  std::optional<std::string> output;
  std::optional<std::string> weights;
  std::optional<std::size_t> k;
  std::string query;
  bool grid = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--fov", fov, "field of view in degrees, (0, 360]");
    sub->add_option("--output", output, "output directory");
    sub->add_option("--weights", weights, "weight file, or 'random'");
  };

  auto* preprocess = cli.add_subcommand("preprocess", "warp, normalize and cache every manifest sample");
  auto* extract = cli.add_subcommand("extract", "write fused aerial and ground features to the feature store");
  auto* match = cli.add_subcommand("match", "rank the gallery for one ground query");
  auto* train = cli.add_subcommand("train", "triplet-loss training on the training split");
  auto* eval = cli.add_subcommand("eval", "top-K recall on the test split");
  for (auto* sub : {preprocess, extract, match, train, eval}) add_common(sub);
  match->add_option("--query", query, "query sample id")->required();
  match->add_option("--k", k, "number of ranked gallery entries to print");
  eval->add_option("--tested-fov", tested_fov, "field of view of the test queries (defaults to --fov)");
  eval->add_flag("--grid", grid, "evaluate every preset trained FoV against every preset tested FoV");

  CLI11_PARSE(cli, argc, argv);

  try {
    auto kv = xview::KeyValueConfig::load(config_path);
    if (seed) kv.set("seed", std::to_string(*seed));
    if (fov) kv.set("fov", std::to_string(*fov));
    if (tested_fov) kv.set("tested_fov", std::to_string(*tested_fov));
    if (output) kv.set("output_dir", std::filesystem::absolute(*output).string());
    if (weights) kv.set("weights", *weights == "random" ? *weights : std::filesystem::absolute(*weights).string());
    const auto rc = xview::app::run_config_from(kv, std::filesystem::path(config_path).parent_path());

    if (preprocess->parsed()) {
      xview::app::cmd_preprocess(rc, std::cout);
    } else if (extract->parsed()) {
      xview::app::cmd_extract(rc, std::cout);
    } else if (match->parsed()) {
      xview::app::cmd_match(rc, query, k, std::cout, std::cerr);
    } else if (train->parsed()) {
      xview::app::cmd_train(rc, std::cout);
    } else if (eval->parsed()) {
      if (grid) {
        const auto reports = xview::app::cmd_eval_grid(rc, std::cout);
        std::cout << xview::app::generalization_table(reports);
      } else {
        xview::app::cmd_eval(rc, {rc.tested_fov_deg.value_or(rc.fov_deg)}, std::cout);
      }
    }
  } catch (const xview::ConfigError& e) {
    return report_error("config", e.what());
  } catch (const xview::FormatError& e) {
    return report_error("format", e.what());
  } catch (const xview::ShapeError& e) {
    return report_error("shape", e.what());
  } catch (const xview::IoError& e) {
    return report_error("io", e.what());
  } catch (const xview::Error& e) {
    return report_error("runtime", e.what());
  } catch (const std::exception& e) {
    return report_error("internal", e.what());
  }
  return 0;
}
