// feedrec command-line tool: generate | train | evaluate | gradcheck | rank | ablate

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "json.hpp"

#include "feedrec/commands.hpp"

namespace {

using feedrec::json;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

// "training.model.dim=64" -> nested assignment. The value is read as JSON
// when it parses, otherwise kept as a string.
void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw feedrec::ConfigError("--set expects key.path=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (!node->is_object()) *node = json::object();
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

feedrec::RunConfig resolve(const Common& c) {
  json j = c.config.empty() ? json::object() : feedrec::parse_json_file(c.config);
  for (const auto& o : c.overrides) apply_override(j, o);
  if (c.seed) {
    j["generator"]["seed"] = *c.seed;
    j["training"]["seed"] = *c.seed;
  }
  return feedrec::run_config_from_json(j);
}

void add_common(CLI::App* app, Common& c, bool with_config = true) {
  if (with_config) app->add_option("--config", c.config, "JSON run configuration");
  app->add_option("--set", c.overrides, "override one config field, e.g. training.epochs=5")
      ->take_all();
  app->add_option("--seed", c.seed, "seed for generator and training (overrides the config)");
}

void apply_threads() {
  if (const char* env = std::getenv("FEEDREC_THREADS")) {
    const int n = std::atoi(env);
    if (n < 1) throw feedrec::ConfigError("FEEDREC_THREADS must be a positive integer");
    Eigen::setNbThreads(n);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-feedback news recommendation: synthetic logs, training, evaluation"};
  app.require_subcommand(1);

  Common common;
  std::string out, corpus, checkpoint, user, split;
  std::vector<std::string> candidates;
  bool no_scores = false;

  auto* gen = app.add_subcommand("generate", "write a synthetic feedback corpus");
  add_common(gen, common);
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model on a corpus");
  add_common(tr, common);
  tr->add_option("--corpus", corpus, "corpus directory")->required();
  tr->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "score a split with a checkpoint");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--corpus", corpus, "corpus directory")->required();
  ev->add_option("--out", out, "output directory")->required();
  ev->add_option("--split", split, "test or validation (overrides the config)");
  ev->add_flag("--no-scores", no_scores, "skip scores.jsonl");

  feedrec::GradcheckOptions gc;
  auto* gr = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
  gr->add_option("--dim", gc.dim, "model width")->capture_default_str();
  gr->add_option("--heads", gc.heads, "attention heads")->capture_default_str();
  gr->add_option("--seed", gc.seed, "parameter seed")->capture_default_str();
  gr->add_option("--tolerance", gc.tolerance, "max relative error")->capture_default_str();
  gr->add_option("--entries", gc.entries_per_tensor, "entries checked per tensor")->capture_default_str();

  auto* rk = app.add_subcommand("rank", "rank candidate news for one user");
  rk->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  rk->add_option("--corpus", corpus, "corpus directory holding the user's history")->required();
  rk->add_option("--user", user, "user id")->required();
  rk->add_option("--candidates", candidates, "candidate news ids")->required()->delimiter(',');

  auto* ab = app.add_subcommand("ablate", "train and evaluate the ablation matrix");
  add_common(ab, common);
  ab->add_option("--corpus", corpus, "corpus directory")->required();
  ab->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    apply_threads();
    if (gen->parsed()) {
      feedrec::cmd_generate(resolve(common), out, std::cout);
    } else if (tr->parsed()) {
      feedrec::cmd_train(resolve(common), corpus, out, std::cout);
    } else if (ev->parsed()) {
      feedrec::EvaluationConfig e = resolve(common).evaluation;
      if (!split.empty()) e.split = split;
      if (no_scores) e.write_scores = false;
      feedrec::cmd_evaluate(checkpoint, corpus, out, e, std::cout);
    } else if (gr->parsed()) {
      return feedrec::cmd_gradcheck(gc, std::cout) ? 0 : 1;
    } else if (rk->parsed()) {
      feedrec::cmd_rank(checkpoint, corpus, user, candidates, std::cout);
    } else if (ab->parsed()) {
      feedrec::cmd_ablate(resolve(common), corpus, out, std::cout);
    }
  } catch (const feedrec::Error& e) {
    std::cerr << "feedrec: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "feedrec: unexpected error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
