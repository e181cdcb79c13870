// Command-line front end; all work happens behind the C API.
#include <cocn.h>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

using nlohmann::json;

namespace {

// Exit-code convention: 0 success, 1 invalid input, 2 runtime failure.
int report_failure(int rc) {
  std::fprintf(stderr, "error: %s\n", cocn_last_error());
  return rc;
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw CLI::ValidationError("--config", "cannot read " + path);
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw CLI::ValidationError("--config", path + " is not a JSON object");
  return j;
}

// Seed precedence: flag > COCN_SEED environment variable > config/default.
std::uint64_t effective_seed(bool flag_set, std::uint64_t flag_value,
                             std::uint64_t config_value) {
  std::uint64_t seed = config_value;
  if (const char* env = std::getenv("COCN_SEED"))
    seed = std::strtoull(env, nullptr, 10);
  if (flag_set) seed = flag_value;
  return seed;
}

struct DatasetHandle {
  cocn_dataset* ds = nullptr;
  ~DatasetHandle() { cocn_dataset_close(ds); }
};

struct ModelHandle {
  cocn_model* model = nullptr;
  ~ModelHandle() { cocn_model_close(model); }
};

int run_train(const std::string& data, const std::string& out, json merged) {
  DatasetHandle d;
  if (int rc = cocn_dataset_open(data.c_str(), &d.ds)) return report_failure(rc);
  if (int rc = cocn_train(merged.dump().c_str(), d.ds, out.c_str()))
    return report_failure(rc);

  json rep = json::parse(cocn_last_report());
  for (const auto& fold : rep["folds"])
    std::printf("fold %d: accuracy=%.4f auc=%.4f test_loss=%.4f epochs=%d\n",
                fold["fold"].get<int>(), fold["accuracy"].get<double>(),
                fold.value("auc", 0.0), fold["test_loss"].get<double>(),
                fold["epochs_run"].get<int>());
  std::printf("mean accuracy %.4f +/- %.4f\n", rep["mean_accuracy"].get<double>(),
              rep["std_accuracy"].get<double>());
  std::printf("outputs: %s/metrics.json %s/folds.csv %s/model.ckpt\n",
              out.c_str(), out.c_str(), out.c_str());
  return 0;
}

int run_eval(const std::string& model_path, const std::string& data) {
  ModelHandle m;
  if (int rc = cocn_model_open(model_path.c_str(), &m.model))
    return report_failure(rc);
  DatasetHandle d;
  if (int rc = cocn_dataset_open(data.c_str(), &d.ds)) return report_failure(rc);
  if (int rc = cocn_evaluate(m.model, d.ds)) return report_failure(rc);
  json rep = json::parse(cocn_last_report());
  std::printf("graphs=%d loss=%.6f accuracy=%.4f auc=%.4f\n",
              rep["graphs"].get<int>(), rep["loss"].get<double>(),
              rep["accuracy"].get<double>(), rep.value("auc", 0.0));
  return 0;
}

int run_isotest(const std::string& data, double eps, const json& cfg,
                const std::string& seeds) {
  DatasetHandle d;
  if (int rc = cocn_dataset_open(data.c_str(), &d.ds)) return report_failure(rc);
  int undistinguished = 0;
  if (int rc = cocn_isomorphism_test(cfg.dump().c_str(), d.ds, eps,
                                     seeds.empty() ? nullptr : seeds.c_str(),
                                     &undistinguished))
    return report_failure(rc);
  json rep = json::parse(cocn_last_report());
  std::printf("undistinguished pairs: %d of %d (epsilon=%g)\n", undistinguished,
              rep["pairs"].get<int>(), eps);
  return 0;
}

int run_reconstruct(const std::string& graph, const json& tcfg,
                    const std::string& taus, bool hard,
                    const std::string& out) {
  if (int rc = cocn_reconstruct(graph.c_str(), tcfg.dump().c_str(),
                                taus.c_str(), hard ? 1 : 0, out.c_str()))
    return report_failure(rc);
  json rep = json::parse(cocn_last_report());
  for (const auto& row : rep["results"])
    std::printf("tau=%g mse=%.8g\n", row["tau"].get<double>(),
                row["mse"].get<double>());
  std::printf("outputs under %s\n", out.c_str());
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  if (int rc = cocn_gradcheck(seed)) return report_failure(rc);
  json rep = json::parse(cocn_last_report());
  for (const auto& row : rep["checks"])
    std::printf("%-24s max_rel_err=%.3e\n",
                row["op"].get<std::string>().c_str(),
                row["max_rel_err"].get<double>());
  std::printf("worst=%.3e\n", rep["worst"].get<double>());
  return 0;
}

int run_bench(const std::string& variants, const std::string& sizes,
              double avg_degree, std::uint64_t seed, const std::string& out) {
  if (int rc = cocn_bench(variants.c_str(), sizes.c_str(), avg_degree, seed,
                          out.c_str()))
    return report_failure(rc);
  json rep = json::parse(cocn_last_report());
  for (const auto& row : rep["rows"])
    std::printf("%-10s n=%-7d %10.4fs  %s\n",
                row["variant"].get<std::string>().c_str(),
                row["n"].get<int>(), row["seconds"].get<double>(),
                row["status"].get<std::string>().c_str());
  std::printf("wrote %s/timings.csv\n", out.c_str());
  return 0;
}

int run_permviz(const std::string& data, double tau, int t,
                std::uint64_t seed, const std::string& out) {
  if (int rc = cocn_permviz(data.c_str(), tau, t, seed, out.c_str()))
    return report_failure(rc);
  std::printf("wrote %s/ahat.pgm and %s/pxxp.pgm\n", out.c_str(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressed convolution networks over learned node orderings"};
  app.require_subcommand(1);

  std::string config_path, data, out = "out", model_path;
  std::string variants = "vanilla,expanded,sparse,segment";
  std::string sizes = "100,1000", taus = "10,0.1", graph, seeds;
  double eps = 1e-4, avg_degree = 8.0, tau = 10.0;
  double lr = 0.0, weight_decay = 0.0, dropout = 0.0, cfg_tau = 0.0;
  int folds = 0, epochs = 0, batch = 0, patience = 0, heads = 0, hidden = 0;
  int smoothness = 6;
  std::uint64_t seed = 0;
  bool hard = false;
  std::string variant, task;

  auto* train = app.add_subcommand("train", "k-fold cross-validated training");
  train->add_option("--data", data, "dataset path")->required();
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--out", out, "output directory");
  train->add_option("--folds", folds, "cross-validation folds");
  train->add_option("--epochs", epochs, "maximum epochs per fold");
  train->add_option("--lr", lr, "learning rate");
  train->add_option("--batch", batch, "batch size");
  train->add_option("--patience", patience, "early-stopping patience");
  train->add_option("--weight-decay", weight_decay, "decoupled weight decay");
  train->add_option("--seed", seed, "random seed");
  train->add_option("--variant", variant,
                    "vanilla|expanded|sparse|segment");
  train->add_option("--task", task, "graph|node");
  train->add_option("--heads", heads, "permutation heads");
  train->add_option("--hidden", hidden, "hidden width");
  train->add_option("--tau", cfg_tau, "permutation relaxation factor");
  train->add_option("--dropout", dropout, "input dropout probability");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--model", model_path, "checkpoint path")->required();
  eval->add_option("--data", data, "dataset path")->required();

  auto* isotest =
      app.add_subcommand("isotest", "all-pairs isomorphism screening");
  isotest->add_option("--data", data, "dataset path")->required();
  isotest->add_option("--eps", eps, "distinguishability threshold");
  isotest->add_option("--config", config_path, "JSON model config file");
  isotest->add_option("--seeds", seeds, "comma-separated seeds");

  auto* reconstruct =
      app.add_subcommand("reconstruct", "coordinate reconstruction");
  reconstruct->add_option("--graph", graph,
                          "ring:<n>, grid:<r>x<c>, or dataset path");
  reconstruct->add_option("--data", data, "dataset path (first graph)");
  reconstruct->add_option("--taus", taus, "comma-separated relaxation list");
  reconstruct->add_flag("--hard", hard, "use the exact ranked permutation");
  reconstruct->add_option("--config", config_path, "JSON train config file");
  reconstruct->add_option("--lr", lr, "learning rate");
  reconstruct->add_option("--epochs", epochs, "training epochs");
  reconstruct->add_option("--seed", seed, "random seed");
  reconstruct->add_option("--out", out, "output directory");

  auto* permviz = app.add_subcommand("permviz", "permutation heatmaps");
  permviz->add_option("--data", data, "dataset path (first graph)")->required();
  permviz->add_option("--tau", tau, "relaxation factor");
  permviz->add_option("--t", smoothness, "position smoothness steps");
  permviz->add_option("--seed", seed, "random seed");
  permviz->add_option("--out", out, "output directory");

  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seed", seed, "random seed");

  auto* bench = app.add_subcommand("bench", "epoch-time scaling benchmark");
  bench->add_option("--variants", variants, "comma-separated variant list");
  bench->add_option("--sizes", sizes, "comma-separated node counts");
  bench->add_option("--avg-degree", avg_degree, "random-graph average degree");
  bench->add_option("--seed", seed, "random seed");
  bench->add_option("--out", out, "output directory");

  try {
    app.parse(argc, argv);

    if (train->parsed()) {
      json cfg = load_config_file(config_path);
      if (train->count("--folds")) cfg["folds"] = folds;
      if (train->count("--epochs")) cfg["max_epochs"] = epochs;
      if (train->count("--lr")) cfg["lr"] = lr;
      if (train->count("--batch")) cfg["batch_size"] = batch;
      if (train->count("--patience")) cfg["early_stop_patience"] = patience;
      if (train->count("--weight-decay")) cfg["weight_decay"] = weight_decay;
      if (train->count("--variant")) cfg["variant"] = variant;
      if (train->count("--task")) cfg["task"] = task;
      if (train->count("--heads")) cfg["heads"] = heads;
      if (train->count("--hidden")) cfg["hidden"] = hidden;
      if (train->count("--tau")) cfg["tau"] = cfg_tau;
      if (train->count("--dropout")) cfg["dropout"] = dropout;
      cfg["seed"] = effective_seed(train->count("--seed") > 0, seed,
                                   cfg.value("seed", std::uint64_t{0}));
      return run_train(data, out, std::move(cfg));
    }
    if (eval->parsed()) return run_eval(model_path, data);
    if (isotest->parsed())
      return run_isotest(data, eps, load_config_file(config_path), seeds);
    if (reconstruct->parsed()) {
      if (graph.empty() == data.empty())
        throw CLI::ValidationError(
            "reconstruct", "give exactly one of --graph or --data");
      json cfg = load_config_file(config_path);
      if (reconstruct->count("--lr")) cfg["lr"] = lr;
      if (reconstruct->count("--epochs")) cfg["max_epochs"] = epochs;
      cfg["seed"] = effective_seed(reconstruct->count("--seed") > 0, seed,
                                   cfg.value("seed", std::uint64_t{0}));
      return run_reconstruct(graph.empty() ? data : graph, cfg, taus, hard,
                             out);
    }
    if (permviz->parsed())
      return run_permviz(data, tau, smoothness,
                         effective_seed(permviz->count("--seed") > 0, seed, 0),
                         out);
    if (gradcheck->parsed())
      return run_gradcheck(
          effective_seed(gradcheck->count("--seed") > 0, seed, 0));
    if (bench->parsed())
      return run_bench(variants, sizes, avg_degree,
                       effective_seed(bench->count("--seed") > 0, seed, 0),
                       out);
    return 1;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message and usage hint
    return 1;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
