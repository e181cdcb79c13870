#include "cocn.h"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gradcheck.hpp"
#include "graph.hpp"
#include "harness.hpp"
#include "model.hpp"

using nlohmann::json;

struct cocn_dataset {
  cocn::Dataset ds;
};

struct cocn_model {
  cocn::ModelConfig cfg;
  cocn::ModelParams params;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_report;

int fail_input(const std::string& msg) {
  g_error = msg;
  return COCN_ERR_INPUT;
}

// Runs fn, translating exceptions into status codes: configuration and data
// problems are caller errors, shape conflicts and everything else are
// runtime failures.
template <typename Fn>
int guarded(Fn&& fn) {
  g_error.clear();
  try {
    return fn();
  } catch (const cocn::ConfigError& e) {
    g_error = e.what();
    return COCN_ERR_INPUT;
  } catch (const cocn::DataError& e) {
    g_error = e.what();
    return COCN_ERR_INPUT;
  } catch (const json::exception& e) {
    g_error = e.what();
    return COCN_ERR_INPUT;
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
    return COCN_ERR_RUNTIME;
  } catch (const std::exception& e) {
    g_error = e.what();
    return COCN_ERR_RUNTIME;
  } catch (...) {
    g_error = "unknown failure";
    return COCN_ERR_RUNTIME;
  }
}

json parse_json(const char* text, const char* what) {
  if (!text || !*text) return json::object();
  json j = json::parse(text);
  if (!j.is_object())
    throw cocn::ConfigError(std::string(what) + " must be a JSON object");
  return j;
}

// Model config from a flat JSON object, with unspecified task/in_features/
// num_classes filled from the dataset.
cocn::ModelConfig model_config_for(const json& j, const cocn::Dataset& ds) {
  cocn::ModelConfig cfg = cocn::model_config_from_json(j);
  if (!j.contains("task")) cfg.task = ds.task;
  if (cfg.in_features == 0) cfg.in_features = ds.feature_dim;
  if (!j.contains("num_classes") && ds.num_classes > 0)
    cfg.num_classes = ds.num_classes;
  return cfg;
}

std::vector<double> parse_double_list(const char* csv, const char* what) {
  if (!csv || !*csv)
    throw cocn::ConfigError(std::string(what) + " list is empty");
  std::vector<double> out;
  std::string s(csv);
  size_t at = 0;
  while (at <= s.size()) {
    size_t comma = s.find(',', at);
    std::string item = s.substr(at, comma - at);
    if (item.empty())
      throw cocn::ConfigError(std::string(what) + " list has an empty entry");
    size_t used = 0;
    double v = std::stod(item, &used);
    if (used != item.size())
      throw cocn::ConfigError(std::string("bad ") + what + " entry: " + item);
    out.push_back(v);
    if (comma == std::string::npos) break;
    at = comma + 1;
  }
  return out;
}

cocn::Variant parse_variant(const std::string& s) {
  if (s == "vanilla") return cocn::Variant::Vanilla;
  if (s == "expanded") return cocn::Variant::Expanded;
  if (s == "sparse") return cocn::Variant::Sparse;
  if (s == "segment") return cocn::Variant::Segment;
  throw cocn::ConfigError("unknown variant: " + s);
}

std::string out_path(const std::string& dir, const char* name) {
  std::filesystem::create_directories(dir);
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

extern "C" {

const char* cocn_last_error(void) { return g_error.c_str(); }
const char* cocn_last_report(void) { return g_report.c_str(); }

int cocn_dataset_open(const char* path, cocn_dataset** out) {
  if (!path || !out) return fail_input("dataset_open needs a path and an out handle");
  *out = nullptr;
  return guarded([&] {
    auto handle = new cocn_dataset{cocn::open_dataset(path)};
    *out = handle;
    return COCN_OK;
  });
}

int cocn_dataset_info(const cocn_dataset* ds, int* graph_count,
                      int* num_classes, int* feature_dim) {
  if (!ds) return fail_input("dataset_info needs a dataset");
  g_error.clear();
  if (graph_count) *graph_count = static_cast<int>(ds->ds.graphs.size());
  if (num_classes) *num_classes = ds->ds.num_classes;
  if (feature_dim) *feature_dim = ds->ds.feature_dim;
  return COCN_OK;
}

void cocn_dataset_close(cocn_dataset* ds) { delete ds; }

int cocn_model_new(const char* config_json, uint64_t seed, cocn_model** out) {
  if (!out) return fail_input("model_new needs an out handle");
  *out = nullptr;
  return guarded([&] {
    json j = parse_json(config_json, "model config");
    cocn::ModelConfig cfg = cocn::model_config_from_json(j);
    cfg.validate();
    auto model = new cocn_model{cfg, cocn::init_params(cfg, seed)};
    *out = model;
    return COCN_OK;
  });
}

int cocn_model_open(const char* checkpoint_path, cocn_model** out) {
  if (!checkpoint_path || !out)
    return fail_input("model_open needs a path and an out handle");
  *out = nullptr;
  return guarded([&] {
    auto [cfg, params] = cocn::load_checkpoint(checkpoint_path);
    *out = new cocn_model{std::move(cfg), std::move(params)};
    return COCN_OK;
  });
}

int cocn_model_save(const cocn_model* model, const char* checkpoint_path) {
  if (!model || !checkpoint_path)
    return fail_input("model_save needs a model and a path");
  return guarded([&] {
    cocn::save_checkpoint(checkpoint_path, model->cfg, model->params);
    return COCN_OK;
  });
}

int cocn_model_param_count(const cocn_model* model, long* out) {
  if (!model || !out) return fail_input("param_count needs a model and an out");
  g_error.clear();
  *out = cocn::param_count(model->cfg);
  return COCN_OK;
}

void cocn_model_close(cocn_model* model) { delete model; }

int cocn_train(const char* config_json, const cocn_dataset* ds,
               const char* out_dir) {
  if (!ds || !out_dir) return fail_input("train needs a dataset and out_dir");
  return guarded([&] {
    g_report.clear();
    json j = parse_json(config_json, "train config");
    cocn::ModelConfig mcfg = model_config_for(j, ds->ds);
    cocn::TrainConfig tcfg = cocn::train_config_from_json(j);
    if (mcfg.task != ds->ds.task)
      throw cocn::ConfigError("model task does not match the dataset task");

    cocn::ModelParams best;
    cocn::MetricsReport rep =
        cocn::cross_validate(ds->ds, mcfg, tcfg, &best);

    json provenance{{"model", cocn::model_config_to_json(mcfg)},
                    {"train", cocn::train_config_to_json(tcfg)}};
    cocn::write_metrics_json(out_path(out_dir, "metrics.json"), rep,
                             provenance);
    cocn::write_folds_csv(out_path(out_dir, "folds.csv"), rep);
    cocn::save_checkpoint(out_path(out_dir, "model.ckpt"), mcfg, best);

    json report = cocn::metrics_to_json(rep);
    report["config"] = provenance;
    g_report = report.dump();
    return COCN_OK;
  });
}

int cocn_evaluate(const cocn_model* model, const cocn_dataset* ds) {
  if (!model || !ds) return fail_input("evaluate needs a model and a dataset");
  return guarded([&] {
    g_report.clear();
    if (model->cfg.task != ds->ds.task)
      throw cocn::ConfigError("model task does not match the dataset task");
    std::vector<int> idx(ds->ds.graphs.size());
    for (size_t i = 0; i < idx.size(); i++) idx[i] = static_cast<int>(i);
    cocn::EvalResult ev =
        cocn::evaluate_split(ds->ds, idx, model->cfg, model->params);
    g_report = json{{"loss", ev.loss},
                    {"accuracy", ev.accuracy},
                    {"auc", ev.auc},
                    {"graphs", idx.size()}}
                   .dump();
    return COCN_OK;
  });
}

int cocn_isomorphism_test(const char* config_json, const cocn_dataset* ds,
                          double epsilon, const char* seeds_csv,
                          int* undistinguished) {
  if (!ds) return fail_input("isomorphism_test needs a dataset");
  return guarded([&] {
    g_report.clear();
    json j = parse_json(config_json, "model config");
    cocn::ModelConfig cfg = cocn::model_config_from_json(j);
    if (!j.contains("position_mode"))
      cfg.position_mode = cocn::PositionMode::Implicit;
    cfg.task = cocn::Task::GraphClassification;

    std::vector<std::uint64_t> seeds;
    for (double s : parse_double_list(seeds_csv && *seeds_csv ? seeds_csv
                                                              : "0,1,2,3,4",
                                      "seed"))
      seeds.push_back(static_cast<std::uint64_t>(s));

    auto pairs = cocn::all_graph_pairs(ds->ds.graphs);
    std::vector<double> distances;
    int count = cocn::isomorphism_test(pairs, cfg, epsilon, seeds, &distances);
    if (undistinguished) *undistinguished = count;

    double min_dist = 0.0;
    for (size_t i = 0; i < distances.size(); i++)
      min_dist = i == 0 ? distances[i] : std::min(min_dist, distances[i]);
    g_report = json{{"pairs", pairs.size()},
                    {"undistinguished", count},
                    {"epsilon", epsilon},
                    {"seeds", seeds},
                    {"min_distance", min_dist}}
                   .dump();
    return COCN_OK;
  });
}

int cocn_reconstruct(const char* graph_spec, const char* train_json,
                     const char* taus_csv, int hard, const char* out_dir) {
  if (!graph_spec || !out_dir)
    return fail_input("reconstruct needs a graph spec and out_dir");
  return guarded([&] {
    g_report.clear();
    std::string spec(graph_spec);
    cocn::Graph g;
    if (spec.rfind("ring:", 0) == 0) {
      g = cocn::make_ring_graph(std::stoi(spec.substr(5)));
    } else if (spec.rfind("grid:", 0) == 0) {
      std::string dims = spec.substr(5);
      size_t x = dims.find('x');
      if (x == std::string::npos)
        throw cocn::ConfigError("grid spec must look like grid:6x6");
      g = cocn::make_grid_graph(std::stoi(dims.substr(0, x)),
                                std::stoi(dims.substr(x + 1)));
    } else {
      cocn::Dataset data = cocn::open_dataset(spec);
      if (data.graphs.empty()) throw cocn::DataError("empty dataset: " + spec);
      g = data.graphs[0];
      if (!g.has_features())
        throw cocn::ConfigError(
            "reconstruction needs coordinate features; graph has none");
    }

    cocn::TrainConfig tcfg =
        cocn::train_config_from_json(parse_json(train_json, "train config"));
    std::vector<double> taus = parse_double_list(taus_csv, "tau");

    json rows = json::array();
    std::vector<std::vector<std::string>> mse_rows;
    for (double tau : taus) {
      cocn::ReconstructionResult res =
          cocn::reconstruction_experiment(g, tau, tcfg, hard != 0);
      mse_rows.push_back(
          {cocn::format_double(tau), cocn::format_double(res.mse)});
      rows.push_back({{"tau", tau}, {"mse", res.mse}});

      std::vector<std::vector<std::string>> coords;
      for (Eigen::Index r = 0; r < res.recovered.rows(); r++) {
        std::vector<std::string> row;
        for (Eigen::Index c = 0; c < res.recovered.cols(); c++)
          row.push_back(cocn::format_double(res.recovered(r, c)));
        coords.push_back(std::move(row));
      }
      std::vector<std::string> header;
      for (Eigen::Index c = 0; c < res.recovered.cols(); c++)
        header.push_back("x" + std::to_string(c));
      char tag[32];
      std::snprintf(tag, sizeof tag, "%g", tau);
      cocn::write_csv(
          out_path(out_dir, (std::string("recovered_tau") + tag + ".csv")
                                .c_str()),
          header, coords);
    }
    cocn::write_csv(out_path(out_dir, "mse.csv"), {"tau", "mse"}, mse_rows);

    g_report = json{{"graph", spec},
                    {"nodes", g.n},
                    {"hard", hard != 0},
                    {"results", rows}}
                   .dump();
    return COCN_OK;
  });
}

int cocn_gradcheck(uint64_t seed) {
  return guarded([&] {
    g_report.clear();
    auto results = cocn::gradcheck_suite(static_cast<unsigned>(seed));
    json rows = json::array();
    double worst = 0.0;
    for (const auto& r : results) {
      rows.push_back({{"op", r.op}, {"max_rel_err", r.max_rel_err}});
      worst = std::max(worst, r.max_rel_err);
    }
    g_report = json{{"checks", rows}, {"worst", worst}}.dump();
    return COCN_OK;
  });
}

int cocn_bench(const char* variants_csv, const char* sizes_csv,
               double avg_degree, uint64_t seed, const char* out_dir) {
  if (!variants_csv || !sizes_csv || !out_dir)
    return fail_input("bench needs variants, sizes, and out_dir");
  return guarded([&] {
    g_report.clear();
    std::vector<cocn::Variant> variants;
    std::string s(variants_csv);
    size_t at = 0;
    while (at <= s.size()) {
      size_t comma = s.find(',', at);
      variants.push_back(parse_variant(s.substr(at, comma - at)));
      if (comma == std::string::npos) break;
      at = comma + 1;
    }
    std::vector<int> sizes;
    for (double v : parse_double_list(sizes_csv, "size"))
      sizes.push_back(static_cast<int>(v));

    auto rows = cocn::timing_benchmark(variants, sizes, avg_degree, seed);
    cocn::write_timings_csv(out_path(out_dir, "timings.csv"), rows);

    json jrows = json::array();
    for (const auto& r : rows)
      jrows.push_back({{"variant", r.variant},
                       {"n", r.n},
                       {"seconds", r.seconds},
                       {"status", r.status}});
    g_report = json{{"rows", jrows}}.dump();
    return COCN_OK;
  });
}

int cocn_permviz(const char* data_path, double tau, int smoothness_t,
                 uint64_t seed, const char* out_dir) {
  if (!data_path || !out_dir)
    return fail_input("permviz needs a data path and out_dir");
  return guarded([&] {
    cocn::Dataset data = cocn::open_dataset(data_path);
    if (data.graphs.empty())
      throw cocn::DataError(std::string("empty dataset: ") + data_path);
    const cocn::Graph& g = data.graphs[0];

    cocn::ModelConfig cfg;
    cfg.heads = 1;
    cfg.tau = tau;
    cfg.smoothness_t = smoothness_t;
    cfg.kernel_sizes = {5, 5, 5};
    if (g.has_features()) {
      cfg.position_mode = cocn::PositionMode::Explicit;
      cfg.in_features = static_cast<int>(g.features.cols());
    } else {
      cfg.position_mode = cocn::PositionMode::Implicit;
      int max_degree = 0;
      for (int d : g.degrees()) max_degree = std::max(max_degree, d);
      cfg.in_features = max_degree + 1;
    }
    cfg.validate();
    cocn::ModelParams params = cocn::init_params(cfg, seed);
    cocn::permviz_render(g, cfg, params, out_dir);
    return COCN_OK;
  });
}

}  // extern "C"
