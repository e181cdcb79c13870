// Exercises the shared-library C interface end to end: handles, status
// codes, error strings, JSON reports, and the files each operation writes.
#include <doctest.h>

#include <cocn.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() /
           ("cocn_capi_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string file(const std::string& name) const {
    return (root / name).string();
  }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  f << content;
}

// Six 3-node graphs in TU layout: odd graphs are triangles, even ones paths.
std::string write_tiny_tu(const Workspace& ws) {
  fs::create_directories(ws.root / "TINY");
  std::string a, ind, gl, nl;
  int node = 0;
  for (int g = 1; g <= 6; g++) {
    int base = node;
    for (int k = 0; k < 3; k++) {
      node++;
      ind += std::to_string(g) + "\n";
      nl += "0\n";
    }
    auto edge = [&](int u, int v) {
      a += std::to_string(u) + ", " + std::to_string(v) + "\n";
      a += std::to_string(v) + ", " + std::to_string(u) + "\n";
    };
    edge(base + 1, base + 2);
    edge(base + 2, base + 3);
    if (g % 2 == 1) edge(base + 1, base + 3);
    gl += (g % 2 == 1) ? "1\n" : "2\n";
  }
  write_file(ws.file("TINY/TINY_A.txt"), a);
  write_file(ws.file("TINY/TINY_graph_indicator.txt"), ind);
  write_file(ws.file("TINY/TINY_graph_labels.txt"), gl);
  write_file(ws.file("TINY/TINY_node_labels.txt"), nl);
  return ws.file("TINY");
}

const char* kTinyModel =
    "{\"heads\":1,\"hidden\":4,\"pos_hidden\":0,\"l1\":0,\"l2\":1,"
    "\"kernel_sizes\":[2],\"trailing_conv\":false,\"in_features\":1,"
    "\"num_classes\":2}";

}  // namespace

TEST_CASE("status codes distinguish caller errors from successes") {
  cocn_dataset* ds = nullptr;
  CHECK(cocn_dataset_open("/no/such/path", &ds) == COCN_ERR_INPUT);
  CHECK(ds == nullptr);
  CHECK(std::string(cocn_last_error()).size() > 0);

  CHECK(cocn_dataset_open(nullptr, &ds) == COCN_ERR_INPUT);

  cocn_model* model = nullptr;
  CHECK(cocn_model_new("{\"variant\":\"bogus\"}", 0, &model) ==
        COCN_ERR_INPUT);
  CHECK(model == nullptr);
  CHECK(cocn_model_new("not json at all", 0, &model) == COCN_ERR_INPUT);
  CHECK(cocn_model_open("/no/such/checkpoint", &model) == COCN_ERR_INPUT);
}

TEST_CASE("models round trip through checkpoints with stable parameters") {
  Workspace ws;
  cocn_model* model = nullptr;
  REQUIRE(cocn_model_new(kTinyModel, 11, &model) == COCN_OK);
  REQUIRE(model != nullptr);
  CHECK(std::string(cocn_last_error()).empty());

  long params = 0;
  REQUIRE(cocn_model_param_count(model, &params) == COCN_OK);
  CHECK(params > 0);

  std::string ckpt = ws.file("m.ckpt");
  REQUIRE(cocn_model_save(model, ckpt.c_str()) == COCN_OK);

  cocn_model* loaded = nullptr;
  REQUIRE(cocn_model_open(ckpt.c_str(), &loaded) == COCN_OK);
  long loaded_params = 0;
  REQUIRE(cocn_model_param_count(loaded, &loaded_params) == COCN_OK);
  CHECK(loaded_params == params);

  cocn_model_close(model);
  cocn_model_close(loaded);
}

TEST_CASE("training writes metrics, folds, and a checkpoint the evaluator accepts") {
  Workspace ws;
  std::string tu = write_tiny_tu(ws);

  cocn_dataset* ds = nullptr;
  REQUIRE(cocn_dataset_open(tu.c_str(), &ds) == COCN_OK);
  int graphs = 0, classes = 0, dim = 0;
  REQUIRE(cocn_dataset_info(ds, &graphs, &classes, &dim) == COCN_OK);
  CHECK(graphs == 6);
  CHECK(classes == 2);
  CHECK(dim == 1);

  std::string cfg =
      "{\"heads\":1,\"hidden\":4,\"pos_hidden\":0,\"l1\":0,\"l2\":1,"
      "\"kernel_sizes\":[2],\"trailing_conv\":false,"
      "\"folds\":3,\"max_epochs\":3,\"batch_size\":2,\"lr\":0.05,"
      "\"seed\":5}";
  std::string out = ws.file("run");
  REQUIRE(cocn_train(cfg.c_str(), ds, out.c_str()) == COCN_OK);

  json rep = json::parse(cocn_last_report());
  REQUIRE(rep["folds"].size() == 3);
  CHECK(rep["config"]["train"]["seed"] == 5);
  CHECK(fs::exists(out + "/metrics.json"));
  CHECK(fs::exists(out + "/folds.csv"));
  CHECK(fs::exists(out + "/model.ckpt"));

  std::ifstream mf(out + "/metrics.json");
  json on_disk = json::parse(mf);
  CHECK(on_disk["folds"].size() == 3);

  cocn_model* model = nullptr;
  REQUIRE(cocn_model_open((out + "/model.ckpt").c_str(), &model) == COCN_OK);
  REQUIRE(cocn_evaluate(model, ds) == COCN_OK);
  json ev = json::parse(cocn_last_report());
  CHECK(ev["graphs"] == 6);
  CHECK(ev["accuracy"].get<double>() >= 0.0);
  CHECK(ev["accuracy"].get<double>() <= 1.0);

  // mismatched shapes surface as runtime failures, not crashes
  cocn_model* narrow = nullptr;
  REQUIRE(cocn_model_new(
              "{\"heads\":1,\"hidden\":4,\"pos_hidden\":0,\"l1\":0,"
              "\"l2\":1,\"kernel_sizes\":[2],\"trailing_conv\":false,"
              "\"in_features\":3,\"num_classes\":2}",
              0, &narrow) == COCN_OK);
  CHECK(cocn_evaluate(narrow, ds) != COCN_OK);
  CHECK(std::string(cocn_last_error()).size() > 0);

  cocn_model_close(narrow);
  cocn_model_close(model);
  cocn_dataset_close(ds);
}

TEST_CASE("isomorphism screening separates topologies but not twins") {
  Workspace ws;
  std::string tu = write_tiny_tu(ws);
  cocn_dataset* ds = nullptr;
  REQUIRE(cocn_dataset_open(tu.c_str(), &ds) == COCN_OK);

  int undistinguished = -1;
  REQUIRE(cocn_isomorphism_test("{\"heads\":2,\"hidden\":4,\"pos_hidden\":0}",
                                ds, 1e-4, "0,1,2", &undistinguished) ==
          COCN_OK);
  // 3 triangle-triangle twins + 3 path-path twins; 9 mixed pairs separate
  CHECK(undistinguished == 6);
  json rep = json::parse(cocn_last_report());
  CHECK(rep["pairs"] == 15);
  CHECK(rep["undistinguished"] == 6);

  // explicit positions are rejected for this test
  CHECK(cocn_isomorphism_test("{\"position_mode\":\"explicit\"}", ds, 1e-4,
                              nullptr, &undistinguished) == COCN_ERR_INPUT);
  cocn_dataset_close(ds);
}

TEST_CASE("reconstruction emits per-tau errors and coordinate tables") {
  Workspace ws;
  std::string out = ws.file("rec");
  REQUIRE(cocn_reconstruct("ring:12", "{\"seed\":3}", "10", 1, out.c_str()) ==
          COCN_OK);
  json rep = json::parse(cocn_last_report());
  CHECK(rep["nodes"] == 12);
  CHECK(rep["results"][0]["mse"].get<double>() == 0.0);
  CHECK(fs::exists(out + "/mse.csv"));
  CHECK(fs::exists(out + "/recovered_tau10.csv"));

  std::ifstream f(out + "/recovered_tau10.csv");
  int lines = 0;
  std::string line;
  while (std::getline(f, line)) lines++;
  CHECK(lines == 13);  // header + one row per node

  CHECK(cocn_reconstruct("grid:bad", "{}", "10", 1, out.c_str()) ==
        COCN_ERR_INPUT);
  CHECK(cocn_reconstruct("ring:12", "{}", "", 1, out.c_str()) ==
        COCN_ERR_INPUT);
}

TEST_CASE("gradient checks report every primitive below tolerance") {
  REQUIRE(cocn_gradcheck(1) == COCN_OK);
  json rep = json::parse(cocn_last_report());
  CHECK(rep["checks"].size() > 20);
  CHECK(rep["worst"].get<double>() < 1e-4);
}

TEST_CASE("benchmark rows and the refusal cap cross the C boundary") {
  Workspace ws;
  std::string out = ws.file("bench");
  REQUIRE(cocn_bench("vanilla,segment", "30", 4.0, 1, out.c_str()) == COCN_OK);
  json rep = json::parse(cocn_last_report());
  REQUIRE(rep["rows"].size() == 2);
  CHECK(rep["rows"][0]["status"] == "ok");
  CHECK(fs::exists(out + "/timings.csv"));

  REQUIRE(cocn_bench("expanded", "30000", 4.0, 1, out.c_str()) == COCN_OK);
  rep = json::parse(cocn_last_report());
  CHECK(rep["rows"][0]["status"] == "refused");

  CHECK(cocn_bench("warp-drive", "30", 4.0, 1, out.c_str()) ==
        COCN_ERR_INPUT);
}

TEST_CASE("permutation heatmaps render from a bare edge list") {
  Workspace ws;
  write_file(ws.file("g.edges"), "n=6\n0 1\n1 2\n2 3\n3 4\n4 5\n5 0\n0 3\n");
  std::string out = ws.file("viz");
  REQUIRE(cocn_permviz(ws.file("g.edges").c_str(), 8.0, 3, 0, out.c_str()) ==
          COCN_OK);
  std::ifstream f(out + "/ahat.pgm", std::ios::binary);
  REQUIRE(f.good());
  std::string magic;
  f >> magic;
  CHECK(magic == "P5");
  CHECK(fs::exists(out + "/pxxp.pgm"));
}
