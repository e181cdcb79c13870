#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "adam.hpp"
#include "convolution.hpp"
#include "graph.hpp"
#include "permutation.hpp"
#include "sparse_conv.hpp"
#include "tape.hpp"

namespace cocn {

enum class Variant { Vanilla, Expanded, Sparse, Segment };
enum class PositionMode { Explicit, Implicit };

// Full network description. The down-sampling block is l1 unit-step
// convolution layers, l2 pooling layers (step = kernel), and an optional
// trailing unit-step layer; kernel_sizes lists one size per layer in that
// order. When inception is on, every unit-step layer runs the branch sizes
// in inception_kernels instead of its kernel_sizes entry (pooling layers
// always run a single kernel).
struct ModelConfig {
  Variant variant = Variant::Vanilla;
  Task task = Task::GraphClassification;
  int in_features = 0;
  int num_classes = 2;
  int heads = 4;
  int l1 = 1;
  int l2 = 1;
  std::vector<int> kernel_sizes;
  bool trailing_conv = true;
  int hidden = 64;
  int pos_hidden = 64;  // position MLP hidden width; 0 = single linear map
  double tau = 10.0;
  int smoothness_t = 6;
  PositionMode position_mode = PositionMode::Explicit;
  int segment_b = 0;
  int segment_batch_nb = 0;  // anchors per batch; 0 = every node
  bool residual = false;
  bool inception = false;
  std::vector<int> inception_kernels;
  double dropout = 0.0;

  int down_layer_count() const { return l1 + l2 + (trailing_conv ? 1 : 0); }
  void validate() const;  // throws ConfigError
};

// JSON round trip, snake_case keys matching the field names. Parsing applies
// the documented defaults: trailing_conv defaults on for graph tasks and off
// for node tasks, pos_hidden defaults to hidden, and a scalar kernel_sizes
// broadcasts to every layer.
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& cfg);

// Layer plan derived from the config: branch kernel sizes plus step.
struct LayerPlan {
  std::vector<int> ks;
  int s = 1;
  int widest() const {
    int m = 0;
    for (int k : ks) m = std::max(m, k);
    return m;
  }
};
std::vector<LayerPlan> down_plan(const ModelConfig& cfg);

// Trainable tensors in the fixed declaration order (input map, layer norm,
// position MLP, down kernels, up kernels, classifier).
struct ModelParams {
  std::vector<Parameter> tensors;
};

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
long param_count(const ModelConfig& cfg);

// Tape handles for one forward/backward pass, in declaration order in `all`.
struct StagedParams {
  Var in_w, in_b, ln_g, ln_b;
  std::vector<Var> pos_mlp;  // (weight, bias) pairs; empty in implicit mode
  struct LayerRef {
    std::vector<DiagKernel> branches;
    int s = 1;
  };
  std::vector<LayerRef> down;
  std::vector<TransKernel> up;  // node tasks: deepest layer first
  Var cls_w, cls_b;
  std::vector<Var> all;
};

StagedParams stage_params(Tape& t, const ModelParams& params,
                          const ModelConfig& cfg, bool requires_grad = true);

struct Forward {
  Var logits;     // graph tasks 1×C, node tasks n×C
  Var embedding;  // pooled pre-classifier representation (graph tasks)
};

// Approximate positions for the raw features, one column per head (learned
// in explicit mode, distance-derived constants in implicit mode).
Var approximate_positions(Tape& t, const Graph& g, const ModelConfig& cfg,
                          const StagedParams& p, Var x_raw);

// Per-head pooled representations for graph-level readout; forward_graph is
// their concatenation pushed through the classifier.
std::vector<Var> head_pooled(Tape& t, const Graph& g, const ModelConfig& cfg,
                             const StagedParams& p, bool training = false,
                             std::mt19937_64* rng = nullptr);

Forward forward_graph(Tape& t, const Graph& g, const ModelConfig& cfg,
                      const StagedParams& p, bool training = false,
                      std::mt19937_64* rng = nullptr);

Forward forward_node(Tape& t, const Graph& g, const ModelConfig& cfg,
                     const StagedParams& p, bool training = false,
                     std::mt19937_64* rng = nullptr);

// Segments of the globally sorted node sequence: length-b windows with unit
// stride and circular wraparound, one segment anchored at every node.
struct SegmentBatch {
  std::vector<int> anchor_nodes;        // n_b anchors (original node ids)
  std::vector<std::vector<int>> nodes;  // per segment, b node ids in order
  std::vector<Matrix> x_b;              // per segment, b×d raw features
  std::vector<SpMat> a_b;               // per segment, b×b induced adjacency
  Matrix r_a_b;                         // n_b×b approximate positions
};

// Head-0 approximate positions evaluated without gradient, used to fix the
// epoch's global node order.
Vector segment_global_positions(const Graph& g, const ModelConfig& cfg,
                                const ModelParams& params);

SegmentBatch build_segment_batch(const Graph& g, const Vector& r_a_global,
                                 int b, const std::vector<int>& anchors);

// Segment networks follow the graph-level structure per segment. Node tasks
// emit one row of logits per anchor; graph tasks max-reduce the segment
// representations into a single row.
Forward segment_forward(Tape& t, const Graph& g, const SegmentBatch& batch,
                        const ModelConfig& cfg, const StagedParams& p,
                        bool training = false, std::mt19937_64* rng = nullptr);

// Classification loss on logits rows: softmax cross-entropy, reduced to the
// sigmoid form on the logit difference when there are two classes.
Var classification_loss(Tape& t, Var logits, const std::vector<int>& labels,
                        int num_classes);

// Flat binary checkpoint: "COCN1", length-prefixed config JSON, then tensor
// values in declaration order as row-major 64-bit little-endian reals.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params);
std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path);

}  // namespace cocn
