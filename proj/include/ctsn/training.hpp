#pragma once

// Loss, clip-level split and the two-stage training procedure.
//
// Stage A fits the pose embedding, skeleton basis and weight residual to the
// Laplacian-smoothed ground truth with the mesh stream held at zero. Stage B
// freezes those and fits the graph stream plus mesh basis to the full ground
// truth.

#include "ctsn/network.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace ctsn {

struct Sample {
  Pose pose;
  Mesh gt;
};

struct Clip {
  std::string name;
  std::vector<Sample> samples;
};

struct Dataset {
  RigAsset asset;
  std::vector<Clip> clips;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t sample_count() const;
};

/// Layout: asset.json (+ body.obj, cloth.obj), meta.json,
/// clips/<clip>/<frame>.pose.json and clips/<clip>/<frame>.gt.obj.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Checks that every sample matches the asset (joint count, cloth topology).
void validate_dataset(const Dataset& dataset);

/// Mean over all vertices of all samples of the per-vertex distance.
double loss(const std::vector<Positions>& pred, const std::vector<Positions>& gt);
ad::Var loss_on_tape(const std::vector<ad::Var>& pred, const std::vector<Tensor>& gt);

/// First ceil(0.9 count) clips train, the rest test; at least one test clip.
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch = 4;
  std::size_t epochs_a = 500;
  std::size_t epochs_b = 500;
  std::uint64_t seed = 0;
  double smooth_lambda = 0.5;
  int smooth_iters = 20;
  NetworkConfig network;      // joints / cloth_vertices are filled from the asset
  double divergence_factor = 2.0;
  bool weight_residual = true;  // false holds dW_C at zero (initial weights only)
};

struct EpochLog {
  std::size_t epoch;
  std::string stage;  // "A", "B" or "final"
  double loss;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  double baseline_a = 0.0;  // zero-residual loss against the smoothed targets
  double baseline_b = 0.0;  // Stage-A model loss against the full targets
  double final_loss = 0.0;  // full model against the full targets
};

using ProgressFn = std::function<void(const EpochLog&)>;

TrainResult train(const Dataset& train_set, const TrainConfig& config, const ProgressFn& progress = {});

/// Full-target loss of a model on a dataset, evaluated sample by sample in
/// dataset order (the number logged as the final row).
double dataset_loss(const Dataset& dataset, const Model& model, StreamMask mask = {});

/// CSV with header `epoch,stage,loss`.
void write_log_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path);

/// Low-frequency targets of every sample, in dataset order.
std::vector<Positions> smoothed_targets(const Dataset& dataset, double lambda, int iters);

}  // namespace ctsn
