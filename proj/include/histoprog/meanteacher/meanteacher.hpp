#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "histoprog/common/csv.hpp"
#include "histoprog/common/raster.hpp"
#include "histoprog/gradcore/checkpoint.hpp"
#include "histoprog/gradcore/mlp.hpp"
#include "histoprog/gradcore/optim.hpp"
#include "histoprog/gradcore/params.hpp"
#include "histoprog/synthdata/synthdata.hpp"

namespace histoprog::meanteacher {

using gradcore::ParamSet;
using gradcore::Tensor;
using gradcore::Var;

inline constexpr std::size_t kPatchSize = 32;
inline constexpr std::size_t kNumClasses = synthdata::kNumClasses;
using Probs = std::array<double, kNumClasses>;

struct PatchSample {
  RasterImage pixels;
  std::optional<int> label;
  std::string slide_id;
  std::size_t row = 0, col = 0;  // grid position
};

/// Row-major tiling; partial edge tiles are dropped.
std::vector<PatchSample> extract_patches(const RasterImage& slide, const std::string& slide_id,
                                         std::size_t size = kPatchSize, std::size_t stride = kPatchSize);
/// As extract_patches, labeling each patch with its majority mask class
/// (ties go to the lower class index).
std::vector<PatchSample> extract_labeled_patches(const synthdata::Slide& slide, const std::string& slide_id,
                                                 std::size_t size = kPatchSize, std::size_t stride = kPatchSize);

enum class Augment { identity, rot90, hflip };
Augment augment_from_string(const std::string& name);
/// rot90 turns counter-clockwise; hflip mirrors columns.
PatchSample augment_patch(const PatchSample& p, Augment mode);

/// Batch mean of the squared distance between probability rows.
Var consistency_loss(const Var& p_student, const Var& p_teacher);

struct PseudoLabel {
  std::size_t index = 0;  // into the prediction list
  int label = 0;          // argmax class
  Probs probs{};          // top-P kept, renormalized
};
/// Per argmax class, keeps the K patches with the highest probability for
/// that class (ties by ascending index), in that order, classes ascending.
std::vector<PseudoLabel> pseudo_label_select(const std::vector<Probs>& preds, std::size_t k, std::size_t p);

/// 3072 -> 128 -> 64 -> 5. Layer names: fc1, fc2, logits, probs.
gradcore::MlpSpec classifier_spec();
const std::vector<std::string>& layer_names();

struct MTConfig {
  std::size_t epochs = 30;
  std::size_t batch = 32;
  double lr = 0.001;
  double momentum = 0.9;
  double ema_delta = 0.99;
  double consistency_weight = 1.0;
  double ramp_fraction = 0.2;  // of the epochs, linear 0 -> weight
  double input_noise = 0.05;
  double dropout = 0.1;
  bool oversample = true;
  bool augment = true;
  std::size_t pseudo_rounds = 0;  // optional outer pseudo-label rounds
  std::size_t pseudo_k = 4000;
  std::size_t pseudo_p = 5;
  double divergence_threshold = 1e3;
  std::uint64_t seed = 0;
};

struct MTModel {
  ParamSet student;
  ParamSet teacher;
  MTConfig cfg;
};

struct MTResult {
  MTModel model;
  CsvTable curve;  // epoch,loss,ce,consistency,weight,student_acc,teacher_acc
  gradcore::Checkpoint checkpoint;
};

/// Consistency weight at a 1-based epoch.
double consistency_weight_at(const MTConfig& cfg, std::size_t epoch);

/// Student steps on CE(labeled) + w(t) * J(unlabeled + labeled), each
/// followed by an EMA teacher update. Accuracies in the curve are measured
/// on `validation` when given, else on the labeled set.
MTResult train_mean_teacher(const std::vector<PatchSample>& labeled, const std::vector<PatchSample>& unlabeled,
                            const MTConfig& cfg, const std::vector<PatchSample>& validation = {},
                            const std::function<void(const std::string&)>& log = {});

/// Deterministic (noise-free) class probabilities, {n, 5}.
Tensor predict(const ParamSet& params, const std::vector<PatchSample>& patches);
double accuracy(const ParamSet& params, const std::vector<PatchSample>& patches);

struct ClassificationMap {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> classes;  // row-major argmax
  std::vector<Probs> probs;
};

/// Teacher predictions per patch of the slide grid.
ClassificationMap classification_map(const MTModel& model, const RasterImage& slide);
/// Class colours used by every indexed map and mask PNG.
const std::vector<Rgb8>& map_palette();
/// Indexed PNG, one pixel per patch, plus a JSON probability sidecar.
void save_map(const ClassificationMap& map, const std::filesystem::path& png_path);
ClassificationMap load_map(const std::filesystem::path& png_path);

/// Teacher activations at `layer` (default fc2, width 64).
std::vector<double> extract_features(const MTModel& model, const PatchSample& patch, const std::string& layer = "fc2");
/// Rows of features for many patches, {n, width}.
Tensor extract_features(const MTModel& model, const std::vector<PatchSample>& patches,
                        const std::string& layer = "fc2");

gradcore::Checkpoint mt_checkpoint(const MTModel& model);
MTModel mt_from_checkpoint(const gradcore::Checkpoint& ckpt);

/// Manifest of labeled patches: slide_id,row,col,label.
CsvTable patch_manifest(const std::vector<PatchSample>& patches);

}  // namespace histoprog::meanteacher
