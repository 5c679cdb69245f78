#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "histoprog/common/csv.hpp"
#include "histoprog/common/raster.hpp"
#include "histoprog/gradcore/checkpoint.hpp"
#include "histoprog/gradcore/params.hpp"
#include "histoprog/meanteacher/meanteacher.hpp"
#include "histoprog/prognosis/model.hpp"
#include "histoprog/synthdata/synthdata.hpp"

namespace histoprog::distill {

using gradcore::ParamSet;
using gradcore::Tensor;
using gradcore::Var;

inline constexpr std::size_t kInputSize = 32;
inline constexpr std::size_t kTokenSize = 8;
inline constexpr std::size_t kTokens = 16;               // (32/8)^2
inline constexpr std::size_t kTokenDim = kTokenSize * kTokenSize * 3;

struct TinyVitConfig {
  bool positional = true;
  std::size_t dim = 32;
  std::size_t blocks = 2;
  std::size_t mlp_hidden = 64;
  std::size_t outputs = synthdata::kNumClasses;
};

struct TinyVit {
  TinyVitConfig cfg;
  ParamSet params;
};

TinyVit init_tiny_vit(const TinyVitConfig& cfg, std::uint64_t seed);

/// Images to token rows {n*16, 192}, row-major over the 4x4 token grid,
/// pixels centred to [-1, 1].
Tensor tokenize(const std::vector<RasterImage>& images);

struct VitOutput {
  Var logits;                  // {n, outputs}
  Var features;                // class-token embedding {n, dim}
  std::vector<Var> attention;  // per block {n, 17, 17}; row 0 is the class token
};
VitOutput tiny_vit_forward(const TinyVit& model, const std::vector<RasterImage>& images);
/// Same, from token rows as produced by tokenize.
VitOutput tiny_vit_forward_tokens(const TinyVit& model, const Tensor& tokens);

struct KDConfig {
  double alpha1 = 0.5;  // KL weight
  double alpha2 = 0.1;  // GAN weight
  double tau = 0.07;    // CRD temperature
  double lambda = 0.5;  // CRD weight
  double kd_temperature = 4.0;
  std::size_t negatives = 0;  // per anchor; 0 means batch - 1 in-batch negatives
};

/// Discriminator over output distributions: k -> 16 -> 1 (logit).
gradcore::MlpSpec discriminator_spec(std::size_t outputs);

struct KdLoss {
  Var ce, kl, gan, total;  // total = ce + alpha1 kl + alpha2 gan
};
/// CE on labels >= 0 (rows labelled -1 are skipped); KL(teacher || student)
/// on outputs softened by kd_temperature, scaled by its square; GAN is the
/// non-saturating generator term -ln D(student).
KdLoss kd_gan_loss(const Var& student_logits, const Tensor& teacher_logits, const std::vector<int>& labels,
                   const ParamSet& disc, const KDConfig& cfg);
/// -ln D(teacher) - ln(1 - D(student)), batch mean.
Var discriminator_loss(const ParamSet& disc, const Var& student_probs, const Var& teacher_probs);

/// InfoNCE with cosine similarity. student, anchors {B,d}; negatives {B,N,d}.
Var crd_loss(const Var& student, const Var& anchors, const Var& negatives, double tau);

struct TeacherOutputs {
  Tensor logits;    // {n, k}
  Tensor features;  // {n, d_t}
};
TeacherOutputs mt_teacher_outputs(const meanteacher::MTModel& teacher, const std::vector<RasterImage>& images);

struct DistillConfig {
  KDConfig kd;
  TinyVitConfig vit;
  std::size_t epochs = 20;
  std::size_t batch = 32;
  double lr = 0.02;
  double momentum = 0.9;
  double d_lr = 0.005;
  double clip_norm = 5.0;
  double divergence_threshold = 1e4;
  std::uint64_t seed = 0;
};

struct DistillResult {
  TinyVit student;
  ParamSet disc;
  CsvTable curve;  // epoch,loss,ce,kl,gan,crd,accuracy,agreement
  gradcore::Checkpoint checkpoint;
};

/// Trains a TinyViT on `images` against the frozen teacher outputs.
DistillResult train_distilled(const std::vector<RasterImage>& images, const std::vector<int>& labels,
                              const TeacherOutputs& teacher, const DistillConfig& cfg,
                              const std::function<void(const std::string&)>& log = {});
/// Plain CE training of the same student with the same batches.
DistillResult train_supervised_student(const std::vector<RasterImage>& images, const std::vector<int>& labels,
                                       const DistillConfig& cfg);

/// Softmax outputs {n, k}.
Tensor student_probs(const TinyVit& model, const std::vector<RasterImage>& images);

gradcore::Checkpoint vit_checkpoint(const TinyVit& model);
TinyVit vit_from_checkpoint(const gradcore::Checkpoint& ckpt);

/// A 32x32 patch of a single tissue class.
RasterImage render_class_patch(std::size_t cls, std::uint64_t seed);
/// One image per lesion patch, in patient / lesion / patch order.
std::vector<RasterImage> render_cohort_patches(const synthdata::Cohort& cohort, std::uint64_t seed);
/// Replaces each lesion's patch features by rows of `features` (same order
/// as render_cohort_patches).
std::vector<prognosis::PatientSample> patients_with_features(const synthdata::Cohort& cohort, const Tensor& features);

struct ComparisonRow {
  std::string model;
  std::string aggregation;
  std::string endpoint;
  prognosis::CIndexCi c_index;
};
/// model,aggregation_strategy,endpoint,c_index,ci_low,ci_high
CsvTable comparison_csv(const std::vector<ComparisonRow>& rows);

}  // namespace histoprog::distill
