#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "histoprog/common/csv.hpp"
#include "histoprog/common/raster.hpp"
#include "histoprog/gradcore/checkpoint.hpp"
#include "histoprog/gradcore/mlp.hpp"
#include "histoprog/gradcore/params.hpp"
#include "histoprog/gradcore/var.hpp"

namespace histoprog::stainlab {

using gradcore::ParamSet;
using gradcore::Var;

/// Grid the discriminator pools every image down to.
inline constexpr std::size_t kPoolGrid = 8;
inline constexpr std::size_t kClassifierWidth = 16;

gradcore::MlpSpec colorizer_spec();      // gray -> 16 -> 16 -> 3
gradcore::MlpSpec discriminator_spec();  // 8x8x3 -> 32 -> 1
gradcore::MlpSpec classifier_pixel_spec();
gradcore::MlpSpec classifier_head_spec();

/// Fixed gray normalizer G: luminance standardized to mean 0.6, std 0.2,
/// clamped to [0,1]. Constant images map to 0.6.
RasterImage gray_normalize(const RasterImage& img);

struct StyleModel {
  ParamSet colorizer;
  ParamSet discriminator;
  ParamSet classifier;  // frozen tumor classifier f^
  double alpha = 0.2;
  double beta = 0.3;
  double gamma = 0.5;
  double temperature = 2.0;
};

/// A batch of equally sized RGB images as pixel rows {batch*h*w, 3}.
struct ImageBatch {
  std::size_t batch = 0, height = 0, width = 0;
  gradcore::Tensor pixels;
};
ImageBatch make_batch(const std::vector<const RasterImage*>& images);

// Differentiable building blocks.
Var colorize(const ParamSet& zeta, const Var& gray_rows);
Var rgb_to_gray_rows(const Var& rgb_rows, std::size_t batch);
/// Mean over each (h/8)x(w/8) block; {batch*h*w,3} -> {batch, 192}.
Var block_mean_pool(const Var& rgb_rows, std::size_t batch, std::size_t height, std::size_t width);
Var discriminate(const ParamSet& disc, const Var& rgb_rows, std::size_t batch, std::size_t height, std::size_t width);
/// Pooled penultimate features of f^, {batch, 16}.
Var classifier_features(const ParamSet& fhat, const Var& rgb_rows, std::size_t batch);
Var classifier_logits(const ParamSet& fhat, const Var& features);

struct AdversarialLosses {
  Var d_loss;  // -(E ln D(real) + E ln(1 - D(fake)))
  Var g_loss;  // -E ln D(fake)
};
AdversarialLosses adversarial_losses(const Var& d_real, const Var& d_fake);

/// KL(p || q) for explicit distributions.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);
/// Batch mean of KL(softmax(ref/T) || softmax(gen/T)).
Var softened_kl(const Var& ref_features, const Var& gen_features, double temperature);
Var feature_preserving_loss(const ParamSet& fhat, const Var& color_ref_rows, const Var& generated_rows,
                            std::size_t batch, double temperature);

/// zeta(G(img)) clamped to [0,1].
RasterImage normalize_image(const StyleModel& model, const RasterImage& img);

struct TumorTile {
  RasterImage image;
  int label = 0;  // 1 = tumor
};

struct ClassifierConfig {
  std::size_t epochs = 20;
  std::size_t batch = 16;
  double lr = 0.3;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

/// Trains f^ with cross-entropy; returns its parameters.
ParamSet train_tumor_classifier(const std::vector<TumorTile>& tiles, const ClassifierConfig& cfg);
double tumor_classifier_accuracy(const ParamSet& fhat, const std::vector<TumorTile>& tiles);

struct StyleConfig {
  double alpha = 0.2, beta = 0.3, gamma = 0.5;
  double temperature = 2.0;
  std::size_t epochs = 30;
  std::size_t batch = 4;  // per style; the generator sees 2*batch images
  double lr = 0.05;       // colorizer
  double d_lr = 0.005;    // discriminator
  double momentum = 0.5;
  double clip_norm = 1.0;
  double divergence_threshold = 1e3;
  std::uint64_t seed = 0;
};

struct StyleDataset {
  std::vector<RasterImage> style_a;  // reference style
  std::vector<RasterImage> style_b;
};

struct StyleTrainResult {
  StyleModel model;
  CsvTable curve;  // epoch,l_gan,l_recon,l_fp,total
  gradcore::Checkpoint checkpoint;
};

/// Alternating discriminator / colorizer updates on
/// alpha*L_gan + beta*L_recon + gamma*L_fp. Throws DivergenceError if the
/// total exceeds the threshold.
StyleTrainResult train_style_transfer(const StyleDataset& data, const ParamSet& fhat, const StyleConfig& cfg,
                                      const std::function<void(const std::string&)>& log = {});

gradcore::Checkpoint style_checkpoint(const StyleModel& model, std::uint64_t seed);
StyleModel style_from_checkpoint(const gradcore::Checkpoint& ckpt);

// ------------------------------------------------------------ color metric

/// Mean Lab color of each tissue class; nullopt where the class is absent.
using ClassLab = std::array<std::optional<std::array<double, 3>>, 5>;
ClassLab class_mean_lab(const std::vector<RasterImage>& images, const std::vector<std::vector<std::uint8_t>>& masks);
/// Mean Euclidean Lab distance over classes present in both.
double class_color_distance(const ClassLab& a, const ClassLab& b);

}  // namespace histoprog::stainlab
