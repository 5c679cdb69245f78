#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "histoprog/common/raster.hpp"

namespace histoprog::synthdata {

inline constexpr std::size_t kNumClasses = 5;
enum TissueClass : std::uint8_t { kNormal = 0, kFibrosis = 1, kCancer = 2, kNecrosis = 3, kBackground = 4 };

const char* class_name(std::size_t cls);
std::size_t class_from_name(const std::string& name);

using Composition = std::array<double, kNumClasses>;
using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;

enum class StainStyle { A, B };
StainStyle style_from_string(const std::string& s);
std::string to_string(StainStyle s);

/// Optical-density directions (unit norm) used to render style A.
Vec3 hematoxylin_od();
Vec3 eosin_od();
/// Row-stochastic RGB mixing matrix mapping style A to style B.
const Mat3& style_b_mixing();

/// Expected class fractions for a TRG-like grade (1..5); cancer is 0 at grade 1
/// and increases with grade.
Composition grade_composition(int grade);

struct SlideSpec {
  std::uint64_t seed = 0;
  std::size_t height = 512;
  std::size_t width = 512;
  int grade = 3;
  StainStyle style = StainStyle::A;
  /// Empty means grade_composition(grade).
  std::vector<double> composition;
  /// Relative per-slide jitter of stain concentrations and directions.
  double stain_jitter = 0.0;
  /// Additive Gaussian RGB noise.
  double noise = 0.01;
  std::size_t regions = 150;

  void validate() const;
};

struct Slide {
  RasterImage image;
  std::vector<std::uint8_t> mask;  // one TissueClass per pixel, row-major
  Vec3 h_vector{};                 // stain directions actually used
  Vec3 e_vector{};

  std::size_t mask_at(std::size_t r, std::size_t c) const { return mask[r * image.width + c]; }
};

Slide gen_slide(const SlideSpec& spec);

/// Renders an RGB raster from a class mask with the slide texture model.
/// Used for thumbnails and for rendering geometry in a given style.
RasterImage render_mask(const std::vector<std::uint8_t>& mask, std::size_t height, std::size_t width,
                        StainStyle style, std::uint64_t seed, double stain_jitter = 0.0, double noise = 0.01,
                        Vec3* h_used = nullptr, Vec3* e_used = nullptr);

/// Fraction of each class in a mask.
Composition mask_composition(const std::vector<std::uint8_t>& mask);

// ---------------------------------------------------------------- cohorts

/// Per-patient covariates: 5 composition fractions, then age and lesion
/// count (standardized).
inline constexpr std::size_t kNumClinical = 2;
inline constexpr std::size_t kNumCovariates = kNumClasses + kNumClinical;
/// Patch-feature samples drawn per lesion.
inline constexpr std::size_t kPatchesPerLesion = 16;

struct CohortSpec {
  std::uint64_t seed = 0;
  std::size_t n_patients = 258;
  std::vector<double> beta;         // kNumCovariates coefficients; empty = zeros
  double baseline_hazard = 0.0231;  // events per month (median about 30 months at zero risk)
  double censoring_rate = 0.3;
  std::string endpoint = "OS";
  std::array<double, 5> grade_weights{35, 42, 68, 98, 15};
  double feature_noise = 0.5;

  void validate() const;
};

/// Coefficients giving a well-separated hazard (cancer-heavy lesions high risk).
std::vector<double> strong_beta();

struct Lesion {
  double volume = 1.0;
  Composition composition{};                   // generating fractions
  std::vector<std::uint8_t> patch_classes;     // kPatchesPerLesion draws
  std::vector<std::array<double, kNumClasses>> patch_features;  // softmax vectors
};

struct Patient {
  std::string id;
  int trg = 1;
  std::vector<Lesion> lesions;
  std::array<double, kNumClinical> clinical{};  // standardized
  double age = 0.0;                             // raw years
  Composition realized{};                       // volume-weighted patch-class fractions
  double oracle_risk = 0.0;
  double time = 0.0;  // months, observed
  bool event = false;
};

struct Cohort {
  CohortSpec spec;
  std::vector<Patient> patients;
  double censoring_max = 0.0;  // upper bound of the uniform censoring draw
  double censored_fraction() const;
};

Cohort gen_cohort(const CohortSpec& spec);

/// patient_id,endpoint,time_months,event,trg,volume_1..k
void save_cohort(const Cohort& cohort, const std::filesystem::path& csv_path,
                 const std::filesystem::path& features_json);
Cohort load_cohort(const std::filesystem::path& csv_path, const std::filesystem::path& features_json);

std::string slide_spec_json(const SlideSpec& spec);
SlideSpec slide_spec_from_json(const std::string& text);
std::string cohort_spec_json(const CohortSpec& spec);
CohortSpec cohort_spec_from_json(const std::string& text);

}  // namespace histoprog::synthdata
