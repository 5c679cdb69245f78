#include <cmath>

#include "histoprog/cli/cli.hpp"
#include "histoprog/common/error.hpp"

namespace histoprog::cli {

namespace {

struct KeyDefault {
  const char* key;
  const char* value;
  const char* help;
};

constexpr KeyDefault kSchema[] = {
    {"seed", "0", "base seed for every stage"},
    // synth
    {"synth.slides", "6", "slides per style"},
    {"synth.test_slides", "2", "held-out slides (the last ones)"},
    {"synth.slide_size", "256", "slide height and width"},
    {"synth.regions", "40", "tissue regions per slide"},
    {"synth.stain_jitter", "0", "relative stain jitter per slide"},
    {"synth.noise", "0.01", "additive RGB noise"},
    {"synth.patients", "258", "cohort size"},
    {"synth.beta", "strong", "risk coefficients (comma list) or 'strong'"},
    {"synth.baseline_hazard", "0.0231", "events per month at zero risk"},
    {"synth.censoring", "0.3", "target censoring fraction"},
    {"synth.endpoint", "OS", "OS or TTR"},
    {"synth.feature_noise", "0.5", "patch feature noise"},
    // stain
    {"stain.od_threshold", "0.15", "OD threshold for tissue pixels"},
    {"stain.angle_percentile", "1", "Macenko angle percentile"},
    {"stain.conc_percentile", "99", "Macenko concentration percentile"},
    {"style.tile", "64", "training tile size"},
    {"style.alpha", "0.2", "GAN weight"},
    {"style.beta", "0.3", "reconstruction weight"},
    {"style.gamma", "0.5", "feature-preserving weight"},
    {"style.temperature", "2", "feature-preserving softmax temperature"},
    {"style.epochs", "30", ""},
    {"style.batch", "4", "tiles per style per step"},
    {"style.lr", "0.05", "colorizer learning rate"},
    {"style.d_lr", "0.005", "discriminator learning rate"},
    {"style.momentum", "0.5", ""},
    {"style.clip_norm", "1", ""},
    {"style.classifier_epochs", "20", "tumor classifier epochs"},
    {"style.classifier_lr", "0.3", "tumor classifier learning rate"},
    // mean teacher
    {"mt.label_fraction", "0.1", "labeled share of training patches"},
    {"mt.epochs", "40", ""},
    {"mt.batch", "32", ""},
    {"mt.lr", "0.001", ""},
    {"mt.momentum", "0.9", ""},
    {"mt.ema_delta", "0.99", "teacher EMA coefficient"},
    {"mt.consistency_weight", "1", ""},
    {"mt.ramp_fraction", "0.2", "consistency ramp as a share of epochs"},
    {"mt.input_noise", "0.05", ""},
    {"mt.dropout", "0.1", ""},
    {"mt.pseudo_rounds", "0", "pseudo-label rounds"},
    {"mt.pseudo_k", "4000", "pseudo labels kept per class"},
    {"mt.pseudo_p", "5", "top probabilities kept per pseudo label"},
    {"mt.baseline", "true", "also train the supervised-only baseline"},
    // prognosis
    {"prognosis.head", "cox", "cox, discrete or trg"},
    {"prognosis.aggregation", "weighted", "max, mean or weighted"},
    {"prognosis.attention", "true", "gated attention over patches"},
    {"prognosis.hidden", "16", ""},
    {"prognosis.intervals", "4", "discrete time grid size m"},
    {"prognosis.trg_grouping", "1-2 vs 3-5", ""},
    {"prognosis.epochs", "300", ""},
    {"prognosis.lr", "0.2", ""},
    {"prognosis.momentum", "0.9", ""},
    {"prognosis.patience", "20", ""},
    {"prognosis.min_epochs", "50", ""},
    {"prognosis.test_fraction", "0.3", "held-out patients"},
    // evaluate
    {"evaluate.label_fractions", "0.125,0.25,0.375,0.5,0.75,1", ""},
    {"evaluate.seeds", "5", "splits averaged in the label-fraction curve"},
    {"evaluate.bootstrap", "200", "c-index bootstrap resamples"},
    {"evaluate.trg_groupings", "1-2 vs 3-5;1 vs 2-5;1-2 vs 3 vs 4-5", "semicolon separated"},
    // distill
    {"kd.alpha1", "0.5", "KL weight"},
    {"kd.alpha2", "0.1", "GAN weight"},
    {"kd.tau", "0.07", "CRD temperature"},
    {"kd.lambda", "0.5", "CRD weight"},
    {"kd.temperature", "4", "KL softening temperature"},
    {"kd.negatives", "0", "0 = batch - 1"},
    {"distill.teacher_patches", "500", ""},
    {"distill.teacher_epochs", "15", ""},
    {"distill.student_images", "2000", ""},
    {"distill.positional", "true", "TinyViT positional embeddings"},
    {"distill.epochs", "5", ""},
    {"distill.batch", "32", ""},
    {"distill.lr", "0.02", ""},
    {"distill.d_lr", "0.005", ""},
};

std::size_t get_size(const KeyValueConfig& cfg, const std::string& key) {
  const long long v = cfg.get_int(key);
  if (v < 0) throw ValidationError("config key " + key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

double get_fraction(const KeyValueConfig& cfg, const std::string& key) {
  const double v = cfg.get_double(key);
  if (!(v > 0 && v <= 1)) throw ValidationError("config key " + key + " must be in (0, 1]");
  return v;
}

std::uint64_t base_seed(const KeyValueConfig& cfg) { return static_cast<std::uint64_t>(cfg.get_int("seed")); }

}  // namespace

KeyValueConfig default_run_config() {
  KeyValueConfig cfg;
  for (const auto& k : kSchema) cfg.declare(k.key, k.value, k.help);
  return cfg;
}

synthdata::CohortSpec cohort_spec(const KeyValueConfig& cfg) {
  synthdata::CohortSpec s;
  s.seed = derive_seed(base_seed(cfg), 1);
  s.n_patients = get_size(cfg, "synth.patients");
  s.beta = cfg.get("synth.beta") == "strong" ? synthdata::strong_beta() : cfg.get_double_list("synth.beta");
  s.baseline_hazard = cfg.get_double("synth.baseline_hazard");
  s.censoring_rate = cfg.get_double("synth.censoring");
  s.endpoint = cfg.get("synth.endpoint");
  s.feature_noise = cfg.get_double("synth.feature_noise");
  s.validate();
  return s;
}

synthdata::SlideSpec slide_spec(const KeyValueConfig& cfg, std::size_t index, synthdata::StainStyle style) {
  synthdata::SlideSpec s;
  s.seed = derive_seed(base_seed(cfg), 100 + index);
  s.height = s.width = get_size(cfg, "synth.slide_size");
  s.grade = 1 + static_cast<int>(index % 5);
  s.style = style;
  s.stain_jitter = cfg.get_double("synth.stain_jitter");
  s.noise = cfg.get_double("synth.noise");
  s.regions = get_size(cfg, "synth.regions");
  s.validate();
  return s;
}

stainlab::MacenkoParams macenko_params(const KeyValueConfig& cfg) {
  stainlab::MacenkoParams p;
  p.od_threshold = cfg.get_double("stain.od_threshold");
  p.angle_percentile = cfg.get_double("stain.angle_percentile");
  p.conc_percentile = cfg.get_double("stain.conc_percentile");
  return p;
}

stainlab::ClassifierConfig fhat_config(const KeyValueConfig& cfg) {
  stainlab::ClassifierConfig c;
  c.epochs = get_size(cfg, "style.classifier_epochs");
  c.lr = cfg.get_double("style.classifier_lr");
  c.seed = derive_seed(base_seed(cfg), 2);
  return c;
}

stainlab::StyleConfig style_config(const KeyValueConfig& cfg) {
  stainlab::StyleConfig c;
  c.alpha = cfg.get_double("style.alpha");
  c.beta = cfg.get_double("style.beta");
  c.gamma = cfg.get_double("style.gamma");
  c.temperature = cfg.get_double("style.temperature");
  c.epochs = get_size(cfg, "style.epochs");
  c.batch = get_size(cfg, "style.batch");
  c.lr = cfg.get_double("style.lr");
  c.d_lr = cfg.get_double("style.d_lr");
  c.momentum = cfg.get_double("style.momentum");
  c.clip_norm = cfg.get_double("style.clip_norm");
  c.seed = derive_seed(base_seed(cfg), 3);
  return c;
}

meanteacher::MTConfig mt_config(const KeyValueConfig& cfg) {
  meanteacher::MTConfig c;
  c.epochs = get_size(cfg, "mt.epochs");
  c.batch = get_size(cfg, "mt.batch");
  c.lr = cfg.get_double("mt.lr");
  c.momentum = cfg.get_double("mt.momentum");
  c.ema_delta = cfg.get_double("mt.ema_delta");
  c.consistency_weight = cfg.get_double("mt.consistency_weight");
  c.ramp_fraction = cfg.get_double("mt.ramp_fraction");
  c.input_noise = cfg.get_double("mt.input_noise");
  c.dropout = cfg.get_double("mt.dropout");
  c.pseudo_rounds = get_size(cfg, "mt.pseudo_rounds");
  c.pseudo_k = get_size(cfg, "mt.pseudo_k");
  c.pseudo_p = get_size(cfg, "mt.pseudo_p");
  c.seed = derive_seed(base_seed(cfg), 4);
  get_fraction(cfg, "mt.label_fraction");
  return c;
}

prognosis::PrognosisConfig prognosis_config(const KeyValueConfig& cfg) {
  prognosis::PrognosisConfig c;
  c.head = prognosis::head_from_string(cfg.get("prognosis.head"));
  c.aggregation = prognosis::aggregation_from_string(cfg.get("prognosis.aggregation"));
  c.attention = cfg.get_bool("prognosis.attention");
  c.hidden = get_size(cfg, "prognosis.hidden");
  c.intervals = get_size(cfg, "prognosis.intervals");
  c.trg_grouping = cfg.get("prognosis.trg_grouping");
  prognosis::trg_grouping_from_string(c.trg_grouping);
  c.epochs = get_size(cfg, "prognosis.epochs");
  c.lr = cfg.get_double("prognosis.lr");
  c.momentum = cfg.get_double("prognosis.momentum");
  c.patience = get_size(cfg, "prognosis.patience");
  c.min_epochs = get_size(cfg, "prognosis.min_epochs");
  c.seed = derive_seed(base_seed(cfg), 5);
  get_fraction(cfg, "prognosis.test_fraction");
  return c;
}

distill::DistillConfig distill_config(const KeyValueConfig& cfg) {
  distill::DistillConfig c;
  c.kd.alpha1 = cfg.get_double("kd.alpha1");
  c.kd.alpha2 = cfg.get_double("kd.alpha2");
  c.kd.tau = cfg.get_double("kd.tau");
  c.kd.lambda = cfg.get_double("kd.lambda");
  c.kd.kd_temperature = cfg.get_double("kd.temperature");
  c.kd.negatives = get_size(cfg, "kd.negatives");
  c.vit.positional = cfg.get_bool("distill.positional");
  c.epochs = get_size(cfg, "distill.epochs");
  c.batch = get_size(cfg, "distill.batch");
  c.lr = cfg.get_double("distill.lr");
  c.d_lr = cfg.get_double("distill.d_lr");
  c.seed = derive_seed(base_seed(cfg), 6);
  return c;
}

DistillSettings distill_settings(const KeyValueConfig& cfg) {
  DistillSettings s;
  s.teacher_patches = get_size(cfg, "distill.teacher_patches");
  s.teacher.epochs = get_size(cfg, "distill.teacher_epochs");
  s.teacher.seed = derive_seed(base_seed(cfg), 7);
  s.head = prognosis_config(cfg);
  s.head.head = prognosis::HeadKind::cox;
  s.student = distill_config(cfg);
  s.student_images = get_size(cfg, "distill.student_images");
  s.test_fraction = get_fraction(cfg, "prognosis.test_fraction");
  s.bootstrap = get_size(cfg, "evaluate.bootstrap");
  s.seed = derive_seed(base_seed(cfg), 8);
  return s;
}

}  // namespace histoprog::cli
