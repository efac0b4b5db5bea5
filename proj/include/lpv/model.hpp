#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lpv/backbone.hpp"
#include "lpv/charset.hpp"
#include "lpv/glrm.hpp"
#include "lpv/pam.hpp"
#include "lpv/synthdata.hpp"

namespace lpv::inline LPV_NS {

struct OptimizerConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ScheduleConfig {
  std::size_t total_epochs = 16;
  std::size_t mask_on_epoch = 8;   // epochs before this run without the GLRM mask
  std::size_t lr_decay_epoch = 10;
  double decayed_lr = 3e-4;
  // Linear ramp of the learning rate over the first optimizer steps.
  std::size_t warmup_steps = 300;
  std::size_t batch_size = 32;
};

struct LpvConfig {
  std::size_t n_stages = 3;
  std::size_t glrm_layers = 2;
  double threshold = 0.05;
  std::size_t t_max = 8;
  std::string charset = kDefaultCharset;
  BackboneConfig backbone;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  std::uint64_t seed = 1;

  std::size_t classes() const { return charset.size() + 2; }
  void validate() const;
};

struct StageOutput {
  Tensor features;  // F^i  [B x P x E]
  PamOutput pam;    // Q^i, A^i, R^i, Y^i
  GlrmOutput glrm;  // populated for i >= 1
};

struct StageTrace {
  std::vector<StageOutput> stages;
};

// N position-attention stages with N-1 reconstruction modules between them.
// No parameters are shared between stages.
class LpvModel {
 public:
  explicit LpvModel(const LpvConfig& config);

  // images: [B x H x W x chan]. frozen_masks, when given, holds one mask per
  // GLRM (index i-1 for stage i) and bypasses mask generation.
  StageTrace forward(const Tensor& images, bool mask_enabled,
                     const std::vector<Tensor>* frozen_masks = nullptr) const;

  // Names: backbone.*, pam.<stage>.*, glrm.<gap>.block.<l>.*
  ParamList parameters() const;
  std::size_t parameter_count() const;

  const LpvConfig& config() const { return config_; }
  const Charset& charset() const { return charset_; }
  std::size_t pam_count() const { return pams_.size(); }
  std::size_t glrm_count() const { return glrms_.size(); }
  const Backbone& backbone() const { return backbone_; }
  const Pam& pam(std::size_t stage) const { return pams_.at(stage); }
  const Glrm& glrm(std::size_t gap) const { return glrms_.at(gap); }

 private:
  LpvConfig config_;
  Charset charset_;
  Backbone backbone_;
  std::vector<Pam> pams_;
  std::vector<Glrm> glrms_;
};

// Stacks sample images into [B x H x W x 1].
Tensor make_batch(const std::vector<const Sample*>& samples);
std::vector<int> batch_labels(const std::vector<const Sample*>& samples);

// Mean cross entropy over all stages, slots and batch entries.
// labels: [B x T] flattened.
Tensor compute_loss(const StageTrace& trace, std::span<const int> labels);
// Cross entropy of one stage, averaged over slots and batch.
Tensor stage_loss(const StageOutput& stage, std::span<const int> labels);
// Per-sample loss (mean over stages and slots), in batch order.
std::vector<Real> per_sample_losses(const StageTrace& trace, std::span<const int> labels);

// Per-slot argmax (lowest index wins ties), cut at the first [EOS].
std::vector<int> argmax_classes(std::span<const Real> logits, std::size_t t_max, std::size_t classes);
std::string decode_prediction(std::span<const Real> logits, std::size_t t_max, const Charset& charset);

class Adam {
 public:
  Adam(std::vector<Tensor> params, const OptimizerConfig& config);

  // Bias-corrected update from the parameters' accumulated gradients.
  void step(double lr);
  void zero_grad();
  std::size_t steps() const { return step_; }

 private:
  std::vector<Tensor> params_;
  OptimizerConfig config_;
  std::vector<std::vector<Real>> m_;
  std::vector<std::vector<Real>> v_;
  std::size_t step_ = 0;
};

struct StageMetrics {
  double loss = 0;
  double seq_acc = 0;
  double char_acc = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  bool mask_enabled = false;
  double lr = 0;
  std::vector<StageMetrics> stages;
};

enum class MaskMode { kSchedule, kOn, kOff };
MaskMode parse_mask_mode(const std::string& text);
std::string to_string(MaskMode mode);

struct TrainOptions {
  MaskMode mask_mode = MaskMode::kSchedule;
  std::optional<std::filesystem::path> metrics_csv;
  std::optional<std::filesystem::path> checkpoint;
  std::function<void(const EpochMetrics&)> on_epoch;
};

bool mask_enabled_at(const ScheduleConfig& schedule, MaskMode mode, std::size_t epoch);
double learning_rate_at(const LpvConfig& config, std::size_t epoch);
// Rate for optimizer step `step` (0-based, counted across epochs).
double learning_rate_at_step(const LpvConfig& config, std::size_t epoch, std::size_t step);

// Runs the full schedule. Metrics are accumulated over each epoch's training
// batches. Throws NumericalError on a non-finite loss.
std::vector<EpochMetrics> train(LpvModel& model, const std::vector<Sample>& dataset, const TrainOptions& options = {});

struct EvalResult {
  std::vector<StageMetrics> stages;
  std::size_t samples = 0;
  // predictions[stage][sample]
  std::vector<std::vector<std::string>> predictions;
};

// Inference-only evaluation. threads = 0 uses the hardware concurrency; the
// result does not depend on the thread count.
EvalResult evaluate(const LpvModel& model, const std::vector<Sample>& samples, bool mask_enabled = true,
                    std::size_t threads = 1, std::size_t batch_size = 64);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& epochs);

// Checkpoint: "LPV1", u32 count, then per tensor u32 name length, name, u32
// rank, u32 dims, float32 data; all little-endian.
void save_checkpoint(const LpvModel& model, const std::filesystem::path& path);
void load_checkpoint(LpvModel& model, const std::filesystem::path& path);

}  // namespace lpv::inline LPV_NS
