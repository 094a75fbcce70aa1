#pragma once

// Stage 1 fine-tunes the dual encoder on image-caption pairs with
// L = L_irr + L_cmpm + L_id. Stage 2 freezes the encoder and trains any
// number of TINets against cached global features.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "w4p/dataset.hpp"
#include "w4p/encoder.hpp"
#include "w4p/feature_cache.hpp"
#include "w4p/losses.hpp"
#include "w4p/parameters.hpp"
#include "w4p/tinet.hpp"

namespace w4p {

enum class ContrastiveLoss { Cmpm, Itc };

struct TrainConfig {
  int epochs = 60;
  int batch_size = 128;
  double base_lr = 1e-5;   // encoder parameters, or the TINet in stage 2
  double head_lr = 5e-5;   // randomly initialised stage-1 heads
  int warmup_epochs = 5;
  double tau = 0.02;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  // Stops after this many optimizer steps when set (the schedule still spans
  // `epochs`).
  std::optional<int> max_steps;
  // Unset: identity-aware for stage 1, plain shuffling for stage 2.
  std::optional<SamplerConfig> sampler;
  IrrNorm irr_norm = IrrNorm::Vocab;
  double mask_rate = 0.15;
  ContrastiveLoss contrastive = ContrastiveLoss::Cmpm;

  // Every violated field, empty when valid.
  std::vector<std::string> problems() const;
  void validate() const;
  LossConfig loss_config() const { return {tau, epsilon}; }
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are a Config error.
  static TrainConfig from_json(const nlohmann::json& j);
};

// Linear ramp from base/10 to base over the warmup epochs, then cosine decay
// to zero at `epochs`.
double lr_at(const TrainConfig& cfg, double epoch);
double lr_at(const TrainConfig& cfg, double epoch, double base_lr);

struct LossRecord {
  int step = 0;
  double epoch = 0.0;
  double loss = 0.0;
  double lr = 0.0;

  bool operator==(const LossRecord&) const = default;
};

struct TrainState {
  int step = 0;
  int epoch = 0;
  std::vector<LossRecord> loss_trace;
};

std::string loss_trace_csv(const std::vector<LossRecord>& trace);
void write_loss_trace(const std::filesystem::path& path, const std::vector<LossRecord>& trace);

// Adam with the usual moment coefficients and no weight decay.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(ParameterList& params, double lr);

 private:
  double b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

struct Stage1Parts {
  double irr = 0.0;
  double contrastive = 0.0;
  double id = 0.0;
};

struct Stage1Result {
  DualEncoder encoder;
  TrainState state;
  std::vector<Stage1Parts> parts;  // one entry per step, aligned with the trace
};

struct CheckpointOptions {
  std::filesystem::path dir;  // empty disables checkpointing
  int every_epochs = 1;
};

// Patch grids of every dataset image, computed once.
std::vector<Eigen::MatrixXd> preprocess_dataset(const DualEncoder& encoder, const Dataset& dataset,
                                                const ImageSource& images = load_dataset_image);

Stage1Result run_stage1(DualEncoder encoder, const Dataset& dataset, const TrainConfig& cfg,
                        const ImageSource& images = load_dataset_image, const CheckpointOptions& ckpt = {});

struct TinetTask {
  std::string name;
  TinetConfig config;
  TinetMode mode = TinetMode::Text;
};

struct Stage2Result {
  std::vector<Tinet> tinets;
  std::vector<TrainState> states;  // one per task
};

// Features for the rows of one batch: f^v, and f^t when texts are available.
struct FeatureProvider {
  std::function<Eigen::MatrixXd(std::span<const std::size_t>)> images;
  std::function<Eigen::MatrixXd(std::span<const std::size_t>)> texts;  // empty for image-only data
};

FeatureProvider cached_features(const FeatureCache& cache, const Dataset& dataset);
// Recomputes features with the encoder at every step.
FeatureProvider live_features(const DualEncoder& encoder, const Dataset& dataset,
                              const ImageSource& images = load_dataset_image);

// Every task sees the same batches; each TINet has its own optimizer.
Stage2Result run_stage2(const DualEncoder& encoder, const FeatureCache& cache, const Dataset& dataset,
                        const std::vector<TinetTask>& tasks, const TrainConfig& cfg, const CheckpointOptions& ckpt = {});
Stage2Result run_stage2(const DualEncoder& encoder, const FeatureProvider& features, const Dataset& dataset,
                        const std::vector<TinetTask>& tasks, const TrainConfig& cfg, const CheckpointOptions& ckpt = {});

}  // namespace w4p
