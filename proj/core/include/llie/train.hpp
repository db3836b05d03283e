#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "llie/checkpoint.hpp"
#include "llie/image.hpp"
#include "llie/preproc.hpp"
#include "llie/rng.hpp"
#include "llie/unet.hpp"

namespace llie {

// ---- configuration --------------------------------------------------------

struct TrainConfig {
  int epochs = 500;
  double lr_max = 2e-4;
  double weight_decay = 1e-4;
  int warmup_epochs = 10;
  int crop = 384;
  int batch_size = 8;
  std::uint64_t seed = 0;
  double lambda_perceptual = 0.0;
  PreprocPair preproc;
  int residual_slot = 0;
  int checkpoint_every = 50;
  bool deterministic = true;
  bool cache_preproc = false;
  StorageType checkpoint_storage = StorageType::F32;
  ModelConfig model = ModelConfig::tiny();
  std::string data_root;   // contains low/ and gt/
  std::string output_dir;  // checkpoints and train_log.csv; empty = none

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

// Keys mirror the fields above: epochs, lr_max, weight_decay, warmup_epochs,
// crop, batch_size, seed, lambda_perceptual, preproc (pair spec),
// residual_slot, checkpoint_every, deterministic, cache_preproc,
// checkpoint_dtype (f32|f16), model (tiny|mid|large), f1, n_blocks,
// expansion, gn_groups, data, out. Unknown keys are rejected.
TrainConfig train_config_from_map(const std::map<std::string, std::string>& kv);
TrainConfig load_train_config(const std::string& path);

// Model-only keys (model, f1, n_blocks, expansion, gn_groups, in_channels,
// out_channels); unknown keys are rejected.
ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv);

// ---- data -----------------------------------------------------------------

struct ImagePair {
  std::string name;
  ImageF32 low;
  ImageF32 gt;
};

class PairedDataset {
 public:
  PairedDataset() = default;
  explicit PairedDataset(std::vector<ImagePair> pairs);

  // root/low/*.png paired with root/gt/<same name>.
  static PairedDataset load(const std::string& root);

  std::size_t size() const { return pairs_.size(); }
  const ImagePair& operator[](std::size_t i) const { return pairs_[i]; }

 private:
  std::vector<ImagePair> pairs_;
};

// Reflect-pads both images up to `crop` if needed, then draws (in order) a
// row offset, a column offset, a horizontal flip and a vertical flip, and
// applies the same transform to both images.
std::pair<ImageF32, ImageF32> augment_pair(const ImageF32& low, const ImageF32& gt, int crop, Rng& rng);

// ---- optimization ---------------------------------------------------------

// Linear warmup over warmup_epochs, then cosine annealing to zero.
double lr_schedule(int epoch, const TrainConfig& cfg);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::int64_t step = 0;
};

// Decoupled decay p <- p - lr * wd * p, then the bias-corrected Adam update.
// A grad span may be empty (treated as zero); otherwise it must match the
// parameter size.
void adamw_step(std::span<Tensor* const> params, std::span<const std::span<const float>> grads, AdamWState& state,
                double lr, const AdamWOptions& opt);

// Convenience overload reading each parameter's accumulated grad.
void adamw_step(std::vector<NamedTensor>& params, AdamWState& state, double lr, const AdamWOptions& opt);

// ---- loss -----------------------------------------------------------------

// (pred, gt) -> non-negative scalar that participates in backward.
using PerceptualLoss = std::function<Tensor(const Tensor&, const Tensor&)>;

// l1_loss(pred, gt) + lambda * plugin(pred, gt). lambda > 0 without a
// plugin is a ConfigError; lambda == 0 returns the L1 term alone.
Tensor total_loss(const Tensor& pred, const Tensor& gt, double lambda, const PerceptualLoss& plugin = {});

// ---- loop -----------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
};

struct TrainHooks {
  PerceptualLoss perceptual;
  std::function<void(const EpochLog&)> on_epoch;
};

// Checkpoint metadata written by train(): model.*, preproc, residual_slot, epoch.
Metadata training_metadata(const TrainConfig& cfg, int epoch);

// Trains in place. When cfg.output_dir is set, writes
// checkpoint_epoch<N>.dwun every checkpoint_every epochs, final.dwun at the
// end (also for epochs == 0) and train_log.csv.
TrainResult train(const TrainConfig& cfg, const PairedDataset& data, DwUNet& model, const TrainHooks& hooks = {});

std::string train_log_csv(const std::vector<EpochLog>& log);

// ---- inference --------------------------------------------------------------

// Preprocess, run the network, clamp.
ImageF32 enhance(const DwUNet& model, const ImageF32& low, const PreprocPair& preproc, int residual_slot = 0);

// Mean PSNR (uint8) of enhance(low) against gt over the dataset.
double dataset_psnr(const DwUNet& model, const PairedDataset& data, const PreprocPair& preproc, int residual_slot = 0);

}  // namespace llie
