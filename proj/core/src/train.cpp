#include "llie/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "llie/bridge.hpp"
#include "llie/config.hpp"
#include "llie/errors.hpp"
#include "llie/folder.hpp"
#include "llie/metrics.hpp"

namespace llie {

namespace fs = std::filesystem;

// ---- configuration --------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (!(lr_max >= 0.0)) fail("lr_max must be >= 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (warmup_epochs < 0) fail("warmup_epochs must be >= 0");
  if (crop < 1) fail("crop must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lambda_perceptual >= 0.0)) fail("lambda_perceptual must be >= 0");
  if (checkpoint_every < 1) fail("checkpoint_every must be >= 1");
  if (residual_slot < 0 || residual_slot > 2) fail("residual_slot must be 0, 1 or 2");
  if (model.in_channels != 9) fail("the training pipeline feeds 9 input channels; model.in_channels is " +
                                    std::to_string(model.in_channels));
  model.validate();
}

namespace {

void apply_model_key(ModelConfig& m, const std::string& k, const std::string& v) {
  auto as_int = [&] { return static_cast<int>(parse_integer(k, v)); };
  if (k == "f1") m.f1 = as_int();
  else if (k == "n_blocks") m.n_blocks = as_int();
  else if (k == "expansion") m.expansion = as_int();
  else if (k == "gn_groups") m.gn_groups = as_int();
  else if (k == "in_channels") m.in_channels = as_int();
  else if (k == "out_channels") m.out_channels = as_int();
  else throw ConfigError("unknown config key '" + k + "'");
}

bool is_model_key(const std::string& k) {
  return k == "f1" || k == "n_blocks" || k == "expansion" || k == "gn_groups" || k == "in_channels" ||
         k == "out_channels";
}

}  // namespace

ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig m;
  if (auto it = kv.find("model"); it != kv.end()) m = ModelConfig::preset(it->second);
  for (const auto& [k, v] : kv)
    if (k != "model") apply_model_key(m, k, v);
  m.validate();
  return m;
}

TrainConfig train_config_from_map(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  std::map<std::string, std::string> model_keys;
  for (const auto& [k, v] : kv) {
    if (k == "epochs") c.epochs = static_cast<int>(parse_integer(k, v));
    else if (k == "lr_max") c.lr_max = parse_double(k, v);
    else if (k == "weight_decay") c.weight_decay = parse_double(k, v);
    else if (k == "warmup_epochs") c.warmup_epochs = static_cast<int>(parse_integer(k, v));
    else if (k == "crop") c.crop = static_cast<int>(parse_integer(k, v));
    else if (k == "batch_size") c.batch_size = static_cast<int>(parse_integer(k, v));
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(parse_integer(k, v));
    else if (k == "lambda_perceptual") c.lambda_perceptual = parse_double(k, v);
    else if (k == "preproc") c.preproc = parse_preproc_pair(v);
    else if (k == "residual_slot") c.residual_slot = static_cast<int>(parse_integer(k, v));
    else if (k == "checkpoint_every") c.checkpoint_every = static_cast<int>(parse_integer(k, v));
    else if (k == "deterministic") c.deterministic = parse_bool(k, v);
    else if (k == "cache_preproc") c.cache_preproc = parse_bool(k, v);
    else if (k == "checkpoint_dtype") {
      if (v == "f32") c.checkpoint_storage = StorageType::F32;
      else if (v == "f16") c.checkpoint_storage = StorageType::F16;
      else throw ConfigError("config key 'checkpoint_dtype': expected f32 or f16, got '" + v + "'");
    } else if (k == "data") c.data_root = v;
    else if (k == "out") c.output_dir = v;
    else if (k == "model" || is_model_key(k)) model_keys[k] = v;
    else throw ConfigError("unknown config key '" + k + "'");
  }
  if (!model_keys.empty()) c.model = model_config_from_map(model_keys);
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) { return train_config_from_map(read_key_value_file(path)); }

// ---- data -----------------------------------------------------------------

PairedDataset::PairedDataset(std::vector<ImagePair> pairs) : pairs_(std::move(pairs)) {
  if (pairs_.empty()) throw DataError("paired dataset is empty");
  for (const auto& p : pairs_) {
    if (p.low.width != p.gt.width || p.low.height != p.gt.height || p.low.channels != 3 || p.gt.channels != 3)
      throw DataError("pair '" + p.name + "': low and gt must be RGB images of identical size");
  }
}

PairedDataset PairedDataset::load(const std::string& root) {
  const fs::path low_dir = fs::path(root) / "low";
  const fs::path gt_dir = fs::path(root) / "gt";
  std::vector<ImagePair> pairs;
  for (const auto& f : list_pngs(low_dir)) {
    const fs::path g = gt_dir / f.filename();
    if (!fs::exists(g)) throw DataError("no ground truth for " + f.string() + " (expected " + g.string() + ")");
    pairs.push_back({f.filename().string(), to_f32(read_png(f.string())), to_f32(read_png(g.string()))});
  }
  if (pairs.empty()) throw DataError("no PNG pairs under " + low_dir.string());
  return PairedDataset(std::move(pairs));
}

namespace {

std::int64_t reflect(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Reflect-pads (bottom / right) up to at least min_h x min_w.
ImageF32 pad_to(const ImageF32& img, int min_h, int min_w) {
  if (img.height >= min_h && img.width >= min_w) return img;
  const int h = std::max(img.height, min_h);
  const int w = std::max(img.width, min_w);
  ImageF32 out(w, h, img.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(x, y, c) = img.at(static_cast<int>(reflect(x, img.width)), static_cast<int>(reflect(y, img.height)), c);
  return out;
}

ImageF32 crop_flip(const ImageF32& img, int y0, int x0, int size, bool hflip, bool vflip) {
  ImageF32 out(size, size, img.channels);
  for (int y = 0; y < size; ++y) {
    const int sy = y0 + (vflip ? size - 1 - y : y);
    for (int x = 0; x < size; ++x) {
      const int sx = x0 + (hflip ? size - 1 - x : x);
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  }
  return out;
}

}  // namespace

std::pair<ImageF32, ImageF32> augment_pair(const ImageF32& low, const ImageF32& gt, int crop, Rng& rng) {
  if (low.width != gt.width || low.height != gt.height)
    throw ShapeError("augment_pair: low and gt differ in size");
  if (crop < 1) throw ConfigError("augment_pair: crop must be >= 1");
  const ImageF32 a = pad_to(low, crop, crop);
  const ImageF32 b = pad_to(gt, crop, crop);
  const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(a.height - crop + 1)));
  const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(a.width - crop + 1)));
  const bool hflip = rng.coin();
  const bool vflip = rng.coin();
  return {crop_flip(a, y0, x0, crop, hflip, vflip), crop_flip(b, y0, x0, crop, hflip, vflip)};
}

// ---- optimization ---------------------------------------------------------

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw ConfigError("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
  if (epoch < cfg.warmup_epochs) return cfg.lr_max * (epoch + 1) / cfg.warmup_epochs;
  const double span = cfg.epochs - cfg.warmup_epochs;
  return cfg.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * (epoch - cfg.warmup_epochs) / span));
}

void adamw_step(std::span<Tensor* const> params, std::span<const std::span<const float>> grads, AdamWState& state,
                double lr, const AdamWOptions& opt) {
  if (params.size() != grads.size())
    throw ShapeError("adamw_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p->numel()), 0.0f);
      state.v.emplace_back(static_cast<std::size_t>(p->numel()), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adamw_step: optimizer state tracks a different parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = static_cast<std::size_t>(params[i]->numel());
    if (state.m[i].size() != n) throw ShapeError("adamw_step: optimizer state size mismatch for parameter " + std::to_string(i));
    if (!grads[i].empty() && grads[i].size() != n)
      throw ShapeError("adamw_step: gradient " + std::to_string(i) + " has " + std::to_string(grads[i].size()) +
                       " values for a parameter of " + std::to_string(n));
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * opt.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g.empty() ? 0.0 : g[k];
      const double mk = opt.beta1 * m[k] + (1.0 - opt.beta1) * gk;
      const double vk = opt.beta2 * v[k] + (1.0 - opt.beta2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double mhat = mk / bc1;
      const double vhat = vk / bc2;
      p[k] = static_cast<float>(p[k] * decay - lr * mhat / (std::sqrt(vhat) + opt.eps));
    }
  }
}

void adamw_step(std::vector<NamedTensor>& params, AdamWState& state, double lr, const AdamWOptions& opt) {
  std::vector<Tensor*> ptrs;
  std::vector<std::span<const float>> grads;
  for (auto& p : params) {
    ptrs.push_back(&p.value);
    grads.push_back(p.value.grad());
  }
  adamw_step(ptrs, grads, state, lr, opt);
}

// ---- loss -----------------------------------------------------------------

Tensor total_loss(const Tensor& pred, const Tensor& gt, double lambda, const PerceptualLoss& plugin) {
  if (lambda < 0.0) throw ConfigError("perceptual loss weight must be >= 0");
  if (lambda > 0.0 && !plugin) throw ConfigError("perceptual loss weight > 0 but no perceptual loss plugin is registered");
  Tensor loss = l1_loss(pred, gt);
  if (lambda > 0.0) loss = add(loss, mul_scalar(plugin(pred, gt), static_cast<float>(lambda)));
  return loss;
}

// ---- loop -----------------------------------------------------------------

Metadata training_metadata(const TrainConfig& cfg, int epoch) {
  Metadata meta = model_metadata(cfg.model);
  meta["preproc"] = to_spec(cfg.preproc);
  meta["residual_slot"] = std::to_string(cfg.residual_slot);
  meta["epoch"] = std::to_string(epoch);
  return meta;
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,loss,lr,seconds\n";
  for (const auto& e : log) os << e.epoch << ',' << e.loss << ',' << e.lr << ',' << e.seconds << '\n';
  return os.str();
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const PairedDataset& data, DwUNet& model, const TrainHooks& hooks) {
  cfg.validate();
  if (!(model.config() == cfg.model))
    throw ConfigError("train: model architecture does not match the training config");
  if (data.size() == 0) throw DataError("train: empty dataset");
  if (cfg.lambda_perceptual > 0.0 && !hooks.perceptual)
    throw ConfigError("lambda_perceptual > 0 requires a perceptual loss plugin");

  const bool write = !cfg.output_dir.empty();
  if (write) fs::create_directories(cfg.output_dir);
  auto save = [&](const std::string& file, int epoch) {
    save_checkpoint(model, (fs::path(cfg.output_dir) / file).string(), cfg.checkpoint_storage,
                    training_metadata(cfg, epoch));
  };

  TrainResult result;
  if (cfg.epochs == 0) {
    if (write) {
      save("final.dwun", 0);
      write_text(fs::path(cfg.output_dir) / "train_log.csv", train_log_csv(result.log));
    }
    return result;
  }

  std::vector<ImageF32> cache;
  auto nine_channel = [&](std::size_t i) -> ImageF32 {
    if (!cache.empty()) return cache[i];
    return assemble_nine_channel(data[i].low, cfg.preproc).stacked();
  };
  if (cfg.cache_preproc)
    for (std::size_t i = 0; i < data.size(); ++i) cache.push_back(assemble_nine_channel(data[i].low, cfg.preproc).stacked());

  Rng rng(cfg.seed);
  AdamWState opt_state;
  const AdamWOptions opt{0.9, 0.999, 1e-8, cfg.weight_decay};
  model.set_requires_grad(true);
  std::vector<std::size_t> order(data.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_schedule(epoch, cfg);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<ImageF32> inputs, targets;
      for (std::size_t k = start; k < stop; ++k) {
        auto [x, y] = augment_pair(nine_channel(order[k]), data[order[k]].gt, cfg.crop, rng);
        inputs.push_back(std::move(x));
        targets.push_back(std::move(y));
      }
      const Tensor x = images_to_tensor(inputs);
      const Tensor y = images_to_tensor(targets);

      model.zero_grad();
      const Tensor pred = model.forward(x, cfg.residual_slot);
      const Tensor loss = total_loss(pred, y, cfg.lambda_perceptual, hooks.perceptual);
      const float value = loss.item();
      if (!std::isfinite(value)) {
        clear_graph();
        std::string idx;
        for (std::size_t k = start; k < stop; ++k) idx += (idx.empty() ? "" : ",") + std::to_string(order[k]);
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " in batch of samples [" + idx + "]");
      }
      backward(loss);
      adamw_step(model.parameters(), opt_state, lr, opt);
      loss_sum += static_cast<double>(value) * static_cast<double>(stop - start);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = loss_sum / static_cast<double>(order.size());
    entry.lr = lr;
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(entry);
    if (hooks.on_epoch) hooks.on_epoch(entry);
    if (write && (epoch + 1) % cfg.checkpoint_every == 0) save("checkpoint_epoch" + std::to_string(epoch + 1) + ".dwun", epoch + 1);
  }
  model.zero_grad();
  if (write) {
    save("final.dwun", cfg.epochs);
    write_text(fs::path(cfg.output_dir) / "train_log.csv", train_log_csv(result.log));
  }
  return result;
}

// ---- inference --------------------------------------------------------------

ImageF32 enhance(const DwUNet& model, const ImageF32& low, const PreprocPair& preproc, int residual_slot) {
  const ImageF32 nine = assemble_nine_channel(low, preproc).stacked();
  return tensor_to_image(model.infer(image_to_tensor(nine), residual_slot));
}

double dataset_psnr(const DwUNet& model, const PairedDataset& data, const PreprocPair& preproc, int residual_slot) {
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    acc += psnr(to_u8(enhance(model, data[i].low, preproc, residual_slot)), to_u8(data[i].gt));
  return acc / static_cast<double>(data.size());
}

}  // namespace llie
