#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>

#include <llie/checkpoint.hpp>
#include <llie/config.hpp>
#include <llie/dist_stats.hpp>
#include <llie/errors.hpp>
#include <llie/folder.hpp>
#include <llie/image.hpp>
#include <llie/metrics.hpp>
#include <llie/preproc.hpp>
#include <llie/train.hpp>
#include <llie/unet.hpp>

namespace fs = std::filesystem;

namespace llie::cli {
namespace {

// A folder named on the command line that does not exist is a usage error,
// not a data error.
void require_dir(const std::string& flag, const std::string& path) {
  if (!fs::is_directory(path)) throw ConfigError(flag + ": no such directory: " + path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << text;
}

ModelConfig resolve_model_config(const std::string& what) {
  if (what == "tiny" || what == "mid" || what == "large") return ModelConfig::preset(what);
  if (!fs::is_regular_file(what))
    throw ConfigError("--config: '" + what + "' is neither a preset (tiny|mid|large) nor a readable file");
  const auto kv = read_key_value_file(what);
  static const std::set<std::string> model_keys = {"model",     "f1",          "n_blocks",    "expansion",
                                                   "gn_groups", "in_channels", "out_channels"};
  const bool model_only = std::all_of(kv.begin(), kv.end(), [](const auto& e) { return model_keys.count(e.first); });
  return model_only ? model_config_from_map(kv) : train_config_from_map(kv).model;
}

struct PreprocessArgs {
  std::string in, out, spec = "gamma:0.5";
};

int cmd_preprocess(const PreprocessArgs& a, std::ostream& out) {
  require_dir("--in", a.in);
  const PreprocessorKind p = parse_preprocessor(a.spec);
  validate(p);
  fs::create_directories(a.out);
  std::size_t n = 0;
  for (const auto& path : list_pngs(a.in)) {
    const ImageF32 img = to_f32(read_png(path.string()));
    write_png((fs::path(a.out) / path.filename()).string(), to_u8(apply_preprocessor(img, p)));
    ++n;
  }
  out << "preprocessed " << n << " images with " << to_spec(p) << "\n";
  return kOk;
}

struct StatsArgs {
  std::string in, spec, variant, csv;
  bool per_image = false;
};

int cmd_stats(const StatsArgs& a, std::ostream& out) {
  require_dir("--in", a.in);
  std::optional<PreprocessorKind> p;
  if (!a.spec.empty()) {
    p = parse_preprocessor(a.spec);
    validate(*p);
  }
  const FolderStats fsx = dataset_stats(a.in, p);
  std::string variant = a.variant;
  if (variant.empty()) variant = p ? to_spec(*p) : "raw";

  std::ostringstream os;
  os << stats_csv_header() << "\n" << stats_csv_row(variant, fsx.dataset) << "\n";
  if (a.per_image) {
    os << "filename,mu,sigma\n" << std::setprecision(10);
    for (std::size_t i = 0; i < fsx.filenames.size(); ++i)
      os << fsx.filenames[i] << ',' << fsx.per_image[i].mu << ',' << fsx.per_image[i].sigma << "\n";
  }
  if (!a.csv.empty()) write_text(a.csv, os.str());
  out << os.str();
  return kOk;
}

struct ParamsArgs {
  std::string config = "tiny";
  bool fp16_size = false;
};

int cmd_params(const ParamsArgs& a, std::ostream& out) {
  const ModelConfig cfg = resolve_model_config(a.config);
  cfg.validate();
  const DwUNet model = DwUNet::build(cfg, 0);
  const ParamTable table = count_params(model);
  std::size_t width = 5;
  for (const auto& r : table.rows) width = std::max(width, r.layer.size());
  for (const auto& r : table.rows) out << std::left << std::setw(int(width) + 2) << r.layer << r.count << "\n";
  out << std::left << std::setw(int(width) + 2) << "total" << table.total << "\n";
  if (a.fp16_size) {
    TrainConfig tc;
    tc.model = cfg;
    const std::size_t bytes = checkpoint_size(model, StorageType::F16, training_metadata(tc, 0));
    out << "fp16 checkpoint bytes: " << bytes << (bytes < 1000000 ? " (< 1 MB)" : " (>= 1 MB)") << "\n";
  }
  return kOk;
}

struct TrainArgs {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  bool deterministic = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = load_train_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.deterministic) cfg.deterministic = true;
  if (!a.data.empty()) cfg.data_root = a.data;
  if (!a.out.empty()) cfg.output_dir = a.out;
  cfg.validate();
  if (cfg.data_root.empty()) throw ConfigError("train: no data root (set data= in the config or pass --data)");
  require_dir("data", cfg.data_root);

  const PairedDataset data = PairedDataset::load(cfg.data_root);
  DwUNet model = DwUNet::build(cfg.model, cfg.seed);
  TrainHooks hooks;
  hooks.on_epoch = [&out](const EpochLog& e) {
    out << "epoch " << e.epoch << " loss " << std::setprecision(6) << e.loss << " lr " << e.lr << "\n";
  };
  const TrainResult r = train(cfg, data, model, hooks);
  out << "trained " << r.log.size() << " epochs on " << data.size() << " pairs";
  if (!cfg.output_dir.empty()) out << "; checkpoints in " << cfg.output_dir;
  out << "\n";
  return kOk;
}

struct EnhanceArgs {
  std::string ckpt, in, out, spec;
};

int cmd_enhance(const EnhanceArgs& a, std::ostream& out) {
  require_dir("--in", a.in);
  const Checkpoint ck = load_checkpoint(a.ckpt);
  if (ck.model.config().in_channels != 9)
    throw ConfigError("enhance: checkpoint " + a.ckpt + " is not a two-stage (9-channel) model");

  const auto stored = ck.metadata.find("preproc");
  PreprocPair pair;
  if (stored != ck.metadata.end()) {
    pair = parse_preproc_pair(stored->second);
    if (!a.spec.empty() && parse_preproc_pair(a.spec) != pair)
      throw ConfigError("enhance: preprocessor mismatch: checkpoint was trained with '" + stored->second +
                        "' but --preproc is '" + a.spec + "'");
  } else {
    if (a.spec.empty()) throw ConfigError("enhance: checkpoint records no preprocessor pair; pass --preproc");
    pair = parse_preproc_pair(a.spec);
  }
  int slot = 0;
  if (auto it = ck.metadata.find("residual_slot"); it != ck.metadata.end())
    slot = static_cast<int>(parse_integer("residual_slot", it->second));

  fs::create_directories(a.out);
  std::size_t n = 0;
  for (const auto& path : list_pngs(a.in)) {
    const ImageF32 low = to_f32(read_png(path.string()));
    write_png((fs::path(a.out) / path.filename()).string(), to_u8(enhance(ck.model, low, pair, slot)));
    ++n;
  }
  out << "enhanced " << n << " images with " << to_spec(pair) << "\n";
  return kOk;
}

struct EvalArgs {
  std::string pred, gt, csv, ssim_mode = "luma";
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  require_dir("--pred", a.pred);
  require_dir("--gt", a.gt);
  const SsimMode mode = a.ssim_mode == "channel-mean" ? SsimMode::ChannelMean : SsimMode::Luma;
  const MetricReport rep = evaluate_folder(a.pred, a.gt, mode);
  const std::string csv = rep.to_csv();
  if (!a.csv.empty()) write_text(a.csv, csv);
  out << csv;
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage low-light image enhancement"};
  app.name("llie");
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* sp = app.add_subcommand("preprocess", "Apply one classical preprocessor to a folder of PNGs");
  sp->add_option("--in", pre.in, "Input folder")->required();
  sp->add_option("--out", pre.out, "Output folder")->required();
  sp->add_option("--preproc", pre.spec, "gamma[:g] | he[:channel] | clahe[:clip[:tiles]] | ext:<ckpt>")
      ->capture_default_str();

  StatsArgs st;
  auto* ss = app.add_subcommand("stats", "Grayscale brightness/contrast statistics of a folder");
  ss->add_option("folder,--in", st.in, "Input folder")->required();
  ss->add_option("--preproc", st.spec, "Preprocessor applied before measuring");
  ss->add_option("--variant", st.variant, "Row label");
  ss->add_option("--csv", st.csv, "Also write the CSV here");
  ss->add_flag("--per-image", st.per_image, "Append per-image mu/sigma rows");

  ParamsArgs pa;
  auto* sa = app.add_subcommand("params", "Per-layer parameter table");
  sa->add_option("--config", pa.config, "tiny | mid | large | config file")->capture_default_str();
  sa->add_flag("--fp16-size", pa.fp16_size, "Print the projected fp16 checkpoint size");

  TrainArgs tr;
  std::uint64_t seed = 0;
  int epochs = 0;
  auto* stn = app.add_subcommand("train", "Train the enhancement network");
  stn->add_option("--config", tr.config, "key = value config file")->required();
  auto* seed_opt = stn->add_option("--seed", seed, "Overrides seed");
  auto* epochs_opt = stn->add_option("--epochs", epochs, "Overrides epochs");
  stn->add_option("--data", tr.data, "Overrides data (folder with low/ and gt/)");
  stn->add_option("--out", tr.out, "Overrides out (checkpoint folder)");
  stn->add_flag("--deterministic", tr.deterministic, "Force deterministic execution");

  EnhanceArgs en;
  auto* se = app.add_subcommand("enhance", "Run a trained checkpoint over a folder");
  se->add_option("--ckpt", en.ckpt, "Checkpoint file")->required();
  se->add_option("--in", en.in, "Low-light input folder")->required();
  se->add_option("--out", en.out, "Output folder")->required();
  se->add_option("--preproc", en.spec, "Preprocessor pair; must match the checkpoint");
  auto* seed_en = se->add_option("--seed", seed, "Accepted for uniformity; enhance draws no random numbers");
  se->add_flag("--deterministic", tr.deterministic, "Accepted for uniformity");
  (void)seed_en;

  EvalArgs ev;
  auto* sv = app.add_subcommand("eval", "PSNR/SSIM of predictions against ground truth");
  sv->add_option("--pred", ev.pred, "Prediction folder")->required();
  sv->add_option("--gt", ev.gt, "Ground-truth folder")->required();
  sv->add_option("--csv", ev.csv, "Also write the CSV here");
  sv->add_option("--ssim", ev.ssim_mode, "luma | channel-mean")
      ->check(CLI::IsMember({"luma", "channel-mean"}))
      ->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();  // delegates to the parsed subcommand
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "llie: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*sp) return cmd_preprocess(pre, out);
    if (*ss) return cmd_stats(st, out);
    if (*sa) return cmd_params(pa, out);
    if (*stn) {
      if (*seed_opt) tr.seed = seed;
      if (*epochs_opt) tr.epochs = epochs;
      return cmd_train(tr, out);
    }
    if (*se) return cmd_enhance(en, out);
    if (*sv) return cmd_eval(ev, out);
  } catch (const NumericError& e) {
    err << "llie: numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    err << "llie: data error: " << e.what() << "\n";
    return kData;
  } catch (const ConfigError& e) {
    err << "llie: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    err << "llie: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "llie: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace llie::cli
