// lpv: train, evaluate and inspect the cascade recognizer on synthetic words.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lpv/diagnostics.hpp"
#include "lpv/pgm.hpp"
#include "lpv/run_config.hpp"

namespace fs = std::filesystem;
using namespace lpv;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kIo = 2, kNumerical = 3 };

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> stages;
  std::optional<std::size_t> glrm_layers;
  std::string mask;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::string checkpoint;
  std::string split;
  std::string csv;
  std::optional<std::size_t> index;
  std::string image;
  std::optional<std::size_t> samples;
};

// Built-in defaults, then the config file, then flags.
RunConfig resolve_config(const Flags& f) {
  RunConfig cfg;
  fs::path file = f.config;
  if (file.empty() && !f.checkpoint.empty()) {
    const fs::path beside = fs::path(f.checkpoint).parent_path() / "config.cfg";
    if (fs::exists(beside)) file = beside;
  }
  if (!file.empty()) apply_config(cfg, read_config_file(file));
  std::map<std::string, std::string> overrides;
  if (f.seed) overrides["seed"] = std::to_string(*f.seed);
  if (f.stages) overrides["stages"] = std::to_string(*f.stages);
  if (f.glrm_layers) overrides["glrm_layers"] = std::to_string(*f.glrm_layers);
  if (!f.mask.empty()) overrides["mask"] = f.mask;
  if (f.epochs) {
    overrides["epochs"] = std::to_string(*f.epochs);
    // Keep the schedule legal when the run is shortened.
    if (cfg.model.schedule.mask_on_epoch > *f.epochs) overrides["mask_on_epoch"] = std::to_string(*f.epochs);
  }
  if (f.lr) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", *f.lr);
    overrides["lr"] = buf;
  }
  apply_config(cfg, overrides);
  cfg.validate();
  return cfg;
}

bool inference_mask(const RunConfig& cfg) { return cfg.mask_mode != MaskMode::kOff; }

void print_stages(const std::string& title, const EvalResult& r) {
  std::printf("%s (%zu samples)\n", title.c_str(), r.samples);
  for (std::size_t s = 0; s < r.stages.size(); ++s) {
    std::printf("  stage %zu  seq_acc %.4f  char_acc %.4f  loss %.4f\n", s + 1, r.stages[s].seq_acc,
                r.stages[s].char_acc, r.stages[s].loss);
  }
}

std::vector<Sample> test_split(const RunConfig& cfg, const std::string& which) {
  auto clean = make_dataset(cfg.dataset_spec(), cfg.test_samples, Split::kTest, cfg.model.seed);
  if (which == "occluded") return occlude_dataset(clean, cfg.model.seed);
  return clean;
}

LpvModel load_model(const RunConfig& cfg, const std::string& checkpoint) {
  if (checkpoint.empty()) throw IoError("--checkpoint is required");
  LpvModel model(cfg.model);
  load_checkpoint(model, checkpoint);
  return model;
}

int cmd_train(const Flags& f) {
  const RunConfig cfg = resolve_config(f);
  const fs::path out = f.out.empty() ? fs::path("run") : fs::path(f.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  {
    std::ofstream cf(out / "config.cfg");
    if (!cf) throw IoError("cannot write " + (out / "config.cfg").string());
    cf << format_config(cfg);
  }
  const auto train_set = make_dataset(cfg.dataset_spec(), cfg.train_samples, Split::kTrain, cfg.model.seed);
  LpvModel model(cfg.model);
  std::printf("parameters: %zu\n", model.parameter_count());
  TrainOptions opts;
  opts.mask_mode = cfg.mask_mode;
  opts.metrics_csv = out / "metrics.csv";
  opts.checkpoint = out / "model.lpv";
  opts.on_epoch = [](const EpochMetrics& em) {
    std::printf("epoch %2zu  mask %-3s lr %.1e", em.epoch, em.mask_enabled ? "on" : "off", em.lr);
    for (const auto& s : em.stages) std::printf("  [loss %.4f seq %.3f]", s.loss, s.seq_acc);
    std::printf("\n");
    std::fflush(stdout);
  };
  train(model, train_set, opts);
  const auto result = evaluate(model, test_split(cfg, "clean"), inference_mask(cfg), cfg.eval_threads);
  print_stages("clean test split", result);
  return kOk;
}

int cmd_eval(const Flags& f) {
  const RunConfig cfg = resolve_config(f);
  const LpvModel model = load_model(cfg, f.checkpoint);
  std::vector<std::string> splits;
  if (f.split.empty()) splits = {"clean", "occluded"};
  else splits = {f.split};
  std::ofstream csv;
  if (!f.csv.empty()) {
    csv.open(f.csv);
    if (!csv) throw IoError("cannot write " + f.csv);
    csv << "split,stage,loss,seq_acc,char_acc\n";
  }
  for (const auto& split : splits) {
    const auto r = evaluate(model, test_split(cfg, split), inference_mask(cfg), cfg.eval_threads);
    print_stages(split + " test split", r);
    if (csv.is_open()) {
      for (std::size_t s = 0; s < r.stages.size(); ++s) {
        csv << split << ',' << s << ',' << r.stages[s].loss << ',' << r.stages[s].seq_acc << ',' << r.stages[s].char_acc
            << '\n';
      }
    }
  }
  return kOk;
}

int cmd_analyze(const Flags& f) {
  const RunConfig cfg = resolve_config(f);
  const LpvModel model = load_model(cfg, f.checkpoint);
  auto samples = test_split(cfg, f.split.empty() ? "clean" : f.split);
  if (f.samples && *f.samples < samples.size()) samples.resize(*f.samples);
  const auto report = analyze_similarity(model, samples, inference_mask(cfg));
  const fs::path out = f.out.empty() ? fs::path("similarity") : fs::path(f.out);
  write_similarity(report, out);
  for (std::size_t s = 0; s < report.max_variance.size(); ++s) {
    std::printf("stage %zu  gram variance %.6g  diagonal-is-row-max %.4f\n", s + 1, report.max_variance[s],
                report.diag_max_fraction[s]);
  }
  return kOk;
}

int cmd_dump_attention(const Flags& f) {
  const RunConfig cfg = resolve_config(f);
  const LpvModel model = load_model(cfg, f.checkpoint);
  Sample sample;
  if (!f.image.empty()) {
    const PgmImage img = read_pgm(f.image);
    if (img.height != cfg.model.backbone.img_h || img.width != cfg.model.backbone.img_w) {
      throw ShapeError("image " + f.image + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                       ", model expects " + std::to_string(cfg.model.backbone.img_w) + "x" +
                       std::to_string(cfg.model.backbone.img_h));
    }
    sample.h = img.height;
    sample.w = img.width;
    for (auto p : img.pixels) sample.image.push_back(static_cast<Real>(p) / 255);
  } else {
    const auto samples = test_split(cfg, f.split.empty() ? "clean" : f.split);
    const std::size_t idx = f.index.value_or(0);
    if (idx >= samples.size()) throw ConfigError("--index " + std::to_string(idx) + " is outside the test split");
    sample = samples[idx];
  }
  const fs::path out = f.out.empty() ? fs::path("attention") : fs::path(f.out);
  const auto dump = dump_attention(model, sample, out, inference_mask(cfg));
  for (std::size_t s = 0; s < dump.predictions.size(); ++s) {
    std::printf("stage %zu: %s\n", s + 1, dump.predictions[s].c_str());
  }
  std::printf("wrote %zu attention maps to %s\n", dump.files_written, out.string().c_str());
  return kOk;
}

int cmd_gen_data(const Flags& f) {
  const RunConfig cfg = resolve_config(f);
  auto samples = test_split(cfg, f.split.empty() ? "clean" : f.split);
  if (f.samples && *f.samples < samples.size()) samples.resize(*f.samples);
  const fs::path out = f.out.empty() ? fs::path("dataset") : fs::path(f.out);
  dump_dataset(samples, out);
  std::printf("wrote %zu images to %s\n", samples.size(), out.string().c_str());
  return kOk;
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key = value config file");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--stages", f.stages, "number of cascade stages N")->check(CLI::PositiveNumber);
  cmd->add_option("--glrm-layers", f.glrm_layers, "encoder layers per GLRM")->check(CLI::PositiveNumber);
  cmd->add_option("--mask", f.mask, "GLRM mask: on, off or schedule")->check(CLI::IsMember({"on", "off", "schedule"}));
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--lr", f.lr, "initial learning rate");
  cmd->add_option("--checkpoint", f.checkpoint, "model checkpoint");
  cmd->add_option("--split", f.split, "test split: clean or occluded")->check(CLI::IsMember({"clean", "occluded"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascade position attention text recognizer"};
  app.require_subcommand(1);
  Flags f;
  auto* train_cmd = app.add_subcommand("train", "train a model and write model.lpv + metrics.csv");
  auto* eval_cmd = app.add_subcommand("eval", "per-stage accuracy on the clean and occluded test splits");
  auto* analyze_cmd = app.add_subcommand("analyze", "query Gram-matrix similarity per stage and text length");
  auto* dump_cmd = app.add_subcommand("dump-attn", "write per-stage attention maps for one image");
  auto* gen_cmd = app.add_subcommand("gen-data", "dump the synthetic test split as PGM files");
  for (auto* cmd : {train_cmd, eval_cmd, analyze_cmd, dump_cmd, gen_cmd}) add_common(cmd, f);
  eval_cmd->add_option("--csv", f.csv, "also write results as CSV");
  analyze_cmd->add_option("--samples", f.samples, "limit the number of test images");
  dump_cmd->add_option("--index", f.index, "test-split sample index");
  dump_cmd->add_option("--image", f.image, "P5 PGM input instead of a test sample");
  gen_cmd->add_option("--samples", f.samples, "number of images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(f);
    if (*eval_cmd) return cmd_eval(f);
    if (*analyze_cmd) return cmd_analyze(f);
    if (*dump_cmd) return cmd_dump_attention(f);
    if (*gen_cmd) return cmd_gen_data(f);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
