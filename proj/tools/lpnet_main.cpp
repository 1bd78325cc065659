// Command-line front end: synthetic data generation, training, evaluation,
// inference and metrics reporting.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lpnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace lpnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct CommonOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::vector<int> scales;
};

Config load_effective_config(const CommonOpts& opts) {
  Config cfg;
  if (!opts.config_path.empty()) cfg = load_config_file(opts.config_path);
  if (opts.seed) {
    cfg.train.seed = *opts.seed;
    cfg.model.init_seed = *opts.seed;
  }
  if (!opts.scales.empty()) cfg.eval.scales = opts.scales;
  return cfg;
}

int run_gen_data(const CommonOpts& opts, const std::string& out_dir, int count,
                 const std::string& group) {
  Config cfg = load_effective_config(opts);
  cfg.synth.validate_against_anchors(cfg.model.anchor);
  const uint64_t base_seed = opts.seed.value_or(cfg.train.seed);
  std::vector<PlateSample> samples;
  samples.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    uint64_t sample_seed = mix_seed(base_seed, uint64_t(i));
    // a rejected composition retries with follow-up seeds
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 50)
        throw DataError("gen-data: scene config rejected 50 seeds in a row");
      try {
        PlateSample s = compose_scene(cfg.synth, sample_seed);
        s.group = group;
        samples.push_back(std::move(s));
        break;
      } catch (const SampleRejected&) {
        sample_seed = mix_seed(sample_seed, 0x9e37);
      }
    }
  }
  const std::string manifest = write_dataset(out_dir, samples);
  std::cout << "wrote " << samples.size() << " samples, manifest " << manifest << "\n";
  return kExitOk;
}

template <typename T>
int run_train_typed(const Config& cfg, const std::string& manifest,
                    const std::string& out_dir) {
  TrainRunSummary s = run_training<T>(cfg, manifest, out_dir);
  std::cout << "trained " << s.completed_iterations << " iterations, final checkpoint "
            << s.final_checkpoint << "\n";
  return kExitOk;
}

int run_train(const CommonOpts& opts, const std::string& manifest,
              const std::string& out_dir, std::optional<int> iterations,
              const std::string& precision) {
  Config cfg = load_effective_config(opts);
  if (iterations) cfg.train.iterations = *iterations;
  if (!precision.empty()) cfg.train.precision = precision;
  cfg.train.validate();
  if (cfg.train.precision == "f64") return run_train_typed<double>(cfg, manifest, out_dir);
  return run_train_typed<float>(cfg, manifest, out_dir);
}

template <typename T>
ManifestEvaluation eval_typed(const std::string& checkpoint, const std::string& manifest,
                              const EvalConfig& ec) {
  auto [model, iteration] = PlateModel<T>::load(checkpoint);
  (void)iteration;
  return evaluate_manifest(model, manifest, ec);
}

std::string checkpoint_precision(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  std::string precision;
  parse_checkpoint_header(ck.header_json, nullptr, nullptr, &precision);
  return precision;
}

int run_eval(const CommonOpts& opts, const std::string& checkpoint,
             const std::string& manifest, const std::string& protocol,
             const std::string& out_csv, const std::string& selection) {
  if (protocol != "end2end" && protocol != "detect")
    throw CLI::ValidationError("--protocol must be end2end or detect");
  Config cfg = load_effective_config(opts);
  if (!selection.empty()) cfg.eval.selection = selection;
  cfg.eval.validate();
  ManifestEvaluation ev = checkpoint_precision(checkpoint) == "f32"
                              ? eval_typed<float>(checkpoint, manifest, cfg.eval)
                              : eval_typed<double>(checkpoint, manifest, cfg.eval);
  std::cout << metrics_to_text(ev.metrics, protocol);
  if (!out_csv.empty()) {
    std::ofstream os(out_csv, std::ios::trunc);
    if (!os) throw DataError("eval: cannot open " + out_csv);
    os << metrics_to_csv(ev.metrics, protocol);
  }
  return kExitOk;
}

void draw_box_outline(ImageU8& img, const Box& b) {
  const int x1 = std::max(0, int(b.x1)), y1 = std::max(0, int(b.y1));
  const int x2 = std::min(img.width - 1, int(b.x2)), y2 = std::min(img.height - 1, int(b.y2));
  for (int x = x1; x <= x2; ++x)
    for (int y : {y1, y2}) {
      img.at(x, y, 0) = 255;
      img.at(x, y, 1) = 32;
      img.at(x, y, 2) = 32;
    }
  for (int y = y1; y <= y2; ++y)
    for (int x : {x1, x2}) {
      img.at(x, y, 0) = 255;
      img.at(x, y, 1) = 32;
      img.at(x, y, 2) = 32;
    }
}

template <typename T>
int infer_typed(const Config& cfg, const std::string& checkpoint,
                const std::vector<std::string>& images, const std::string& annotate_dir,
                bool primary_only) {
  auto [model, iteration] = PlateModel<T>::load(checkpoint);
  (void)iteration;
  for (const auto& path : images) {
    ImageU8 img = read_ppm(path);
    std::vector<Detection> dets = infer_image(model, img, cfg.eval);
    if (primary_only) {
      auto primary = select_primary_plate(dets);
      dets.clear();
      if (primary) dets.push_back(*primary);
    }
    for (const auto& d : dets) {
      char line[512];
      std::snprintf(line, sizeof(line), "%s %.2f %.2f %.2f %.2f %.6f %s %.6f",
                    path.c_str(), d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.score,
                    d.label.empty() ? "-" : d.label.c_str(), d.label_score);
      std::cout << line << "\n";
    }
    if (!annotate_dir.empty()) {
      fs::create_directories(annotate_dir);
      ImageU8 annotated = img;
      for (const auto& d : dets) draw_box_outline(annotated, d.box);
      write_ppm((fs::path(annotate_dir) / fs::path(path).filename()).string(),
                annotated);
    }
  }
  return kExitOk;
}

int run_infer(const CommonOpts& opts, const std::string& checkpoint,
              const std::vector<std::string>& images, const std::string& annotate_dir,
              bool primary_only) {
  Config cfg = load_effective_config(opts);
  if (checkpoint_precision(checkpoint) == "f32")
    return infer_typed<float>(cfg, checkpoint, images, annotate_dir, primary_only);
  return infer_typed<double>(cfg, checkpoint, images, annotate_dir, primary_only);
}

int run_report(const std::string& metrics_path, const std::string& out_csv) {
  std::ifstream is(metrics_path);
  if (!is) throw DataError("report: cannot open " + metrics_path);
  std::ostringstream csv;
  csv << "iteration,total,rpn_cls,rpn_reg,det_cls,det_reg,rec,lr_fresh,lr_pretrain,ms\n";
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("report: " + metrics_path + " line " + std::to_string(line_no) +
                      ": " + e.what());
    }
    csv << j.value("it", int64_t(0)) << "," << j.value("total", 0.0) << ","
        << j.value("rpn_cls", 0.0) << "," << j.value("rpn_reg", 0.0) << ","
        << j.value("det_cls", 0.0) << "," << j.value("det_reg", 0.0) << ","
        << j.value("rec", 0.0) << "," << j.value("lr_fresh", 0.0) << ","
        << j.value("lr_pretrain", 0.0) << "," << j.value("ms", 0.0) << "\n";
  }
  if (out_csv.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream os(out_csv, std::ios::trunc);
    if (!os) throw DataError("report: cannot open " + out_csv);
    os << csv.str();
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint license plate detection and recognition"};
  app.require_subcommand(1);

  CommonOpts common;
  app.add_option("--config", common.config_path, "JSON config file");
  uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "run seed");
  app.add_option("--scales", common.scales, "inference shorter-side scales");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_out = "dataset";
  int gen_count = 100;
  std::string gen_group = "all";
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--count", gen_count, "number of samples")->check(CLI::NonNegativeNumber);
  gen->add_option("--group", gen_group, "group tag recorded per sample");

  auto* train = app.add_subcommand("train", "train from a manifest");
  std::string train_manifest, train_out = "run";
  std::optional<int> train_iterations;
  std::string train_precision;
  train->add_option("--manifest", train_manifest, "dataset manifest")->required();
  train->add_option("--out", train_out, "run directory");
  train->add_option("--iterations", train_iterations, "override iteration count");
  train->add_option("--precision", train_precision, "f32 or f64");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string eval_ckpt, eval_manifest, eval_protocol = "end2end", eval_csv;
  std::string eval_selection;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval_cmd->add_option("--protocol", eval_protocol, "end2end or detect");
  eval_cmd->add_option("--out-csv", eval_csv, "write the metrics table as CSV");
  eval_cmd->add_option("--selection", eval_selection, "primary or all");

  auto* infer_cmd = app.add_subcommand("infer", "detect and read plates in images");
  std::string infer_ckpt, infer_annotate;
  std::vector<std::string> infer_images;
  bool infer_primary = false;
  infer_cmd->add_option("--checkpoint", infer_ckpt, "model checkpoint")->required();
  infer_cmd->add_option("images", infer_images, "PPM images")->required();
  infer_cmd->add_option("--annotate", infer_annotate, "write annotated copies here");
  infer_cmd->add_flag("--primary", infer_primary, "apply the single-plate selection rule");

  auto* report = app.add_subcommand("report", "metrics log to loss-curve CSV");
  std::string report_metrics, report_csv;
  report->add_option("--metrics", report_metrics, "metrics.jsonl from a run")->required();
  report->add_option("--out-csv", report_csv, "output CSV (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  if (seed_opt->count() > 0) common.seed = seed_value;

  try {
    if (gen->parsed()) return run_gen_data(common, gen_out, gen_count, gen_group);
    if (train->parsed())
      return run_train(common, train_manifest, train_out, train_iterations,
                       train_precision);
    if (eval_cmd->parsed())
      return run_eval(common, eval_ckpt, eval_manifest, eval_protocol, eval_csv,
                      eval_selection);
    if (infer_cmd->parsed())
      return run_infer(common, infer_ckpt, infer_images, infer_annotate, infer_primary);
    if (report->parsed()) return run_report(report_metrics, report_csv);
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
