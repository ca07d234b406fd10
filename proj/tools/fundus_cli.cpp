#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fundus/error.hpp"
#include "fundus/pipeline.hpp"

namespace fs = std::filesystem;
using namespace fundus;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

struct Options {
  std::string config;
  std::string subset = "test";
  std::string image;
  std::size_t model = 0;
  std::optional<int> count, size, epochs;
  std::optional<std::uint64_t> seed;
  std::string preset;
};

PipelineConfig load_config(const Options& o) {
  PipelineConfig cfg = o.config.empty() ? PipelineConfig::defaults(fs::current_path()) : PipelineConfig::load(o.config);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optic disc/cup segmentation and glaucoma screening pipeline"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::string> subsets = {"train", "val", "test", "all"};

  auto add = [&](const std::string& name, const std::string& help) {
    auto* sc = app.add_subcommand(name, help);
    sc->add_option("--config", o.config, "INI config file")->check(CLI::ExistingFile);
    return sc;
  };
  auto add_subset = [&](CLI::App* sc) {
    sc->add_option("--subset", o.subset, "train|val|test|all")->check(CLI::IsMember(subsets))->capture_default_str();
  };

  auto* synth = add("synth", "write the synthetic fixture dataset");
  synth->add_option("--count", o.count, "number of images")->check(CLI::Range(1, 100000));
  synth->add_option("--size", o.size, "image side length")->check(CLI::Range(64, 8192));
  synth->add_option("--seed", o.seed, "generator seed");
  auto* split = add("split", "stratified train/val/test split");
  auto* train_seg = add("train-seg", "train the segmentation ensemble members");
  train_seg->add_option("--preset", o.preset, "paper-57|tiny")->check(CLI::IsMember({"paper-57", "tiny"}));
  train_seg->add_option("--epochs", o.epochs, "epoch count")->check(CLI::PositiveNumber);
  auto* infer_seg = add("infer-seg", "ensemble probability maps");
  add_subset(infer_seg);
  auto* post = add("postprocess", "ellipse-regularized masks and CDR");
  add_subset(post);
  auto* train_cls = add("train-cls", "train the classifier ensemble");
  train_cls->add_option("--epochs", o.epochs, "epoch count")->check(CLI::PositiveNumber);
  auto* scr = add("screen", "glaucoma risk for a subset or one image");
  auto* scr_subset = scr->add_option("--subset", o.subset, "train|val|test|all")->check(CLI::IsMember(subsets));
  auto* scr_image = scr->add_option("--image", o.image, "fundus image file")->check(CLI::ExistingFile);
  scr_subset->excludes(scr_image);
  auto* eval = add("evaluate", "metrics report");
  add_subset(eval);
  auto* dump = add("dump-activations", "first-layer activation maps of one classifier");
  dump->add_option("--image", o.image, "fundus image file")->required()->check(CLI::ExistingFile);
  dump->add_option("--model", o.model, "classifier index")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << one_line(e.what()) << '\n';
    return kUsageError;
  }

  try {
    PipelineConfig cfg = load_config(o);
    if (o.count) cfg.synth_count = *o.count;
    if (o.size) cfg.synth_size = *o.size;
    if (o.seed) cfg.data_seed = *o.seed;
    if (!o.preset.empty()) cfg.seg_preset = parse_seg_preset(o.preset);
    if (o.epochs) (*train_seg ? cfg.seg_epochs : cfg.cls_epochs) = *o.epochs;
    cfg.validate();
    auto& log = std::cerr;

    if (*synth) {
      run_synth(cfg, log);
    } else if (*split) {
      run_split(cfg, log);
    } else if (*train_seg) {
      run_train_seg(cfg, log);
    } else if (*infer_seg) {
      run_infer_seg(cfg, parse_subset(o.subset), log);
    } else if (*post) {
      run_postprocess(cfg, parse_subset(o.subset), log);
    } else if (*train_cls) {
      run_train_cls(cfg, log);
    } else if (*scr) {
      if (!o.image.empty()) {
        std::cout << screen_report_json(run_screen_image(cfg, o.image, log), cfg) << '\n';
      } else {
        for (const auto& r : run_screen(cfg, parse_subset(o.subset), log))
          std::cout << screen_report_json(r, cfg) << '\n';
      }
    } else if (*eval) {
      const MetricsReport r = run_evaluate(cfg, parse_subset(o.subset), log);
      std::cout << format_table(r);
    } else if (*dump) {
      run_dump_activations(cfg, o.image, o.model, log);
    }
  } catch (const Error& e) {
    std::cerr << one_line(e.what()) << '\n';
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return kRuntimeError;
  }
  return 0;
}
