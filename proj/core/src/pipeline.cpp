#include "fundus/pipeline.hpp"

#include <fstream>
#include <map>
#include <ostream>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "fundus/error.hpp"
#include "text_util.hpp"

namespace fundus {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

RunPaths::RunPaths(const PipelineConfig& cfg) {
  data_dir = cfg.resolve(cfg.data_dir);
  manifest = data_dir / "manifest.csv";
  truth = data_dir / "truth.csv";
  split = cfg.work("split.csv");
  seg_dir = cfg.work("seg");
  probs_dir = cfg.work("probs");
  post_dir = cfg.work("post");
  post_results = post_dir / "results.csv";
  post_masks = post_dir / "masks";
  cls_dir = cfg.work("cls");
  screen_dir = cfg.work("screen");
  eval_dir = cfg.work("eval");
  activations_dir = cfg.work("activations");
}

fs::path RunPaths::seg_model(int c) const { return seg_dir / ("member_" + std::to_string(c) + "ch.fsw"); }
fs::path RunPaths::seg_log(int c) const { return seg_dir / ("member_" + std::to_string(c) + "ch_log.csv"); }
fs::path RunPaths::probs(const std::string& id) const { return probs_dir / (id + ".fsw"); }
fs::path RunPaths::post_mask(const std::string& id) const { return post_masks / (id + ".png"); }
fs::path RunPaths::cls_model(std::size_t i) const { return cls_dir / ("model_" + std::to_string(i) + ".fsw"); }
fs::path RunPaths::cls_log(std::size_t i) const { return cls_dir / ("model_" + std::to_string(i) + "_log.csv"); }
fs::path RunPaths::screen_report(const std::string& id) const { return screen_dir / (id + ".json"); }

std::string provenance(const PipelineConfig& cfg, std::uint64_t seed) {
  return "config=" + cfg.hash() + " seed=" + std::to_string(seed);
}

namespace {

std::map<std::string, std::uint64_t> seeds(const PipelineConfig& cfg) {
  return {{"data", cfg.data_seed}, {"split", cfg.split_seed}, {"segmentation", cfg.seg_seed},
          {"classification", cfg.cls_seed}};
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = detail::open_output(path);
  out << text;
  require(out.good(), ErrorCode::Io, "failed writing '" + path.string() + "'");
}

struct Dataset {
  DatasetManifest manifest;
  SplitSpec split;
};

Dataset load_dataset(const RunPaths& paths) {
  return {DatasetManifest::read(paths.manifest), SplitSpec::read(paths.split)};
}

std::vector<std::string> subset_ids(const Dataset& d, Subset subset) {
  if (subset == Subset::All) return d.manifest.ids();
  return d.split.ids(subset);
}

std::vector<SegSample> seg_samples(const PipelineConfig& cfg, const Dataset& d, const std::vector<std::string>& ids,
                                   SegVariant variant) {
  std::vector<SegSample> out;
  for (const auto& id : ids) {
    const auto& e = d.manifest.at(id);
    const FundusImage frame = square_crop_resize(load_image(d.manifest.image_path(e)), cfg.seg_input_size);
    const LabelMask mask = square_crop_resize(load_mask(d.manifest.mask_path(e)), cfg.seg_input_size);
    out.push_back({id, build_seg_stack(frame, variant, cfg.seg_clahe, cfg.grid_mode), mask});
  }
  return out;
}

std::vector<std::unique_ptr<SegNet>> load_seg_members(const PipelineConfig& cfg, const RunPaths& paths) {
  std::vector<std::unique_ptr<SegNet>> out;
  for (int c : cfg.seg_members) out.push_back(load_segnet(paths.seg_model(c)));
  return out;
}

std::vector<std::unique_ptr<Classifier>> load_classifiers(const PipelineConfig& cfg, const RunPaths& paths) {
  std::vector<std::unique_ptr<Classifier>> out;
  for (std::size_t i = 0; i < cfg.backbones.size(); ++i) out.push_back(load_classifier(paths.cls_model(i)));
  return out;
}

template <typename T>
std::vector<T*> raw(const std::vector<std::unique_ptr<T>>& v) {
  std::vector<T*> out;
  for (const auto& p : v) out.push_back(p.get());
  return out;
}

cv::Point2d disc_centroid(const LabelMask& mask) {
  const cv::Moments m = cv::moments(mask.disc_region(), true);
  require(m.m00 > 0, ErrorCode::NoDetection, "ground-truth mask has no disc");
  return {m.m10 / m.m00, m.m01 / m.m00};
}

std::vector<ClsSample> cls_samples(const PipelineConfig& cfg, const Dataset& d, const std::vector<std::string>& ids) {
  std::vector<ClsSample> out;
  for (const auto& id : ids) {
    const auto& e = d.manifest.at(id);
    const FundusImage img = load_image(d.manifest.image_path(e));
    const LabelMask mask = load_mask(d.manifest.mask_path(e));
    const Patch patch = extract_patch(img, disc_centroid(mask), cfg.patch_size);
    out.push_back({id, build_cls_stack(patch.image, cfg.cls_clahe, cfg.grid_mode), e.label});
  }
  return out;
}

FinalSegmentation from_record(const ResultRecord& r, const FundusImage& img) {
  FinalSegmentation s;
  s.disc = r.disc;
  s.cup = r.cup;
  s.cdr = r.cdr;
  s.geometry = CropGeometry::identity(img.width(), img.height());
  return s;
}

PostprocessResult segment_image(const PipelineConfig& cfg, const RunPaths& paths, const FundusImage& img) {
  const auto members = load_seg_members(cfg, paths);
  const auto ptrs = raw(members);
  const FundusImage frame = square_crop_resize(img, cfg.seg_input_size);
  const SegOutput probs = ensemble_segment(ptrs, frame, cfg.seg_clahe, cfg.grid_mode);
  return postprocess(probs, frame, cfg.postprocess_params());
}

ScreenReport screen_with_models(const PipelineConfig& cfg, std::span<Classifier* const> models,
                                const FundusImage& img, const FinalSegmentation& seg) {
  return screen(models, img, seg, cfg.screen_params());
}

}  // namespace

// ---------------------------------------------------------------------------

DatasetManifest run_synth(const PipelineConfig& cfg, std::ostream& log) {
  const RunPaths paths(cfg);
  auto m = generate_synthetic_fixture(cfg.synth_count, cfg.data_seed, cfg.synth_size, paths.data_dir);
  log << "synth: wrote " << m.size() << " fixtures to " << paths.data_dir.string() << '\n';
  return m;
}

SplitSpec run_split(const PipelineConfig& cfg, std::ostream& log) {
  const RunPaths paths(cfg);
  const auto manifest = DatasetManifest::read(paths.manifest);
  const SplitSpec s = stratified_split(manifest, cfg.split, cfg.split_seed);
  s.write(paths.split);
  for (Subset sub : {Subset::Train, Subset::Val, Subset::Test}) {
    const auto ids = s.ids(sub);
    int g = 0;
    for (const auto& id : ids) g += manifest.at(id).label == Diagnosis::Glaucoma;
    log << "split: " << (sub == Subset::Train ? "train" : sub == Subset::Val ? "val" : "test") << ' ' << ids.size()
        << " (" << g << " glaucoma, " << ids.size() - g << " healthy)\n";
  }
  return s;
}

void run_train_seg(const PipelineConfig& cfg, std::ostream& log) {
  const RunPaths paths(cfg);
  const Dataset d = load_dataset(paths);
  const SegTrainConfig tc = cfg.seg_train_config();
  for (int c : cfg.seg_members) {
    const SegVariant v = c == 5 ? SegVariant::CoordsOnly : SegVariant::CoordsClahe;
    const auto train = seg_samples(cfg, d, d.split.train_ids, v);
    const auto val = seg_samples(cfg, d, d.split.val_ids, v);
    auto model = build_segnet(SegNetConfig::from_preset(cfg.seg_preset, c, cfg.seg_seed));
    log << "train-seg: " << c << "-channel member, " << nn::count_parameters(*model) << " parameters, "
        << train.size() << " train / " << val.size() << " val\n";
    const auto result = train_segnet(*model, train, val, tc, [&](const SegEpochLog& e, SegNet&) {
      log << "  epoch " << e.epoch << " lr " << e.lr << " train " << e.train_loss << " val " << e.val_loss
          << " dice disc " << e.val_dice_disc << " cup " << e.val_dice_cup << '\n';
      return true;
    });
    save_segnet(paths.seg_model(c), model->config(), result.best_weights);
    write_seg_log(paths.seg_log(c), result, provenance(cfg, cfg.seg_seed));
    log << "  best epoch " << result.best_epoch << " -> " << paths.seg_model(c).string() << '\n';
  }
}

std::vector<std::string> run_infer_seg(const PipelineConfig& cfg, Subset subset, std::ostream& log) {
  const RunPaths paths(cfg);
  const Dataset d = load_dataset(paths);
  const auto members = load_seg_members(cfg, paths);
  const auto ptrs = raw(members);
  const auto ids = subset_ids(d, subset);
  for (const auto& id : ids) {
    const FundusImage frame =
        square_crop_resize(load_image(d.manifest.image_path(d.manifest.at(id))), cfg.seg_input_size);
    save_seg_output(paths.probs(id), ensemble_segment(ptrs, frame, cfg.seg_clahe, cfg.grid_mode), id);
  }
  log << "infer-seg: " << ids.size() << " probability maps in " << paths.probs_dir.string() << '\n';
  return ids;
}

std::vector<ResultRow> run_postprocess(const PipelineConfig& cfg, Subset subset, std::ostream& log) {
  const RunPaths paths(cfg);
  const Dataset d = load_dataset(paths);
  std::vector<ResultRow> rows;
  int failed = 0;
  for (const auto& id : subset_ids(d, subset)) {
    ResultRow row;
    row.id = id;
    try {
      const FundusImage img = load_image(d.manifest.image_path(d.manifest.at(id)));
      const FundusImage frame = square_crop_resize(img, cfg.seg_input_size);
      PostprocessResult r = postprocess(load_seg_output(paths.probs(id)), frame, cfg.postprocess_params());
      const LabelMask source = to_source_frame(r.seg.mask, r.seg.geometry);
      require(cv::countNonZero(source.cup_region() > source.disc_region()) == 0, ErrorCode::Contract,
              "final mask of '" + id + "' has cup outside disc");
      save_mask(source, paths.post_mask(id));
      row.result = std::move(r);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NotFound || e.code() == ErrorCode::Io) throw;
      row.status = e.what();
      ++failed;
      log << "postprocess: " << id << ": " << e.what() << '\n';
    }
    rows.push_back(std::move(row));
  }
  write_results_table(paths.post_results, rows);
  log << "postprocess: " << rows.size() - failed << " of " << rows.size() << " images fused -> "
      << paths.post_results.string() << '\n';
  return rows;
}

void run_train_cls(const PipelineConfig& cfg, std::ostream& log) {
  const RunPaths paths(cfg);
  const Dataset d = load_dataset(paths);
  const auto train = cls_samples(cfg, d, d.split.train_ids);
  const auto val = cls_samples(cfg, d, d.split.val_ids);
  const ClsTrainConfig tc = cfg.cls_train_config();
  for (std::size_t i = 0; i < cfg.backbones.size(); ++i) {
    BackboneSpec spec{cfg.backbones[i], cfg.weights_source, {}, cfg.cls_seed + i};
    if (cfg.weights_source == WeightsSource::ExternalFile) spec.weights_path = cfg.resolve(cfg.backbone_weights[i]);
    auto model = build_classifier(spec);
    log << "train-cls: " << to_string(spec.family) << ", " << nn::count_parameters(*model) << " parameters, "
        << train.size() << " train / " << val.size() << " val\n";
    const auto result = train_classifier(*model, train, val, tc, [&](const ClsEpochLog& e, Classifier&) {
      log << "  epoch " << e.epoch << " lr " << e.lr << " train " << e.train_loss << " acc " << e.train_accuracy
          << " val " << e.val_loss;
      if (e.val_auc) log << " auc " << *e.val_auc;
      log << '\n';
      return true;
    });
    save_classifier(paths.cls_model(i), spec, result.best_weights);
    write_cls_log(paths.cls_log(i), result, provenance(cfg, spec.seed));
    log << "  best epoch " << result.best_epoch << " by " << result.selection << " -> "
        << paths.cls_model(i).string() << '\n';
  }
}

std::vector<ScreenReport> run_screen(const PipelineConfig& cfg, Subset subset, std::ostream& log) {
  const RunPaths paths(cfg);
  const Dataset d = load_dataset(paths);
  std::map<std::string, ResultRecord> records;
  for (auto& r : read_results_table(paths.post_results)) records[r.id] = r;
  const auto models = load_classifiers(cfg, paths);
  const auto ptrs = raw(models);
  std::vector<ScreenReport> reports;
  std::string lines;
  for (const auto& id : subset_ids(d, subset)) {
    const auto it = records.find(id);
    if (it == records.end() || it->second.status != "ok") {
      log << "screen: " << id << ": no segmentation ("
          << (it == records.end() ? std::string("not postprocessed") : it->second.status) << ")\n";
      continue;
    }
    const FundusImage img = load_image(d.manifest.image_path(d.manifest.at(id)));
    ScreenReport r = screen_with_models(cfg, ptrs, img, from_record(it->second, img));
    const std::string json = screen_report_json(r, cfg);
    write_text(paths.screen_report(id), json + "\n");
    lines += json + "\n";
    reports.push_back(std::move(r));
  }
  write_text(paths.screen_dir / "reports.jsonl", lines);
  log << "screen: " << reports.size() << " reports in " << paths.screen_dir.string() << '\n';
  return reports;
}

ScreenReport run_screen_image(const PipelineConfig& cfg, const fs::path& image, std::ostream& log) {
  const RunPaths paths(cfg);
  const FundusImage img = load_image(image);
  PostprocessResult seg;
  try {
    seg = segment_image(cfg, paths, img);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoDetection && e.code() != ErrorCode::CdrUndefined) throw;
    fail(ErrorCode::Screening, "cannot screen '" + img.source_id() + "': " + e.what());
  }
  const auto models = load_classifiers(cfg, paths);
  ScreenReport r = screen_with_models(cfg, raw(models), img, seg.seg);
  write_text(paths.screen_report(r.id), screen_report_json(r, cfg) + "\n");
  log << "screen: " << r.id << " risk " << r.risk << " -> " << paths.screen_report(r.id).string() << '\n';
  return r;
}

MetricsReport run_evaluate(const PipelineConfig& cfg, Subset subset, std::ostream& log) {
  const RunPaths paths(cfg);
  const Dataset d = load_dataset(paths);
  std::map<std::string, ResultRecord> records;
  if (fs::exists(paths.post_results))
    for (auto& r : read_results_table(paths.post_results)) records[r.id] = r;

  std::vector<PerImageMetrics> rows;
  for (const auto& id : subset_ids(d, subset)) {
    const auto& e = d.manifest.at(id);
    const LabelMask truth = load_mask(d.manifest.mask_path(e));
    PerImageMetrics row;
    row.id = id;
    row.label = e.label;
    row.cdr_true = vertical_cdr(truth);
    const auto it = records.find(id);
    row.status = it == records.end() ? "not postprocessed" : it->second.status;
    LabelMask pred(truth.height(), truth.width());
    if (row.status == "ok") {
      pred = load_mask(paths.post_mask(id));
      row.cdr_pred = it->second.cdr;
    }
    row.dice_disc = dice(pred.disc_region(), truth.disc_region());
    row.dice_cup = dice(pred.cup_region(), truth.cup_region());
    if (fs::exists(paths.screen_report(id))) row.risk = read_screen_report(paths.screen_report(id)).risk;
    rows.push_back(row);
  }
  MetricsReport report = summarize(std::move(rows), cfg.target_specificity);
  report.subset = subset == Subset::Train ? "train" : subset == Subset::Val ? "val" : subset == Subset::Test ? "test" : "all";
  report.config_hash = cfg.hash();
  report.seeds = seeds(cfg);
  write_text(paths.eval_dir / "metrics.json", to_json(report));
  write_per_image_csv(paths.eval_dir / "per_image.csv", report);
  write_text(paths.eval_dir / "summary.txt", format_table(report));
  log << "evaluate: reports in " << paths.eval_dir.string() << '\n';
  return report;
}

std::vector<fs::path> run_dump_activations(const PipelineConfig& cfg, const fs::path& image, std::size_t model_index,
                                           std::ostream& log) {
  const RunPaths paths(cfg);
  require(model_index < cfg.backbones.size(), ErrorCode::Argument,
          "model index " + std::to_string(model_index) + " out of range (" + std::to_string(cfg.backbones.size()) +
              " classifiers)");
  const FundusImage img = load_image(image);
  const PostprocessResult seg = segment_image(cfg, paths, img);
  const Patch patch = extract_patch(img, seg.seg, cfg.patch_size);
  const ChannelStack stack = build_cls_stack(patch.image, cfg.cls_clahe, cfg.grid_mode);
  auto model = load_classifier(paths.cls_model(model_index));
  const auto files = dump_first_layer_activations(*model, stack, paths.activations_dir / img.source_id(),
                                                  img.source_id() + "_model" + std::to_string(model_index));
  log << "dump-activations: " << files.size() << " maps in " << (paths.activations_dir / img.source_id()).string()
      << '\n';
  return files;
}

std::string screen_report_json(const ScreenReport& r, const PipelineConfig& cfg) {
  ordered_json j;
  j["id"] = r.id;
  j["risk"] = r.risk;
  j["cdr"] = r.cdr;
  j["posteriors"] = r.posteriors;
  j["disc_center"] = {r.disc_center.x, r.disc_center.y};
  ordered_json models = ordered_json::array();
  for (auto f : cfg.backbones) models.push_back(to_string(f));
  j["models"] = models;
  j["patch_resized"] = r.patch_resized;
  j["config_hash"] = cfg.hash();
  j["seed"] = cfg.cls_seed;
  return j.dump();
}

ScreenReport read_screen_report(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::NotFound, "cannot open '" + path.string() + "'");
  ScreenReport r;
  try {
    const auto j = ordered_json::parse(in);
    r.id = j.at("id").get<std::string>();
    r.risk = j.at("risk").get<double>();
    r.cdr = j.at("cdr").get<double>();
    r.posteriors = j.at("posteriors").get<std::vector<std::array<double, kTenCrops>>>();
    const auto c = j.at("disc_center").get<std::vector<double>>();
    require(c.size() == 2, ErrorCode::Format, "disc_center needs two coordinates");
    r.disc_center = {c[0], c[1]};
    r.patch_resized = j.value("patch_resized", false);
  } catch (const ordered_json::exception& e) {
    fail(ErrorCode::Format, "'" + path.string() + "' is not a screen report: " + e.what());
  }
  return r;
}

}  // namespace fundus
