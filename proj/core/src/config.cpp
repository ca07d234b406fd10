#include "fundus/config.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include "fundus/error.hpp"
#include "text_util.hpp"

namespace fundus {

namespace {

using Setter = std::function<void(PipelineConfig&, const std::string&)>;
using Getter = std::function<std::string(const PipelineConfig&)>;

struct Field {
  std::string key;
  Setter set;
  Getter get;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == v.size() && !v.empty(), ErrorCode::Config, key + ": '" + v + "' is not a number");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == v.size() && !v.empty(), ErrorCode::Config, key + ": '" + v + "' is not an integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorCode::Config, key + ": '" + v + "' is not a boolean");
}

std::vector<std::string> list(const std::string& v) {
  std::vector<std::string> out;
  for (auto& s : detail::split(v, ',')) {
    const auto t = detail::trim(s);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + f(items[i]);
  return out;
}

#define FIELD_INT(KEY, MEMBER)                                                                   \
  Field {                                                                                        \
    KEY, [](PipelineConfig& c, const std::string& v) { c.MEMBER = static_cast<decltype(c.MEMBER)>(to_int(KEY, v)); }, \
        [](const PipelineConfig& c) { return std::to_string(c.MEMBER); }                         \
  }
#define FIELD_DOUBLE(KEY, MEMBER)                                                        \
  Field {                                                                                \
    KEY, [](PipelineConfig& c, const std::string& v) { c.MEMBER = to_double(KEY, v); }, \
        [](const PipelineConfig& c) { return fmt(c.MEMBER); }                            \
  }
#define FIELD_PATH(KEY, MEMBER)                                                                 \
  Field {                                                                                       \
    KEY, [](PipelineConfig& c, const std::string& v) { c.MEMBER = std::filesystem::path(v); }, \
        [](const PipelineConfig& c) { return c.MEMBER.generic_string(); }                       \
  }

std::string lr_decay_name(nn::PlateauDecay d) { return d == nn::PlateauDecay::TenPercent ? "x0.9" : "x0.1"; }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      FIELD_PATH("paths.work_dir", work_dir),
      FIELD_PATH("paths.data_dir", data_dir),

      FIELD_INT("data.synth_count", synth_count),
      FIELD_INT("data.synth_size", synth_size),
      FIELD_INT("data.seed", data_seed),
      FIELD_INT("data.split_seed", split_seed),
      FIELD_DOUBLE("data.split_train", split.train),
      FIELD_DOUBLE("data.split_val", split.val),
      FIELD_DOUBLE("data.split_test", split.test),

      {"segmentation.preset", [](PipelineConfig& c, const std::string& v) { c.seg_preset = parse_seg_preset(v); },
       [](const PipelineConfig& c) { return to_string(c.seg_preset); }},
      FIELD_INT("segmentation.input_size", seg_input_size),
      {"segmentation.members",
       [](PipelineConfig& c, const std::string& v) {
         c.seg_members.clear();
         for (const auto& s : list(v)) c.seg_members.push_back(seg_variant_channels(parse_seg_variant(s)));
       },
       [](const PipelineConfig& c) {
         return join<int>(c.seg_members, [](const int& n) { return std::to_string(n); });
       }},
      FIELD_INT("segmentation.epochs", seg_epochs),
      FIELD_INT("segmentation.batch_size", seg_batch_size),
      FIELD_DOUBLE("segmentation.lr0", seg_lr0),
      {"segmentation.lr_decay",
       [](PipelineConfig& c, const std::string& v) {
         if (v == "x0.9")
           c.lr_decay = nn::PlateauDecay::TenPercent;
         else if (v == "x0.1")
           c.lr_decay = nn::PlateauDecay::TenFold;
         else
           fail(ErrorCode::Config, "segmentation.lr_decay: '" + v + "' (x0.9|x0.1)");
       },
       [](const PipelineConfig& c) { return lr_decay_name(c.lr_decay); }},
      FIELD_INT("segmentation.plateau_patience", plateau_patience),
      FIELD_DOUBLE("segmentation.plateau_threshold", plateau_threshold),
      {"segmentation.augment", [](PipelineConfig& c, const std::string& v) { c.augment = to_bool("segmentation.augment", v); },
       [](const PipelineConfig& c) { return std::string(c.augment ? "true" : "false"); }},
      FIELD_DOUBLE("segmentation.rotation_range", rotation_range),
      FIELD_DOUBLE("segmentation.flip_probability", flip_probability),
      FIELD_INT("segmentation.seed", seg_seed),

      {"clahe.grid_mode", [](PipelineConfig& c, const std::string& v) { c.grid_mode = parse_grid_mode(v); },
       [](const PipelineConfig& c) { return to_string(c.grid_mode); }},
      {"clahe.segmentation", [](PipelineConfig& c, const std::string& v) { c.seg_clahe = parse_clahe_list(v); },
       [](const PipelineConfig& c) { return format_clahe_list(c.seg_clahe); }},
      {"clahe.classification", [](PipelineConfig& c, const std::string& v) { c.cls_clahe = parse_clahe_list(v); },
       [](const PipelineConfig& c) { return format_clahe_list(c.cls_clahe); }},

      FIELD_DOUBLE("postprocess.median_fraction", rough.median_fraction),
      FIELD_DOUBLE("postprocess.percentile", rough.percentile),
      FIELD_DOUBLE("postprocess.closing_fraction", rough.closing_fraction),
      {"postprocess.keep_largest",
       [](PipelineConfig& c, const std::string& v) { c.rough.keep_largest = to_bool("postprocess.keep_largest", v); },
       [](const PipelineConfig& c) { return std::string(c.rough.keep_largest ? "true" : "false"); }},
      FIELD_DOUBLE("postprocess.dilation_fraction", rough.dilation_fraction),
      {"postprocess.ellipse_mode", [](PipelineConfig& c, const std::string& v) { c.ellipse_mode = parse_ellipse_mode(v); },
       [](const PipelineConfig& c) { return to_string(c.ellipse_mode); }},

      {"classification.backbones",
       [](PipelineConfig& c, const std::string& v) {
         c.backbones.clear();
         for (const auto& s : list(v)) c.backbones.push_back(parse_backbone_family(s));
       },
       [](const PipelineConfig& c) {
         return join<BackboneFamily>(c.backbones, [](const BackboneFamily& f) { return to_string(f); });
       }},
      {"classification.weights_source",
       [](PipelineConfig& c, const std::string& v) { c.weights_source = parse_weights_source(v); },
       [](const PipelineConfig& c) { return to_string(c.weights_source); }},
      {"classification.backbone_weights",
       [](PipelineConfig& c, const std::string& v) {
         c.backbone_weights.clear();
         for (const auto& s : list(v)) c.backbone_weights.emplace_back(s);
       },
       [](const PipelineConfig& c) {
         return join<std::filesystem::path>(c.backbone_weights,
                                            [](const std::filesystem::path& p) { return p.generic_string(); });
       }},
      FIELD_INT("classification.patch_size", patch_size),
      FIELD_INT("classification.crop_size", crop_size),
      FIELD_INT("classification.epochs", cls_epochs),
      FIELD_INT("classification.batch_size", cls_batch_size),
      FIELD_DOUBLE("classification.lr0", cls_lr0),
      FIELD_INT("classification.step_epochs", step_epochs),
      FIELD_DOUBLE("classification.step_gamma", step_gamma),
      FIELD_INT("classification.seed", cls_seed),

      FIELD_DOUBLE("screening.target_specificity", target_specificity),
  };
  return f;
}

}  // namespace

const std::vector<std::string>& PipelineConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return k;
}

PipelineConfig PipelineConfig::defaults(const std::filesystem::path& base_dir) {
  PipelineConfig c;
  c.base_dir = base_dir;
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& ini_path) {
  require(std::filesystem::exists(ini_path), ErrorCode::NotFound, "config '" + ini_path.string() + "' not found");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(ini_path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorCode::Config, "cannot parse '" + ini_path.string() + "': " + e.message() + " (line " +
                                std::to_string(e.line()) + ")");
  }
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;

  PipelineConfig c = defaults(std::filesystem::absolute(ini_path).parent_path());
  for (const auto& [section, body] : tree) {
    require(body.data().empty(), ErrorCode::Config,
            "key '" + section + "' must live inside a [section]");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = by_key.find(full);
      require(it != by_key.end(), ErrorCode::Config, "unknown config key '" + full + "'");
      it->second->set(c, detail::trim(value.data()));
    }
  }
  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  const auto positive = [](bool ok, const std::string& what) {
    require(ok, ErrorCode::Config, what + " must be positive");
  };
  positive(synth_count >= 1, "data.synth_count");
  require(synth_size >= 128, ErrorCode::Config, "data.synth_size must be at least 128");
  positive(split.train > 0 && split.val > 0 && split.test > 0, "data split ratios");
  require(std::abs(split.train + split.val + split.test - 1.0) <= 1e-9, ErrorCode::Config,
          "data split ratios must sum to 1");
  require(seg_input_size >= 32, ErrorCode::Config, "segmentation.input_size must be at least 32");
  require(!seg_members.empty(), ErrorCode::Config, "segmentation.members is empty");
  positive(seg_epochs >= 1 && seg_batch_size >= 1 && seg_lr0 > 0 && plateau_patience >= 1 && plateau_threshold >= 0,
           "segmentation schedule values");
  require(rotation_range >= 0 && rotation_range <= 360, ErrorCode::Config,
          "segmentation.rotation_range must lie in [0, 360]");
  require(flip_probability >= 0 && flip_probability <= 1, ErrorCode::Config,
          "segmentation.flip_probability must lie in [0, 1]");
  require(rough.percentile > 0 && rough.percentile <= 100, ErrorCode::Config,
          "postprocess.percentile must lie in (0, 100]");
  positive(rough.median_fraction > 0, "postprocess.median_fraction");
  require(rough.closing_fraction >= 0 && rough.dilation_fraction >= 0, ErrorCode::Config,
          "postprocess fractions must be non-negative");
  require(ellipse_mode == EllipseMode::BoundaryLsq, ErrorCode::Config,
          "postprocess.ellipse_mode 'max_inscribed' is reserved and not implemented");
  require(!backbones.empty(), ErrorCode::Config, "classification.backbones is empty");
  if (weights_source == WeightsSource::ExternalFile)
    require(backbone_weights.size() == backbones.size(), ErrorCode::Config,
            "classification.backbone_weights needs one file per backbone");
  require(crop_size >= 1 && patch_size >= crop_size && patch_size >= FundusImage::kMinSide, ErrorCode::Config,
          "classification sizes need 64 <= patch_size and crop_size <= patch_size");
  positive(cls_epochs >= 1 && cls_batch_size >= 1 && cls_lr0 > 0 && step_epochs >= 1 && step_gamma > 0,
           "classification schedule values");
  require(target_specificity >= 0 && target_specificity <= 1, ErrorCode::Config,
          "screening.target_specificity must lie in [0, 1]");
}

std::string PipelineConfig::canonical() const {
  std::vector<std::pair<std::string, std::string>> kv;
  for (const auto& f : fields()) kv.emplace_back(f.key, f.get(*this));
  std::sort(kv.begin(), kv.end());
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string PipelineConfig::hash() const { return sha256_hex(canonical()); }

std::filesystem::path PipelineConfig::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

SegTrainConfig PipelineConfig::seg_train_config() const {
  SegTrainConfig t;
  t.batch_size = seg_batch_size;
  t.lr0 = seg_lr0;
  t.decay = lr_decay;
  t.plateau_patience = plateau_patience;
  t.plateau_threshold = plateau_threshold;
  t.epochs = seg_epochs;
  t.seed = seg_seed;
  t.augment = augment;
  t.augment_params = {rotation_range, flip_probability, seg_seed};
  return t;
}

ClsTrainConfig PipelineConfig::cls_train_config() const {
  ClsTrainConfig t;
  t.batch_size = cls_batch_size;
  t.lr0 = cls_lr0;
  t.step_epochs = step_epochs;
  t.gamma = step_gamma;
  t.epochs = cls_epochs;
  t.crop_size = crop_size;
  t.seed = cls_seed;
  return t;
}

PostprocessParams PipelineConfig::postprocess_params() const { return {rough, ellipse_mode}; }

ScreenParams PipelineConfig::screen_params() const { return {patch_size, crop_size, cls_clahe, grid_mode}; }

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  require(EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) == 1, ErrorCode::Io,
          "SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

}  // namespace fundus
