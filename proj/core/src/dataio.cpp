#include "fundus/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fundus/error.hpp"
#include "text_util.hpp"

namespace fundus {

std::string to_string(Diagnosis d) { return d == Diagnosis::Glaucoma ? "glaucoma" : "healthy"; }

std::string to_string(DatasetTag t) {
  switch (t) {
    case DatasetTag::Refuge: return "REFUGE";
    case DatasetTag::Drishti: return "DRISHTI";
    case DatasetTag::Synth: return "SYNTH";
  }
  return "SYNTH";
}

Diagnosis parse_diagnosis(const std::string& s) {
  if (s == "glaucoma") return Diagnosis::Glaucoma;
  if (s == "healthy") return Diagnosis::Healthy;
  fail(ErrorCode::Format, "unknown class label '" + s + "'");
}

DatasetTag parse_dataset_tag(const std::string& s) {
  if (s == "REFUGE") return DatasetTag::Refuge;
  if (s == "DRISHTI") return DatasetTag::Drishti;
  if (s == "SYNTH") return DatasetTag::Synth;
  fail(ErrorCode::Format, "unknown dataset tag '" + s + "'");
}

FundusImage load_image(const fs::path& path) {
  require(fs::exists(path), ErrorCode::NotFound, "image '" + path.string() + "' does not exist");
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  require(!raw.empty(), ErrorCode::Format, "cannot decode '" + path.string() + "'");
  require(raw.depth() == CV_8U, ErrorCode::Format, "'" + path.string() + "' is not 8-bit");
  require(raw.channels() == 3, ErrorCode::Format,
          "'" + path.string() + "' has " + std::to_string(raw.channels()) +
              " channel(s), expected RGB");
  cv::Mat rgb;
  cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
  return FundusImage(rgb, path.stem().string());
}

void save_image(const FundusImage& image, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::Mat bgr;
  cv::cvtColor(image.pixels(), bgr, cv::COLOR_RGB2BGR);
  require(cv::imwrite(path.string(), bgr), ErrorCode::Io, "cannot write '" + path.string() + "'");
}

std::uint8_t encode_label(Label label) {
  switch (label) {
    case Label::Background: return 255;
    case Label::Disc: return 128;
    case Label::Cup: return 0;
  }
  return 255;
}

Label decode_label(std::uint8_t v) {
  switch (v) {
    case 255: return Label::Background;
    case 128: return Label::Disc;
    case 0: return Label::Cup;
    default:
      fail(ErrorCode::Encoding,
           "mask value " + std::to_string(v) + " is outside the {0,128,255} alphabet");
  }
}

LabelMask load_mask(const fs::path& path) {
  require(fs::exists(path), ErrorCode::NotFound, "mask '" + path.string() + "' does not exist");
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  require(!raw.empty(), ErrorCode::Format, "cannot decode '" + path.string() + "'");
  require(raw.type() == CV_8UC1, ErrorCode::Format,
          "mask '" + path.string() + "' must be single-channel 8-bit");
  cv::Mat labels(raw.size(), CV_8UC1);
  for (int r = 0; r < raw.rows; ++r) {
    const auto* src = raw.ptr<std::uint8_t>(r);
    auto* dst = labels.ptr<std::uint8_t>(r);
    for (int c = 0; c < raw.cols; ++c) dst[c] = static_cast<std::uint8_t>(decode_label(src[c]));
  }
  return LabelMask(labels);
}

void save_mask(const LabelMask& mask, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::Mat file(mask.labels().size(), CV_8UC1);
  for (int r = 0; r < file.rows; ++r) {
    const auto* src = mask.labels().ptr<std::uint8_t>(r);
    auto* dst = file.ptr<std::uint8_t>(r);
    for (int c = 0; c < file.cols; ++c) dst[c] = encode_label(static_cast<Label>(src[c]));
  }
  require(cv::imwrite(path.string(), file), ErrorCode::Io, "cannot write '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Manifest

DatasetManifest::DatasetManifest(std::vector<ManifestEntry> entries, fs::path root)
    : entries_(std::move(entries)), root_(std::move(root)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) index_[entries_[i].id] = i;
  validate();
}

void DatasetManifest::validate() const {
  require(index_.size() == entries_.size(), ErrorCode::Format, "manifest ids are not unique");
  std::set<std::string> paths;
  for (const auto& e : entries_) {
    require(!e.id.empty(), ErrorCode::Format, "manifest entry with empty id");
    require(paths.insert(e.image.string()).second, ErrorCode::Format,
            "image path '" + e.image.string() + "' appears twice");
    if (e.mask) {
      require(paths.insert(e.mask->string()).second, ErrorCode::Format,
              "mask path '" + e.mask->string() + "' appears twice");
    }
  }
}

DatasetManifest DatasetManifest::read(const fs::path& csv_path) {
  auto in = detail::open_input(csv_path);
  std::string line;
  std::getline(in, line);
  require(detail::trim(line) == "id,image,mask,label,dataset", ErrorCode::Format,
          "manifest '" + csv_path.string() + "' lacks header id,image,mask,label,dataset");
  std::vector<ManifestEntry> entries;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line, ',');
    require(f.size() == 5, ErrorCode::Format,
            "manifest row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                " fields, expected 5");
    ManifestEntry e;
    e.id = f[0];
    e.image = f[1];
    if (!f[2].empty()) e.mask = fs::path(f[2]);
    e.label = parse_diagnosis(f[3]);
    e.dataset = parse_dataset_tag(f[4]);
    entries.push_back(std::move(e));
  }
  return DatasetManifest(std::move(entries), csv_path.parent_path());
}

void DatasetManifest::write(const fs::path& csv_path) const {
  auto out = detail::open_output(csv_path);
  out << "id,image,mask,label,dataset\n";
  for (const auto& e : entries_) {
    out << e.id << ',' << e.image.generic_string() << ','
        << (e.mask ? e.mask->generic_string() : std::string()) << ',' << to_string(e.label)
        << ',' << to_string(e.dataset) << '\n';
  }
}

const ManifestEntry& DatasetManifest::at(const std::string& id) const {
  auto it = index_.find(id);
  require(it != index_.end(), ErrorCode::Argument, "id '" + id + "' is not in the manifest");
  return entries_[it->second];
}

std::vector<std::string> DatasetManifest::ids() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.id);
  return out;
}

fs::path DatasetManifest::image_path(const ManifestEntry& e) const {
  return e.image.is_absolute() ? e.image : root_ / e.image;
}

fs::path DatasetManifest::mask_path(const ManifestEntry& e) const {
  require(e.mask.has_value(), ErrorCode::Argument, "entry '" + e.id + "' has no mask");
  return e.mask->is_absolute() ? *e.mask : root_ / *e.mask;
}

// ---------------------------------------------------------------------------
// Splits

Subset parse_subset(const std::string& s) {
  if (s == "train") return Subset::Train;
  if (s == "val") return Subset::Val;
  if (s == "test") return Subset::Test;
  if (s == "all") return Subset::All;
  fail(ErrorCode::Argument, "unknown subset '" + s + "' (train|val|test|all)");
}

std::vector<std::string> SplitSpec::ids(Subset subset) const {
  switch (subset) {
    case Subset::Train: return train_ids;
    case Subset::Val: return val_ids;
    case Subset::Test: return test_ids;
    case Subset::All: break;
  }
  std::vector<std::string> all = train_ids;
  all.insert(all.end(), val_ids.begin(), val_ids.end());
  all.insert(all.end(), test_ids.begin(), test_ids.end());
  return all;
}

SplitSpec SplitSpec::read(const fs::path& csv_path) {
  auto in = detail::open_input(csv_path);
  std::string line;
  std::getline(in, line);
  require(detail::trim(line) == "id,split,seed", ErrorCode::Format,
          "split file '" + csv_path.string() + "' lacks header id,split,seed");
  SplitSpec spec;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line, ',');
    require(f.size() == 3, ErrorCode::Format, "malformed split row '" + line + "'");
    spec.seed = std::stoull(f[2]);
    switch (parse_subset(f[1])) {
      case Subset::Train: spec.train_ids.push_back(f[0]); break;
      case Subset::Val: spec.val_ids.push_back(f[0]); break;
      case Subset::Test: spec.test_ids.push_back(f[0]); break;
      case Subset::All: fail(ErrorCode::Format, "split row cannot use 'all'");
    }
  }
  return spec;
}

void SplitSpec::write(const fs::path& csv_path) const {
  auto out = detail::open_output(csv_path);
  out << "id,split,seed\n";
  for (const auto& id : train_ids) out << id << ",train," << seed << '\n';
  for (const auto& id : val_ids) out << id << ",val," << seed << '\n';
  for (const auto& id : test_ids) out << id << ",test," << seed << '\n';
}

namespace {

std::array<int, 3> largest_remainder(int n, const SplitRatios& r) {
  const std::array<double, 3> exact = {n * r.train, n * r.val, n * r.test};
  std::array<int, 3> counts{};
  std::array<int, 3> order = {0, 1, 2};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    counts[i] = static_cast<int>(std::floor(exact[i] + 1e-9));
    assigned += counts[i];
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return exact[a] - counts[a] > exact[b] - counts[b];
  });
  for (int k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
  // Every split keeps at least one member of the class.
  for (int i = 0; i < 3; ++i) {
    while (counts[i] == 0) {
      const int donor = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      --counts[donor];
      ++counts[i];
    }
  }
  return counts;
}

}  // namespace

SplitSpec stratified_split(const DatasetManifest& manifest, SplitRatios ratios,
                           std::uint64_t seed) {
  require(ratios.train > 0 && ratios.val > 0 && ratios.test > 0, ErrorCode::Argument,
          "split ratios must be positive");
  require(std::abs(ratios.train + ratios.val + ratios.test - 1.0) <= 1e-9, ErrorCode::Argument,
          "split ratios must sum to 1");

  std::map<Diagnosis, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < manifest.size(); ++i)
    by_class[manifest.entries()[i].label].push_back(i);

  std::mt19937_64 rng(seed);
  std::array<std::vector<std::size_t>, 3> parts;
  for (auto& [label, members] : by_class) {
    const int n = static_cast<int>(members.size());
    require(n >= 3, ErrorCode::Stratification,
            "class '" + to_string(label) + "' has " + std::to_string(n) +
                " member(s); stratification needs at least 3");
    const auto counts = largest_remainder(n, ratios);
    std::shuffle(members.begin(), members.end(), rng);
    auto it = members.begin();
    for (int s = 0; s < 3; ++s) {
      parts[s].insert(parts[s].end(), it, it + counts[s]);
      it += counts[s];
    }
  }

  SplitSpec spec;
  spec.seed = seed;
  std::array<std::vector<std::string>*, 3> dst = {&spec.train_ids, &spec.val_ids, &spec.test_ids};
  for (int s = 0; s < 3; ++s) {
    std::sort(parts[s].begin(), parts[s].end());
    for (auto idx : parts[s]) dst[s]->push_back(manifest.entries()[idx].id);
  }
  return spec;
}

std::map<Diagnosis, double> class_frequencies(const DatasetManifest& manifest,
                                              std::span<const std::string> ids) {
  require(!ids.empty(), ErrorCode::Argument, "class frequencies of an empty split");
  std::map<Diagnosis, std::size_t> counts;
  for (const auto& id : ids) ++counts[manifest.at(id).label];
  std::map<Diagnosis, double> freqs;
  for (const auto& [label, count] : counts)
    freqs[label] = static_cast<double>(count) / static_cast<double>(ids.size());
  return freqs;
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

Diagnosis label_for_ratio(double vertical_cdr) {
  return vertical_cdr > kSyntheticGlaucomaRatio ? Diagnosis::Glaucoma : Diagnosis::Healthy;
}

namespace {

bool inside_ellipse(double x, double y, double cx, double cy, double rx, double ry, double theta) {
  const double dx = x - cx;
  const double dy = y - cy;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double u = (dx * c + dy * s) / rx;
  const double v = (-dx * s + dy * c) / ry;
  return u * u + v * v <= 1.0;
}

struct Fixture {
  cv::Mat rgb;
  LabelMask mask;
};

Fixture render_fixture(const SyntheticTruth& t, int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double half = size / 2.0;
  const double fov = 0.46 * size;

  cv::Mat img(size, size, CV_8UC3, cv::Scalar(0, 0, 0));
  const double fovea_x = t.disc_cx < half ? t.disc_cx + 0.3 * size : t.disc_cx - 0.3 * size;
  const double fovea_y = t.disc_cy + 0.02 * size;
  const double fovea_r = 0.06 * size;
  const double base_r = 150 + 20 * uni(rng);
  for (int y = 0; y < size; ++y) {
    auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < size; ++x) {
      const double rr = std::hypot(x - half, y - half) / fov;
      if (rr > 1.0) continue;
      double shade = 1.0 - 0.35 * rr * rr;
      const double df = std::hypot(x - fovea_x, y - fovea_y) / fovea_r;
      if (df < 1.0) shade *= 0.75 + 0.25 * df;
      row[x] = cv::Vec3b(static_cast<std::uint8_t>(base_r * shade),
                         static_cast<std::uint8_t>(70 * shade),
                         static_cast<std::uint8_t>(35 * shade));
    }
  }

  // Vessels radiating from the disc.
  const int n_vessels = 4 + static_cast<int>(uni(rng) * 3);
  const int thickness = std::max(1, size / 96);
  for (int v = 0; v < n_vessels; ++v) {
    double angle = 2.0 * CV_PI * (v + uni(rng) * 0.5) / n_vessels;
    std::vector<cv::Point> pts;
    double x = t.disc_cx, y = t.disc_cy;
    const double step = size / 40.0;
    for (int k = 0; k < 24; ++k) {
      pts.emplace_back(static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)));
      angle += (uni(rng) - 0.5) * 0.35;
      x += step * std::cos(angle);
      y += step * std::sin(angle);
    }
    cv::polylines(img, pts, false, cv::Scalar(105, 28, 20), thickness, cv::LINE_8);
  }

  LabelMask mask(size, size);
  const double cup_rx = t.disc_rx * t.cup_scale;
  const double cup_ry = t.disc_ry * t.cup_scale;
  for (int y = 0; y < size; ++y) {
    auto* row = img.ptr<cv::Vec3b>(y);
    auto* lab = mask.labels().ptr<std::uint8_t>(y);
    for (int x = 0; x < size; ++x) {
      if (!inside_ellipse(x, y, t.disc_cx, t.disc_cy, t.disc_rx, t.disc_ry, t.theta)) continue;
      if (inside_ellipse(x, y, t.disc_cx, t.disc_cy, cup_rx, cup_ry, t.theta)) {
        lab[x] = static_cast<std::uint8_t>(Label::Cup);
        row[x] = cv::Vec3b(252, 226, 172);
      } else {
        lab[x] = static_cast<std::uint8_t>(Label::Disc);
        row[x] = cv::Vec3b(232, 176, 108);
      }
    }
  }

  cv::GaussianBlur(img, img, cv::Size(3, 3), 0.8);
  std::normal_distribution<double> noise(0.0, 4.0);
  for (int y = 0; y < size; ++y) {
    auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < size; ++x) {
      if (std::hypot(x - half, y - half) > fov) {
        row[x] = cv::Vec3b(0, 0, 0);
        continue;
      }
      for (int c = 0; c < 3; ++c)
        row[x][c] = cv::saturate_cast<std::uint8_t>(row[x][c] + noise(rng));
    }
  }
  return {img, mask};
}

}  // namespace

DatasetManifest generate_synthetic_fixture(int n, std::uint64_t seed, int size,
                                           const fs::path& out_dir) {
  require(n >= 1, ErrorCode::Argument, "fixture count must be >= 1");
  require(size >= 128, ErrorCode::Argument, "fixture size must be >= 128");
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  require(!ec, ErrorCode::Io, "cannot create '" + (out_dir / "images").string() + "': " + ec.message());
  fs::create_directories(out_dir / "masks", ec);
  require(!ec, ErrorCode::Io, "cannot create '" + (out_dir / "masks").string() + "': " + ec.message());

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  // Balanced classes in seeded order.
  std::vector<Diagnosis> classes(n);
  for (int i = 0; i < n; ++i) classes[i] = i % 2 ? Diagnosis::Glaucoma : Diagnosis::Healthy;
  std::shuffle(classes.begin(), classes.end(), rng);

  std::vector<ManifestEntry> entries;
  std::vector<SyntheticTruth> truths;
  for (int i = 0; i < n; ++i) {
    SyntheticTruth t;
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%03d", i);
    t.id = name;
    t.disc_cx = size * (0.5 + 0.3 * (uni(rng) - 0.5));
    t.disc_cy = size * (0.5 + 0.24 * (uni(rng) - 0.5));
    t.disc_ry = size * (0.085 + 0.025 * uni(rng));
    t.disc_rx = t.disc_ry * (0.85 + 0.25 * uni(rng));
    t.theta = 0.6 * (uni(rng) - 0.5);
    t.cup_scale = classes[i] == Diagnosis::Glaucoma ? 0.65 + 0.2 * uni(rng) : 0.3 + 0.25 * uni(rng);
    t.label = label_for_ratio(t.cup_scale);

    const Fixture fx = render_fixture(t, size, rng);
    const fs::path image_rel = fs::path("images") / (t.id + ".png");
    const fs::path mask_rel = fs::path("masks") / (t.id + ".png");
    save_image(FundusImage(fx.rgb, t.id), out_dir / image_rel);
    save_mask(fx.mask, out_dir / mask_rel);
    entries.push_back({t.id, image_rel, mask_rel, t.label, DatasetTag::Synth});
    truths.push_back(t);
  }

  DatasetManifest manifest(std::move(entries), out_dir);
  manifest.write(out_dir / "manifest.csv");

  auto out = detail::open_output(out_dir / "truth.csv");
  out << "id,disc_cx,disc_cy,disc_rx,disc_ry,theta,cup_scale,label\n";
  out.precision(17);
  for (const auto& t : truths) {
    out << t.id << ',' << t.disc_cx << ',' << t.disc_cy << ',' << t.disc_rx << ',' << t.disc_ry
        << ',' << t.theta << ',' << t.cup_scale << ',' << to_string(t.label) << '\n';
  }
  return manifest;
}

std::vector<SyntheticTruth> read_synthetic_truth(const fs::path& csv_path) {
  auto in = detail::open_input(csv_path);
  std::string line;
  std::getline(in, line);
  std::vector<SyntheticTruth> out;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line, ',');
    require(f.size() == 8, ErrorCode::Format, "malformed truth row '" + line + "'");
    SyntheticTruth t;
    t.id = f[0];
    t.disc_cx = std::stod(f[1]);
    t.disc_cy = std::stod(f[2]);
    t.disc_rx = std::stod(f[3]);
    t.disc_ry = std::stod(f[4]);
    t.theta = std::stod(f[5]);
    t.cup_scale = std::stod(f[6]);
    t.label = parse_diagnosis(f[7]);
    out.push_back(t);
  }
  return out;
}

}  // namespace fundus
