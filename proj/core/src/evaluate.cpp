#include "fundus/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "fundus/error.hpp"
#include "text_util.hpp"

namespace fundus {

using nlohmann::ordered_json;

bool MetricsReport::in_range() const {
  const auto unit = [](double v) { return std::isfinite(v) && v >= 0 && v <= 1; };
  if (per_image.empty() || !unit(dice_disc) || !unit(dice_cup)) return false;
  if (!std::isfinite(cdr_mae) || cdr_mae < 0 || cdr_mae > 1) return false;
  if (!auc || !unit(*auc)) return false;
  if (!sens_at_spec || !unit(sens_at_spec->sensitivity) || !unit(sens_at_spec->specificity)) return false;
  if (sens_at_spec->specificity < target_specificity) return false;
  for (const auto& r : per_image) {
    if (!unit(r.dice_disc) || !unit(r.dice_cup)) return false;
    if (r.cdr_pred && !unit(*r.cdr_pred)) return false;
    if (r.risk && !unit(*r.risk)) return false;
  }
  return true;
}

MetricsReport summarize(std::vector<PerImageMetrics> rows, double target_specificity) {
  require(!rows.empty(), ErrorCode::Argument, "no images to evaluate");
  MetricsReport r;
  r.target_specificity = target_specificity;
  std::vector<double> pred_cdr, true_cdr, scores;
  std::vector<int> labels;
  for (const auto& row : rows) {
    r.dice_disc += row.dice_disc;
    r.dice_cup += row.dice_cup;
    if (row.status != "ok") ++r.failures;
    if (row.cdr_pred) {
      pred_cdr.push_back(*row.cdr_pred);
      true_cdr.push_back(row.cdr_true);
    }
    if (row.risk) {
      scores.push_back(*row.risk);
      labels.push_back(static_cast<int>(row.label));
    }
  }
  r.dice_disc /= static_cast<double>(rows.size());
  r.dice_cup /= static_cast<double>(rows.size());
  r.cdr_mae = pred_cdr.empty() ? std::nan("") : cdr_mae(pred_cdr, true_cdr);
  const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
  if (both) {
    r.auc = roc_auc(scores, labels);
    r.sens_at_spec = sensitivity_at_specificity(scores, labels, target_specificity);
  }
  r.per_image = std::move(rows);
  return r;
}

namespace {

ordered_json opt(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

}  // namespace

std::string to_json(const MetricsReport& r) {
  ordered_json j;
  j["subset"] = r.subset;
  j["config_hash"] = r.config_hash;
  j["seeds"] = r.seeds;
  j["images"] = r.per_image.size();
  j["failures"] = r.failures;
  j["dice_disc"] = r.dice_disc;
  j["dice_cup"] = r.dice_cup;
  j["cdr_mae"] = std::isfinite(r.cdr_mae) ? ordered_json(r.cdr_mae) : ordered_json(nullptr);
  j["auc"] = opt(r.auc);
  if (r.sens_at_spec) {
    const double t = r.sens_at_spec->threshold;
    j["sens_at_spec"] = {{"target_specificity", r.target_specificity},
                         {"sensitivity", r.sens_at_spec->sensitivity},
                         {"specificity", r.sens_at_spec->specificity},
                         {"threshold", std::isfinite(t) ? ordered_json(t) : ordered_json("inf")}};
  } else {
    j["sens_at_spec"] = nullptr;
  }
  ordered_json rows = ordered_json::array();
  for (const auto& p : r.per_image)
    rows.push_back({{"id", p.id},
                    {"label", to_string(p.label)},
                    {"status", p.status},
                    {"dice_disc", p.dice_disc},
                    {"dice_cup", p.dice_cup},
                    {"cdr_true", p.cdr_true},
                    {"cdr_pred", opt(p.cdr_pred)},
                    {"risk", opt(p.risk)}});
  j["per_image"] = rows;
  return j.dump(2) + "\n";
}

std::string format_table(const MetricsReport& r) {
  std::string out;
  char buf[256];
  const auto line = [&](const char* name, const std::string& v) {
    std::snprintf(buf, sizeof buf, "%-22s %s\n", name, v.c_str());
    out += buf;
  };
  const auto num = [](std::optional<double> v) {
    if (!v || !std::isfinite(*v)) return std::string("n/a");
    char b[32];
    std::snprintf(b, sizeof b, "%.4f", *v);
    return std::string(b);
  };
  line("subset", r.subset);
  line("images", std::to_string(r.per_image.size()) + " (" + std::to_string(r.failures) + " without segmentation)");
  line("dice disc", num(r.dice_disc));
  line("dice cup", num(r.dice_cup));
  line("cdr mae", num(r.cdr_mae));
  line("roc auc", num(r.auc));
  if (r.sens_at_spec)
    line("sens @ spec", num(r.sens_at_spec->sensitivity) + " @ " + num(r.sens_at_spec->specificity) +
                            " (target " + num(r.target_specificity) + ")");
  else
    line("sens @ spec", "n/a");
  line("config hash", r.config_hash);
  out += "\n";
  std::snprintf(buf, sizeof buf, "%-16s %-9s %9s %9s %8s %8s %8s  %s\n", "id", "label", "dice_disc", "dice_cup",
                "cdr", "cdr_gt", "risk", "status");
  out += buf;
  for (const auto& p : r.per_image) {
    std::snprintf(buf, sizeof buf, "%-16s %-9s %9.4f %9.4f %8s %8.4f %8s  %s\n", p.id.c_str(),
                  to_string(p.label).c_str(), p.dice_disc, p.dice_cup, num(p.cdr_pred).c_str(), p.cdr_true,
                  num(p.risk).c_str(), p.status.c_str());
    out += buf;
  }
  return out;
}

void write_per_image_csv(const std::filesystem::path& path, const MetricsReport& r) {
  auto out = detail::open_output(path);
  out.precision(10);
  out << "id,label,status,dice_disc,dice_cup,cdr_true,cdr_pred,risk\n";
  for (const auto& p : r.per_image) {
    std::string status = p.status;
    std::replace(status.begin(), status.end(), ',', ';');
    out << p.id << ',' << to_string(p.label) << ',' << status << ',' << p.dice_disc << ',' << p.dice_cup << ','
        << p.cdr_true << ',';
    if (p.cdr_pred) out << *p.cdr_pred;
    out << ',';
    if (p.risk) out << *p.risk;
    out << '\n';
  }
}

}  // namespace fundus
