#include "polyseq/report_json.hpp"

namespace polyseq::metrics {

nlohmann::json report_to_json(const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return nlohmann::json{{"ap", r.ap},           {"ap50", r.ap50},   {"ap75", r.ap75},
                        {"ar", r.ar},           {"ar50", r.ar50},   {"ar75", r.ar75},
                        {"f1", r.f1},           {"n_ratio", opt(r.n_ratio)},
                        {"c_iou", opt(r.c_iou)}, {"mta", opt(r.mta)}};
}

MetricReport report_from_json(const nlohmann::json& j) {
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  MetricReport r;
  r.ap = j.at("ap").get<double>();
  r.ap50 = j.at("ap50").get<double>();
  r.ap75 = j.at("ap75").get<double>();
  r.ar = j.at("ar").get<double>();
  r.ar50 = j.at("ar50").get<double>();
  r.ar75 = j.at("ar75").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.n_ratio = opt("n_ratio");
  r.c_iou = opt("c_iou");
  r.mta = opt("mta");
  return r;
}

}  // namespace polyseq::metrics
