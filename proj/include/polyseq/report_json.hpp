#pragma once

#include "json.hpp"
#include "polyseq/metrics.hpp"

namespace polyseq::metrics {

/// Flat object with the ten report fields; unset polygon metrics are null.
nlohmann::json report_to_json(const MetricReport& r);
MetricReport report_from_json(const nlohmann::json& j);

}  // namespace polyseq::metrics
