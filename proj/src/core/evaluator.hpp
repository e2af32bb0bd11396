// Patch-level confusion counts and the three error rates (overall error,
// false alarm, missed detection), with text and CSV reports.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/model.hpp"

namespace occ {

struct ConfusionCounts {
    std::int64_t tp = 0;  // positive class = Occlusion
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;

    std::int64_t total() const { return tp + fp + tn + fn; }
};

ConfusionCounts evaluate(const CnnModelF& model, std::span<const Patch> patches, int threads = 1);

// overall = (fp+fn)/total, false alarm = fp/(fp+tn), missed = fn/(fn+tp).
// A rate with a zero denominator is reported as absent, not as 0.
struct Metrics {
    std::optional<double> overall_error;
    std::optional<double> false_alarm;
    std::optional<double> missed_detection;
};

Metrics metrics(const ConfusionCounts& c);

struct ReportRow {
    std::string label;  // e.g. "RGB-D" / "RGB"
    ConfusionCounts counts;
};

std::string metrics_table(std::span<const ReportRow> rows);
void write_metrics_csv(const std::string& path, std::span<const ReportRow> rows);

}  // namespace occ
