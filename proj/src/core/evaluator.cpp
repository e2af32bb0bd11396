#include "core/evaluator.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "core/trainer.hpp"

namespace occ {

ConfusionCounts evaluate(const CnnModelF& model, std::span<const Patch> patches, int threads) {
    if (patches.empty()) {
        throw DataError("evaluate: empty patch set");
    }
    ConfusionCounts counts;
    std::vector<std::size_t> idx(patches.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    const std::size_t chunk = 256;
    for (std::size_t at = 0; at < idx.size(); at += chunk) {
        const std::size_t end = std::min(at + chunk, idx.size());
        const TensorF batch = batch_from_patches(patches, std::span(idx).subspan(at, end - at));
        const auto preds = model.infer(batch, threads);
        for (std::size_t i = at; i < end; ++i) {
            const bool truth = patches[i].label == PatchLabel::Occlusion;
            const bool pred = preds[i - at].first == 1;
            if (truth && pred) {
                ++counts.tp;
            } else if (truth && !pred) {
                ++counts.fn;
            } else if (!truth && pred) {
                ++counts.fp;
            } else {
                ++counts.tn;
            }
        }
    }
    return counts;
}

Metrics metrics(const ConfusionCounts& c) {
    Metrics m;
    if (c.total() > 0) {
        m.overall_error = static_cast<double>(c.fp + c.fn) / static_cast<double>(c.total());
    }
    if (c.fp + c.tn > 0) {
        m.false_alarm = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
    }
    if (c.fn + c.tp > 0) {
        m.missed_detection = static_cast<double>(c.fn) / static_cast<double>(c.fn + c.tp);
    }
    return m;
}

namespace {

std::string pct(const std::optional<double>& v) {
    if (!v) {
        return "n/a";
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f%%", *v * 100.0);
    return buf;
}

std::string frac(const std::optional<double>& v) {
    if (!v) {
        return "";
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", *v);
    return buf;
}

}  // namespace

std::string metrics_table(std::span<const ReportRow> rows) {
    std::ostringstream os;
    os << "Channels   Overall error   False alarm   Missed detection   Patches\n";
    for (const ReportRow& r : rows) {
        const Metrics m = metrics(r.counts);
        char line[160];
        std::snprintf(line, sizeof(line), "%-10s %-15s %-13s %-18s %lld\n", r.label.c_str(),
                      pct(m.overall_error).c_str(), pct(m.false_alarm).c_str(),
                      pct(m.missed_detection).c_str(),
                      static_cast<long long>(r.counts.total()));
        os << line;
    }
    return os.str();
}

void write_metrics_csv(const std::string& path, std::span<const ReportRow> rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw DataError("cannot write metrics csv: " + path);
    }
    f << "channels,overall_error,false_alarm,missed_detection,tp,fp,tn,fn\n";
    for (const ReportRow& r : rows) {
        const Metrics m = metrics(r.counts);
        f << r.label << "," << frac(m.overall_error) << "," << frac(m.false_alarm) << ","
          << frac(m.missed_detection) << "," << r.counts.tp << "," << r.counts.fp << ","
          << r.counts.tn << "," << r.counts.fn << "\n";
    }
}

}  // namespace occ
