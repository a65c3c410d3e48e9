#pragma once

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "rockseg/core/error.hpp"
#include "rockseg/core/image.hpp"

namespace rockseg {

namespace detail {

struct OverlapCounts {
    std::uint64_t intersection = 0;
    std::uint64_t union_ = 0;
    std::uint64_t pred = 0;
    std::uint64_t truth = 0;
    std::uint64_t differing = 0;
    std::uint64_t total = 0;
};

inline OverlapCounts overlap_counts(const BinaryMask& pred, const BinaryMask& truth) {
    require(pred.same_shape(truth), ErrorKind::validation, "metric inputs differ in shape");
    OverlapCounts n;
    n.total = pred.size();
    const auto* p = pred.data();
    const auto* t = truth.data();
    for (std::size_t i = 0; i < n.total; ++i) {
        const bool pi = p[i] != 0, ti = t[i] != 0;
        n.intersection += pi && ti;
        n.union_ += pi || ti;
        n.pred += pi;
        n.truth += ti;
        n.differing += pi != ti;
    }
    return n;
}

} // namespace detail

// Overlap of prediction and ground truth as |P∩T| / |P∪T|. Two empty masks
// agree vacuously and score 1.
inline double iou(const BinaryMask& pred, const BinaryMask& truth) {
    const auto n = detail::overlap_counts(pred, truth);
    if (n.union_ == 0) return 1.0;
    return static_cast<double>(n.intersection) / static_cast<double>(n.union_);
}

// 2|P∩T| / (|P| + |T|); empty-vs-empty scores 1.
inline double dice(const BinaryMask& pred, const BinaryMask& truth) {
    const auto n = detail::overlap_counts(pred, truth);
    if (n.pred + n.truth == 0) return 1.0;
    return 2.0 * static_cast<double>(n.intersection) / static_cast<double>(n.pred + n.truth);
}

// Mean absolute per-pixel error; for binary masks this is the fraction of
// differing pixels.
inline double mae(const BinaryMask& pred, const BinaryMask& truth) {
    const auto n = detail::overlap_counts(pred, truth);
    return static_cast<double>(n.differing) / static_cast<double>(n.total);
}

struct ImageMetrics {
    std::string name;
    double iou = 0.0;
    double dice = 0.0;
    double mae = 0.0;
};

struct EvalPair {
    BinaryMask pred;
    BinaryMask truth;
    std::string name;
};

// Aggregate scores for a set of mask pairs. The headline iou/dice/mae are
// unweighted per-image means; pooled_* treat the set as one big image.
struct MetricsReport {
    double iou = 0.0;
    double dice = 0.0;
    double mae = 0.0;
    double pooled_iou = 0.0;
    double pooled_dice = 0.0;
    double pooled_mae = 0.0;
    std::uint64_t n_pixels = 0;
    std::vector<ImageMetrics> per_image;
};

inline MetricsReport evaluate_set(const std::vector<EvalPair>& pairs) {
    require(!pairs.empty(), ErrorKind::validation, "evaluate_set needs at least one pair");
    MetricsReport report;
    detail::OverlapCounts pooled;
    for (const auto& pair : pairs) {
        const auto n = detail::overlap_counts(pair.pred, pair.truth);
        ImageMetrics m;
        m.name = pair.name;
        m.iou = n.union_ == 0 ? 1.0 : static_cast<double>(n.intersection) / n.union_;
        m.dice = n.pred + n.truth == 0 ? 1.0 : 2.0 * static_cast<double>(n.intersection) / (n.pred + n.truth);
        m.mae = static_cast<double>(n.differing) / n.total;
        report.per_image.push_back(m);
        report.iou += m.iou;
        report.dice += m.dice;
        report.mae += m.mae;
        pooled.intersection += n.intersection;
        pooled.union_ += n.union_;
        pooled.pred += n.pred;
        pooled.truth += n.truth;
        pooled.differing += n.differing;
        pooled.total += n.total;
    }
    const double count = static_cast<double>(pairs.size());
    report.iou /= count;
    report.dice /= count;
    report.mae /= count;
    report.pooled_iou = pooled.union_ == 0 ? 1.0 : static_cast<double>(pooled.intersection) / pooled.union_;
    report.pooled_dice =
        pooled.pred + pooled.truth == 0 ? 1.0 : 2.0 * static_cast<double>(pooled.intersection) / (pooled.pred + pooled.truth);
    report.pooled_mae = static_cast<double>(pooled.differing) / pooled.total;
    report.n_pixels = pooled.total;
    return report;
}

inline void write_report_csv(const MetricsReport& report, std::ostream& os) {
    os << "name,iou,dice,mae\n";
    os << std::setprecision(12);
    for (const auto& m : report.per_image)
        os << m.name << ',' << m.iou << ',' << m.dice << ',' << m.mae << '\n';
    os << "mean," << report.iou << ',' << report.dice << ',' << report.mae << '\n';
    os << "pooled," << report.pooled_iou << ',' << report.pooled_dice << ',' << report.pooled_mae
       << '\n';
}

inline void print_report(const MetricsReport& report, std::ostream& os) {
    os << std::left << std::setw(28) << "image" << std::right << std::setw(10) << "iou"
       << std::setw(10) << "dice" << std::setw(10) << "mae" << '\n';
    auto row = [&os](const std::string& name, double i, double d, double m) {
        os << std::left << std::setw(28) << name << std::right << std::fixed << std::setprecision(4)
           << std::setw(10) << i << std::setw(10) << d << std::setw(10) << m << '\n';
        os.unsetf(std::ios::fixed);
    };
    for (const auto& m : report.per_image) row(m.name, m.iou, m.dice, m.mae);
    row("(mean)", report.iou, report.dice, report.mae);
    row("(pooled)", report.pooled_iou, report.pooled_dice, report.pooled_mae);
}

} // namespace rockseg
