#pragma once

#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "wavedef/blackbox.hpp"
#include "wavedef/common.hpp"
#include "wavedef/distill.hpp"
#include "wavedef/fnr.hpp"
#include "wavedef/wnr.hpp"

namespace wavedef {

/// Label consistency rates at one sweep position. lcr_c counts clean samples
/// whose filtered prediction matches the clean prediction; lcr_a counts
/// adversarial samples against the same clean reference. lcr is their sum.
struct LcrPoint {
    int64_t k = 0;
    double lcr_c = 0.0;
    double lcr_a = 0.0;
    double lcr = 0.0;
};

/// Full sweep result: points ordered by k, the LCR rate-of-change sequence
/// (roc[i] spans points[i] -> points[i+1]), and the selected position.
struct KSelectionReport {
    std::vector<LcrPoint> points;
    std::vector<double> roc;
    int64_t k_hat = 0;
    std::string rule;  // roc_saturation | lfr_argmin
};

/// Batch purifier parameterized by the sweep position (k or radius).
using SweepPurifier = std::function<Tensor(const Tensor& nchw, int64_t)>;

namespace detail {

inline std::vector<int64_t> blackbox_labels_chunked(const BlackBoxHandle& bb,
                                                    const Tensor& images) {
    return argmax_rows(query_probs_chunked(bb, images));
}

inline double match_fraction(const std::vector<int64_t>& pred, const std::vector<int64_t>& ref) {
    int64_t same = 0;
    for (size_t i = 0; i < pred.size(); ++i) same += pred[i] == ref[i] ? 1 : 0;
    return static_cast<double>(same) / static_cast<double>(pred.size());
}

}  // namespace detail

/// One LCR point against precomputed clean reference labels.
inline LcrPoint compute_lcr_point(const Tensor& clean, const Tensor& adv,
                                  const std::vector<int64_t>& ref_labels, int64_t k,
                                  const BlackBoxHandle& bb, const SweepPurifier& purify) {
    require(clean.rank() == 4 && adv.rank() == 4 && clean.shape() == adv.shape(),
            "compute_lcr: clean and adversarial sets must be aligned NCHW batches");
    require(clean.dim(0) >= 1, "compute_lcr: empty sample set");
    require(static_cast<int64_t>(ref_labels.size()) == clean.dim(0),
            "compute_lcr: reference label count mismatch");

    LcrPoint p;
    p.k = k;
    p.lcr_c = detail::match_fraction(
        detail::blackbox_labels_chunked(bb, purify(clean, k)), ref_labels);
    p.lcr_a = detail::match_fraction(
        detail::blackbox_labels_chunked(bb, purify(adv, k)), ref_labels);
    p.lcr = p.lcr_c + p.lcr_a;
    return p;
}

/// Self-contained LCR computation for the wavelet noise remover at one k:
/// queries the black box for reference labels, then for both filtered sets.
inline LcrPoint compute_lcr(const Tensor& clean, const Tensor& adv, int64_t k,
                            const BlackBoxHandle& bb, const WnrConfig& wnr) {
    require(clean.rank() == 4 && adv.rank() == 4 && clean.shape() == adv.shape(),
            "compute_lcr: clean and adversarial sets must be aligned NCHW batches");
    require(clean.dim(0) >= 1, "compute_lcr: empty sample set");
    const std::vector<int64_t> ref = detail::blackbox_labels_chunked(bb, clean);
    return compute_lcr_point(clean, adv, ref, k, bb, [&wnr](const Tensor& x, int64_t kk) {
        return wnr.with_k(static_cast<int>(kk)).apply_batch(x);
    });
}

/// Sweeps the grid, querying reference labels once and each purified set per
/// position. Query cost: |set| * (1 + 2 * |grid|).
inline KSelectionReport sweep_consistency(const Tensor& clean, const Tensor& adv,
                                          const BlackBoxHandle& bb,
                                          const std::vector<int64_t>& grid,
                                          const SweepPurifier& purify) {
    require(!grid.empty(), "sweep_consistency: empty grid");
    for (size_t i = 1; i < grid.size(); ++i)
        require(grid[i] > grid[i - 1], "sweep_consistency: grid must be strictly increasing");
    const std::vector<int64_t> ref = detail::blackbox_labels_chunked(bb, clean);

    KSelectionReport report;
    for (int64_t k : grid)
        report.points.push_back(compute_lcr_point(clean, adv, ref, k, bb, purify));
    for (size_t i = 0; i + 1 < report.points.size(); ++i)
        report.roc.push_back(report.points[i + 1].lcr - report.points[i].lcr);
    return report;
}

/// WCSM sweep over k = 1..k_max with the wavelet noise remover.
inline KSelectionReport sweep_wcsm(const Tensor& clean, const Tensor& adv,
                                   const BlackBoxHandle& bb, const WnrConfig& wnr,
                                   int64_t k_max = 50) {
    require(k_max >= 2 && k_max <= 100, "sweep_wcsm: k_max must be in [2, 100]");
    std::vector<int64_t> grid;
    for (int64_t k = 1; k <= k_max; ++k) grid.push_back(k);
    return sweep_consistency(clean, adv, bb, grid,
                             [&wnr](const Tensor& x, int64_t k) {
                                 return wnr.with_k(static_cast<int>(k)).apply_batch(x);
                             });
}

/// Radius sweep for the Fourier baseline over integer-bin radii.
inline KSelectionReport sweep_fnr_radius(const Tensor& clean, const Tensor& adv,
                                         const BlackBoxHandle& bb,
                                         const std::vector<int64_t>& radii) {
    return sweep_consistency(clean, adv, bb, radii, [](const Tensor& x, int64_t r) {
        return lowpass_filter_batch(x, static_cast<double>(r));
    });
}

/// Saturation rule: the smallest k whose outgoing rate of change is at or
/// below tau; the last grid value when the curve never saturates. Appending
/// points after the first crossing cannot change the selection.
inline KSelectionReport select_k(KSelectionReport report, double tau = 0.005) {
    require(report.points.size() >= 2, "select_k: need at least 2 sweep points");
    require(tau > 0.0, "select_k: tau must be positive");
    require(report.roc.size() == report.points.size() - 1,
            "select_k: roc length must be points length - 1");
    report.rule = "roc_saturation";
    report.k_hat = report.points.back().k;
    for (size_t i = 0; i < report.roc.size(); ++i)
        if (report.roc[i] <= tau) {
            report.k_hat = report.points[i].k;
            break;
        }
    return report;
}

/// Flip-rate rule on an existing sweep: LFR(k) = 1 - lcr_a(k); the argmin
/// wins, with ties resolved toward the smallest k.
inline KSelectionReport select_k_lfr_from(KSelectionReport report) {
    require(!report.points.empty(), "select_k_lfr: empty sweep");
    report.rule = "lfr_argmin";
    size_t best = 0;
    for (size_t i = 1; i < report.points.size(); ++i) {
        const double lfr_i = 1.0 - report.points[i].lcr_a;
        const double lfr_best = 1.0 - report.points[best].lcr_a;
        if (lfr_i < lfr_best) best = i;
    }
    report.k_hat = report.points[best].k;
    return report;
}

/// Self-contained flip-rate selection over a k grid.
inline KSelectionReport select_k_lfr(const Tensor& clean, const Tensor& adv,
                                     const std::vector<int64_t>& k_range,
                                     const BlackBoxHandle& bb, const WnrConfig& wnr) {
    return select_k_lfr_from(sweep_consistency(clean, adv, bb, k_range,
                                               [&wnr](const Tensor& x, int64_t k) {
                                                   return wnr.with_k(static_cast<int>(k))
                                                       .apply_batch(x);
                                               }));
}

/// Shortest decimal form that round-trips the double exactly.
inline std::string fmt_double(double v) {
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

/// CSV emission: columns k, lcr_c, lcr_a, lcr, roc. The final row has no
/// outgoing rate of change, so its roc field is empty.
inline std::string kselection_csv(const KSelectionReport& report) {
    std::string out = "k,lcr_c,lcr_a,lcr,roc\n";
    for (size_t i = 0; i < report.points.size(); ++i) {
        const LcrPoint& p = report.points[i];
        out += std::to_string(p.k) + "," + fmt_double(p.lcr_c) + "," + fmt_double(p.lcr_a) + "," +
               fmt_double(p.lcr) + ",";
        if (i < report.roc.size()) out += fmt_double(report.roc[i]);
        out += "\n";
    }
    return out;
}

}  // namespace wavedef
