#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "lss/core.hpp"
#include "lss/tinynet.hpp"

namespace lss {

struct AreaStats {
    double affected_pct = 0.0;      // percentage of the ROI
    long foreground_pixels = 0;     // |mask ∩ roi|
    long roi_pixels = 0;
};

// pct = 100 * |mask ∩ roi| / |roi|
inline AreaStats affected_area(const BinaryMask& mask, const BinaryMask& roi) {
    if (!mask.same_shape(roi)) throw InputError("affected_area: shape mismatch");
    AreaStats s;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (roi.bits[i]) {
            ++s.roi_pixels;
            if (mask.bits[i]) ++s.foreground_pixels;
        }
    }
    if (s.roi_pixels == 0) throw InputError("affected_area: empty ROI");
    s.affected_pct = 100.0 * static_cast<double>(s.foreground_pixels) /
                     static_cast<double>(s.roi_pixels);
    return s;
}

// A for < 10%, B&C for 10-25% (boundaries inclusive), D for > 25%.
inline Grade grade_from_area(double pct) {
    if (!(pct >= 0.0) || !(pct <= 100.0))
        throw InputError("grade_from_area: percentage outside [0, 100]");
    if (pct < 10.0) return Grade::A;
    if (pct <= 25.0) return Grade::BC;
    return Grade::D;
}

// Mask-derived morphology summary plus the pooled visual feature; the
// aggregate is their concatenation.
struct ReportContext {
    std::vector<double> pooled_visual;  // mean patch feature vector
    long mask_foreground = 0;
    double centroid_row = 0.0;
    double centroid_col = 0.0;
    int bbox_r0 = 0, bbox_c0 = 0, bbox_r1 = -1, bbox_c1 = -1;
    int mask_height = 0, mask_width = 0;

    std::vector<double> aggregate() const {
        std::vector<double> f = pooled_visual;
        f.push_back(static_cast<double>(mask_foreground));
        f.push_back(centroid_row);
        f.push_back(centroid_col);
        f.push_back(static_cast<double>(bbox_r0));
        f.push_back(static_cast<double>(bbox_c0));
        f.push_back(static_cast<double>(bbox_r1));
        f.push_back(static_cast<double>(bbox_c1));
        return f;
    }
};

inline ReportContext make_report_context(const PatchSequence& features, const BinaryMask& mask) {
    ReportContext ctx;
    ctx.mask_height = mask.height;
    ctx.mask_width = mask.width;
    ctx.pooled_visual.assign(features.dim, 0.0);
    if (features.n_patches > 0) {
        for (int p = 0; p < features.n_patches; ++p)
            for (int d = 0; d < features.dim; ++d) ctx.pooled_visual[d] += features.at(p, d);
        for (double& v : ctx.pooled_visual) v /= features.n_patches;
    }
    long n = 0;
    double sr = 0.0, sc = 0.0;
    int r0 = mask.height, c0 = mask.width, r1 = -1, c1 = -1;
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c)
            if (mask.at(r, c)) {
                ++n;
                sr += r;
                sc += c;
                r0 = std::min(r0, r);
                c0 = std::min(c0, c);
                r1 = std::max(r1, r);
                c1 = std::max(c1, c);
            }
    ctx.mask_foreground = n;
    if (n > 0) {
        ctx.centroid_row = sr / n;
        ctx.centroid_col = sc / n;
        ctx.bbox_r0 = r0;
        ctx.bbox_c0 = c0;
        ctx.bbox_r1 = r1;
        ctx.bbox_c1 = c1;
    }
    return ctx;
}

struct Report {
    std::string patient_id;
    Grade grade = Grade::A;
    double affected_pct = 0.0;
    std::vector<std::string> lines;

    std::string text() const {
        std::string out;
        for (const auto& l : lines) {
            out += l;
            out += '\n';
        }
        return out;
    }
};

namespace detail {

inline std::string format_pct(double pct) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", pct);
    return buf;
}

inline const char* centroid_third(const ReportContext& ctx) {
    if (ctx.mask_foreground == 0 || ctx.mask_width <= 0) return "central";
    const double x = ctx.centroid_col / static_cast<double>(ctx.mask_width);
    if (x < 1.0 / 3.0) return "left";
    if (x < 2.0 / 3.0) return "central";
    return "right";
}

}  // namespace detail

// Deterministic template per grade, wording consistent with parse_severity
// so reports round-trip to their generating grade.
inline Report generate_report(const ReportContext& ctx, const AreaStats& stats, Grade grade) {
    Report r;
    r.grade = grade;
    r.affected_pct = stats.affected_pct;
    const std::string pct = detail::format_pct(stats.affected_pct);

    r.lines.push_back("Lumbar spine MRI assessment.");
    switch (grade) {
        case Grade::A:
            r.lines.push_back("Minimal or no significant stenosis, " + pct +
                              "% of the region exhibits mild changes.");
            break;
        case Grade::BC:
            r.lines.push_back(
                "Mild to moderate compression of the thecal sac with encroachment on nerve root "
                "canals, affecting " +
                pct + "% of the region.");
            break;
        case Grade::D:
            r.lines.push_back("Severe spinal canal stenosis affecting " + pct +
                              "% of the visualized area.");
            break;
    }
    if (ctx.mask_foreground > 0) {
        r.lines.push_back("Findings centered in the " + std::string(detail::centroid_third(ctx)) +
                          " third of the region; extent " +
                          std::to_string(ctx.mask_foreground) + " px, bounding box (" +
                          std::to_string(ctx.bbox_r0) + "," + std::to_string(ctx.bbox_c0) +
                          ")-(" + std::to_string(ctx.bbox_r1) + "," +
                          std::to_string(ctx.bbox_c1) + ").");
    } else {
        r.lines.push_back("No focal region delineated on the segmentation map.");
    }
    return r;
}

inline constexpr double kTokenProbFloor = 1e-12;

// Autoregressive NLL: -sum_t log P(w*_t | w*_<t>), summed over steps.
// step_distributions[t] is the predicted probability distribution at step t;
// gt_tokens[t] indexes into it. Probabilities are floored at 1e-12.
inline double arrg_nll(const std::vector<std::vector<double>>& step_distributions,
                       const std::vector<int>& gt_tokens) {
    if (step_distributions.size() != gt_tokens.size())
        throw InputError("arrg_nll: one distribution required per ground-truth step");
    double loss = 0.0;
    for (size_t t = 0; t < gt_tokens.size(); ++t) {
        const int w = gt_tokens[t];
        if (w < 0 || static_cast<size_t>(w) >= step_distributions[t].size())
            throw InputError("arrg_nll: ground-truth token out of distribution range at step " +
                             std::to_string(t));
        loss -= std::log(std::max(step_distributions[t][w], kTokenProbFloor));
    }
    return loss;
}

}  // namespace lss
