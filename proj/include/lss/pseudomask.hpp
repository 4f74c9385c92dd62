#pragma once

#include <algorithm>
#include <cctype>
#include <string>

#include "lss/core.hpp"
#include "lss/imaging.hpp"

namespace lss {

struct ReportText {
    std::string text;
    std::string patient_id;

    void validate() const {
        if (text.empty()) throw InputError("ReportText: empty text");
    }
};

namespace detail {

inline std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline bool contains(const std::string& haystack, const char* needle) {
    return haystack.find(needle) != std::string::npos;
}

}  // namespace detail

// Keyword rule, case-insensitive, first match wins:
//   "severe" -> D; any of {"no evidence", "no significant", "normal",
//   "minimal"} -> A; everything else (mild/moderate wording) -> BC.
inline Grade parse_severity(const ReportText& report) {
    report.validate();
    const std::string t = detail::to_lower(report.text);
    if (detail::contains(t, "severe")) return Grade::D;
    if (detail::contains(t, "no evidence") || detail::contains(t, "no significant") ||
        detail::contains(t, "normal") || detail::contains(t, "minimal"))
        return Grade::A;
    return Grade::BC;
}

struct PseudoMaskParams {
    double canny_sigma = 1.4;
    double canny_low = 0.1;
    double canny_high = 0.3;
    int severe_kernel = 9;   // dilation + closing kernel for grade D
    int mild_dilate = 5;     // k_s for the non-severe branch
    int mild_erode = 3;
    double roi_fraction = 0.6;  // central window approximating the spinal canal region
};

// Central roi_fraction x roi_fraction window of an H x W grid.
inline BinaryMask central_roi(int height, int width, double fraction) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw ParameterError("central_roi: fraction must be in (0,1]");
    BinaryMask roi(height, width);
    const int rh = std::max(1, static_cast<int>(std::lround(height * fraction)));
    const int rw = std::max(1, static_cast<int>(std::lround(width * fraction)));
    const int r0 = (height - rh) / 2;
    const int c0 = (width - rw) / 2;
    for (int r = r0; r < r0 + rh; ++r)
        for (int c = c0; c < c0 + rw; ++c) roi.at(r, c) = 1;
    return roi;
}

// Severity-conditioned pseudo-ground-truth:
//   B = otsu(X), E = canny(X), R = B u E;
//   grade D:   R <- close(dilate(R, 9x9), 9x9)
//   otherwise: R <- erode(dilate(R, k_s), 3x3)
// then restricted to the central ROI window. Grade A runs the non-severe
// branch; the area-based grading downstream is what distinguishes A.
inline BinaryMask generate_pseudo_mask(const GrayImage& img, Grade grade,
                                       const PseudoMaskParams& params = {}) {
    const OtsuResult otsu = otsu_threshold(img);  // degenerate input propagates
    const BinaryMask edges = canny_edges(img, params.canny_sigma, params.canny_low, params.canny_high);
    BinaryMask region = mask_union(otsu.mask, edges);

    if (grade == Grade::D) {
        const Kernel k{params.severe_kernel};
        region = morph(morph(region, MorphKind::Dilate, k), MorphKind::Close, k);
    } else {
        region = morph(morph(region, MorphKind::Dilate, Kernel{params.mild_dilate}),
                       MorphKind::Erode, Kernel{params.mild_erode});
    }
    return mask_intersect(region, central_roi(img.height, img.width, params.roi_fraction));
}

}  // namespace lss
