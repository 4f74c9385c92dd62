#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lss/core.hpp"
#include "lss/grading.hpp"
#include "lss/image_io.hpp"
#include "lss/pseudomask.hpp"
#include "lss/rng.hpp"

namespace lss {

struct DatasetRecord {
    std::string patient_id;
    std::string image_path;
    std::string report_path;
    Grade grade_label = Grade::A;
    std::string mask_path;  // optional; empty -> pseudo-mask generation
};

struct DatasetManifest {
    std::string root;
    std::vector<DatasetRecord> records;
    std::vector<size_t> train_idx;
    std::vector<size_t> val_idx;
    std::vector<size_t> test_idx;
    uint64_t seed = 0;

    const std::vector<size_t>& split(const std::string& name) const {
        if (name == "train") return train_idx;
        if (name == "val") return val_idx;
        if (name == "test") return test_idx;
        throw InputError("unknown split: " + name);
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    for (auto& f : fields) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.erase(f.begin());
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.pop_back();
    }
    return fields;
}

}  // namespace detail

// Layout: root/manifest.csv with columns patient_id,image,report,grade[,mask];
// paths are relative to root. The split is a seeded shuffle cut 70/15/15
// (floor for train and val, remainder to test).
inline DatasetManifest load_dataset(const std::string& root_dir, uint64_t seed = 0,
                                    double train_frac = 0.70, double val_frac = 0.15) {
    namespace fs = std::filesystem;
    const fs::path root(root_dir);
    const fs::path manifest_path = root / "manifest.csv";
    if (!fs::exists(manifest_path))
        throw IoError("load_dataset: missing manifest.csv under " + root_dir);

    std::ifstream in(manifest_path);
    if (!in) throw IoError("load_dataset: cannot open " + manifest_path.string());

    DatasetManifest m;
    m.root = root_dir;
    m.seed = seed;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto fields = detail::split_csv_line(line);
        if (line_no == 1 && !fields.empty() && fields[0] == "patient_id") continue;  // header
        if (fields.size() < 4 || fields.size() > 5)
            throw InputError("load_dataset: line " + std::to_string(line_no) +
                             ": expected 4 or 5 fields, got " + std::to_string(fields.size()));
        DatasetRecord rec;
        rec.patient_id = fields[0];
        rec.image_path = (root / fields[1]).string();
        rec.report_path = (root / fields[2]).string();
        try {
            rec.grade_label = grade_from_name(fields[3]);
        } catch (const InputError&) {
            throw InputError("load_dataset: line " + std::to_string(line_no) +
                             ": bad grade '" + fields[3] + "'");
        }
        if (fields.size() == 5 && !fields[4].empty()) rec.mask_path = (root / fields[4]).string();
        if (rec.patient_id.empty())
            throw InputError("load_dataset: line " + std::to_string(line_no) +
                             ": empty patient_id");
        if (!fs::exists(rec.image_path))
            throw IoError("load_dataset: record " + rec.patient_id + ": missing image file " +
                          rec.image_path);
        if (!fs::exists(rec.report_path))
            throw IoError("load_dataset: record " + rec.patient_id + ": missing report file " +
                          rec.report_path);
        if (!rec.mask_path.empty() && !fs::exists(rec.mask_path))
            throw IoError("load_dataset: record " + rec.patient_id + ": missing mask file " +
                          rec.mask_path);
        m.records.push_back(std::move(rec));
    }
    if (m.records.empty()) throw InputError("load_dataset: manifest has no records");

    std::vector<size_t> order(m.records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const size_t n = order.size();
    const size_t n_train = static_cast<size_t>(train_frac * static_cast<double>(n));
    const size_t n_val = static_cast<size_t>(val_frac * static_cast<double>(n));
    for (size_t i = 0; i < n; ++i) {
        if (i < n_train)
            m.train_idx.push_back(order[i]);
        else if (i < n_train + n_val)
            m.val_idx.push_back(order[i]);
        else
            m.test_idx.push_back(order[i]);
    }
    return m;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Synthetic blob corpus
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    int n_images = 250;
    int image_size = 64;
    uint64_t seed = 7;
    double empty_fraction = 0.1;      // images with no lesion at all
    double background_lo = 0.30;
    double background_hi = 0.42;
    double contrast_lo = 0.10;
    double contrast_hi = 0.22;
    double noise_sigma = 0.06;
    double radius_lo_frac = 0.06;     // ellipse radii as fraction of image size
    double radius_hi_frac = 0.16;
    double roi_fraction = 0.6;        // grading window used for the labels
};

// Writes images/, reports/, masks/ and manifest.csv under root. Each image
// is a noisy field with at most one bright elliptical lesion; the grade label
// is derived from the mask area inside the grading ROI, and the reference
// report is the deterministic template for that grade.
inline DatasetManifest make_synthetic_corpus(const std::string& root_dir,
                                             const SyntheticSpec& spec) {
    namespace fs = std::filesystem;
    const fs::path root(root_dir);
    fs::create_directories(root / "images");
    fs::create_directories(root / "reports");
    fs::create_directories(root / "masks");

    Rng rng(spec.seed);
    std::ofstream manifest(root / "manifest.csv");
    if (!manifest) throw IoError("make_synthetic_corpus: cannot write manifest.csv");
    manifest << "patient_id,image,report,grade,mask\n";

    const int S = spec.image_size;
    const BinaryMask roi = central_roi(S, S, spec.roi_fraction);

    for (int i = 0; i < spec.n_images; ++i) {
        char pid[16];
        std::snprintf(pid, sizeof(pid), "%04d", i);

        const double bg = rng.uniform(spec.background_lo, spec.background_hi);
        GrayImage img(S, S, bg);
        BinaryMask mask(S, S);

        const bool empty = rng.uniform() < spec.empty_fraction;
        if (!empty) {
            const double cr = rng.uniform(0.35, 0.65) * S;
            const double cc = rng.uniform(0.35, 0.65) * S;
            const double ra = rng.uniform(spec.radius_lo_frac, spec.radius_hi_frac) * S;
            const double rb = rng.uniform(spec.radius_lo_frac, spec.radius_hi_frac) * S;
            const double contrast = rng.uniform(spec.contrast_lo, spec.contrast_hi);
            for (int r = 0; r < S; ++r)
                for (int c = 0; c < S; ++c) {
                    const double dr = (r - cr) / ra;
                    const double dc = (c - cc) / rb;
                    const double q = dr * dr + dc * dc;
                    if (q <= 1.0) {
                        mask.at(r, c) = 1;
                        // soft interior profile so edges are not trivial
                        img.at(r, c) = bg + contrast * (1.0 - 0.3 * q);
                    }
                }
        }
        for (double& v : img.data) v = clamp01(v + spec.noise_sigma * rng.normal());

        const AreaStats stats = affected_area(mask, roi);
        const Grade grade = grade_from_area(stats.affected_pct);
        const Report report =
            generate_report(make_report_context(PatchSequence(), mask), stats, grade);

        const std::string img_rel = std::string("images/") + pid + ".png";
        const std::string rep_rel = std::string("reports/") + pid + ".txt";
        const std::string mask_rel = std::string("masks/") + pid + ".png";
        write_png_gray8((root / img_rel).string(), img);
        write_mask_png((root / mask_rel).string(), mask);
        std::ofstream rep(root / rep_rel, std::ios::binary);
        rep << report.text();
        if (!rep) throw IoError("make_synthetic_corpus: cannot write report " + rep_rel);
        rep.close();

        manifest << pid << ',' << img_rel << ',' << rep_rel << ',' << grade_name(grade) << ','
                 << mask_rel << '\n';
    }
    manifest.close();
    return load_dataset(root_dir, spec.seed);
}

}  // namespace lss
