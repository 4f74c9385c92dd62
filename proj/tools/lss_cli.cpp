// Command-line front end: denoise, pseudomask, train, eval, report, metrics,
// ablate, synth. Exit codes: 0 ok, 1 input error, 2 runtime error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lss/lss.hpp"

namespace fs = std::filesystem;

namespace {

std::string output_root() {
    const char* env = std::getenv("LSS_OUT_ROOT");
    return env ? std::string(env) : std::string("out");
}

std::vector<fs::path> list_files(const std::string& dir, const char* what) {
    if (!fs::is_directory(dir)) throw lss::IoError(std::string(what) + ": not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

lss::TrainConfig build_config(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
    lss::TrainConfig cfg;
    if (!config_path.empty()) cfg = lss::load_config_file(config_path);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw lss::InputError("override must be key=value, got: " + kv);
        lss::apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

int cmd_denoise(const std::string& in_path, const std::string& out_path, double h,
                int patch_radius, int search_radius) {
    lss::NlmParams p;
    p.h = h;
    p.patch_radius = patch_radius;
    p.search_radius = search_radius;
    const lss::GrayImage img = lss::read_image(in_path);
    const lss::GrayImage out = lss::nlm_denoise(img, p);
    if (lss::has_suffix(out_path, ".pgm"))
        lss::write_pgm(out_path, out);
    else
        lss::write_png_gray8(out_path, out);
    std::cout << "denoised " << in_path << " -> " << out_path << "\n";
    return 0;
}

int cmd_pseudomask(const std::string& in_dir, const std::string& reports_dir,
                   const std::string& out_dir, double roi_fraction, bool denoise) {
    fs::create_directories(out_dir);
    const auto images = list_files(in_dir, "pseudomask --in");
    int written = 0;
    for (const auto& img_path : images) {
        const std::string stem = img_path.stem().string();
        fs::path report_path = fs::path(reports_dir) / (stem + ".txt");
        if (!fs::exists(report_path))
            throw lss::IoError("pseudomask: missing report for " + stem + " under " + reports_dir);

        lss::GrayImage img = lss::read_image(img_path.string());
        if (denoise) img = lss::nlm_denoise(img, lss::NlmParams{});
        const std::string text = lss::read_text_file(report_path.string());
        const lss::Grade grade = lss::parse_severity(lss::ReportText{text, stem});

        lss::PseudoMaskParams pm;
        pm.roi_fraction = roi_fraction;
        const lss::BinaryMask mask = lss::generate_pseudo_mask(img, grade, pm);

        const std::string mask_path = (fs::path(out_dir) / (stem + ".png")).string();
        lss::write_mask_png(mask_path, mask);

        nlohmann::ordered_json j;
        j["patient_id"] = stem;
        j["grade"] = lss::grade_name(grade);
        j["foreground_pixels"] = mask.foreground_count();
        std::ofstream side((fs::path(out_dir) / (stem + ".json")).string(), std::ios::binary);
        side << j.dump(2) << "\n";
        ++written;
    }
    std::cout << "pseudomask: wrote " << written << " masks to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_dir,
              const lss::TrainConfig& cfg) {
    const lss::DatasetManifest manifest = lss::load_dataset(data_dir, cfg.seed);
    const lss::RunArtifacts art = lss::train(manifest, cfg, out_dir);
    std::cout << "train: epochs " << art.epochs_run << " best_epoch " << art.best_epoch
              << " best_val_dice " << art.best_val_dice << "\n"
              << "checkpoint " << art.checkpoint_path << "\n";
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& checkpoint,
             const std::string& split, const std::string& out_dir, lss::TrainConfig cfg) {
    const lss::DatasetManifest manifest = lss::load_dataset(data_dir, cfg.seed);
    const lss::TinyNetParams params = lss::load_checkpoint(checkpoint);
    if (params.cfg.image_size != cfg.image_size || params.cfg.patch_size != cfg.patch_size)
        throw lss::InputError("eval: checkpoint geometry (" +
                              std::to_string(params.cfg.image_size) + "/" +
                              std::to_string(params.cfg.patch_size) +
                              ") does not match config geometry (" +
                              std::to_string(cfg.image_size) + "/" +
                              std::to_string(cfg.patch_size) + ")");
    const lss::EvalSummary sum =
        lss::evaluate(manifest, split, lss::make_net_predictor(params), cfg, out_dir);
    std::cout << "eval " << split << ": dice " << sum.mean_dice << " iou " << sum.mean_iou
              << " accuracy " << sum.classification.accuracy << "\n"
              << "metrics " << sum.metrics_json_path << "\n";
    return 0;
}

int cmd_report(const std::string& masks_dir, const std::string& out_dir, double roi_fraction) {
    fs::create_directories(out_dir);
    const auto masks = list_files(masks_dir, "report --masks");
    std::ofstream index((fs::path(out_dir) / "report_index.jsonl").string(), std::ios::binary);
    int written = 0;
    for (const auto& mask_path : masks) {
        if (mask_path.extension() != ".png") continue;
        const std::string stem = mask_path.stem().string();
        const lss::BinaryMask mask = lss::read_mask_png(mask_path.string());
        const lss::BinaryMask roi = lss::central_roi(mask.height, mask.width, roi_fraction);
        const lss::AreaStats stats = lss::affected_area(mask, roi);
        const lss::Grade grade = lss::grade_from_area(stats.affected_pct);
        const lss::Report report = lss::generate_report(
            lss::make_report_context(lss::PatchSequence(), mask), stats, grade);

        const std::string report_path = (fs::path(out_dir) / (stem + ".txt")).string();
        std::ofstream rf(report_path, std::ios::binary);
        rf << report.text();

        nlohmann::ordered_json j;
        j["patient_id"] = stem;
        j["grade"] = lss::grade_name(grade);
        j["affected_pct"] = stats.affected_pct;
        j["report_path"] = report_path;
        index << j.dump() << "\n";
        ++written;
    }
    std::cout << "report: wrote " << written << " reports to " << out_dir << "\n";
    return 0;
}

int cmd_metrics(const std::string& cand_dir, const std::string& refs_dir,
                const std::string& out_path) {
    const auto cand_files = list_files(cand_dir, "metrics --cand");
    std::vector<lss::EvalPair> pairs;
    std::vector<lss::TokenSeq> generated;
    for (const auto& cand_path : cand_files) {
        if (cand_path.extension() != ".txt") continue;
        const fs::path ref_path = fs::path(refs_dir) / cand_path.filename();
        if (!fs::exists(ref_path))
            throw lss::IoError("metrics: missing reference for " + cand_path.filename().string());
        lss::EvalPair p;
        p.candidate = lss::tokenize(lss::read_text_file(cand_path.string()));
        p.references = {lss::tokenize(lss::read_text_file(ref_path.string()))};
        generated.push_back(p.candidate);
        pairs.push_back(std::move(p));
    }
    if (pairs.empty()) throw lss::InputError("metrics: no candidate .txt files found");

    const lss::Corpus corpus = lss::Corpus::build(pairs);
    std::vector<lss::TokenSeq> cands;
    std::vector<std::vector<lss::TokenSeq>> refs;
    for (const auto& p : corpus.pairs) {
        cands.push_back(p.candidate);
        refs.push_back(p.references);
    }
    const lss::BleuScores bl = lss::corpus_bleu(cands, refs);
    double r1 = 0, r2 = 0, rl = 0, met = 0, jac = 0, tfidf = 0;
    for (const auto& p : corpus.pairs) {
        const lss::RougeScores rs = lss::rouge(p.candidate, p.references[0]);
        r1 += rs.rouge1;
        r2 += rs.rouge2;
        rl += rs.rougeL;
        met += lss::meteor(p.candidate, p.references[0]);
        jac += lss::jaccard(p.candidate, p.references[0]);
        tfidf += lss::tfidf_cosine(p.candidate, p.references[0], corpus);
    }
    const double n = static_cast<double>(corpus.pairs.size());
    nlohmann::ordered_json j;
    j["pairs"] = corpus.pairs.size();
    j["bleu1"] = bl.bleu[0];
    j["bleu2"] = bl.bleu[1];
    j["bleu3"] = bl.bleu[2];
    j["bleu4"] = bl.bleu[3];
    j["rouge1"] = r1 / n;
    j["rouge2"] = r2 / n;
    j["rougeL"] = rl / n;
    j["meteor"] = met / n;
    j["cider"] = lss::cider(corpus).mean;
    j["jaccard"] = jac / n;
    j["tfidf_cosine"] = tfidf / n;
    j["distinct1"] = lss::distinct_n(generated, 1);
    j["distinct2"] = lss::distinct_n(generated, 2);

    std::ofstream out(out_path, std::ios::binary);
    out << j.dump(2) << "\n";
    if (!out) throw lss::IoError("metrics: cannot write " + out_path);
    std::cout << "metrics: " << corpus.pairs.size() << " pairs -> " << out_path << "\n";
    return 0;
}

int cmd_ablate(const std::string& data_dir, const std::string& out_dir,
               const lss::TrainConfig& cfg) {
    const lss::DatasetManifest manifest = lss::load_dataset(data_dir, cfg.seed);
    const lss::AblationResult res = lss::ablation(manifest, cfg, out_dir);
    std::cout << "ablation (validation split):\n"
              << lss::read_text_file(res.table_path)
              << "controller trajectory: " << res.pid_run.controller_csv_path << "\n";
    return 0;
}

int cmd_synth(const std::string& out_dir, int n_images, int image_size, uint64_t seed) {
    lss::SyntheticSpec spec;
    spec.n_images = n_images;
    spec.image_size = image_size;
    spec.seed = seed;
    const lss::DatasetManifest m = lss::make_synthetic_corpus(out_dir, spec);
    std::cout << "synth: " << m.records.size() << " records under " << out_dir << " (train "
              << m.train_idx.size() << " / val " << m.val_idx.size() << " / test "
              << m.test_idx.size() << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lumbar spinal stenosis segmentation and reporting laboratory"};
    app.require_subcommand(1);

    // denoise
    auto* denoise = app.add_subcommand("denoise", "Non-local means denoising of one image");
    std::string dn_in, dn_out;
    double dn_h = 0.08;
    int dn_patch = 1, dn_search = 5;
    denoise->add_option("--in", dn_in, "input image (png/pgm)")->required();
    denoise->add_option("--out", dn_out, "output image path")->required();
    denoise->add_option("--h", dn_h, "filter decay");
    denoise->add_option("--patch-radius", dn_patch, "patch radius");
    denoise->add_option("--search-radius", dn_search, "search radius");

    // pseudomask
    auto* pmask = app.add_subcommand("pseudomask", "Report-conditioned pseudo-mask generation");
    std::string pm_in, pm_reports, pm_out;
    double pm_roi = 0.6;
    bool pm_denoise = false;
    pmask->add_option("--in", pm_in, "directory of images")->required();
    pmask->add_option("--reports", pm_reports, "directory of report .txt files")->required();
    pmask->add_option("--out", pm_out, "output directory")->required();
    pmask->add_option("--roi-fraction", pm_roi, "central ROI fraction");
    pmask->add_flag("--denoise", pm_denoise, "apply NLM before mask generation");

    // shared train-ish options
    std::string config_path;
    std::vector<std::string> overrides;

    auto add_cfg_opts = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option("--set", overrides, "config override key=value (repeatable)");
    };

    // train
    auto* train_cmd = app.add_subcommand("train", "Train the segmentation network");
    std::string tr_data, tr_out;
    train_cmd->add_option("--data", tr_data, "dataset root")->required();
    train_cmd->add_option("--out", tr_out, "output directory");
    add_cfg_opts(train_cmd);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    std::string ev_data, ev_ckpt, ev_split = "test", ev_out;
    eval_cmd->add_option("--data", ev_data, "dataset root")->required();
    eval_cmd->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--split", ev_split, "train|val|test");
    eval_cmd->add_option("--out", ev_out, "output directory");
    add_cfg_opts(eval_cmd);

    // report
    auto* report_cmd = app.add_subcommand("report", "Generate template reports from masks");
    std::string rp_masks, rp_out;
    double rp_roi = 0.6;
    report_cmd->add_option("--masks", rp_masks, "directory of mask PNGs")->required();
    report_cmd->add_option("--out", rp_out, "output directory");
    report_cmd->add_option("--roi-fraction", rp_roi, "central ROI fraction");

    // metrics
    auto* metrics_cmd = app.add_subcommand("metrics", "NLG metric row for generated reports");
    std::string mt_cand, mt_refs, mt_out = "metrics.json";
    metrics_cmd->add_option("--cand", mt_cand, "directory of candidate .txt files")->required();
    metrics_cmd->add_option("--refs", mt_refs, "directory of reference .txt files")->required();
    metrics_cmd->add_option("--out", mt_out, "output metrics.json path");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "PID-Tversky vs cross-entropy comparison");
    std::string ab_data, ab_out;
    ablate_cmd->add_option("--data", ab_data, "dataset root")->required();
    ablate_cmd->add_option("--out", ab_out, "output directory");
    add_cfg_opts(ablate_cmd);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic blob corpus");
    std::string sy_out;
    int sy_n = 250, sy_size = 64;
    uint64_t sy_seed = 7;
    synth_cmd->add_option("--out", sy_out, "corpus root directory")->required();
    synth_cmd->add_option("--n", sy_n, "number of images");
    synth_cmd->add_option("--size", sy_size, "image side in pixels");
    synth_cmd->add_option("--seed", sy_seed, "corpus seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (denoise->parsed()) return cmd_denoise(dn_in, dn_out, dn_h, dn_patch, dn_search);
        if (pmask->parsed()) return cmd_pseudomask(pm_in, pm_reports, pm_out, pm_roi, pm_denoise);
        if (train_cmd->parsed()) {
            const auto cfg = build_config(config_path, overrides);
            if (tr_out.empty()) tr_out = (fs::path(output_root()) / "train").string();
            return cmd_train(tr_data, tr_out, cfg);
        }
        if (eval_cmd->parsed()) {
            const auto cfg = build_config(config_path, overrides);
            if (ev_out.empty()) ev_out = (fs::path(output_root()) / "eval").string();
            return cmd_eval(ev_data, ev_ckpt, ev_split, ev_out, cfg);
        }
        if (report_cmd->parsed()) {
            if (rp_out.empty()) rp_out = (fs::path(output_root()) / "reports").string();
            return cmd_report(rp_masks, rp_out, rp_roi);
        }
        if (metrics_cmd->parsed()) return cmd_metrics(mt_cand, mt_refs, mt_out);
        if (ablate_cmd->parsed()) {
            const auto cfg = build_config(config_path, overrides);
            if (ab_out.empty()) ab_out = (fs::path(output_root()) / "ablation").string();
            return cmd_ablate(ab_data, ab_out, cfg);
        }
        if (synth_cmd->parsed()) return cmd_synth(sy_out, sy_n, sy_size, sy_seed);
    } catch (const lss::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 1;
    } catch (const lss::IoError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
