#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lss/checkpoint.hpp"
#include "lss/core.hpp"
#include "lss/dataset.hpp"
#include "lss/grading.hpp"
#include "lss/imaging.hpp"
#include "lss/metrics_seg.hpp"
#include "lss/metrics_text.hpp"
#include "lss/optimizer.hpp"
#include "lss/pid_loss.hpp"
#include "lss/pseudomask.hpp"
#include "lss/tinynet.hpp"

namespace lss {

enum class LossMode { PidTversky, Bce };

inline const char* loss_mode_name(LossMode m) {
    return m == LossMode::PidTversky ? "pid_tversky" : "bce";
}

struct TrainConfig {
    int batch_size = 8;
    double encoder_lr = 1e-5;
    double decoder_lr = 1e-3;
    double weight_decay = 0.01;
    int max_epochs = 30;
    int patience = 5;
    double early_stop_tol = 1e-4;

    // controller
    double pid_kp = 0.05;
    double pid_ki = 0.005;
    double pid_kd = 0.01;
    double beta_init = 0.75;
    double beta_min = 0.65;
    double beta_max = 0.85;
    double integral_max = 10.0;

    double gamma = 4.0 / 3.0;  // focal exponent of the Tversky loss
    LossMode loss = LossMode::PidTversky;

    // geometry
    int image_size = 64;
    int patch_size = 8;
    int d_vis = 32;
    int d_shared = 16;
    int d_k = 4;
    int n_heads = 8;

    // data handling
    double roi_fraction = 0.6;
    bool augment_enabled = true;
    bool nlm_denoise_enabled = false;
    std::string mask_source = "auto";  // auto | provided | pseudo
    uint64_t seed = 0;

    void validate() const {
        if (batch_size < 1) throw ParameterError("TrainConfig: batch_size must be >= 1");
        if (encoder_lr <= 0 || decoder_lr <= 0)
            throw ParameterError("TrainConfig: learning rates must be > 0 (use a tiny value to freeze)");
        if (weight_decay < 0) throw ParameterError("TrainConfig: weight_decay must be >= 0");
        if (max_epochs < 1) throw ParameterError("TrainConfig: max_epochs must be >= 1");
        if (patience < 1 || patience > max_epochs)
            throw ParameterError("TrainConfig: patience must be in [1, max_epochs]");
        if (!(gamma > 0)) throw ParameterError("TrainConfig: gamma must be > 0");
        if (mask_source != "auto" && mask_source != "provided" && mask_source != "pseudo")
            throw ParameterError("TrainConfig: mask_source must be auto|provided|pseudo");
    }

    TinyNetConfig net_config(int vocab_size) const {
        TinyNetConfig cfg;
        cfg.image_size = image_size;
        cfg.patch_size = patch_size;
        cfg.d_vis = d_vis;
        cfg.d_shared = d_shared;
        cfg.d_k = d_k;
        cfg.n_heads = n_heads;
        cfg.vocab_size = vocab_size;
        cfg.seed = seed;
        return cfg;
    }
};

// key=value config file; '#' starts a comment. Flags on the CLI override.
inline void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
    auto as_double = [&](const char* name) {
        try {
            return std::stod(value);
        } catch (...) {
            throw InputError(std::string("config: bad numeric value for ") + name + ": " + value);
        }
    };
    auto as_int = [&](const char* name) {
        try {
            return std::stoi(value);
        } catch (...) {
            throw InputError(std::string("config: bad integer value for ") + name + ": " + value);
        }
    };
    auto as_bool = [&](const char* name) {
        if (value == "true" || value == "1") return true;
        if (value == "false" || value == "0") return false;
        throw InputError(std::string("config: bad boolean value for ") + name + ": " + value);
    };

    if (key == "batch_size") cfg.batch_size = as_int(key.c_str());
    else if (key == "encoder_lr") cfg.encoder_lr = as_double(key.c_str());
    else if (key == "decoder_lr") cfg.decoder_lr = as_double(key.c_str());
    else if (key == "weight_decay") cfg.weight_decay = as_double(key.c_str());
    else if (key == "max_epochs") cfg.max_epochs = as_int(key.c_str());
    else if (key == "patience") cfg.patience = as_int(key.c_str());
    else if (key == "early_stop_tol") cfg.early_stop_tol = as_double(key.c_str());
    else if (key == "pid_kp") cfg.pid_kp = as_double(key.c_str());
    else if (key == "pid_ki") cfg.pid_ki = as_double(key.c_str());
    else if (key == "pid_kd") cfg.pid_kd = as_double(key.c_str());
    else if (key == "beta_init") cfg.beta_init = as_double(key.c_str());
    else if (key == "beta_min") cfg.beta_min = as_double(key.c_str());
    else if (key == "beta_max") cfg.beta_max = as_double(key.c_str());
    else if (key == "integral_max") cfg.integral_max = as_double(key.c_str());
    else if (key == "gamma") cfg.gamma = as_double(key.c_str());
    else if (key == "loss") {
        if (value == "pid_tversky") cfg.loss = LossMode::PidTversky;
        else if (value == "bce") cfg.loss = LossMode::Bce;
        else throw InputError("config: loss must be pid_tversky or bce, got " + value);
    }
    else if (key == "image_size") cfg.image_size = as_int(key.c_str());
    else if (key == "patch_size") cfg.patch_size = as_int(key.c_str());
    else if (key == "d_vis") cfg.d_vis = as_int(key.c_str());
    else if (key == "d_shared") cfg.d_shared = as_int(key.c_str());
    else if (key == "d_k") cfg.d_k = as_int(key.c_str());
    else if (key == "n_heads") cfg.n_heads = as_int(key.c_str());
    else if (key == "roi_fraction") cfg.roi_fraction = as_double(key.c_str());
    else if (key == "augment") cfg.augment_enabled = as_bool(key.c_str());
    else if (key == "denoise") cfg.nlm_denoise_enabled = as_bool(key.c_str());
    else if (key == "mask_source") cfg.mask_source = value;
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(std::stoull(value));
    else throw InputError("config: unknown key: " + key);
}

inline TrainConfig load_config_file(const std::string& path, TrainConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InputError("config: line " + std::to_string(line_no) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        apply_config_entry(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

// One clinical prompt per grade; the vocabulary is the whitespace tokenization
// of these three strings, fixed at build time.
inline const char* grade_prompt(Grade g) {
    switch (g) {
        case Grade::A: return "no significant stenosis open thecal sac";
        case Grade::BC: return "mild to moderate stenosis encroaching on the thecal sac";
        case Grade::D: return "severe stenosis with compressed thecal sac";
    }
    return "";
}

struct PromptVocab {
    std::map<std::string, int> word_to_id;

    static PromptVocab build() {
        PromptVocab v;
        for (Grade g : {Grade::A, Grade::BC, Grade::D}) {
            std::istringstream ss(grade_prompt(g));
            std::string w;
            while (ss >> w)
                if (!v.word_to_id.count(w))
                    v.word_to_id.emplace(w, static_cast<int>(v.word_to_id.size()));
        }
        return v;
    }

    int size() const { return static_cast<int>(word_to_id.size()); }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        std::istringstream ss(text);
        std::string w;
        while (ss >> w) {
            auto it = word_to_id.find(w);
            if (it == word_to_id.end()) throw InputError("prompt vocab: unknown word " + w);
            ids.push_back(it->second);
        }
        return ids;
    }

    std::vector<int> encode_grade(Grade g) const { return encode(grade_prompt(g)); }
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct LoadedExample {
    size_t record_idx = 0;
    GrayImage image;
    BinaryMask mask;  // training target (provided or pseudo)
    Grade prompt_grade = Grade::A;  // parse_severity of the report
    Grade label = Grade::A;         // manifest grade
    std::string patient_id;
    std::string report_text;
};

struct RunArtifacts {
    std::string out_dir;
    std::string checkpoint_path;
    std::string controller_csv_path;
    std::string log_path;
    std::string epochs_jsonl_path;
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_dice = 0.0;
};

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline LoadedExample load_example(const DatasetManifest& manifest, size_t idx,
                                  const TrainConfig& cfg) {
    const DatasetRecord& rec = manifest.records[idx];
    LoadedExample ex;
    ex.record_idx = idx;
    ex.patient_id = rec.patient_id;
    ex.label = rec.grade_label;
    ex.image = read_image(rec.image_path);
    if (cfg.nlm_denoise_enabled) ex.image = nlm_denoise(ex.image, NlmParams{});
    ex.report_text = read_text_file(rec.report_path);
    ex.prompt_grade = parse_severity(ReportText{ex.report_text, rec.patient_id});

    const bool want_provided = cfg.mask_source == "provided" ||
                               (cfg.mask_source == "auto" && !rec.mask_path.empty());
    if (want_provided) {
        if (rec.mask_path.empty())
            throw InputError("train: mask_source=provided but record " + rec.patient_id +
                             " has no mask path");
        ex.mask = read_mask_png(rec.mask_path);
    } else {
        PseudoMaskParams pm;
        pm.roi_fraction = cfg.roi_fraction;
        ex.mask = generate_pseudo_mask(ex.image, ex.prompt_grade, pm);
    }
    if (!ex.mask.same_shape(ex.image))
        throw ShapeError("train: mask/image shape mismatch for record " + rec.patient_id);
    return ex;
}

inline double mean_dice(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace detail

// Per-epoch loop: shuffled size-8 batches (remainder kept), forward with the
// adaptive focal Tversky loss (or the cross-entropy baseline), analytic
// backward, AdamW step per batch. At epoch end the hard confusion over the
// train set feeds the PID update — exactly once, after the last batch and
// before validation — then validation Dice drives early stopping.
inline RunArtifacts train(const DatasetManifest& manifest, const TrainConfig& config,
                          const std::string& out_dir) {
    config.validate();
    if (manifest.train_idx.empty() || manifest.val_idx.empty())
        throw InputError("train: empty train or val split");

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    RunArtifacts art;
    art.out_dir = out_dir;
    art.checkpoint_path = (fs::path(out_dir) / "checkpoint.lss").string();
    art.controller_csv_path = (fs::path(out_dir) / "controller.csv").string();
    art.log_path = (fs::path(out_dir) / "train.log").string();
    art.epochs_jsonl_path = (fs::path(out_dir) / "epochs.jsonl").string();

    std::ofstream log(art.log_path, std::ios::binary);
    std::ofstream controller_csv(art.controller_csv_path, std::ios::binary);
    std::ofstream epochs_jsonl(art.epochs_jsonl_path, std::ios::binary);
    if (!log || !controller_csv || !epochs_jsonl)
        throw IoError("train: cannot create artifacts under " + out_dir);
    controller_csv << "epoch,e,u,alpha,beta,fp,fn\n";

    const PromptVocab vocab = PromptVocab::build();
    TinyNetParams params = init_params(config.net_config(vocab.size()));
    TinyNetOptimizer optimizer(params, config.encoder_lr, config.decoder_lr, config.weight_decay);

    PidState pid;
    pid.kp = config.pid_kp;
    pid.ki = config.pid_ki;
    pid.kd = config.pid_kd;
    pid.beta = config.beta_init;
    pid.beta_min = config.beta_min;
    pid.beta_max = config.beta_max;
    pid.integral_max = config.integral_max;

    LossParams loss_params;
    loss_params.gamma = config.gamma;

    // pseudo-masks (or provided masks) are generated once at load and cached;
    // augmentation later transforms image and cached mask jointly
    std::vector<LoadedExample> train_set, val_set;
    train_set.reserve(manifest.train_idx.size());
    for (size_t idx : manifest.train_idx)
        train_set.push_back(detail::load_example(manifest, idx, config));
    for (size_t idx : manifest.val_idx)
        val_set.push_back(detail::load_example(manifest, idx, config));

    AugmentationSpec aug_spec;
    aug_spec.seed = config.seed;

    TinyNetParams best_params = params;
    double best_dice = -1.0;
    int best_epoch = 0;
    int stall = 0;

    const bool adaptive = config.loss == LossMode::PidTversky;
    log << "run loss=" << loss_mode_name(config.loss) << " seed=" << config.seed
        << " train=" << train_set.size() << " val=" << val_set.size() << "\n";

    int epochs_run = 0;
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        epochs_run = epoch;

        std::vector<size_t> order(train_set.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(config.seed, 1, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        long batches = 0;
        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            const size_t end = std::min(order.size(), start + config.batch_size);
            TinyNetGrads batch_grads = zero_grads(params);
            double batch_loss = 0.0;
            const double inv_batch = 1.0 / static_cast<double>(end - start);

            for (size_t k = start; k < end; ++k) {
                const LoadedExample& ex = train_set[order[k]];
                GrayImage img = ex.image;
                BinaryMask target = ex.mask;
                if (config.augment_enabled) {
                    Rng aug_rng(derive_seed(config.seed, 100 + static_cast<uint64_t>(epoch),
                                            static_cast<uint64_t>(order[k])));
                    auto [a_img, a_mask] = augment(img, target, aug_spec, aug_rng);
                    img = std::move(a_img);
                    target = std::move(a_mask);
                }
                ForwardCache cache;
                const ForwardResult fwd =
                    forward(img, vocab.encode_grade(ex.prompt_grade), params, true, &cache, &params);

                LossValueGrad lv;
                if (adaptive)
                    lv = focal_tversky_loss(fwd.prob, target, pid.alpha(), pid.beta, loss_params);
                else
                    lv = bce_loss(fwd.prob, target);
                if (!std::isfinite(lv.loss))
                    throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                       " batch " + std::to_string(batches));
                batch_loss += lv.loss * inv_batch;
                const TinyNetGrads g = backward(cache, params, lv.grad);
                accumulate_grads(batch_grads, g, inv_batch);
            }
            optimizer.step(params, batch_grads);
            epoch_loss += batch_loss;
            ++batches;
        }
        epoch_loss /= static_cast<double>(batches);

        char prefix[16];
        std::snprintf(prefix, sizeof(prefix), "epoch %03d", epoch);
        log << prefix << " batches " << batches << " train_loss " << detail::fmt(epoch_loss)
            << "\n";

        // controller update from the hard confusion over the train set
        if (adaptive) {
            ConfusionCounts agg;
            for (const LoadedExample& ex : train_set) {
                const ForwardResult fwd =
                    forward(ex.image, vocab.encode_grade(ex.prompt_grade), params, false);
                const ConfusionCounts c = hard_confusion(fwd.prob, ex.mask);
                agg.tp += c.tp;
                agg.fp += c.fp;
                agg.fn += c.fn;
                agg.tn += c.tn;
            }
            const double e_t = imbalance_signal(agg);
            const double u_t = pid_update(pid, e_t);
            log << prefix << " controller e " << detail::fmt(e_t) << " u " << detail::fmt(u_t)
                << " alpha " << detail::fmt(pid.alpha()) << " beta " << detail::fmt(pid.beta)
                << " fp " << static_cast<long>(agg.fp) << " fn " << static_cast<long>(agg.fn)
                << "\n";
            controller_csv << epoch << ',' << detail::fmt(e_t) << ',' << detail::fmt(u_t) << ','
                           << detail::fmt(pid.alpha()) << ',' << detail::fmt(pid.beta) << ','
                           << static_cast<long>(agg.fp) << ',' << static_cast<long>(agg.fn)
                           << "\n";
        }

        // validation
        std::vector<double> dices;
        dices.reserve(val_set.size());
        for (const LoadedExample& ex : val_set) {
            const ForwardResult fwd =
                forward(ex.image, vocab.encode_grade(ex.prompt_grade), params, false);
            dices.push_back(seg_score(fwd.prob.threshold(), ex.mask).dice);
        }
        const double val_dice = detail::mean_dice(dices);

        if (val_dice > best_dice + config.early_stop_tol) {
            best_dice = val_dice;
            best_epoch = epoch;
            best_params = params;
            stall = 0;
        } else {
            ++stall;
        }
        log << prefix << " val dice " << detail::fmt(val_dice) << " best "
            << detail::fmt(best_dice) << " stall " << stall << "\n";

        nlohmann::ordered_json j;
        j["epoch"] = epoch;
        j["train_loss"] = epoch_loss;
        j["val_dice"] = val_dice;
        j["alpha"] = pid.alpha();
        j["beta"] = pid.beta;
        epochs_jsonl << j.dump() << "\n";

        if (stall >= config.patience) {
            log << prefix << " early stop (no val improvement for " << config.patience
                << " epochs)\n";
            break;
        }
    }

    save_checkpoint(art.checkpoint_path, best_params);
    art.epochs_run = epochs_run;
    art.best_epoch = best_epoch;
    art.best_val_dice = best_dice;
    log << "done epochs " << epochs_run << " best_epoch " << best_epoch << " best_val_dice "
        << detail::fmt(best_dice) << "\n";
    return art;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalSummary {
    double mean_dice = 0.0;
    double mean_iou = 0.0;
    double mean_precision = 0.0;
    double mean_recall = 0.0;
    double mean_specificity = 0.0;
    double mean_hausdorff = 0.0;  // finite pairs only
    long hausdorff_infinite = 0;
    ClassReport classification;
    nlohmann::ordered_json text_metrics;
    std::string metrics_json_path;
    std::string reports_dir;
    std::string report_index_path;
};

// predictor: record + preprocessed image -> predicted mask (+ optional patch
// features for the report context).
struct Prediction {
    BinaryMask mask;
    PatchSequence features;  // may be empty
};
using Predictor = std::function<Prediction(const DatasetRecord&, const GrayImage&)>;

inline Predictor make_net_predictor(const TinyNetParams& params) {
    const PromptVocab vocab = PromptVocab::build();
    return [params, vocab](const DatasetRecord& record, const GrayImage& img) {
        // the report is an input modality here, as in training
        Grade prompt_grade = Grade::BC;
        if (!record.report_path.empty()) {
            const std::string text = read_text_file(record.report_path);
            prompt_grade = parse_severity(ReportText{text, record.patient_id});
        }
        const ForwardResult fwd = forward(img, vocab.encode_grade(prompt_grade), params, false);
        Prediction p;
        p.mask = fwd.prob.threshold();
        p.features = embed_patches(img, params);
        return p;
    };
}

inline EvalSummary evaluate(const DatasetManifest& manifest, const std::string& split,
                            const Predictor& predictor, const TrainConfig& config,
                            const std::string& out_dir) {
    namespace fs = std::filesystem;
    const std::vector<size_t>& indices = manifest.split(split);
    if (indices.empty()) throw InputError("evaluate: empty split " + split);
    fs::create_directories(out_dir);
    const std::string reports_dir = (fs::path(out_dir) / "reports").string();
    fs::create_directories(reports_dir);

    EvalSummary sum;
    sum.reports_dir = reports_dir;
    sum.metrics_json_path = (fs::path(out_dir) / "metrics.json").string();
    sum.report_index_path = (fs::path(out_dir) / "report_index.jsonl").string();

    std::ofstream index(sum.report_index_path, std::ios::binary);
    if (!index) throw IoError("evaluate: cannot write report index");

    std::vector<Grade> pred_grades, true_grades;
    std::vector<TokenSeq> gen_tokens;
    std::vector<EvalPair> text_pairs;
    double dice = 0, iou = 0, prec = 0, rec = 0, spec = 0, haus = 0;
    long haus_n = 0;

    for (size_t idx : indices) {
        const DatasetRecord& record = manifest.records[idx];
        const LoadedExample ex = detail::load_example(manifest, idx, config);
        const Prediction pred = predictor(record, ex.image);
        if (!pred.mask.same_shape(ex.image))
            throw ShapeError("evaluate: predictor output shape mismatch for " + record.patient_id);

        const SegScore s = seg_score(pred.mask, ex.mask);
        dice += s.dice;
        iou += s.iou;
        prec += s.precision;
        rec += s.recall;
        spec += s.specificity;
        const double h = hausdorff(pred.mask, ex.mask);
        if (std::isfinite(h)) {
            haus += h;
            ++haus_n;
        } else {
            ++sum.hausdorff_infinite;
        }

        const BinaryMask roi = central_roi(ex.image.height, ex.image.width, config.roi_fraction);
        const AreaStats stats = affected_area(pred.mask, roi);
        const Grade grade = grade_from_area(stats.affected_pct);
        pred_grades.push_back(grade);
        true_grades.push_back(ex.label);

        const Report report =
            generate_report(make_report_context(pred.features, pred.mask), stats, grade);
        const std::string report_path =
            (fs::path(reports_dir) / (record.patient_id + ".txt")).string();
        std::ofstream rf(report_path, std::ios::binary);
        rf << report.text();
        if (!rf) throw IoError("evaluate: cannot write report for " + record.patient_id);

        nlohmann::ordered_json ij;
        ij["patient_id"] = record.patient_id;
        ij["grade"] = grade_name(grade);
        ij["affected_pct"] = stats.affected_pct;
        ij["report_path"] = report_path;
        index << ij.dump() << "\n";

        const TokenSeq cand = tokenize(report.text());
        const TokenSeq ref = tokenize(ex.report_text);
        gen_tokens.push_back(cand);
        text_pairs.push_back(EvalPair{cand, {ref}});
    }

    const double n = static_cast<double>(indices.size());
    sum.mean_dice = dice / n;
    sum.mean_iou = iou / n;
    sum.mean_precision = prec / n;
    sum.mean_recall = rec / n;
    sum.mean_specificity = spec / n;
    sum.mean_hausdorff = haus_n > 0 ? haus / static_cast<double>(haus_n) : 0.0;
    sum.classification = classification_report(pred_grades, true_grades);

    // Table-4-shaped text metric row
    const Corpus corpus = Corpus::build(text_pairs);
    std::vector<TokenSeq> cands;
    std::vector<std::vector<TokenSeq>> refs;
    for (const auto& p : corpus.pairs) {
        cands.push_back(p.candidate);
        refs.push_back(p.references);
    }
    const BleuScores bl = corpus_bleu(cands, refs);
    double r1 = 0, r2 = 0, rl = 0, met = 0, jac = 0, tfidf = 0;
    for (const auto& p : corpus.pairs) {
        const RougeScores rs = rouge(p.candidate, p.references[0]);
        r1 += rs.rouge1;
        r2 += rs.rouge2;
        rl += rs.rougeL;
        met += meteor(p.candidate, p.references[0]);
        jac += jaccard(p.candidate, p.references[0]);
        tfidf += tfidf_cosine(p.candidate, p.references[0], corpus);
    }
    const double np = static_cast<double>(corpus.pairs.size());
    const CiderResult cd = cider(corpus);

    nlohmann::ordered_json tm;
    tm["bleu1"] = bl.bleu[0];
    tm["bleu2"] = bl.bleu[1];
    tm["bleu3"] = bl.bleu[2];
    tm["bleu4"] = bl.bleu[3];
    tm["rouge1"] = r1 / np;
    tm["rouge2"] = r2 / np;
    tm["rougeL"] = rl / np;
    tm["meteor"] = met / np;
    tm["cider"] = cd.mean;
    tm["jaccard"] = jac / np;
    tm["tfidf_cosine"] = tfidf / np;
    tm["distinct1"] = distinct_n(gen_tokens, 1);
    tm["distinct2"] = distinct_n(gen_tokens, 2);
    sum.text_metrics = tm;

    // metrics.json: segmentation + classification + text blocks
    nlohmann::ordered_json out;
    out["split"] = split;
    out["count"] = indices.size();
    nlohmann::ordered_json seg;
    seg["dice"] = sum.mean_dice;
    seg["iou"] = sum.mean_iou;
    seg["precision"] = sum.mean_precision;
    seg["recall"] = sum.mean_recall;
    seg["specificity"] = sum.mean_specificity;
    seg["hausdorff_mean"] = sum.mean_hausdorff;
    seg["hausdorff_infinite"] = sum.hausdorff_infinite;
    out["segmentation"] = seg;

    nlohmann::ordered_json cls;
    const char* names[3] = {"A", "BC", "D"};
    for (int k = 0; k < 3; ++k) {
        nlohmann::ordered_json row;
        row["precision"] = sum.classification.precision[k];
        row["recall"] = sum.classification.recall[k];
        row["f1"] = sum.classification.f1[k];
        row["specificity"] = sum.classification.specificity[k];
        cls[names[k]] = row;
    }
    cls["macro_precision"] = sum.classification.macro_precision;
    cls["macro_recall"] = sum.classification.macro_recall;
    cls["macro_f1"] = sum.classification.macro_f1;
    cls["accuracy"] = sum.classification.accuracy;
    nlohmann::ordered_json conf = nlohmann::ordered_json::array();
    for (int t = 0; t < 3; ++t) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (int p = 0; p < 3; ++p) row.push_back(sum.classification.confusion[t][p]);
        conf.push_back(row);
    }
    cls["confusion"] = conf;
    out["classification"] = cls;
    out["text"] = tm;

    std::ofstream mj(sum.metrics_json_path, std::ios::binary);
    mj << out.dump(2) << "\n";
    if (!mj) throw IoError("evaluate: cannot write metrics.json");

    // aligned-text table mirroring the per-grade rows + macro column layout
    std::ofstream table((fs::path(out_dir) / "classification_table.txt").string(),
                        std::ios::binary);
    table << "metric      Grade A   Grade BC  Grade D   Macro     Accuracy\n";
    auto put_row = [&](const char* name, const std::array<double, 3>& v, double macro,
                       const char* acc) {
        char buf[120];
        std::snprintf(buf, sizeof(buf), "%-10s  %-8.4f  %-8.4f  %-8.4f  %-8.4f  %s\n", name, v[0],
                      v[1], v[2], macro, acc);
        table << buf;
    };
    char accbuf[16];
    std::snprintf(accbuf, sizeof(accbuf), "%.2f%%", 100.0 * sum.classification.accuracy);
    put_row("precision", sum.classification.precision, sum.classification.macro_precision, accbuf);
    put_row("recall", sum.classification.recall, sum.classification.macro_recall, "");
    put_row("f1", sum.classification.f1, sum.classification.macro_f1, "");
    return sum;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string loss;
    double dice = 0.0;
    double iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double specificity = 0.0;
};

struct AblationResult {
    AblationRow bce;
    AblationRow pid;
    RunArtifacts bce_run;
    RunArtifacts pid_run;
    std::string table_path;
    std::string json_path;
};

// Two runs identical except the loss, same seed; emits a Table-5-shaped
// comparison plus the adaptive run's (alpha, beta) trajectory.
inline AblationResult ablation(const DatasetManifest& manifest, const TrainConfig& base_config,
                               const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    auto run_arm = [&](LossMode mode, const std::string& subdir) {
        TrainConfig cfg = base_config;
        cfg.loss = mode;
        const std::string dir = (fs::path(out_dir) / subdir).string();
        RunArtifacts art = train(manifest, cfg, dir);
        const TinyNetParams params = load_checkpoint(art.checkpoint_path);
        const EvalSummary ev =
            evaluate(manifest, "val", make_net_predictor(params), cfg, dir + "/eval");
        AblationRow row;
        row.loss = loss_mode_name(mode);
        row.dice = ev.mean_dice;
        row.iou = ev.mean_iou;
        row.precision = ev.mean_precision;
        row.recall = ev.mean_recall;
        row.specificity = ev.mean_specificity;
        return std::make_pair(row, art);
    };

    AblationResult res;
    std::tie(res.bce, res.bce_run) = run_arm(LossMode::Bce, "bce");
    std::tie(res.pid, res.pid_run) = run_arm(LossMode::PidTversky, "pid_tversky");

    res.table_path = (fs::path(out_dir) / "ablation_table.txt").string();
    std::ofstream table(res.table_path, std::ios::binary);
    table << "loss           Dice      IoU       Prec.     Recall    Spec.\n";
    auto put = [&](const AblationRow& r) {
        char buf[120];
        std::snprintf(buf, sizeof(buf), "%-13s  %-8.4f  %-8.4f  %-8.4f  %-8.4f  %-8.4f\n",
                      r.loss.c_str(), r.dice, r.iou, r.precision, r.recall, r.specificity);
        table << buf;
    };
    put(res.bce);
    put(res.pid);

    res.json_path = (fs::path(out_dir) / "ablation.json").string();
    nlohmann::ordered_json j;
    auto row_json = [](const AblationRow& r) {
        nlohmann::ordered_json o;
        o["loss"] = r.loss;
        o["dice"] = r.dice;
        o["iou"] = r.iou;
        o["precision"] = r.precision;
        o["recall"] = r.recall;
        o["specificity"] = r.specificity;
        return o;
    };
    j["rows"] = nlohmann::ordered_json::array({row_json(res.bce), row_json(res.pid)});
    j["controller_trajectory_csv"] = res.pid_run.controller_csv_path;
    std::ofstream jf(res.json_path, std::ios::binary);
    jf << j.dump(2) << "\n";
    return res;
}

}  // namespace lss
