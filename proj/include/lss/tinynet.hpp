#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "lss/core.hpp"
#include "lss/rng.hpp"

namespace lss {

// ---------------------------------------------------------------------------
// Small dense containers
// ---------------------------------------------------------------------------

struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

// Row-major n_patches x dim patch feature sequence.
struct PatchSequence {
    int n_patches = 0;
    int dim = 0;
    std::vector<double> data;

    PatchSequence() = default;
    PatchSequence(int n, int d) : n_patches(n), dim(d), data(static_cast<size_t>(n) * d, 0.0) {}
    double& at(int p, int d) { return data[static_cast<size_t>(p) * dim + d]; }
    double at(int p, int d) const { return data[static_cast<size_t>(p) * dim + d]; }
};

struct TextEmbedding {
    int dim = 0;
    std::vector<double> data;
};

// Sigmoid output map; values kept strictly inside (0,1).
struct ProbMap {
    int height = 0;
    int width = 0;
    std::vector<double> probs;

    ProbMap() = default;
    ProbMap(int h, int w, double fill = 0.5)
        : height(h), width(w), probs(static_cast<size_t>(h) * w, fill) {}
    double& at(int r, int c) { return probs[static_cast<size_t>(r) * width + c]; }
    double at(int r, int c) const { return probs[static_cast<size_t>(r) * width + c]; }
    size_t size() const { return probs.size(); }

    BinaryMask threshold(double t = 0.5) const {
        BinaryMask m(height, width);
        for (size_t i = 0; i < probs.size(); ++i) m.bits[i] = probs[i] > t ? 1 : 0;
        return m;
    }
};

// Per-head attention weights over patches, rows = heads.
struct AttnMap {
    int n_heads = 0;
    int n_patches = 0;
    std::vector<double> weights;

    AttnMap() = default;
    AttnMap(int h, int n) : n_heads(h), n_patches(n), weights(static_cast<size_t>(h) * n, 0.0) {}
    double& at(int h, int p) { return weights[static_cast<size_t>(h) * n_patches + p]; }
    double at(int h, int p) const { return weights[static_cast<size_t>(h) * n_patches + p]; }
};

// ---------------------------------------------------------------------------
// Configuration and parameters
// ---------------------------------------------------------------------------

struct TinyNetConfig {
    int image_size = 64;
    int patch_size = 8;
    int d_vis = 32;
    int d_shared = 16;
    int d_k = 4;
    int n_heads = 8;
    int vocab_size = 16;
    std::vector<int> decoder_channels;  // per-stage output channels, last must be 1
    double norm_eps = 1e-5;
    double norm_momentum = 0.1;
    uint64_t seed = 0;

    int grid() const { return image_size / patch_size; }

    int n_stages() const {
        int n = 0, p = patch_size;
        while (p > 1) {
            p /= 2;
            ++n;
        }
        return n;
    }

    void validate() const {
        if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0)
            throw ShapeError("TinyNetConfig: image_size must be a positive multiple of patch_size");
        int p = patch_size;
        while (p > 1) {
            if (p % 2 != 0) throw ShapeError("TinyNetConfig: patch_size must be a power of two");
            p /= 2;
        }
        if (d_vis < 1 || d_shared < 1 || d_k < 1 || n_heads < 1 || vocab_size < 1)
            throw ParameterError("TinyNetConfig: dimensions must be >= 1");
        if (!decoder_channels.empty()) {
            if (static_cast<int>(decoder_channels.size()) != n_stages())
                throw ShapeError("TinyNetConfig: decoder_channels size must equal stage count");
            if (decoder_channels.back() != 1)
                throw ShapeError("TinyNetConfig: final decoder stage must have 1 channel");
        }
    }

    std::vector<int> effective_decoder_channels() const {
        if (!decoder_channels.empty()) return decoder_channels;
        std::vector<int> ch;
        int cur = d_vis;
        for (int s = 0; s + 1 < n_stages(); ++s) {
            cur = std::max(2, cur / 2);
            ch.push_back(cur);
        }
        ch.push_back(1);
        return ch;
    }
};

struct AttentionParams {
    int n_heads = 8;
    int d_k = 4;
    Mat w_q;  // d_shared x (n_heads * d_k)
    Mat w_k;  // d_vis x (n_heads * d_k)
    Mat w_v;  // d_vis x (n_heads * d_k)
    Mat w_o;  // (n_heads * d_k) x d_vis
};

// One transposed-convolution stage (kernel 2x2, stride 2). Non-final stages
// carry per-channel normalization with learned scale/shift plus running
// statistics for eval mode; the final stage is a plain tconv into sigmoid.
struct DecoderStage {
    int in_ch = 0;
    int out_ch = 0;
    bool has_norm = true;
    std::vector<double> kernel;  // [in_ch][out_ch][2][2]
    std::vector<double> bias;    // [out_ch]
    std::vector<double> norm_scale;
    std::vector<double> norm_shift;
    std::vector<double> running_mean;
    std::vector<double> running_var;

    double& k_at(int ci, int co, int di, int dj) {
        return kernel[((static_cast<size_t>(ci) * out_ch + co) * 2 + di) * 2 + dj];
    }
    double k_at(int ci, int co, int di, int dj) const {
        return kernel[((static_cast<size_t>(ci) * out_ch + co) * 2 + di) * 2 + dj];
    }
};

struct TinyNetParams {
    TinyNetConfig cfg;
    Mat patch_embed;   // (patch_size^2) x d_vis
    Mat prompt_table;  // vocab x d_shared
    AttentionParams attn;
    std::vector<DecoderStage> decoder;
};

// Fixed-order visitation of every trainable tensor. The encoder group is
// {patch_embed, prompt_table, attention}; the decoder group is the tconv
// stack. Shapes are reported for the checkpoint manifest.
template <typename P, typename F>
void for_each_trainable(P& params, F&& fn) {
    fn("patch_embed", params.patch_embed.data,
       std::vector<int64_t>{params.patch_embed.rows, params.patch_embed.cols}, true);
    fn("prompt_table", params.prompt_table.data,
       std::vector<int64_t>{params.prompt_table.rows, params.prompt_table.cols}, true);
    fn("attn.w_q", params.attn.w_q.data,
       std::vector<int64_t>{params.attn.w_q.rows, params.attn.w_q.cols}, true);
    fn("attn.w_k", params.attn.w_k.data,
       std::vector<int64_t>{params.attn.w_k.rows, params.attn.w_k.cols}, true);
    fn("attn.w_v", params.attn.w_v.data,
       std::vector<int64_t>{params.attn.w_v.rows, params.attn.w_v.cols}, true);
    fn("attn.w_o", params.attn.w_o.data,
       std::vector<int64_t>{params.attn.w_o.rows, params.attn.w_o.cols}, true);
    for (size_t s = 0; s < params.decoder.size(); ++s) {
        auto& st = params.decoder[s];
        const std::string base = "decoder." + std::to_string(s);
        fn(base + ".kernel", st.kernel, std::vector<int64_t>{st.in_ch, st.out_ch, 2, 2}, false);
        fn(base + ".bias", st.bias, std::vector<int64_t>{st.out_ch}, false);
        if (st.has_norm) {
            fn(base + ".norm_scale", st.norm_scale, std::vector<int64_t>{st.out_ch}, false);
            fn(base + ".norm_shift", st.norm_shift, std::vector<int64_t>{st.out_ch}, false);
        }
    }
}

// Non-trainable buffers (running normalization statistics).
template <typename P, typename F>
void for_each_buffer(P& params, F&& fn) {
    for (size_t s = 0; s < params.decoder.size(); ++s) {
        auto& st = params.decoder[s];
        if (!st.has_norm) continue;
        const std::string base = "decoder." + std::to_string(s);
        fn(base + ".running_mean", st.running_mean, std::vector<int64_t>{st.out_ch});
        fn(base + ".running_var", st.running_var, std::vector<int64_t>{st.out_ch});
    }
}

namespace detail {

inline void xavier_fill(std::vector<double>& w, int fan_in, int fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& x : w) x = rng.uniform(-a, a);
}

}  // namespace detail

inline TinyNetParams init_params(const TinyNetConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    TinyNetParams p;
    p.cfg = cfg;

    const int psq = cfg.patch_size * cfg.patch_size;
    p.patch_embed = Mat(psq, cfg.d_vis);
    detail::xavier_fill(p.patch_embed.data, psq, cfg.d_vis, rng);

    p.prompt_table = Mat(cfg.vocab_size, cfg.d_shared);
    detail::xavier_fill(p.prompt_table.data, cfg.vocab_size, cfg.d_shared, rng);

    const int hk = cfg.n_heads * cfg.d_k;
    p.attn.n_heads = cfg.n_heads;
    p.attn.d_k = cfg.d_k;
    p.attn.w_q = Mat(cfg.d_shared, hk);
    p.attn.w_k = Mat(cfg.d_vis, hk);
    p.attn.w_v = Mat(cfg.d_vis, hk);
    p.attn.w_o = Mat(hk, cfg.d_vis);
    detail::xavier_fill(p.attn.w_q.data, cfg.d_shared, hk, rng);
    detail::xavier_fill(p.attn.w_k.data, cfg.d_vis, hk, rng);
    detail::xavier_fill(p.attn.w_v.data, cfg.d_vis, hk, rng);
    detail::xavier_fill(p.attn.w_o.data, hk, cfg.d_vis, rng);

    const std::vector<int> channels = cfg.effective_decoder_channels();
    int in_ch = cfg.d_vis;
    for (size_t s = 0; s < channels.size(); ++s) {
        DecoderStage st;
        st.in_ch = in_ch;
        st.out_ch = channels[s];
        st.has_norm = (s + 1 < channels.size());
        st.kernel.assign(static_cast<size_t>(st.in_ch) * st.out_ch * 4, 0.0);
        detail::xavier_fill(st.kernel, st.in_ch * 4, st.out_ch * 4, rng);
        st.bias.assign(st.out_ch, 0.0);
        if (st.has_norm) {
            st.norm_scale.assign(st.out_ch, 1.0);
            st.norm_shift.assign(st.out_ch, 0.0);
            st.running_mean.assign(st.out_ch, 0.0);
            st.running_var.assign(st.out_ch, 1.0);
        }
        in_ch = st.out_ch;
        p.decoder.push_back(std::move(st));
    }
    return p;
}

// Gradients mirror the trainable tensors of TinyNetParams.
struct TinyNetGrads {
    Mat patch_embed;
    Mat prompt_table;
    AttentionParams attn;
    std::vector<DecoderStage> decoder;
};

inline TinyNetGrads zero_grads(const TinyNetParams& p) {
    TinyNetGrads g;
    g.patch_embed = Mat(p.patch_embed.rows, p.patch_embed.cols);
    g.prompt_table = Mat(p.prompt_table.rows, p.prompt_table.cols);
    g.attn.n_heads = p.attn.n_heads;
    g.attn.d_k = p.attn.d_k;
    g.attn.w_q = Mat(p.attn.w_q.rows, p.attn.w_q.cols);
    g.attn.w_k = Mat(p.attn.w_k.rows, p.attn.w_k.cols);
    g.attn.w_v = Mat(p.attn.w_v.rows, p.attn.w_v.cols);
    g.attn.w_o = Mat(p.attn.w_o.rows, p.attn.w_o.cols);
    for (const auto& st : p.decoder) {
        DecoderStage gs;
        gs.in_ch = st.in_ch;
        gs.out_ch = st.out_ch;
        gs.has_norm = st.has_norm;
        gs.kernel.assign(st.kernel.size(), 0.0);
        gs.bias.assign(st.bias.size(), 0.0);
        if (st.has_norm) {
            gs.norm_scale.assign(st.norm_scale.size(), 0.0);
            gs.norm_shift.assign(st.norm_shift.size(), 0.0);
        }
        g.decoder.push_back(std::move(gs));
    }
    return g;
}

inline void accumulate_grads(TinyNetGrads& acc, const TinyNetGrads& g, double scale = 1.0) {
    auto add = [scale](std::vector<double>& a, const std::vector<double>& b) {
        for (size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
    };
    add(acc.patch_embed.data, g.patch_embed.data);
    add(acc.prompt_table.data, g.prompt_table.data);
    add(acc.attn.w_q.data, g.attn.w_q.data);
    add(acc.attn.w_k.data, g.attn.w_k.data);
    add(acc.attn.w_v.data, g.attn.w_v.data);
    add(acc.attn.w_o.data, g.attn.w_o.data);
    for (size_t s = 0; s < acc.decoder.size(); ++s) {
        add(acc.decoder[s].kernel, g.decoder[s].kernel);
        add(acc.decoder[s].bias, g.decoder[s].bias);
        if (acc.decoder[s].has_norm) {
            add(acc.decoder[s].norm_scale, g.decoder[s].norm_scale);
            add(acc.decoder[s].norm_shift, g.decoder[s].norm_shift);
        }
    }
}

// ---------------------------------------------------------------------------
// Forward ops
// ---------------------------------------------------------------------------

// Non-overlapping patch_size^2 patches in row-major grid order, each
// flattened row-major and mapped through patch_embed. No class token exists.
inline PatchSequence embed_patches(const GrayImage& img, const TinyNetParams& params) {
    const auto& cfg = params.cfg;
    if (img.height % cfg.patch_size != 0 || img.width % cfg.patch_size != 0)
        throw ShapeError("embed_patches: image dimensions not divisible by patch size");
    const int gh = img.height / cfg.patch_size;
    const int gw = img.width / cfg.patch_size;
    const int psq = cfg.patch_size * cfg.patch_size;

    PatchSequence seq(gh * gw, cfg.d_vis);
    std::vector<double> flat(psq);
    for (int pr = 0; pr < gh; ++pr) {
        for (int pc = 0; pc < gw; ++pc) {
            int k = 0;
            for (int r = 0; r < cfg.patch_size; ++r)
                for (int c = 0; c < cfg.patch_size; ++c)
                    flat[k++] = img.at(pr * cfg.patch_size + r, pc * cfg.patch_size + c);
            const int pidx = pr * gw + pc;
            for (int d = 0; d < cfg.d_vis; ++d) {
                double acc = 0.0;
                for (int i = 0; i < psq; ++i) acc += flat[i] * params.patch_embed.at(i, d);
                seq.at(pidx, d) = acc;
            }
        }
    }
    return seq;
}

// Mean of the embedding rows for the given token ids.
inline TextEmbedding embed_prompt(const std::vector<int>& tokens, const TinyNetParams& params) {
    if (tokens.empty()) throw InputError("embed_prompt: empty token list");
    TextEmbedding emb;
    emb.dim = params.cfg.d_shared;
    emb.data.assign(emb.dim, 0.0);
    for (int t : tokens) {
        if (t < 0 || t >= params.prompt_table.rows)
            throw InputError("embed_prompt: token id out of vocabulary: " + std::to_string(t));
        for (int d = 0; d < emb.dim; ++d) emb.data[d] += params.prompt_table.at(t, d);
    }
    const double inv = 1.0 / static_cast<double>(tokens.size());
    for (double& v : emb.data) v *= inv;
    return emb;
}

struct AttentionCache {
    std::vector<double> q;         // n_heads * d_k
    std::vector<double> keys;      // n_patches x (n_heads * d_k)
    std::vector<double> values;    // n_patches x (n_heads * d_k)
    AttnMap weights;               // per-head softmax over patches
    std::vector<double> attended;  // concatenated per-head context, n_heads * d_k
    std::vector<double> projected; // d_vis, broadcast residual term
};

// Single pooled text query per head; keys/values from the patch sequence.
// The projected context vector is broadcast-added to every patch row.
inline std::pair<PatchSequence, AttnMap> cross_attention(const TextEmbedding& f_t,
                                                         const PatchSequence& f_v,
                                                         const AttentionParams& attn,
                                                         AttentionCache* cache = nullptr) {
    const int hk = attn.n_heads * attn.d_k;
    if (attn.w_q.cols != hk || attn.w_k.cols != hk || attn.w_v.cols != hk || attn.w_o.rows != hk)
        throw ShapeError("cross_attention: head geometry inconsistent with weight matrices");
    if (f_t.dim != attn.w_q.rows) throw ShapeError("cross_attention: text dim mismatch with W_q");
    if (f_v.dim != attn.w_k.rows) throw ShapeError("cross_attention: patch dim mismatch with W_k");
    if (attn.w_o.cols != f_v.dim) throw ShapeError("cross_attention: W_o output dim mismatch");

    const int n = f_v.n_patches;
    std::vector<double> q(hk, 0.0);
    for (int j = 0; j < hk; ++j) {
        double acc = 0.0;
        for (int i = 0; i < f_t.dim; ++i) acc += f_t.data[i] * attn.w_q.at(i, j);
        q[j] = acc;
    }

    std::vector<double> keys(static_cast<size_t>(n) * hk, 0.0);
    std::vector<double> values(static_cast<size_t>(n) * hk, 0.0);
    for (int p = 0; p < n; ++p)
        for (int j = 0; j < hk; ++j) {
            double ka = 0.0, va = 0.0;
            for (int i = 0; i < f_v.dim; ++i) {
                const double x = f_v.at(p, i);
                ka += x * attn.w_k.at(i, j);
                va += x * attn.w_v.at(i, j);
            }
            keys[static_cast<size_t>(p) * hk + j] = ka;
            values[static_cast<size_t>(p) * hk + j] = va;
        }

    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(attn.d_k));
    AttnMap weights(attn.n_heads, n);
    std::vector<double> attended(hk, 0.0);
    std::vector<double> logits(n);
    for (int h = 0; h < attn.n_heads; ++h) {
        double max_logit = -std::numeric_limits<double>::infinity();
        for (int p = 0; p < n; ++p) {
            double dot = 0.0;
            for (int d = 0; d < attn.d_k; ++d)
                dot += q[h * attn.d_k + d] * keys[static_cast<size_t>(p) * hk + h * attn.d_k + d];
            logits[p] = dot * inv_sqrt_dk;
            max_logit = std::max(max_logit, logits[p]);
        }
        double z = 0.0;
        for (int p = 0; p < n; ++p) {
            const double e = std::exp(logits[p] - max_logit);
            weights.at(h, p) = e;
            z += e;
        }
        for (int p = 0; p < n; ++p) weights.at(h, p) /= z;
        for (int d = 0; d < attn.d_k; ++d) {
            double acc = 0.0;
            for (int p = 0; p < n; ++p)
                acc += weights.at(h, p) * values[static_cast<size_t>(p) * hk + h * attn.d_k + d];
            attended[h * attn.d_k + d] = acc;
        }
    }

    std::vector<double> projected(f_v.dim, 0.0);
    for (int j = 0; j < f_v.dim; ++j) {
        double acc = 0.0;
        for (int i = 0; i < hk; ++i) acc += attended[i] * attn.w_o.at(i, j);
        projected[j] = acc;
    }

    PatchSequence out(n, f_v.dim);
    for (int p = 0; p < n; ++p)
        for (int d = 0; d < f_v.dim; ++d) out.at(p, d) = f_v.at(p, d) + projected[d];

    if (cache) {
        cache->q = std::move(q);
        cache->keys = std::move(keys);
        cache->values = std::move(values);
        cache->weights = weights;
        cache->attended = attended;
        cache->projected = std::move(projected);
    }
    return {std::move(out), std::move(weights)};
}

struct StageCache {
    int in_h = 0, in_w = 0;
    std::vector<double> input;     // in_ch x in_h x in_w
    std::vector<double> pre_norm;  // out_ch x 2h x 2w, tconv output + bias
    std::vector<double> x_hat;     // normalized activations before scale/shift
    std::vector<double> mean, var; // statistics used by this pass
    std::vector<double> post;      // after activation
};

struct ForwardCache {
    std::vector<double> patch_flat;  // n_patches x patch_size^2
    PatchSequence f_v;
    std::vector<int> tokens;
    AttentionCache attn;
    PatchSequence f_attn;
    std::vector<StageCache> stages;
    bool train_mode = true;
    int grid_h = 0, grid_w = 0;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* stage) {
    for (double x : v)
        if (!std::isfinite(x))
            throw NumericError(std::string("tinynet: non-finite activation at ") + stage);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

// Reshape the attended sequence to d_vis x grid x grid and upsample through
// the tconv stack; each stage doubles the spatial resolution, the final
// 1-channel stage applies a sigmoid. train_mode selects per-pass statistics
// (and updates running averages when params is non-const via update_running).
inline ProbMap decode_mask(const PatchSequence& f_attn, const TinyNetParams& params,
                           bool train_mode = false, ForwardCache* cache = nullptr,
                           TinyNetParams* update_running = nullptr) {
    const auto& cfg = params.cfg;
    const int grid = cfg.grid();
    if (f_attn.n_patches != grid * grid)
        throw ShapeError("decode_mask: patch count does not match decoder grid");
    if (f_attn.dim != cfg.d_vis) throw ShapeError("decode_mask: feature dim mismatch");

    // F_spatial: channel-major [d_vis][grid][grid]; patch p = (r*grid + c)
    std::vector<double> x(static_cast<size_t>(cfg.d_vis) * grid * grid, 0.0);
    for (int p = 0; p < f_attn.n_patches; ++p)
        for (int d = 0; d < cfg.d_vis; ++d)
            x[static_cast<size_t>(d) * grid * grid + p] = f_attn.at(p, d);

    int h = grid, w = grid;
    for (size_t s = 0; s < params.decoder.size(); ++s) {
        const DecoderStage& st = params.decoder[s];
        const int oh = 2 * h, ow = 2 * w;
        StageCache sc;
        sc.in_h = h;
        sc.in_w = w;
        sc.input = x;

        std::vector<double> y(static_cast<size_t>(st.out_ch) * oh * ow, 0.0);
        for (int co = 0; co < st.out_ch; ++co) {
            const double b = st.bias[co];
            for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i)
                y[static_cast<size_t>(co) * oh * ow + i] = b;
        }
        for (int ci = 0; ci < st.in_ch; ++ci)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    const double v = x[(static_cast<size_t>(ci) * h + i) * w + j];
                    if (v == 0.0) continue;
                    for (int co = 0; co < st.out_ch; ++co)
                        for (int di = 0; di < 2; ++di)
                            for (int dj = 0; dj < 2; ++dj)
                                y[(static_cast<size_t>(co) * oh + (2 * i + di)) * ow +
                                  (2 * j + dj)] += v * st.k_at(ci, co, di, dj);
                }
        detail::check_finite(y, ("decoder stage " + std::to_string(s) + " tconv").c_str());
        sc.pre_norm = y;

        if (st.has_norm) {
            const double n = static_cast<double>(oh) * ow;
            sc.mean.assign(st.out_ch, 0.0);
            sc.var.assign(st.out_ch, 0.0);
            sc.x_hat.assign(y.size(), 0.0);
            for (int co = 0; co < st.out_ch; ++co) {
                const size_t base = static_cast<size_t>(co) * oh * ow;
                double mu, var;
                if (train_mode) {
                    mu = 0.0;
                    for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i) mu += y[base + i];
                    mu /= n;
                    var = 0.0;
                    for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i) {
                        const double d = y[base + i] - mu;
                        var += d * d;
                    }
                    var /= n;
                    if (update_running) {
                        auto& ust = update_running->decoder[s];
                        const double m = cfg.norm_momentum;
                        ust.running_mean[co] = (1.0 - m) * ust.running_mean[co] + m * mu;
                        ust.running_var[co] = (1.0 - m) * ust.running_var[co] + m * var;
                    }
                } else {
                    mu = st.running_mean[co];
                    var = st.running_var[co];
                }
                sc.mean[co] = mu;
                sc.var[co] = var;
                const double inv_std = 1.0 / std::sqrt(var + cfg.norm_eps);
                for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i) {
                    const double xh = (y[base + i] - mu) * inv_std;
                    sc.x_hat[base + i] = xh;
                    y[base + i] = st.norm_scale[co] * xh + st.norm_shift[co];
                }
            }
            // ReLU
            for (double& v : y) v = v > 0.0 ? v : 0.0;
        } else {
            for (double& v : y) v = detail::sigmoid(v);
        }
        detail::check_finite(y, ("decoder stage " + std::to_string(s) + " activation").c_str());
        sc.post = y;
        if (cache) cache->stages.push_back(std::move(sc));

        x = std::move(y);
        h = oh;
        w = ow;
    }

    ProbMap out(h, w);
    for (size_t i = 0; i < out.size(); ++i)
        out.probs[i] = std::clamp(x[i], 1e-12, 1.0 - 1e-12);
    return out;
}

struct ForwardResult {
    ProbMap prob;
    AttnMap attn_map;
};

// embed_patches -> embed_prompt -> cross_attention -> decode_mask.
inline ForwardResult forward(const GrayImage& img, const std::vector<int>& tokens,
                             const TinyNetParams& params, bool train_mode = false,
                             ForwardCache* cache = nullptr,
                             TinyNetParams* update_running = nullptr) {
    const auto& cfg = params.cfg;
    PatchSequence f_v = embed_patches(img, params);
    TextEmbedding f_t = embed_prompt(tokens, params);

    AttentionCache attn_cache;
    auto [f_attn, attn_map] =
        cross_attention(f_t, f_v, params.attn, cache ? &attn_cache : nullptr);

    if (cache) {
        cache->train_mode = train_mode;
        cache->grid_h = img.height / cfg.patch_size;
        cache->grid_w = img.width / cfg.patch_size;
        cache->tokens = tokens;
        const int psq = cfg.patch_size * cfg.patch_size;
        cache->patch_flat.assign(static_cast<size_t>(f_v.n_patches) * psq, 0.0);
        for (int pr = 0; pr < cache->grid_h; ++pr)
            for (int pc = 0; pc < cache->grid_w; ++pc) {
                const int pidx = pr * cache->grid_w + pc;
                int k = 0;
                for (int r = 0; r < cfg.patch_size; ++r)
                    for (int c = 0; c < cfg.patch_size; ++c)
                        cache->patch_flat[static_cast<size_t>(pidx) * psq + k++] =
                            img.at(pr * cfg.patch_size + r, pc * cfg.patch_size + c);
            }
        cache->f_v = f_v;
        cache->attn = std::move(attn_cache);
        cache->f_attn = f_attn;
        cache->stages.clear();
    }

    ForwardResult res;
    res.prob = decode_mask(f_attn, params, train_mode, cache, update_running);
    res.attn_map = std::move(attn_map);
    return res;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

// Reverse-mode pass over the cached forward. d_prob is dLoss/dProbMap.
inline TinyNetGrads backward(const ForwardCache& cache, const TinyNetParams& params,
                             const std::vector<double>& d_prob) {
    const auto& cfg = params.cfg;
    TinyNetGrads grads = zero_grads(params);

    if (cache.stages.empty()) throw InputError("backward: cache has no decoder stages");
    if (d_prob.size() != cache.stages.back().post.size())
        throw ShapeError("backward: d_prob size mismatch");

    // --- decoder stack, last stage first
    std::vector<double> dy;  // gradient w.r.t. current stage output (post-activation)
    dy = d_prob;

    for (int s = static_cast<int>(params.decoder.size()) - 1; s >= 0; --s) {
        const DecoderStage& st = params.decoder[s];
        DecoderStage& gst = grads.decoder[s];
        const StageCache& sc = cache.stages[s];
        const int h = sc.in_h, w = sc.in_w;
        const int oh = 2 * h, ow = 2 * w;
        const size_t plane = static_cast<size_t>(oh) * ow;

        // activation backward -> gradient w.r.t. pre-norm (or pre-sigmoid)
        std::vector<double> dpre(st.out_ch * plane, 0.0);
        if (st.has_norm) {
            // ReLU over (scale * x_hat + shift)
            std::vector<double> dnormed(st.out_ch * plane);
            for (size_t i = 0; i < dnormed.size(); ++i)
                dnormed[i] = sc.post[i] > 0.0 ? dy[i] : 0.0;

            for (int co = 0; co < st.out_ch; ++co) {
                const size_t base = co * plane;
                const double inv_std = 1.0 / std::sqrt(sc.var[co] + cfg.norm_eps);
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0, dscale = 0.0, dshift = 0.0;
                for (size_t i = 0; i < plane; ++i) {
                    const double dxh = dnormed[base + i] * st.norm_scale[co];
                    dscale += dnormed[base + i] * sc.x_hat[base + i];
                    dshift += dnormed[base + i];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * sc.x_hat[base + i];
                }
                gst.norm_scale[co] += dscale;
                gst.norm_shift[co] += dshift;
                if (cache.train_mode) {
                    const double n = static_cast<double>(plane);
                    for (size_t i = 0; i < plane; ++i) {
                        const double dxh = dnormed[base + i] * st.norm_scale[co];
                        dpre[base + i] = inv_std * (dxh - sum_dxhat / n -
                                                    sc.x_hat[base + i] * sum_dxhat_xhat / n);
                    }
                } else {
                    for (size_t i = 0; i < plane; ++i)
                        dpre[base + i] = dnormed[base + i] * st.norm_scale[co] * inv_std;
                }
            }
        } else {
            // sigmoid
            for (size_t i = 0; i < dpre.size(); ++i) {
                const double p = sc.post[i];
                dpre[i] = dy[i] * p * (1.0 - p);
            }
        }

        // tconv backward
        std::vector<double> dx(static_cast<size_t>(st.in_ch) * h * w, 0.0);
        for (int co = 0; co < st.out_ch; ++co) {
            double db = 0.0;
            for (size_t i = 0; i < plane; ++i) db += dpre[co * plane + i];
            gst.bias[co] += db;
        }
        for (int ci = 0; ci < st.in_ch; ++ci)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    const double v = sc.input[(static_cast<size_t>(ci) * h + i) * w + j];
                    double dacc = 0.0;
                    for (int co = 0; co < st.out_ch; ++co)
                        for (int di = 0; di < 2; ++di)
                            for (int dj = 0; dj < 2; ++dj) {
                                const double g =
                                    dpre[(static_cast<size_t>(co) * oh + (2 * i + di)) * ow +
                                         (2 * j + dj)];
                                dacc += g * st.k_at(ci, co, di, dj);
                                gst.k_at(ci, co, di, dj) += g * v;
                            }
                    dx[(static_cast<size_t>(ci) * h + i) * w + j] = dacc;
                }
        dy = std::move(dx);
    }

    // dy now holds dLoss/dF_spatial: [d_vis][grid][grid] -> per patch rows
    const int grid = cfg.grid();
    const int n = grid * grid;
    std::vector<double> d_f_attn(static_cast<size_t>(n) * cfg.d_vis, 0.0);
    for (int p = 0; p < n; ++p)
        for (int d = 0; d < cfg.d_vis; ++d)
            d_f_attn[static_cast<size_t>(p) * cfg.d_vis + d] =
                dy[static_cast<size_t>(d) * n + p];

    // --- attention backward
    const AttentionParams& attn = params.attn;
    const AttentionCache& ac = cache.attn;
    const int hk = attn.n_heads * attn.d_k;

    // residual: F_attn = F_v + broadcast(projected)
    std::vector<double> d_projected(cfg.d_vis, 0.0);
    std::vector<double> d_f_v(static_cast<size_t>(n) * cfg.d_vis, 0.0);
    for (int p = 0; p < n; ++p)
        for (int d = 0; d < cfg.d_vis; ++d) {
            const double g = d_f_attn[static_cast<size_t>(p) * cfg.d_vis + d];
            d_projected[d] += g;
            d_f_v[static_cast<size_t>(p) * cfg.d_vis + d] = g;
        }

    // projected = attended . W_o
    std::vector<double> d_attended(hk, 0.0);
    for (int i = 0; i < hk; ++i)
        for (int j = 0; j < cfg.d_vis; ++j) {
            grads.attn.w_o.at(i, j) += ac.attended[i] * d_projected[j];
            d_attended[i] += d_projected[j] * attn.w_o.at(i, j);
        }

    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(attn.d_k));
    std::vector<double> d_q(hk, 0.0);
    std::vector<double> d_keys(static_cast<size_t>(n) * hk, 0.0);
    std::vector<double> d_values(static_cast<size_t>(n) * hk, 0.0);
    std::vector<double> d_w(n);
    for (int h = 0; h < attn.n_heads; ++h) {
        // attended_h = sum_p w_p * V_h[p]
        for (int p = 0; p < n; ++p) {
            double acc = 0.0;
            for (int d = 0; d < attn.d_k; ++d) {
                const size_t vi = static_cast<size_t>(p) * hk + h * attn.d_k + d;
                acc += d_attended[h * attn.d_k + d] * ac.values[vi];
                d_values[vi] += ac.weights.at(h, p) * d_attended[h * attn.d_k + d];
            }
            d_w[p] = acc;
        }
        // softmax jacobian
        double dot = 0.0;
        for (int p = 0; p < n; ++p) dot += ac.weights.at(h, p) * d_w[p];
        for (int p = 0; p < n; ++p) {
            const double dlogit = ac.weights.at(h, p) * (d_w[p] - dot);
            for (int d = 0; d < attn.d_k; ++d) {
                const size_t ki = static_cast<size_t>(p) * hk + h * attn.d_k + d;
                d_q[h * attn.d_k + d] += dlogit * ac.keys[ki] * inv_sqrt_dk;
                d_keys[ki] += dlogit * ac.q[h * attn.d_k + d] * inv_sqrt_dk;
            }
        }
    }

    // K = F_v W_k, V = F_v W_v
    for (int p = 0; p < n; ++p)
        for (int i = 0; i < cfg.d_vis; ++i) {
            const double x = cache.f_v.at(p, i);
            double dfv = 0.0;
            for (int j = 0; j < hk; ++j) {
                const double dk = d_keys[static_cast<size_t>(p) * hk + j];
                const double dv = d_values[static_cast<size_t>(p) * hk + j];
                grads.attn.w_k.at(i, j) += x * dk;
                grads.attn.w_v.at(i, j) += x * dv;
                dfv += dk * attn.w_k.at(i, j) + dv * attn.w_v.at(i, j);
            }
            d_f_v[static_cast<size_t>(p) * cfg.d_vis + i] += dfv;
        }

    // q = f_t W_q; recompute the pooled prompt embedding
    std::vector<double> f_t(cfg.d_shared, 0.0);
    for (int t : cache.tokens)
        for (int d = 0; d < cfg.d_shared; ++d) f_t[d] += params.prompt_table.at(t, d);
    {
        const double inv = 1.0 / static_cast<double>(cache.tokens.size());
        for (double& v : f_t) v *= inv;
    }
    std::vector<double> d_f_t(cfg.d_shared, 0.0);
    for (int i = 0; i < cfg.d_shared; ++i)
        for (int j = 0; j < hk; ++j) {
            grads.attn.w_q.at(i, j) += f_t[i] * d_q[j];
            d_f_t[i] += d_q[j] * attn.w_q.at(i, j);
        }

    // prompt mean
    const double inv_tok = 1.0 / static_cast<double>(cache.tokens.size());
    for (int t : cache.tokens)
        for (int d = 0; d < cfg.d_shared; ++d)
            grads.prompt_table.at(t, d) += d_f_t[d] * inv_tok;

    // patch embedding
    const int psq = cfg.patch_size * cfg.patch_size;
    for (int p = 0; p < n; ++p)
        for (int i = 0; i < psq; ++i) {
            const double x = cache.patch_flat[static_cast<size_t>(p) * psq + i];
            if (x == 0.0) continue;
            for (int d = 0; d < cfg.d_vis; ++d)
                grads.patch_embed.at(i, d) += x * d_f_v[static_cast<size_t>(p) * cfg.d_vis + d];
        }

    return grads;
}

}  // namespace lss
