#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "lss/core.hpp"

namespace lss {

// Ordered lowercase word tokens; ends stripped of punctuation, internal
// hyphens and percent signs preserved ("43.6%" is one token).
struct TokenSeq {
    std::vector<std::string> tokens;

    bool empty() const { return tokens.empty(); }
    size_t size() const { return tokens.size(); }
};

namespace textdetail {

inline bool strippable(char c) {
    static const std::string keep = "%";
    if (keep.find(c) != std::string::npos) return false;
    return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

}  // namespace textdetail

inline TokenSeq tokenize(const std::string& text) {
    TokenSeq out;
    std::string cur;
    auto flush = [&]() {
        size_t b = 0, e = cur.size();
        while (b < e && textdetail::strippable(cur[b])) ++b;
        while (e > b && textdetail::strippable(cur[e - 1])) --e;
        if (e > b) out.tokens.push_back(cur.substr(b, e - b));
        cur.clear();
    };
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            flush();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    flush();
    return out;
}

namespace textdetail {

// n-grams as separator-joined keys
inline std::unordered_map<std::string, int> ngram_counts(const TokenSeq& seq, int n) {
    std::unordered_map<std::string, int> counts;
    if (n < 1 || seq.size() < static_cast<size_t>(n)) return counts;
    for (size_t i = 0; i + n <= seq.size(); ++i) {
        std::string key = seq.tokens[i];
        for (int j = 1; j < n; ++j) {
            key += '\x1f';
            key += seq.tokens[i + j];
        }
        counts[key] += 1;
    }
    return counts;
}

inline long total_ngrams(const TokenSeq& seq, int n) {
    return seq.size() >= static_cast<size_t>(n) ? static_cast<long>(seq.size()) - n + 1 : 0;
}

}  // namespace textdetail

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

struct BleuScores {
    std::array<double, 4> bleu{};  // BLEU-1 .. BLEU-4
    double brevity_penalty = 1.0;
};

namespace textdetail {

struct BleuTally {
    std::array<long, 4> matched{};
    std::array<long, 4> total{};
    long cand_len = 0;
    long ref_len = 0;  // closest-reference length, ties toward the shorter

    void add(const TokenSeq& cand, const std::vector<TokenSeq>& refs, int max_n) {
        cand_len += static_cast<long>(cand.size());
        long best_ref = 0;
        long best_gap = -1;
        for (const auto& r : refs) {
            const long len = static_cast<long>(r.size());
            const long gap = std::abs(len - static_cast<long>(cand.size()));
            if (best_gap < 0 || gap < best_gap || (gap == best_gap && len < best_ref)) {
                best_gap = gap;
                best_ref = len;
            }
        }
        ref_len += best_ref;
        for (int n = 1; n <= max_n; ++n) {
            auto cc = ngram_counts(cand, n);
            std::unordered_map<std::string, int> clip;
            for (const auto& r : refs)
                for (const auto& [gram, cnt] : ngram_counts(r, n))
                    clip[gram] = std::max(clip[gram], cnt);
            long m = 0;
            for (const auto& [gram, cnt] : cc) {
                auto it = clip.find(gram);
                if (it != clip.end()) m += std::min(cnt, it->second);
            }
            matched[n - 1] += m;
            total[n - 1] += total_ngrams(cand, n);
        }
    }

    BleuScores finish(int max_n, bool smooth) const {
        BleuScores out;
        out.brevity_penalty =
            (cand_len == 0) ? 0.0
            : (cand_len >= ref_len
                   ? 1.0
                   : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len)));
        double log_sum = 0.0;
        bool dead = false;
        for (int n = 1; n <= max_n; ++n) {
            double p;
            if (smooth && n > 1) {
                p = (matched[n - 1] + 1.0) / (total[n - 1] + 1.0);
            } else {
                p = total[n - 1] > 0
                        ? static_cast<double>(matched[n - 1]) / static_cast<double>(total[n - 1])
                        : 0.0;
            }
            if (p <= 0.0) dead = true;
            if (!dead) log_sum += std::log(p);
            out.bleu[n - 1] = dead ? 0.0 : out.brevity_penalty * std::exp(log_sum / n);
        }
        return out;
    }
};

}  // namespace textdetail

// Modified n-gram precision with reference-clipped counts, geometric mean up
// to each order, times the brevity penalty. No smoothing by default: a zero
// precision zeroes that order and above; `smooth` applies add-one smoothing
// to orders >= 2.
inline BleuScores bleu(const TokenSeq& candidate, const std::vector<TokenSeq>& references,
                       int max_n = 4, bool smooth = false) {
    if (references.empty()) throw InputError("bleu: at least one reference required");
    if (max_n < 1 || max_n > 4) throw ParameterError("bleu: max_n must be in [1,4]");
    if (candidate.empty()) return BleuScores{};
    textdetail::BleuTally tally;
    tally.add(candidate, references, max_n);
    return tally.finish(max_n, smooth);
}

// Aggregate-count (corpus-level) BLEU over candidate/reference pairs.
inline BleuScores corpus_bleu(const std::vector<TokenSeq>& candidates,
                              const std::vector<std::vector<TokenSeq>>& references,
                              int max_n = 4, bool smooth = false) {
    if (candidates.size() != references.size()) throw InputError("corpus_bleu: length mismatch");
    if (candidates.empty()) throw InputError("corpus_bleu: empty corpus");
    textdetail::BleuTally tally;
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (references[i].empty()) throw InputError("corpus_bleu: pair without references");
        tally.add(candidates[i], references[i], max_n);
    }
    return tally.finish(max_n, smooth);
}

// ---------------------------------------------------------------------------
// ROUGE
// ---------------------------------------------------------------------------

struct RougeScores {
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
};

namespace textdetail {

inline double f1(double p, double r) { return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline double rouge_n(const TokenSeq& cand, const TokenSeq& ref, int n) {
    const long tc = total_ngrams(cand, n);
    const long tr = total_ngrams(ref, n);
    if (tc == 0 && tr == 0) return 1.0;
    if (tc == 0 || tr == 0) return 0.0;
    auto cc = ngram_counts(cand, n);
    auto rc = ngram_counts(ref, n);
    long m = 0;
    for (const auto& [gram, cnt] : cc) {
        auto it = rc.find(gram);
        if (it != rc.end()) m += std::min(cnt, it->second);
    }
    return f1(static_cast<double>(m) / tc, static_cast<double>(m) / tr);
}

inline long lcs_length(const TokenSeq& a, const TokenSeq& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<long> prev(m + 1, 0), cur(m + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        for (size_t j = 1; j <= m; ++j) {
            cur[j] = (a.tokens[i - 1] == b.tokens[j - 1]) ? prev[j - 1] + 1
                                                          : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

}  // namespace textdetail

// n-gram F1 for n in {1,2} and longest-common-subsequence F1 for ROUGE-L.
// Both empty -> 1.0 by convention; one empty -> 0.0.
inline RougeScores rouge(const TokenSeq& candidate, const TokenSeq& reference) {
    RougeScores out;
    out.rouge1 = textdetail::rouge_n(candidate, reference, 1);
    out.rouge2 = textdetail::rouge_n(candidate, reference, 2);
    if (candidate.empty() && reference.empty()) {
        out.rougeL = 1.0;
    } else if (candidate.empty() || reference.empty()) {
        out.rougeL = 0.0;
    } else {
        const long lcs = textdetail::lcs_length(candidate, reference);
        out.rougeL = textdetail::f1(static_cast<double>(lcs) / candidate.size(),
                                    static_cast<double>(lcs) / reference.size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// METEOR (exact-match variant)
// ---------------------------------------------------------------------------

namespace textdetail {

struct MeteorAlignment {
    long matches = 0;
    long chunks = 0;
};

// Longest-fragment-first alignment: repeatedly take the longest run that is
// contiguous in both sentences over still-unmatched positions. Every pick
// pairs equal tokens one-to-one, so the match count always reaches the
// multiset maximum; each pick contributes one chunk.
inline MeteorAlignment meteor_align(const TokenSeq& cand, const TokenSeq& ref) {
    const size_t nc = cand.size(), nr = ref.size();
    std::vector<bool> used_c(nc, false), used_r(nr, false);
    MeteorAlignment out;
    while (true) {
        size_t best_len = 0, best_i = 0, best_j = 0;
        for (size_t i = 0; i < nc; ++i) {
            if (used_c[i]) continue;
            for (size_t j = 0; j < nr; ++j) {
                if (used_r[j]) continue;
                size_t len = 0;
                while (i + len < nc && j + len < nr && !used_c[i + len] && !used_r[j + len] &&
                       cand.tokens[i + len] == ref.tokens[j + len])
                    ++len;
                if (len > best_len) {
                    best_len = len;
                    best_i = i;
                    best_j = j;
                }
            }
        }
        if (best_len == 0) break;
        for (size_t k = 0; k < best_len; ++k) {
            used_c[best_i + k] = true;
            used_r[best_j + k] = true;
        }
        out.matches += static_cast<long>(best_len);
        out.chunks += 1;
    }
    return out;
}

}  // namespace textdetail

// Fmean = 10PR / (R + 9P); penalty = 0.5 * (chunks / matches)^3;
// score = Fmean * (1 - penalty); 0 when there are no matches.
inline double meteor(const TokenSeq& candidate, const TokenSeq& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    const auto align = textdetail::meteor_align(candidate, reference);
    if (align.matches == 0) return 0.0;
    const double p = static_cast<double>(align.matches) / candidate.size();
    const double r = static_cast<double>(align.matches) / reference.size();
    const double fmean = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(align.chunks) / static_cast<double>(align.matches);
    const double penalty = 0.5 * frag * frag * frag;
    return fmean * (1.0 - penalty);
}

// ---------------------------------------------------------------------------
// Corpus-level metrics: CIDEr, TF-IDF cosine, Jaccard, Distinct-n
// ---------------------------------------------------------------------------

struct EvalPair {
    TokenSeq candidate;
    std::vector<TokenSeq> references;
};

// Candidate/reference pairs plus the document-frequency tables used by CIDEr
// and TF-IDF cosine. DF is derived solely from the references; a document is
// one pair's reference set.
struct Corpus {
    std::vector<EvalPair> pairs;
    std::array<std::unordered_map<std::string, int>, 4> df;  // per n-gram order

    static Corpus build(std::vector<EvalPair> input) {
        Corpus c;
        c.pairs = std::move(input);
        for (const auto& pair : c.pairs) {
            if (pair.references.empty())
                throw InputError("Corpus: every pair needs at least one reference");
            for (int n = 1; n <= 4; ++n) {
                std::unordered_set<std::string> seen;
                for (const auto& ref : pair.references)
                    for (const auto& [gram, cnt] : textdetail::ngram_counts(ref, n))
                        seen.insert(gram);
                for (const auto& gram : seen) c.df[n - 1][gram] += 1;
            }
        }
        return c;
    }

    double idf(const std::string& gram, int n) const {
        const auto& table = df[n - 1];
        auto it = table.find(gram);
        const double d = it != table.end() ? static_cast<double>(it->second) : 1.0;
        return std::log(static_cast<double>(pairs.size()) / d);
    }
};

namespace textdetail {

inline double tfidf_cosine_n(const Corpus& corpus, const TokenSeq& a, const TokenSeq& b, int n) {
    const auto ca = ngram_counts(a, n);
    const auto cb = ngram_counts(b, n);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [gram, cnt] : ca) {
        const double w = cnt * corpus.idf(gram, n);
        na += w * w;
        auto it = cb.find(gram);
        if (it != cb.end()) dot += w * (it->second * corpus.idf(gram, n));
    }
    for (const auto& [gram, cnt] : cb) {
        const double w = cnt * corpus.idf(gram, n);
        nb += w * w;
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace textdetail

struct CiderResult {
    std::vector<double> per_pair;
    double mean = 0.0;
};

// TF-IDF n-gram cosine (n = 1..4) against each reference, averaged over
// references and orders, scaled by 10. A single-pair corpus degenerates to
// IDF 0 for every shared n-gram and scores 0.
inline CiderResult cider(const Corpus& corpus) {
    CiderResult out;
    out.per_pair.reserve(corpus.pairs.size());
    for (const auto& pair : corpus.pairs) {
        double score_n_sum = 0.0;
        for (int n = 1; n <= 4; ++n) {
            double acc = 0.0;
            for (const auto& ref : pair.references)
                acc += textdetail::tfidf_cosine_n(corpus, pair.candidate, ref, n);
            score_n_sum += acc / static_cast<double>(pair.references.size());
        }
        out.per_pair.push_back(10.0 * score_n_sum / 4.0);
    }
    for (double s : out.per_pair) out.mean += s;
    if (!out.per_pair.empty()) out.mean /= static_cast<double>(out.per_pair.size());
    return out;
}

// Unigram TF-IDF cosine using the corpus DF table.
inline double tfidf_cosine(const TokenSeq& candidate, const TokenSeq& reference,
                           const Corpus& corpus) {
    return textdetail::tfidf_cosine_n(corpus, candidate, reference, 1);
}

// |intersection| / |union| over unigram token sets; both empty -> 1.
inline double jaccard(const TokenSeq& candidate, const TokenSeq& reference) {
    std::unordered_set<std::string> sa(candidate.tokens.begin(), candidate.tokens.end());
    std::unordered_set<std::string> sb(reference.tokens.begin(), reference.tokens.end());
    if (sa.empty() && sb.empty()) return 1.0;
    long inter = 0;
    for (const auto& t : sa)
        if (sb.count(t)) ++inter;
    const long uni = static_cast<long>(sa.size() + sb.size()) - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// unique n-grams / total n-grams over the generated corpus; 0 when there are
// no n-grams at all.
inline double distinct_n(const std::vector<TokenSeq>& generated, int n) {
    if (n < 1) throw ParameterError("distinct_n: n must be >= 1");
    std::unordered_set<std::string> unique;
    long total = 0;
    for (const auto& seq : generated) {
        for (const auto& [gram, cnt] : textdetail::ngram_counts(seq, n)) {
            unique.insert(gram);
            total += cnt;
        }
    }
    if (total == 0) return 0.0;
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

}  // namespace lss
