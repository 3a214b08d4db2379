#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "corpus.hpp"
#include "error.hpp"
#include "gradcheck.hpp"
#include "keywords.hpp"
#include "sampling.hpp"
#include "softmax.hpp"

namespace kwmatch::kwattn {

// ---------------------------------------------------------------------------
// Vocabulary and pair packing

class Vocabulary {
public:
    static constexpr std::int32_t kUnk = 0;
    static constexpr std::int32_t kCls = 1;
    static constexpr std::int32_t kSep = 2;

    Vocabulary() : tokens_{"[UNK]", "[CLS]", "[SEP]"} { reindex(); }

    /// Specials followed by every distinct token in lexicographic order.
    static Vocabulary from_tokens(const std::set<std::string>& tokens) {
        Vocabulary v;
        for (const auto& t : tokens)
            if (!v.ids_.contains(t)) v.tokens_.push_back(t);
        v.reindex();
        return v;
    }

    std::int32_t id(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? kUnk : it->second;
    }
    const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const noexcept { return tokens_.size(); }

    /// One token per line; the 0-based line index is the id.
    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw Error("cannot write " + path);
        for (const auto& t : tokens_) out << t << '\n';
        if (!out) throw Error("write failed: " + path);
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open " + path);
        Vocabulary v;
        v.tokens_.clear();
        std::string line;
        while (std::getline(in, line)) v.tokens_.push_back(line);
        if (v.tokens_.size() < 3 || v.tokens_[0] != "[UNK]" || v.tokens_[1] != "[CLS]" || v.tokens_[2] != "[SEP]")
            throw Error(path + ": vocabulary must start with [UNK], [CLS], [SEP]");
        v.reindex();
        if (v.ids_.size() != v.tokens_.size()) throw Error(path + ": duplicate vocabulary entries");
        return v;
    }

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

private:
    void reindex() {
        ids_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], static_cast<std::int32_t>(i));
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> ids_;
};

enum class Side : std::uint8_t { A, B };
enum class Segment : std::uint8_t { A, B, Special };

/// [CLS_A, a_1..a_N, SEP_A, CLS_B, b_1..b_M, SEP_B]
struct PackedPair {
    std::vector<std::int32_t> tokens;
    std::vector<Side> side;
    std::vector<bool> special;
    std::vector<bool> keyword_flag;

    std::size_t size() const noexcept { return tokens.size(); }
    Segment segment_of(std::size_t pos) const {
        if (special[pos]) return Segment::Special;
        return side[pos] == Side::A ? Segment::A : Segment::B;
    }
};

/// Packs a pair; keyword spans are token index ranges within each sentence.
inline PackedPair pack_pair(const TokenSequence& a, const std::vector<KeywordSpan>& a_spans, const TokenSequence& b,
                            const std::vector<KeywordSpan>& b_spans, const Vocabulary& vocab, std::size_t max_len) {
    if (a.empty() || b.empty()) throw Error("pack_pair: empty sentence");
    if (a.size() + b.size() + 4 > max_len)
        throw Error("pack_pair: packed length " + std::to_string(a.size() + b.size() + 4) + " exceeds " +
                    std::to_string(max_len));
    PackedPair pp;
    auto emit = [&](std::int32_t id, Side s, bool special, bool kw) {
        pp.tokens.push_back(id);
        pp.side.push_back(s);
        pp.special.push_back(special);
        pp.keyword_flag.push_back(kw);
    };
    auto sentence = [&](const TokenSequence& toks, const std::vector<KeywordSpan>& spans, Side s) {
        std::vector<bool> kw(toks.size(), false);
        for (const auto& sp : spans) {
            if (sp.start >= sp.end || sp.end > toks.size()) throw Error("pack_pair: keyword span out of range");
            for (auto i = sp.start; i < sp.end; ++i) kw[i] = true;
        }
        emit(Vocabulary::kCls, s, true, false);
        for (std::size_t i = 0; i < toks.size(); ++i) emit(vocab.id(toks[i]), s, false, kw[i]);
        emit(Vocabulary::kSep, s, true, false);
    };
    sentence(a, a_spans, Side::A);
    sentence(b, b_spans, Side::B);
    return pp;
}

// ---------------------------------------------------------------------------
// Keyword attention mask

enum class MaskKind { Keyword, AllCross };

/// Row-major n x n allow matrix.
struct AttentionMask {
    std::size_t n = 0;
    std::vector<std::uint8_t> allow;

    bool operator()(std::size_t i, std::size_t j) const { return allow[i * n + j] != 0; }
};

/// Every position (specials included) attends only to non-special keyword
/// tokens of the other sentence. If the other sentence has no keyword, the row
/// falls back to all of its non-special tokens. AllCross applies the fallback
/// to every row.
inline AttentionMask build_keyword_mask(const PackedPair& pp, MaskKind kind = MaskKind::Keyword) {
    const auto n = pp.size();
    AttentionMask m{n, std::vector<std::uint8_t>(n * n, 0)};
    bool has_kw[2] = {false, false};
    for (std::size_t j = 0; j < n; ++j)
        if (!pp.special[j] && pp.keyword_flag[j]) has_kw[static_cast<int>(pp.side[j])] = true;
    for (std::size_t i = 0; i < n; ++i) {
        const auto other = pp.side[i] == Side::A ? Side::B : Side::A;
        const bool keyword_only = kind == MaskKind::Keyword && has_kw[static_cast<int>(other)];
        for (std::size_t j = 0; j < n; ++j) {
            if (pp.side[j] != other || pp.special[j]) continue;
            if (!keyword_only || pp.keyword_flag[j]) m.allow[i * n + j] = 1;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Parameters

template <std::floating_point Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <std::floating_point Real>
using MatMap = Eigen::Map<Mat<Real>>;
template <std::floating_point Real>
using ConstMatMap = Eigen::Map<const Mat<Real>>;

struct TensorInfo {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;

    std::size_t size() const noexcept { return rows * cols; }
    bool operator==(const TensorInfo&) const = default;
};

/// Named row-major tensors laid out in one flat buffer.
class ParameterLayout {
public:
    std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
        tensors_.push_back({std::move(name), rows, cols, total_});
        total_ += rows * cols;
        return tensors_.size() - 1;
    }
    const TensorInfo& operator[](std::size_t i) const { return tensors_[i]; }
    const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }
    std::size_t total() const noexcept { return total_; }

    std::size_t find(const std::string& name) const {
        for (std::size_t i = 0; i < tensors_.size(); ++i)
            if (tensors_[i].name == name) return i;
        throw Error("no tensor named \"" + name + "\"");
    }

    template <typename Real>
    MatMap<Real> map(std::vector<Real>& buf, std::size_t i) const {
        const auto& t = tensors_[i];
        return MatMap<Real>(buf.data() + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
    }
    template <typename Real>
    ConstMatMap<Real> map(const std::vector<Real>& buf, std::size_t i) const {
        const auto& t = tensors_[i];
        return ConstMatMap<Real>(buf.data() + t.offset, static_cast<Eigen::Index>(t.rows),
                                 static_cast<Eigen::Index>(t.cols));
    }

    bool operator==(const ParameterLayout&) const = default;

private:
    std::vector<TensorInfo> tensors_;
    std::size_t total_ = 0;
};

/// Tensor indices of one post-norm transformer layer. The key projection has
/// no bias: it would shift every logit of a row equally and never get a gradient.
struct LayerHandles {
    std::size_t wq, bq, wk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;

    static LayerHandles add(ParameterLayout& L, const std::string& p, std::size_t d, std::size_t f) {
        LayerHandles h{};
        h.wq = L.add(p + ".attn.query.weight", d, d);
        h.bq = L.add(p + ".attn.query.bias", 1, d);
        h.wk = L.add(p + ".attn.key.weight", d, d);
        h.wv = L.add(p + ".attn.value.weight", d, d);
        h.bv = L.add(p + ".attn.value.bias", 1, d);
        h.wo = L.add(p + ".attn.output.weight", d, d);
        h.bo = L.add(p + ".attn.output.bias", 1, d);
        h.ln1_g = L.add(p + ".attn.norm.gamma", 1, d);
        h.ln1_b = L.add(p + ".attn.norm.beta", 1, d);
        h.w1 = L.add(p + ".ffn.inner.weight", d, f);
        h.b1 = L.add(p + ".ffn.inner.bias", 1, f);
        h.w2 = L.add(p + ".ffn.outer.weight", f, d);
        h.b2 = L.add(p + ".ffn.outer.bias", 1, d);
        h.ln2_g = L.add(p + ".ffn.norm.gamma", 1, d);
        h.ln2_b = L.add(p + ".ffn.norm.beta", 1, d);
        return h;
    }

    std::vector<std::size_t> gammas() const { return {ln1_g, ln2_g}; }
};

struct KwAttnConfig {
    std::size_t vocab_size = 0;
    std::size_t hidden = 32;
    std::size_t heads = 4;
    std::size_t layers = 2;
    std::size_t ffn = 0; ///< 0 means 4 * hidden
    std::size_t max_len = 64;
    double init_std = 0.02;
    /// false: the keyword layer reads the second-to-last encoder output (runs
    /// in parallel to the last layer); true: it reads the last layer output.
    bool stack_on_top = false;
    MaskKind mask = MaskKind::Keyword;

    std::size_t ffn_width() const noexcept { return ffn ? ffn : 4 * hidden; }

    void validate() const {
        if (vocab_size < 3) throw Error("kwattn: vocabulary too small");
        if (hidden == 0 || heads == 0 || hidden % heads != 0) throw Error("kwattn: hidden must be divisible by heads");
        if (layers < 1) throw Error("kwattn: need at least one encoder layer");
        if (max_len < 6) throw Error("kwattn: max_len too small");
    }

    bool operator==(const KwAttnConfig&) const = default;
};

inline constexpr double kLayerNormEps = 1e-12;
inline constexpr double kMaskedLogit = -1e9;

// ---------------------------------------------------------------------------
// Layer math

namespace detail {

template <typename Real>
struct LayerNormCache {
    Mat<Real> xhat;
    Eigen::Matrix<Real, Eigen::Dynamic, 1> inv_sigma;
};

template <typename Real, typename G, typename B>
Mat<Real> layer_norm(const Mat<Real>& x, const G& gamma, const B& beta, LayerNormCache<Real>& c) {
    const auto n = x.rows();
    const auto d = x.cols();
    c.xhat.resize(n, d);
    c.inv_sigma.resize(n);
    Mat<Real> y(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Real mu = x.row(i).mean();
        const Real var = (x.row(i).array() - mu).square().mean();
        const Real inv = Real(1) / std::sqrt(var + static_cast<Real>(kLayerNormEps));
        c.inv_sigma(i) = inv;
        c.xhat.row(i) = (x.row(i).array() - mu) * inv;
        y.row(i) = c.xhat.row(i).array() * gamma.row(0).array() + beta.row(0).array();
    }
    return y;
}

template <typename Real, typename G, typename DG, typename DB>
Mat<Real> layer_norm_backward(const Mat<Real>& dy, const G& gamma, const LayerNormCache<Real>& c, DG&& dgamma,
                              DB&& dbeta) {
    const auto n = dy.rows();
    const auto d = static_cast<Real>(dy.cols());
    dgamma.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    dbeta.row(0) += dy.colwise().sum();
    Mat<Real> dx(n, dy.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto dxhat = (dy.row(i).array() * gamma.row(0).array()).eval();
        const Real m1 = dxhat.sum() / d;
        const Real m2 = (dxhat * c.xhat.row(i).array()).sum() / d;
        dx.row(i) = c.inv_sigma(i) * (dxhat - m1 - c.xhat.row(i).array() * m2);
    }
    return dx;
}

template <typename Real>
Real gelu(Real u) {
    constexpr Real c = static_cast<Real>(0.7978845608028654); // sqrt(2/pi)
    return Real(0.5) * u * (Real(1) + std::tanh(c * (u + Real(0.044715) * u * u * u)));
}

template <typename Real>
Real gelu_grad(Real u) {
    constexpr Real c = static_cast<Real>(0.7978845608028654);
    const Real t = std::tanh(c * (u + Real(0.044715) * u * u * u));
    return Real(0.5) * (Real(1) + t) + Real(0.5) * u * (Real(1) - t * t) * c * (Real(1) + Real(3 * 0.044715) * u * u);
}

} // namespace detail

template <typename Real>
struct LayerCache {
    Mat<Real> X, Q, K, V, C, H1, U, G;
    std::vector<Mat<Real>> P; ///< post-softmax attention weights per head
    detail::LayerNormCache<Real> ln1, ln2;
};

/// Standard multi-head attention layer (post-norm, GELU feed-forward). A null
/// mask attends everywhere; otherwise disallowed logits get an additive -1e9
/// and their post-softmax weights are forced to exactly zero.
template <typename Real>
Mat<Real> layer_forward(const ParameterLayout& L, const std::vector<Real>& w, const LayerHandles& h, const Mat<Real>& X,
                        const AttentionMask* mask, std::size_t heads, LayerCache<Real>& c) {
    const auto n = X.rows();
    const auto d = X.cols();
    if (d != static_cast<Eigen::Index>(L[h.wq].rows)) throw Error("layer_forward: hidden width mismatch");
    if (mask && mask->n != static_cast<std::size_t>(n)) throw Error("layer_forward: mask size mismatch");
    const auto dh = d / static_cast<Eigen::Index>(heads);
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));

    c.X = X;
    c.Q = X * L.map(w, h.wq);
    c.Q.rowwise() += L.map(w, h.bq).row(0);
    c.K = X * L.map(w, h.wk);
    c.V = X * L.map(w, h.wv);
    c.V.rowwise() += L.map(w, h.bv).row(0);
    c.C.resize(n, d);
    c.P.resize(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
        const auto col = static_cast<Eigen::Index>(hd) * dh;
        Mat<Real> S = (c.Q.middleCols(col, dh) * c.K.middleCols(col, dh).transpose()) * scale;
        if (mask)
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j)
                    if (!(*mask)(static_cast<std::size_t>(i), static_cast<std::size_t>(j)))
                        S(i, j) += static_cast<Real>(kMaskedLogit);
        auto& P = c.P[hd];
        P.resize(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Real mx = S.row(i).maxCoeff();
            P.row(i) = (S.row(i).array() - mx).exp().matrix();
            P.row(i) /= P.row(i).sum();
        }
        if (mask)
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j)
                    if (!(*mask)(static_cast<std::size_t>(i), static_cast<std::size_t>(j))) P(i, j) = Real(0);
        c.C.middleCols(col, dh) = P * c.V.middleCols(col, dh);
    }
    Mat<Real> R1 = c.C * L.map(w, h.wo);
    R1.rowwise() += L.map(w, h.bo).row(0);
    R1 += X;
    c.H1 = detail::layer_norm(R1, L.map(w, h.ln1_g), L.map(w, h.ln1_b), c.ln1);
    c.U = c.H1 * L.map(w, h.w1);
    c.U.rowwise() += L.map(w, h.b1).row(0);
    c.G = c.U.unaryExpr([](Real u) { return detail::gelu(u); });
    Mat<Real> R2 = c.G * L.map(w, h.w2);
    R2.rowwise() += L.map(w, h.b2).row(0);
    R2 += c.H1;
    return detail::layer_norm(R2, L.map(w, h.ln2_g), L.map(w, h.ln2_b), c.ln2);
}

/// Accumulates parameter gradients into `g`; returns d(loss)/dX. `dV`, when
/// non-null, receives the gradient with respect to the value projection output.
template <typename Real>
Mat<Real> layer_backward(const ParameterLayout& L, const std::vector<Real>& w, std::vector<Real>& g,
                         const LayerHandles& h, const LayerCache<Real>& c, const Mat<Real>& dY, std::size_t heads,
                         Mat<Real>* dV_out = nullptr) {
    const auto n = c.X.rows();
    const auto d = c.X.cols();
    const auto dh = d / static_cast<Eigen::Index>(heads);
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));

    Mat<Real> dR2 = detail::layer_norm_backward(dY, L.map(w, h.ln2_g), c.ln2, L.map(g, h.ln2_g), L.map(g, h.ln2_b));
    L.map(g, h.w2) += c.G.transpose() * dR2;
    L.map(g, h.b2).row(0) += dR2.colwise().sum();
    Mat<Real> dG = dR2 * L.map(w, h.w2).transpose();
    Mat<Real> dU = dG.array() * c.U.unaryExpr([](Real u) { return detail::gelu_grad(u); }).array();
    L.map(g, h.w1) += c.H1.transpose() * dU;
    L.map(g, h.b1).row(0) += dU.colwise().sum();
    Mat<Real> dH1 = dU * L.map(w, h.w1).transpose() + dR2;

    Mat<Real> dR1 = detail::layer_norm_backward(dH1, L.map(w, h.ln1_g), c.ln1, L.map(g, h.ln1_g), L.map(g, h.ln1_b));
    L.map(g, h.wo) += c.C.transpose() * dR1;
    L.map(g, h.bo).row(0) += dR1.colwise().sum();
    Mat<Real> dC = dR1 * L.map(w, h.wo).transpose();

    Mat<Real> dQ(n, d), dK(n, d), dV(n, d);
    for (std::size_t hd = 0; hd < heads; ++hd) {
        const auto col = static_cast<Eigen::Index>(hd) * dh;
        const auto& P = c.P[hd];
        const Mat<Real> dCh = dC.middleCols(col, dh);
        dV.middleCols(col, dh) = P.transpose() * dCh;
        Mat<Real> dP = dCh * c.V.middleCols(col, dh).transpose();
        Mat<Real> dS(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Real dot = (dP.row(i).array() * P.row(i).array()).sum();
            dS.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)).matrix();
        }
        dQ.middleCols(col, dh) = (dS * c.K.middleCols(col, dh)) * scale;
        dK.middleCols(col, dh) = (dS.transpose() * c.Q.middleCols(col, dh)) * scale;
    }
    L.map(g, h.wq) += c.X.transpose() * dQ;
    L.map(g, h.bq).row(0) += dQ.colwise().sum();
    L.map(g, h.wk) += c.X.transpose() * dK;
    L.map(g, h.wv) += c.X.transpose() * dV;
    L.map(g, h.bv).row(0) += dV.colwise().sum();
    Mat<Real> dX = dR1 + dQ * L.map(w, h.wq).transpose() + dK * L.map(w, h.wk).transpose() +
                   dV * L.map(w, h.wv).transpose();
    if (dV_out) *dV_out = dV;
    return dX;
}

// ---------------------------------------------------------------------------
// Pair representation

/// Mean over each sentence's non-special positions.
template <typename Real>
std::pair<Eigen::Matrix<Real, 1, Eigen::Dynamic>, Eigen::Matrix<Real, 1, Eigen::Dynamic>>
pool_sentences(const Mat<Real>& hidden, const PackedPair& pp) {
    if (static_cast<std::size_t>(hidden.rows()) != pp.size()) throw Error("pool_sentences: shape mismatch");
    Eigen::Matrix<Real, 1, Eigen::Dynamic> a = Eigen::Matrix<Real, 1, Eigen::Dynamic>::Zero(hidden.cols());
    Eigen::Matrix<Real, 1, Eigen::Dynamic> b = a;
    std::size_t na = 0, nb = 0;
    for (std::size_t i = 0; i < pp.size(); ++i) {
        if (pp.special[i]) continue;
        if (pp.side[i] == Side::A) {
            a += hidden.row(static_cast<Eigen::Index>(i));
            ++na;
        } else {
            b += hidden.row(static_cast<Eigen::Index>(i));
            ++nb;
        }
    }
    if (!na || !nb) throw Error("pool_sentences: empty sentence");
    return {a / static_cast<Real>(na), b / static_cast<Real>(nb)};
}

/// (a - b) followed by (b - a).
template <typename Real>
std::vector<Real> compute_k_diff(std::span<const Real> a, std::span<const Real> b) {
    if (a.size() != b.size()) throw Error("compute_k_diff: width mismatch");
    std::vector<Real> out(2 * a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] - b[i];
        out[a.size() + i] = b[i] - a[i];
    }
    return out;
}

/// h_cls, h_kw(A), h_kw(B), k_diff concatenated in that order.
template <typename Real>
std::vector<Real> assemble_h_kv(std::span<const Real> cls, std::span<const Real> a, std::span<const Real> b,
                                std::span<const Real> k_diff) {
    const auto d = cls.size();
    if (a.size() != d || b.size() != d || k_diff.size() != 2 * d) throw Error("assemble_h_kv: width mismatch");
    std::vector<Real> out;
    out.reserve(5 * d);
    out.insert(out.end(), cls.begin(), cls.end());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    out.insert(out.end(), k_diff.begin(), k_diff.end());
    return out;
}

/// Affine 5d -> 2 head; returns both class logits.
template <typename Real, typename W, typename B>
std::array<Real, 2> classify_logits(const W& weight, const B& bias, std::span<const Real> h_kv) {
    if (static_cast<std::size_t>(weight.rows()) != h_kv.size()) throw Error("classify: width mismatch");
    std::array<Real, 2> logit{bias(0, 0), bias(0, 1)};
    for (std::size_t k = 0; k < h_kv.size(); ++k) {
        logit[0] += h_kv[k] * weight(static_cast<Eigen::Index>(k), 0);
        logit[1] += h_kv[k] * weight(static_cast<Eigen::Index>(k), 1);
    }
    return logit;
}

/// Head followed by softmax; returns both class probabilities.
template <typename Real, typename W, typename B>
std::array<Real, 2> classify_probs(const W& weight, const B& bias, std::span<const Real> h_kv) {
    return softmax2(classify_logits<Real>(weight, bias, h_kv));
}

template <typename Real, typename W, typename B>
Real classify(const W& weight, const B& bias, std::span<const Real> h_kv) {
    return classify_probs<Real>(weight, bias, h_kv)[1];
}

// ---------------------------------------------------------------------------
// Model

template <typename Real>
struct ForwardCache {
    std::vector<Mat<Real>> hidden; ///< hidden[0] = embeddings, hidden[l] = output of encoder layer l
    std::vector<LayerCache<Real>> encoder;
    LayerCache<Real> kw;
    AttentionMask mask;
    Mat<Real> kw_out;
    std::vector<Real> h_cls, h_a, h_b, k_diff, h_kv;
    std::array<Real, 2> logit{}, prob{};
};

struct BackwardInfo {
    double loss = 0.0;
};

/// Encoder stub plus the keyword-attentive layer and classifier head.
template <std::floating_point Real = double>
class KwAttnModel {
public:
    KwAttnModel() = default;

    explicit KwAttnModel(const KwAttnConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const auto d = cfg_.hidden, f = cfg_.ffn_width();
        tok_emb_ = layout_.add("embed.token", cfg_.vocab_size, d);
        pos_emb_ = layout_.add("embed.position", cfg_.max_len, d);
        for (std::size_t l = 0; l < cfg_.layers; ++l)
            encoder_.push_back(LayerHandles::add(layout_, "encoder." + std::to_string(l), d, f));
        kw_ = LayerHandles::add(layout_, "kwattn", d, f);
        head_w_ = layout_.add("head.weight", 5 * d, 2);
        head_b_ = layout_.add("head.bias", 1, 2);
        params_.assign(layout_.total(), Real(0));
    }

    /// Weights ~ N(0, init_std), norm gains 1, biases 0.
    static KwAttnModel initialized(const KwAttnConfig& cfg, std::uint64_t seed) {
        KwAttnModel m(cfg);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, cfg.init_std);
        for (const auto& t : m.layout_.tensors()) {
            const bool gamma = t.name.ends_with(".gamma");
            const bool bias = t.name.ends_with(".bias") || t.name.ends_with(".beta");
            for (std::size_t i = 0; i < t.size(); ++i)
                m.params_[t.offset + i] = gamma ? Real(1) : bias ? Real(0) : static_cast<Real>(normal(rng));
        }
        return m;
    }

    const KwAttnConfig& config() const noexcept { return cfg_; }
    const ParameterLayout& layout() const noexcept { return layout_; }
    std::vector<Real>& params() noexcept { return params_; }
    const std::vector<Real>& params() const noexcept { return params_; }
    const LayerHandles& kw_handles() const noexcept { return kw_; }
    const LayerHandles& encoder_handles(std::size_t l) const { return encoder_.at(l); }

    MatMap<Real> tensor(const std::string& name) { return layout_.map(params_, layout_.find(name)); }
    ConstMatMap<Real> tensor(const std::string& name) const { return layout_.map(params_, layout_.find(name)); }

    AttentionMask mask_for(const PackedPair& pp) const { return build_keyword_mask(pp, cfg_.mask); }

    ForwardCache<Real> forward(const PackedPair& pp) const {
        const auto n = pp.size();
        if (n > cfg_.max_len) throw Error("kwattn forward: sequence longer than max_len");
        const auto d = static_cast<Eigen::Index>(cfg_.hidden);
        ForwardCache<Real> c;
        c.mask = mask_for(pp);
        Mat<Real> E(static_cast<Eigen::Index>(n), d);
        const auto tok = layout_.map(params_, tok_emb_);
        const auto pos = layout_.map(params_, pos_emb_);
        for (std::size_t i = 0; i < n; ++i) {
            const auto id = pp.tokens[i];
            if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) throw Error("kwattn forward: token id out of range");
            E.row(static_cast<Eigen::Index>(i)) = tok.row(id) + pos.row(static_cast<Eigen::Index>(i));
        }
        c.hidden.push_back(std::move(E));
        c.encoder.resize(cfg_.layers);
        for (std::size_t l = 0; l < cfg_.layers; ++l)
            c.hidden.push_back(layer_forward(layout_, params_, encoder_[l], c.hidden[l], nullptr, cfg_.heads, c.encoder[l]));

        const auto& kw_in = cfg_.stack_on_top ? c.hidden[cfg_.layers] : c.hidden[cfg_.layers - 1];
        c.kw_out = layer_forward(layout_, params_, kw_, kw_in, &c.mask, cfg_.heads, c.kw);
        auto [a, b] = pool_sentences(c.kw_out, pp);
        const auto& last = c.hidden[cfg_.layers];
        c.h_cls.assign(last.row(0).data(), last.row(0).data() + d);
        c.h_a.assign(a.data(), a.data() + d);
        c.h_b.assign(b.data(), b.data() + d);
        c.k_diff = compute_k_diff<Real>(c.h_a, c.h_b);
        c.h_kv = assemble_h_kv<Real>(c.h_cls, c.h_a, c.h_b, c.k_diff);
        c.logit = classify_logits<Real>(layout_.map(params_, head_w_), layout_.map(params_, head_b_), c.h_kv);
        c.prob = softmax2(c.logit);
        return c;
    }

    Real probability(const PackedPair& pp) const { return forward(pp).prob[1]; }

    Real loss(const PackedPair& pp, Label label) const {
        return cross_entropy2(forward(pp).logit, label == Label::Positive ? 1 : 0);
    }

    /// Cross-entropy gradient accumulated into `grad` (same layout as params).
    /// `kw_value_grad`, when non-null, receives d(loss)/dV of the keyword layer.
    Real backward(const PackedPair& pp, const ForwardCache<Real>& c, Label label, std::vector<Real>& grad,
                  Mat<Real>* kw_value_grad = nullptr) const {
        if (grad.size() != params_.size()) grad.assign(params_.size(), Real(0));
        const auto d = cfg_.hidden;
        const int y = label == Label::Positive ? 1 : 0;
        const Real loss = cross_entropy2(c.logit, y);
        const auto dlogit = cross_entropy2_grad(c.prob, y);

        auto hw = layout_.map(params_, head_w_);
        auto ghw = layout_.map(grad, head_w_);
        auto ghb = layout_.map(grad, head_b_);
        std::vector<Real> dkv(5 * d);
        for (std::size_t k = 0; k < 5 * d; ++k) {
            const auto r = static_cast<Eigen::Index>(k);
            ghw(r, 0) += c.h_kv[k] * dlogit[0];
            ghw(r, 1) += c.h_kv[k] * dlogit[1];
            dkv[k] = hw(r, 0) * dlogit[0] + hw(r, 1) * dlogit[1];
        }
        ghb(0, 0) += dlogit[0];
        ghb(0, 1) += dlogit[1];

        std::vector<Real> da(d), db(d);
        for (std::size_t k = 0; k < d; ++k) {
            const Real dk1 = dkv[3 * d + k], dk2 = dkv[4 * d + k];
            da[k] = dkv[d + k] + dk1 - dk2;
            db[k] = dkv[2 * d + k] - dk1 + dk2;
        }
        std::size_t na = 0, nb = 0;
        for (std::size_t i = 0; i < pp.size(); ++i)
            if (!pp.special[i]) (pp.side[i] == Side::A ? na : nb)++;
        Mat<Real> dZ = Mat<Real>::Zero(static_cast<Eigen::Index>(pp.size()), static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < pp.size(); ++i) {
            if (pp.special[i]) continue;
            const bool a_side = pp.side[i] == Side::A;
            const auto& src = a_side ? da : db;
            const Real inv = Real(1) / static_cast<Real>(a_side ? na : nb);
            for (std::size_t k = 0; k < d; ++k) dZ(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = src[k] * inv;
        }
        Mat<Real> dkw_in = layer_backward(layout_, params_, grad, kw_, c.kw, dZ, cfg_.heads, kw_value_grad);

        const auto L = cfg_.layers;
        Mat<Real> dH = Mat<Real>::Zero(static_cast<Eigen::Index>(pp.size()), static_cast<Eigen::Index>(d));
        for (std::size_t k = 0; k < d; ++k) dH(0, static_cast<Eigen::Index>(k)) = dkv[k];
        if (cfg_.stack_on_top) dH += dkw_in;
        for (std::size_t l = L; l-- > 0;) {
            dH = layer_backward(layout_, params_, grad, encoder_[l], c.encoder[l], dH, cfg_.heads);
            if (!cfg_.stack_on_top && l == L - 1) dH += dkw_in;
        }
        auto gtok = layout_.map(grad, tok_emb_);
        auto gpos = layout_.map(grad, pos_emb_);
        for (std::size_t i = 0; i < pp.size(); ++i) {
            gtok.row(pp.tokens[i]) += dH.row(static_cast<Eigen::Index>(i));
            gpos.row(static_cast<Eigen::Index>(i)) += dH.row(static_cast<Eigen::Index>(i));
        }
        return loss;
    }

    bool operator==(const KwAttnModel& o) const { return cfg_ == o.cfg_ && layout_ == o.layout_ && params_ == o.params_; }

    void save(const std::string& path) const;
    static KwAttnModel load(const std::string& path);

private:
    KwAttnConfig cfg_;
    ParameterLayout layout_;
    std::vector<Real> params_;
    std::size_t tok_emb_ = 0, pos_emb_ = 0, head_w_ = 0, head_b_ = 0;
    std::vector<LayerHandles> encoder_;
    LayerHandles kw_{};
};

// ---------------------------------------------------------------------------
// Training

struct LabeledPair {
    PackedPair pair;
    Label label = Label::Negative;
};

struct ToyTrainConfig {
    std::size_t epochs = 10;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Mini-batch SGD with momentum on mean cross-entropy. Accuracy in the trace
/// is measured on the fly (pre-update predictions).
template <typename Real>
std::vector<EpochStats> train_toy(KwAttnModel<Real>& model, const std::vector<LabeledPair>& data,
                                  const ToyTrainConfig& cfg) {
    bool pos = false, neg = false;
    for (const auto& e : data) (e.label == Label::Positive ? pos : neg) = true;
    if (!pos || !neg) throw Error("kwattn train: both classes must be present");
    if (cfg.batch_size < 1 || cfg.epochs < 1) throw Error("kwattn train: bad batch size or epochs");

    auto& w = model.params();
    std::vector<Real> grad(w.size()), velocity(w.size(), Real(0));
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<EpochStats> trace;
    const Real lr = static_cast<Real>(cfg.learning_rate);
    const Real mu = static_cast<Real>(cfg.momentum);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto stop = std::min(order.size(), start + cfg.batch_size);
            std::fill(grad.begin(), grad.end(), Real(0));
            for (auto k = start; k < stop; ++k) {
                const auto& ex = data[order[k]];
                const auto c = model.forward(ex.pair);
                correct += (c.prob[1] >= Real(0.5)) == (ex.label == Label::Positive);
                loss_sum += static_cast<double>(model.backward(ex.pair, c, ex.label, grad));
            }
            if (lr == Real(0)) continue;
            const Real inv = Real(1) / static_cast<Real>(stop - start);
            for (std::size_t i = 0; i < w.size(); ++i) {
                velocity[i] = mu * velocity[i] + grad[i] * inv;
                w[i] -= lr * velocity[i];
            }
        }
        trace.push_back({epoch + 1, loss_sum / static_cast<double>(data.size()),
                         static_cast<double>(correct) / static_cast<double>(data.size())});
    }
    return trace;
}

/// Positive-class probabilities for a batch of pairs.
template <typename Real>
std::vector<double> predict(const KwAttnModel<Real>& model, const std::vector<LabeledPair>& data) {
    std::vector<double> out;
    out.reserve(data.size());
    for (const auto& e : data) out.push_back(static_cast<double>(model.probability(e.pair)));
    return out;
}

// ---------------------------------------------------------------------------
// Gradient check

/// Central-difference check over every tensor. Tensors with more than
/// `samples` coordinates are subsampled; the token embedding table is sampled
/// only from rows the pair uses and the position table from used positions.
template <typename Rng>
GradCheckReport grad_check(KwAttnModel<double>& model, const PackedPair& pp, Label label, double step,
                           std::size_t samples, Rng& rng) {
    if (!(step > 0)) throw Error("grad_check: step must be > 0");
    std::vector<double> grad(model.params().size(), 0.0);
    model.backward(pp, model.forward(pp), label, grad);
    auto loss = [&] { return model.loss(pp, label); };
    GradCheckReport report;
    const auto& L = model.layout();
    const auto d = model.config().hidden;
    for (const auto& t : L.tensors()) {
        std::vector<std::size_t> candidates;
        if (t.name == "embed.token") {
            std::set<std::int32_t> used(pp.tokens.begin(), pp.tokens.end());
            for (auto id : used)
                for (std::size_t k = 0; k < d; ++k) candidates.push_back(static_cast<std::size_t>(id) * d + k);
        } else if (t.name == "embed.position") {
            for (std::size_t i = 0; i < pp.size() * d; ++i) candidates.push_back(i);
        }
        std::span<double> params(model.params().data() + t.offset, t.size());
        std::span<const double> analytic(grad.data() + t.offset, t.size());
        report.groups.push_back(check_group(t.name, params, analytic, loss, step, samples, rng, std::move(candidates)));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Parameter file: magic, version, scalar width, config, tensor count, then
// per tensor: name length, name, rows, cols, row-major values.

namespace detail {

constexpr char kParamMagic[8] = {'K', 'W', 'A', 'T', 'T', 'N', '\0', '\0'};
constexpr std::uint32_t kParamVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw Error("truncated parameter file");
    return v;
}

} // namespace detail

template <std::floating_point Real>
void KwAttnModel<Real>::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out.write(detail::kParamMagic, sizeof detail::kParamMagic);
    detail::put(out, detail::kParamVersion);
    detail::put(out, static_cast<std::uint32_t>(sizeof(Real)));
    for (auto v : {cfg_.vocab_size, cfg_.hidden, cfg_.heads, cfg_.layers, cfg_.ffn, cfg_.max_len})
        detail::put(out, static_cast<std::uint64_t>(v));
    detail::put(out, cfg_.init_std);
    detail::put(out, static_cast<std::uint8_t>(cfg_.stack_on_top));
    detail::put(out, static_cast<std::uint8_t>(cfg_.mask == MaskKind::AllCross));
    detail::put(out, static_cast<std::uint64_t>(layout_.tensors().size()));
    for (const auto& t : layout_.tensors()) {
        detail::put(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::put(out, static_cast<std::uint64_t>(t.rows));
        detail::put(out, static_cast<std::uint64_t>(t.cols));
        out.write(reinterpret_cast<const char*>(params_.data() + t.offset),
                  static_cast<std::streamsize>(t.size() * sizeof(Real)));
    }
    if (!out) throw Error("write failed: " + path);
}

template <std::floating_point Real>
KwAttnModel<Real> KwAttnModel<Real>::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    char magic[sizeof detail::kParamMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, detail::kParamMagic, sizeof magic) != 0) throw Error(path + ": not a kwattn parameter file");
    if (detail::get<std::uint32_t>(in) != detail::kParamVersion) throw Error(path + ": unsupported version");
    if (detail::get<std::uint32_t>(in) != sizeof(Real)) throw Error(path + ": scalar width mismatch");
    KwAttnConfig cfg;
    cfg.vocab_size = detail::get<std::uint64_t>(in);
    cfg.hidden = detail::get<std::uint64_t>(in);
    cfg.heads = detail::get<std::uint64_t>(in);
    cfg.layers = detail::get<std::uint64_t>(in);
    cfg.ffn = detail::get<std::uint64_t>(in);
    cfg.max_len = detail::get<std::uint64_t>(in);
    cfg.init_std = detail::get<double>(in);
    cfg.stack_on_top = detail::get<std::uint8_t>(in) != 0;
    cfg.mask = detail::get<std::uint8_t>(in) ? MaskKind::AllCross : MaskKind::Keyword;
    if (cfg.vocab_size > (1u << 24) || cfg.hidden > 4096 || cfg.layers > 64 || cfg.max_len > 4096 || cfg.ffn > 65536)
        throw Error(path + ": implausible dimensions");
    KwAttnModel m(cfg);
    const auto count = detail::get<std::uint64_t>(in);
    if (count != m.layout_.tensors().size()) throw Error(path + ": tensor count mismatch");
    for (const auto& t : m.layout_.tensors()) {
        const auto len = detail::get<std::uint32_t>(in);
        if (len > 256) throw Error(path + ": bad tensor name");
        std::string name(len, '\0');
        in.read(name.data(), len);
        const auto rows = detail::get<std::uint64_t>(in);
        const auto cols = detail::get<std::uint64_t>(in);
        if (name != t.name || rows != t.rows || cols != t.cols) throw Error(path + ": unexpected tensor " + name);
        in.read(reinterpret_cast<char*>(m.params_.data() + t.offset), static_cast<std::streamsize>(t.size() * sizeof(Real)));
        if (!in) throw Error(path + ": truncated parameter file");
    }
    return m;
}

} // namespace kwmatch::kwattn
