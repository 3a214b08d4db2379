#pragma once

// Straight-line forward pass over plain nested vectors, used as an oracle for
// the Eigen implementation. Reads parameters by tensor name only.

#include <kwmatch/kwattn.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace kwmatch::reference {

using Matrix = std::vector<std::vector<double>>;

inline Matrix tensor(const kwattn::KwAttnModel<double>& m, const std::string& name) {
    const auto t = m.tensor(name);
    Matrix out(static_cast<std::size_t>(t.rows()), std::vector<double>(static_cast<std::size_t>(t.cols())));
    for (std::size_t r = 0; r < out.size(); ++r)
        for (std::size_t c = 0; c < out[r].size(); ++c)
            out[r][c] = t(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    return out;
}

inline Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y(x.size(), std::vector<double>(w[0].size()));
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < w[0].size(); ++j) {
            double s = b[0][j];
            for (std::size_t k = 0; k < w.size(); ++k) s += x[i][k] * w[k][j];
            y[i][j] = s;
        }
    return y;
}

inline Matrix norm(const Matrix& x, const Matrix& gamma, const Matrix& beta) {
    Matrix y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i].size());
        double mu = 0;
        for (double v : x[i]) mu += v;
        mu /= d;
        double var = 0;
        for (double v : x[i]) var += (v - mu) * (v - mu);
        var /= d;
        for (std::size_t k = 0; k < x[i].size(); ++k)
            y[i][k] = (x[i][k] - mu) / std::sqrt(var + 1e-12) * gamma[0][k] + beta[0][k];
    }
    return y;
}

inline double gelu(double u) {
    return 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
}

struct LayerTrace {
    Matrix out;
    std::vector<Matrix> weights; ///< attention weights per head
};

inline LayerTrace layer(const kwattn::KwAttnModel<double>& m, const std::string& p, const Matrix& x,
                        const kwattn::AttentionMask* mask, std::size_t heads) {
    const std::size_t n = x.size(), d = x[0].size(), dh = d / heads;
    const Matrix q = affine(x, tensor(m, p + ".attn.query.weight"), tensor(m, p + ".attn.query.bias"));
    const Matrix k = affine(x, tensor(m, p + ".attn.key.weight"), Matrix{std::vector<double>(d, 0.0)});
    const Matrix v = affine(x, tensor(m, p + ".attn.value.weight"), tensor(m, p + ".attn.value.bias"));
    Matrix ctx(n, std::vector<double>(d, 0.0));
    LayerTrace trace;
    for (std::size_t h = 0; h < heads; ++h) {
        Matrix w(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> logits(n);
            double mx = -INFINITY;
            for (std::size_t j = 0; j < n; ++j) {
                if (mask && !(*mask)(i, j)) continue;
                double s = 0;
                for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) s += q[i][c] * k[j][c];
                logits[j] = s / std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, logits[j]);
            }
            double z = 0;
            for (std::size_t j = 0; j < n; ++j)
                if (!mask || (*mask)(i, j)) z += std::exp(logits[j] - mx);
            for (std::size_t j = 0; j < n; ++j)
                if (!mask || (*mask)(i, j)) w[i][j] = std::exp(logits[j] - mx) / z;
            for (std::size_t c = h * dh; c < (h + 1) * dh; ++c)
                for (std::size_t j = 0; j < n; ++j) ctx[i][c] += w[i][j] * v[j][c];
        }
        trace.weights.push_back(w);
    }
    Matrix r1 = affine(ctx, tensor(m, p + ".attn.output.weight"), tensor(m, p + ".attn.output.bias"));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) r1[i][c] += x[i][c];
    const Matrix h1 = norm(r1, tensor(m, p + ".attn.norm.gamma"), tensor(m, p + ".attn.norm.beta"));
    Matrix u = affine(h1, tensor(m, p + ".ffn.inner.weight"), tensor(m, p + ".ffn.inner.bias"));
    for (auto& row : u)
        for (auto& val : row) val = gelu(val);
    Matrix r2 = affine(u, tensor(m, p + ".ffn.outer.weight"), tensor(m, p + ".ffn.outer.bias"));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) r2[i][c] += h1[i][c];
    trace.out = norm(r2, tensor(m, p + ".ffn.norm.gamma"), tensor(m, p + ".ffn.norm.beta"));
    return trace;
}

struct ForwardTrace {
    std::vector<double> h_kv;
    double positive = 0;
    LayerTrace kw;
};

/// Whole model: embeddings, encoder, keyword layer, pooling, head.
inline ForwardTrace forward(const kwattn::KwAttnModel<double>& m, const kwattn::PackedPair& pp) {
    const auto& cfg = m.config();
    const std::size_t n = pp.size(), d = cfg.hidden;
    const Matrix tok = tensor(m, "embed.token"), pos = tensor(m, "embed.position");
    std::vector<Matrix> hidden{Matrix(n, std::vector<double>(d))};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) hidden[0][i][c] = tok[static_cast<std::size_t>(pp.tokens[i])][c] + pos[i][c];
    for (std::size_t l = 0; l < cfg.layers; ++l)
        hidden.push_back(layer(m, "encoder." + std::to_string(l), hidden.back(), nullptr, cfg.heads).out);

    const auto mask = kwattn::build_keyword_mask(pp, cfg.mask);
    ForwardTrace t;
    t.kw = layer(m, "kwattn", cfg.stack_on_top ? hidden[cfg.layers] : hidden[cfg.layers - 1], &mask, cfg.heads);

    std::vector<double> a(d, 0.0), b(d, 0.0);
    double na = 0, nb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (pp.special[i]) continue;
        auto& dst = pp.side[i] == kwattn::Side::A ? a : b;
        (pp.side[i] == kwattn::Side::A ? na : nb) += 1;
        for (std::size_t c = 0; c < d; ++c) dst[c] += t.kw.out[i][c];
    }
    for (std::size_t c = 0; c < d; ++c) {
        a[c] /= na;
        b[c] /= nb;
    }
    t.h_kv = hidden[cfg.layers][0];
    t.h_kv.insert(t.h_kv.end(), a.begin(), a.end());
    t.h_kv.insert(t.h_kv.end(), b.begin(), b.end());
    for (std::size_t c = 0; c < d; ++c) t.h_kv.push_back(a[c] - b[c]);
    for (std::size_t c = 0; c < d; ++c) t.h_kv.push_back(b[c] - a[c]);

    const Matrix w = tensor(m, "head.weight"), bias = tensor(m, "head.bias");
    double l0 = bias[0][0], l1 = bias[0][1];
    for (std::size_t k = 0; k < t.h_kv.size(); ++k) {
        l0 += t.h_kv[k] * w[k][0];
        l1 += t.h_kv[k] * w[k][1];
    }
    t.positive = 1.0 / (1.0 + std::exp(l0 - l1));
    return t;
}

} // namespace kwmatch::reference
