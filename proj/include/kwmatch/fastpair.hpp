#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"
#include "gradcheck.hpp"
#include "keywords.hpp"
#include "sampling.hpp"
#include "softmax.hpp"

namespace kwmatch {

/// Feature hashing: 64-bit FNV-1a over the eight little-endian seed bytes
/// followed by the feature bytes, finalized with the MurmurHash3 fmix64 mixer
/// and reduced modulo the (power-of-two) bucket count.
class FeatureHasher {
public:
    FeatureHasher(std::uint64_t num_buckets, std::uint64_t seed) : num_buckets_(num_buckets), seed_(seed) {
        if (num_buckets == 0 || !std::has_single_bit(num_buckets))
            throw Error("feature hasher: bucket count must be a power of two");
    }

    static std::uint64_t hash64(std::string_view s, std::uint64_t seed) noexcept {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        constexpr std::uint64_t prime = 0x100000001b3ULL;
        for (int i = 0; i < 8; ++i) {
            h ^= (seed >> (8 * i)) & 0xFF;
            h *= prime;
        }
        for (unsigned char c : s) {
            h ^= c;
            h *= prime;
        }
        h ^= h >> 33;
        h *= 0xff51afd7ed558ccdULL;
        h ^= h >> 33;
        h *= 0xc4ceb9fe1a85ec53ULL;
        h ^= h >> 33;
        return h;
    }

    std::uint64_t bucket(std::string_view feature) const noexcept {
        return hash64(feature, seed_) & (num_buckets_ - 1);
    }

    std::uint64_t num_buckets() const noexcept { return num_buckets_; }
    std::uint64_t seed() const noexcept { return seed_; }

private:
    std::uint64_t num_buckets_;
    std::uint64_t seed_;
};

/// Feature strings before hashing: bag of q (q:), bag of Q (Q:), every cross
/// pair (x:), q tokens against Q keywords (kq:) and Q tokens against q keywords
/// (kQ:). Duplicates are kept.
inline std::vector<std::string> pair_features(const TokenSequence& q, const TokenSequence& Q,
                                              const std::vector<std::string>& q_keys,
                                              const std::vector<std::string>& Q_keys) {
    std::vector<std::string> f;
    f.reserve(q.size() + Q.size() + q.size() * Q.size() + q.size() * Q_keys.size() + Q.size() * q_keys.size());
    for (const auto& t : q) f.push_back("q:" + t);
    for (const auto& t : Q) f.push_back("Q:" + t);
    for (const auto& a : q)
        for (const auto& b : Q) f.push_back("x:" + a + '\x1f' + b);
    for (const auto& a : q)
        for (const auto& k : Q_keys) f.push_back("kq:" + a + '\x1f' + k);
    for (const auto& b : Q)
        for (const auto& k : q_keys) f.push_back("kQ:" + b + '\x1f' + k);
    return f;
}

inline std::vector<std::uint64_t> featurize(const TokenSequence& q, const TokenSequence& Q,
                                            const std::vector<std::string>& q_keys,
                                            const std::vector<std::string>& Q_keys, const FeatureHasher& hasher) {
    std::vector<std::uint64_t> ids;
    for (const auto& f : pair_features(q, Q, q_keys, Q_keys)) ids.push_back(hasher.bucket(f));
    return ids;
}

/// A labeled pair with its keyword surfaces already extracted.
struct FastpairExample {
    TokenSequence q;
    TokenSequence Q;
    std::vector<std::string> q_keys;
    std::vector<std::string> Q_keys;
    Label label = Label::Negative;
};

inline std::vector<FastpairExample> make_examples(const std::vector<QueryPair>& pairs, const KeywordDictionary* dict) {
    std::vector<FastpairExample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        FastpairExample e{p.q, p.Q, {}, {}, p.label};
        if (dict) {
            for (const auto& k : keyword_set(*dict, p.q)) e.q_keys.push_back(k);
            for (const auto& k : keyword_set(*dict, p.Q)) e.Q_keys.push_back(k);
        }
        out.push_back(std::move(e));
    }
    return out;
}

/// Bucketed embedding table, mean pooling, affine 2-way softmax head.
template <std::floating_point Real = double>
struct FastpairModel {
    std::size_t num_buckets = 0;
    std::size_t dim = 0;
    std::uint64_t seed = 0;
    std::vector<Real> embeddings;   ///< num_buckets x dim, row-major
    std::vector<Real> head_weights; ///< dim x 2, row-major
    std::array<Real, 2> head_bias{0, 0};

    FastpairModel() = default;
    FastpairModel(std::size_t buckets, std::size_t width, std::uint64_t seed_)
        : num_buckets(buckets), dim(width), seed(seed_), embeddings(buckets * width, Real(0)),
          head_weights(width * 2, Real(0)) {
        if (width < 1) throw Error("fastpair: dim must be >= 1");
    }

    FeatureHasher hasher() const { return FeatureHasher(num_buckets, seed); }

    std::span<Real> row(std::uint64_t id) { return {embeddings.data() + id * dim, dim}; }
    std::span<const Real> row(std::uint64_t id) const { return {embeddings.data() + id * dim, dim}; }

    bool operator==(const FastpairModel&) const = default;
};

namespace detail {

template <typename Real>
struct FastpairActivations {
    std::vector<Real> hidden;
    std::array<Real, 2> logit{}, prob{};
};

template <typename Real>
FastpairActivations<Real> fastpair_activations(const FastpairModel<Real>& m, std::span<const std::uint64_t> ids) {
    if (ids.empty()) throw Error("fastpair forward: empty feature list");
    FastpairActivations<Real> a;
    a.hidden.assign(m.dim, Real(0));
    for (auto id : ids) {
        if (id >= m.num_buckets) throw Error("fastpair forward: bucket id out of range");
        const auto r = m.row(id);
        for (std::size_t k = 0; k < m.dim; ++k) a.hidden[k] += r[k];
    }
    const Real inv = Real(1) / static_cast<Real>(ids.size());
    for (auto& v : a.hidden) v *= inv;
    a.logit = m.head_bias;
    for (std::size_t k = 0; k < m.dim; ++k) {
        a.logit[0] += a.hidden[k] * m.head_weights[2 * k];
        a.logit[1] += a.hidden[k] * m.head_weights[2 * k + 1];
    }
    a.prob = softmax2(a.logit);
    return a;
}

/// Backpropagates cross-entropy for one example. `sink` receives the
/// per-occurrence embedding gradient and the head gradients; the model is
/// only read, so the sink may update it afterwards.
template <typename Real, typename Sink>
Real fastpair_backprop(const FastpairModel<Real>& m, std::span<const std::uint64_t> ids, Label label, Sink&& sink) {
    const auto a = fastpair_activations(m, ids);
    const int y = label == Label::Positive ? 1 : 0;
    const Real loss = cross_entropy2(a.logit, y);
    const auto g = cross_entropy2_grad(a.prob, y);
    std::vector<Real> dh(m.dim);
    const Real inv = Real(1) / static_cast<Real>(ids.size());
    for (std::size_t k = 0; k < m.dim; ++k)
        dh[k] = (m.head_weights[2 * k] * g[0] + m.head_weights[2 * k + 1] * g[1]) * inv;
    sink(std::span<const Real>(a.hidden), g, std::span<const Real>(dh));
    return loss;
}

} // namespace detail

/// Probability of the positive class.
template <typename Real>
Real forward(const FastpairModel<Real>& m, std::span<const std::uint64_t> ids) {
    return detail::fastpair_activations(m, ids).prob[1];
}

template <typename Real>
Real fastpair_loss(const FastpairModel<Real>& m, std::span<const std::uint64_t> ids, Label label) {
    const auto a = detail::fastpair_activations(m, ids);
    return cross_entropy2(a.logit, label == Label::Positive ? 1 : 0);
}

/// Dense gradient of the cross-entropy, same layout as the model.
template <typename Real>
struct FastpairGradient {
    std::vector<Real> embeddings;
    std::vector<Real> head_weights;
    std::array<Real, 2> head_bias{0, 0};
};

template <typename Real>
FastpairGradient<Real> fastpair_gradient(const FastpairModel<Real>& m, std::span<const std::uint64_t> ids, Label label) {
    FastpairGradient<Real> grad{std::vector<Real>(m.embeddings.size(), Real(0)),
                                std::vector<Real>(m.head_weights.size(), Real(0)),
                                {0, 0}};
    detail::fastpair_backprop(m, ids, label, [&](auto hidden, auto g, auto dh) {
        for (auto id : ids)
            for (std::size_t k = 0; k < m.dim; ++k) grad.embeddings[id * m.dim + k] += dh[k];
        for (std::size_t k = 0; k < m.dim; ++k) {
            grad.head_weights[2 * k] += hidden[k] * g[0];
            grad.head_weights[2 * k + 1] += hidden[k] * g[1];
        }
        grad.head_bias[0] += g[0];
        grad.head_bias[1] += g[1];
    });
    return grad;
}

struct FastpairTrainConfig {
    std::size_t epochs = 5;
    double learning_rate = 0.5; ///< decays linearly to 0 over all updates
    std::uint64_t rng_seed = 0;
    std::size_t dim = 64;
    std::size_t num_buckets = std::size_t{1} << 20;
    bool keyword_features = true;
};

template <typename Real>
struct FastpairTrainResult {
    FastpairModel<Real> model;
    std::vector<double> epoch_loss;
};

/// Hashed feature ids for every example.
inline std::vector<std::vector<std::uint64_t>> featurize_all(const std::vector<FastpairExample>& examples,
                                                             const FeatureHasher& hasher, bool keyword_features) {
    static const std::vector<std::string> none;
    std::vector<std::vector<std::uint64_t>> out;
    out.reserve(examples.size());
    for (const auto& e : examples)
        out.push_back(featurize(e.q, e.Q, keyword_features ? e.q_keys : none, keyword_features ? e.Q_keys : none,
                                hasher));
    return out;
}

template <std::floating_point Real = double>
FastpairModel<Real> init_fastpair(std::size_t num_buckets, std::size_t dim, std::uint64_t seed) {
    FastpairModel<Real> m(num_buckets, dim, seed);
    std::mt19937_64 rng(seed);
    const Real bound = Real(1) / static_cast<Real>(dim);
    std::uniform_real_distribution<Real> u(-bound, bound);
    for (auto& v : m.embeddings) v = u(rng);
    return m;
}

/// Plain SGD over seeded shuffles; reports the mean loss of each epoch.
template <std::floating_point Real = double>
FastpairTrainResult<Real> train_fastpair(const std::vector<FastpairExample>& examples, const FastpairTrainConfig& cfg) {
    if (cfg.epochs < 1) throw Error("fastpair train: epochs must be >= 1");
    if (!(cfg.learning_rate >= 0)) throw Error("fastpair train: learning rate must be >= 0");
    bool pos = false, neg = false;
    for (const auto& e : examples) (e.label == Label::Positive ? pos : neg) = true;
    if (!pos || !neg) throw Error("fastpair train: both classes must be present");

    FastpairTrainResult<Real> result{init_fastpair<Real>(cfg.num_buckets, cfg.dim, cfg.rng_seed), {}};
    auto& m = result.model;
    const auto ids = featurize_all(examples, m.hasher(), cfg.keyword_features);

    std::mt19937_64 rng(cfg.rng_seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const double total_steps = static_cast<double>(cfg.epochs * examples.size());
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (auto i : order) {
            const Real lr = static_cast<Real>(cfg.learning_rate * (1.0 - static_cast<double>(step++) / total_steps));
            const std::span<const std::uint64_t> x(ids[i]);
            loss_sum += detail::fastpair_backprop(m, x, examples[i].label, [&](auto hidden, auto g, auto dh) {
                if (lr == Real(0)) return;
                for (auto id : x) {
                    auto r = m.row(id);
                    for (std::size_t k = 0; k < m.dim; ++k) r[k] -= lr * dh[k];
                }
                for (std::size_t k = 0; k < m.dim; ++k) {
                    m.head_weights[2 * k] -= lr * hidden[k] * g[0];
                    m.head_weights[2 * k + 1] -= lr * hidden[k] * g[1];
                }
                m.head_bias[0] -= lr * g[0];
                m.head_bias[1] -= lr * g[1];
            });
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(examples.size()));
    }
    return result;
}

struct ClassAccuracy {
    double overall = 0.0;
    double positive = std::numeric_limits<double>::quiet_NaN(); ///< NaN when the class is absent
    double negative = std::numeric_limits<double>::quiet_NaN();
    std::size_t count = 0;
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

/// Accuracy at threshold 0.5 (p >= 0.5 predicts positive), overall and per class.
inline ClassAccuracy accuracy_from_probabilities(std::span<const double> probs, std::span<const Label> labels) {
    if (probs.empty()) throw Error("evaluate: empty evaluation set");
    if (probs.size() != labels.size()) throw Error("evaluate: size mismatch");
    std::size_t correct = 0, pos_ok = 0, neg_ok = 0;
    ClassAccuracy acc;
    acc.count = probs.size();
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool predicted = probs[i] >= 0.5;
        const bool actual = labels[i] == Label::Positive;
        correct += predicted == actual;
        if (actual) {
            ++acc.positives;
            pos_ok += predicted;
        } else {
            ++acc.negatives;
            neg_ok += !predicted;
        }
    }
    acc.overall = static_cast<double>(correct) / static_cast<double>(acc.count);
    if (acc.positives) acc.positive = static_cast<double>(pos_ok) / static_cast<double>(acc.positives);
    if (acc.negatives) acc.negative = static_cast<double>(neg_ok) / static_cast<double>(acc.negatives);
    return acc;
}

template <typename Real>
ClassAccuracy evaluate(const FastpairModel<Real>& m, const std::vector<FastpairExample>& examples,
                       bool keyword_features = true) {
    const auto ids = featurize_all(examples, m.hasher(), keyword_features);
    std::vector<double> probs;
    std::vector<Label> labels;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        probs.push_back(static_cast<double>(forward(m, std::span<const std::uint64_t>(ids[i]))));
        labels.push_back(examples[i].label);
    }
    return accuracy_from_probabilities(probs, labels);
}

/// Finite-difference check of the cross-entropy gradient for one example.
/// Embedding coordinates are sampled from the rows the example touches.
template <typename Rng>
GradCheckReport fastpair_grad_check(FastpairModel<double>& m, std::span<const std::uint64_t> ids, Label label,
                                    double step, std::size_t samples, Rng& rng) {
    const auto grad = fastpair_gradient(m, ids, label);
    auto loss = [&] { return fastpair_loss(m, ids, label); };
    std::set<std::size_t> touched;
    for (auto id : ids)
        for (std::size_t k = 0; k < m.dim; ++k) touched.insert(id * m.dim + k);
    GradCheckReport report;
    report.groups.push_back(check_group("embeddings", std::span<double>(m.embeddings), grad.embeddings, loss, step,
                                        samples, rng, {touched.begin(), touched.end()}));
    report.groups.push_back(
        check_group("head_weights", std::span<double>(m.head_weights), grad.head_weights, loss, step, samples, rng));
    report.groups.push_back(
        check_group("head_bias", std::span<double>(m.head_bias), grad.head_bias, loss, step, samples, rng));
    return report;
}

namespace detail {

constexpr char kFastpairMagic[8] = {'K', 'W', 'F', 'P', 'A', 'I', 'R', '\0'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw Error("truncated model file");
    return v;
}

} // namespace detail

inline constexpr std::uint32_t kFastpairFormatVersion = 1;

/// Binary layout (little-endian): magic, version, scalar width, num_buckets,
/// dim, seed, then embeddings, head weights and head bias, all row-major.
template <typename Real>
void save_fastpair(const FastpairModel<Real>& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out.write(detail::kFastpairMagic, sizeof detail::kFastpairMagic);
    detail::write_pod(out, kFastpairFormatVersion);
    detail::write_pod(out, static_cast<std::uint32_t>(sizeof(Real)));
    detail::write_pod(out, static_cast<std::uint64_t>(m.num_buckets));
    detail::write_pod(out, static_cast<std::uint64_t>(m.dim));
    detail::write_pod(out, m.seed);
    out.write(reinterpret_cast<const char*>(m.embeddings.data()),
              static_cast<std::streamsize>(m.embeddings.size() * sizeof(Real)));
    out.write(reinterpret_cast<const char*>(m.head_weights.data()),
              static_cast<std::streamsize>(m.head_weights.size() * sizeof(Real)));
    out.write(reinterpret_cast<const char*>(m.head_bias.data()), 2 * sizeof(Real));
    if (!out) throw Error("write failed: " + path);
}

template <typename Real>
FastpairModel<Real> load_fastpair(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    char magic[sizeof detail::kFastpairMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, detail::kFastpairMagic, sizeof magic) != 0)
        throw Error(path + ": not a fastpair model");
    if (detail::read_pod<std::uint32_t>(in) != kFastpairFormatVersion) throw Error(path + ": unsupported version");
    if (detail::read_pod<std::uint32_t>(in) != sizeof(Real)) throw Error(path + ": scalar width mismatch");
    const auto buckets = detail::read_pod<std::uint64_t>(in);
    const auto dim = detail::read_pod<std::uint64_t>(in);
    const auto seed = detail::read_pod<std::uint64_t>(in);
    if (buckets == 0 || !std::has_single_bit(buckets) || dim == 0 || dim > (1u << 16) || buckets > (1ull << 32))
        throw Error(path + ": implausible dimensions");
    FastpairModel<Real> m(buckets, dim, seed);
    in.read(reinterpret_cast<char*>(m.embeddings.data()), static_cast<std::streamsize>(m.embeddings.size() * sizeof(Real)));
    in.read(reinterpret_cast<char*>(m.head_weights.data()),
            static_cast<std::streamsize>(m.head_weights.size() * sizeof(Real)));
    in.read(reinterpret_cast<char*>(m.head_bias.data()), 2 * sizeof(Real));
    if (!in) throw Error(path + ": truncated model file");
    return m;
}

} // namespace kwmatch
