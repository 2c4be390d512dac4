#pragma once
// The DAM backbone: token embedders, stacked attention/merge layers, and the
// collapse heads that turn B-tokens into basis coefficients and the affine
// token into (offset, scale).
//
// Shape/order conventions used throughout:
//   - Token matrices are (tokens x d_model).
//   - The affine token rides first when concatenated with TV-tokens, for both
//     self-attention and the cross-attention key/value set.
//   - Model-internal per-frequency pairs are ordered (cos, sin) — the order
//     the collapse head emits and the coefficient embedder consumes.  The
//     public CoefficientVector order is (sin, cos); the conversion happens at
//     the model boundary in both directions.
//   - Query/context times are in days relative to "now" (past < 0).

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dam/basis.hpp"
#include "dam/common.hpp"
#include "dam/graph.hpp"
#include "dam/quantiles.hpp"
#include "dam/rng.hpp"

namespace dam {

struct ModelConfig {
    int d_model = 256;
    int d_ff = 256;
    int n_layers = 4;
    int n_heads = 4;
    int n_tome = 250;  // TV-token count after all merging, at the reference context
    double dropout = 0.1;
    // Context size n_tome was chosen for; merge targets at other context
    // sizes scale by the ratio n_tome / hsr_reference_context.
    int hsr_reference_context = 540;

    void validate() const {
        if (d_model <= 0 || d_ff <= 0 || n_layers <= 0 || n_heads <= 0 || n_tome <= 0 ||
            hsr_reference_context <= 0) {
            throw user_error("model config: all dimensions must be positive");
        }
        if (d_model % n_heads != 0) {
            throw user_error("model config: d_model (" + std::to_string(d_model) +
                             ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
        }
        if (dropout < 0.0 || dropout >= 1.0) {
            throw user_error("model config: dropout must be in [0, 1)");
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

// Merge target for a non-reference context size, keeping the training-time
// reduction ratio.
inline int tome_target_for_context(int context, const ModelConfig& cfg) {
    if (context <= 0) throw std::invalid_argument("tome_target_for_context: context must be positive");
    const double ratio = static_cast<double>(cfg.n_tome) / cfg.hsr_reference_context;
    const int target = static_cast<int>(std::llround(context * ratio));
    return std::max(1, std::min(target, context));
}

// Per-layer merge amounts.  Layers 0..L-2 use a fixed rounded share of the
// total reduction; the last layer absorbs the rounding remainder so the final
// count lands exactly on n_tome.  Every amount is clamped to [0, floor(n/2)]
// (bipartite matching cannot merge more than one partition's worth).
inline std::vector<int> tome_schedule(int n_tv, int n_tome, int n_layers) {
    if (n_layers <= 0) throw std::invalid_argument("tome_schedule: n_layers must be positive");
    if (n_tv < 0) throw std::invalid_argument("tome_schedule: negative token count");
    std::vector<int> rs(static_cast<std::size_t>(n_layers), 0);
    const long base =
        std::llround(static_cast<double>(n_tv - n_tome) / static_cast<double>(n_layers));
    int count = n_tv;
    for (int li = 0; li < n_layers; ++li) {
        long r = (li == n_layers - 1) ? count - n_tome : base;
        r = std::max(0L, std::min(r, static_cast<long>(count / 2)));
        rs[static_cast<std::size_t>(li)] = static_cast<int>(r);
        count -= static_cast<int>(r);
    }
    return rs;
}

// ---------------------------------------------------------------------------
// Parameter containers.  Every tensor knows its slot in the model's registry,
// which fixes the initialization draw order, the checkpoint layout, and the
// optimizer state alignment.

template <typename S>
struct ParamTensor {
    Matrix<S> v;
    int reg = -1;
};

template <typename S>
struct LinearParams {
    ParamTensor<S> w;  // (in x out)
    ParamTensor<S> b;  // (1 x out)
};

template <typename S>
struct AttentionParams {
    LinearParams<S> q, k, v, out;
};

template <typename S>
struct LayerNormParams {
    ParamTensor<S> gain, bias;  // (1 x d)
};

template <typename S>
struct FeedForwardParams {
    LinearParams<S> in;   // a -> hidden
    LinearParams<S> out;  // hidden -> a
};

template <typename S>
struct DamLayerParams {
    AttentionParams<S> mhsa_tv, cross_attention;
    FeedForwardParams<S> ff_tv, ff_b, ff_b_cross, ff_aff;
    LayerNormParams<S> ln1, ln2, ln3, ln4, ln5, ln6, ln7;
};

// ---------------------------------------------------------------------------
// Forward-pass options and outputs.

struct AblationMask {
    bool self_attn = false;
    bool cross_attn = false;
    bool ff_tv = false;
    bool ff_b = false;
    bool ff_b_cross = false;
    bool tome = false;

    bool any() const { return self_attn || cross_attn || ff_tv || ff_b || ff_b_cross || tome; }

    static AblationMask from_names(const std::vector<std::string>& names) {
        AblationMask m;
        for (const auto& n : names) {
            if (n == "self-attn") m.self_attn = true;
            else if (n == "cross-attn") m.cross_attn = true;
            else if (n == "ff_tv") m.ff_tv = true;
            else if (n == "ff_b") m.ff_b = true;
            else if (n == "ff_b_cross") m.ff_b_cross = true;
            else if (n == "tome") m.tome = true;
            else {
                throw user_error("unknown ablation component '" + n +
                                 "' (expected one of: self-attn, cross-attn, ff_tv, ff_b, "
                                 "ff_b_cross, tome)");
            }
        }
        return m;
    }
};

// Attention probabilities and merge bookkeeping captured during a forward
// pass.  Probability matrices are the softmax outputs, one per head, with the
// zero-attention slot as the last column (rows sum to 1).
template <typename S>
struct AttentionRecord {
    struct Layer {
        std::vector<Matrix<S>> self_probs;   // per head: (1+n_tv) x (1+n_tv+1)
        std::vector<Matrix<S>> cross_probs;  // per head: n_freq x (1+n_tv+1)
        std::vector<std::vector<int>> provenance;  // current tv token -> context indices
        int r = 0;  // merge amount applied in this layer
    };
    std::vector<Layer> layers;
};

template <typename S>
struct ForwardOptions {
    bool training = false;       // enables dropout (needs dropout_rng)
    Rng* dropout_rng = nullptr;
    // Gradient accumulators aligned with the parameter registry.  Null means
    // inference: parameters enter the graph as constants and backward() is
    // unavailable.
    std::vector<Matrix<S>>* grads = nullptr;
    // TV-token count after all merging; -1 derives it from the config via the
    // reduction-ratio rule for this context size.
    int n_tome = -1;
    AblationMask ablate;
    AttentionRecord<S>* record = nullptr;
};

struct ForwardResult {
    int basis_node = -1;          // (n_freq x 2), column 0 = cos, column 1 = sin
    int affine_node = -1;         // (1 x 2), column 0 = offset, column 1 = scale
    int offset_node = -1;         // (1 x 1)
    int scale_node = -1;          // (1 x 1) raw scale (unclamped)
    int clamped_scale_node = -1;  // (1 x 1) divisor used by predictions
    std::vector<int> tv_counts;   // TV-token count after each layer
    std::vector<std::vector<int>> provenance;  // final tv token -> context indices
};

// Context after robust standardization and basis-coefficient initialization.
template <typename S>
struct PreparedContext {
    std::vector<double> times;       // days relative to now, ascending, all < 0
    std::vector<double> values_std;  // robust-standardized values
    RobustNorm norm;
    Matrix<S> theta0;  // (n_freq x 2), column 0 = sin, column 1 = cos
};

// Column sums of one attention-probability matrix over the TV-token columns
// (skipping `n_lead` leading non-TV columns and the trailing zero slot),
// normalized so the largest entry is 1.  This is the "how much attention did
// each token receive" summary used by the inspection report.
template <typename S>
std::vector<double> cumulative_attention(const Matrix<S>& probs, Eigen::Index n_lead) {
    const Eigen::Index n_tv = probs.cols() - n_lead - 1;
    if (n_tv < 1) throw std::invalid_argument("cumulative_attention: no TV columns");
    std::vector<double> sums(static_cast<std::size_t>(n_tv));
    double mx = 0.0;
    for (Eigen::Index c = 0; c < n_tv; ++c) {
        sums[static_cast<std::size_t>(c)] = static_cast<double>(probs.col(n_lead + c).sum());
        mx = std::max(mx, sums[static_cast<std::size_t>(c)]);
    }
    if (mx > 0.0) {
        for (double& s : sums) s /= mx;
    }
    return sums;
}

// ---------------------------------------------------------------------------
// Deterministic bipartite soft matching (the token-merge step).
//
// Tokens at even positions form set A, odd positions set B.  Each A-token is
// matched to its most cosine-similar B-token (ties -> lower B index); the r
// A-tokens with the highest match similarity (ties -> lower A index) are
// merged into their matched B-token by unweighted mean.  Survivors keep their
// original relative order.

struct TomePlan {
    MergeGroups groups;  // one group of source indices per output token
    int r = 0;           // merges actually performed
};

template <typename S>
TomePlan build_tome_plan(const Matrix<S>& metric, int r_requested) {
    const int n = static_cast<int>(metric.rows());
    TomePlan plan;
    plan.r = std::max(0, std::min(r_requested, n / 2));
    if (plan.r == 0) {
        plan.groups.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) plan.groups[static_cast<std::size_t>(i)] = {i};
        return plan;
    }

    std::vector<int> a_pos, b_pos;
    for (int i = 0; i < n; ++i) (i % 2 == 0 ? a_pos : b_pos).push_back(i);

    // Cosine similarity; zero-magnitude vectors compare as zero similarity.
    Matrix<S> unit = metric;
    for (Eigen::Index i = 0; i < unit.rows(); ++i) {
        const S norm = unit.row(i).norm();
        if (norm > S(0)) unit.row(i) /= norm;
        else unit.row(i).setZero();
    }

    const std::size_t na = a_pos.size(), nb = b_pos.size();
    std::vector<S> best_score(na);
    std::vector<int> best_b(na);
    for (std::size_t ai = 0; ai < na; ++ai) {
        S best = std::numeric_limits<S>::lowest();
        int arg = 0;
        for (std::size_t bi = 0; bi < nb; ++bi) {
            const S s = unit.row(a_pos[ai]).dot(unit.row(b_pos[bi]));
            if (s > best) {
                best = s;
                arg = static_cast<int>(bi);
            }
        }
        best_score[ai] = best;
        best_b[ai] = arg;
    }

    std::vector<std::size_t> order(na);
    for (std::size_t i = 0; i < na; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (best_score[x] != best_score[y]) return best_score[x] > best_score[y];
        return x < y;
    });

    std::vector<bool> merged(na, false);
    std::vector<std::vector<int>> into_b(nb);
    for (int k = 0; k < plan.r; ++k) {
        const std::size_t ai = order[static_cast<std::size_t>(k)];
        merged[ai] = true;
        into_b[static_cast<std::size_t>(best_b[ai])].push_back(a_pos[ai]);
    }

    // Assemble output groups in original position order.
    std::vector<std::size_t> a_rank(static_cast<std::size_t>(n), 0), b_rank(static_cast<std::size_t>(n), 0);
    for (std::size_t i = 0; i < na; ++i) a_rank[static_cast<std::size_t>(a_pos[i])] = i;
    for (std::size_t i = 0; i < nb; ++i) b_rank[static_cast<std::size_t>(b_pos[i])] = i;
    for (int i = 0; i < n; ++i) {
        if (i % 2 == 0) {
            if (!merged[a_rank[static_cast<std::size_t>(i)]]) plan.groups.push_back({i});
        } else {
            std::vector<int> g = {i};
            for (int src : into_b[b_rank[static_cast<std::size_t>(i)]]) g.push_back(src);
            std::sort(g.begin(), g.end());
            plan.groups.push_back(std::move(g));
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------

template <typename S>
class DamModel {
    static_assert(std::is_floating_point_v<S>);

public:
    explicit DamModel(ModelConfig cfg) : config_(cfg), basis_(build_frequency_set()) {
        config_.validate();
        const int d = config_.d_model;
        const int k = static_cast<int>(basis_.frequencies.size());
        alloc_linear(temporal_embedding_, "temporal_embedding", k, d);
        alloc_linear(value_embedding_, "value_embedding", 1, d);
        alloc_linear(btoken_period_embedder_, "btoken_period_embedder", 2, d);
        alloc_linear(btoken_coeffs_embedder_, "btoken_coeffs_embedder", 2, d);
        alloc_linear(affine_embedding_, "affine_embedding", 50, d);
        layers_.resize(static_cast<std::size_t>(config_.n_layers));
        for (int li = 0; li < config_.n_layers; ++li) {
            const std::string p = "layers." + std::to_string(li) + ".";
            DamLayerParams<S>& L = layers_[static_cast<std::size_t>(li)];
            alloc_attention(L.mhsa_tv, p + "mhsa_tv", d);
            alloc_attention(L.cross_attention, p + "cross_attention", d);
            alloc_ff(L.ff_tv, p + "ff_tv", d, config_.d_ff);
            alloc_ff(L.ff_b, p + "ff_b", d, config_.d_ff);
            alloc_ff(L.ff_b_cross, p + "ff_b_cross", k, 2 * k);
            alloc_ff(L.ff_aff, p + "ff_aff", d, config_.d_ff);
            alloc_layernorm(L.ln1, p + "layernorm1", d);
            alloc_layernorm(L.ln2, p + "layernorm2", d);
            alloc_layernorm(L.ln3, p + "layernorm3", d);
            alloc_layernorm(L.ln4, p + "layernorm4", d);
            alloc_layernorm(L.ln5, p + "layernorm5", d);
            alloc_layernorm(L.ln6, p + "layernorm6", d);
            alloc_layernorm(L.ln7, p + "layernorm7", d);
        }
        alloc_linear(basis_collapsor_, "basis_collapsor", d, 2);
        alloc_linear(affine_collapser_, "affine_collapser", d, 2);

        // Constant per-frequency period features [sin(2*pi*P), cos(2*pi*P)].
        period_features_.resize(k, 2);
        for (int f = 0; f < k; ++f) {
            const double period = 1.0 / basis_.frequencies[static_cast<std::size_t>(f)];
            period_features_(f, 0) = static_cast<S>(std::sin(kTwoPi * period));
            period_features_(f, 1) = static_cast<S>(std::cos(kTwoPi * period));
        }
    }

    const ModelConfig& config() const { return config_; }
    const BasisSpec& basis() const { return basis_; }

    // ---- parameter registry ------------------------------------------------

    std::size_t tensor_count() const { return registry_.size(); }
    const std::string& tensor_name(std::size_t i) const { return names_.at(i); }
    Matrix<S>& tensor(std::size_t i) { return registry_.at(i)->v; }
    const Matrix<S>& tensor(std::size_t i) const { return registry_.at(i)->v; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto* t : registry_) n += static_cast<std::size_t>(t->v.size());
        return n;
    }

    std::vector<Matrix<S>> make_grad_store() const {
        std::vector<Matrix<S>> g;
        g.reserve(registry_.size());
        for (const auto* t : registry_) g.push_back(Matrix<S>::Zero(t->v.rows(), t->v.cols()));
        return g;
    }

    // Initialization mirrors the reference framework's defaults: plain linear
    // layers draw weight and bias from U(+-1/sqrt(fan_in)); attention q/k/v
    // projections use the Xavier bound for the packed (3d x d) projection,
    // sqrt(6/(4d)), with zero biases; attention output projections draw
    // U(+-1/sqrt(d)) with zero bias; layer norms start at gain 1, bias 0.
    // Draws happen in registry order, row-major within each tensor.
    void init_params(Rng& rng) {
        for (std::size_t i = 0; i < registry_.size(); ++i) {
            Matrix<S>& t = registry_[i]->v;
            switch (init_kind_[i]) {
                case InitKind::uniform_fan_in:
                    fill_uniform(t, S(1) / std::sqrt(S(t.rows())), rng);
                    break;
                case InitKind::uniform_given: {
                    fill_uniform(t, init_bound_[i], rng);
                    break;
                }
                case InitKind::zeros:
                    t.setZero();
                    break;
                case InitKind::ones:
                    t.setOnes();
                    break;
            }
        }
    }

    // ---- context preparation -------------------------------------------------

    // Robust-standardizes raw context values and fits the initial basis
    // coefficients on the standardized series.  The least-squares solve runs
    // in double precision regardless of S.
    PreparedContext<S> prepare_context(const std::vector<double>& times_days,
                                       const std::vector<double>& raw_values,
                                       double lambda = 1.0) const {
        if (times_days.size() != raw_values.size()) {
            throw std::invalid_argument("prepare_context: times/values length mismatch");
        }
        if (times_days.empty()) throw std::invalid_argument("prepare_context: empty context");
        PreparedContext<S> out;
        out.times = times_days;
        auto [std_values, norm] = robust_standardize(raw_values);
        out.values_std = std::move(std_values);
        out.norm = norm;
        const MatrixD theta = init_theta<double>(times_days, out.values_std, basis_, lambda);
        out.theta0 = theta.template cast<S>();
        return out;
    }

    // ---- forward -------------------------------------------------------------

    ForwardResult forward(Graph<S>& g, const PreparedContext<S>& ctx,
                          const ForwardOptions<S>& opt = {}) const {
        const int n = static_cast<int>(ctx.times.size());
        const int k = static_cast<int>(basis_.frequencies.size());
        if (n < 1) throw std::invalid_argument("forward: empty context");
        if (ctx.theta0.rows() != k || ctx.theta0.cols() != 2) {
            throw std::invalid_argument("forward: theta0 shape does not match the frequency set");
        }
        if (opt.training && config_.dropout > 0.0 && opt.dropout_rng == nullptr) {
            throw std::logic_error("forward: training with dropout requires an RNG");
        }
        if (opt.record != nullptr) opt.record->layers.clear();

        ParamNodes pn(g, *this, opt.grads);
        ForwardResult fr;

        // --- embeddings ---
        int tv = -1, b = -1, aff = -1;
        {
            int temporal = g.input(sin_features(ctx.times));
            Matrix<S> vals(n, 1);
            for (int i = 0; i < n; ++i) vals(i, 0) = static_cast<S>(ctx.values_std[static_cast<std::size_t>(i)]);
            int values = g.input(std::move(vals));
            tv = g.add(apply_linear(g, pn, value_embedding_, values),
                       apply_linear(g, pn, temporal_embedding_, temporal));

            // Basis-coefficient inputs, damped and stacked (cos, sin).
            Matrix<S> coeffs(k, 2);
            for (int f = 0; f < k; ++f) {
                coeffs(f, 0) = damp(ctx.theta0(f, 1));
                coeffs(f, 1) = damp(ctx.theta0(f, 0));
            }
            b = g.add(apply_linear(g, pn, btoken_coeffs_embedder_, g.input(std::move(coeffs))),
                      apply_linear(g, pn, btoken_period_embedder_, g.input_ref(&period_features_)));

            // Affine token: 50 evenly spaced interior percentiles of the
            // standardized context values.
            std::vector<double> sorted(ctx.values_std);
            std::sort(sorted.begin(), sorted.end());
            const std::vector<double> fractions = interior_percentile_fractions();
            Matrix<S> q(1, static_cast<Eigen::Index>(fractions.size()));
            for (std::size_t i = 0; i < fractions.size(); ++i) {
                q(0, static_cast<Eigen::Index>(i)) = static_cast<S>(quantile_sorted(sorted, fractions[i]));
            }
            aff = apply_linear(g, pn, affine_embedding_, g.input(std::move(q)));
        }

        // --- merge schedule ---
        const int n_tome = opt.ablate.tome
                               ? n
                               : (opt.n_tome > 0 ? std::min(opt.n_tome, n)
                                                 : tome_target_for_context(n, config_));
        std::vector<int> schedule = opt.ablate.tome
                                        ? std::vector<int>(static_cast<std::size_t>(config_.n_layers), 0)
                                        : tome_schedule(n, n_tome, config_.n_layers);

        // --- layers ---
        std::vector<std::vector<int>> provenance(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) provenance[static_cast<std::size_t>(i)] = {i};

        for (int li = 0; li < config_.n_layers; ++li) {
            try {
                const DamLayerParams<S>& L = layers_[static_cast<std::size_t>(li)];
                typename AttentionRecord<S>::Layer rec;

                int attn_aff = -1, attn_tv = -1;
                if (!opt.ablate.self_attn) {
                    const int tokens = g.concat_rows(aff, tv);
                    const int attn = attention(g, pn, L.mhsa_tv, tokens, tokens, opt,
                                               opt.record ? &rec.self_probs : nullptr);
                    attn_aff = g.slice_rows(attn, 0, 1);
                    attn_tv = g.slice_rows(attn, 1, g.value(tv).rows());
                }

                // Merge: metric is the self-attention output over TV-tokens,
                // falling back to the tokens themselves when self-attention
                // is skipped.  The same merge map applies to both streams.
                const int metric_node = opt.ablate.self_attn ? tv : attn_tv;
                const TomePlan plan =
                    build_tome_plan(g.value(metric_node), schedule[static_cast<std::size_t>(li)]);
                if (plan.r > 0) {
                    tv = g.mean_merge(tv, plan.groups);
                    if (attn_tv >= 0) attn_tv = g.mean_merge(attn_tv, plan.groups);
                    std::vector<std::vector<int>> next(plan.groups.size());
                    for (std::size_t gi = 0; gi < plan.groups.size(); ++gi) {
                        for (int src : plan.groups[gi]) {
                            const auto& from = provenance[static_cast<std::size_t>(src)];
                            next[gi].insert(next[gi].end(), from.begin(), from.end());
                        }
                        std::sort(next[gi].begin(), next[gi].end());
                    }
                    provenance = std::move(next);
                }

                if (!opt.ablate.self_attn) {
                    tv = apply_layernorm(g, pn, L.ln1, g.add(tv, attn_tv));
                    aff = apply_layernorm(g, pn, L.ln3, g.add(aff, attn_aff));
                }
                if (!opt.ablate.ff_tv) {
                    tv = apply_layernorm(g, pn, L.ln2, g.add(apply_ff(g, pn, L.ff_tv, tv, opt), tv));
                }
                aff = apply_layernorm(g, pn, L.ln4, g.add(apply_ff(g, pn, L.ff_aff, aff, opt), aff));

                if (!opt.ablate.cross_attn) {
                    const int kv = g.concat_rows(aff, tv);
                    const int cross = attention(g, pn, L.cross_attention, b, kv, opt,
                                                opt.record ? &rec.cross_probs : nullptr);
                    b = apply_layernorm(g, pn, L.ln5, g.add(b, cross));
                }
                if (!opt.ablate.ff_b) {
                    b = apply_layernorm(g, pn, L.ln6, g.add(apply_ff(g, pn, L.ff_b, b, opt), b));
                }
                if (!opt.ablate.ff_b_cross) {
                    const int across = g.transpose(apply_ff(g, pn, L.ff_b_cross, g.transpose(b), opt));
                    b = apply_layernorm(g, pn, L.ln7, g.add(across, b));
                }

                fr.tv_counts.push_back(static_cast<int>(g.value(tv).rows()));
                if (opt.record != nullptr) {
                    rec.provenance = provenance;
                    rec.r = plan.r;
                    opt.record->layers.push_back(std::move(rec));
                }
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("layer " + std::to_string(li) + ": " + e.what());
            }
        }

        fr.basis_node = apply_linear(g, pn, basis_collapsor_, b);
        fr.affine_node = apply_linear(g, pn, affine_collapser_, aff);
        fr.offset_node = g.slice_cols(fr.affine_node, 0, 1);
        fr.scale_node = g.slice_cols(fr.affine_node, 1, 1);
        fr.clamped_scale_node = g.clamp_away_from_zero(fr.scale_node, S(1e-6));
        fr.provenance = std::move(provenance);
        return fr;
    }

    // Standardized-space predictions at the given times: the basis
    // composition from the collapse head, then (sum - offset) / scale.
    int predict_standardized(Graph<S>& g, const ForwardResult& fr,
                             const std::vector<double>& times_days) const {
        if (times_days.empty()) throw std::invalid_argument("predict_standardized: no query times");
        const int theta_cos = g.slice_cols(fr.basis_node, 0, 1);
        const int theta_sin = g.slice_cols(fr.basis_node, 1, 1);
        const int sums = g.add(g.matmul(g.input(sin_features(times_days)), theta_sin),
                               g.matmul(g.input(cos_features(times_days)), theta_cos));
        const int shifted = g.add_rowvec(sums, g.scale(fr.offset_node, S(-1)));
        return g.div_rowvec(shifted, fr.clamped_scale_node);
    }

    // Packages the collapse-head outputs into a standalone forecast function
    // (public coefficient order: column 0 = sin, column 1 = cos).
    ForecastFunction to_forecast_function(const Graph<S>& g, const ForwardResult& fr,
                                          const RobustNorm& norm) const {
        const Matrix<S>& basis_out = g.value(fr.basis_node);
        const Matrix<S>& affine_out = g.value(fr.affine_node);
        ForecastFunction fn;
        fn.spec = basis_;
        fn.theta.resize(basis_out.rows(), 2);
        fn.theta.col(0) = basis_out.col(1).template cast<double>();
        fn.theta.col(1) = basis_out.col(0).template cast<double>();
        fn.norm = norm;
        fn.affine.a = static_cast<double>(affine_out(0, 1));
        fn.affine.b = static_cast<double>(affine_out(0, 0));
        fn.form = AffineForm::appb;
        return fn;
    }

    // Temporal feature matrices (computed in double, cast to S: the sine
    // argument reduction must not lose the high-frequency components).
    Matrix<S> sin_features(const std::vector<double>& times_days) const {
        return features(times_days, /*use_sin=*/true);
    }
    Matrix<S> cos_features(const std::vector<double>& times_days) const {
        return features(times_days, /*use_sin=*/false);
    }

    static S damp(S coeff) {
        return static_cast<S>(std::asinh(0.1 * static_cast<double>(coeff)) / 0.1);
    }

private:
    enum class InitKind { uniform_fan_in, uniform_given, zeros, ones };

    // Lazily registers each parameter tensor with the graph exactly once.
    class ParamNodes {
    public:
        ParamNodes(Graph<S>& g, const DamModel& m, std::vector<Matrix<S>>* grads)
            : g_(g), model_(m), grads_(grads), ids_(m.registry_.size(), -1) {}

        int node(const ParamTensor<S>& t) {
            const std::size_t reg = static_cast<std::size_t>(t.reg);
            if (ids_[reg] < 0) {
                Matrix<S>* accum = grads_ != nullptr ? &(*grads_)[reg] : nullptr;
                ids_[reg] = g_.param(&t.v, accum);
            }
            return ids_[reg];
        }

    private:
        Graph<S>& g_;
        const DamModel& model_;
        std::vector<Matrix<S>>* grads_;
        std::vector<int> ids_;
    };

    static int apply_linear(Graph<S>& g, ParamNodes& pn, const LinearParams<S>& lp, int x) {
        return g.linear(x, pn.node(lp.w), pn.node(lp.b));
    }

    int apply_layernorm(Graph<S>& g, ParamNodes& pn, const LayerNormParams<S>& ln, int x) const {
        return g.layernorm(x, pn.node(ln.gain), pn.node(ln.bias), S(1e-5));
    }

    int apply_ff(Graph<S>& g, ParamNodes& pn, const FeedForwardParams<S>& ff, int x,
                 const ForwardOptions<S>& opt) const {
        const int h = g.gelu(apply_linear(g, pn, ff.in, x));
        int o = apply_linear(g, pn, ff.out, h);
        o = maybe_dropout(g, o, opt);
        return o;
    }

    int maybe_dropout(Graph<S>& g, int x, const ForwardOptions<S>& opt) const {
        if (!opt.training || config_.dropout <= 0.0) return x;
        const Matrix<S>& v = g.value(x);
        return g.hadamard(
            x, g.input(make_dropout_mask<S>(v.rows(), v.cols(), config_.dropout, *opt.dropout_rng)));
    }

    // Multi-head attention with the zero-attention slot.  Appending a zero
    // vector to the projected keys and values yields an exactly-zero logit
    // column and a value row that contributes nothing, so the output is
    // P[:, :m] * V with P the softmax over [logits | 0].
    int attention(Graph<S>& g, ParamNodes& pn, const AttentionParams<S>& ap, int queries, int kv,
                  const ForwardOptions<S>& opt, std::vector<Matrix<S>>* record_probs) const {
        const int d = config_.d_model;
        const int dh = d / config_.n_heads;
        const S inv_sqrt_dh = S(1) / std::sqrt(S(dh));
        const int q = apply_linear(g, pn, ap.q, queries);
        const int k = apply_linear(g, pn, ap.k, kv);
        const int v = apply_linear(g, pn, ap.v, kv);
        const Eigen::Index m = g.value(kv).rows();
        std::vector<int> heads;
        heads.reserve(static_cast<std::size_t>(config_.n_heads));
        for (int h = 0; h < config_.n_heads; ++h) {
            const int qh = g.scale(g.slice_cols(q, h * dh, dh), inv_sqrt_dh);
            const int kh = g.slice_cols(k, h * dh, dh);
            const int vh = g.slice_cols(v, h * dh, dh);
            const int logits = g.append_zero_col(g.matmul(qh, kh, false, true));
            const int probs = g.softmax_rows(logits);
            if (record_probs != nullptr) record_probs->push_back(g.value(probs));
            const int kept = maybe_dropout(g, probs, opt);
            heads.push_back(g.matmul(g.slice_cols(kept, 0, m), vh));
        }
        return apply_linear(g, pn, ap.out, g.concat_cols(heads));
    }

    Matrix<S> features(const std::vector<double>& times_days, bool use_sin) const {
        const Eigen::Index n = static_cast<Eigen::Index>(times_days.size());
        const Eigen::Index k = static_cast<Eigen::Index>(basis_.frequencies.size());
        Matrix<S> F(n, k);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double t = times_days[static_cast<std::size_t>(i)];
            for (Eigen::Index f = 0; f < k; ++f) {
                const double arg = kTwoPi * basis_.frequencies[static_cast<std::size_t>(f)] * t;
                F(i, f) = static_cast<S>(use_sin ? std::sin(arg) : std::cos(arg));
            }
        }
        return F;
    }

    static void fill_uniform(Matrix<S>& t, S bound, Rng& rng) {
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.cols(); ++c) {
                t(r, c) = static_cast<S>((2.0 * rng.uniform() - 1.0) * static_cast<double>(bound));
            }
        }
    }

    void register_tensor(ParamTensor<S>& t, const std::string& name, Eigen::Index rows,
                         Eigen::Index cols, InitKind kind, S bound = S(0)) {
        t.v = Matrix<S>::Zero(rows, cols);
        t.reg = static_cast<int>(registry_.size());
        registry_.push_back(&t);
        names_.push_back(name);
        init_kind_.push_back(kind);
        init_bound_.push_back(bound);
    }

    void alloc_linear(LinearParams<S>& lp, const std::string& name, int in, int out) {
        register_tensor(lp.w, name + ".weight", in, out, InitKind::uniform_fan_in);
        register_tensor(lp.b, name + ".bias", 1, out, InitKind::uniform_given,
                        S(1) / std::sqrt(S(in)));
    }

    void alloc_attention(AttentionParams<S>& ap, const std::string& name, int d) {
        // Xavier bound for the packed (3d x d) in-projection: sqrt(6 / (d + 3d)).
        const S qkv_bound = std::sqrt(S(6) / S(4 * d));
        auto in_proj = [&](LinearParams<S>& lp, const std::string& leaf) {
            register_tensor(lp.w, name + "." + leaf + ".weight", d, d, InitKind::uniform_given,
                            qkv_bound);
            register_tensor(lp.b, name + "." + leaf + ".bias", 1, d, InitKind::zeros);
        };
        in_proj(ap.q, "q_proj");
        in_proj(ap.k, "k_proj");
        in_proj(ap.v, "v_proj");
        register_tensor(ap.out.w, name + ".out_proj.weight", d, d, InitKind::uniform_fan_in);
        register_tensor(ap.out.b, name + ".out_proj.bias", 1, d, InitKind::zeros);
    }

    void alloc_ff(FeedForwardParams<S>& ff, const std::string& name, int width, int hidden) {
        alloc_linear(ff.in, name + ".in", width, hidden);
        alloc_linear(ff.out, name + ".out", hidden, width);
    }

    void alloc_layernorm(LayerNormParams<S>& ln, const std::string& name, int d) {
        register_tensor(ln.gain, name + ".gain", 1, d, InitKind::ones);
        register_tensor(ln.bias, name + ".bias", 1, d, InitKind::zeros);
    }

    ModelConfig config_;
    BasisSpec basis_;
    LinearParams<S> temporal_embedding_, value_embedding_, btoken_period_embedder_,
        btoken_coeffs_embedder_, affine_embedding_;
    std::vector<DamLayerParams<S>> layers_;
    LinearParams<S> basis_collapsor_, affine_collapser_;
    Matrix<S> period_features_;  // (n_freq x 2) constant buffer

    std::vector<ParamTensor<S>*> registry_;
    std::vector<std::string> names_;
    std::vector<InitKind> init_kind_;
    std::vector<S> init_bound_;
};

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json (config, tensor table) + weights.bin
// (little-endian scalars, row-major per tensor, at the manifest offsets).

template <typename S>
void save_checkpoint(const DamModel<S>& model, const std::string& dir);

template <typename S>
DamModel<S> load_checkpoint(const std::string& dir);

}  // namespace dam
