#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mtfnet/mtf.hpp"
#include "mtfnet/nn.hpp"

namespace mtfnet {

struct LabelOutOfRange : Error {
    explicit LabelOutOfRange(const std::string& label) : Error("label not in class set: " + label) {}
};
struct IncompatibleModel : Error {
    explicit IncompatibleModel(const std::string& what) : Error("incompatible model: " + what) {}
};

/// Which architecture to build. NoMtf feeds raw standardized series to the
/// transformer stages; NoTransformer keeps the MTF encoding but replaces
/// both attention stages with the feed-forward stack alone.
enum class Variant { Full, NoMtf, NoTransformer };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::NoMtf: return "no_mtf";
        case Variant::NoTransformer: return "no_transformer";
        default: return "full";
    }
}

struct ModelConfig {
    // Data-derived dimensions.
    int links = 0;             // L
    int samples_per_slot = 0;  // n
    int spatial_cells = 0;     // N * N * 2
    std::vector<std::string> class_labels;

    // Architecture.
    int mtf_size = 16;  // m
    int d_model = 128;
    int heads = 8;
    int hidden = 512;
    int mlp_layers = 4;
    int head_fc_layers = 2;
    double dropout = 0.2;
    bool positional = true;
    Variant variant = Variant::Full;

    // Quantizer / encoder.
    int q = 8;
    QuantMode quant_mode = QuantMode::Adaptive;
    double temperature = 0.1;
    double sigma = 1.0;

    int num_classes() const { return static_cast<int>(class_labels.size()); }

    int class_index(const std::string& label) const {
        const auto it = std::find(class_labels.begin(), class_labels.end(), label);
        if (it == class_labels.end()) throw LabelOutOfRange(label);
        return static_cast<int>(it - class_labels.begin());
    }

    int token_dim() const {
        return variant == Variant::NoMtf ? samples_per_slot : mtf_size * mtf_size;
    }

    void validate() const {
        if (links < 1) throw Error("config: links must be >= 1");
        if (samples_per_slot < 2) throw Error("config: samples_per_slot must be >= 2");
        if (spatial_cells < 2) throw Error("config: spatial_cells must be >= 2");
        if (num_classes() < 1) throw Error("config: need at least one class");
        if (d_model < 2 || d_model % 2 != 0) throw nn::OddDimension(d_model);
        if (heads < 1 || d_model % heads != 0) throw nn::InvalidHeadCount(d_model, heads);
        if (hidden < 1 || mlp_layers < 1 || head_fc_layers < 1)
            throw Error("config: layer sizes must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw nn::InvalidRate(dropout);
        if (q < 2) throw InvalidQ(q);
        if (mtf_size < 1 || mtf_size > samples_per_slot)
            throw InvalidOutputSize(mtf_size, samples_per_slot);
        if (!(sigma > 0.0)) throw InvalidSigma(sigma);
        if (quant_mode == QuantMode::Adaptive && !(temperature > 0.0))
            throw InvalidTemperature(temperature);
    }
};

/// The two-stage self-attention classifier. Stage 1 attends across the L
/// per-link tokens (flattened, embedded MTF fields with sinusoidal positions),
/// the flattened spatial matrix is projected and appended as one extra token,
/// stage 2 attends across the L+1 tokens, and the mean-pooled context feeds a
/// small fully connected head ending in a softmax.
///
/// In adaptive mode the quantizer boundaries are part of the parameter set:
/// they are stored as a base boundary plus softplus-positive gaps (always
/// strictly increasing) and the encoding runs through the soft-assignment
/// pipeline inside the autodiff graph, so boundary gradients flow from the
/// classification loss.
template <class S>
class StackedModel {
public:
    using Mat = DenseMatrix<S>;
    using Vec = DenseVector<S>;

    StackedModel(ModelConfig config, std::uint64_t seed) : cfg_(std::move(config)) {
        cfg_.validate();
        Rng rng(seed);
        const int token_dim = cfg_.token_dim();
        const bool attention_stages = cfg_.variant != Variant::NoTransformer;

        if (uses_adaptive_encoding()) {
            const Vec theta0 = gaussian_breakpoints<S>(cfg_.q);
            Mat phi(1, cfg_.q - 1);
            phi(0, 0) = theta0(0);
            for (int i = 1; i < cfg_.q - 1; ++i) {
                const double gap = static_cast<double>(theta0(i) - theta0(i - 1));
                phi(0, i) = static_cast<S>(std::log(std::expm1(gap)));  // softplus inverse
            }
            phi_ = params_.create("quantizer.phi", phi);
        }

        embed_ = nn::LinearLayer<S>::create(params_, "embed", token_dim, cfg_.d_model, rng);
        if (attention_stages) {
            s1_query_ = nn::LinearLayer<S>::create(params_, "stage1.query", cfg_.d_model,
                                                   cfg_.d_model, rng);
            s1_key_ = nn::LinearLayer<S>::create(params_, "stage1.key", cfg_.d_model,
                                                 cfg_.d_model, rng);
            s1_value_ = nn::LinearLayer<S>::create(params_, "stage1.value", cfg_.d_model,
                                                   cfg_.d_model, rng);
        }
        s1_ff_ = make_ff_stack("stage1.ff", rng);
        fuse_ = nn::LinearLayer<S>::create(params_, "fuse", cfg_.spatial_cells, cfg_.d_model, rng);
        if (attention_stages) {
            s2_query_ = nn::LinearLayer<S>::create(params_, "stage2.query", cfg_.d_model,
                                                   cfg_.d_model, rng);
            s2_key_ = nn::LinearLayer<S>::create(params_, "stage2.key", cfg_.d_model,
                                                 cfg_.d_model, rng);
            s2_value_ = nn::LinearLayer<S>::create(params_, "stage2.value", cfg_.d_model,
                                                   cfg_.d_model, rng);
            s2_ff_ = make_ff_stack("stage2.ff", rng);
        }
        for (int i = 0; i < cfg_.head_fc_layers; ++i) {
            const int out = i == cfg_.head_fc_layers - 1 ? cfg_.num_classes() : cfg_.d_model;
            head_.push_back(nn::LinearLayer<S>::create(params_, "head.fc" + std::to_string(i),
                                                       cfg_.d_model, out, rng));
        }

        pe_ = nn::positional_encoding<S>(cfg_.links, cfg_.d_model);
        blur_ = blur_pool_operator<S>(cfg_.samples_per_slot, cfg_.mtf_size, cfg_.sigma);
        build_center_width_maps();
    }

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore<S>& params() { return params_; }
    const nn::ParamStore<S>& params() const { return params_; }

    bool uses_adaptive_encoding() const {
        return cfg_.variant != Variant::NoMtf && cfg_.quant_mode == QuantMode::Adaptive;
    }

    /// Current boundary values implied by the reparameterized parameters.
    Vec theta_values() const {
        if (!uses_adaptive_encoding()) return gaussian_breakpoints<S>(cfg_.q);
        const Mat& phi = phi_.value();
        Vec theta(cfg_.q - 1);
        theta(0) = phi(0, 0);
        for (int i = 1; i < cfg_.q - 1; ++i) {
            const S v = phi(0, i);
            const S gap = v > S(20) ? v : static_cast<S>(std::log1p(std::exp(v)));
            theta(i) = theta(i - 1) + gap;
        }
        return theta;
    }

    QuantizerParams<S> quantizer() const {
        QuantizerParams<S> p;
        p.q = cfg_.q;
        p.mode = cfg_.quant_mode;
        p.temperature = static_cast<S>(cfg_.temperature);
        p.boundaries = theta_values();
        return p;
    }

    /// Embeds flattened per-link tokens and adds the positional table.
    nn::Var<S> embed_fields(const std::vector<nn::Var<S>>& tokens) const {
        if (static_cast<int>(tokens.size()) != cfg_.links)
            throw nn::ShapeMismatch("embed_fields: token count vs links");
        nn::Var<S> x = nn::concat_rows(tokens);
        nn::Var<S> e = nn::linear(x, embed_);
        if (cfg_.positional && cfg_.variant != Variant::NoTransformer)
            e = nn::add(e, nn::constant<S>(pe_));
        return e;
    }

    nn::Var<S> embed_fields(const MtfTensor<S>& mtf) const {
        std::vector<nn::Var<S>> tokens;
        tokens.reserve(mtf.fields.size());
        for (const auto& field : mtf.fields)
            tokens.push_back(nn::flatten_row(nn::constant<S>(field.values)));
        return embed_fields(tokens);
    }

    nn::Var<S> stage1_forward(const nn::Var<S>& embedded, bool training, Rng& rng) const {
        if (cfg_.variant == Variant::NoTransformer)
            throw Error("variant has no attention stages");
        const auto att = nn::attention(nn::linear(embedded, s1_query_),
                                       nn::linear(embedded, s1_key_),
                                       nn::linear(embedded, s1_value_), cfg_.heads);
        return ff_apply(att.context, s1_ff_, training, rng);
    }

    /// Projects the flattened spatial matrix to one token row and appends it.
    nn::Var<S> fuse_spatial(const nn::Var<S>& e, const SpatialMatrix& spatial) const {
        if (static_cast<int>(spatial.cells.size()) != cfg_.spatial_cells)
            throw IncompatibleModel("spatial cells " + std::to_string(spatial.cells.size()));
        nn::Var<S> flat = nn::constant<S>(spatial.template flatten<S>());
        nn::Var<S> token = nn::linear(flat, fuse_);
        return nn::concat_rows<S>({e, token});
    }

    /// Second attention stage followed by mean pooling over tokens.
    nn::Var<S> stage2_forward(const nn::Var<S>& fused, bool training, Rng& rng) const {
        if (cfg_.variant == Variant::NoTransformer)
            throw Error("variant has no attention stages");
        const auto att = nn::attention(nn::linear(fused, s2_query_),
                                       nn::linear(fused, s2_key_),
                                       nn::linear(fused, s2_value_), cfg_.heads);
        return nn::mean_rows(ff_apply(att.context, s2_ff_, training, rng));
    }

    /// Fully connected head ending in a softmax over classes.
    nn::Var<S> classify(const nn::Var<S>& context) const {
        nn::Var<S> h = context;
        for (std::size_t i = 0; i + 1 < head_.size(); ++i)
            h = nn::relu(nn::linear(h, head_[i]));
        return nn::softmax_rows(nn::linear(h, head_.back()));
    }

    /// Full forward pass for one slot. With GaussianFixed quantization a
    /// precomputed MtfTensor may be supplied to skip re-encoding.
    nn::Var<S> forward(const SlotSeries& slot, const SpatialMatrix& spatial, bool training,
                       Rng& rng, const MtfTensor<S>* cached = nullptr) const {
        check_compatible(slot);
        std::vector<nn::Var<S>> tokens = encode_tokens(slot, cached);
        nn::Var<S> e = embed_fields(tokens);
        if (cfg_.variant == Variant::NoTransformer) {
            nn::Var<S> h = ff_apply(e, s1_ff_, training, rng);
            nn::Var<S> fused = fuse_spatial(h, spatial);
            return classify(nn::mean_rows(fused));
        }
        nn::Var<S> e1 = stage1_forward(e, training, rng);
        nn::Var<S> fused = fuse_spatial(e1, spatial);
        nn::Var<S> context = stage2_forward(fused, training, rng);
        return classify(context);
    }

    /// Mean cross-entropy over a batch; gradients reach every parameter,
    /// including the quantizer boundaries in adaptive mode.
    nn::Var<S> model_loss(const std::vector<const LabeledSlot*>& batch, bool training,
                          std::uint64_t seed,
                          const std::vector<const MtfTensor<S>*>* cached = nullptr) const {
        if (batch.empty()) throw Error("model_loss: empty batch");
        Rng rng(seed);
        nn::Var<S> total;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const LabeledSlot& item = *batch[i];
            const int target = cfg_.class_index(item.label);
            const MtfTensor<S>* fields = cached ? (*cached)[i] : nullptr;
            nn::Var<S> probs = forward(item.series, item.spatial, training, rng, fields);
            nn::Var<S> loss = nn::cross_entropy(probs, target);
            total = total.valid() ? nn::add(total, loss) : loss;
        }
        return nn::scale(total, S(1) / static_cast<S>(batch.size()));
    }

    /// Plain (non-graph) encoding of one slot with the current boundaries.
    MtfTensor<S> encode(const SlotSeries& slot) const {
        return encode_slot(slot, quantizer(), cfg_.mtf_size, cfg_.sigma);
    }

private:
    struct EncoderCtx {
        nn::Var<S> centers;  // 1 x Q
        nn::Var<S> widths;   // 1 x Q
    };

    void check_compatible(const SlotSeries& slot) const {
        if (slot.link_count() != cfg_.links)
            throw IncompatibleModel("links " + std::to_string(slot.link_count()) + " vs " +
                                    std::to_string(cfg_.links));
        if (slot.samples() != cfg_.samples_per_slot)
            throw IncompatibleModel("samples " + std::to_string(slot.samples()) + " vs " +
                                    std::to_string(cfg_.samples_per_slot));
    }

    std::vector<nn::LinearLayer<S>> make_ff_stack(const std::string& name, Rng& rng) {
        std::vector<nn::LinearLayer<S>> layers;
        for (int i = 0; i < cfg_.mlp_layers; ++i) {
            const int in = i == 0 ? cfg_.d_model : cfg_.hidden;
            const int out = i == cfg_.mlp_layers - 1 ? cfg_.d_model : cfg_.hidden;
            layers.push_back(
                nn::LinearLayer<S>::create(params_, name + std::to_string(i), in, out, rng));
        }
        return layers;
    }

    nn::Var<S> ff_apply(const nn::Var<S>& x, const std::vector<nn::LinearLayer<S>>& layers,
                        bool training, Rng& rng) const {
        nn::Var<S> h = x;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            h = nn::linear(h, layers[i]);
            if (i + 1 < layers.size()) {
                h = nn::relu(h);
                h = nn::dropout(h, cfg_.dropout, training, rng);
            }
        }
        return h;
    }

    /// Affine maps from boundaries to bin centers/widths; mirrors
    /// bin_centers_widths so the graph and plain paths agree.
    void build_center_width_maps() {
        const int q = cfg_.q;
        center_map_ = Mat::Zero(q - 1, q);
        width_map_ = Mat::Zero(q - 1, q);
        center_off_ = Mat::Zero(1, q);
        width_off_ = Mat::Zero(1, q);
        if (q == 2) {
            center_map_(0, 0) = S(1);
            center_map_(0, 1) = S(1);
            center_off_(0, 0) = S(-1);
            center_off_(0, 1) = S(1);
            width_off_(0, 0) = S(2);
            width_off_(0, 1) = S(2);
            return;
        }
        for (int b = 1; b < q - 1; ++b) {
            center_map_(b - 1, b) = S(0.5);
            center_map_(b, b) = S(0.5);
            width_map_(b - 1, b) = S(-1);
            width_map_(b, b) = S(1);
        }
        center_map_(0, 0) = S(1.5);
        center_map_(1, 0) = S(-0.5);
        width_map_(0, 0) = S(-1);
        width_map_(1, 0) = S(1);
        center_map_(q - 2, q - 1) = S(1.5);
        center_map_(q - 3, q - 1) = S(-0.5);
        width_map_(q - 3, q - 1) = S(-1);
        width_map_(q - 2, q - 1) = S(1);
    }

    EncoderCtx encoder_ctx() const {
        nn::Var<S> theta;
        if (cfg_.q == 2) {
            theta = phi_;
        } else {
            nn::Var<S> base = nn::slice_cols(phi_, 0, 1);
            nn::Var<S> gaps = nn::softplus(nn::slice_cols(phi_, 1, cfg_.q - 2));
            theta = nn::cumsum_row(nn::concat_cols<S>({base, gaps}));
        }
        EncoderCtx ctx;
        ctx.centers = nn::add(nn::matmul(theta, nn::constant<S>(center_map_)),
                              nn::constant<S>(center_off_));
        ctx.widths = nn::add(nn::matmul(theta, nn::constant<S>(width_map_)),
                             nn::constant<S>(width_off_));
        return ctx;
    }

    /// Soft-assignment encoding of one standardized series inside the graph.
    nn::Var<S> encode_series_soft(const Vec& standardized, const EncoderCtx& ctx) const {
        const auto n = standardized.size();
        nn::Var<S> x = nn::constant<S>(Mat(standardized));
        nn::Var<S> dist = nn::cdiv(
            nn::abs_val(nn::sub(nn::replicate_cols(x, cfg_.q),
                                nn::replicate_rows(ctx.centers, n))),
            nn::replicate_rows(ctx.widths, n));
        nn::Var<S> memberships =
            nn::softmax_rows(nn::scale(dist, S(-1.0 / cfg_.temperature)));
        nn::Var<S> head = nn::slice_rows(memberships, 0, n - 1);
        nn::Var<S> tail = nn::slice_rows(memberships, 1, n - 1);
        nn::Var<S> w = nn::normalize_rows(nn::matmul(nn::transpose(head), tail));
        nn::Var<S> field = nn::matmul(nn::matmul(memberships, w), nn::transpose(memberships));
        nn::Var<S> r = nn::constant<S>(blur_);
        return nn::matmul(nn::matmul(r, field), nn::transpose(r));
    }

    std::vector<nn::Var<S>> encode_tokens(const SlotSeries& slot,
                                          const MtfTensor<S>* cached) const {
        std::vector<nn::Var<S>> tokens;
        tokens.reserve(static_cast<std::size_t>(cfg_.links));
        if (cfg_.variant == Variant::NoMtf) {
            for (int l = 0; l < cfg_.links; ++l) {
                Vec x = slot.series.row(l).transpose().template cast<S>();
                Mat row = is_constant(x) ? Mat::Zero(1, x.size())
                                         : Mat(standardize(x).transpose());
                tokens.push_back(nn::constant<S>(std::move(row)));
            }
            return tokens;
        }
        if (cfg_.quant_mode == QuantMode::GaussianFixed) {
            const MtfTensor<S> encoded = cached ? MtfTensor<S>{} : encode(slot);
            const MtfTensor<S>& fields = cached ? *cached : encoded;
            for (const auto& field : fields.fields)
                tokens.push_back(nn::flatten_row(nn::constant<S>(field.values)));
            return tokens;
        }
        const EncoderCtx ctx = encoder_ctx();
        const QuantizerParams<S> qp = quantizer();
        for (int l = 0; l < cfg_.links; ++l) {
            Vec x = slot.series.row(l).transpose().template cast<S>();
            if (is_constant(x)) {
                // Idle links carry no boundary signal; reuse the plain
                // middle-bin field as a constant.
                const std::vector<int> bins(static_cast<std::size_t>(x.size()), cfg_.q / 2);
                const Mat field = mtf_field(bins, transition_matrix<S>(bins, cfg_.q));
                tokens.push_back(nn::flatten_row(
                    nn::constant<S>(Mat(blur_ * field * blur_.transpose()))));
            } else {
                tokens.push_back(nn::flatten_row(encode_series_soft(standardize(x), ctx)));
            }
        }
        return tokens;
    }

    ModelConfig cfg_;
    nn::ParamStore<S> params_;

    nn::Var<S> phi_;  // quantizer reparameterization, adaptive mode only
    nn::LinearLayer<S> embed_;
    nn::LinearLayer<S> s1_query_, s1_key_, s1_value_;
    std::vector<nn::LinearLayer<S>> s1_ff_;
    nn::LinearLayer<S> fuse_;
    nn::LinearLayer<S> s2_query_, s2_key_, s2_value_;
    std::vector<nn::LinearLayer<S>> s2_ff_;
    std::vector<nn::LinearLayer<S>> head_;

    Mat pe_;          // links x d_model
    Mat blur_;        // m x n blur + pool operator
    Mat center_map_, width_map_, center_off_, width_off_;
};

}  // namespace mtfnet
