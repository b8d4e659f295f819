#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "mtfnet/checkpoint.hpp"
#include "mtfnet/model.hpp"
#include "oracles.hpp"

using namespace mtfnet;
namespace fs = std::filesystem;

namespace {

template <class S>
using Mat = DenseMatrix<S>;

std::shared_ptr<const LinkTable> make_links(int count) {
    std::vector<LinkKey> keys;
    for (int i = 0; i < count; ++i)
        keys.push_back({"n" + std::to_string(i), "n" + std::to_string((i + 1) % (count + 1)),
                        i % 2 == 0 ? Protocol::Tcp : Protocol::Udp});
    std::sort(keys.begin(), keys.end());
    return std::make_shared<const LinkTable>(std::move(keys));
}

std::shared_ptr<const std::vector<std::string>> make_nodes(int count) {
    std::vector<std::string> nodes;
    for (int i = 0; i <= count; ++i) nodes.push_back("n" + std::to_string(i));
    std::sort(nodes.begin(), nodes.end());
    return std::make_shared<const std::vector<std::string>>(std::move(nodes));
}

LabeledSlot random_slot(const std::shared_ptr<const LinkTable>& links,
                        const std::shared_ptr<const std::vector<std::string>>& nodes, int n,
                        Rng& rng, const std::string& label) {
    LabeledSlot slot;
    slot.series.links = links;
    slot.series.tau = 1.0;
    slot.series.series.resize(links->size(), n);
    for (int l = 0; l < links->size(); ++l)
        for (int k = 0; k < n; ++k)
            slot.series.series(l, k) = static_cast<Real>(uniform(rng, 0.0, 20.0));
    slot.spatial = build_spatial(slot.series, nodes);
    slot.label = label;
    return slot;
}

ModelConfig tiny_config(int links, int nodes, int n, Variant variant = Variant::Full) {
    ModelConfig cfg;
    cfg.links = links;
    cfg.samples_per_slot = n;
    cfg.spatial_cells = (nodes + 1) * (nodes + 1) * 2;
    cfg.class_labels = {"a", "b"};
    cfg.mtf_size = 4;
    cfg.d_model = 4;
    cfg.heads = 2;
    cfg.hidden = 6;
    cfg.mlp_layers = 2;
    cfg.head_fc_layers = 2;
    cfg.dropout = 0.2;
    cfg.variant = variant;
    cfg.q = 3;
    cfg.quant_mode = QuantMode::Adaptive;
    cfg.temperature = 0.2;
    cfg.sigma = 0.8;
    return cfg;
}

void zero_param(StackedModel<double>& model, const std::string& name) {
    const auto v = model.params().at(name);
    v.assign(Mat<double>::Zero(v.rows(), v.cols()));
}

/// Straight-line (non-autodiff) attention + feed-forward, used as the
/// independent oracle for the stage forwards in eval mode.
Mat<double> oracle_stage(const StackedModel<double>& model, const Mat<double>& input,
                         const std::string& prefix, int heads, int mlp_layers) {
    auto value = [&](const std::string& name) { return model.params().at(name).value(); };
    const Mat<double> q =
        (input * value(prefix + ".query.W")).rowwise() + value(prefix + ".query.b").row(0);
    const Mat<double> k =
        (input * value(prefix + ".key.W")).rowwise() + value(prefix + ".key.b").row(0);
    const Mat<double> v =
        (input * value(prefix + ".value.W")).rowwise() + value(prefix + ".value.b").row(0);

    const Eigen::Index dk = q.cols() / heads;
    Mat<double> context(input.rows(), q.cols());
    for (int h = 0; h < heads; ++h) {
        const Mat<double> qh = q.middleCols(h * dk, dk);
        const Mat<double> kh = k.middleCols(h * dk, dk);
        const Mat<double> vh = v.middleCols(h * dk, dk);
        Mat<double> scores = qh * kh.transpose() / std::sqrt(static_cast<double>(dk));
        for (Eigen::Index r = 0; r < scores.rows(); ++r) {
            const double shift = scores.row(r).maxCoeff();
            scores.row(r) = (scores.row(r).array() - shift).exp();
            scores.row(r) /= scores.row(r).sum();
        }
        context.middleCols(h * dk, dk) = scores * vh;
    }

    Mat<double> h = context;
    for (int i = 0; i < mlp_layers; ++i) {
        const std::string name = prefix + ".ff" + std::to_string(i);
        h = (h * value(name + ".W")).rowwise() + value(name + ".b").row(0);
        if (i + 1 < mlp_layers) h = h.cwiseMax(0.0);
    }
    return h;
}

}  // namespace

TEST_CASE("embed_fields: zero weights isolate the positional encoding") {
    auto links = make_links(3);
    ModelConfig cfg = tiny_config(3, 3, 8);
    StackedModel<double> model(cfg, 1);
    zero_param(model, "embed.W");
    zero_param(model, "embed.b");

    MtfTensor<double> mtf;
    mtf.links = links;
    for (int l = 0; l < 3; ++l)
        mtf.fields.push_back({8, 4, Mat<double>::Zero(4, 4)});

    const auto out = model.embed_fields(mtf);
    const auto pe = nn::positional_encoding<double>(3, 4);
    CHECK((out.value() - pe).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("embed_fields: identical fields differ by exactly the PE rows") {
    ModelConfig cfg = tiny_config(2, 2, 8);
    StackedModel<double> model(cfg, 3);

    Rng rng(5);
    Mat<double> field(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) field(i, j) = uniform01(rng);
    MtfTensor<double> mtf;
    mtf.fields.push_back({8, 4, field});
    mtf.fields.push_back({8, 4, field});

    const auto out = model.embed_fields(mtf).value();
    const auto pe = nn::positional_encoding<double>(2, 4);
    const Mat<double> row_diff = out.row(0) - out.row(1);
    const Mat<double> pe_diff = pe.row(0) - pe.row(1);
    CHECK((row_diff - pe_diff).cwiseAbs().maxCoeff() < 1e-12);

    // L = 1: the single row is embed(flatten(M)) + PE row 0.
    ModelConfig cfg1 = tiny_config(1, 2, 8);
    StackedModel<double> single(cfg1, 3);
    MtfTensor<double> one;
    one.fields.push_back({8, 4, field});
    const auto row = single.embed_fields(one).value();
    Mat<double> flat(1, 16);
    for (int i = 0; i < 4; ++i) flat.middleCols(i * 4, 4) = field.row(i);
    const Mat<double> manual =
        (flat * single.params().at("embed.W").value()).rowwise() +
        (single.params().at("embed.b").value().row(0) +
         nn::positional_encoding<double>(1, 4).row(0));
    CHECK((row - manual).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("stage1 degenerate cases") {
    // L = 1: attention weight is [[1]] and E_t = ff(V).
    ModelConfig cfg = tiny_config(1, 2, 8);
    StackedModel<double> model(cfg, 7);
    Rng rng(9);
    Mat<double> e(1, 4);
    for (int j = 0; j < 4; ++j) e(0, j) = uniform(rng, -1, 1);

    Rng drop(0);
    const auto out = model.stage1_forward(nn::constant<double>(e), false, drop);
    const auto expected = oracle_stage(model, e, "stage1", cfg.heads, cfg.mlp_layers);
    CHECK((out.value() - expected).cwiseAbs().maxCoeff() < 1e-12);

    // Identical input rows stay identical through attention and the FF.
    ModelConfig cfg3 = tiny_config(3, 3, 8);
    cfg3.positional = false;
    StackedModel<double> model3(cfg3, 7);
    Mat<double> rows = e.replicate(3, 1);
    Rng drop2(0);
    const auto out3 = model3.stage1_forward(nn::constant<double>(rows), false, drop2).value();
    CHECK((out3.row(0) - out3.row(1)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((out3.row(1) - out3.row(2)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("stage1 and stage2 match the straight-line oracle on a tiny instance") {
    ModelConfig cfg = tiny_config(2, 2, 8);
    cfg.heads = 2;
    StackedModel<double> model(cfg, 11);

    Rng rng(13);
    Mat<double> embedded(2, 4);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j) embedded(i, j) = uniform(rng, -1, 1);

    Rng drop(0);
    const auto s1 = model.stage1_forward(nn::constant<double>(embedded), false, drop);
    const auto s1_expected = oracle_stage(model, embedded, "stage1", 2, cfg.mlp_layers);
    CHECK((s1.value() - s1_expected).cwiseAbs().maxCoeff() < 1e-12);

    Mat<double> fused(3, 4);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) fused(i, j) = uniform(rng, -1, 1);
    Rng drop2(0);
    const auto s2 = model.stage2_forward(nn::constant<double>(fused), false, drop2);
    const Mat<double> s2_tokens = oracle_stage(model, fused, "stage2", 2, cfg.mlp_layers);
    const Mat<double> s2_expected = s2_tokens.colwise().mean();
    CHECK((s2.value() - s2_expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fuse_spatial appends exactly one projected token") {
    auto nodes = make_nodes(2);
    ModelConfig cfg = tiny_config(2, 2, 8);
    StackedModel<double> model(cfg, 17);

    Mat<double> e = Mat<double>::Ones(2, 4);
    SpatialMatrix spatial;
    spatial.nodes = nodes;
    spatial.cells.assign(static_cast<std::size_t>(cfg.spatial_cells), 0);

    zero_param(model, "fuse.b");
    const auto fused = model.fuse_spatial(nn::constant<double>(e), spatial);
    REQUIRE(fused.rows() == 3);
    CHECK((fused.value().topRows(2) - e).cwiseAbs().maxCoeff() == 0.0);
    CHECK(fused.value().row(2).cwiseAbs().maxCoeff() == 0.0);  // zero spatial, zero bias

    // A single active cell selects one row of the projection weight.
    spatial.cells[5] = 1;
    const auto one_hot = model.fuse_spatial(nn::constant<double>(e), spatial);
    const Mat<double> expected = model.params().at("fuse.W").value().row(5);
    CHECK((one_hot.value().row(2) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("stage2 degenerate cases") {
    ModelConfig cfg = tiny_config(2, 2, 8);
    StackedModel<double> model(cfg, 19);
    Rng rng(21);

    // Single token: C_t = ff(V) of that token.
    Mat<double> one(1, 4);
    for (int j = 0; j < 4; ++j) one(0, j) = uniform(rng, -1, 1);
    Rng drop(0);
    const auto ct = model.stage2_forward(nn::constant<double>(one), false, drop);
    const auto expected = oracle_stage(model, one, "stage2", cfg.heads, cfg.mlp_layers);
    CHECK((ct.value() - expected).cwiseAbs().maxCoeff() < 1e-12);

    // Identical tokens: the mean equals the per-token output.
    Mat<double> same = one.replicate(4, 1);
    Rng drop2(0);
    const auto ct_same = model.stage2_forward(nn::constant<double>(same), false, drop2);
    CHECK((ct_same.value() - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("classify: uniform at zero weights, hand-set logits, distribution contract") {
    ModelConfig cfg = tiny_config(2, 2, 8);
    StackedModel<double> model(cfg, 23);

    zero_param(model, "head.fc1.W");
    zero_param(model, "head.fc1.b");
    Rng rng(25);
    Mat<double> context(1, 4);
    for (int j = 0; j < 4; ++j) context(0, j) = uniform(rng, -1, 1);
    const auto uniform_probs = model.classify(nn::constant<double>(context)).value();
    CHECK(uniform_probs(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(uniform_probs(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

    // Final logits [ln 3, 0] -> [0.75, 0.25].
    Mat<double> bias(1, 2);
    bias << std::log(3.0), 0.0;
    model.params().at("head.fc1.b").assign(bias);
    const auto probs = model.classify(nn::constant<double>(context)).value();
    CHECK(probs(0, 0) == doctest::Approx(0.75).epsilon(1e-9));
    CHECK(probs(0, 1) == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("model_loss: uniform head gives ln C; saturated head gives ~0") {
    auto links = make_links(2);
    auto nodes = make_nodes(2);
    ModelConfig cfg = tiny_config(2, 2, 8);
    StackedModel<double> model(cfg, 27);
    Rng rng(29);
    const auto slot_a = random_slot(links, nodes, 8, rng, "a");
    const auto slot_b = random_slot(links, nodes, 8, rng, "b");
    std::vector<const LabeledSlot*> batch = {&slot_a, &slot_b};

    zero_param(model, "head.fc1.W");
    zero_param(model, "head.fc1.b");
    const auto loss = model.model_loss(batch, false, 0);
    CHECK(loss.value()(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-9));

    Mat<double> bias(1, 2);
    bias << 50.0, -50.0;
    model.params().at("head.fc1.b").assign(bias);
    std::vector<const LabeledSlot*> only_a = {&slot_a};
    CHECK(model.model_loss(only_a, false, 0).value()(0, 0) < 1e-6);

    const auto slot_bad = random_slot(links, nodes, 8, rng, "zzz");
    std::vector<const LabeledSlot*> bad = {&slot_bad};
    CHECK_THROWS_AS(model.model_loss(bad, false, 0), LabelOutOfRange);
}

TEST_CASE("full-model gradients match finite differences, including theta") {
    auto links = make_links(2);
    auto nodes = make_nodes(2);
    ModelConfig cfg = tiny_config(2, 2, 8);
    StackedModel<double> model(cfg, 31);
    CHECK(model.params().has("quantizer.phi"));

    Rng rng(33);
    const auto slot_a = random_slot(links, nodes, 8, rng, "a");
    const auto slot_b = random_slot(links, nodes, 8, rng, "b");
    std::vector<const LabeledSlot*> batch = {&slot_a, &slot_b};

    const auto loss = model.model_loss(batch, true, 77);
    nn::backward(loss);

    const double h = 1e-4;
    for (const auto& [name, var] : model.params().items()) {
        for (Eigen::Index i = 0; i < var.rows(); ++i) {
            for (Eigen::Index j = 0; j < var.cols(); ++j) {
                const Mat<double> saved = var.value();
                auto eval_at = [&](double eps) {
                    Mat<double> shifted = saved;
                    shifted(i, j) += eps;
                    var.assign(shifted);
                    const double value = model.model_loss(batch, true, 77).value()(0, 0);
                    var.assign(saved);
                    return value;
                };
                const double fd = (eval_at(h) - eval_at(-h)) / (2 * h);
                const double an = var.has_grad() ? var.grad()(i, j) : 0.0;
                CHECK(oracle::relative_error(an, fd) < 1e-3);
            }
        }
    }
}

TEST_CASE("link permutation with positional encoding off leaves the output unchanged") {
    auto nodes = make_nodes(3);
    auto links = make_links(3);
    ModelConfig cfg = tiny_config(3, 3, 8);
    cfg.positional = false;
    StackedModel<Real> model(cfg, 35);

    Rng rng(37);
    const auto slot = random_slot(links, nodes, 8, rng, "a");

    // Permute the link order (table and series rows together).
    std::vector<LinkKey> permuted_keys = {links->key(2), links->key(0), links->key(1)};
    auto permuted_links = std::make_shared<const LinkTable>(permuted_keys);
    LabeledSlot permuted = slot;
    permuted.series.links = permuted_links;
    permuted.series.series.row(0) = slot.series.series.row(2);
    permuted.series.series.row(1) = slot.series.series.row(0);
    permuted.series.series.row(2) = slot.series.series.row(1);

    Rng r1(0), r2(0);
    const auto p1 = model.forward(slot.series, slot.spatial, false, r1).value();
    const auto p2 = model.forward(permuted.series, permuted.spatial, false, r2).value();
    CHECK((p1 - p2).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("every parameter receives gradient on a random batch") {
    auto links = make_links(3);
    auto nodes = make_nodes(3);
    for (const Variant variant : {Variant::Full, Variant::NoMtf, Variant::NoTransformer}) {
        ModelConfig cfg = tiny_config(3, 3, 8, variant);
        StackedModel<double> model(cfg, 39);
        Rng rng(41);
        std::vector<LabeledSlot> slots;
        for (int i = 0; i < 4; ++i)
            slots.push_back(random_slot(links, nodes, 8, rng, i % 2 == 0 ? "a" : "b"));
        std::vector<const LabeledSlot*> batch;
        for (const auto& s : slots) batch.push_back(&s);

        nn::backward(model.model_loss(batch, false, 0));
        REQUIRE(model.params().disconnected().empty());
        for (const auto& [name, var] : model.params().items()) {
            INFO(to_string(variant) << " " << name);
            CHECK(var.grad().cwiseAbs().maxCoeff() > 0.0);
        }
    }
}

TEST_CASE("ablation variants share shapes and the head") {
    auto links = make_links(2);
    (void)links;
    ModelConfig base = tiny_config(2, 2, 8);

    ModelConfig no_mtf = base;
    no_mtf.variant = Variant::NoMtf;
    StackedModel<Real> m1(no_mtf, 1);
    CHECK(m1.params().at("embed.W").rows() == 8);  // raw series length n
    CHECK_FALSE(m1.params().has("quantizer.phi"));
    CHECK(m1.params().has("stage2.query.W"));

    ModelConfig no_tr = base;
    no_tr.variant = Variant::NoTransformer;
    StackedModel<Real> m2(no_tr, 1);
    CHECK(m2.params().at("embed.W").rows() == 16);  // m*m
    CHECK_FALSE(m2.params().has("stage1.query.W"));
    CHECK_FALSE(m2.params().has("stage2.query.W"));
    CHECK(m2.params().has("head.fc1.W"));
    CHECK(m2.params().has("fuse.W"));

    StackedModel<Real> full(base, 1);
    CHECK(full.params().at("head.fc1.W").rows() == m2.params().at("head.fc1.W").rows());
    CHECK(full.params().at("embed.W").rows() == 16);
}

TEST_CASE("checkpoint round-trip reproduces forward outputs bit-for-bit") {
    auto links = make_links(2);
    auto nodes = make_nodes(2);
    ModelConfig cfg = tiny_config(2, 2, 8);
    StackedModel<Real> model(cfg, 43);

    Rng rng(45);
    const auto slot = random_slot(links, nodes, 8, rng, "a");
    Rng r1(0);
    const MatR before = model.forward(slot.series, slot.spatial, false, r1).value();

    const auto dir = fs::temp_directory_path() / "mtfnet_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "model.mtfm").string();
    save_checkpoint(path, model);

    const auto loaded = load_checkpoint(path);
    CHECK(loaded.config().class_labels == cfg.class_labels);
    CHECK(loaded.config().variant == cfg.variant);
    Rng r2(0);
    const MatR after = loaded.forward(slot.series, slot.spatial, false, r2).value();
    REQUIRE(before.size() == after.size());
    for (Eigen::Index i = 0; i < before.size(); ++i)
        CHECK(before.data()[i] == after.data()[i]);

    // Corrupted magic and version must be rejected.
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.put('Z');
    }
    CHECK_THROWS_AS(load_checkpoint(path), ArchiveError);
    save_checkpoint(path, model);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        f.put(static_cast<char>(42));
    }
    CHECK_THROWS_AS(load_checkpoint(path), ArchiveError);
    fs::remove_all(dir);
}

TEST_CASE("optimizer state round-trips through the checkpoint") {
    auto links = make_links(2);
    auto nodes = make_nodes(2);
    ModelConfig cfg = tiny_config(2, 2, 8);
    StackedModel<Real> model(cfg, 47);

    Rng rng(49);
    const auto slot = random_slot(links, nodes, 8, rng, "a");
    std::vector<const LabeledSlot*> batch = {&slot};
    nn::AdamW<Real> opt;
    nn::backward(model.model_loss(batch, true, 1));
    opt.step(model.params());
    model.params().zero_grad();

    const auto dir = fs::temp_directory_path() / "mtfnet_opt_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "model.mtfm").string();
    save_checkpoint(path, model, &opt);

    nn::AdamW<Real> restored;
    const auto loaded = load_checkpoint(path, &restored);
    CHECK(restored.step_count() == opt.step_count());
    REQUIRE(restored.first_moments().size() == opt.first_moments().size());
    for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
        CHECK((restored.first_moments()[i] - opt.first_moments()[i]).cwiseAbs().maxCoeff() ==
              0.0f);
        CHECK((restored.second_moments()[i] - opt.second_moments()[i]).cwiseAbs().maxCoeff() ==
              0.0f);
    }
    fs::remove_all(dir);
}
