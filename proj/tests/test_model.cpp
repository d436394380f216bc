#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "tog/errors.hpp"
#include "tog/model.hpp"
#include "tog/ops.hpp"
#include "tog/rng.hpp"

using namespace tog;

namespace {

ModelConfig toy_config(int s = 64) {
    ModelConfig cfg;
    cfg.image_size = s;
    cfg.vocab_size = 30;
    return cfg;
}

Tensor random_image(int s, Rng& rng) {
    Tensor t = Tensor::zeros({s, s, 3});
    for (std::size_t i = 0; i < t.numel(); ++i) (*t.data)[i] = rng.uniform_f(0.0f, 1.0f);
    return t;
}

std::vector<int> random_ids(int t_max, int vocab, int len, Rng& rng) {
    std::vector<int> ids(static_cast<std::size_t>(t_max), 0);
    for (int i = 0; i < len; ++i) ids[static_cast<std::size_t>(i)] = 2 + rng.below(vocab - 2);
    return ids;
}

// Finite-difference oracle over a named parameter of a live model: the
// analytic gradient comes from one taped backward, numeric values from
// central differences on a sampled coordinate subset. Two standard
// precautions keep the ratio meaningful on f32 forward passes:
//  - an exactly-linear 2*sum(param) branch joins the loss so no checked
//    coordinate has a near-zero gradient (where the ratio is all noise);
//  - coordinates whose +/-h neighborhood straddles a ReLU kink (second
//    difference dwarfing the first) are resampled, since the derivative
//    being checked does not exist there.
double fd_check_param(GraspClipModel& model, const std::string& pname,
                      const std::function<Tensor()>& base_loss_fn, float h, int max_coords,
                      std::uint64_t seed) {
    Tensor* p = model.params().find(pname);
    REQUIRE(p != nullptr);
    auto loss_fn = [&]() { return add(base_loss_fn(), scale(sum_all(*p), 2.0f)); };
    model.params().zero_grad();
    std::vector<float> analytic;
    double f0 = 0.0;
    {
        Tape tape;
        Tensor loss = loss_fn();
        f0 = loss.value();
        tape.backward(loss);
        analytic = *p->grad;
    }
    (void)f0;
    Rng rng(seed);
    double worst = 0.0;
    const int n = static_cast<int>(p->numel());
    int checked = 0;
    for (int attempt = 0; attempt < 6 * max_coords && checked < max_coords; ++attempt) {
        const int c = rng.below(n);
        const float orig = (*p->data)[static_cast<std::size_t>(c)];
        auto eval_at = [&](float delta) {
            (*p->data)[static_cast<std::size_t>(c)] = orig + delta;
            const double v = loss_fn().value();
            (*p->data)[static_cast<std::size_t>(c)] = orig;
            return v;
        };
        const double n_full = (eval_at(h) - eval_at(-h)) / (2.0 * h);
        const double n_half = (eval_at(h / 2) - eval_at(-h / 2)) / static_cast<double>(h);
        const double a = analytic[static_cast<std::size_t>(c)];
        // the two step sizes must agree for the estimate to be trustworthy
        if (std::abs(n_full - n_half) >
            1e-3 * (std::abs(a) + std::abs(n_half) + 1.0)) {
            continue;
        }
        ++checked;
        worst = std::max(worst,
                         std::abs(a - n_half) / std::max(1e-6, std::abs(a) + std::abs(n_half)));
    }
    REQUIRE(checked >= max_coords / 2);  // mostly-kink landscapes mean a broken setup
    return worst;
}

}  // namespace

TEST_CASE("visual encoder produces the pyramid shapes and reacts to input") {
    const ModelConfig cfg = toy_config(128);
    GraspClipModel model(cfg, Variant::GraspClip, 1);
    Rng rng(2);
    const Tensor img = random_image(128, rng);
    const Pyramid pyr = model.visual_encoder(img);
    CHECK(pyr.v_low.shape == Shape{16, 16, cfg.d_low});
    CHECK(pyr.v_mid.shape == Shape{4, 4, cfg.d_mid});
    CHECK(pyr.v_high.shape == Shape{2, 2, cfg.d_high});

    const Tensor img2 = random_image(128, rng);
    const Pyramid pyr2 = model.visual_encoder(img2);
    CHECK(*pyr.v_high.data != *pyr2.v_high.data);

    CHECK_THROWS_WITH_AS(model.visual_encoder(random_image(64, rng)),
                         doctest::Contains("128"), DimensionError);
}

TEST_CASE("visual encoder weights receive gradient") {
    GraspClipModel model(toy_config(64), Variant::GraspClip, 3);
    Rng rng(4);
    const Tensor img = random_image(64, rng);
    const std::vector<int> ids = random_ids(20, 30, 5, rng);
    model.params().zero_grad();
    {
        Tape tape;
        PredictionMaps maps = model.forward(img, ids);
        Tensor loss = sum_all(maps.m_q);
        tape.backward(loss);
    }
    const Tensor* w = model.params().find("visual.s1.w");
    REQUIRE(w);
    bool any = false;
    for (float g : *w->grad) any |= g != 0.0f;
    CHECK(any);
}

TEST_CASE("text encoder: masking and single-token pooling") {
    const ModelConfig cfg = toy_config(64);
    GraspClipModel model(cfg, Variant::GraspClip, 5);

    // single non-pad token: l_sen is the projection of that token's state
    std::vector<int> one(20, 0);
    one[0] = 7;
    const TextEncoding te = model.text_encoder(one);
    CHECK(te.l_word.shape == Shape{20, cfg.d_word});
    CHECK(te.l_sen.shape == Shape{1, cfg.d_high});
    // pooling over one token == that token's row, so re-projecting it must
    // reproduce l_sen exactly
    const Tensor row0 = te.l_word.reshaped({20, cfg.d_word});
    Tensor single = Tensor::zeros({1, cfg.d_word});
    for (int i = 0; i < cfg.d_word; ++i) (*single.data)[i] = (*row0.data)[i];
    const Tensor expect = linear(single, model.params().find("text.sen.w")
                                             ? *model.params().find("text.sen.w")
                                             : Tensor(),
                                 *model.params().find("text.sen.b"));
    for (int i = 0; i < cfg.d_high; ++i) {
        CHECK((*te.l_sen.data)[i] == doctest::Approx((*expect.data)[i]).epsilon(1e-6));
    }

    // changing ids only at pad positions cannot change the embedding of
    // the real prefix (pads all share id 0, so permuting them is a no-op;
    // equivalently, masked positions carry no information)
    std::vector<int> a(20, 0), b(20, 0);
    a[0] = 3; a[1] = 9;
    b[0] = 3; b[1] = 9;
    const TextEncoding ta = model.text_encoder(a);
    const TextEncoding tb = model.text_encoder(b);
    CHECK(*ta.l_sen.data == *tb.l_sen.data);

    const std::vector<int> all_pad(20, 0);
    CHECK_THROWS_AS(model.text_encoder(all_pad), ConfigError);
}

TEST_CASE("text encoder gradients match finite differences") {
    GraspClipModel model(toy_config(64), Variant::GraspClip, 6);
    Rng rng(7);
    const std::vector<int> ids = random_ids(20, 30, 6, rng);
    Tensor proj_w = Tensor::zeros({1, 64});
    for (int i = 0; i < 64; ++i) (*proj_w.data)[i] = 0.3f + 0.05f * static_cast<float>(i % 7);
    Tensor proj_t = Tensor::zeros({20, 32});
    for (int i = 0; i < 20 * 32; ++i) (*proj_t.data)[i] = 0.3f + 0.04f * static_cast<float>(i % 9);

    auto loss_fn = [&]() {
        const TextEncoding te = model.text_encoder(ids);
        return add(sum_all(mul(te.l_sen, proj_w.reshaped({64}))),
                   sum_all(mul(te.l_word, proj_t)));
    };
    CHECK(fd_check_param(model, "text.embed", loss_fn, 3e-3f, 40, 11) <= 1e-3);
    CHECK(fd_check_param(model, "text.attn.q.w", loss_fn, 3e-3f, 40, 12) <= 1e-3);
    CHECK(fd_check_param(model, "text.sen.w", loss_fn, 3e-3f, 40, 13) <= 1e-3);
}

TEST_CASE("hadamard gating: ones is the identity, scaling is linear") {
    GraspClipModel model(toy_config(64), Variant::GraspClip, 8);
    Rng rng(9);
    const Tensor img = random_image(64, rng);
    const Pyramid pyr = model.visual_encoder(img);

    const Tensor ones = Tensor::full({64}, 1.0f);
    const Tensor gated = mul(pyr.v_high, ones);
    CHECK(*gated.data == *pyr.v_high.data);  // bitwise

    const Tensor twos = Tensor::full({64}, 2.0f);
    const Tensor doubled = mul(pyr.v_high, twos);
    for (std::size_t i = 0; i < doubled.numel(); ++i) {
        CHECK((*doubled.data)[i] == 2.0f * (*gated.data)[i]);
    }
}

TEST_CASE("stage shapes at S=128 follow the configured ratios") {
    const ModelConfig cfg = toy_config(128);
    GraspClipModel model(cfg, Variant::GraspClip, 10);
    Rng rng(11);
    const Tensor img = random_image(128, rng);
    const std::vector<int> ids = random_ids(20, 30, 5, rng);
    const ForwardTrace tr = model.trace(img, &ids);
    CHECK(tr.stage1.shape == Shape{8, 8, cfg.d_attn});       // S/16
    CHECK(tr.v_fag.shape == Shape{32, 32, cfg.d_fag});       // S/4
    CHECK(tr.maps.m_q.shape == Shape{128, 128});
    CHECK(tr.maps.m_theta.shape == Shape{128, 128, 120});
    CHECK(tr.maps.m_w.shape == Shape{128, 128});
    for (float v : *tr.maps.m_q.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("gating: at alpha == 0 the fag stage is bitwise independent of l_word") {
    GraspClipModel model(toy_config(64), Variant::GraspClip, 12);
    Rng rng(13);
    const Tensor img = random_image(64, rng);
    for (int trial = 0; trial < 5; ++trial) {
        const std::vector<int> ids1 = random_ids(20, 30, 4 + trial, rng);
        const std::vector<int> ids2 = random_ids(20, 30, 6, rng);
        // same fused input map, two different word sequences
        const Tensor stage1 = model.trace(img, nullptr).stage1;
        const Tensor a = model.fag_attention_map(stage1, model.text_encoder(ids1).l_word, ids1);
        const Tensor b = model.fag_attention_map(stage1, model.text_encoder(ids2).l_word, ids2);
        CHECK(*a.data == *b.data);              // bitwise
        CHECK(*a.data == *stage1.data);         // passthrough at init

        // same claim end to end: with the sentence gate pinned to ones the
        // remaining text influence is l_word, which alpha == 0 silences
        const ForwardTrace t1 = model.trace(img, &ids1, true);
        const ForwardTrace t2 = model.trace(img, &ids2, true);
        CHECK(*t1.v_fag.data == *t2.v_fag.data);

        // the COG Hadamard path still differs via l_sen when not forced
        const ForwardTrace u1 = model.trace(img, &ids1);
        const ForwardTrace u2 = model.trace(img, &ids2);
        CHECK(*u1.stage1.data != *u2.stage1.data);
    }
}

TEST_CASE("forcing the sentence gate to ones reproduces forward_tag bitwise") {
    GraspClipModel model(toy_config(64), Variant::GraspClip, 14);
    Rng rng(15);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor img = random_image(64, rng);
        const std::vector<int> ids = random_ids(20, 30, 5, rng);
        const ForwardTrace forced = model.trace(img, &ids, true);
        const PredictionMaps tag = model.forward_tag(img);
        CHECK(*forced.maps.m_q.data == *tag.m_q.data);
        CHECK(*forced.maps.m_theta.data == *tag.m_theta.data);
        CHECK(*forced.maps.m_w.data == *tag.m_w.data);
    }
}

TEST_CASE("attention on uniform rows yields uniform rows") {
    GraspClipModel model(toy_config(64), Variant::GraspClip, 16);
    // make the gate active so attention actually contributes
    (*model.params().find("fag.alpha")->data)[0] = 1.0f;

    Rng rng(17);
    Tensor x = Tensor::zeros({4, 4, 32});
    for (int c = 0; c < 32; ++c) {
        const float v = rng.uniform_f(-1.0f, 1.0f);
        for (int s = 0; s < 16; ++s) (*x.data)[s * 32 + c] = v;  // identical site vectors
    }
    const std::vector<int> ids = random_ids(20, 30, 5, rng);
    const TextEncoding te = model.text_encoder(ids);
    const Tensor out = model.fag_attention_map(x, te.l_word, ids);
    for (int s = 1; s < 16; ++s) {
        for (int c = 0; c < 32; ++c) {
            CHECK((*out.data)[s * 32 + c] == doctest::Approx((*out.data)[c]).epsilon(1e-5));
        }
    }
}

TEST_CASE("alpha receives gradient and passes the finite-difference oracle") {
    GraspClipModel model(toy_config(64), Variant::GraspClip, 18);
    Rng rng(19);
    const Tensor img = random_image(64, rng);
    const std::vector<int> ids = random_ids(20, 30, 5, rng);
    auto loss_fn = [&]() {
        const ForwardTrace tr = model.trace(img, &ids);
        return sum_all(tr.v_fag);
    };
    model.params().zero_grad();
    {
        Tape tape;
        Tensor loss = loss_fn();
        tape.backward(loss);
    }
    CHECK((*model.params().find("fag.alpha")->grad)[0] != 0.0f);
    CHECK(fd_check_param(model, "fag.alpha", loss_fn, 5e-2f, 1, 20) <= 1e-3);
}

TEST_CASE("end-to-end gradient at 64x64 stays within the widened tolerance") {
    GraspClipModel model(toy_config(64), Variant::GraspClip, 21);
    Rng rng(22);
    const Tensor img = random_image(64, rng);
    const std::vector<int> ids = random_ids(20, 30, 5, rng);
    Tensor target_q = Tensor::zeros({64, 64});
    for (int i = 0; i < 64 * 64; ++i) (*target_q.data)[i] = (i % 97 < 5) ? 1.0f : 0.0f;
    auto loss_fn = [&]() {
        const PredictionMaps maps = model.forward(img, ids);
        return add(bce(maps.m_q, target_q), scale(sum_all(maps.m_w), 1e-3f));
    };
    CHECK(fd_check_param(model, "visual.s3.w", loss_fn, 2e-3f, 8, 23) <= 5e-3);
    CHECK(fd_check_param(model, "cog1.sen.w", loss_fn, 2e-3f, 8, 24) <= 5e-3);
    CHECK(fd_check_param(model, "decoder.b3.mid.w", loss_fn, 2e-3f, 8, 25) <= 5e-3);
}

TEST_CASE("variants: parameter structure and output shapes") {
    const ModelConfig cfg = toy_config(64);

    GraspClipModel cog_only(cfg, Variant::CogOnly, 26);
    CHECK(cog_only.params().find("fag.alpha") == nullptr);
    CHECK(cog_only.params().find("fag.sa.q.w") == nullptr);
    CHECK(cog_only.params().find("cog2.sen.w") != nullptr);

    GraspClipModel fag_only(cfg, Variant::FagOnly, 27);
    CHECK(fag_only.params().find("cog1.sen.w") == nullptr);  // never consumes l_sen
    CHECK(fag_only.params().find("fag.word.w") != nullptr);  // consumes l_word

    GraspClipModel fag_cog(cfg, Variant::FagCog, 28);
    CHECK(fag_cog.params().find("fag_adapter.w") != nullptr);
    CHECK(fag_cog.params().find("cog2.sen.w") != nullptr);

    Rng rng(29);
    const Tensor img = random_image(64, rng);
    const std::vector<int> ids = random_ids(20, 30, 5, rng);
    GraspClipModel full(cfg, Variant::GraspClip, 30);
    const PredictionMaps ref = full.forward(img, ids);
    for (GraspClipModel* m : {&cog_only, &fag_only, &fag_cog}) {
        const PredictionMaps maps = m->forward(img, ids);
        CHECK(maps.m_q.shape == ref.m_q.shape);
        CHECK(maps.m_theta.shape == ref.m_theta.shape);
        CHECK(maps.m_w.shape == ref.m_w.shape);
    }

    // tag ignores instructions by construction
    GraspClipModel tag(cfg, Variant::Tag, 31);
    const PredictionMaps t1 = tag.forward(img, ids);
    const PredictionMaps t2 = tag.forward_tag(img);
    CHECK(*t1.m_q.data == *t2.m_q.data);
}

TEST_CASE("decode_grasp: single peak, tie break, width and bin decoding") {
    ModelConfig cfg = toy_config(64);
    cfg.gaussian_sigma = 2.0f;

    PredictionMaps maps;
    maps.m_q = Tensor::zeros({64, 64});
    maps.m_theta = Tensor::zeros({64, 64, 120});
    maps.m_w = Tensor::full({64, 64}, 0.5f);
    (*maps.m_q.data)[37 * 64 + 21] = 1.0f;  // peak at (x=21, y=37)
    (*maps.m_theta.data)[(37 * 64 + 21) * 120 + 40] = 1.0f;

    const GraspRect g = decode_grasp(maps, cfg);
    CHECK(g.x == 21.0f);
    CHECK(g.y == 37.0f);
    CHECK(g.theta_deg == doctest::Approx(60.75f));  // bin 40 of 1.5 deg + center
    CHECK(g.w == doctest::Approx(0.5f * cfg.max_width()));
    CHECK(g.h == doctest::Approx(cfg.jaw_len()));

    // uniform quality map: row-major first occurrence
    PredictionMaps uni;
    uni.m_q = Tensor::full({64, 64}, 0.25f);
    uni.m_theta = Tensor::zeros({64, 64, 120});
    uni.m_w = Tensor::full({64, 64}, 0.25f);
    const GraspRect g0 = decode_grasp(uni, cfg);
    CHECK(g0.x == 0.0f);
    CHECK(g0.y == 0.0f);

    // blur keeps the argmax on a dominant isolated peak (>= 8 sigma away)
    PredictionMaps two;
    two.m_q = Tensor::zeros({64, 64});
    two.m_theta = Tensor::zeros({64, 64, 120});
    two.m_w = Tensor::full({64, 64}, 0.5f);
    (*two.m_q.data)[10 * 64 + 10] = 1.0f;
    (*two.m_q.data)[50 * 64 + 50] = 0.6f;
    const GraspRect gd = decode_grasp(two, cfg);
    CHECK(gd.x == 10.0f);
    CHECK(gd.y == 10.0f);

    // argmax location is invariant to positive scaling of M_q
    PredictionMaps scaled = two;
    scaled.m_q = scale(two.m_q, 0.37f);
    const GraspRect gs = decode_grasp(scaled, cfg);
    CHECK(gs.x == gd.x);
    CHECK(gs.y == gd.y);
}

TEST_CASE("checkpoint round trip preserves forward outputs bitwise") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "tog_model_ckpt";
    fs::create_directories(dir);
    const std::string path = (dir / "m.ckpt").string();

    const ModelConfig cfg = toy_config(64);
    GraspClipModel model(cfg, Variant::GraspClip, 32);
    Rng rng(33);
    const Tensor img = random_image(64, rng);
    const std::vector<int> ids = random_ids(20, 30, 5, rng);
    const PredictionMaps before = model.forward(img, ids);
    model.save(path);

    GraspClipModel loaded = GraspClipModel::load(path);
    CHECK(loaded.variant() == Variant::GraspClip);
    const PredictionMaps after = loaded.forward(img, ids);
    CHECK(*before.m_q.data == *after.m_q.data);
    CHECK(*before.m_theta.data == *after.m_theta.data);
    CHECK(*before.m_w.data == *after.m_w.data);

    // bins mismatch is reported against the M_theta head
    ModelConfig wrong = cfg;
    wrong.bins = 100;
    GraspClipModel victim(wrong, Variant::GraspClip, 34);
    CHECK_THROWS_WITH_AS(victim.load_weights(path), doctest::Contains("M_theta head"),
                         CheckpointError);
}
