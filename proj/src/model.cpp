#include "tog/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "tog/checkpoint.hpp"
#include "tog/errors.hpp"
#include "tog/language.hpp"
#include "tog/ops.hpp"
#include "tog/rng.hpp"

namespace tog {

using nlohmann::json;

namespace {

constexpr float kMaskBias = -1e9f;

float he_limit(std::size_t fan_in) {
    return std::sqrt(6.0f / static_cast<float>(fan_in));
}

Tensor uniform_init(Shape shape, float limit, Rng& rng) {
    Tensor t = Tensor::zeros(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) (*t.data)[i] = rng.uniform_f(-limit, limit);
    return t;
}

// Constant [1,T] row with 1/count at non-pad positions: matmul with it is
// the masked mean.
Tensor mean_row_for(const std::vector<int>& ids) {
    int nonpad = 0;
    for (int id : ids)
        if (id != Vocabulary::kPad) ++nonpad;
    if (nonpad == 0) throw ConfigError("text_encoder: all-pad input");
    Tensor row = Tensor::zeros({1, static_cast<int>(ids.size())});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] != Vocabulary::kPad) (*row.data)[i] = 1.0f / static_cast<float>(nonpad);
    }
    return row;
}

// 0 at non-pad key positions, a large negative at pads; added to score
// rows before softmax.
Tensor pad_bias_for(const std::vector<int>& ids) {
    Tensor bias = Tensor::zeros({static_cast<int>(ids.size())});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == Vocabulary::kPad) (*bias.data)[i] = kMaskBias;
    }
    return bias;
}

}  // namespace

void ModelConfig::validate() const {
    if (image_size < 64 || image_size % 64 != 0) {
        throw ConfigError("image_size must be a positive multiple of 64, got " +
                          std::to_string(image_size));
    }
    if (d_low < 1 || d_mid < 1 || d_high < 1 || d_attn < 1 || d_word < 1 || d_fag < 1) {
        throw ConfigError("channel widths must be positive");
    }
    if (bins < 2) throw ConfigError("bins must be >= 2");
    if (t_max < 4) throw ConfigError("t_max must be >= 4");
    if (vocab_size < 2) throw ConfigError("vocab_size must cover the reserved ids");
}

Variant variant_from_string(const std::string& name) {
    if (name == "graspclip") return Variant::GraspClip;
    if (name == "tag") return Variant::Tag;
    if (name == "cog_only") return Variant::CogOnly;
    if (name == "fag_only") return Variant::FagOnly;
    if (name == "fag_cog") return Variant::FagCog;
    throw ConfigError("unknown variant '" + name +
                      "' (graspclip|tag|cog_only|fag_only|fag_cog)");
}

std::string variant_to_string(Variant v) {
    switch (v) {
        case Variant::GraspClip: return "graspclip";
        case Variant::Tag: return "tag";
        case Variant::CogOnly: return "cog_only";
        case Variant::FagOnly: return "fag_only";
        default: return "fag_cog";
    }
}

std::string ModelConfig::to_json_string(const std::string& variant) const {
    const json j = {{"image_size", image_size}, {"d_low", d_low},
                    {"d_mid", d_mid},           {"d_high", d_high},
                    {"d_attn", d_attn},         {"d_word", d_word},
                    {"d_fag", d_fag},           {"bins", bins},
                    {"t_max", t_max},           {"vocab_size", vocab_size},
                    {"w_max", w_max},           {"h_px", h_px},
                    {"gaussian_sigma", gaussian_sigma}, {"variant", variant}};
    return j.dump(2);
}

std::pair<ModelConfig, std::string> ModelConfig::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed model config: ") + e.what());
    }
    ModelConfig cfg;
    cfg.image_size = j.at("image_size").get<int>();
    cfg.d_low = j.at("d_low").get<int>();
    cfg.d_mid = j.at("d_mid").get<int>();
    cfg.d_high = j.at("d_high").get<int>();
    cfg.d_attn = j.at("d_attn").get<int>();
    cfg.d_word = j.at("d_word").get<int>();
    cfg.d_fag = j.at("d_fag").get<int>();
    cfg.bins = j.at("bins").get<int>();
    cfg.t_max = j.at("t_max").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.w_max = j.at("w_max").get<float>();
    cfg.h_px = j.at("h_px").get<float>();
    cfg.gaussian_sigma = j.at("gaussian_sigma").get<float>();
    return {cfg, j.at("variant").get<std::string>()};
}

GraspClipModel::GraspClipModel(ModelConfig cfg, Variant variant, std::uint64_t init_seed,
                               bool with_pretrain_heads)
    : cfg_(cfg), variant_(variant), has_pretrain_(with_pretrain_heads) {
    cfg_.validate();
    Rng rng(Rng::derive(init_seed, 0x1417));

    auto linear_p = [&](const std::string& name, int din, int dout) {
        LinearP p;
        p.w = params_.add(name + ".w", uniform_init({din, dout}, he_limit(din), rng));
        p.b = params_.add(name + ".b", Tensor::zeros({dout}));
        return p;
    };
    auto conv_p = [&](const std::string& name, int kh, int kw, int cin, int cout) {
        ConvP p;
        p.w = params_.add(name + ".w", uniform_init({kh, kw, cin, cout},
                                                    he_limit(static_cast<std::size_t>(kh) * kw * cin),
                                                    rng));
        p.b = params_.add(name + ".b", Tensor::zeros({cout}));
        return p;
    };
    auto attn_p = [&](const std::string& name, int d) {
        AttnP p;
        p.q = linear_p(name + ".q", d, d);
        p.k = linear_p(name + ".k", d, d);
        p.v = linear_p(name + ".v", d, d);
        return p;
    };
    auto cog_p = [&](const std::string& name, int cx, int cskip, int cout, bool has_sen) {
        CogP p;
        p.has_sen = has_sen;
        if (has_sen) p.sen_proj = linear_p(name + ".sen", cfg_.d_high, cx);
        p.up = conv_p(name + ".up", 2, 2, cx + cskip, cout);
        p.post = conv_p(name + ".post", 3, 3, cout, cout);
        return p;
    };
    auto fag_p = [&](const std::string& name) {
        FagP p;
        p.sa = attn_p(name + ".sa", cfg_.d_attn);
        p.ca = attn_p(name + ".ca", cfg_.d_attn);
        p.word_proj = linear_p(name + ".word", cfg_.d_word, cfg_.d_attn);
        p.ffn1 = linear_p(name + ".ffn1", cfg_.d_attn, 2 * cfg_.d_attn);
        p.ffn2 = linear_p(name + ".ffn2", 2 * cfg_.d_attn, cfg_.d_attn);
        p.alpha = params_.add(name + ".alpha", Tensor::zeros({1}));
        return p;
    };

    // Visual pyramid trunk: six stride-2 stages, taps at S/8, S/32, S/64.
    const int widths[7] = {3, 8, 16, cfg_.d_low, 48, cfg_.d_mid, cfg_.d_high};
    for (int s = 0; s < 6; ++s) {
        trunk_.push_back(conv_p("visual.s" + std::to_string(s + 1), 4, 4, widths[s], widths[s + 1]));
    }

    text_embed_ = params_.add(
        "text.embed",
        uniform_init({cfg_.vocab_size, cfg_.d_word},
                     1.0f / std::sqrt(static_cast<float>(cfg_.d_word)), rng));
    text_attn_ = attn_p("text.attn", cfg_.d_word);
    text_ffn1_ = linear_p("text.ffn1", cfg_.d_word, 2 * cfg_.d_word);
    text_ffn2_ = linear_p("text.ffn2", 2 * cfg_.d_word, cfg_.d_word);
    text_sen_ = linear_p("text.sen", cfg_.d_word, cfg_.d_high);

    switch (variant_) {
        case Variant::GraspClip:
        case Variant::Tag:
            cog1_ = cog_p("cog1", cfg_.d_high, cfg_.d_mid, cfg_.d_attn, true);
            fag_ = fag_p("fag");
            fag_tail_.fuse1 = conv_p("fag_tail.fuse1", 3, 3, cfg_.d_attn + cfg_.d_low, cfg_.d_attn);
            fag_tail_.fuse2 = conv_p("fag_tail.fuse2", 3, 3, cfg_.d_attn, cfg_.d_fag);
            break;
        case Variant::CogOnly:
            cog1_ = cog_p("cog1", cfg_.d_high, cfg_.d_mid, cfg_.d_attn, true);
            cog2_ = cog_p("cog2", cfg_.d_attn, cfg_.d_low, cfg_.d_fag, true);
            break;
        case Variant::FagOnly:
            cog1_ = cog_p("cog1", cfg_.d_high, cfg_.d_mid, cfg_.d_attn, false);
            fag_ = fag_p("fag");
            fag_tail_.fuse1 = conv_p("fag_tail.fuse1", 3, 3, cfg_.d_attn + cfg_.d_low, cfg_.d_attn);
            fag_tail_.fuse2 = conv_p("fag_tail.fuse2", 3, 3, cfg_.d_attn, cfg_.d_fag);
            break;
        case Variant::FagCog:
            fag_adapter_ = conv_p("fag_adapter", 1, 1, cfg_.d_high, cfg_.d_attn);
            fag_ = fag_p("fag");
            fagc_tail_ = cog_p("fagc_tail", cfg_.d_attn, cfg_.d_mid, cfg_.d_attn, false);
            cog2_ = cog_p("cog2", cfg_.d_attn, cfg_.d_low, cfg_.d_fag, true);
            break;
    }

    const int mid = 8, vpred = 16;
    for (int blk = 0; blk < 3; ++blk) {
        const int cin = blk == 0 ? cfg_.d_fag : vpred;
        const std::string base = "decoder.b" + std::to_string(blk + 1);
        bottlenecks_.push_back(conv_p(base + ".reduce", 1, 1, cin, mid));
        bottlenecks_.push_back(conv_p(base + ".mid", 3, 3, mid, mid));
        bottlenecks_.push_back(conv_p(base + ".expand", 1, 1, mid, vpred));
    }
    head_q_ = conv_p("decoder.head_q", 1, 1, vpred, 1);
    head_theta_ = conv_p("decoder.theta_head", 1, 1, vpred, cfg_.bins);
    head_w_ = conv_p("decoder.head_w", 1, 1, vpred, 1);

    if (has_pretrain_) {
        img_proj_ = linear_p("pretrain.img", cfg_.d_high, cfg_.d_attn);
        txt_proj_ = linear_p("pretrain.txt", cfg_.d_high, cfg_.d_attn);
    }
}

Pyramid GraspClipModel::visual_encoder(const Tensor& image) const {
    const int S = cfg_.image_size;
    if (image.shape != Shape{S, S, 3}) {
        throw DimensionError("visual_encoder: expected image of size " + std::to_string(S) + "x" +
                             std::to_string(S) + "x3, got " + shape_str(image.shape));
    }
    Pyramid pyr;
    Tensor x = image;
    for (std::size_t s = 0; s < trunk_.size(); ++s) {
        x = relu(conv2d(x, trunk_[s].w, trunk_[s].b, 2, 1));
        if (s == 2) pyr.v_low = x;        // S/8
        if (s == 4) pyr.v_mid = x;        // S/32
    }
    pyr.v_high = x;                        // S/64
    return pyr;
}

TextEncoding GraspClipModel::text_encoder(const std::vector<int>& token_ids) const {
    if (static_cast<int>(token_ids.size()) != cfg_.t_max) {
        throw DimensionError("text_encoder: expected " + std::to_string(cfg_.t_max) +
                             " token ids, got " + std::to_string(token_ids.size()));
    }
    const Tensor mean_row = mean_row_for(token_ids);  // validates non-pad presence
    const Tensor pad_bias = pad_bias_for(token_ids);

    const Tensor emb = embedding_lookup(text_embed_, token_ids);
    const Tensor q = linear(emb, text_attn_.q.w, text_attn_.q.b);
    const Tensor k = linear(emb, text_attn_.k.w, text_attn_.k.b);
    const Tensor v = linear(emb, text_attn_.v.w, text_attn_.v.b);
    Tensor scores = scale(matmul(q, transpose2d(k)),
                          1.0f / std::sqrt(static_cast<float>(cfg_.d_word)));
    scores = add(scores, pad_bias);
    const Tensor ctx = matmul(softmax(scores, 1), v);
    Tensor h = add(emb, ctx);
    const Tensor f = linear(relu(linear(h, text_ffn1_.w, text_ffn1_.b)), text_ffn2_.w, text_ffn2_.b);
    h = add(h, f);

    TextEncoding out;
    out.l_word = h;
    out.l_sen = linear(matmul(mean_row, h), text_sen_.w, text_sen_.b);
    return out;
}

Tensor GraspClipModel::cog_apply(const CogP& p, const Tensor& x, const Tensor& skip,
                                 const Tensor& lsen_or_empty) const {
    Tensor gated = x;
    if (p.has_sen) {
        const int cx = x.shape[2];
        Tensor lt;
        if (lsen_or_empty.defined() && lsen_or_empty.shape.size() == 1) {
            // already projected (ones overrides on the language-free path)
            if (lsen_or_empty.shape[0] != cx) {
                throw DimensionError("cog: sentence gate width " +
                                     std::to_string(lsen_or_empty.shape[0]) +
                                     " does not match feature channels " + std::to_string(cx));
            }
            lt = lsen_or_empty;
        } else if (lsen_or_empty.defined()) {
            lt = linear(lsen_or_empty, p.sen_proj.w, p.sen_proj.b).reshaped({cx});
        } else {
            lt = Tensor::full({cx}, 1.0f);
        }
        gated = mul(x, lt);
    }
    const Tensor up = upsample_nearest(gated, 2);
    const Tensor cat = concat({up, skip}, 2);
    const Tensor t = conv_transpose2d(cat, p.up.w, p.up.b, 2);
    return conv2d(relu(t), p.post.w, p.post.b, 1, 1);
}

Tensor GraspClipModel::fag_attend(const FagP& p, const Tensor& x_map, const Tensor& l_word,
                                  const std::vector<int>& token_ids) const {
    const int h = x_map.shape[0], w = x_map.shape[1], c = x_map.shape[2];
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(cfg_.d_attn));
    const Tensor z = x_map.reshaped({h * w, c});

    const Tensor qs = linear(z, p.sa.q.w, p.sa.q.b);
    const Tensor ks = linear(z, p.sa.k.w, p.sa.k.b);
    const Tensor vs = linear(z, p.sa.v.w, p.sa.v.b);
    const Tensor sa = matmul(softmax(scale(matmul(qs, transpose2d(ks)), inv_sqrt_d), 1), vs);
    const Tensor z_sa = add(z, mul(sa, p.alpha));

    const Tensor lw = linear(l_word, p.word_proj.w, p.word_proj.b);
    const Tensor qc = linear(z_sa, p.ca.q.w, p.ca.q.b);
    const Tensor kc = linear(lw, p.ca.k.w, p.ca.k.b);
    const Tensor vc = linear(lw, p.ca.v.w, p.ca.v.b);
    Tensor cs = scale(matmul(qc, transpose2d(kc)), inv_sqrt_d);
    cs = add(cs, pad_bias_for(token_ids));  // pad tokens never attended
    const Tensor ca = matmul(softmax(cs, 1), vc);
    const Tensor ffn = linear(relu(linear(ca, p.ffn1.w, p.ffn1.b)), p.ffn2.w, p.ffn2.b);
    const Tensor z_ca = add(z_sa, mul(ffn, p.alpha));
    return z_ca.reshaped({h, w, c});
}

PredictionMaps GraspClipModel::decode_maps(const Tensor& v_fag) const {
    Tensor x = v_fag;
    for (int blk = 0; blk < 3; ++blk) {
        if (blk < 2) x = upsample_nearest(x, 2);
        const ConvP& r = bottlenecks_[static_cast<std::size_t>(blk) * 3];
        const ConvP& m = bottlenecks_[static_cast<std::size_t>(blk) * 3 + 1];
        const ConvP& e = bottlenecks_[static_cast<std::size_t>(blk) * 3 + 2];
        x = relu(conv2d(x, r.w, r.b, 1, 0));
        x = relu(conv2d(x, m.w, m.b, 1, 1));
        x = relu(conv2d(x, e.w, e.b, 1, 0));
    }
    const int S = cfg_.image_size;
    PredictionMaps maps;
    maps.m_q = sigmoid(conv2d(x, head_q_.w, head_q_.b, 1, 0)).reshaped({S, S});
    maps.m_theta = sigmoid(conv2d(x, head_theta_.w, head_theta_.b, 1, 0));
    maps.m_w = sigmoid(conv2d(x, head_w_.w, head_w_.b, 1, 0)).reshaped({S, S});
    return maps;
}

ForwardTrace GraspClipModel::trace(const Tensor& image, const std::vector<int>* token_ids,
                                   bool force_lsen_ones) const {
    ForwardTrace tr;
    tr.pyramid = visual_encoder(image);
    if (variant_ == Variant::Tag) token_ids = nullptr;  // no text path, ever

    Tensor l_word;
    Tensor l_sen;  // undefined on the language-free path
    if (token_ids) {
        const TextEncoding te = text_encoder(*token_ids);
        l_word = te.l_word;
        l_sen = te.l_sen;
    }
    tr.l_sen = l_sen;
    const std::vector<int> empty_ids;
    const std::vector<int>& ids = token_ids ? *token_ids : empty_ids;

    // A pre-projected all-ones sentence gate makes the Hadamard a bitwise
    // identity, matching the language-free path exactly.
    auto lsen_for = [&](int channels) -> Tensor {
        if (force_lsen_ones || !token_ids) return Tensor::full({channels}, 1.0f);
        return l_sen;
    };

    switch (variant_) {
        case Variant::GraspClip:
        case Variant::Tag: {
            tr.stage1 = cog_apply(cog1_, tr.pyramid.v_high, tr.pyramid.v_mid,
                                  lsen_for(cfg_.d_high));
            const Tensor v_ca =
                token_ids ? fag_attend(fag_, tr.stage1, l_word, ids) : tr.stage1;
            const Tensor up = upsample_nearest(v_ca, 2);
            const Tensor cat = concat({up, tr.pyramid.v_low}, 2);
            const Tensor f1 = relu(conv2d(cat, fag_tail_.fuse1.w, fag_tail_.fuse1.b, 1, 1));
            tr.v_fag = relu(conv2d(upsample_nearest(f1, 2), fag_tail_.fuse2.w,
                                   fag_tail_.fuse2.b, 1, 1));
            break;
        }
        case Variant::CogOnly: {
            tr.stage1 = cog_apply(cog1_, tr.pyramid.v_high, tr.pyramid.v_mid,
                                  lsen_for(cfg_.d_high));
            tr.v_fag = cog_apply(cog2_, tr.stage1, tr.pyramid.v_low, lsen_for(cfg_.d_attn));
            break;
        }
        case Variant::FagOnly: {
            tr.stage1 = cog_apply(cog1_, tr.pyramid.v_high, tr.pyramid.v_mid, Tensor());
            const Tensor v_ca =
                token_ids ? fag_attend(fag_, tr.stage1, l_word, ids) : tr.stage1;
            const Tensor up = upsample_nearest(v_ca, 2);
            const Tensor cat = concat({up, tr.pyramid.v_low}, 2);
            const Tensor f1 = relu(conv2d(cat, fag_tail_.fuse1.w, fag_tail_.fuse1.b, 1, 1));
            tr.v_fag = relu(conv2d(upsample_nearest(f1, 2), fag_tail_.fuse2.w,
                                   fag_tail_.fuse2.b, 1, 1));
            break;
        }
        case Variant::FagCog: {
            const Tensor xa =
                conv2d(tr.pyramid.v_high, fag_adapter_.w, fag_adapter_.b, 1, 0);
            const Tensor att = token_ids ? fag_attend(fag_, xa, l_word, ids) : xa;
            tr.stage1 = cog_apply(fagc_tail_, att, tr.pyramid.v_mid, Tensor());
            tr.v_fag = cog_apply(cog2_, tr.stage1, tr.pyramid.v_low, lsen_for(cfg_.d_attn));
            break;
        }
    }
    tr.maps = decode_maps(tr.v_fag);
    return tr;
}

PredictionMaps GraspClipModel::forward(const Tensor& image,
                                       const std::vector<int>& token_ids) const {
    return trace(image, &token_ids, false).maps;
}

PredictionMaps GraspClipModel::forward_tag(const Tensor& image) const {
    return trace(image, nullptr, false).maps;
}

Tensor GraspClipModel::fag_attention_map(const Tensor& x_map, const Tensor& l_word,
                                         const std::vector<int>& token_ids) const {
    return fag_attend(fag_, x_map, l_word, token_ids);
}

Tensor GraspClipModel::visual_embed(const Tensor& image) const {
    if (!has_pretrain_) throw ConfigError("model built without pretraining heads");
    const Pyramid pyr = visual_encoder(image);
    const int n = pyr.v_high.shape[0] * pyr.v_high.shape[1];
    const Tensor pool_row = Tensor::full({1, n}, 1.0f / static_cast<float>(n));
    const Tensor pooled = matmul(pool_row, pyr.v_high.reshaped({n, cfg_.d_high}));
    return linear(pooled, img_proj_.w, img_proj_.b);
}

Tensor GraspClipModel::text_embed(const std::vector<int>& token_ids) const {
    if (!has_pretrain_) throw ConfigError("model built without pretraining heads");
    const TextEncoding te = text_encoder(token_ids);
    return linear(te.l_sen, txt_proj_.w, txt_proj_.b);
}

std::vector<std::string> GraspClipModel::encoder_param_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const std::string& n = params_.name(i);
        if (n.rfind("visual.", 0) == 0 || n.rfind("text.", 0) == 0) names.push_back(n);
    }
    return names;
}

void GraspClipModel::save(const std::string& checkpoint_path) const {
    save_checkpoint(params_, checkpoint_path);
    std::ofstream out(checkpoint_path + ".json", std::ios::trunc);
    if (!out) throw IoError("cannot write '" + checkpoint_path + ".json'");
    out << cfg_.to_json_string(variant_to_string(variant_)) << "\n";
}

GraspClipModel GraspClipModel::load(const std::string& checkpoint_path) {
    std::ifstream in(checkpoint_path + ".json");
    if (!in) throw CheckpointError("missing model config '" + checkpoint_path + ".json'");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto [cfg, variant] = ModelConfig::from_json_string(text);
    GraspClipModel model(cfg, variant_from_string(variant), 0);
    model.load_weights(checkpoint_path);
    return model;
}

void GraspClipModel::load_weights(const std::string& checkpoint_path) {
    const auto stored = read_checkpoint(checkpoint_path);
    const auto it = stored.find("decoder.theta_head.w");
    if (it != stored.end()) {
        const Shape expect = {1, 1, 16, cfg_.bins};
        if (it->second.shape != expect) {
            throw CheckpointError(
                "checkpoint '" + checkpoint_path + "' M_theta head has shape " +
                shape_str(it->second.shape) + " but the configuration expects " +
                shape_str(expect) + " (bins mismatch)");
        }
    }
    load_checkpoint(params_, checkpoint_path);
}

std::vector<float> gaussian_blur(const std::vector<float>& map, int height, int width,
                                 float sigma) {
    if (sigma <= 0.0f) return map;
    const int radius = static_cast<int>(std::ceil(4.0f * sigma));
    std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] =
            std::exp(-0.5f * static_cast<float>(i) * static_cast<float>(i) / (sigma * sigma));
    }

    // Horizontal then vertical, renormalizing over in-bounds taps.
    std::vector<float> tmp(map.size()), out(map.size());
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc = 0.0, norm = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int xx = x + i;
                if (xx < 0 || xx >= width) continue;
                const double k = kernel[static_cast<std::size_t>(i + radius)];
                acc += k * map[static_cast<std::size_t>(y) * width + xx];
                norm += k;
            }
            tmp[static_cast<std::size_t>(y) * width + x] = static_cast<float>(acc / norm);
        }
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc = 0.0, norm = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int yy = y + i;
                if (yy < 0 || yy >= height) continue;
                const double k = kernel[static_cast<std::size_t>(i + radius)];
                acc += k * tmp[static_cast<std::size_t>(yy) * width + x];
                norm += k;
            }
            out[static_cast<std::size_t>(y) * width + x] = static_cast<float>(acc / norm);
        }
    }
    return out;
}

GraspRect decode_grasp(const PredictionMaps& maps, const ModelConfig& cfg) {
    const int S = cfg.image_size;
    if (maps.m_q.shape != Shape{S, S} || maps.m_w.shape != Shape{S, S} ||
        maps.m_theta.shape != Shape{S, S, cfg.bins}) {
        throw DimensionError("decode_grasp: prediction map shapes do not match the config");
    }
    const std::vector<float> q_blur = gaussian_blur(*maps.m_q.data, S, S, cfg.gaussian_sigma);
    const std::vector<float> w_blur = gaussian_blur(*maps.m_w.data, S, S, cfg.gaussian_sigma);

    // Row-major first occurrence wins ties.
    std::size_t best = 0;
    for (std::size_t i = 1; i < q_blur.size(); ++i) {
        if (q_blur[i] > q_blur[best]) best = i;
    }
    const int py = static_cast<int>(best) / S;
    const int px = static_cast<int>(best) % S;

    const float* theta_row = maps.m_theta.ptr() + best * static_cast<std::size_t>(cfg.bins);
    int best_bin = 0;
    for (int b = 1; b < cfg.bins; ++b) {
        if (theta_row[b] > theta_row[best_bin]) best_bin = b;
    }
    const OrientationBins bins{cfg.bins, 180.0f};

    GraspRect g;
    g.x = static_cast<float>(px);
    g.y = static_cast<float>(py);
    g.theta_deg = bin_decode(best_bin, bins);
    g.w = w_blur[best] * cfg.max_width();
    g.h = cfg.jaw_len();
    return g;
}

}  // namespace tog
