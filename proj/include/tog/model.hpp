#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tog/geometry.hpp"
#include "tog/optim.hpp"
#include "tog/tensor.hpp"

namespace tog {

struct ModelConfig {
    int image_size = 128;  // S, divisible by 64
    int d_low = 32, d_mid = 64, d_high = 64;
    int d_attn = 32;
    int d_word = 32;
    int d_fag = 16;
    int bins = 120;
    int t_max = 20;
    int vocab_size = 0;
    float w_max = 0.0f;       // 0: derived as S/4
    float h_px = 0.0f;        // 0: derived as 20*S/640
    float gaussian_sigma = 2.0f;

    float max_width() const { return w_max > 0.0f ? w_max : static_cast<float>(image_size) / 4.0f; }
    float jaw_len() const {
        if (h_px > 0.0f) return h_px;
        return std::max(20.0f * static_cast<float>(image_size) / 640.0f, 4.0f);
    }
    void validate() const;

    std::string to_json_string(const std::string& variant) const;
    static std::pair<ModelConfig, std::string> from_json_string(const std::string& text);
};

enum class Variant { GraspClip, Tag, CogOnly, FagOnly, FagCog };
Variant variant_from_string(const std::string& name);
std::string variant_to_string(Variant v);

struct PredictionMaps {
    Tensor m_q;      // [S,S]
    Tensor m_theta;  // [S,S,bins]
    Tensor m_w;      // [S,S]
};

struct Pyramid {
    Tensor v_low;   // S/8
    Tensor v_mid;   // S/32
    Tensor v_high;  // S/64
};

struct TextEncoding {
    Tensor l_word;  // [T_max, d_word]
    Tensor l_sen;   // [1, d_high]
};

/// Every intermediate a test may want to pin down.
struct ForwardTrace {
    Pyramid pyramid;
    Tensor l_sen;    // empty for the tag path
    Tensor stage1;   // S/16 fused map
    Tensor v_fag;    // S/4 fused map
    PredictionMaps maps;
};

/// The task-oriented grasp network. One class covers the full model and
/// its ablations; the variant decides which grounding stages exist and
/// which inputs they consume. Parameters are immutable during forward, so
/// inference is safe from multiple threads; training owns the instance.
class GraspClipModel {
  public:
    GraspClipModel(ModelConfig cfg, Variant variant, std::uint64_t init_seed,
                   bool with_pretrain_heads = false);

    const ModelConfig& config() const { return cfg_; }
    Variant variant() const { return variant_; }
    Params& params() { return params_; }
    const Params& params() const { return params_; }

    Pyramid visual_encoder(const Tensor& image) const;
    TextEncoding text_encoder(const std::vector<int>& token_ids) const;

    PredictionMaps forward(const Tensor& image, const std::vector<int>& token_ids) const;
    PredictionMaps forward_tag(const Tensor& image) const;

    /// Full trace. `token_ids == nullptr` selects the language-free path
    /// (all-ones sentence gate, no attention insertion). `force_lsen_ones`
    /// keeps the text pipeline running but pins the projected sentence
    /// embedding to ones, which at alpha == 0 must reproduce forward_tag
    /// bitwise.
    ForwardTrace trace(const Tensor& image, const std::vector<int>* token_ids,
                       bool force_lsen_ones = false) const;

    /// Attention stack alone (z_cog -> z_ca reshaped), before the fusion
    /// tail. Exposed so gating and symmetry properties can be probed on
    /// constructed inputs.
    Tensor fag_attention_map(const Tensor& x_map, const Tensor& l_word,
                             const std::vector<int>& token_ids) const;

    /// Contrastive-pretraining heads (registered only when requested).
    Tensor visual_embed(const Tensor& image) const;
    Tensor text_embed(const std::vector<int>& token_ids) const;

    /// Parameter names of the two encoders (freeze set / encoder checkpoints).
    std::vector<std::string> encoder_param_names() const;

    void save(const std::string& checkpoint_path) const;
    static GraspClipModel load(const std::string& checkpoint_path);
    /// Restores weights from `checkpoint_path` into this model, validating
    /// shapes; a bins mismatch is reported against the M_theta head.
    void load_weights(const std::string& checkpoint_path);

  private:
    struct LinearP {
        Tensor w, b;
    };
    struct ConvP {
        Tensor w, b;
    };
    struct AttnP {
        LinearP q, k, v;
    };
    struct FagP {
        AttnP sa, ca;
        LinearP word_proj;
        LinearP ffn1, ffn2;
        Tensor alpha;
    };
    struct CogP {
        LinearP sen_proj;  // d_high -> input channels (unused in the
                           // language-free stage-1 of fag_only)
        ConvP up;          // transposed conv, stride 2
        ConvP post;        // 3x3
        bool has_sen = true;
    };
    struct FineFagTailP {
        ConvP fuse1;  // 3x3 after the v_low concat
        ConvP fuse2;  // 3x3 to d_fag
    };

    Tensor cog_apply(const CogP& p, const Tensor& x, const Tensor& skip,
                     const Tensor& lsen_or_empty) const;
    Tensor fag_attend(const FagP& p, const Tensor& x_map, const Tensor& l_word,
                      const std::vector<int>& token_ids) const;
    PredictionMaps decode_maps(const Tensor& v_fag) const;

    ModelConfig cfg_;
    Variant variant_;
    Params params_;

    std::vector<ConvP> trunk_;          // 6 stages
    Tensor text_embed_;                 // [V, d_word]
    AttnP text_attn_;
    LinearP text_ffn1_, text_ffn2_;
    LinearP text_sen_;                  // d_word -> d_high

    CogP cog1_;                         // coarse stage (graspclip/tag/cog_only/fag_only)
    CogP cog2_;                         // fine COG (cog_only/fag_cog)
    FagP fag_;                          // attention stack
    FineFagTailP fag_tail_;             // fine FAG fusion (graspclip/tag/fag_only)
    ConvP fag_adapter_;                 // 1x1 d_high -> d_attn (fag_cog)
    CogP fagc_tail_;                    // coarse FAG fusion tail (fag_cog)

    std::vector<ConvP> bottlenecks_;    // 3 blocks
    ConvP head_q_, head_theta_, head_w_;

    bool has_pretrain_ = false;
    LinearP img_proj_, txt_proj_;
};

/// Gaussian-smoothed top-1 decode: argmax of blurred M_q (row-major first
/// occurrence on ties), theta from the bin argmax at the peak, width from
/// blurred M_w scaled by W_max, h from the config.
GraspRect decode_grasp(const PredictionMaps& maps, const ModelConfig& cfg);

/// Separable Gaussian blur with kernel truncated at 4*sigma and
/// renormalized at the borders (a constant map stays constant).
std::vector<float> gaussian_blur(const std::vector<float>& map, int height, int width, float sigma);

}  // namespace tog
