#pragma once

#include "common.hpp"
#include "gem.hpp"
#include "tokenizer.hpp"

#include <opencv2/core.hpp>

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fade {

enum class Activation { gelu, quick_gelu };

struct BackboneConfig {
    std::string weights_id;
    int patch_size = 0;
    int embed_dim = 0;  // joint vision-language dimension
    int native_size = 0;
    int layer_count = 0;  // vision transformer blocks
};

struct TransformerBlock {
    Vec ln1_g, ln1_b;
    Mat attn_in_w;  // (3d x d), rows stacked q,k,v
    Vec attn_in_b;
    Mat attn_out_w;  // (d x d)
    Vec attn_out_b;
    Vec ln2_g, ln2_b;
    Mat mlp_fc_w;  // (hidden x d)
    Vec mlp_fc_b;
    Mat mlp_proj_w;  // (d x hidden)
    Vec mlp_proj_b;
};

struct VisionTower {
    int width = 0;
    int heads = 0;
    Mat conv_w;  // (width x 3*p*p)
    Vec class_embedding;
    Mat positional_embedding;  // ((1+n^2) x width) at native size
    Vec ln_pre_g, ln_pre_b;
    std::vector<TransformerBlock> blocks;
    Vec ln_post_g, ln_post_b;
    Mat proj;  // (width x embed_dim)
};

struct TextTower {
    int width = 0;
    int heads = 0;
    Mat token_embedding;       // (vocab x width)
    Mat positional_embedding;  // (context x width)
    std::vector<TransformerBlock> blocks;
    Vec ln_final_g, ln_final_b;
    Mat projection;  // (width x embed_dim)
};

struct PatchEmbeddingGrid {
    int side = 0;
    Mat embeddings;  // (side*side x dim), unit rows, row-major patch order

    int dim() const { return static_cast<int>(embeddings.cols()); }
};

// Per-layer intermediates retained on request (tests, oracles). Entry l holds
// the token matrix entering frozen block l.
struct LayerArtifacts {
    std::vector<Mat> block_inputs;
};

struct ImageEncoding {
    Vec cls_embedding;  // unit norm, joint space
    PatchEmbeddingGrid patch_grid;
    int scale = 0;
    std::shared_ptr<const LayerArtifacts> artifacts;
};

struct GemEncoding {
    PatchEmbeddingGrid patch_grid;
    int scale = 0;
};

struct EncodeOptions {
    bool want_clip = true;
    const GemConfig* gem = nullptr;  // non-null: also compute the parallel pathway
    bool keep_artifacts = false;
    // Test knob: run positional interpolation even when scale == native.
    bool force_pos_interpolation = false;
};

struct EncodeResult {
    std::optional<ImageEncoding> clip;
    std::optional<GemEncoding> gem;
};

// Bicubic resize of the non-CLS positional embeddings from a (from x from)
// grid to (to x to); the CLS position passes through untouched. Row 0 of
// `pos` is the CLS position.
Mat interpolate_positional(const Mat& pos, int from_side, int to_side);

// Frozen pretrained vision-language encoder. Immutable after load; encode
// calls only touch locals, so concurrent use of one instance is safe.
class Backbone {
  public:
    static Backbone load(const std::string& weights_path);

    const BackboneConfig& config() const { return config_; }
    const VisionTower& visual() const { return visual_; }
    const TextTower& text() const { return text_; }
    const Tokenizer& tokenizer() const { return tokenizer_; }
    const std::string& weights_sha256() const { return weights_sha256_; }
    const std::array<float, 3>& image_mean() const { return image_mean_; }
    const std::array<float, 3>& image_std() const { return image_std_; }

    // Unit-norm joint-space embedding of a prompt. Deterministic.
    Vec encode_text(const std::string& prompt) const;

    // Runs the frozen tower (and optionally the parallel pathway) at the
    // requested input size. `image` is 8-bit BGR or grayscale.
    EncodeResult encode(const cv::Mat& image, int scale, const EncodeOptions& options) const;

    ImageEncoding encode_image(const cv::Mat& image, int scale) const;
    GemEncoding gem_encode(const cv::Mat& image, int scale, const GemConfig& config) const;

    int grid_side(int scale) const;
    void check_scale(int scale) const;

    // (3*p*p) patch feature matrix in conv layout, exposed for tests.
    Mat patchify(const cv::Mat& image, int scale) const;

  private:
    BackboneConfig config_;
    VisionTower visual_;
    TextTower text_;
    Tokenizer tokenizer_;
    Activation activation_ = Activation::gelu;
    std::array<float, 3> image_mean_{};
    std::array<float, 3> image_std_{};
    std::string weights_sha256_;

    Mat run_blocks(Mat x, const std::vector<TransformerBlock>& blocks, int heads, bool causal,
                   const EncodeOptions* options, Mat* gem_sum, LayerArtifacts* artifacts) const;
};

}  // namespace fade
