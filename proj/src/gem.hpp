#pragma once

#include "common.hpp"

#include <string>
#include <vector>

namespace fade {

enum class AttentionKind { qq, kk, vv };

std::string to_string(AttentionKind k);
AttentionKind attention_kind_from_string(const std::string& s);

// Configuration of the self-self attention pathway that runs parallel to the
// frozen transformer blocks.
struct GemConfig {
    // Number of final transformer blocks that get a parallel block.
    // 0 means "default": the final half of the blocks.
    int layer_span = 0;
    std::vector<AttentionKind> kinds = {AttentionKind::qq, AttentionKind::kk, AttentionKind::vv};
    bool normalize_tokens = true;
    // Multiplier inside the softmax. 0 means 1/sqrt(d_head).
    float scale_factor = 0.0f;

    int resolved_span(int layer_count) const;
    float resolved_scale(int d_head) const;
    void validate(int layer_count) const;
};

// softmax(project(tokens) project(tokens)^T) * project(tokens), computed per
// head with heads concatenated. `proj_w` is (d x d) in out-rows layout, so a
// token projects as t * proj_w^T + proj_b. When `normalize_tokens` is set the
// per-head projected tokens are L2-normalized before the similarity product;
// the value side always uses the raw projected tokens.
//
// Token counts <= 128 take a scalar double-precision path with compensated
// reductions (deterministic and insensitive to row order); larger inputs use
// blocked float GEMMs.
Mat self_self_attention(const Mat& tokens, const Mat& proj_w, const Vec& proj_b,
                        float scale_factor, int heads, bool normalize_tokens);

// One parallel block: arithmetic mean of the self-self attention outputs over
// the configured kinds. No feed-forward, no residual. `attn_in_w`/`attn_in_b`
// are the frozen block's stacked q/k/v projections ((3d x d), (3d)).
Mat gem_block(const Mat& tokens, const Mat& attn_in_w, const Vec& attn_in_b, int heads,
              const GemConfig& config);

}  // namespace fade
