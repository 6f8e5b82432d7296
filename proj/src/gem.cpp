#include "gem.hpp"

#include <cmath>

namespace fade {

namespace {

constexpr int kExactPathMaxTokens = 128;

// Scalar double path with compensated reductions. Row order of the result
// does not perturb low bits, which keeps permutation equivariance exact for
// test-sized inputs.
MatD self_self_head_exact(const MatD& x, double scale, bool normalize) {
    const Eigen::Index n = x.rows();
    MatD sim = x;
    if (normalize) {
        for (Eigen::Index i = 0; i < n; ++i) {
            KahanSum sq;
            for (Eigen::Index c = 0; c < x.cols(); ++c) sq.add(x(i, c) * x(i, c));
            double nrm = std::sqrt(sq.value());
            if (nrm > 0.0) sim.row(i) /= nrm;
        }
    }
    MatD logits(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            KahanSum s;
            for (Eigen::Index c = 0; c < x.cols(); ++c) s.add(sim(i, c) * sim(j, c));
            logits(i, j) = scale * s.value();
        }
    }
    MatD out(n, x.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        double m = logits.row(i).maxCoeff();
        std::vector<double> w(static_cast<size_t>(n));
        KahanSum denom;
        for (Eigen::Index j = 0; j < n; ++j) {
            w[static_cast<size_t>(j)] = std::exp(logits(i, j) - m);
            denom.add(w[static_cast<size_t>(j)]);
        }
        double d = denom.value();
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            KahanSum acc;
            for (Eigen::Index j = 0; j < n; ++j)
                acc.add(w[static_cast<size_t>(j)] / d * x(j, c));
            out(i, c) = acc.value();
        }
    }
    return out;
}

Mat self_self_head_fast(const Mat& x, float scale, bool normalize) {
    Mat sim = x;
    if (normalize) normalize_rows(sim);
    Mat logits = scale * (sim * sim.transpose());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        float m = logits.row(i).maxCoeff();
        logits.row(i) = (logits.row(i).array() - m).exp();
        double denom = logits.row(i).cast<double>().sum();
        logits.row(i) /= static_cast<float>(denom);
    }
    return logits * x;
}

}  // namespace

std::string to_string(AttentionKind k) {
    switch (k) {
        case AttentionKind::qq: return "qq";
        case AttentionKind::kk: return "kk";
        case AttentionKind::vv: return "vv";
    }
    return "?";
}

AttentionKind attention_kind_from_string(const std::string& s) {
    if (s == "qq") return AttentionKind::qq;
    if (s == "kk") return AttentionKind::kk;
    if (s == "vv") return AttentionKind::vv;
    raise(ErrorCode::invalid_argument, "unknown attention kind: %s (expected qq|kk|vv)", s.c_str());
}

int GemConfig::resolved_span(int layer_count) const {
    int span = layer_span > 0 ? layer_span : (layer_count + 1) / 2;
    return std::min(span, layer_count);
}

float GemConfig::resolved_scale(int d_head) const {
    return scale_factor > 0.0f ? scale_factor : 1.0f / std::sqrt(static_cast<float>(d_head));
}

void GemConfig::validate(int layer_count) const {
    FADE_CHECK(!kinds.empty(), ErrorCode::invalid_argument, "gem.kinds must be non-empty");
    FADE_CHECK(layer_span >= 0 && layer_span <= layer_count, ErrorCode::invalid_argument,
               "gem.layer_span %d out of range (backbone has %d layers)", layer_span, layer_count);
    FADE_CHECK(scale_factor >= 0.0f, ErrorCode::invalid_argument,
               "gem.scale_factor must be positive (or 0 for the default)");
}

Mat self_self_attention(const Mat& tokens, const Mat& proj_w, const Vec& proj_b,
                        float scale_factor, int heads, bool normalize_tokens) {
    const Eigen::Index n = tokens.rows();
    const Eigen::Index d = tokens.cols();
    FADE_CHECK(n >= 1, ErrorCode::precondition, "self_self_attention needs at least one token");
    FADE_CHECK(proj_w.rows() == d && proj_w.cols() == d, ErrorCode::precondition,
               "projection shape mismatch: %ldx%ld for d=%ld", static_cast<long>(proj_w.rows()),
               static_cast<long>(proj_w.cols()), static_cast<long>(d));
    FADE_CHECK(heads >= 1 && d % heads == 0, ErrorCode::precondition,
               "head count %d does not divide d=%ld", heads, static_cast<long>(d));
    FADE_CHECK(tokens.allFinite() && proj_w.allFinite(), ErrorCode::precondition,
               "self_self_attention: non-finite input");

    Mat projected = tokens * proj_w.transpose();
    if (proj_b.size() > 0) projected.rowwise() += proj_b.transpose();

    const Eigen::Index dh = d / heads;
    const float scale = scale_factor;
    Mat out(n, d);
    if (n <= kExactPathMaxTokens) {
        for (int h = 0; h < heads; ++h) {
            MatD xh = projected.middleCols(h * dh, dh).cast<double>();
            out.middleCols(h * dh, dh) =
                self_self_head_exact(xh, scale, normalize_tokens).cast<float>();
        }
    } else {
        for (int h = 0; h < heads; ++h) {
            Mat xh = projected.middleCols(h * dh, dh);
            out.middleCols(h * dh, dh) = self_self_head_fast(xh, scale, normalize_tokens);
        }
    }
    return out;
}

Mat gem_block(const Mat& tokens, const Mat& attn_in_w, const Vec& attn_in_b, int heads,
              const GemConfig& config) {
    const Eigen::Index d = tokens.cols();
    FADE_CHECK(attn_in_w.rows() == 3 * d && attn_in_w.cols() == d, ErrorCode::precondition,
               "stacked qkv projection must be (3d x d)");
    FADE_CHECK(!config.kinds.empty(), ErrorCode::precondition, "no attention kinds configured");
    float scale = config.resolved_scale(static_cast<int>(d) / heads);

    Mat acc = Mat::Zero(tokens.rows(), d);
    for (AttentionKind kind : config.kinds) {
        int slot = kind == AttentionKind::qq ? 0 : (kind == AttentionKind::kk ? 1 : 2);
        Mat w = attn_in_w.middleRows(slot * d, d);
        Vec b = attn_in_b.size() > 0 ? Vec(attn_in_b.segment(slot * d, d)) : Vec();
        acc += self_self_attention(tokens, w, b, scale, heads, config.normalize_tokens);
    }
    return acc / static_cast<float>(config.kinds.size());
}

}  // namespace fade
