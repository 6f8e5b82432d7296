#include "backbone.hpp"

#include "tensor_file.hpp"

#include <opencv2/imgproc.hpp>

#include <cmath>

namespace fade {

namespace {

constexpr float kLayerNormEps = 1e-5f;

Mat layer_norm(const Mat& x, const Vec& gamma, const Vec& beta) {
    Mat out(x.rows(), x.cols());
    const Eigen::Index d = x.cols();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double mean = x.row(i).cast<double>().sum() / static_cast<double>(d);
        double var = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            double c = static_cast<double>(x(i, j)) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        float inv = static_cast<float>(1.0 / std::sqrt(var + kLayerNormEps));
        float m = static_cast<float>(mean);
        out.row(i) = ((x.row(i).array() - m) * inv) * gamma.transpose().array() +
                     beta.transpose().array();
    }
    return out;
}

Vec layer_norm_row(const Vec& x, const Vec& gamma, const Vec& beta) {
    Mat m(1, x.size());
    m.row(0) = x.transpose();
    return layer_norm(m, gamma, beta).row(0);
}

void apply_activation(Mat& x, Activation act) {
    if (act == Activation::gelu) {
        constexpr float kInvSqrt2 = 0.7071067811865475f;
        x = x.unaryExpr([](float v) { return 0.5f * v * (1.0f + std::erf(v * kInvSqrt2)); });
    } else {
        x = x.unaryExpr([](float v) { return v / (1.0f + std::exp(-1.702f * v)); });
    }
}

// Standard multi-head attention with optional causal masking.
Mat attention(const Mat& x, const TransformerBlock& b, int heads, bool causal) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    const Eigen::Index dh = d / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    Mat qkv = x * b.attn_in_w.transpose();
    qkv.rowwise() += b.attn_in_b.transpose();

    Mat concat(n, d);
    Mat logits(n, n);
    for (int h = 0; h < heads; ++h) {
        auto q = qkv.middleCols(h * dh, dh);
        auto k = qkv.middleCols(d + h * dh, dh);
        auto v = qkv.middleCols(2 * d + h * dh, dh);
        logits.noalias() = scale * (q * k.transpose());
        if (causal) {
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = i + 1; j < n; ++j) logits(i, j) = -1e30f;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            float m = logits.row(i).maxCoeff();
            logits.row(i) = (logits.row(i).array() - m).exp();
            double denom = logits.row(i).cast<double>().sum();
            logits.row(i) /= static_cast<float>(denom);
        }
        concat.middleCols(h * dh, dh).noalias() = logits * v;
    }
    Mat out = concat * b.attn_out_w.transpose();
    out.rowwise() += b.attn_out_b.transpose();
    return out;
}

TransformerBlock load_block(const TensorStore& store, const std::string& prefix) {
    TransformerBlock b;
    b.ln1_g = store.vector(prefix + ".ln_1.weight");
    b.ln1_b = store.vector(prefix + ".ln_1.bias");
    b.attn_in_w = store.matrix(prefix + ".attn.in_proj_weight");
    b.attn_in_b = store.vector(prefix + ".attn.in_proj_bias");
    b.attn_out_w = store.matrix(prefix + ".attn.out_proj.weight");
    b.attn_out_b = store.vector(prefix + ".attn.out_proj.bias");
    b.ln2_g = store.vector(prefix + ".ln_2.weight");
    b.ln2_b = store.vector(prefix + ".ln_2.bias");
    b.mlp_fc_w = store.matrix(prefix + ".mlp.c_fc.weight");
    b.mlp_fc_b = store.vector(prefix + ".mlp.c_fc.bias");
    b.mlp_proj_w = store.matrix(prefix + ".mlp.c_proj.weight");
    b.mlp_proj_b = store.vector(prefix + ".mlp.c_proj.bias");
    return b;
}

}  // namespace

Mat interpolate_positional(const Mat& pos, int from_side, int to_side) {
    FADE_CHECK(pos.rows() == 1 + static_cast<Eigen::Index>(from_side) * from_side,
               ErrorCode::precondition, "positional table has %ld rows, expected 1+%d^2",
               static_cast<long>(pos.rows()), from_side);
    Mat out(1 + static_cast<Eigen::Index>(to_side) * to_side, pos.cols());
    out.row(0) = pos.row(0);
    cv::Mat plane(from_side, from_side, CV_32F);
    cv::Mat resized;
    for (Eigen::Index c = 0; c < pos.cols(); ++c) {
        for (int i = 0; i < from_side * from_side; ++i)
            plane.at<float>(i / from_side, i % from_side) = pos(1 + i, c);
        cv::resize(plane, resized, cv::Size(to_side, to_side), 0, 0, cv::INTER_CUBIC);
        for (int i = 0; i < to_side * to_side; ++i)
            out(1 + i, c) = resized.at<float>(i / to_side, i % to_side);
    }
    return out;
}

Backbone Backbone::load(const std::string& weights_path) {
    TensorStore store = TensorStore::read(weights_path);
    const auto& meta = store.model_meta();

    Backbone bb;
    bb.config_.weights_id = meta.value("weights_id", "unknown");
    bb.config_.patch_size = meta.at("patch_size").get<int>();
    bb.config_.embed_dim = meta.at("embed_dim").get<int>();
    bb.config_.native_size = meta.at("native_size").get<int>();
    bb.config_.layer_count = meta.at("vision_layers").get<int>();
    FADE_CHECK(bb.config_.patch_size > 0 && bb.config_.layer_count >= 1 &&
                   bb.config_.native_size % bb.config_.patch_size == 0,
               ErrorCode::bad_weights, "%s: inconsistent model geometry", weights_path.c_str());

    bb.visual_.width = meta.at("vision_width").get<int>();
    bb.visual_.heads = meta.at("vision_heads").get<int>();
    FADE_CHECK(bb.visual_.width % bb.visual_.heads == 0, ErrorCode::bad_weights,
               "vision heads must divide width");
    bb.visual_.conv_w = store.matrix("visual.conv1.weight");
    bb.visual_.class_embedding = store.vector("visual.class_embedding");
    bb.visual_.positional_embedding = store.matrix("visual.positional_embedding");
    bb.visual_.ln_pre_g = store.vector("visual.ln_pre.weight");
    bb.visual_.ln_pre_b = store.vector("visual.ln_pre.bias");
    for (int i = 0; i < bb.config_.layer_count; ++i)
        bb.visual_.blocks.push_back(
            load_block(store, "visual.transformer.resblocks." + std::to_string(i)));
    bb.visual_.ln_post_g = store.vector("visual.ln_post.weight");
    bb.visual_.ln_post_b = store.vector("visual.ln_post.bias");
    bb.visual_.proj = store.matrix("visual.proj");

    int native_side = bb.config_.native_size / bb.config_.patch_size;
    FADE_CHECK(bb.visual_.positional_embedding.rows() == 1 + native_side * native_side,
               ErrorCode::bad_weights, "positional table does not match native grid");
    FADE_CHECK(bb.visual_.proj.cols() == bb.config_.embed_dim, ErrorCode::bad_weights,
               "visual projection does not match embed_dim");

    bb.text_.width = meta.at("text_width").get<int>();
    bb.text_.heads = meta.at("text_heads").get<int>();
    int text_layers = meta.at("text_layers").get<int>();
    bb.text_.token_embedding = store.matrix("token_embedding.weight");
    bb.text_.positional_embedding = store.matrix("positional_embedding");
    for (int i = 0; i < text_layers; ++i)
        bb.text_.blocks.push_back(load_block(store, "transformer.resblocks." + std::to_string(i)));
    bb.text_.ln_final_g = store.vector("ln_final.weight");
    bb.text_.ln_final_b = store.vector("ln_final.bias");
    bb.text_.projection = store.matrix("text_projection");
    FADE_CHECK(bb.text_.projection.cols() == bb.config_.embed_dim, ErrorCode::bad_weights,
               "text projection does not match embed_dim");

    bb.tokenizer_ = Tokenizer::from_meta(store.tokenizer_meta());
    FADE_CHECK(bb.text_.positional_embedding.rows() >= bb.tokenizer_.context_length(),
               ErrorCode::bad_weights, "text positional table shorter than context length");
    FADE_CHECK(bb.text_.token_embedding.rows() >= bb.tokenizer_.vocab_size(),
               ErrorCode::bad_weights, "token embedding smaller than tokenizer vocab");

    std::string act = meta.value("activation", "gelu");
    bb.activation_ = act == "quick_gelu" ? Activation::quick_gelu : Activation::gelu;
    auto mean = meta.value("image_mean", std::vector<float>{0.48145466f, 0.4578275f, 0.40821073f});
    auto stdv = meta.value("image_std", std::vector<float>{0.26862954f, 0.26130258f, 0.27577711f});
    FADE_CHECK(mean.size() == 3 && stdv.size() == 3, ErrorCode::bad_weights,
               "image_mean/image_std must have 3 entries");
    std::copy(mean.begin(), mean.end(), bb.image_mean_.begin());
    std::copy(stdv.begin(), stdv.end(), bb.image_std_.begin());
    bb.weights_sha256_ = store.data_sha256();

    log_info("loaded backbone %s (patch %d, native %d, %d layers, width %d, joint dim %d)",
             bb.config_.weights_id.c_str(), bb.config_.patch_size, bb.config_.native_size,
             bb.config_.layer_count, bb.visual_.width, bb.config_.embed_dim);
    return bb;
}

int Backbone::grid_side(int scale) const {
    check_scale(scale);
    return scale / config_.patch_size;
}

void Backbone::check_scale(int scale) const {
    FADE_CHECK(scale > 0 && scale % config_.patch_size == 0, ErrorCode::precondition,
               "input size %d is not divisible by patch size %d", scale, config_.patch_size);
}

Mat Backbone::run_blocks(Mat x, const std::vector<TransformerBlock>& blocks, int heads,
                         bool causal, const EncodeOptions* options, Mat* gem_sum,
                         LayerArtifacts* artifacts) const {
    const int layer_count = static_cast<int>(blocks.size());
    int gem_start = layer_count;
    if (options && options->gem)
        gem_start = layer_count - options->gem->resolved_span(layer_count);

    for (int l = 0; l < layer_count; ++l) {
        const TransformerBlock& b = blocks[static_cast<size_t>(l)];
        if (artifacts) artifacts->block_inputs.push_back(x);
        Mat normed = layer_norm(x, b.ln1_g, b.ln1_b);
        if (gem_sum && l >= gem_start) {
            Mat g = gem_block(normed, b.attn_in_w, b.attn_in_b, heads, *options->gem);
            g = g * b.attn_out_w.transpose();
            g.rowwise() += b.attn_out_b.transpose();
            *gem_sum += g;
        }
        x += attention(normed, b, heads, causal);
        Mat h = layer_norm(x, b.ln2_g, b.ln2_b) * b.mlp_fc_w.transpose();
        h.rowwise() += b.mlp_fc_b.transpose();
        apply_activation(h, activation_);
        Mat m = h * b.mlp_proj_w.transpose();
        m.rowwise() += b.mlp_proj_b.transpose();
        x += m;
    }
    return x;
}

Mat Backbone::patchify(const cv::Mat& image, int scale) const {
    FADE_CHECK(!image.empty(), ErrorCode::precondition, "empty image");
    cv::Mat bgr;
    if (image.type() == CV_8UC3)
        bgr = image;
    else if (image.type() == CV_8UC1)
        cv::cvtColor(image, bgr, cv::COLOR_GRAY2BGR);
    else
        raise(ErrorCode::precondition, "unsupported image type (want 8-bit BGR or grayscale)");

    cv::Mat resized;
    int interp = scale >= bgr.cols ? cv::INTER_CUBIC : cv::INTER_AREA;
    cv::resize(bgr, resized, cv::Size(scale, scale), 0, 0, interp);

    cv::Mat rgb;
    cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
    rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);

    const int p = config_.patch_size;
    const int side = scale / p;
    Mat patches(static_cast<Eigen::Index>(side) * side, 3 * p * p);
    for (int gy = 0; gy < side; ++gy) {
        for (int gx = 0; gx < side; ++gx) {
            Eigen::Index row = static_cast<Eigen::Index>(gy) * side + gx;
            for (int c = 0; c < 3; ++c) {
                float mean = image_mean_[static_cast<size_t>(c)];
                float stdv = image_std_[static_cast<size_t>(c)];
                for (int iy = 0; iy < p; ++iy) {
                    const cv::Vec3f* line = rgb.ptr<cv::Vec3f>(gy * p + iy);
                    for (int ix = 0; ix < p; ++ix) {
                        float v = (line[gx * p + ix][c] - mean) / stdv;
                        patches(row, (c * p + iy) * p + ix) = v;
                    }
                }
            }
        }
    }
    return patches;
}

EncodeResult Backbone::encode(const cv::Mat& image, int scale, const EncodeOptions& options) const {
    check_scale(scale);
    const int side = scale / config_.patch_size;
    const int native_side = config_.native_size / config_.patch_size;

    Mat patches = patchify(image, scale);
    Mat tokens = patches * visual_.conv_w.transpose();

    Mat x(1 + tokens.rows(), visual_.width);
    x.row(0) = visual_.class_embedding.transpose();
    x.bottomRows(tokens.rows()) = tokens;

    if (side == native_side && !options.force_pos_interpolation) {
        x += visual_.positional_embedding;
    } else {
        x += interpolate_positional(visual_.positional_embedding, native_side, side);
    }

    x = layer_norm(x, visual_.ln_pre_g, visual_.ln_pre_b);

    Mat gem_sum;
    if (options.gem) {
        options.gem->validate(config_.layer_count);
        gem_sum = Mat::Zero(x.rows(), x.cols());
    }
    auto artifacts = options.keep_artifacts ? std::make_shared<LayerArtifacts>() : nullptr;

    x = run_blocks(std::move(x), visual_.blocks, visual_.heads, /*causal=*/false, &options,
                   options.gem ? &gem_sum : nullptr, artifacts.get());

    EncodeResult result;
    if (options.want_clip) {
        ImageEncoding enc;
        Vec cls_pre = layer_norm_row(x.row(0), visual_.ln_post_g, visual_.ln_post_b);
        enc.cls_embedding = normalized(visual_.proj.transpose() * cls_pre);
        Mat grid = layer_norm(x.bottomRows(x.rows() - 1), visual_.ln_post_g, visual_.ln_post_b) *
                   visual_.proj;
        normalize_rows(grid);
        enc.patch_grid = PatchEmbeddingGrid{side, std::move(grid)};
        enc.scale = scale;
        enc.artifacts = artifacts;
        result.clip = std::move(enc);
    }
    if (options.gem) {
        GemEncoding enc;
        Mat grid = layer_norm(gem_sum.bottomRows(gem_sum.rows() - 1), visual_.ln_post_g,
                              visual_.ln_post_b) *
                   visual_.proj;
        normalize_rows(grid);
        enc.patch_grid = PatchEmbeddingGrid{side, std::move(grid)};
        enc.scale = scale;
        result.gem = std::move(enc);
    }
    return result;
}

ImageEncoding Backbone::encode_image(const cv::Mat& image, int scale) const {
    EncodeOptions options;
    return *encode(image, scale, options).clip;
}

GemEncoding Backbone::gem_encode(const cv::Mat& image, int scale, const GemConfig& config) const {
    EncodeOptions options;
    options.want_clip = false;
    options.gem = &config;
    return *encode(image, scale, options).gem;
}

Vec Backbone::encode_text(const std::string& prompt) const {
    std::vector<int32_t> ids = tokenizer_.encode(prompt);
    const int n = static_cast<int>(ids.size());

    Mat x(n, text_.width);
    for (int t = 0; t < n; ++t)
        x.row(t) = text_.token_embedding.row(ids[static_cast<size_t>(t)]) +
                   text_.positional_embedding.row(t);

    x = run_blocks(std::move(x), text_.blocks, text_.heads, /*causal=*/true, nullptr, nullptr,
                   nullptr);
    x = layer_norm(x, text_.ln_final_g, text_.ln_final_b);

    int eot = Tokenizer::eot_position(ids, tokenizer_.eot_id());
    Vec v = text_.projection.transpose() * Vec(x.row(eot));
    FADE_CHECK(v.allFinite(), ErrorCode::internal, "text embedding is not finite");
    return normalized(v);
}

}  // namespace fade
