#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rockseg/core/image.hpp"
#include "rockseg/model/config.hpp"
#include "rockseg/nn/attention2d.hpp"
#include "rockseg/nn/ops.hpp"
#include "rockseg/prompts.hpp"
#include "rockseg/train/loss.hpp"

namespace rockseg {

namespace detail {

// Per-channel statistics the published base model was trained with
// (pixel values on a 0..255 scale).
inline constexpr double pretrained_pixel_mean[3] = {123.675, 116.28, 103.53};
inline constexpr double pretrained_pixel_std[3] = {58.395, 57.12, 57.375};

inline constexpr double two_pi = 6.28318530717958647692;

} // namespace detail

// Promptable segmentation model: frozen-capable ViT image encoder, box
// prompt encoder, and a trainable two-way-attention mask decoder.
template <typename T = float>
class Model {
public:
    ModelConfig config;
    nn::ParameterStore<T> params;

    // ---- construction -----------------------------------------------------

    // Builds the parameter set; toy backbones are randomly initialized from
    // the seed, the pretrained backbone is created empty for the weight
    // adapter to fill.
    static Model build_uninitialized(const ModelConfig& cfg) {
        cfg.validate();
        Model m;
        m.config = cfg;
        m.create_parameters();
        return m;
    }

    static Model build_toy(const ModelConfig& cfg, std::uint64_t seed) {
        Model m = build_uninitialized(cfg);
        m.init_random(seed);
        return m;
    }

    // ---- trainability -----------------------------------------------------

    // Decoder trainable, image and prompt encoders frozen. Idempotent.
    void freeze_encoders() {
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            if (p.buffer) continue;
            const bool encoder = p.name.starts_with("image_encoder.") ||
                                 p.name.starts_with("prompt_encoder.");
            p.trainable = !encoder;
        }
    }

    void set_all_trainable(bool trainable) {
        for (std::size_t i = 0; i < params.size(); ++i)
            if (!params[i].buffer) params[i].trainable = trainable;
    }

    std::size_t count_trainable() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params[i].trainable) n += params[i].value.numel();
        return n;
    }

    std::size_t count_parameters() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < params.size(); ++i) n += params[i].value.numel();
        return n;
    }

    Model clone() const {
        Model m;
        m.config = config;
        m.params = params.clone();
        return m;
    }

    // ---- input handling ---------------------------------------------------

    // Normalized [0,1] patch -> encoder input tensor [Cin, S, S]; resizes to
    // the encoder's internal resolution and replicates/standardizes channels
    // for the pretrained backbone.
    nn::Tensor<T> input_tensor(const Image<float>& patch) const {
        const int p = config.patch_input_size;
        require(patch.height() == p && patch.width() == p, ErrorKind::validation,
                "encode_image: patch must be patch_input_size x patch_input_size");
        const int s = config.encoder_input_size;
        Image<float> resized = p == s ? patch : bilinear_resize(patch, s, s);
        nn::Tensor<T> x({config.in_channels, s, s});
        const std::size_t plane = static_cast<std::size_t>(s) * s;
        for (int c = 0; c < config.in_channels; ++c) {
            for (std::size_t i = 0; i < plane; ++i) {
                double v = resized.data()[i];
                if (config.backbone == Backbone::pretrained_base)
                    v = (v * 255.0 - detail::pretrained_pixel_mean[c]) / detail::pretrained_pixel_std[c];
                x.v[c * plane + i] = static_cast<T>(v);
            }
        }
        return x;
    }

    // ---- graph builders (shared by eager and training paths) --------------

    nn::TapeId image_encoder_graph(nn::Tape<T>& tape, nn::TapeId input) {
        const int grid = config.embedding_grid();
        const int e = config.encoder_embed_dim;
        auto L = [&](const std::string& n) { return tape.leaf(param(n)); };

        nn::TapeId x = nn::patch_embed(tape, input, L("image_encoder.patch_embed.weight"),
                                       L("image_encoder.patch_embed.bias"));
        x = nn::chw_to_rows(tape, x);
        x = nn::add(tape, x, L("image_encoder.pos_embed"));

        for (int b = 0; b < config.encoder_depth; ++b) {
            const std::string pre = "image_encoder.block" + std::to_string(b) + ".";
            nn::TapeId h = nn::layer_norm(tape, x, L(pre + "norm1.gamma"), L(pre + "norm1.beta"));
            nn::TapeId qkv = nn::linear(tape, h, L(pre + "attn.qkv.weight"), L(pre + "attn.qkv.bias"));
            nn::TapeId q = nn::slice_cols(tape, qkv, 0, e);
            nn::TapeId k = nn::slice_cols(tape, qkv, e, 2 * e);
            nn::TapeId v = nn::slice_cols(tape, qkv, 2 * e, 3 * e);
            const int window = config.block_is_global(b) ? 0 : config.encoder_window;
            nn::TapeId rel_h = -1, rel_w = -1;
            if (config.encoder_rel_pos) {
                rel_h = L(pre + "attn.rel_pos_h");
                rel_w = L(pre + "attn.rel_pos_w");
            }
            nn::TapeId att = nn::attention_2d(tape, q, k, v, grid, grid, config.encoder_heads,
                                              window, rel_h, rel_w);
            att = nn::linear(tape, att, L(pre + "attn.proj.weight"), L(pre + "attn.proj.bias"));
            x = nn::add(tape, x, att);

            nn::TapeId h2 = nn::layer_norm(tape, x, L(pre + "norm2.gamma"), L(pre + "norm2.beta"));
            h2 = nn::linear(tape, h2, L(pre + "mlp.lin1.weight"), L(pre + "mlp.lin1.bias"));
            h2 = nn::gelu(tape, h2);
            h2 = nn::linear(tape, h2, L(pre + "mlp.lin2.weight"), L(pre + "mlp.lin2.bias"));
            x = nn::add(tape, x, h2);
        }

        if (config.encoder_out_norm)
            x = nn::layer_norm(tape, x, L("image_encoder.out_norm.gamma"),
                               L("image_encoder.out_norm.beta"));
        x = nn::rows_to_chw(tape, x, grid, grid);
        if (config.neck) {
            x = nn::conv2d(tape, x, L("image_encoder.neck.conv1.weight"), -1, 1, 0);
            x = nn::layer_norm_chw(tape, x, L("image_encoder.neck.norm1.gamma"),
                                   L("image_encoder.neck.norm1.beta"));
            x = nn::conv2d(tape, x, L("image_encoder.neck.conv2.weight"), -1, 1, 1);
            x = nn::layer_norm_chw(tape, x, L("image_encoder.neck.norm2.gamma"),
                                   L("image_encoder.neck.norm2.beta"));
        }
        return x; // [embedding_channels, grid, grid]
    }

    // Normalized box corners in [0,1]: (x_min, y_min) and (x_max+1, y_max+1)
    // over the patch extent.
    static std::pair<std::pair<double, double>, std::pair<double, double>>
    normalized_box_corners(const BoundingBox& box, int patch_size) {
        const double s = static_cast<double>(patch_size);
        return {{box.x_min / s, box.y_min / s}, {(box.x_max + 1) / s, (box.y_max + 1) / s}};
    }

    nn::TapeId prompt_graph(nn::Tape<T>& tape, const BoundingBox& box) {
        const int p = config.patch_input_size;
        require(box.valid_for(p, p), ErrorKind::validation,
                "encode_prompt: box outside the patch extent");
        const auto [tl, br] = normalized_box_corners(box, p);
        const int d = config.decoder_dim;
        nn::Tensor<T> pe({2, d});
        positional_features(tl.first, tl.second, pe.v.data());
        positional_features(br.first, br.second, pe.v.data() + d);
        nn::TapeId corners = tape.constant(std::move(pe));

        auto L = [&](const std::string& n) { return tape.leaf(param(n)); };
        nn::TapeId tlb = nn::reshape(tape, L("prompt_encoder.corner_embed_tl"), {1, d});
        nn::TapeId brb = nn::reshape(tape, L("prompt_encoder.corner_embed_br"), {1, d});
        return nn::add(tape, corners, nn::concat_rows(tape, tlb, brb)); // [2, d]
    }

    nn::TapeId decoder_graph(nn::Tape<T>& tape, nn::TapeId image_emb, nn::TapeId prompt_tokens) {
        const int grid = config.embedding_grid();
        const int d = config.decoder_dim;
        const auto& emb_shape = tape.value(image_emb).shape;
        require(emb_shape == std::vector<int>{config.embedding_channels(), grid, grid},
                ErrorKind::validation, "decode_mask: image embedding shape mismatch");
        require(tape.value(prompt_tokens).shape == std::vector<int>{2, d}, ErrorKind::validation,
                "decode_mask: prompt embedding shape mismatch");
        auto L = [&](const std::string& n) { return tape.leaf(param(n)); };

        nn::TapeId keys = nn::chw_to_rows(tape, image_emb); // [N, d]
        if (config.iou_head) // published layout carries a dense no-mask prompt embedding
            keys = nn::add_rowvec(tape, keys, L("prompt_encoder.no_mask_embed"));
        nn::TapeId key_pe = tape.constant(dense_positional_grid(grid));

        nn::TapeId out_tokens =
            config.iou_head
                ? nn::concat_rows(tape, nn::reshape(tape, L("mask_decoder.iou_token"), {1, d}),
                                  L("mask_decoder.mask_tokens"))
                : L("mask_decoder.mask_tokens");
        nn::TapeId tokens = nn::concat_rows(tape, out_tokens, prompt_tokens);
        nn::TapeId queries = tokens;
        const nn::TapeId query_pe = tokens; // token embeddings double as their positional code

        auto attn = [&](const std::string& pre, nn::TapeId q, nn::TapeId k, nn::TapeId v) {
            nn::TapeId qp = nn::linear(tape, q, L(pre + "q.weight"), L(pre + "q.bias"));
            nn::TapeId kp = nn::linear(tape, k, L(pre + "k.weight"), L(pre + "k.bias"));
            nn::TapeId vp = nn::linear(tape, v, L(pre + "v.weight"), L(pre + "v.bias"));
            nn::TapeId a = nn::attention(tape, qp, kp, vp, config.decoder_heads);
            return nn::linear(tape, a, L(pre + "out.weight"), L(pre + "out.bias"));
        };

        for (int l = 0; l < 2; ++l) {
            const std::string pre = "mask_decoder.layer" + std::to_string(l) + ".";
            if (l == 0) {
                queries = attn(pre + "self_attn.", queries, queries, queries);
            } else {
                nn::TapeId q = nn::add(tape, queries, query_pe);
                queries = nn::add(tape, queries, attn(pre + "self_attn.", q, q, queries));
            }
            queries = nn::layer_norm(tape, queries, L(pre + "norm1.gamma"), L(pre + "norm1.beta"));

            nn::TapeId q = nn::add(tape, queries, query_pe);
            nn::TapeId k = nn::add(tape, keys, key_pe);
            queries = nn::add(tape, queries, attn(pre + "cross_t2i.", q, k, keys));
            queries = nn::layer_norm(tape, queries, L(pre + "norm2.gamma"), L(pre + "norm2.beta"));

            nn::TapeId h = nn::linear(tape, queries, L(pre + "mlp.lin1.weight"), L(pre + "mlp.lin1.bias"));
            h = nn::relu(tape, h);
            h = nn::linear(tape, h, L(pre + "mlp.lin2.weight"), L(pre + "mlp.lin2.bias"));
            queries = nn::add(tape, queries, h);
            queries = nn::layer_norm(tape, queries, L(pre + "norm3.gamma"), L(pre + "norm3.beta"));

            q = nn::add(tape, queries, query_pe);
            k = nn::add(tape, keys, key_pe);
            keys = nn::add(tape, keys, attn(pre + "cross_i2t.", k, q, queries));
            keys = nn::layer_norm(tape, keys, L(pre + "norm4.gamma"), L(pre + "norm4.beta"));
        }

        nn::TapeId q = nn::add(tape, queries, query_pe);
        nn::TapeId k = nn::add(tape, keys, key_pe);
        queries = nn::add(tape, queries, attn("mask_decoder.final_attn.", q, k, keys));
        queries = nn::layer_norm(tape, queries, L("mask_decoder.final_norm.gamma"),
                                 L("mask_decoder.final_norm.beta"));

        // upscale image tokens 4x and project the mask token onto them
        nn::TapeId img = nn::rows_to_chw(tape, keys, grid, grid);
        nn::TapeId u = nn::conv_transpose2x(tape, img, L("mask_decoder.upscale.conv1.weight"),
                                            L("mask_decoder.upscale.conv1.bias"));
        u = nn::layer_norm_chw(tape, u, L("mask_decoder.upscale.norm.gamma"),
                               L("mask_decoder.upscale.norm.beta"));
        u = nn::gelu(tape, u);
        u = nn::conv_transpose2x(tape, u, L("mask_decoder.upscale.conv2.weight"),
                                 L("mask_decoder.upscale.conv2.bias"));
        u = nn::gelu(tape, u);

        const int mask_slot = config.iou_head ? 1 : 0; // single-mask output token
        nn::TapeId tok = nn::slice_rows(tape, queries, mask_slot, mask_slot + 1);
        nn::TapeId hyper = nn::linear(tape, tok, L("mask_decoder.hyper0.lin0.weight"),
                                      L("mask_decoder.hyper0.lin0.bias"));
        hyper = nn::relu(tape, hyper);
        hyper = nn::linear(tape, hyper, L("mask_decoder.hyper0.lin1.weight"),
                           L("mask_decoder.hyper0.lin1.bias"));
        hyper = nn::relu(tape, hyper);
        hyper = nn::linear(tape, hyper, L("mask_decoder.hyper0.lin2.weight"),
                           L("mask_decoder.hyper0.lin2.bias"));

        const int up = 4 * grid;
        nn::TapeId flat = nn::reshape(tape, u, {d / 8, up * up});
        nn::TapeId mask = nn::matmul(tape, hyper, flat); // [1, up*up]
        mask = nn::reshape(tape, mask, {1, up, up});
        const int p = config.patch_input_size;
        if (up != p) mask = nn::bilinear_upsample(tape, mask, p, p);
        return nn::reshape(tape, mask, {p, p});
    }

    // Full forward to loss; used by training and by gradient tests.
    nn::TapeId loss_graph(nn::Tape<T>& tape, const Image<float>& patch, const BoundingBox& box,
                          const BinaryMask& target) {
        nn::TapeId input = tape.constant(input_tensor(patch));
        nn::TapeId emb = image_encoder_graph(tape, input);
        nn::TapeId prompt = prompt_graph(tape, box);
        nn::TapeId logits = decoder_graph(tape, emb, prompt);
        return nn::dice_ce(tape, logits,
                           std::vector<std::uint8_t>(target.data(), target.data() + target.size()));
    }

    // ---- eager interfaces ---------------------------------------------------

    nn::Tensor<T> encode_image(const Image<float>& patch) const {
        nn::Tape<T> tape;
        Model& self = const_cast<Model&>(*this);
        nn::TapeId id = self.image_encoder_graph(tape, tape.constant(input_tensor(patch)));
        return tape.value(id);
    }

    nn::Tensor<T> encode_prompt(const BoundingBox& box) const {
        nn::Tape<T> tape;
        Model& self = const_cast<Model&>(*this);
        return tape.value(self.prompt_graph(tape, box));
    }

    Image<float> decode_mask(const nn::Tensor<T>& image_emb, const nn::Tensor<T>& prompt_emb) const {
        nn::Tape<T> tape;
        Model& self = const_cast<Model&>(*this);
        nn::TapeId id = self.decoder_graph(tape, tape.constant(image_emb), tape.constant(prompt_emb));
        const auto& logits = tape.value(id);
        const int p = config.patch_input_size;
        Image<float> out(p, p);
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = static_cast<float>(logits.v[i]);
        return out;
    }

    // ---- helpers ------------------------------------------------------------

    nn::Parameter<T>& param(const std::string& name) { return params.at(name); }
    const nn::Parameter<T>& param(const std::string& name) const { return params.at(name); }

    // Random-feature positional code for a normalized point.
    void positional_features(double x, double y, T* out) const {
        const auto& m = param("prompt_encoder.positional_matrix").value; // [2, d/2]
        const int half = config.decoder_dim / 2;
        const double cx = 2.0 * x - 1.0, cy = 2.0 * y - 1.0;
        for (int j = 0; j < half; ++j) {
            const double proj =
                detail::two_pi * (cx * static_cast<double>(m.v[j]) + cy * static_cast<double>(m.v[half + j]));
            out[j] = static_cast<T>(std::sin(proj));
            out[half + j] = static_cast<T>(std::cos(proj));
        }
    }

    nn::Tensor<T> dense_positional_grid(int grid) const {
        nn::Tensor<T> pe({grid * grid, config.decoder_dim});
        for (int r = 0; r < grid; ++r)
            for (int c = 0; c < grid; ++c)
                positional_features((c + 0.5) / grid, (r + 0.5) / grid,
                                    pe.v.data() + (static_cast<std::size_t>(r) * grid + c) * config.decoder_dim);
        return pe;
    }

    static Image<float> bilinear_resize(const Image<float>& src, int out_h, int out_w) {
        Image<float> out(out_h, out_w);
        for (int r = 0; r < out_h; ++r) {
            const double sy = (r + 0.5) * static_cast<double>(src.height()) / out_h - 0.5;
            const double cy = sy < 0 ? 0 : (sy > src.height() - 1 ? src.height() - 1 : sy);
            const int y0 = static_cast<int>(cy);
            const int y1 = std::min(y0 + 1, src.height() - 1);
            const double fy = cy - y0;
            for (int c = 0; c < out_w; ++c) {
                const double sx = (c + 0.5) * static_cast<double>(src.width()) / out_w - 0.5;
                const double cx = sx < 0 ? 0 : (sx > src.width() - 1 ? src.width() - 1 : sx);
                const int x0 = static_cast<int>(cx);
                const int x1 = std::min(x0 + 1, src.width() - 1);
                const double fx = cx - x0;
                out.at(r, c) = static_cast<float>((1 - fy) * ((1 - fx) * src.at(y0, x0) + fx * src.at(y0, x1)) +
                                                  fy * ((1 - fx) * src.at(y1, x0) + fx * src.at(y1, x1)));
            }
        }
        return out;
    }

private:
    void create_parameters() {
        const ModelConfig& c = config;
        const int e = c.encoder_embed_dim;
        const int grid = c.embedding_grid();
        const int d = c.decoder_dim;
        const int mlp = static_cast<int>(e * c.encoder_mlp_ratio);
        auto& P = params;

        // image encoder
        P.create("image_encoder.patch_embed.weight", {e, c.in_channels, c.encoder_token_size, c.encoder_token_size});
        P.create("image_encoder.patch_embed.bias", {e});
        P.create("image_encoder.pos_embed", {grid * grid, e});
        for (int b = 0; b < c.encoder_depth; ++b) {
            const std::string pre = "image_encoder.block" + std::to_string(b) + ".";
            P.create(pre + "norm1.gamma", {e});
            P.create(pre + "norm1.beta", {e});
            P.create(pre + "attn.qkv.weight", {3 * e, e});
            P.create(pre + "attn.qkv.bias", {3 * e});
            if (c.encoder_rel_pos) {
                const int side = c.block_is_global(b) ? grid : c.encoder_window;
                P.create(pre + "attn.rel_pos_h", {2 * side - 1, e / c.encoder_heads});
                P.create(pre + "attn.rel_pos_w", {2 * side - 1, e / c.encoder_heads});
            }
            P.create(pre + "attn.proj.weight", {e, e});
            P.create(pre + "attn.proj.bias", {e});
            P.create(pre + "norm2.gamma", {e});
            P.create(pre + "norm2.beta", {e});
            P.create(pre + "mlp.lin1.weight", {mlp, e});
            P.create(pre + "mlp.lin1.bias", {mlp});
            P.create(pre + "mlp.lin2.weight", {e, mlp});
            P.create(pre + "mlp.lin2.bias", {e});
        }
        if (c.encoder_out_norm) {
            P.create("image_encoder.out_norm.gamma", {e});
            P.create("image_encoder.out_norm.beta", {e});
        }
        if (c.neck) {
            P.create("image_encoder.neck.conv1.weight", {d, e, 1, 1});
            P.create("image_encoder.neck.norm1.gamma", {d});
            P.create("image_encoder.neck.norm1.beta", {d});
            P.create("image_encoder.neck.conv2.weight", {d, d, 3, 3});
            P.create("image_encoder.neck.norm2.gamma", {d});
            P.create("image_encoder.neck.norm2.beta", {d});
        }

        // prompt encoder (positional matrix is a fixed buffer, not a weight)
        P.create("prompt_encoder.positional_matrix", {2, d / 2}, /*buffer=*/true);
        P.create("prompt_encoder.corner_embed_tl", {d});
        P.create("prompt_encoder.corner_embed_br", {d});
        if (c.iou_head) {
            // extra prompt pathways present in the published layout
            P.create("prompt_encoder.point_embed_neg", {d});
            P.create("prompt_encoder.point_embed_pos", {d});
            P.create("prompt_encoder.not_a_point_embed", {d});
            P.create("prompt_encoder.no_mask_embed", {d});
            P.create("prompt_encoder.mask_embed.conv1.weight", {4, 1, 2, 2});
            P.create("prompt_encoder.mask_embed.conv1.bias", {4});
            P.create("prompt_encoder.mask_embed.norm1.gamma", {4});
            P.create("prompt_encoder.mask_embed.norm1.beta", {4});
            P.create("prompt_encoder.mask_embed.conv2.weight", {16, 4, 2, 2});
            P.create("prompt_encoder.mask_embed.conv2.bias", {16});
            P.create("prompt_encoder.mask_embed.norm2.gamma", {16});
            P.create("prompt_encoder.mask_embed.norm2.beta", {16});
            P.create("prompt_encoder.mask_embed.conv3.weight", {d, 16, 1, 1});
            P.create("prompt_encoder.mask_embed.conv3.bias", {d});
        }

        // mask decoder
        if (c.iou_head) P.create("mask_decoder.iou_token", {1, d});
        P.create("mask_decoder.mask_tokens", {c.num_mask_tokens, d});
        const int ids = d / c.decoder_downsample; // internal cross-attention width
        auto attn_params = [&](const std::string& pre, int internal) {
            P.create(pre + "q.weight", {internal, d});
            P.create(pre + "q.bias", {internal});
            P.create(pre + "k.weight", {internal, d});
            P.create(pre + "k.bias", {internal});
            P.create(pre + "v.weight", {internal, d});
            P.create(pre + "v.bias", {internal});
            P.create(pre + "out.weight", {d, internal});
            P.create(pre + "out.bias", {d});
        };
        for (int l = 0; l < 2; ++l) {
            const std::string pre = "mask_decoder.layer" + std::to_string(l) + ".";
            attn_params(pre + "self_attn.", d);
            P.create(pre + "norm1.gamma", {d});
            P.create(pre + "norm1.beta", {d});
            attn_params(pre + "cross_t2i.", ids);
            P.create(pre + "norm2.gamma", {d});
            P.create(pre + "norm2.beta", {d});
            P.create(pre + "mlp.lin1.weight", {c.decoder_mlp_dim, d});
            P.create(pre + "mlp.lin1.bias", {c.decoder_mlp_dim});
            P.create(pre + "mlp.lin2.weight", {d, c.decoder_mlp_dim});
            P.create(pre + "mlp.lin2.bias", {d});
            P.create(pre + "norm3.gamma", {d});
            P.create(pre + "norm3.beta", {d});
            attn_params(pre + "cross_i2t.", ids);
            P.create(pre + "norm4.gamma", {d});
            P.create(pre + "norm4.beta", {d});
        }
        attn_params("mask_decoder.final_attn.", ids);
        P.create("mask_decoder.final_norm.gamma", {d});
        P.create("mask_decoder.final_norm.beta", {d});
        P.create("mask_decoder.upscale.conv1.weight", {d, d / 4, 2, 2});
        P.create("mask_decoder.upscale.conv1.bias", {d / 4});
        P.create("mask_decoder.upscale.norm.gamma", {d / 4});
        P.create("mask_decoder.upscale.norm.beta", {d / 4});
        P.create("mask_decoder.upscale.conv2.weight", {d / 4, d / 8, 2, 2});
        P.create("mask_decoder.upscale.conv2.bias", {d / 8});
        const int n_hyper = c.iou_head ? c.num_mask_tokens : 1;
        for (int i = 0; i < n_hyper; ++i) {
            const std::string pre = "mask_decoder.hyper" + std::to_string(i) + ".";
            P.create(pre + "lin0.weight", {d, d});
            P.create(pre + "lin0.bias", {d});
            P.create(pre + "lin1.weight", {d, d});
            P.create(pre + "lin1.bias", {d});
            P.create(pre + "lin2.weight", {d / 8, d});
            P.create(pre + "lin2.bias", {d / 8});
        }
        if (c.iou_head) {
            P.create("mask_decoder.iou_head.lin0.weight", {d, d});
            P.create("mask_decoder.iou_head.lin0.bias", {d});
            P.create("mask_decoder.iou_head.lin1.weight", {d, d});
            P.create("mask_decoder.iou_head.lin1.bias", {d});
            P.create("mask_decoder.iou_head.lin2.weight", {c.num_mask_tokens, d});
            P.create("mask_decoder.iou_head.lin2.bias", {c.num_mask_tokens});
        }
    }

    void init_random(std::uint64_t seed) {
        Rng rng(Rng::derive(seed, 0x6d6f64656cull));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            const auto& n = p.name;
            if (n == "prompt_encoder.positional_matrix") {
                nn::init_normal(p.value, rng, 1.0);
            } else if (n.ends_with("gamma")) {
                p.value.fill(T(1));
            } else if (n.ends_with("beta") || n.ends_with("bias")) {
                p.value.fill(T(0));
            } else {
                nn::init_normal(p.value, rng, 0.02);
            }
        }
    }
};

using SegModel = Model<float>;

} // namespace rockseg
