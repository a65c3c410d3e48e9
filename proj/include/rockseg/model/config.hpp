#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "rockseg/core/error.hpp"
#include "rockseg/core/rng.hpp"

namespace rockseg {

enum class Backbone { toy, pretrained_base };

inline const char* backbone_name(Backbone b) {
    return b == Backbone::toy ? "toy" : "pretrained-base";
}

inline Backbone backbone_from_name(const std::string& s) {
    if (s == "toy") return Backbone::toy;
    if (s == "pretrained-base" || s == "pretrained_base") return Backbone::pretrained_base;
    raise(ErrorKind::validation, "unknown backbone: " + s);
}

// Architecture of the promptable segmentation model: a ViT image encoder,
// a box prompt encoder, and a two-way-attention mask decoder with an
// upsampling head. The toy preset is small enough to train on a CPU; the
// pretrained-base preset mirrors the published base checkpoint so its
// weights can be adapted in.
struct ModelConfig {
    Backbone backbone = Backbone::toy;

    int patch_input_size = 256; // pipeline patch fed to encode_image
    int in_channels = 1;
    int encoder_input_size = 256; // internal encoder resolution
    int encoder_token_size = 16;  // patch-embed kernel == stride
    int encoder_embed_dim = 32;
    int encoder_depth = 4;
    int encoder_heads = 4;
    double encoder_mlp_ratio = 4.0;
    bool encoder_rel_pos = false;
    int encoder_window = 0;                 // 0 = global attention everywhere
    std::vector<int> encoder_global_blocks; // blocks that stay global when windowed
    bool encoder_out_norm = true;           // final token layer norm (in place of a neck)
    bool neck = false;                      // conv projection to decoder_dim

    int decoder_dim = 32;
    int decoder_heads = 4;
    int decoder_mlp_dim = 64;
    int decoder_downsample = 2; // cross-attention internal downsample rate
    int num_mask_tokens = 1;
    bool iou_head = false;

    // weight source for the pretrained backbone
    std::string weights_path;
    std::string names_path; // two-column tensor name translation file

    int embedding_grid() const { return encoder_input_size / encoder_token_size; }
    int embedding_channels() const { return neck ? decoder_dim : encoder_embed_dim; }

    bool block_is_global(int i) const {
        if (encoder_window <= 0) return true;
        for (int b : encoder_global_blocks)
            if (b == i) return true;
        return false;
    }

    void validate() const {
        require(patch_input_size >= 1 && encoder_input_size >= 1, ErrorKind::validation,
                "model: sizes must be >= 1");
        require(encoder_token_size >= 1 && encoder_input_size % encoder_token_size == 0,
                ErrorKind::validation, "model: token size must divide encoder input size");
        require(patch_input_size % encoder_token_size == 0, ErrorKind::validation,
                "model: token size must divide patch input size");
        require(encoder_embed_dim % encoder_heads == 0, ErrorKind::validation,
                "model: encoder heads must divide embed dim");
        require(decoder_dim % decoder_heads == 0, ErrorKind::validation,
                "model: decoder heads must divide decoder dim");
        require(decoder_dim % (decoder_downsample * decoder_heads) == 0, ErrorKind::validation,
                "model: decoder downsample incompatible with head layout");
        require(decoder_dim % 8 == 0, ErrorKind::validation,
                "model: decoder dim must be divisible by 8 (upscale chain)");
        require(decoder_dim % 2 == 0, ErrorKind::validation, "model: decoder dim must be even");
        require(encoder_depth >= 1 && decoder_mlp_dim >= 1 && num_mask_tokens >= 1,
                ErrorKind::validation, "model: bad layer counts");
        if (neck) require(!encoder_out_norm, ErrorKind::validation,
                          "model: neck and out_norm are alternatives");
    }

    static ModelConfig toy() { return ModelConfig{}; }

    static ModelConfig pretrained_base() {
        ModelConfig c;
        c.backbone = Backbone::pretrained_base;
        c.in_channels = 3;
        c.encoder_input_size = 1024;
        c.encoder_embed_dim = 768;
        c.encoder_depth = 12;
        c.encoder_heads = 12;
        c.encoder_rel_pos = true;
        c.encoder_window = 14;
        c.encoder_global_blocks = {2, 5, 8, 11};
        c.encoder_out_norm = false;
        c.neck = true;
        c.decoder_dim = 256;
        c.decoder_heads = 8;
        c.decoder_mlp_dim = 2048;
        c.num_mask_tokens = 4;
        c.iou_head = true;
        c.weights_path = "weights/segmodel_base.safetensors";
        c.names_path = "assets/pretrained_base_names.txt";
        return c;
    }
};

// Hash over the architecture fields only (weight paths excluded), used to
// pair checkpoints with compatible configs.
inline std::uint64_t config_hash(const ModelConfig& c) {
    std::ostringstream os;
    os << backbone_name(c.backbone) << '|' << c.patch_input_size << '|' << c.in_channels << '|'
       << c.encoder_input_size << '|' << c.encoder_token_size << '|' << c.encoder_embed_dim << '|'
       << c.encoder_depth << '|' << c.encoder_heads << '|' << c.encoder_mlp_ratio << '|'
       << c.encoder_rel_pos << '|' << c.encoder_window << '|';
    for (int b : c.encoder_global_blocks) os << b << ',';
    os << '|' << c.encoder_out_norm << '|' << c.neck << '|' << c.decoder_dim << '|'
       << c.decoder_heads << '|' << c.decoder_mlp_dim << '|' << c.decoder_downsample << '|'
       << c.num_mask_tokens << '|' << c.iou_head;
    return fnv1a64(os.str());
}

} // namespace rockseg
