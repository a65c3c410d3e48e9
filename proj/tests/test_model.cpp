#include <catch_amalgamated.hpp>

#include <fstream>
#include <set>

#include "rockseg/model/pretrained.hpp"
#include "rockseg/train/loss.hpp"
#include "testutil.hpp"

using namespace rockseg;

namespace {

Image<float> random_patch(int size, std::uint64_t seed) {
    Rng rng(seed);
    Image<float> p(size, size);
    for (auto& v : p) v = static_cast<float>(rng.next_double());
    return p;
}

// Small config exercising the published-layout code paths (windowed
// attention, relative positions, neck, iou head, extra prompt tensors).
ModelConfig small_pretrained_like() {
    ModelConfig c;
    c.backbone = Backbone::toy; // random init, full layout
    c.patch_input_size = 64;
    c.in_channels = 1;
    c.encoder_input_size = 64;
    c.encoder_token_size = 8;
    c.encoder_embed_dim = 16;
    c.encoder_depth = 3;
    c.encoder_heads = 2;
    c.encoder_rel_pos = true;
    c.encoder_window = 3;
    c.encoder_global_blocks = {1};
    c.encoder_out_norm = false;
    c.neck = true;
    c.decoder_dim = 16;
    c.decoder_heads = 2;
    c.decoder_mlp_dim = 32;
    c.num_mask_tokens = 4;
    c.iou_head = true;
    return c;
}

bool params_identical(const Model<float>& a, const Model<float>& b) {
    if (a.params.size() != b.params.size()) return false;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        if (a.params[i].name != b.params[i].name) return false;
        if (a.params[i].value.v != b.params[i].value.v) return false;
    }
    return true;
}

} // namespace

TEST_CASE("toy build is deterministic under a fixed seed") {
    const auto a = Model<float>::build_toy(ModelConfig::toy(), 0);
    const auto b = Model<float>::build_toy(ModelConfig::toy(), 0);
    CHECK(params_identical(a, b));
    const auto c = Model<float>::build_toy(ModelConfig::toy(), 1);
    CHECK(!params_identical(a, c));
}

TEST_CASE("toy model fits the desk-scale parameter budget") {
    const auto m = Model<float>::build_toy(ModelConfig::toy(), 0);
    CHECK(m.count_parameters() < 500000);
}

TEST_CASE("freeze_encoders is idempotent and flags exactly the encoders") {
    auto m = Model<float>::build_toy(ModelConfig::toy(), 0);
    m.freeze_encoders();
    std::vector<bool> flags;
    for (std::size_t i = 0; i < m.params.size(); ++i) flags.push_back(m.params[i].trainable);
    m.freeze_encoders();
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        CHECK(m.params[i].trainable == flags[i]);
        const auto& name = m.params[i].name;
        const bool encoder =
            name.starts_with("image_encoder.") || name.starts_with("prompt_encoder.");
        if (m.params[i].buffer) {
            CHECK(!m.params[i].trainable);
        } else {
            CHECK(m.params[i].trainable == !encoder);
        }
    }
}

TEST_CASE("trainable count equals the analytic decoder tensor-size sum") {
    auto m = Model<float>::build_toy(ModelConfig::toy(), 0);
    m.freeze_encoders();
    std::size_t decoder_sum = 0;
    for (std::size_t i = 0; i < m.params.size(); ++i)
        if (m.params[i].name.starts_with("mask_decoder.")) decoder_sum += m.params[i].value.numel();
    CHECK(m.count_trainable() == decoder_sum);
    CHECK(decoder_sum > 0);

    m.set_all_trainable(false);
    CHECK(m.count_trainable() == 0);
}

TEST_CASE("encode_image obeys the shape contract and is deterministic") {
    const auto m = Model<float>::build_toy(ModelConfig::toy(), 3);
    const auto emb = m.encode_image(random_patch(256, 1));
    CHECK(emb.shape == std::vector<int>{32, 16, 16});

    const auto again = m.encode_image(random_patch(256, 1));
    CHECK(emb.v == again.v);

    const auto zeros = m.encode_image(Image<float>(256, 256, 0.0f));
    const auto ones = m.encode_image(Image<float>(256, 256, 1.0f));
    CHECK(zeros.v != ones.v);

    CHECK_THROWS_AS(m.encode_image(Image<float>(128, 128, 0.5f)), Error);
}

TEST_CASE("encode_prompt normalizes corners and distinguishes boxes") {
    const auto m = Model<float>::build_toy(ModelConfig::toy(), 3);
    const auto corners = Model<float>::normalized_box_corners({0, 0, 255, 255}, 256);
    CHECK(corners.first.first == 0.0);
    CHECK(corners.first.second == 0.0);
    CHECK(corners.second.first == 1.0);
    CHECK(corners.second.second == 1.0);

    const auto full = m.encode_prompt({0, 0, 255, 255});
    CHECK(full.shape == std::vector<int>{2, 32});
    const auto tiny = m.encode_prompt({10, 12, 10, 12});
    CHECK(full.v != tiny.v);
    CHECK(m.encode_prompt({0, 0, 255, 255}).v == full.v);

    CHECK_THROWS_AS(m.encode_prompt({0, 0, 256, 256}), Error); // outside the patch
    CHECK_THROWS_AS(m.encode_prompt({-1, 0, 10, 10}), Error);
}

TEST_CASE("decode_mask produces full-resolution finite logits sensitive to the prompt") {
    const auto m = Model<float>::build_toy(ModelConfig::toy(), 3);
    const auto emb = m.encode_image(random_patch(256, 2));
    const auto full_prompt = m.encode_prompt({0, 0, 255, 255});
    const auto logits = m.decode_mask(emb, full_prompt);
    CHECK(logits.height() == 256);
    CHECK(logits.width() == 256);

    const auto other = m.decode_mask(emb, m.encode_prompt({40, 40, 90, 100}));
    CHECK(logits != other); // the prompt conditions the output

    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto l = m.decode_mask(m.encode_image(random_patch(256, 100 + seed)),
                                     m.encode_prompt({20, 30, 200, 180}));
        for (auto v : l) REQUIRE(std::isfinite(v));
    }
}

TEST_CASE("gradient isolation: frozen encoders receive exactly zero gradient") {
    auto m = Model<float>::build_toy(ModelConfig::toy(), 5);
    m.freeze_encoders();
    m.params.zero_grads();

    nn::Tape<float> tape;
    const auto target = testutil::random_mask(256, 256, 77, 0.4);
    const auto root = m.loss_graph(tape, random_patch(256, 6), {30, 30, 220, 220}, target);
    tape.backward(root);

    bool decoder_nonzero = false;
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const auto& p = m.params[i];
        if (p.name.starts_with("image_encoder.") || p.name.starts_with("prompt_encoder.")) {
            for (auto g : p.grad.v) REQUIRE(g == 0.0f);
        } else {
            for (auto g : p.grad.v) decoder_nonzero = decoder_nonzero || g != 0.0f;
        }
    }
    CHECK(decoder_nonzero);
}

TEST_CASE("unfrozen encoders do receive gradient (isolation test is not vacuous)") {
    auto m = Model<float>::build_toy(ModelConfig::toy(), 5);
    m.set_all_trainable(true);
    m.params.zero_grads();
    nn::Tape<float> tape;
    const auto target = testutil::random_mask(256, 256, 78, 0.4);
    const auto root = m.loss_graph(tape, random_patch(256, 7), {30, 30, 220, 220}, target);
    tape.backward(root);
    bool encoder_nonzero = false;
    for (std::size_t i = 0; i < m.params.size(); ++i)
        if (m.params[i].name.starts_with("image_encoder."))
            for (auto g : m.params[i].grad.v) encoder_nonzero = encoder_nonzero || g != 0.0f;
    CHECK(encoder_nonzero);
}

TEST_CASE("published-layout config (windowed, rel-pos, neck, iou head) works end to end") {
    const auto cfg = small_pretrained_like();
    const auto m = Model<float>::build_toy(cfg, 9);
    const auto emb = m.encode_image(random_patch(64, 3));
    CHECK(emb.shape == std::vector<int>{16, 8, 8});
    const auto prompt = m.encode_prompt({5, 5, 40, 50});
    const auto logits = m.decode_mask(emb, prompt);
    CHECK(logits.height() == 64);
    for (auto v : logits) REQUIRE(std::isfinite(v));
    const auto again = m.decode_mask(emb, prompt);
    CHECK(logits == again);
}

TEST_CASE("config hash separates architectures and ignores weight paths") {
    auto a = ModelConfig::toy();
    auto b = ModelConfig::toy();
    CHECK(config_hash(a) == config_hash(b));
    b.decoder_mlp_dim = 128;
    CHECK(config_hash(a) != config_hash(b));
    auto c = ModelConfig::toy();
    c.weights_path = "somewhere/else.safetensors";
    CHECK(config_hash(a) == config_hash(c));
    CHECK(config_hash(ModelConfig::toy()) != config_hash(ModelConfig::pretrained_base()));
}

TEST_CASE("missing pretrained weights raise a missing-weights error with a hint") {
    auto cfg = ModelConfig::pretrained_base();
    cfg.weights_path = "/nonexistent/weights.safetensors";
    cfg.names_path = std::string(ROCKSEG_SOURCE_DIR) + "/assets/pretrained_base_names.txt";
    try {
        build_model(cfg, 0);
        FAIL("expected a missing-weights error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::missing_weights);
        CHECK(std::string(e.what()).find("download") != std::string::npos);
    }
}

TEST_CASE("name translation covers the published layout exactly") {
    const auto names = load_name_translation(std::string(ROCKSEG_SOURCE_DIR) +
                                             "/assets/pretrained_base_names.txt");
    const auto m = Model<float>::build_uninitialized(ModelConfig::pretrained_base());
    std::set<std::string> targets;
    for (const auto& [src, dst] : names) {
        INFO(src << " -> " << dst);
        REQUIRE(m.params.contains(dst));
        CHECK(!targets.contains(dst)); // no two sources map to one tensor
        targets.insert(dst);
    }
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        INFO(m.params[i].name);
        CHECK(targets.contains(m.params[i].name));
    }
}

namespace {

// Serializes tensors as a safetensors file, to exercise the weight adapter
// without real weights.
void write_safetensors(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, const nn::Tensor<float>*>>& tensors) {
    nlohmann::json header;
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const std::uint64_t bytes = t->numel() * 4;
        header[name] = {{"dtype", "F32"},
                        {"shape", t->shape},
                        {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    const std::string htext = header.dump();
    std::ofstream os(path, std::ios::binary);
    const std::uint64_t hlen = htext.size();
    os.write(reinterpret_cast<const char*>(&hlen), 8);
    os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, t] : tensors)
        os.write(reinterpret_cast<const char*>(t->v.data()),
                 static_cast<std::streamsize>(t->numel() * 4));
}

} // namespace

TEST_CASE("weight adapter round trip through a synthetic safetensors checkpoint") {
    const auto dir = testutil::fresh_dir("adapter");
    const auto cfg = small_pretrained_like();
    const auto src = Model<float>::build_toy(cfg, 21);

    // invented checkpoint names: ckpt.<i>
    std::vector<std::pair<std::string, const nn::Tensor<float>*>> tensors;
    std::ofstream names(dir / "names.txt");
    for (std::size_t i = 0; i < src.params.size(); ++i) {
        const std::string ckpt_name = "ckpt." + std::to_string(i);
        tensors.emplace_back(ckpt_name, &src.params[i].value);
        names << ckpt_name << "  " << src.params[i].name << "\n";
    }
    names.close();
    write_safetensors(dir / "weights.safetensors", tensors);

    auto dst = Model<float>::build_uninitialized(cfg);
    load_pretrained_weights(dst, dir / "weights.safetensors", dir / "names.txt");
    CHECK(params_identical(src, dst));

    SECTION("unmapped checkpoint tensor is a hard error") {
        std::ofstream partial(dir / "names_missing.txt");
        for (std::size_t i = 1; i < src.params.size(); ++i)
            partial << "ckpt." << i << "  " << src.params[i].name << "\n";
        partial.close();
        auto m = Model<float>::build_uninitialized(cfg);
        CHECK_THROWS_AS(
            load_pretrained_weights(m, dir / "weights.safetensors", dir / "names_missing.txt"),
            Error);
    }

    SECTION("manifest entry absent from the checkpoint is a hard error") {
        std::ofstream extra(dir / "names_extra.txt");
        std::ifstream orig(dir / "names.txt");
        extra << orig.rdbuf();
        extra << "ckpt.ghost  mask_decoder.mask_tokens\n";
        extra.close();
        auto m = Model<float>::build_uninitialized(cfg);
        CHECK_THROWS_AS(
            load_pretrained_weights(m, dir / "weights.safetensors", dir / "names_extra.txt"),
            Error);
    }

    SECTION("size mismatch is a hard error") {
        auto bad_cfg = cfg;
        bad_cfg.decoder_mlp_dim = 48;
        auto m = Model<float>::build_uninitialized(bad_cfg);
        CHECK_THROWS_AS(load_pretrained_weights(m, dir / "weights.safetensors", dir / "names.txt"),
                        Error);
    }
}
