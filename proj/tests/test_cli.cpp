#include <catch_amalgamated.hpp>

#include <fstream>

#include "rockseg/cli/driver.hpp"
#include "testutil.hpp"

using namespace rockseg;

namespace {

int run_cli(std::initializer_list<std::string> args) {
    return cli::run(std::vector<std::string>(args));
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// INI for a tiny pipeline over 64x64 disk images.
std::filesystem::path write_config(const std::filesystem::path& dir,
                                   const std::filesystem::path& data,
                                   const std::filesystem::path& prepared,
                                   const std::filesystem::path& checkpoint = {}) {
    const auto path = dir / "pipeline.ini";
    std::ofstream os(path);
    os << "[dataset]\n";
    os << "images = " << (data / "images").string() << "\n";
    os << "masks = " << (data / "masks").string() << "\n";
    if (!prepared.empty()) os << "prepared = " << prepared.string() << "\n";
    os << "min_foreground_fraction = 0.01\n";
    os << "[model]\n";
    os << "backbone = toy\n";
    os << "patch_input_size = 64\n";
    os << "encoder_input_size = 64\n";
    os << "encoder_token_size = 8\n";
    os << "encoder_embed_dim = 16\n";
    os << "encoder_depth = 2\n";
    os << "encoder_heads = 2\n";
    os << "decoder_dim = 16\n";
    os << "decoder_heads = 2\n";
    os << "decoder_mlp_dim = 32\n";
    os << "[train]\n";
    os << "learning_rate = 0.002\n";
    os << "batch_size = 4\n";
    os << "max_epochs = 3\n";
    os << "[tiling]\n";
    os << "patch_size = 64\n";
    os << "stride = 32\n";
    os << "[run]\n";
    os << "seed = 11\n";
    if (!checkpoint.empty()) os << "checkpoint = " << checkpoint.string() << "\n";
    return path;
}

} // namespace

TEST_CASE("pipeline: prepare, train, infer, evaluate") {
    const auto root = testutil::fresh_dir("cli_pipeline");
    const auto data = root / "data";
    testutil::write_disk_dataset(data, 10, 64, 31);
    // two extra SEM-tagged images for the manifest counts
    testutil::write_disk_dataset(data, 2, 64, 77, "sem_view");

    const auto prepared = root / "prepared";
    const auto cfg = write_config(root, data, prepared);
    REQUIRE(run_cli({"prepare", "--config", cfg.string(), "--out", prepared.string()}) == 0);
    CHECK(std::filesystem::exists(prepared / "manifest.json"));
    CHECK(std::filesystem::exists(prepared / "prompts.csv"));
    CHECK(std::filesystem::exists(prepared / "config_used.ini"));
    {
        const auto manifest = nlohmann::json::parse(slurp(prepared / "manifest.json"));
        CHECK(manifest["counts"]["CT"].get<int>() == 10);
        CHECK(manifest["counts"]["SEM"].get<int>() == 2);
        CHECK(manifest["candidates"].get<int>() == 12); // 64x64 inputs: one patch each
        CHECK(manifest["selected"].get<int>() == 12);
    }

    const auto train_out = root / "run1";
    REQUIRE(run_cli({"train", "--config", cfg.string(), "--out", train_out.string()}) == 0);
    CHECK(std::filesystem::exists(train_out / "best.ckpt"));
    CHECK(std::filesystem::exists(train_out / "history.csv"));
    CHECK(std::filesystem::exists(train_out / "loss_curve.png"));

    // identical seed -> identical history bytes
    const auto train_out2 = root / "run2";
    REQUIRE(run_cli({"train", "--config", cfg.string(), "--out", train_out2.string()}) == 0);
    CHECK(slurp(train_out / "history.csv") == slurp(train_out2 / "history.csv"));

    // single-image inference with CSV probabilities, twice, byte-identical
    const auto sample = testutil::disk_sample(64, 5522);
    const auto img_path = root / "query.png";
    save_png_gray8(img_path, sample.image);
    const auto cfg_ck = write_config(root, data, prepared, train_out / "best.ckpt");
    const auto infer_out1 = root / "infer1";
    const auto infer_out2 = root / "infer2";
    REQUIRE(run_cli({"infer", img_path.string(), "--config", cfg_ck.string(), "--out",
                     infer_out1.string(), "--prob-format", "csv"}) == 0);
    REQUIRE(run_cli({"infer", img_path.string(), "--config", cfg_ck.string(), "--out",
                     infer_out2.string(), "--prob-format", "csv"}) == 0);
    CHECK(std::filesystem::exists(infer_out1 / "query_mask.png"));
    CHECK(std::filesystem::exists(infer_out1 / "query_prob.csv"));
    CHECK(std::filesystem::exists(infer_out1 / "query_panel.png"));
    CHECK(slurp(infer_out1 / "query_prob.csv") == slurp(infer_out2 / "query_prob.csv"));
    CHECK(slurp(infer_out1 / "query_mask.png") == slurp(infer_out2 / "query_mask.png"));

    const auto mask = load_mask(infer_out1 / "query_mask.png");
    CHECK(mask.height() == 64);
    CHECK(mask.width() == 64);

    // evaluate the prediction against the known truth
    const auto pred_dir = root / "pred";
    const auto truth_dir = root / "truth";
    std::filesystem::create_directories(pred_dir);
    std::filesystem::create_directories(truth_dir);
    std::filesystem::copy_file(infer_out1 / "query_mask.png", pred_dir / "query.png");
    save_mask_png(truth_dir / "query.png", sample.mask);
    REQUIRE(run_cli({"evaluate", "--pred", pred_dir.string(), "--truth", truth_dir.string(),
                     "--out", (root / "eval").string()}) == 0);
    const auto report = slurp(root / "eval" / "report.csv");
    CHECK(report.find("query,") != std::string::npos);
    CHECK(report.find("mean,") != std::string::npos);
}

TEST_CASE("infer honors stride, window, and threshold overrides") {
    const auto root = testutil::fresh_dir("cli_flags");
    const auto data = root / "data";
    testutil::write_disk_dataset(data, 4, 64, 21);
    const auto prepared = root / "prepared";
    auto cfg = write_config(root, data, prepared);
    REQUIRE(run_cli({"prepare", "--config", cfg.string(), "--out", prepared.string()}) == 0);
    const auto train_out = root / "train";
    REQUIRE(run_cli({"train", "--config", cfg.string(), "--out", train_out.string()}) == 0);

    const auto img = root / "q.png";
    save_png_gray8(img, testutil::disk_sample(64, 5).image);
    const auto cfg_ck = write_config(root, data, prepared, train_out / "best.ckpt");
    REQUIRE(run_cli({"infer", img.string(), "--config", cfg_ck.string(), "--out",
                     (root / "o1").string(), "--stride", "64", "--window", "unit", "--threshold",
                     "0.3", "--prob-format", "none"}) == 0);
    CHECK(std::filesystem::exists(root / "o1" / "q_mask.png"));
    CHECK(!std::filesystem::exists(root / "o1" / "q_prob.png"));
    // the echoed config must reflect the overrides
    const auto echoed = slurp(root / "o1" / "config_used.ini");
    CHECK(echoed.find("stride = 64") != std::string::npos);
    CHECK(echoed.find("window = unit") != std::string::npos);
    CHECK(echoed.find("threshold = 0.3") != std::string::npos);
}

TEST_CASE("evaluate matches a direct metrics call on a single pair") {
    const auto root = testutil::fresh_dir("cli_eval_direct");
    const auto a = root / "a";
    const auto b = root / "b";
    std::filesystem::create_directories(a);
    std::filesystem::create_directories(b);
    const auto pred = testutil::random_mask(24, 24, 8, 0.4);
    const auto truth = testutil::random_mask(24, 24, 9, 0.5);
    save_mask_png(a / "x.png", pred);
    save_mask_png(b / "x.png", truth);
    REQUIRE(run_cli({"evaluate", "--pred", a.string(), "--truth", b.string(), "--out",
                     (root / "out").string()}) == 0);
    std::ifstream in(root / "out" / "report.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    std::vector<double> got;
    std::size_t pos = row.find(',');
    while (pos != std::string::npos) {
        const auto next = row.find(',', pos + 1);
        got.push_back(std::stod(row.substr(pos + 1, next - pos - 1)));
        pos = next;
    }
    REQUIRE(got.size() == 3);
    CHECK(got[0] == Catch::Approx(iou(pred, truth)).epsilon(1e-9));
    CHECK(got[1] == Catch::Approx(dice(pred, truth)).epsilon(1e-9));
    CHECK(got[2] == Catch::Approx(mae(pred, truth)).epsilon(1e-9));
}

TEST_CASE("evaluate of identical masks reports perfect scores") {
    const auto root = testutil::fresh_dir("cli_eval_id");
    const auto a = root / "a";
    const auto b = root / "b";
    std::filesystem::create_directories(a);
    std::filesystem::create_directories(b);
    const auto mask = testutil::random_mask(32, 32, 4, 0.4);
    save_mask_png(a / "m.png", mask);
    save_mask_png(b / "m.png", mask);
    REQUIRE(run_cli({"evaluate", "--pred", a.string(), "--truth", b.string(), "--out",
                     (root / "out").string()}) == 0);
    const auto report = slurp(root / "out" / "report.csv");
    CHECK(report.find("mean,1,1,0") != std::string::npos);
}

TEST_CASE("prepare with --isodata synthesizes masks and records levels") {
    const auto root = testutil::fresh_dir("cli_isodata");
    const auto data = root / "data";
    std::filesystem::create_directories(data / "images");
    std::filesystem::create_directories(data / "masks"); // present but empty
    for (int i = 0; i < 3; ++i) {
        const auto s = testutil::disk_sample(64, 600 + i);
        save_png_gray8(data / "images" / ("img" + std::to_string(i) + ".png"), s.image);
    }
    const auto prepared = root / "prepared";
    const auto cfg = write_config(root, data, prepared);
    REQUIRE(run_cli({"prepare", "--config", cfg.string(), "--out", prepared.string(),
                     "--isodata"}) == 0);
    const auto manifest = nlohmann::json::parse(slurp(prepared / "manifest.json"));
    CHECK(manifest["mask_source"] == "isodata");
    CHECK(manifest["isodata_levels"].size() == 3);
    for (const auto& [name, level] : manifest["isodata_levels"].items()) {
        CHECK(level.get<int>() > 55);  // between the two intensity modes
        CHECK(level.get<int>() < 195);
    }
    CHECK(std::filesystem::exists(prepared / "generated_masks" / "img0.png"));

    // global mode records one pooled level
    const auto prepared2 = root / "prepared_global";
    REQUIRE(run_cli({"prepare", "--config", cfg.string(), "--out", prepared2.string(), "--isodata",
                     "--isodata-global"}) == 0);
    const auto manifest2 = nlohmann::json::parse(slurp(prepared2 / "manifest.json"));
    CHECK(manifest2["mask_source"] == "isodata-global");
    CHECK(manifest2.contains("isodata_global_level"));
}

TEST_CASE("train without a prepared dataset is a layout error (exit 2)") {
    const auto root = testutil::fresh_dir("cli_noprep");
    const auto data = root / "data";
    testutil::write_disk_dataset(data, 2, 64, 1);
    const auto cfg = write_config(root, data, root / "missing_prepared");
    CHECK(run_cli({"train", "--config", cfg.string(), "--out", (root / "out").string()}) == 2);
}

TEST_CASE("prepare without masks and without --isodata is a layout error") {
    const auto root = testutil::fresh_dir("cli_nomask");
    std::filesystem::create_directories(root / "data" / "images");
    save_png_gray8(root / "data" / "images" / "a.png", testutil::random_gray(64, 64, 2));
    const auto cfg = write_config(root, root / "data", root / "prepared");
    CHECK(run_cli({"prepare", "--config", cfg.string(), "--out", (root / "prepared").string()}) ==
          2);
}

TEST_CASE("infer over a directory reports broken files and flags partial failure") {
    const auto root = testutil::fresh_dir("cli_partial");
    const auto data = root / "data";
    testutil::write_disk_dataset(data, 6, 64, 41);
    const auto prepared = root / "prepared";
    auto cfg = write_config(root, data, prepared);
    REQUIRE(run_cli({"prepare", "--config", cfg.string(), "--out", prepared.string()}) == 0);
    const auto train_out = root / "train";
    REQUIRE(run_cli({"train", "--config", cfg.string(), "--out", train_out.string()}) == 0);

    const auto queries = root / "queries";
    std::filesystem::create_directories(queries);
    for (int i = 0; i < 3; ++i)
        save_png_gray8(queries / ("q" + std::to_string(i) + ".png"),
                       testutil::disk_sample(64, 70 + i).image);
    std::ofstream(queries / "broken.png") << "not a png";

    const auto cfg_ck = write_config(root, data, prepared, train_out / "best.ckpt");
    const auto out = root / "infer";
    CHECK(run_cli({"infer", queries.string(), "--config", cfg_ck.string(), "--out",
                   out.string()}) == exit_code_partial_failure);
    for (int i = 0; i < 3; ++i)
        CHECK(std::filesystem::exists(out / ("q" + std::to_string(i) + "_mask.png")));
    CHECK(!std::filesystem::exists(out / "broken_mask.png"));
}

TEST_CASE("checkpoint/config mismatch at infer time exits with the incompatibility code") {
    const auto root = testutil::fresh_dir("cli_mismatch");
    const auto data = root / "data";
    testutil::write_disk_dataset(data, 4, 64, 3);
    const auto prepared = root / "prepared";
    auto cfg = write_config(root, data, prepared);
    REQUIRE(run_cli({"prepare", "--config", cfg.string(), "--out", prepared.string()}) == 0);
    const auto train_out = root / "train";
    REQUIRE(run_cli({"train", "--config", cfg.string(), "--out", train_out.string()}) == 0);

    // same checkpoint, different architecture in the config
    const auto img = root / "q.png";
    save_png_gray8(img, testutil::disk_sample(64, 8).image);
    std::string text = slurp(cfg);
    const auto pos = text.find("decoder_mlp_dim = 32");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, std::string("decoder_mlp_dim = 32").size(), "decoder_mlp_dim = 64");
    const auto cfg2 = root / "other.ini";
    std::ofstream(cfg2) << text << "\n[run]\ncheckpoint = " << (train_out / "best.ckpt").string()
                        << "\n";
    CHECK(run_cli({"infer", img.string(), "--config", cfg2.string(), "--out",
                   (root / "out").string()}) == 4);
}

TEST_CASE("unknown subcommand or missing required flags fail without throwing") {
    CHECK(run_cli({"prepare", "--config", "/nonexistent.ini"}) == 10); // io error
    CHECK(run_cli({}) != 0);
}
