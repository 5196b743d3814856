#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "textpix/dataset.hpp"
#include "textpix/image_io.hpp"
#include "textpix/model.hpp"

using namespace textpix;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const char* name) {
    const auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_solid_png(const fs::path& path, float r, float g, float b, std::int64_t size = 16) {
    Tensor<float> img({3, size, size}, 0.0f);
    for (std::int64_t i = 0; i < size * size; ++i) {
        img[i] = r;
        img[size * size + i] = g;
        img[2 * size * size + i] = b;
    }
    save_image(img, path);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("load_manifest parses rows and assigns classes by first appearance") {
    const auto dir = temp_dir("textpix_manifest_ok");
    write_solid_png(dir / "a.png", 1.0f, 0.0f, 0.0f);
    write_solid_png(dir / "b.png", 0.0f, 1.0f, 0.0f);
    write_text(dir / "data.tsv",
               "hammer\ta.png\theavy duty hammer\n"
               "screw\tb.png\tsmall brass screw\n"
               "hammer\ta.png\tanother hammer text\n");

    const auto manifest = load_manifest(dir / "data.tsv");
    REQUIRE(manifest.rows.size() == 3);
    CHECK(manifest.num_classes() == 2);
    CHECK(manifest.class_names == std::vector<std::string>{"hammer", "screw"});
    CHECK(manifest.class_index.at("hammer") == 0);
    CHECK(manifest.class_index.at("screw") == 1);
    CHECK(manifest.rows[1].text == "small brass screw");

    // Order-stable across reloads.
    const auto again = load_manifest(dir / "data.tsv");
    CHECK(again.class_names == manifest.class_names);
    for (std::size_t i = 0; i < 3; ++i) CHECK(again.rows[i].text == manifest.rows[i].text);
}

TEST_CASE("load_manifest reports the offending line") {
    const auto dir = temp_dir("textpix_manifest_bad");
    write_solid_png(dir / "a.png", 1.0f, 0.0f, 0.0f);

    write_text(dir / "two_cols.tsv", "hammer\ta.png\tok text\nscrew\tonly-two-cols\n");
    try {
        load_manifest(dir / "two_cols.tsv");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }

    write_text(dir / "missing_img.tsv", "hammer\tnope.png\tsome text\n");
    CHECK_THROWS_AS(load_manifest(dir / "missing_img.tsv"), DataError);

    write_text(dir / "empty.tsv", "\n\n");
    CHECK_THROWS_AS(load_manifest(dir / "empty.tsv"), DataError);

    CHECK_THROWS_AS(load_manifest(dir / "does_not_exist.tsv"), DataError);
}

TEST_CASE("solid color PNG round trip") {
    const auto dir = temp_dir("textpix_image_solid");
    write_solid_png(dir / "red.png", 1.0f, 0.0f, 0.0f, 100);
    const auto img = load_image<float>(dir / "red.png", 100, 100);
    CHECK(img.shape() == Shape{3, 100, 100});
    for (std::int64_t i = 0; i < 100 * 100; ++i) {
        CHECK(img[i] == 1.0f);
        CHECK(img[100 * 100 + i] == 0.0f);
        CHECK(img[2 * 100 * 100 + i] == 0.0f);
    }
}

TEST_CASE("load_image resizes to the target") {
    const auto dir = temp_dir("textpix_image_resize");
    write_solid_png(dir / "big.png", 0.25f, 0.5f, 0.75f, 200);
    const auto img = load_image<float>(dir / "big.png", 100, 100);
    CHECK(img.shape() == Shape{3, 100, 100});
    // Solid input stays solid under bilinear resampling.
    CHECK(img[0] == doctest::Approx(0.25f).epsilon(0.01));
    CHECK(img[100 * 100] == doctest::Approx(0.5f).epsilon(0.01));
}

TEST_CASE("save then load stays within quantization error") {
    const auto dir = temp_dir("textpix_image_quant");
    Rng rng(5);
    const auto original = random_uniform<float>(rng, {3, 32, 32}, 0.0f, 1.0f);
    save_image(original, dir / "x.png");
    const auto loaded = load_image<float>(dir / "x.png", 32, 32);
    for (std::int64_t i = 0; i < original.size(); ++i) {
        CHECK(std::abs(loaded[i] - original[i]) <= 1.0f / 255.0f);
    }
}

TEST_CASE("save_image applies round(v*255)") {
    const auto dir = temp_dir("textpix_image_round");
    save_image(Tensor<float>({3, 4, 4}, 0.5f), dir / "half.png");
    const auto raw = read_image_file(dir / "half.png");
    for (const auto byte : raw.rgb) CHECK(static_cast<int>(byte) == 128);
}

TEST_CASE("save_image rejects out-of-range values") {
    const auto dir = temp_dir("textpix_image_range");
    CHECK_THROWS_AS(save_image(Tensor<float>({3, 2, 2}, 1.5f), dir / "bad.png"), ContractError);
    Tensor<float> neg({3, 2, 2}, 0.0f);
    neg[0] = -0.1f;
    CHECK_THROWS_AS(save_image(neg, dir / "bad.png"), ContractError);
}

TEST_CASE("corrupt image files are rejected") {
    const auto dir = temp_dir("textpix_image_corrupt");
    write_text(dir / "fake.png", "\x89PNGnot really a png at all");
    CHECK_THROWS_AS(read_image_file(dir / "fake.png"), DataError);
    write_text(dir / "noise.bin", "plain text");
    CHECK_THROWS_AS(read_image_file(dir / "noise.bin"), DataError);
}

TEST_CASE("load_dataset wires docs, labels and images together") {
    const auto dir = temp_dir("textpix_dataset_load");
    write_solid_png(dir / "a.png", 0.8f, 0.1f, 0.1f);
    write_solid_png(dir / "b.png", 0.1f, 0.8f, 0.1f);
    write_text(dir / "data.tsv",
               "hammer\ta.png\theavy duty hammer forged steel\n"
               "screw\tb.png\tsmall brass screw pack\n");
    const auto manifest = load_manifest(dir / "data.tsv");
    const auto vocab = Vocabulary::build(manifest_tokens(manifest), 1);
    const auto data = load_dataset<float>(manifest, vocab, 8, 16, 16);

    REQUIRE(data.size() == 2);
    CHECK(data.num_classes == 2);
    CHECK(data.samples[0].label == 0);
    CHECK(data.samples[1].label == 1);
    CHECK(data.samples[0].doc.length() == 8);
    CHECK(data.samples[0].image.shape() == Shape{3, 16, 16});
    for (std::int64_t i = 0; i < data.samples[0].image.size(); ++i) {
        CHECK(data.samples[0].image[i] >= 0.0f);
        CHECK(data.samples[0].image[i] <= 1.0f);
    }
}

TEST_CASE("validation split is deterministic and sized by ceil") {
    Dataset<float> data;
    data.num_classes = 2;
    for (int i = 0; i < 10; ++i) {
        Sample<float> s;
        s.label = i % 2;
        s.image = Tensor<float>({3, 2, 2}, static_cast<float>(i) / 10.0f);
        s.doc.ids.assign(5, 0);
        data.samples.push_back(std::move(s));
    }

    auto [train1, val1] = split_validation(data, 0.25, 7);
    CHECK(val1.size() == 3);  // ceil(2.5)
    CHECK(train1.size() == 7);

    auto [train2, val2] = split_validation(data, 0.25, 7);
    for (std::int64_t i = 0; i < val1.size(); ++i) {
        CHECK(val1.samples[static_cast<std::size_t>(i)].image[0] ==
              val2.samples[static_cast<std::size_t>(i)].image[0]);
    }

    auto [train3, val3] = split_validation(data, 0.0, 7);
    CHECK(val3.size() == 0);
    CHECK(train3.size() == 10);

    CHECK_THROWS_AS(split_validation(data, 1.0, 7), ConfigError);
}

TEST_CASE("mix_tokens endpoints are exact") {
    const std::vector<std::string> a{"red", "heavy", "hammer", "steel"};
    const std::vector<std::string> b{"small", "brass", "screw"};

    CHECK(mix_tokens({a, b, 1.0, 0}) == a);
    CHECK(mix_tokens({a, b, 0.0, 0}) == b);
}

TEST_CASE("mix_tokens takes prefixes in order") {
    const std::vector<std::string> a{"a1", "a2", "a3", "a4"};
    const std::vector<std::string> b{"b1", "b2", "b3", "b4"};
    const auto mixed = mix_tokens({a, b, 0.5, 0});
    CHECK(mixed == std::vector<std::string>{"a1", "a2", "b1", "b2"});
}

TEST_CASE("mix_tokens length follows the ceiling rule") {
    const std::vector<std::string> a(7, "a");
    const std::vector<std::string> b(5, "b");
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        const double alpha = static_cast<double>(rng.next_u64() % 1025) / 1024.0;
        const auto mixed = mix_tokens({a, b, alpha, 0});
        const auto want_a = static_cast<std::size_t>(std::ceil(alpha * 7.0 - 1e-9));
        const auto want_b = static_cast<std::size_t>(std::ceil((1.0 - alpha) * 5.0 - 1e-9));
        CHECK(mixed.size() == want_a + want_b);
    }
}

TEST_CASE("mix_tokens contract errors") {
    const std::vector<std::string> a{"x"};
    CHECK_THROWS_AS(mix_tokens({{}, a, 0.5, 0}), ContractError);
    CHECK_THROWS_AS(mix_tokens({a, {}, 0.5, 0}), ContractError);
    CHECK_THROWS_AS(mix_tokens({a, a, -0.1, 0}), ContractError);
    CHECK_THROWS_AS(mix_tokens({a, a, 1.1, 0}), ContractError);
}

TEST_CASE("sanitize_label strips awkward characters") {
    CHECK(sanitize_label("Drill Bits & Sets") == "Drill_Bits___Sets");
    CHECK(sanitize_label("plain-label_9") == "plain-label_9");
}

TEST_CASE("export_encodings writes one decodable PNG per row plus a manifest") {
    const auto dir = temp_dir("textpix_export_src");
    write_solid_png(dir / "a.png", 0.9f, 0.1f, 0.1f);
    write_solid_png(dir / "b.png", 0.1f, 0.9f, 0.1f);
    write_text(dir / "data.tsv",
               "hammer\ta.png\theavy duty hammer forged steel\n"
               "screw\tb.png\tsmall brass screw pack\n"
               "screw\tb.png\tsmall brass screw pack\n");
    const auto manifest = load_manifest(dir / "data.tsv");
    const auto vocab = Vocabulary::build(manifest_tokens(manifest), 1);

    auto cfg = ModelConfig::tiny(2);
    Rng rng(13);
    auto model = Model<float>::build(cfg, vocab.size(), rng);

    const auto out_dir = temp_dir("textpix_export_out");
    const auto exported = export_encodings(model, manifest, vocab, out_dir, "sum");

    REQUIRE(exported.rows.size() == 3);
    CHECK(fs::exists(out_dir / "manifest_sum.tsv"));
    for (const auto& row : exported.rows) {
        const auto img = load_image<float>(out_dir / row.image_path, 32, 32);
        CHECK(img.shape() == Shape{3, 32, 32});
    }
    CHECK(exported.rows[0].image_path == "000000_hammer.png");
    CHECK(exported.rows[1].image_path == "000001_screw.png");

    // Identical texts encode to identical files; distinct texts differ.
    CHECK(slurp(out_dir / exported.rows[1].image_path) ==
          slurp(out_dir / exported.rows[2].image_path));
    CHECK(slurp(out_dir / exported.rows[0].image_path) !=
          slurp(out_dir / exported.rows[1].image_path));

    // The emitted manifest loads as a plain image dataset.
    const auto reloaded = load_manifest(out_dir / "manifest_sum.tsv");
    CHECK(reloaded.rows.size() == 3);
    CHECK(reloaded.num_classes() == 2);
}
