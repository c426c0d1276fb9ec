#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "vdsk/io.hpp"
#include "vdsk/synth.hpp"

using namespace vdsk;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("vdsk_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("u8 quantization maps the endpoints exactly") {
    CHECK(float_to_u8(-1.0f) == 0);
    CHECK(float_to_u8(1.0f) == 255);
    CHECK(u8_to_float(0) == doctest::Approx(-1.0f));
    CHECK(u8_to_float(255) == doctest::Approx(1.0f));
    for (int b = 0; b < 256; ++b)
        CHECK(float_to_u8(u8_to_float(static_cast<uint8_t>(b))) == b);
}

TEST_CASE("vclip round trip preserves rendered clips exactly") {
    fs::path dir = temp_dir("vclip");
    ClipSpec spec = sample_spec(3, {8});
    VideoClip clip = render_clip(spec);
    write_vclip(dir / "a.vclip", clip);
    VideoClip back = read_vclip(dir / "a.vclip");
    REQUIRE(back.data.shape == clip.data.shape);
    CHECK(max_abs_diff(back.data, clip.data) == 0.0);

    // container header
    std::string bytes = slurp(dir / "a.vclip");
    CHECK(bytes.substr(0, 4) == "VCLP");
    CHECK(bytes.size() == 4 + 4 + 16 + 1 + 8 * 3 * 32 * 32);
}

TEST_CASE("ppm export writes one P6 file per frame") {
    fs::path dir = temp_dir("ppm");
    VideoClip clip = render_clip(sample_spec(5, {4}));
    write_ppm_frames(dir, clip);
    for (int t = 0; t < 4; ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.ppm", t);
        REQUIRE(fs::exists(dir / name));
        std::string bytes = slurp(dir / name);
        CHECK(bytes.substr(0, 2) == "P6");
    }
    CHECK(!fs::exists(dir / "frame_0004.ppm"));
}

TEST_CASE("checkpoint round trip is byte-identical") {
    fs::path dir = temp_dir("ckpt");
    Rng rng(9);
    Tensor a = Tensor::randn(rng, {3, 4});
    Tensor b = Tensor::randn(rng, {5});
    save_checkpoint(dir / "x.ckpt", "UVIT", {{"k", "v"}, {"n", "2"}},
                    {{"a", &a}, {"b", &b}});
    LoadedCheckpoint ck = load_checkpoint(dir / "x.ckpt");
    CHECK(ck.tag == "UVIT");
    CHECK(ck.metadata.at("k") == "v");
    REQUIRE(ck.tensors.size() == 2);
    CHECK(max_abs_diff(*ck.find("a"), a) == 0.0);
    CHECK(max_abs_diff(*ck.find("b"), b) == 0.0);

    // save -> load -> save produces identical bytes
    std::vector<NamedTensorRef> refs;
    for (auto& [name, t] : ck.tensors) refs.push_back({name, &t});
    save_checkpoint(dir / "y.ckpt", ck.tag, ck.metadata, refs);
    CHECK(slurp(dir / "x.ckpt") == slurp(dir / "y.ckpt"));
}

TEST_CASE("config parser enforces the grammar") {
    Config cfg = parse_config_text("config_version = 1\n# comment\nsteps = 10 # tail\nlr = 0.5\n");
    CHECK(cfg.require_int("steps") == 10);
    CHECK(cfg.get_real("lr", 0.0) == doctest::Approx(0.5));
    CHECK(cfg.get_int("absent", 3) == 3);

    CHECK_THROWS_AS(parse_config_text("steps = 10\n"), std::invalid_argument);  // no version
    CHECK_THROWS_AS(parse_config_text("config_version = 1\nbroken line\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("config_version = 1\na = 1\na = 2\n"), std::invalid_argument);
    CHECK_THROWS_AS(cfg.require_int("lr"), std::invalid_argument);

    Config strict = parse_config_text("config_version = 1\nfoo = 1\n");
    CHECK_THROWS_AS(strict.restrict_keys({"bar"}), std::invalid_argument);
    CHECK_NOTHROW(strict.restrict_keys({"foo"}));
}

TEST_CASE("corpus dir round trip") {
    fs::path dir = temp_dir("corpus");
    auto items = build_corpus(5, 77, {1, 4, 8, 16});
    write_corpus_dir(dir, items);
    auto back = load_corpus_dir(dir);
    REQUIRE(back.size() == items.size());
    for (size_t i = 0; i < items.size(); ++i) {
        CHECK(back[i].spec == items[i].spec);
        CHECK(back[i].caption == items[i].caption);
        CHECK(max_abs_diff(back[i].clip.data, items[i].clip.data) == 0.0);
    }
}

TEST_CASE("synonym table round trip") {
    fs::path dir = temp_dir("syn");
    SynonymTable table = default_synonyms();
    save_synonyms(dir / "syn.tsv", table);
    CHECK(load_synonyms(dir / "syn.tsv") == table);
}

TEST_CASE("run directories append with suffix indexing") {
    fs::path dir = temp_dir("runs");
    fs::path r1 = next_run_dir(dir, "sample");
    fs::path r2 = next_run_dir(dir, "sample");
    CHECK(r1.filename() == "sample-0001");
    CHECK(r2.filename() == "sample-0002");
    CHECK(fs::exists(r1));
    CHECK(fs::exists(r2));
}
