#include <doctest.h>

#include <cstdlib>
#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "helpers.hpp"
#include "sadreg/io.hpp"

namespace fs = std::filesystem;
using namespace sadreg;

namespace {

int sh(const std::string &args, const fs::path &log) {
    const std::string cmd = std::string("\"") + SADREG_CLI_PATH + "\" " + args + " >\"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t count_ext(const fs::path &dir, const std::string &ext) {
    std::size_t n = 0;
    for (const auto &e : fs::recursive_directory_iterator(dir))
        if (e.path().extension() == ext) ++n;
    return n;
}

std::size_t lines(const fs::path &p) {
    const std::string s = io::read_text(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// Small corpus plus a one-epoch model shared by the cases below.
struct Fixture {
    fs::path root, data, trained;
    Fixture() {
        root = testing::scratch_dir("cli");
        data = root / "data";
        trained = root / "train";
        REQUIRE(sh("gen --seed 1 --pairs 10 --size 32 --out \"" + data.string() + "\"", root / "gen.log") == 0);
        REQUIRE(sh("train --epochs 1 --batch-size 4 --base-channels 4 --scene-channels 8 --appearance-channels 4 "
                   "--data \"" + data.string() + "\" --out \"" + trained.string() + "\"",
                   root / "train.log") == 0);
    }
};

const Fixture &fixture() {
    static Fixture f;
    return f;
}

} // namespace

TEST_CASE("gen writes the corpus and is reproducible") {
    const auto &f = fixture();
    CHECK(count_ext(f.data, ".sart") == 30);
    CHECK(fs::exists(f.data / "manifest.json"));
    const fs::path again = f.root / "data2";
    REQUIRE(sh("gen --seed 1 --pairs 10 --size 32 --out \"" + again.string() + "\"", f.root / "gen2.log") == 0);
    CHECK(io::read_text(again / "manifest.json") == io::read_text(f.data / "manifest.json"));
    CHECK(io::read_text(again / "pair_0007" / "image_b.sart") == io::read_text(f.data / "pair_0007" / "image_b.sart"));
}

TEST_CASE("gen rejects bad sizes") {
    const auto &f = fixture();
    CHECK(sh("gen --pairs 2 --size 13 --out \"" + (f.root / "bad").string() + "\"", f.root / "bad.log") == 2);
    CHECK(sh("gen --bogus-flag", f.root / "bad2.log") == 2);
}

TEST_CASE("train writes a loss row per step and checkpoints") {
    const auto &f = fixture();
    CHECK(lines(f.trained / "loss.csv") == 1 + 3); // header + ceil(10 / 4)
    CHECK(fs::exists(f.trained / "checkpoint" / "checkpoint.txt"));
    CHECK(fs::exists(f.trained / "run_manifest.txt"));
    const fs::path noalign = f.root / "noalign";
    CHECK(sh("train --epochs 1 --max-steps 1 --lambda-align 0 --base-channels 4 --scene-channels 8 "
             "--appearance-channels 4 --data \"" + f.data.string() + "\" --out \"" + noalign.string() + "\"",
             f.root / "noalign.log") == 0);
    CHECK(io::read_text(noalign / "run_manifest.txt").find("loss.lambda_align = 0") != std::string::npos);
    CHECK(sh("train --data \"" + (f.root / "missing").string() + "\"", f.root / "missing.log") == 2);
}

TEST_CASE("identity eval leaves the misalignment unchanged") {
    const auto &f = fixture();
    const fs::path out = f.root / "identity";
    REQUIRE(sh("eval --mode identity --data \"" + f.data.string() + "\" --out \"" + out.string() + "\"",
               f.root / "identity.log") == 0);
    const auto j = nlohmann::json::parse(io::read_text(out / "summary.json"));
    CHECK(j.at("median_rtre_final").get<double>() == j.at("median_rtre_initial").get<double>());
    CHECK(j.at("robustness").get<double>() == 0.0);
    CHECK(j.at("mode") == "identity");
}

TEST_CASE("full and rerender-only eval") {
    const auto &f = fixture();
    const std::string ck = (f.trained / "checkpoint").string();
    const fs::path full = f.root / "full", rr = f.root / "rerender";
    CHECK(sh("eval --mode full --field-iterations 20 --data \"" + f.data.string() + "\" --checkpoint \"" + ck +
                 "\" --out \"" + full.string() + "\"",
             f.root / "full.log") == 0);
    CHECK(lines(full / "pairs.csv") == 11);
    CHECK(fs::exists(full / "fields.csv"));
    CHECK(sh("eval --mode rerender-only --data \"" + f.data.string() + "\" --checkpoint \"" + ck + "\" --out \"" +
                 rr.string() + "\"",
             f.root / "rr.log") == 0);
    CHECK(lines(rr / "pairs.csv") == 11);
    CHECK(sh("eval --mode full --data \"" + f.data.string() + "\" --out \"" + (f.root / "x").string() + "\"",
             f.root / "nock.log") == 2);
    CHECK(sh("eval --mode sideways --data \"" + f.data.string() + "\"", f.root / "mode.log") == 2);
}

TEST_CASE("render writes previews") {
    const auto &f = fixture();
    const fs::path out = f.root / "render";
    REQUIRE(sh("render --pair-id pair_0003 --data \"" + f.data.string() + "\" --checkpoint \"" +
                   (f.trained / "checkpoint").string() + "\" --out \"" + out.string() + "\"",
               f.root / "render.log") == 0);
    CHECK(count_ext(out, ".pgm") == 6);
    CHECK(io::read_pgm(out / "b_to_a.pgm").shape() == Shape{1, 1, 32, 32});
    CHECK(sh("render --pair-id pair_0999 --data \"" + f.data.string() + "\" --checkpoint \"" +
                 (f.trained / "checkpoint").string() + "\" --out \"" + out.string() + "\"",
             f.root / "render2.log") == 2);
}

TEST_CASE("gradcheck exit codes") {
    const auto &f = fixture();
    CHECK(sh("gradcheck --scope losses --out \"" + (f.root / "gc").string() + "\"", f.root / "gc.log") == 0);
    CHECK(sh("gradcheck --scope ops --tol 0 --out \"" + (f.root / "gc0").string() + "\"", f.root / "gc0.log") == 1);
    CHECK(sh("gradcheck --scope nowhere", f.root / "gc2.log") == 2);
}
