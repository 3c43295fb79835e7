// Command-line entry points: gen, train, eval, render, gradcheck.
//
// Exit codes: 0 success, 1 check failure, 2 usage or configuration error, 3 numeric failure.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sadreg/checks.hpp"
#include "sadreg/io.hpp"
#include "sadreg/metrics.hpp"
#include "sadreg/registration.hpp"
#include "sadreg/synth.hpp"
#include "sadreg/trainer.hpp"

namespace fs = std::filesystem;
using namespace sadreg;

namespace {

constexpr int kOk = 0, kCheckFailed = 1, kUsage = 2, kNumeric = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

fs::path output_dir(const std::string &flag, const char *command) {
    if (!flag.empty()) {
        return flag;
    }
    const char *root = std::getenv("SADREG_OUTPUT_ROOT");
    return fs::path(root && *root ? root : "runs") / command;
}

void write_run_manifest(const fs::path &dir, const std::string &command, io::KeyValues kv) {
    kv["command"] = command;
    kv["sadreg.version"] = "0.1.0";
    io::write_key_values(dir / "run_manifest.txt", kv);
}

io::Corpus open_corpus(const std::string &dir) {
    if (dir.empty() || !fs::is_directory(dir)) {
        throw UsageError("corpus directory not found: " + dir);
    }
    try {
        return io::read_corpus(dir);
    } catch (const io::DatasetError &e) {
        throw UsageError(e.what());
    }
}

io::Checkpoint open_checkpoint(const std::string &path, const io::Corpus &corpus) {
    io::Checkpoint ck;
    try {
        ck = io::load_checkpoint(path);
    } catch (const io::DatasetError &e) {
        throw UsageError(e.what());
    } catch (const std::invalid_argument &e) {
        throw UsageError(std::string("checkpoint config: ") + e.what());
    }
    if (ck.model.config.image_size != corpus.image_size || ck.model.config.in_channels != 1) {
        throw UsageError("checkpoint expects " + std::to_string(ck.model.config.image_size) + "x" +
                         std::to_string(ck.model.config.image_size) + " single-channel images, corpus has " +
                         std::to_string(corpus.image_size) + "x" + std::to_string(corpus.image_size));
    }
    return ck;
}

// ---- gen

struct GenArgs {
    std::uint64_t seed = 0;
    std::size_t pairs = 200;
    std::string out;
    bool pgm = false;
    synth::SynthConfig config;
};

int run_gen(const GenArgs &a) {
    if (a.config.size % 8 != 0) {
        throw UsageError("--size must be divisible by 8 (three 2x pooling levels), got " +
                         std::to_string(a.config.size));
    }
    if (a.pairs == 0) {
        throw UsageError("--pairs must be >= 1");
    }
    try {
        a.config.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    const fs::path out = output_dir(a.out, "gen");
    std::vector<synth::SyntheticPair> pairs;
    for (std::size_t i = 0; i < a.pairs; ++i) {
        pairs.push_back(synth::make_pair(synth::pair_seed(a.seed, i), a.config));
    }
    io::write_corpus(out, pairs, a.config, a.seed, a.pgm);
    const auto &c = a.config;
    write_run_manifest(out, "gen",
                       {{"seed", std::to_string(a.seed)},
                        {"pairs", std::to_string(a.pairs)},
                        {"size", std::to_string(c.size)},
                        {"landmarks", std::to_string(c.landmarks)},
                        {"blobs", std::to_string(c.blobs)},
                        {"pgm", a.pgm ? "true" : "false"},
                        {"warp.max_rotation", io::format_double(c.warp.max_rotation)},
                        {"warp.max_scale_delta", io::format_double(c.warp.max_scale_delta)},
                        {"warp.max_translation", io::format_double(c.warp.max_translation)},
                        {"warp.bumps", std::to_string(c.warp.bumps)},
                        {"warp.max_bump_amplitude", io::format_double(c.warp.max_bump_amplitude)},
                        {"warp.bump_width", io::format_double(c.warp.bump_width)},
                        {"warp.max_displacement", io::format_double(c.warp.max_displacement)},
                        {"appearance.gamma_min", io::format_double(c.appearance.gamma_min)},
                        {"appearance.gamma_max", io::format_double(c.appearance.gamma_max)},
                        {"appearance.slope_max", io::format_double(c.appearance.slope_max)},
                        {"appearance.center_min", io::format_double(c.appearance.center_min)},
                        {"appearance.center_max", io::format_double(c.appearance.center_max)},
                        {"appearance.max_offset", io::format_double(c.appearance.max_offset)},
                        {"appearance.noise_std", io::format_double(c.appearance.noise_std)},
                        {"out", out.string()}});
    std::cout << "wrote " << a.pairs << " pairs to " << out.string() << "\n";
    return kOk;
}

// ---- train

struct TrainArgs {
    std::string data, out;
    std::size_t checkpoint_every = 0;
    train::TrainConfig cfg;
};

io::KeyValues train_echo(const train::TrainConfig &cfg) {
    io::KeyValues kv = io::to_key_values(cfg.model);
    kv.merge(io::to_key_values(cfg.weights));
    kv["train.learning_rate"] = io::format_double(cfg.learning_rate);
    kv["train.batch_size"] = std::to_string(cfg.batch_size);
    kv["train.epochs"] = std::to_string(cfg.epochs);
    kv["train.seed"] = std::to_string(cfg.seed);
    kv["train.beta1"] = io::format_double(cfg.beta1);
    kv["train.beta2"] = io::format_double(cfg.beta2);
    kv["train.adam_eps"] = io::format_double(cfg.adam_eps);
    kv["train.max_steps"] = std::to_string(cfg.max_steps);
    return kv;
}

io::CheckpointMeta checkpoint_meta(const train::TrainConfig &cfg, std::size_t epochs,
                                   const std::vector<loss::LossReport> &history) {
    io::CheckpointMeta meta;
    meta.epoch = epochs;
    meta.step = history.size();
    meta.seed = cfg.seed;
    for (const auto &r : history) {
        meta.loss_history.push_back(r.total);
    }
    meta.extra = io::to_key_values(cfg.weights);
    return meta;
}

int run_train(TrainArgs a) {
    const io::Corpus corpus = open_corpus(a.data);
    const fs::path out = output_dir(a.out, "train");
    a.cfg.model.image_size = corpus.image_size;
    a.cfg.model.in_channels = 1;
    a.cfg.model.seed = a.cfg.seed;
    try {
        a.cfg.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    if (corpus.image_size % (std::size_t{1} << a.cfg.model.levels) != 0) {
        throw UsageError("corpus image size is not divisible by 2^levels");
    }
    std::vector<Tensor> images_a, images_b;
    for (const auto &p : corpus.pairs) {
        images_a.push_back(p.image_a);
        images_b.push_back(p.image_b);
    }
    fs::create_directories(out);
    io::KeyValues echo = train_echo(a.cfg);
    echo["data"] = a.data;
    echo["data.manifest_hash"] = io::git_blob_hash(corpus.manifest_text);
    echo["checkpoint_every"] = std::to_string(a.checkpoint_every);
    echo["out"] = out.string();
    write_run_manifest(out, "train", echo);

    std::ofstream csv(out / "loss.csv", std::ios::binary);
    csv << loss::LossReport::csv_header() << "\n";
    train::TrainHooks hooks;
    hooks.on_step = [&](std::size_t step, std::size_t epoch, const loss::LossReport &r) {
        csv << r.csv_row(step, epoch) << "\n";
        csv.flush();
    };
    hooks.on_epoch_end = [&](std::size_t epochs, const model::Model &m,
                             const std::vector<loss::LossReport> &history) {
        std::fprintf(stderr, "epoch %zu/%zu  loss %.6g\n", epochs, a.cfg.epochs, history.back().total);
        if (a.checkpoint_every != 0 && epochs % a.checkpoint_every == 0) {
            char name[48];
            std::snprintf(name, sizeof name, "checkpoint_epoch_%04zu", epochs);
            io::save_checkpoint(out / name, m, checkpoint_meta(a.cfg, epochs, history));
        }
    };
    try {
        const auto result = train::train(a.cfg, images_a, images_b, hooks);
        io::save_checkpoint(out / "checkpoint", result.model,
                            checkpoint_meta(a.cfg, result.epochs_completed, result.history));
    } catch (const train::TrainingAborted &e) {
        const auto &g = e.last_good;
        io::save_checkpoint(out / "checkpoint", g.model, checkpoint_meta(a.cfg, g.epochs_completed, g.history));
        std::cerr << "training aborted: " << e.what() << "; last good checkpoint kept in "
                  << (out / "checkpoint").string() << "\n";
        return kNumeric;
    }
    std::cout << "checkpoint written to " << (out / "checkpoint").string() << "\n";
    return kOk;
}

// ---- eval

struct FieldArgs {
    reg::FieldConfig cfg;
};

io::KeyValues field_echo(const reg::FieldConfig &c) {
    return {{"field.levels", std::to_string(c.levels)},
            {"field.iterations", std::to_string(c.iterations)},
            {"field.learning_rate", io::format_double(c.learning_rate)},
            {"field.lambda_reg", io::format_double(c.lambda_reg)},
            {"field.max_displacement", io::format_double(c.max_displacement)},
            {"field.objective_threshold", io::format_double(c.objective_threshold)}};
}

struct EvalArgs {
    std::string data, checkpoint, out, mode = "full";
    reg::FieldConfig field;
};

int run_eval(const EvalArgs &a) {
    if (a.mode != "full" && a.mode != "rerender-only" && a.mode != "identity") {
        throw UsageError("--mode must be full, rerender-only or identity");
    }
    try {
        a.field.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    const io::Corpus corpus = open_corpus(a.data);
    if (corpus.pairs.empty()) {
        throw UsageError("corpus has no pairs");
    }
    std::optional<io::Checkpoint> ck;
    if (a.mode != "identity") {
        if (a.checkpoint.empty()) {
            throw UsageError("--checkpoint is required for mode " + a.mode);
        }
        ck = open_checkpoint(a.checkpoint, corpus);
    }
    const fs::path out = output_dir(a.out, "eval");
    fs::create_directories(out);
    io::KeyValues echo = field_echo(a.field);
    echo["mode"] = a.mode;
    echo["data"] = a.data;
    echo["data.manifest_hash"] = io::git_blob_hash(corpus.manifest_text);
    echo["checkpoint"] = a.checkpoint;
    echo["out"] = out.string();
    write_run_manifest(out, "eval", echo);

    if (a.mode == "rerender-only") {
        std::string csv = "pair_id,mse_b_a,mse_btoa_a,ncc_b_a,ncc_btoa_a\n";
        double sums[4] = {0, 0, 0, 0};
        for (const auto &p : corpus.pairs) {
            const auto im = model::evaluate_pair(ck->model, p.image_a, p.image_b);
            if (!im.b_to_a.all_finite()) {
                throw NumericError("non-finite re-rendering for " + p.id);
            }
            ad::Tape tape;
            const double v[4] = {ad::mse(tape.constant(p.image_b), tape.constant(p.image_a)).value().item(),
                                 ad::mse(tape.constant(im.b_to_a), tape.constant(p.image_a)).value().item(),
                                 loss::ncc(p.image_b, p.image_a), loss::ncc(im.b_to_a, p.image_a)};
            csv += p.id;
            for (int k = 0; k < 4; ++k) {
                csv += "," + io::format_double(v[k]);
                sums[k] += v[k];
            }
            csv += "\n";
        }
        const double n = static_cast<double>(corpus.pairs.size());
        nlohmann::ordered_json j = {{"schema_version", metrics::kReportSchemaVersion},
                                    {"mode", a.mode},
                                    {"pairs", corpus.pairs.size()},
                                    {"mean_mse_b_a", sums[0] / n},
                                    {"mean_mse_btoa_a", sums[1] / n},
                                    {"mean_ncc_b_a", sums[2] / n},
                                    {"mean_ncc_btoa_a", sums[3] / n}};
        io::write_text(out / "pairs.csv", csv);
        io::write_text(out / "summary.json", j.dump(2) + "\n");
        std::cout << j.dump(2) << "\n";
        return kOk;
    }

    std::vector<metrics::PairEvaluation> evals;
    std::string fields_csv = "pair_id,converged,initial_objective,final_objective\n";
    for (const auto &p : corpus.pairs) {
        reg::DisplacementField field = reg::DisplacementField::zeros(corpus.image_size, corpus.image_size);
        if (a.mode == "full") {
            const auto im = model::evaluate_pair(ck->model, p.image_a, p.image_b);
            if (!im.b_to_a.all_finite()) {
                throw NumericError("non-finite re-rendering for " + p.id);
            }
            const auto fr = reg::estimate_field(im.b_to_a, p.image_a, a.field);
            field = fr.field;
            fields_csv += p.id + "," + (fr.converged ? "1" : "0") + "," + io::format_double(fr.initial_objective) +
                          "," + io::format_double(fr.final_objective()) + "\n";
        }
        auto e = metrics::evaluate_pair(p.landmarks_a, p.landmarks_b, field);
        e.pair_id = p.id;
        evals.push_back(std::move(e));
    }
    const auto report = metrics::evaluate_corpus(evals);
    auto summary = nlohmann::ordered_json::parse(metrics::summary_json(report));
    summary["mode"] = a.mode;
    io::write_text(out / "pairs.csv", metrics::pairs_csv(evals));
    io::write_text(out / "summary.json", summary.dump(2) + "\n");
    if (a.mode == "full") {
        io::write_text(out / "fields.csv", fields_csv);
    }
    std::cout << summary.dump(2) << "\n";
    return kOk;
}

// ---- render

struct RenderArgs {
    std::string data, checkpoint, out, pair;
    reg::FieldConfig field;
};

int run_render(const RenderArgs &a) {
    const io::Corpus corpus = open_corpus(a.data);
    const io::CorpusPair *pair = nullptr;
    try {
        pair = &corpus.find(a.pair);
    } catch (const io::DatasetError &e) {
        throw UsageError(e.what());
    }
    const io::Checkpoint ck = open_checkpoint(a.checkpoint, corpus);
    const fs::path out = output_dir(a.out, "render");
    const auto im = model::evaluate_pair(ck.model, pair->image_a, pair->image_b);
    for (const Tensor *t : {&im.recon_a, &im.recon_b, &im.b_to_a}) {
        if (!t->all_finite()) {
            throw NumericError("non-finite rendering for " + a.pair);
        }
    }
    const auto fr = reg::estimate_field(im.b_to_a, pair->image_a, a.field);
    io::write_pgm(out / "image_a.pgm", pair->image_a);
    io::write_pgm(out / "image_b.pgm", pair->image_b);
    io::write_pgm(out / "recon_a.pgm", im.recon_a);
    io::write_pgm(out / "recon_b.pgm", im.recon_b);
    io::write_pgm(out / "b_to_a.pgm", im.b_to_a);
    io::write_pgm(out / "field_magnitude.pgm", fr.field.magnitude());
    io::KeyValues echo = field_echo(a.field);
    echo["data"] = a.data;
    echo["data.manifest_hash"] = io::git_blob_hash(corpus.manifest_text);
    echo["checkpoint"] = a.checkpoint;
    echo["pair_id"] = a.pair;
    echo["out"] = out.string();
    write_run_manifest(out, "render", echo);
    std::cout << "wrote 6 images to " << out.string() << "\n";
    return kOk;
}

// ---- gradcheck

int run_gradcheck(const std::string &scope_name, double tol, bool tol_given, const std::string &out_flag) {
    checks::GradScope scope;
    try {
        scope = checks::parse_scope(scope_name);
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    if (!tol_given) {
        tol = checks::default_tolerance(scope);
    }
    if (!(tol >= 0.0)) {
        throw UsageError("--tol must be >= 0");
    }
    const auto cases = checks::run_gradchecks(scope, tol);
    bool ok = true;
    for (const auto &c : cases) {
        std::printf("%-28s max_rel_err %.3e  %s\n", c.name.c_str(), c.report.worst, c.report.pass ? "ok" : "FAIL");
        if (!c.report.pass) {
            std::fprintf(stderr, "gradcheck failed: %s max_rel_err %.6e > tol %.3e\n", c.name.c_str(),
                         c.report.worst, tol);
        }
        ok = ok && c.report.pass;
    }
    if (!out_flag.empty()) {
        write_run_manifest(out_flag, "gradcheck",
                           {{"scope", scope_name}, {"tol", io::format_double(tol)}, {"pass", ok ? "true" : "false"}});
    }
    return ok ? kOk : kCheckFailed;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Appearance-invariant image registration toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    auto *g = app.add_subcommand("gen", "Generate a synthetic pair corpus");
    g->add_option("--seed", gen.seed, "corpus seed");
    g->add_option("--pairs", gen.pairs, "number of pairs");
    g->add_option("--size", gen.config.size, "image side length (multiple of 8)");
    g->add_option("--out", gen.out, "output directory");
    g->add_option("--landmarks", gen.config.landmarks, "landmarks per pair");
    g->add_option("--blobs", gen.config.blobs, "blobs per scene");
    g->add_flag("--pgm", gen.pgm, "also write PGM previews");
    g->add_option("--max-rotation", gen.config.warp.max_rotation, "radians");
    g->add_option("--max-scale-delta", gen.config.warp.max_scale_delta);
    g->add_option("--max-translation", gen.config.warp.max_translation, "pixels");
    g->add_option("--bumps", gen.config.warp.bumps);
    g->add_option("--max-bump-amplitude", gen.config.warp.max_bump_amplitude, "pixels");
    g->add_option("--bump-width", gen.config.warp.bump_width, "pixels");
    g->add_option("--max-displacement", gen.config.warp.max_displacement, "pixels");
    g->add_option("--gamma-min", gen.config.appearance.gamma_min);
    g->add_option("--gamma-max", gen.config.appearance.gamma_max);
    g->add_option("--slope-max", gen.config.appearance.slope_max);
    g->add_option("--center-min", gen.config.appearance.center_min);
    g->add_option("--center-max", gen.config.appearance.center_max);
    g->add_option("--max-offset", gen.config.appearance.max_offset);
    g->add_option("--noise-std", gen.config.appearance.noise_std);

    TrainArgs tr;
    auto *t = app.add_subcommand("train", "Train the model on a corpus");
    t->add_option("--data", tr.data, "corpus directory")->required();
    t->add_option("--out", tr.out, "output directory");
    t->add_option("--epochs", tr.cfg.epochs);
    t->add_option("--seed", tr.cfg.seed, "shuffle and initialization seed");
    t->add_option("--lr", tr.cfg.learning_rate);
    t->add_option("--batch-size", tr.cfg.batch_size);
    t->add_option("--max-steps", tr.cfg.max_steps, "stop after this many steps (0 = no cap)");
    t->add_option("--checkpoint-every", tr.checkpoint_every, "epochs between extra checkpoints (0 = end only)");
    t->add_option("--lambda-scene", tr.cfg.weights.scene);
    t->add_option("--lambda-cycle", tr.cfg.weights.cycle);
    t->add_option("--lambda-align", tr.cfg.weights.align);
    t->add_option("--lambda-cos", tr.cfg.weights.cos);
    t->add_option("--lambda-ncc", tr.cfg.weights.ncc);
    t->add_flag("--symmetric-align", tr.cfg.weights.symmetric_align);
    t->add_option("--base-channels", tr.cfg.model.base_channels);
    t->add_option("--levels", tr.cfg.model.levels);
    t->add_option("--scene-channels", tr.cfg.model.scene_channels);
    t->add_option("--appearance-channels", tr.cfg.model.appearance_channels);
    t->add_option("--appearance-layers", tr.cfg.model.appearance_layers);
    t->add_option("--appearance-kernel", tr.cfg.model.appearance_kernel);
    bool single_modulation = false;
    t->add_flag("--modulate-first-only", single_modulation, "modulate only the first renderer block");

    auto add_field_options = [](CLI::App *sub, reg::FieldConfig &f) {
        sub->add_option("--field-levels", f.levels);
        sub->add_option("--field-iterations", f.iterations);
        sub->add_option("--field-lr", f.learning_rate);
        sub->add_option("--lambda-reg", f.lambda_reg);
        sub->add_option("--field-max-displacement", f.max_displacement);
    };

    EvalArgs ev;
    auto *e = app.add_subcommand("eval", "Register every pair and report rTRE");
    e->add_option("--data", ev.data, "corpus directory")->required();
    e->add_option("--checkpoint", ev.checkpoint, "checkpoint directory or checkpoint.txt");
    e->add_option("--out", ev.out, "output directory");
    e->add_option("--mode", ev.mode, "full | rerender-only | identity");
    add_field_options(e, ev.field);

    RenderArgs rd;
    auto *r = app.add_subcommand("render", "Export PGM previews for one pair");
    r->add_option("--data", rd.data, "corpus directory")->required();
    r->add_option("--checkpoint", rd.checkpoint)->required();
    r->add_option("--pair-id", rd.pair)->required();
    r->add_option("--out", rd.out, "output directory");
    add_field_options(r, rd.field);

    std::string scope = "ops", gc_out;
    double tol = 0.0;
    auto *gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    gc->add_option("--scope", scope, "ops | layers | losses | model");
    auto *tol_opt = gc->add_option("--tol", tol, "max relative error (default 1e-4 ops, 1e-3 otherwise)");
    gc->add_option("--out", gc_out, "directory for the run manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp &ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError &ex) {
        app.exit(ex);
        return kUsage;
    }

    try {
        if (*g) return run_gen(gen);
        if (*t) {
            tr.cfg.model.modulate_every_level = !single_modulation;
            return run_train(tr);
        }
        if (*e) return run_eval(ev);
        if (*r) return run_render(rd);
        if (*gc) return run_gradcheck(scope, tol, tol_opt->count() > 0, gc_out);
    } catch (const UsageError &ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kUsage;
    } catch (const NumericError &ex) {
        std::cerr << "numeric failure: " << ex.what() << "\n";
        return kNumeric;
    } catch (const std::invalid_argument &ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kUsage;
    } catch (const std::exception &ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
