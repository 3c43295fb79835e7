#include "sadreg/io.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/sha.h>

#include "sadreg/sart.hpp"

namespace sadreg::io {

using nlohmann::ordered_json;

void write_text(const fs::path &path, const std::string &text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot open for writing: " + path.string());
    }
    os << text;
    if (!os) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

std::string read_text(const fs::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open: " + path.string());
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_pgm(const fs::path &path, const Tensor &image) {
    std::size_t H = 0, W = 0;
    if (image.rank() == 4 && image.dim(0) == 1 && image.dim(1) == 1) {
        H = image.dim(2);
        W = image.dim(3);
    } else if (image.rank() == 2) {
        H = image.dim(0);
        W = image.dim(1);
    } else {
        throw ShapeError("write_pgm: expected [1,1,H,W] or [H,W], got " + shape_to_string(image.shape()));
    }
    if (!image.all_finite()) {
        throw NumericError("write_pgm: non-finite pixel in " + path.string());
    }
    const auto [lo_it, hi_it] = std::minmax_element(image.data().begin(), image.data().end());
    const double lo = *lo_it, range = *hi_it - *lo_it;
    std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    out.reserve(out.size() + H * W);
    for (double v : image.data()) {
        const double n = range > 0.0 ? (v - lo) / range : 0.0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(n * 255.0))));
    }
    write_text(path, out);
}

Tensor read_pgm(const fs::path &path) {
    const std::string text = read_text(path);
    std::istringstream is(text);
    std::string magic;
    std::size_t W = 0, H = 0, maxval = 0;
    is >> magic >> W >> H >> maxval;
    if (!is || magic != "P5" || maxval != 255 || W == 0 || H == 0) {
        throw DatasetError("unsupported PGM header in " + path.string());
    }
    is.get();
    const auto offset = static_cast<std::size_t>(is.tellg());
    if (text.size() != offset + H * W) {
        throw DatasetError("PGM payload size mismatch in " + path.string());
    }
    Tensor t({1, 1, H, W});
    for (std::size_t i = 0; i < H * W; ++i) {
        t[i] = static_cast<unsigned char>(text[offset + i]);
    }
    return t;
}

std::string pair_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "pair_%04zu", index);
    return buf;
}

const CorpusPair &Corpus::find(const std::string &id) const {
    for (const auto &p : pairs) {
        if (p.id == id) {
            return p;
        }
    }
    throw DatasetError("no pair named " + id);
}

namespace {

ordered_json points_json(const std::vector<reg::Point> &pts) {
    ordered_json a = ordered_json::array();
    for (const auto &p : pts) {
        a.push_back({p.x, p.y});
    }
    return a;
}

std::vector<reg::Point> points_from(const ordered_json &j) {
    std::vector<reg::Point> pts;
    for (const auto &e : j) {
        if (!e.is_array() || e.size() != 2) {
            throw DatasetError("landmark entries must be [x, y] pairs");
        }
        pts.push_back({e[0].get<double>(), e[1].get<double>()});
    }
    return pts;
}

ordered_json appearance_json(const synth::AppearanceParams &p) {
    return {{"gamma", p.gamma}, {"slope", p.slope}, {"center", p.center}, {"offset", p.offset},
            {"noise_std", p.noise_std}};
}

ordered_json warp_json(const synth::WarpParams &w) {
    ordered_json bumps = ordered_json::array();
    for (const auto &b : w.bumps) {
        bumps.push_back({{"cx", b.cx}, {"cy", b.cy}, {"ax", b.ax}, {"ay", b.ay}});
    }
    return {{"rotation", w.rotation}, {"scale", w.scale},   {"tx", w.tx},
            {"ty", w.ty},             {"bumps", bumps},     {"bump_width", w.bump_width},
            {"max_displacement", w.max_displacement}};
}

ordered_json config_json(const synth::SynthConfig &c) {
    return {{"size", c.size},
            {"landmarks", c.landmarks},
            {"blobs", c.blobs},
            {"warp",
             {{"max_rotation", c.warp.max_rotation},
              {"max_scale_delta", c.warp.max_scale_delta},
              {"max_translation", c.warp.max_translation},
              {"bumps", c.warp.bumps},
              {"max_bump_amplitude", c.warp.max_bump_amplitude},
              {"bump_width", c.warp.bump_width},
              {"max_displacement", c.warp.max_displacement}}},
            {"appearance",
             {{"gamma_min", c.appearance.gamma_min},
              {"gamma_max", c.appearance.gamma_max},
              {"slope_max", c.appearance.slope_max},
              {"center_min", c.appearance.center_min},
              {"center_max", c.appearance.center_max},
              {"max_offset", c.appearance.max_offset},
              {"noise_std", c.appearance.noise_std}}}};
}

Tensor load_image(const fs::path &path, std::size_t size) {
    Tensor t;
    try {
        t = sart::load(path);
    } catch (const sart::FormatError &e) {
        throw DatasetError(path.string() + ": " + e.what());
    }
    if (t.shape() != Shape{1, 1, size, size}) {
        throw DatasetError(path.string() + ": expected [1,1," + std::to_string(size) + "," + std::to_string(size) +
                           "], got " + shape_to_string(t.shape()));
    }
    return t;
}

} // namespace

void write_corpus(const fs::path &dir, const std::vector<synth::SyntheticPair> &pairs,
                  const synth::SynthConfig &config, std::uint64_t corpus_seed, bool with_pgm) {
    config.validate();
    fs::create_directories(dir);
    ordered_json list = ordered_json::array();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto &p = pairs[i];
        const std::string id = pair_id(i);
        const fs::path pd = dir / id;
        fs::create_directories(pd);
        sart::save(pd / "image_a.sart", p.image_a);
        sart::save(pd / "image_b.sart", p.image_b);
        sart::save(pd / "truth_field.sart", p.truth.data);
        ordered_json files = {{"image_a", id + "/image_a.sart"},
                              {"image_b", id + "/image_b.sart"},
                              {"truth_field", id + "/truth_field.sart"}};
        if (with_pgm) {
            write_pgm(pd / "image_a.pgm", p.image_a);
            write_pgm(pd / "image_b.pgm", p.image_b);
            files["image_a_pgm"] = id + "/image_a.pgm";
            files["image_b_pgm"] = id + "/image_b.pgm";
        }
        list.push_back({{"id", id},
                        {"seed", p.seed},
                        {"files", files},
                        {"landmarks_a", points_json(p.landmarks_a)},
                        {"landmarks_b", points_json(p.landmarks_b)},
                        {"resampled_landmarks", p.resampled_landmarks},
                        {"appearance_a", appearance_json(p.appearance_a)},
                        {"appearance_b", appearance_json(p.appearance_b)},
                        {"warp", warp_json(p.warp)}});
    }
    ordered_json m = {{"format_version", kCorpusVersion},
                      {"corpus_seed", corpus_seed},
                      {"image_size", config.size},
                      {"pair_count", pairs.size()},
                      {"config", config_json(config)},
                      {"pairs", list}};
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Corpus read_corpus(const fs::path &dir) {
    const fs::path mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) {
        throw DatasetError("missing corpus manifest: " + mpath.string());
    }
    Corpus c;
    c.manifest_text = read_text(mpath);
    ordered_json m;
    try {
        m = ordered_json::parse(c.manifest_text);
        if (m.at("format_version").get<int>() != kCorpusVersion) {
            throw DatasetError("unsupported corpus format version in " + mpath.string());
        }
        c.seed = m.at("corpus_seed").get<std::uint64_t>();
        c.image_size = m.at("image_size").get<std::size_t>();
        for (const auto &e : m.at("pairs")) {
            CorpusPair p;
            p.id = e.at("id").get<std::string>();
            p.seed = e.at("seed").get<std::uint64_t>();
            const auto &files = e.at("files");
            p.image_a = load_image(dir / files.at("image_a").get<std::string>(), c.image_size);
            p.image_b = load_image(dir / files.at("image_b").get<std::string>(), c.image_size);
            p.truth.data = sart::load(dir / files.at("truth_field").get<std::string>());
            if (p.truth.data.shape() != Shape{1, 2, c.image_size, c.image_size}) {
                throw DatasetError(p.id + ": truth field has shape " + shape_to_string(p.truth.data.shape()));
            }
            p.landmarks_a = points_from(e.at("landmarks_a"));
            p.landmarks_b = points_from(e.at("landmarks_b"));
            if (p.landmarks_a.size() != p.landmarks_b.size()) {
                throw DatasetError(p.id + ": landmark count mismatch");
            }
            c.pairs.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception &e) {
        throw DatasetError("malformed manifest " + mpath.string() + ": " + e.what());
    } catch (const sart::FormatError &e) {
        throw DatasetError(std::string("corrupt pair file: ") + e.what());
    }
    if (m.at("pair_count").get<std::size_t>() != c.pairs.size()) {
        throw DatasetError("manifest pair_count does not match pair list");
    }
    return c;
}

std::string git_blob_hash(const std::string &content) {
    std::string obj = "blob " + std::to_string(content.size());
    obj.push_back('\0');
    obj += content;
    unsigned char md[SHA_DIGEST_LENGTH];
    SHA1(reinterpret_cast<const unsigned char *>(obj.data()), obj.size(), md);
    static const char *hex = "0123456789abcdef";
    std::string out;
    for (unsigned char b : md) {
        out.push_back(hex[b >> 4]);
        out.push_back(hex[b & 15]);
    }
    return out;
}

void write_key_values(const fs::path &path, const KeyValues &values) {
    std::string out;
    for (const auto &[k, v] : values) {
        if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw std::invalid_argument("key-value entry not representable: " + k);
        }
        out += k + " = " + v + "\n";
    }
    write_text(path, out);
}

KeyValues read_key_values(const fs::path &path) {
    std::istringstream is(read_text(path));
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (trim(line).empty() || trim(line)[0] == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        }
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

KeyValues to_key_values(const model::ModelConfig &c, const std::string &prefix) {
    return {{prefix + "in_channels", std::to_string(c.in_channels)},
            {prefix + "base_channels", std::to_string(c.base_channels)},
            {prefix + "levels", std::to_string(c.levels)},
            {prefix + "scene_channels", std::to_string(c.scene_channels)},
            {prefix + "appearance_channels", std::to_string(c.appearance_channels)},
            {prefix + "appearance_layers", std::to_string(c.appearance_layers)},
            {prefix + "appearance_kernel", std::to_string(c.appearance_kernel)},
            {prefix + "image_size", std::to_string(c.image_size)},
            {prefix + "modulate_every_level", c.modulate_every_level ? "true" : "false"},
            {prefix + "norm_eps", format_double(c.norm_eps)},
            {prefix + "seed", std::to_string(c.seed)}};
}

namespace {

const std::string &require(const KeyValues &kv, const std::string &key) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
        throw DatasetError("missing key: " + key);
    }
    return it->second;
}

std::uint64_t to_u64(const KeyValues &kv, const std::string &key) {
    const std::string &s = require(kv, key);
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception &) {
        used = 0;
    }
    if (used != s.size() || s.empty() || s[0] == '-') {
        throw DatasetError("not an unsigned integer: " + key + " = " + s);
    }
    return v;
}

double to_double(const KeyValues &kv, const std::string &key) {
    const std::string &s = require(kv, key);
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception &) {
        used = 0;
    }
    if (used != s.size() || s.empty()) {
        throw DatasetError("not a number: " + key + " = " + s);
    }
    return v;
}

} // namespace

model::ModelConfig model_config_from(const KeyValues &kv, const std::string &prefix) {
    model::ModelConfig c;
    c.in_channels = to_u64(kv, prefix + "in_channels");
    c.base_channels = to_u64(kv, prefix + "base_channels");
    c.levels = to_u64(kv, prefix + "levels");
    c.scene_channels = to_u64(kv, prefix + "scene_channels");
    c.appearance_channels = to_u64(kv, prefix + "appearance_channels");
    c.appearance_layers = to_u64(kv, prefix + "appearance_layers");
    c.appearance_kernel = to_u64(kv, prefix + "appearance_kernel");
    c.image_size = to_u64(kv, prefix + "image_size");
    const std::string &mod = require(kv, prefix + "modulate_every_level");
    if (mod != "true" && mod != "false") {
        throw DatasetError("not a boolean: " + prefix + "modulate_every_level = " + mod);
    }
    c.modulate_every_level = mod == "true";
    c.norm_eps = to_double(kv, prefix + "norm_eps");
    c.seed = to_u64(kv, prefix + "seed");
    c.validate();
    return c;
}

KeyValues to_key_values(const loss::LossWeights &w, const std::string &prefix) {
    return {{prefix + "lambda_scene", format_double(w.scene)},
            {prefix + "lambda_cycle", format_double(w.cycle)},
            {prefix + "lambda_align", format_double(w.align)},
            {prefix + "lambda_cos", format_double(w.cos)},
            {prefix + "lambda_ncc", format_double(w.ncc)},
            {prefix + "symmetric_align", w.symmetric_align ? "true" : "false"}};
}

void save_checkpoint(const fs::path &dir, const model::Model &m, const CheckpointMeta &meta) {
    fs::create_directories(dir / "params");
    KeyValues kv = meta.extra;
    kv.merge(to_key_values(m.config));
    kv["checkpoint.version"] = "1";
    kv["epoch"] = std::to_string(meta.epoch);
    kv["step"] = std::to_string(meta.step);
    kv["seed"] = std::to_string(meta.seed);
    std::string hist;
    for (double v : meta.loss_history) {
        hist += (hist.empty() ? "" : " ") + format_double(v);
    }
    kv["loss_history"] = hist;
    std::string names;
    for (const auto &[name, t] : m.params) {
        sart::save(dir / "params" / (name + ".sart"), t);
        names += (names.empty() ? "" : " ") + name;
    }
    kv["parameters"] = names;
    write_key_values(dir / "checkpoint.txt", kv);
}

Checkpoint load_checkpoint(const fs::path &path) {
    const fs::path dir = fs::is_directory(path) ? path : path.parent_path();
    const fs::path meta_path = dir / "checkpoint.txt";
    if (!fs::exists(meta_path)) {
        throw DatasetError("no checkpoint at " + path.string());
    }
    KeyValues kv = read_key_values(meta_path);
    if (require(kv, "checkpoint.version") != "1") {
        throw DatasetError("unsupported checkpoint version in " + meta_path.string());
    }
    Checkpoint ck{model::Model::create(model_config_from(kv)), {}};
    ck.meta.epoch = to_u64(kv, "epoch");
    ck.meta.step = to_u64(kv, "step");
    ck.meta.seed = to_u64(kv, "seed");
    {
        std::istringstream hs(require(kv, "loss_history"));
        std::string tok;
        while (hs >> tok) {
            ck.meta.loss_history.push_back(to_double({{"v", tok}}, "v"));
        }
    }
    std::vector<std::string> stored;
    {
        std::istringstream ns(require(kv, "parameters"));
        std::string tok;
        while (ns >> tok) {
            stored.push_back(tok);
        }
    }
    if (stored != ck.model.params.names()) {
        throw DatasetError("checkpoint parameters do not match the model configuration");
    }
    for (const auto &name : stored) {
        Tensor t;
        try {
            t = sart::load(dir / "params" / (name + ".sart"));
        } catch (const sart::FormatError &e) {
            throw DatasetError(name + ": " + e.what());
        }
        Tensor &dst = ck.model.params.at(name);
        if (t.shape() != dst.shape()) {
            throw DatasetError(name + ": stored shape " + shape_to_string(t.shape()) + " does not match " +
                               shape_to_string(dst.shape()));
        }
        if (!t.all_finite()) {
            throw NumericError("non-finite values in parameter " + name);
        }
        dst = std::move(t);
    }
    for (const char *k : {"checkpoint.version", "epoch", "step", "seed", "loss_history", "parameters"}) {
        kv.erase(k);
    }
    for (const auto &[k, v] : kv) {
        if (k.rfind("model.", 0) != 0) {
            ck.meta.extra[k] = v;
        }
    }
    return ck;
}

} // namespace sadreg::io
