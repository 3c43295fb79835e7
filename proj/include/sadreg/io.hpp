// On-disk formats: synthetic corpora, checkpoints, PGM previews, text key-value files.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sadreg/losses.hpp"
#include "sadreg/model.hpp"
#include "sadreg/synth.hpp"

namespace sadreg::io {

namespace fs = std::filesystem;

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// 8-bit binary PGM (P5), min-max normalized. Accepts [1,1,H,W] or [H,W].
void write_pgm(const fs::path &path, const Tensor &image);
Tensor read_pgm(const fs::path &path); // [1,1,H,W], values 0..255

// Corpus directory:
//   manifest.json                 pair list, seeds, config echo, landmark arrays
//   pair_NNNN/image_a.sart        I_A
//   pair_NNNN/image_b.sart        I_B
//   pair_NNNN/truth_field.sart    ground-truth displacement [1,2,H,W]
//   pair_NNNN/*.pgm               optional previews
struct CorpusPair {
    std::string id;
    std::uint64_t seed = 0;
    Tensor image_a, image_b;
    reg::DisplacementField truth;
    std::vector<reg::Point> landmarks_a, landmarks_b;
};

struct Corpus {
    std::uint64_t seed = 0;
    std::size_t image_size = 0;
    std::string manifest_text;
    std::vector<CorpusPair> pairs;

    const CorpusPair &find(const std::string &id) const;
};

inline constexpr int kCorpusVersion = 1;

std::string pair_id(std::size_t index);
void write_corpus(const fs::path &dir, const std::vector<synth::SyntheticPair> &pairs,
                  const synth::SynthConfig &config, std::uint64_t corpus_seed, bool with_pgm);
Corpus read_corpus(const fs::path &dir);

// Git-style object id: SHA-1 of "blob <len>\0" + content, hex encoded.
std::string git_blob_hash(const std::string &content);

// "key = value" lines, sorted by key.
using KeyValues = std::map<std::string, std::string>;
void write_key_values(const fs::path &path, const KeyValues &values);
KeyValues read_key_values(const fs::path &path);

std::string format_double(double v);
KeyValues to_key_values(const model::ModelConfig &config, const std::string &prefix = "model.");
model::ModelConfig model_config_from(const KeyValues &values, const std::string &prefix = "model.");
KeyValues to_key_values(const loss::LossWeights &weights, const std::string &prefix = "loss.");

// Checkpoint directory:
//   checkpoint.txt                metadata (config, epoch, step, seed, loss history)
//   params/<name>.sart            one container per named parameter
struct CheckpointMeta {
    std::size_t epoch = 0;
    std::size_t step = 0;
    std::uint64_t seed = 0;
    std::vector<double> loss_history;
    KeyValues extra;
};

struct Checkpoint {
    model::Model model;
    CheckpointMeta meta;
};

void save_checkpoint(const fs::path &dir, const model::Model &model, const CheckpointMeta &meta);
// Accepts the checkpoint directory or its checkpoint.txt.
Checkpoint load_checkpoint(const fs::path &path);

void write_text(const fs::path &path, const std::string &text);
std::string read_text(const fs::path &path);

} // namespace sadreg::io
