#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vdsk/synth.hpp"
#include "vdsk/text.hpp"

namespace vdsk {

// ---------------------------------------------------------------- clips ----

// ".vclip" container: "VCLP", u32 version=1, u32 T, u32 C, u32 H, u32 W,
// u8 dtype tag (0 = u8), then T*C*H*W bytes in (t, c, y, x) order.
// Samples are stored as u8 via v -> round((v + 1) * 127.5).
void write_vclip(const std::filesystem::path& path, const VideoClip& clip);
VideoClip read_vclip(const std::filesystem::path& path);

uint8_t float_to_u8(float v);
float u8_to_float(uint8_t b);

// one P6 file per frame, named frame_%04d.ppm inside dir
void write_ppm_frames(const std::filesystem::path& dir, const VideoClip& clip);

// ----------------------------------------------------------- checkpoints ----

// Checkpoint container: "VDSK", u32 version=1, 4-byte section tag, u32
// metadata length + UTF-8 metadata ("key=value" lines), u32 tensor count;
// per tensor: u32 name length + name, u32 rank, u32 dims, u8 dtype tag
// (0 = f32), raw little-endian payload.
inline constexpr uint32_t kCheckpointVersion = 1;

struct NamedTensorRef {
    std::string name;
    const Tensor* tensor;
};

struct LoadedCheckpoint {
    std::string tag;
    std::map<std::string, std::string> metadata;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& tag,
                     const std::map<std::string, std::string>& metadata,
                     const std::vector<NamedTensorRef>& tensors);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------- config ----

// Line-based "key = value" file with '#' comments and a mandatory
// "config_version = 1" line. Unknown keys are rejected against a schema
// before any work starts.
struct Config {
    std::map<std::string, std::string> kv;

    bool has(const std::string& key) const { return kv.count(key) > 0; }
    std::string get_str(const std::string& key, const std::string& fallback) const;
    std::string require_str(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    int64_t require_int(const std::string& key) const;
    double get_real(const std::string& key, double fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;

    // throws std::invalid_argument naming the first key outside `allowed`
    void restrict_keys(const std::vector<std::string>& allowed) const;
};

Config parse_config(const std::filesystem::path& path);
Config parse_config_text(const std::string& text);

// -------------------------------------------------------------, corpus -----

// manifest.tsv row: index, length, shape, color, direction(- when absent),
// speed, start_x, start_y, seed, caption
void write_corpus_dir(const std::filesystem::path& dir, const std::vector<CorpusItem>& items);
std::vector<CorpusItem> load_corpus_dir(const std::filesystem::path& dir);

// ------------------------------------------------------------ vocab files ---

// "word<TAB>id" per line
void save_vocab(const std::filesystem::path& path, const Vocab& vocab);
// "alias<TAB>canonical" per line
void save_synonyms(const std::filesystem::path& path, const SynonymTable& table);
SynonymTable load_synonyms(const std::filesystem::path& path);

// ---------------------------------------------------------------- misc ------

// write-to-temp-then-rename so readers never observe partial files
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

// creates and returns out_dir/runs/<command>-NNNN with the first unused index
std::filesystem::path next_run_dir(const std::filesystem::path& out_dir, const std::string& command);

// "metric<TAB>value" lines
void write_metric_report(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, double>>& metrics);

}  // namespace vdsk
